//! Demand process under the physical and pricing measures.
//!
//! Demand follows a linear SDE with mean reversion toward zero under the
//! physical measure. The pricing measure tilts both the reversion rate and
//! the level through a market price of demand risk that is affine in demand
//! with piecewise-constant time coefficients, so every transition law is
//! Gaussian with closed-form mean and variance: the integrals are evaluated
//! exactly segment by segment.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Physical-measure demand parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandModel {
    /// Drift coefficient on the demand level (negative values revert to zero).
    pub mean_reversion: f64,
    /// Diffusion volatility.
    pub sigma: f64,
    /// Demand level at time zero.
    pub initial_demand: f64,
}

impl DemandModel {
    pub fn validate(&self) -> Result<()> {
        if !self.mean_reversion.is_finite() {
            return Err(EngineError::InvalidParameter(
                "demand.mean_reversion must be finite".into(),
            ));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(EngineError::InvalidParameter(
                "demand.sigma must be finite and >= 0".into(),
            ));
        }
        if !self.initial_demand.is_finite() {
            return Err(EngineError::InvalidParameter(
                "demand.initial_demand must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Non-fatal parameter flags. A nonnegative reversion coefficient keeps
    /// every formula valid but the process no longer reverts to zero.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.mean_reversion >= 0.0 {
            out.push(format!(
                "demand.mean_reversion = {} is >= 0: the demand process is not mean reverting",
                self.mean_reversion
            ));
        }
        out
    }
}

/// Market price of demand risk `lambda(t, d) = lambda0(t) + lambda1(t) * d`,
/// with both coefficients piecewise constant on `[knots[i], knots[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskPrice {
    /// Strictly increasing time knots; the first must be <= 0 and the last
    /// must reach the pricing horizon.
    pub knots: Vec<f64>,
    /// Level coefficient per interval (`knots.len() - 1` entries).
    pub lambda0: Vec<f64>,
    /// Demand-slope coefficient per interval (`knots.len() - 1` entries).
    pub lambda1: Vec<f64>,
}

impl RiskPrice {
    /// Constant coefficients over `[0, horizon]`.
    pub fn constant(lambda0: f64, lambda1: f64, horizon: f64) -> Self {
        Self {
            knots: vec![0.0, horizon],
            lambda0: vec![lambda0],
            lambda1: vec![lambda1],
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(EngineError::InvalidParameter(
                "risk.knots needs at least two entries".into(),
            ));
        }
        if self
            .knots
            .windows(2)
            .any(|w| w[1] <= w[0] || !w[1].is_finite())
        {
            return Err(EngineError::InvalidParameter(
                "risk.knots must be strictly increasing".into(),
            ));
        }
        let n = self.knots.len() - 1;
        if self.lambda0.len() != n || self.lambda1.len() != n {
            return Err(EngineError::InvalidParameter(format!(
                "risk.lambda0 and risk.lambda1 must each have {n} entries (one per interval)"
            )));
        }
        if self
            .knots
            .iter()
            .chain(&self.lambda0)
            .chain(&self.lambda1)
            .any(|x| !x.is_finite())
        {
            return Err(EngineError::InvalidParameter(
                "risk parameters must be finite".into(),
            ));
        }
        if self.knots[0] > 1e-12 || self.knots[self.knots.len() - 1] < horizon - 1e-12 {
            return Err(EngineError::InvalidParameter(format!(
                "risk.knots must cover [0, {horizon}]"
            )));
        }
        Ok(())
    }

    fn interval_of(&self, t: f64) -> usize {
        let n = self.knots.len() - 1;
        // Right-continuous lookup; times past the last knot use the last interval.
        let pos = self.knots.partition_point(|&k| k <= t);
        pos.saturating_sub(1).min(n - 1)
    }

    pub fn lambda0_at(&self, t: f64) -> f64 {
        self.lambda0[self.interval_of(t)]
    }

    pub fn lambda1_at(&self, t: f64) -> f64 {
        self.lambda1[self.interval_of(t)]
    }

    /// The full market price of risk at `(t, d)`.
    pub fn lambda_at(&self, t: f64, d: f64) -> f64 {
        let i = self.interval_of(t);
        self.lambda0[i] + self.lambda1[i] * d
    }
}

/// A Gaussian transition law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianLaw {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }

    /// Density at `y`. Degenerate (zero-variance) laws have no density.
    pub fn density(&self, y: f64) -> Result<f64> {
        if self.variance.is_nan() || self.variance <= 0.0 {
            return Err(EngineError::DegenerateLaw(
                "transition density requires positive variance".into(),
            ));
        }
        let sd = self.variance.sqrt();
        let z = (y - self.mean) / sd;
        Ok((-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
    }

    /// Draws one sample; a zero-variance law returns the mean exactly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.variance <= 0.0 {
            return self.mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.variance.sqrt() * z
    }
}

/// `(e^x - 1) / x`, stable through zero.
fn expm1_over(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.exp_m1() / x
    }
}

struct Segment {
    dt: f64,
    /// Effective reversion rate `a + lambda1 * sigma` on the segment.
    kappa: f64,
    lambda0: f64,
}

/// Cuts `[from, to]` at the risk knots. With no risk the whole interval is a
/// single physical-measure segment.
fn segments(model: &DemandModel, risk: Option<&RiskPrice>, from: f64, to: f64) -> Vec<Segment> {
    match risk {
        None => vec![Segment {
            dt: to - from,
            kappa: model.mean_reversion,
            lambda0: 0.0,
        }],
        Some(risk) => {
            let mut cuts = vec![from];
            for &k in &risk.knots {
                if k > from && k < to {
                    cuts.push(k);
                }
            }
            cuts.push(to);
            cuts.windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| {
                    let mid = 0.5 * (w[0] + w[1]);
                    let i = risk.interval_of(mid);
                    Segment {
                        dt: w[1] - w[0],
                        kappa: model.mean_reversion + risk.lambda1[i] * model.sigma,
                        lambda0: risk.lambda0[i],
                    }
                })
                .collect()
        }
    }
}

fn check_interval(from: f64, to: f64) -> Result<()> {
    if !from.is_finite() || !to.is_finite() {
        return Err(EngineError::TimeDomain("times must be finite".into()));
    }
    if from > to {
        return Err(EngineError::TimeDomain(format!(
            "interval start {from} exceeds end {to}"
        )));
    }
    Ok(())
}

/// Flow factor `exp(int_from^to (a + lambda1(u) sigma) du)`, evaluated
/// exactly per piecewise-constant segment. Pass `risk = None` for the
/// physical measure.
pub fn transition_factor(
    model: &DemandModel,
    risk: Option<&RiskPrice>,
    from: f64,
    to: f64,
) -> Result<f64> {
    check_interval(from, to)?;
    let mut log_factor = 0.0;
    for seg in segments(model, risk, from, to) {
        log_factor += seg.kappa * seg.dt;
    }
    Ok(log_factor.exp())
}

/// Conditional law of the demand at `to`, given level `d` at `from`.
///
/// Variation-of-constants solution of the linear SDE
/// `dD = ((a + lambda1 sigma) D + lambda0 sigma) dt + sigma dW`:
/// mean `Phi(from,to) d + sigma int Phi(s,to) lambda0(s) ds`,
/// variance `sigma^2 int Phi(s,to)^2 ds`.
pub fn conditional_law(
    model: &DemandModel,
    risk: Option<&RiskPrice>,
    from: f64,
    to: f64,
    d: f64,
) -> Result<GaussianLaw> {
    check_interval(from, to)?;
    let segs = segments(model, risk, from, to);
    // Walk segments backwards from `to`, carrying Phi(segment end, to).
    let mut suffix = 1.0_f64;
    let mut mean_shift = 0.0_f64;
    let mut variance = 0.0_f64;
    for seg in segs.iter().rev() {
        let x = seg.kappa * seg.dt;
        mean_shift += model.sigma * seg.lambda0 * suffix * seg.dt * expm1_over(x);
        variance += model.sigma * model.sigma * suffix * suffix * seg.dt * expm1_over(2.0 * x);
        suffix *= x.exp();
    }
    Ok(GaussianLaw {
        mean: suffix * d + mean_shift,
        variance,
    })
}

/// Exact draw from `conditional_law(from, to, d)`.
pub fn sample_transition<R: Rng + ?Sized>(
    model: &DemandModel,
    risk: Option<&RiskPrice>,
    from: f64,
    to: f64,
    d: f64,
    rng: &mut R,
) -> Result<f64> {
    let law = conditional_law(model, risk, from, to, d)?;
    Ok(law.sample(rng))
}
