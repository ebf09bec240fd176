//! Risk-neutral futures curve, forward volatility and drift, the pricing
//! measure density along simulated paths, and martingale diagnostics.
//!
//! The futures price is the expectation of the spot map under the Gaussian
//! conditional law of terminal demand. The spot map is piecewise smooth with
//! kinks where its branches meet, so the expectation is evaluated either by
//! straight Gauss-Hermite quadrature (when no kink falls inside the effective
//! support of the law) or by per-branch composite Gauss-Legendre panels plus
//! an analytic tail for the capped branch.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::demand::{
    conditional_law, sample_transition, transition_factor, DemandModel, GaussianLaw, RiskPrice,
};
use crate::error::{EngineError, Result};
use crate::exec;
use crate::market::SpotMap;
use crate::quad;

/// Number of standard deviations covered by the quadrature window. Mass
/// outside is below 1e-32 of the total.
const WINDOW_SDS: f64 = 12.0;

/// Futures pricing model: demand dynamics, pricing measure, spot map and a
/// single delivery date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuturesModel {
    pub demand: DemandModel,
    pub risk: RiskPrice,
    pub spot: SpotMap,
    /// Delivery date of the single traded contract.
    pub maturity: f64,
    /// Gauss quadrature order for curve evaluation.
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    /// Sample count for Monte Carlo oracles and consistency checks.
    #[serde(default = "default_mc_paths")]
    pub mc_paths: usize,
}

pub fn default_quad_order() -> usize {
    128
}

pub fn default_mc_paths() -> usize {
    100_000
}

/// One point of the futures curve/surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub d: f64,
    pub price: f64,
    /// Futures volatility; absent at maturity where it is singular.
    pub vol: Option<f64>,
    /// Futures drift under the physical measure; absent at maturity.
    pub drift: Option<f64>,
}

/// Tower-property comparison of the curve against its own conditional mean.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MartingaleReport {
    pub lhs: f64,
    pub rhs: f64,
    pub std_err: f64,
}

impl MartingaleReport {
    /// Discrepancy in units of standard errors (0 when both sides are exact).
    pub fn z_score(&self) -> f64 {
        let diff = (self.lhs - self.rhs).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_err
        }
    }
}

impl FuturesModel {
    pub fn validate(&self) -> Result<()> {
        self.demand.validate()?;
        self.spot.validate()?;
        if !self.maturity.is_finite() || self.maturity <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "pricing.maturity must be finite and > 0".into(),
            ));
        }
        self.risk.validate(self.maturity)?;
        if self.quad_order < 16 {
            return Err(EngineError::InvalidParameter(
                "pricing.quad_order must be >= 16".into(),
            ));
        }
        if self.mc_paths == 0 {
            return Err(EngineError::InvalidParameter(
                "pricing.mc_paths must be > 0".into(),
            ));
        }
        Ok(())
    }

    fn check_time(&self, t: f64, allow_maturity: bool) -> Result<()> {
        if !t.is_finite() || t < 0.0 {
            return Err(EngineError::TimeDomain(format!(
                "time {t} outside [0, {}]",
                self.maturity
            )));
        }
        if t > self.maturity || (!allow_maturity && t >= self.maturity) {
            return Err(EngineError::TimeDomain(format!(
                "time {t} outside the admissible range (maturity {})",
                self.maturity
            )));
        }
        Ok(())
    }

    /// Futures price `phi(t, d)`: expectation of the terminal spot under the
    /// pricing-measure conditional law. Returns the spot map itself at
    /// maturity (degenerate law).
    pub fn futures_price(&self, t: f64, d: f64) -> Result<f64> {
        self.check_time(t, true)?;
        let law = conditional_law(&self.demand, Some(&self.risk), t, self.maturity, d)?;
        if law.variance <= 0.0 {
            return Ok(self.spot.price(law.mean));
        }
        expect_spot(&self.spot, &law, self.quad_order, Weight::Plain)
    }

    /// Futures volatility: `sigma * Phi(t,T) * E[psi(Y) (Y - m) / var]`,
    /// which equals `sigma * d(phi)/dd`. Singular at maturity.
    pub fn forward_vol(&self, t: f64, d: f64) -> Result<f64> {
        self.check_time(t, false)?;
        if self.demand.sigma == 0.0 {
            return Ok(0.0);
        }
        let law = conditional_law(&self.demand, Some(&self.risk), t, self.maturity, d)?;
        if law.variance <= 0.0 {
            return Err(EngineError::DegenerateLaw(
                "forward volatility is singular for a degenerate transition law".into(),
            ));
        }
        let score = expect_spot(&self.spot, &law, self.quad_order, Weight::Score)?;
        let flow = transition_factor(&self.demand, Some(&self.risk), t, self.maturity)?;
        Ok(self.demand.sigma * flow * score)
    }

    /// Futures drift under the physical measure:
    /// `(lambda0(t) + lambda1(t) d) * forward_vol(t, d)`.
    pub fn forward_drift(&self, t: f64, d: f64) -> Result<f64> {
        let vol = self.forward_vol(t, d)?;
        Ok(self.risk.lambda_at(t, d) * vol)
    }

    /// Volatility and drift in one pass (shared quadrature).
    pub fn vol_and_drift(&self, t: f64, d: f64) -> Result<(f64, f64)> {
        let vol = self.forward_vol(t, d)?;
        Ok((vol, self.risk.lambda_at(t, d) * vol))
    }

    /// Pricing-measure density along a demand path sampled under the
    /// physical measure on a uniform grid with step `dt`. The Brownian
    /// increments are reconstructed from the exact physical transition law,
    /// so the density has unit expectation step by step.
    pub fn rn_density(&self, path: &[f64], dt: f64) -> Result<f64> {
        if path.len() < 2 {
            return Err(EngineError::InvalidParameter(
                "rn_density needs a path with at least two points".into(),
            ));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "rn_density needs a positive step".into(),
            ));
        }
        let flow = transition_factor(&self.demand, None, 0.0, dt)?;
        let step_sd = conditional_law(&self.demand, None, 0.0, dt, 0.0)?.std_dev();
        let sqrt_dt = dt.sqrt();
        let mut exponent = 0.0;
        for k in 0..path.len() - 1 {
            let t_k = k as f64 * dt;
            let lambda = self.risk.lambda_at(t_k, path[k]);
            let innovation = if step_sd > 0.0 {
                (path[k + 1] - flow * path[k]) / step_sd
            } else {
                0.0
            };
            exponent += lambda * sqrt_dt * innovation - 0.5 * lambda * lambda * dt;
        }
        Ok(exponent.exp())
    }

    /// Tower-property check: compares `phi(t, d)` against the Monte Carlo
    /// average of `phi(s, D_s)` with `D_s` drawn from the pricing-measure
    /// transition out of `(t, d)`.
    pub fn martingale_check(
        &self,
        t: f64,
        s: f64,
        d: f64,
        n_paths: usize,
        seed: u64,
    ) -> Result<MartingaleReport> {
        if !(t <= s && s <= self.maturity) {
            return Err(EngineError::TimeDomain(format!(
                "martingale check needs t <= s <= maturity, got t={t}, s={s}"
            )));
        }
        if n_paths == 0 {
            return Err(EngineError::InvalidParameter(
                "martingale check needs at least one path".into(),
            ));
        }
        self.validate()?;
        let lhs = self.futures_price(t, d)?;
        let samples = exec::map_paths(n_paths, seed, |_, rng| {
            let d_s = sample_transition(&self.demand, Some(&self.risk), t, s, d, rng)
                .expect("transition inputs validated");
            self.futures_price(s, d_s)
                .expect("pricing inputs validated")
        });
        let (rhs, std_err) = exec::mean_std_err(&samples);
        Ok(MartingaleReport { lhs, rhs, std_err })
    }

    /// Curve/surface table over the product of `times` and `demands`,
    /// time-major. Rows at maturity carry the spot map and no vol/drift.
    pub fn curve_table(&self, times: &[f64], demands: &[f64]) -> Result<Vec<CurvePoint>> {
        self.validate()?;
        for &t in times {
            self.check_time(t, true)?;
        }
        let n = times.len() * demands.len();
        let at_maturity = |t: f64| (t - self.maturity).abs() <= 1e-12 * self.maturity.max(1.0);
        let points = exec::map_indexed(n, |idx| {
            let t = times[idx / demands.len()];
            let d = demands[idx % demands.len()];
            let price = self.futures_price(t, d).expect("validated inputs");
            let (vol, drift) = if at_maturity(t) {
                (None, None)
            } else {
                let (v, a) = self.vol_and_drift(t, d).expect("validated inputs");
                (Some(v), Some(a))
            };
            CurvePoint {
                t,
                d,
                price,
                vol,
                drift,
            }
        });
        Ok(points)
    }
}

/// Writes curve points as CSV with the fixed header `t,d,price,vol,drift`.
/// Cells for quantities undefined at maturity are left empty.
pub fn write_curve_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "t,d,price,vol,drift")?;
    for p in points {
        let vol = p.vol.map(|v| v.to_string()).unwrap_or_default();
        let drift = p.drift.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", p.t, p.d, p.price, vol, drift)?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Weight {
    /// Integrate `psi(y) h(y)`.
    Plain,
    /// Integrate `psi(y) (y - m)/var h(y)` (the vol kernel).
    Score,
}

/// Expectation of the (possibly score-weighted) spot map under a Gaussian
/// law. Dispatches between plain Gauss-Hermite and the kink-aware piecewise
/// scheme depending on whether a spot-map breakpoint falls inside the
/// effective support window.
fn expect_spot(map: &SpotMap, law: &GaussianLaw, order: usize, weight: Weight) -> Result<f64> {
    let m = law.mean;
    let var = law.variance;
    let sd = var.sqrt();
    let (w_lo, w_hi) = (m - WINDOW_SDS * sd, m + WINDOW_SDS * sd);
    let cuts = map.breakpoints();
    let kink_inside = cuts.iter().any(|&c| c > w_lo && c < w_hi);

    if !kink_inside {
        let rule = quad::gauss_hermite(order)?;
        let mut acc = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let y = m + std::f64::consts::SQRT_2 * sd * x;
            let mut f = map.price(y);
            if weight == Weight::Score {
                f *= (y - m) / var;
            }
            acc += w * f;
        }
        return Ok(acc / quad::weights_total_hermite());
    }

    let density = |y: f64| {
        let z = (y - m) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let integrand = |y: f64| {
        let mut f = map.price(y) * density(y);
        if weight == Weight::Score {
            f *= (y - m) / var;
        }
        f
    };

    // Smooth branches between breakpoints, clipped to the window. The branch
    // touching zero carries the power-law slope singularity of the marginal
    // cost, so it gets geometric panels anchored at zero before the regular
    // one-standard-deviation panels take over.
    let panel_order = (order / 8).clamp(12, 32);
    let mut acc = 0.0;
    let pieces = [(0.0, cuts[1], true), (cuts[1], cuts[2], false)];
    for (a, b, singular_origin) in pieces {
        let lo = a.max(w_lo);
        let hi = b.min(w_hi);
        if hi <= lo {
            continue;
        }
        acc += integrate_piece(&integrand, lo, hi, sd, panel_order, singular_origin)?;
    }

    // Constant branch above the cost cap, integrated in closed form.
    let cap_price = map.price_scale
        * map.cost_cap.powf(map.cost_exponent)
        * crate::market::scarcity(map.capacity - map.cost_cap, map.scarcity_floor);
    let z_cap = (cuts[2] - m) / sd;
    acc += match weight {
        Weight::Plain => cap_price * quad::std_normal_sf(z_cap),
        Weight::Score => cap_price * quad::std_normal_pdf(z_cap) / sd,
    };
    Ok(acc)
}

/// Composite Gauss-Legendre over one smooth branch. With `graded` the panel
/// edges shrink geometrically toward the origin until the integrand's
/// power-law behavior is resolved; elsewhere panels are one standard
/// deviation wide so the Gaussian factor is well sampled.
fn integrate_piece<F: Fn(f64) -> f64>(
    integrand: &F,
    lo: f64,
    hi: f64,
    sd: f64,
    panel_order: usize,
    graded: bool,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut start = lo;
    let zone_end = sd.min(hi);
    if graded && lo < zone_end {
        let mut edges = vec![lo];
        for j in (1..=14).rev() {
            let p = zone_end * 0.25_f64.powi(j);
            if p > lo && p < zone_end {
                edges.push(p);
            }
        }
        edges.push(zone_end);
        for w in edges.windows(2) {
            acc += quad::integrate_legendre(integrand, w[0], w[1], panel_order)?;
        }
        start = zone_end;
    }
    if hi > start {
        let n_panels = ((hi - start) / sd).ceil().max(1.0) as usize;
        let width = (hi - start) / n_panels as f64;
        for i in 0..n_panels {
            let pa = start + i as f64 * width;
            let pb = start + (i + 1) as f64 * width;
            acc += quad::integrate_legendre(integrand, pa, pb, panel_order)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec;
    use approx::assert_relative_eq;

    fn bench_model() -> FuturesModel {
        FuturesModel {
            demand: DemandModel {
                mean_reversion: -1.0,
                sigma: 0.2,
                initial_demand: 1.0,
            },
            risk: RiskPrice::constant(0.1, 0.0, 1.0),
            spot: SpotMap {
                price_scale: 1.0,
                capacity: 10.0,
                scarcity_floor: 1.0,
                cost_exponent: 0.5,
                cost_cap: 9.0,
            },
            maturity: 1.0,
            quad_order: 128,
            mc_paths: 100_000,
        }
    }

    #[test]
    fn terminal_price_equals_spot_map() {
        let fm = bench_model();
        for d in [-1.0, 0.0, 0.5, 1.0, 4.0, 9.5, 12.0] {
            assert_eq!(fm.futures_price(1.0, d).unwrap(), fm.spot.price(d));
        }
    }

    #[test]
    fn price_matches_monte_carlo_oracle() {
        let fm = bench_model();
        let quad_price = fm.futures_price(0.0, 1.0).unwrap();
        let samples = exec::map_paths(100_000, 2024, |_, rng| {
            let d_t = sample_transition(&fm.demand, Some(&fm.risk), 0.0, 1.0, 1.0, rng).unwrap();
            fm.spot.price(d_t)
        });
        let (mc, se) = exec::mean_std_err(&samples);
        assert!(
            (quad_price - mc).abs() <= 3.0 * se,
            "quad {quad_price} vs mc {mc} (se {se})"
        );
    }

    #[test]
    fn zero_volatility_prices_the_deterministic_flow() {
        let mut fm = bench_model();
        fm.demand.sigma = 0.0;
        let flow = transition_factor(&fm.demand, Some(&fm.risk), 0.0, 1.0).unwrap();
        let p = fm.futures_price(0.0, 2.0).unwrap();
        assert_relative_eq!(p, fm.spot.price(flow * 2.0), epsilon = 1e-14);
    }

    #[test]
    fn price_is_bounded_and_monotone_in_demand() {
        let fm = bench_model();
        for &t in &[0.0, 0.4, 0.8, 0.999] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=200 {
                let d = -3.0 + 16.0 * i as f64 / 200.0;
                let p = fm.futures_price(t, d).unwrap();
                assert!(p >= -1e-13 && p <= fm.spot.price_bound() + 1e-12);
                assert!(p >= prev - 1e-10, "price dropped at t={t}, d={d}");
                prev = p;
            }
        }
    }

    #[test]
    fn quadrature_order_converged() {
        let fm = bench_model();
        let mut fm_hi = bench_model();
        fm_hi.quad_order = 256;
        for &(t, d) in &[(0.0, 1.0), (0.3, 0.2), (0.6, 2.5), (0.9, -0.4), (0.5, 8.0)] {
            let a = fm.futures_price(t, d).unwrap();
            let b = fm_hi.futures_price(t, d).unwrap();
            let scale = a.abs().max(1e-12);
            assert!(
                (a - b).abs() / scale < 1e-8,
                "order sensitivity at ({t},{d}): {a} vs {b}"
            );
        }
    }

    #[test]
    fn forward_vol_matches_finite_difference() {
        let fm = bench_model();
        let h = 1e-4;
        for &(t, d) in &[
            (0.0, 0.5),
            (0.0, 1.0),
            (0.2, 1.5),
            (0.5, 0.3),
            (0.7, 2.0),
            (0.9, 1.0),
        ] {
            let vol = fm.forward_vol(t, d).unwrap();
            let fd = fm.demand.sigma
                * (fm.futures_price(t, d + h).unwrap() - fm.futures_price(t, d - h).unwrap())
                / (2.0 * h);
            assert_relative_eq!(vol, fd, max_relative = 1e-4);
        }
    }

    #[test]
    fn forward_vol_nonnegative_and_monotonicity_reported() {
        let fm = bench_model();
        let mut worst_drop = 0.0_f64;
        let mut worst_at = (0.0, 0.0);
        for &t in &[0.0, 0.5, 0.9] {
            let mut prev = -1.0;
            for i in 0..=80 {
                let d = -1.0 + 4.0 * i as f64 / 80.0;
                let v = fm.forward_vol(t, d).unwrap();
                assert!(v >= 0.0, "negative vol at ({t},{d}): {v}");
                if prev >= 0.0 && v < prev && prev - v > worst_drop {
                    worst_drop = prev - v;
                    worst_at = (t, d);
                }
                prev = v;
            }
        }
        // Monitored, not asserted: the volatility is not monotone in demand
        // for this spot map (the power marginal cost has unbounded slope at
        // zero, which dominates the conditional mean for small demand).
        println!(
            "forward_vol monotonicity: worst drop {worst_drop:.3e} at (t,d)=({},{})",
            worst_at.0, worst_at.1
        );
    }

    #[test]
    fn forward_vol_vanishes_when_law_sits_on_flat_branch() {
        // Mass far inside the capped region: the spot map is constant there.
        let mut fm = bench_model();
        fm.demand.initial_demand = 60.0;
        let v = fm.forward_vol(0.9, 60.0).unwrap();
        assert!(v.abs() < 1e-12, "vol {v}");
        let p = fm.futures_price(0.9, 60.0).unwrap();
        assert_relative_eq!(p, fm.spot.price_bound(), epsilon = 1e-12);
    }

    #[test]
    fn forward_vol_singular_at_maturity() {
        let fm = bench_model();
        assert!(matches!(
            fm.forward_vol(1.0, 1.0),
            Err(EngineError::TimeDomain(_))
        ));
    }

    #[test]
    fn drift_is_product_of_risk_price_and_vol() {
        let fm = bench_model();
        let (v, a) = fm.vol_and_drift(0.3, 1.2).unwrap();
        assert_relative_eq!(a, 0.1 * v, epsilon = 1e-15);
        assert_relative_eq!(
            fm.forward_drift(0.3, 1.2).unwrap(),
            0.1 * v,
            epsilon = 1e-15
        );

        let mut fm0 = bench_model();
        fm0.risk = RiskPrice::constant(0.0, 0.0, 1.0);
        assert_eq!(fm0.forward_drift(0.3, 1.2).unwrap(), 0.0);

        // sign(drift) = sign(lambda(t,d)) since vol >= 0
        let mut fm_neg = bench_model();
        fm_neg.risk = RiskPrice::constant(-0.2, 0.05, 1.0);
        for &d in &[-0.5, 0.5, 1.5, 3.0] {
            let lam = fm_neg.risk.lambda_at(0.2, d);
            let drift = fm_neg.forward_drift(0.2, d).unwrap();
            assert!(
                drift * lam >= 0.0,
                "drift {drift} disagrees with lambda {lam}"
            );
        }
    }

    fn sample_p_path(fm: &FuturesModel, n_steps: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
        let dt = fm.maturity / n_steps as f64;
        let mut path = Vec::with_capacity(n_steps + 1);
        path.push(fm.demand.initial_demand);
        for k in 0..n_steps {
            let prev = path[k];
            let next = sample_transition(
                &fm.demand,
                None,
                k as f64 * dt,
                (k + 1) as f64 * dt,
                prev,
                rng,
            )
            .unwrap();
            path.push(next);
        }
        path
    }

    #[test]
    fn rn_density_is_one_without_risk_premium() {
        let mut fm = bench_model();
        fm.risk = RiskPrice::constant(0.0, 0.0, 1.0);
        let mut rng = exec::path_rng(5, 0);
        for _ in 0..10 {
            let path = sample_p_path(&fm, 64, &mut rng);
            assert_eq!(fm.rn_density(&path, 1.0 / 64.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn rn_density_has_unit_mean_and_prices_the_curve() {
        let fm = bench_model();
        let n_steps = 256;
        let dt = fm.maturity / n_steps as f64;
        let results = exec::map_paths(100_000, 31, |_, rng| {
            let path = sample_p_path(&fm, n_steps, rng);
            let density = fm.rn_density(&path, dt).unwrap();
            (density, density * fm.spot.price(path[n_steps]))
        });
        let densities: Vec<f64> = results.iter().map(|r| r.0).collect();
        let weighted: Vec<f64> = results.iter().map(|r| r.1).collect();

        let (mean_l, se_l) = exec::mean_std_err(&densities);
        assert!(
            (mean_l - 1.0).abs() <= 4.0 * se_l,
            "E[L] = {mean_l} (se {se_l})"
        );

        let (mean_lp, se_lp) = exec::mean_std_err(&weighted);
        let curve = fm.futures_price(0.0, fm.demand.initial_demand).unwrap();
        assert!(
            (mean_lp - curve).abs() <= 4.0 * se_lp,
            "E[L psi] = {mean_lp} vs curve {curve} (se {se_lp})"
        );
    }

    #[test]
    fn martingale_property_holds() {
        let fm = bench_model();
        let report = fm.martingale_check(0.0, 0.5, 1.0, 100_000, 77).unwrap();
        assert!(
            report.z_score() <= 4.0,
            "lhs {} rhs {} se {}",
            report.lhs,
            report.rhs,
            report.std_err
        );
    }

    #[test]
    fn martingale_check_degenerate_cases_exact() {
        let fm = bench_model();
        let same_time = fm.martingale_check(0.4, 0.4, 1.0, 500, 1).unwrap();
        // All draws collapse to the conditioning point; only the roundoff of
        // averaging identical values remains.
        assert_relative_eq!(same_time.lhs, same_time.rhs, epsilon = 1e-14);
        assert!(same_time.std_err <= 1e-12);

        let mut fm0 = bench_model();
        fm0.demand.sigma = 0.0;
        let frozen = fm0.martingale_check(0.0, 0.6, 1.0, 500, 1).unwrap();
        assert_relative_eq!(frozen.lhs, frozen.rhs, epsilon = 1e-13);
    }

    #[test]
    fn curve_table_is_time_major_and_handles_maturity() {
        let fm = bench_model();
        let times = [0.0, 0.5, 1.0];
        let demands = [0.0, 1.0];
        let table = fm.curve_table(&times, &demands).unwrap();
        assert_eq!(table.len(), 6);
        assert_eq!((table[0].t, table[0].d), (0.0, 0.0));
        assert_eq!((table[1].t, table[1].d), (0.0, 1.0));
        assert_eq!((table[4].t, table[4].d), (1.0, 0.0));
        for p in &table {
            if p.t == 1.0 {
                assert!(p.vol.is_none() && p.drift.is_none());
                assert_eq!(p.price, fm.spot.price(p.d));
            } else {
                assert!(p.vol.is_some() && p.drift.is_some());
            }
        }
        let mut csv = Vec::new();
        write_curve_csv(&mut csv, &table).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,d,price,vol,drift\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn rejects_times_outside_horizon() {
        let fm = bench_model();
        assert!(fm.futures_price(1.5, 1.0).is_err());
        assert!(fm.futures_price(-0.1, 1.0).is_err());
        assert!(fm.martingale_check(0.5, 0.4, 1.0, 10, 0).is_err());
    }
}
