//! Model-consistency checks: executable no-arbitrage and measure-change
//! properties with fixed tolerances, plus monitored diagnostics. The
//! `validate` set covers terminal convergence, the quadrature-vs-Monte-Carlo
//! price, the martingale (tower) property and the change-of-measure
//! identities; the full report adds the volatility formula, conditional-law
//! moments and production optimality.

use rand::Rng;
use serde::Serialize;

use crate::config::EngineConfig;
use crate::demand::{
    conditional_law, sample_transition, transition_factor, DemandModel, RiskPrice,
};
use crate::error::Result;
use crate::exec;
use crate::market::ProducerSpec;
use crate::pricing::FuturesModel;

#[derive(Serialize, Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, details: String) -> Self {
        Self {
            name: name.into(),
            passed,
            details,
        }
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

#[derive(Serialize, Clone, Debug)]
pub struct MonotonicityDiagnostic {
    pub nondecreasing: bool,
    pub worst_drop: f64,
    pub at_time: f64,
    pub at_demand: f64,
}

#[derive(Serialize, Clone, Debug)]
pub struct FullReport {
    pub checks: Vec<CheckOutcome>,
    pub vol_monotonicity: MonotonicityDiagnostic,
    pub warnings: Vec<String>,
    pub all_passed: bool,
}

fn time_fractions(fm: &FuturesModel) -> [f64; 5] {
    [0.1, 0.3, 0.5, 0.7, 0.9].map(|f| f * fm.maturity)
}

fn demand_points(lo: f64, hi: f64) -> [f64; 4] {
    [0.2, 0.4, 0.6, 0.8].map(|f| lo + f * (hi - lo))
}

/// Terminal convergence: just before delivery the curve must sit on the spot
/// map within 1% of the spot-price bound, over 1000 demand points.
pub fn terminal_consistency(fm: &FuturesModel) -> Result<CheckOutcome> {
    fm.validate()?;
    let t = fm.maturity - 1e-4;
    let (lo, hi) = (-2.0, fm.spot.capacity + 2.0);
    let n = 1000;
    let mut worst = 0.0_f64;
    let mut worst_d = lo;
    for i in 0..n {
        let d = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let gap = (fm.futures_price(t, d)? - fm.spot.price(d)).abs();
        if gap > worst {
            worst = gap;
            worst_d = d;
        }
    }
    let tol = 1e-2 * fm.spot.price_bound();
    Ok(CheckOutcome::new(
        "terminal_consistency",
        worst <= tol,
        format!("max |curve - spot| = {worst:.6e} at d = {worst_d:.4} (tolerance {tol:.6e})"),
    ))
}

/// Quadrature price against the exact-transition Monte Carlo oracle at 20
/// `(t, d)` points, three standard errors each.
pub fn quadrature_vs_monte_carlo(
    fm: &FuturesModel,
    d_lo: f64,
    d_hi: f64,
    seed: u64,
) -> Result<CheckOutcome> {
    fm.validate()?;
    let mut worst_z = 0.0_f64;
    let mut worst_at = (0.0, 0.0);
    let mut point_seed = seed;
    for t in time_fractions(fm) {
        for d in demand_points(d_lo, d_hi) {
            point_seed = point_seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let price = fm.futures_price(t, d)?;
            let samples = exec::map_paths(fm.mc_paths, point_seed, |_, rng| {
                let terminal =
                    sample_transition(&fm.demand, Some(&fm.risk), t, fm.maturity, d, rng)
                        .expect("validated");
                fm.spot.price(terminal)
            });
            let (mc, se) = exec::mean_std_err(&samples);
            let z = if se > 0.0 {
                (price - mc).abs() / se
            } else {
                0.0
            };
            if z > worst_z {
                worst_z = z;
                worst_at = (t, d);
            }
        }
    }
    Ok(CheckOutcome::new(
        "quadrature_vs_monte_carlo",
        worst_z <= 3.0,
        format!(
            "20 points x {} paths: worst |z| = {worst_z:.3} at (t, d) = ({:.3}, {:.3}) (limit 3)",
            fm.mc_paths, worst_at.0, worst_at.1
        ),
    ))
}

/// Tower property at five `(t, s, d)` triples, four standard errors each.
pub fn martingale_suite(
    fm: &FuturesModel,
    d_lo: f64,
    d_hi: f64,
    seed: u64,
) -> Result<CheckOutcome> {
    let t_end = fm.maturity;
    let d0 = fm.demand.initial_demand;
    let range = d_hi - d_lo;
    let triples = [
        (0.0, 0.5 * t_end, d0),
        (0.1 * t_end, 0.9 * t_end, d_lo + 0.5 * range),
        (0.25 * t_end, 0.5 * t_end, d_lo + 0.8 * range),
        (0.0, 0.25 * t_end, d_lo + 0.2 * range),
        (0.5 * t_end, 0.99 * t_end, d0),
    ];
    let mut worst_z = 0.0_f64;
    let mut worst = triples[0];
    for (idx, &(t, s, d)) in triples.iter().enumerate() {
        let report = fm.martingale_check(t, s, d, fm.mc_paths, seed.wrapping_add(idx as u64))?;
        if report.z_score() > worst_z {
            worst_z = report.z_score();
            worst = (t, s, d);
        }
    }
    Ok(CheckOutcome::new(
        "martingale_tower",
        worst_z <= 4.0,
        format!(
            "5 triples x {} paths: worst |z| = {worst_z:.3} at (t, s, d) = ({:.3}, {:.3}, {:.3}) (limit 4)",
            fm.mc_paths, worst.0, worst.1, worst.2
        ),
    ))
}

/// Change-of-measure identities: unit mean of the density and agreement of
/// the reweighted spot expectation with the curve, four standard errors.
pub fn girsanov_consistency(fm: &FuturesModel, seed: u64) -> Result<CheckOutcome> {
    fm.validate()?;
    let n_steps = 256;
    let dt = fm.maturity / n_steps as f64;
    let flow = transition_factor(&fm.demand, None, 0.0, dt)?;
    let sd = conditional_law(&fm.demand, None, 0.0, dt, 0.0)?.std_dev();
    let results = exec::map_paths(fm.mc_paths, seed, |_, rng| {
        let mut path = Vec::with_capacity(n_steps + 1);
        path.push(fm.demand.initial_demand);
        for k in 0..n_steps {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            path.push(flow * path[k] + sd * z);
        }
        let density = fm.rn_density(&path, dt).expect("validated");
        (density, density * fm.spot.price(path[n_steps]))
    });
    let densities: Vec<f64> = results.iter().map(|r| r.0).collect();
    let weighted: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (mean_l, se_l) = exec::mean_std_err(&densities);
    let (mean_lp, se_lp) = exec::mean_std_err(&weighted);
    let curve = fm.futures_price(0.0, fm.demand.initial_demand)?;

    let z_mass = if se_l > 0.0 {
        (mean_l - 1.0).abs() / se_l
    } else {
        0.0
    };
    let z_price = if se_lp > 0.0 {
        (mean_lp - curve).abs() / se_lp
    } else {
        0.0
    };
    Ok(CheckOutcome::new(
        "girsanov_consistency",
        z_mass <= 4.0 && z_price <= 4.0,
        format!(
            "E[L] = {mean_l:.6} (|z| = {z_mass:.3}), E[L spot] = {mean_lp:.6} vs curve {curve:.6} (|z| = {z_price:.3}, limit 4)"
        ),
    ))
}

/// Volatility formula against the central finite difference of the price, at
/// 20 interior points to 1e-4 relative, plus nonnegativity everywhere tested.
pub fn vol_finite_difference(fm: &FuturesModel, d_lo: f64, d_hi: f64) -> Result<CheckOutcome> {
    fm.validate()?;
    let h = 1e-4;
    let mut worst_rel = 0.0_f64;
    let mut worst_at = (0.0, 0.0);
    let mut all_nonneg = true;
    for t in time_fractions(fm) {
        for d in demand_points(d_lo, d_hi) {
            let vol = fm.forward_vol(t, d)?;
            if vol < 0.0 {
                all_nonneg = false;
            }
            let fd = fm.demand.sigma
                * (fm.futures_price(t, d + h)? - fm.futures_price(t, d - h)?)
                / (2.0 * h);
            let rel = (vol - fd).abs() / fd.abs().max(1e-300);
            if rel > worst_rel {
                worst_rel = rel;
                worst_at = (t, d);
            }
        }
    }
    Ok(CheckOutcome::new(
        "vol_finite_difference",
        worst_rel <= 1e-4 && all_nonneg,
        format!(
            "20 points: worst relative gap {worst_rel:.3e} at (t, d) = ({:.3}, {:.3}) (limit 1e-4); nonnegative: {all_nonneg}",
            worst_at.0, worst_at.1
        ),
    ))
}

/// Monitored (not asserted): whether the volatility is nondecreasing in
/// demand over the configured demand grid.
pub fn vol_monotonicity(
    fm: &FuturesModel,
    d_lo: f64,
    d_hi: f64,
    nd: usize,
) -> Result<MonotonicityDiagnostic> {
    let mut worst_drop = 0.0_f64;
    let mut at = (0.0, d_lo);
    for t in [0.0, 0.5 * fm.maturity, 0.9 * fm.maturity] {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..nd {
            let d = d_lo + (d_hi - d_lo) * k as f64 / (nd - 1) as f64;
            let vol = fm.forward_vol(t, d)?;
            if prev - vol > worst_drop {
                worst_drop = prev - vol;
                at = (t, d);
            }
            prev = prev.max(vol);
        }
    }
    Ok(MonotonicityDiagnostic {
        nondecreasing: worst_drop <= 1e-12,
        worst_drop,
        at_time: at.0,
        at_demand: at.1,
    })
}

/// Closed-form conditional moments against empirical moments under both
/// measures (with nonzero risk-price coefficients), four standard errors,
/// plus the exact variance-additivity and flow-multiplicativity identities.
pub fn conditional_law_consistency(
    demand: &DemandModel,
    horizon: f64,
    mc_paths: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    demand.validate()?;
    // Exercise genuinely time-varying, nonzero coefficients of both kinds.
    let risk = RiskPrice {
        knots: vec![0.0, 0.5 * horizon, horizon],
        lambda0: vec![0.1, -0.05],
        lambda1: vec![0.05, 0.1],
    };
    risk.validate(horizon)?;

    let d0 = demand.initial_demand;
    let mut worst_z = 0.0_f64;
    let mut label = "";
    for (which, risk_opt, run_seed) in [("P", None, seed), ("Q", Some(&risk), seed.wrapping_add(1))]
    {
        let law = conditional_law(demand, risk_opt, 0.0, horizon, d0)?;
        let draws = exec::map_paths(mc_paths, run_seed, |_, rng| {
            sample_transition(demand, risk_opt, 0.0, horizon, d0, rng).expect("validated")
        });
        let (mean, se_mean) = exec::mean_std_err(&draws);
        let nf = mc_paths as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
        let se_var = var * (2.0 / (nf - 1.0)).sqrt();
        let z_mean = (mean - law.mean).abs() / se_mean;
        let z_var = (var - law.variance).abs() / se_var;
        for (z, tag) in [(z_mean, "mean"), (z_var, "variance")] {
            if z > worst_z {
                worst_z = z;
                label = if which == "P" {
                    if tag == "mean" {
                        "P mean"
                    } else {
                        "P variance"
                    }
                } else if tag == "mean" {
                    "Q mean"
                } else {
                    "Q variance"
                };
            }
        }
    }

    // Exact identities across an intermediate time.
    let (t0, mid, t1) = (0.0, 0.4 * horizon, horizon);
    let whole = conditional_law(demand, Some(&risk), t0, t1, d0)?.variance;
    let first = conditional_law(demand, Some(&risk), t0, mid, d0)?.variance;
    let second = conditional_law(demand, Some(&risk), mid, t1, d0)?.variance;
    let phi = transition_factor(demand, Some(&risk), mid, t1)?;
    let additivity_gap = (phi * phi * first + second - whole).abs() / whole.abs().max(1e-300);
    let factor_whole = transition_factor(demand, Some(&risk), t0, t1)?;
    let factor_split = transition_factor(demand, Some(&risk), t0, mid)? * phi;
    let factor_gap = (factor_split - factor_whole).abs() / factor_whole.abs();

    let passed = worst_z <= 4.0 && additivity_gap <= 1e-10 && factor_gap <= 1e-12;
    Ok(CheckOutcome::new(
        "conditional_law_consistency",
        passed,
        format!(
            "worst moment |z| = {worst_z:.3} ({label}, limit 4); variance additivity {additivity_gap:.3e} (limit 1e-10); flow multiplicativity {factor_gap:.3e} (limit 1e-12)"
        ),
    ))
}

/// Closed-form production rule against a 10^4-point grid search of the
/// profit objective, 100 random prices, 1e-6 relative.
pub fn production_optimality(
    spec: &ProducerSpec,
    price_bound: f64,
    seed: u64,
) -> Result<CheckOutcome> {
    spec.validate()?;
    let mut rng = exec::path_rng(seed, 0);
    let mut worst_shortfall = 0.0_f64;
    for _ in 0..100 {
        let s = 1.2 * price_bound * rng.gen::<f64>();
        let q_star = spec.optimal_production(s);
        let objective = |q: f64| q * s - spec.cost.production_cost(q);
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            let q = spec.max_production * i as f64 / 10_000.0;
            grid_best = grid_best.max(objective(q));
        }
        let shortfall = (grid_best - objective(q_star)) / grid_best.abs().max(1e-12);
        worst_shortfall = worst_shortfall.max(shortfall);
    }
    Ok(CheckOutcome::new(
        "production_optimality",
        worst_shortfall <= 1e-6,
        format!("100 prices: worst relative shortfall vs grid search = {worst_shortfall:.3e} (limit 1e-6)"),
    ))
}

/// The `validate` command: the four no-arbitrage / measure checks.
pub fn run_validate(cfg: &EngineConfig) -> Result<ValidationReport> {
    let fm = cfg.futures_model();
    let (d_lo, d_hi) = (cfg.grid.demand_min, cfg.grid.demand_max);
    let checks = vec![
        terminal_consistency(&fm)?,
        quadrature_vs_monte_carlo(&fm, d_lo, d_hi, cfg.seed.wrapping_add(101))?,
        martingale_suite(&fm, d_lo, d_hi, cfg.seed.wrapping_add(202))?,
        girsanov_consistency(&fm, cfg.seed.wrapping_add(303))?,
    ];
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport { checks, all_passed })
}

/// The `report` command: every check plus monitored diagnostics.
pub fn run_report(cfg: &EngineConfig) -> Result<FullReport> {
    let fm = cfg.futures_model();
    let (d_lo, d_hi) = (cfg.grid.demand_min, cfg.grid.demand_max);
    let mut checks = run_validate(cfg)?.checks;
    checks.push(vol_finite_difference(&fm, d_lo, d_hi)?);
    checks.push(conditional_law_consistency(
        &cfg.demand,
        fm.maturity,
        fm.mc_paths,
        cfg.seed.wrapping_add(404),
    )?);
    checks.push(production_optimality(
        &cfg.producer,
        cfg.spot.price_bound(),
        cfg.seed.wrapping_add(505),
    )?);
    let vol_mono = vol_monotonicity(&fm, d_lo, d_hi, cfg.grid.nd)?;
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(FullReport {
        checks,
        vol_monotonicity: vol_mono,
        warnings: cfg.warnings(),
        all_passed,
    })
}
