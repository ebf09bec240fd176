//! Finite-difference solver for the producer's dynamic program on the state
//! `(wealth, stock, demand)` with power utility of terminal wealth.
//!
//! The scheme is explicit backward Euler with first-order upwinding on every
//! advection term and central differences on the diffusions, which keeps the
//! update monotone as long as the step satisfies the CFL bound; the solver
//! computes the required number of steps from the worst-case coefficients
//! and refuses time grids that are too coarse. Controls at each node:
//! production is the closed-form spot optimum, the storage rate is the better
//! of the two admissible extremes (truncated at the stock boundaries), and
//! the futures position maximizes its concave quadratic, clamped to a
//! configurable bound.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::demand::{conditional_law, transition_factor, DemandModel, RiskPrice};
use crate::error::{EngineError, Result};
use crate::exec;
use crate::market::{ProducerSpec, SpotMap};
use crate::policy::Policy;
use crate::pricing::FuturesModel;

/// Discretization of the solver state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Wealth truncation (the value is extrapolated linearly above).
    pub wealth_max: f64,
    pub nr: usize,
    pub nx: usize,
    pub nd: usize,
    /// Time steps; `null` lets the solver pick the smallest stable count.
    pub nt: Option<usize>,
    pub demand_min: f64,
    pub demand_max: f64,
    /// Bound on the absolute futures position used by the scheme.
    pub theta_cap: f64,
}

impl GridSpec {
    pub fn validate(&self, fm: &FuturesModel, spec: &ProducerSpec) -> Result<()> {
        if self.nr < 3 || self.nx < 3 || self.nd < 3 {
            return Err(EngineError::InvalidParameter(
                "grid node counts nr, nx, nd must all be >= 3".into(),
            ));
        }
        if let Some(nt) = self.nt {
            if nt < 3 {
                return Err(EngineError::InvalidParameter(
                    "grid.nt must be >= 3 when given".into(),
                ));
            }
        }
        if !self.wealth_max.is_finite() || self.wealth_max <= spec.initial_wealth {
            return Err(EngineError::InvalidParameter(
                "grid.wealth_max must exceed the initial wealth".into(),
            ));
        }
        if !(self.demand_min < fm.demand.initial_demand
            && fm.demand.initial_demand < self.demand_max)
        {
            return Err(EngineError::InvalidParameter(
                "grid demand bounds must straddle the initial demand".into(),
            ));
        }
        if spec.storage_capacity <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "the solver needs a positive storage capacity to span the stock axis".into(),
            ));
        }
        if !self.theta_cap.is_finite() || self.theta_cap <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "grid.theta_cap must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Scheme-level facts recorded by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeDiagnostics {
    pub dt: f64,
    /// Largest observed `dt * coefficient sum` (must stay <= 1).
    pub cfl_bound: f64,
    /// Smallest stable step count for this instance.
    pub required_steps: usize,
    /// Interior nodes where the wealth second difference lost concavity and
    /// the position was clamped to the bound.
    pub convexity_clamps: u64,
}

/// Model echo carried by a solved grid so it is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub demand: DemandModel,
    pub risk: RiskPrice,
    pub spot: SpotMap,
    pub producer: ProducerSpec,
    pub maturity: f64,
    pub theta_cap: f64,
    pub diagnostics: SchemeDiagnostics,
}

/// Solved value function and extracted policies on the full space-time grid,
/// plus the futures vol/drift tables the scheme used (one row per time slice
/// except the terminal one).
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    pub stock: Vec<f64>,
    pub demand: Vec<f64>,
    pub values: Vec<f64>,
    pub policy_q: Vec<f64>,
    pub policy_u: Vec<f64>,
    pub policy_theta: Vec<f64>,
    pub vol_table: Vec<f64>,
    pub drift_table: Vec<f64>,
    pub meta: GridMeta,
}

impl ValueGrid {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    fn stride(&self) -> usize {
        self.wealth.len() * self.stock.len() * self.demand.len()
    }

    pub fn node_index(&self, n: usize, i: usize, j: usize, k: usize) -> usize {
        ((n * self.wealth.len() + i) * self.stock.len() + j) * self.demand.len() + k
    }

    pub fn value(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.node_index(n, i, j, k)]
    }

    pub fn policy(&self, n: usize, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        let idx = self.node_index(n, i, j, k);
        (
            self.policy_q[idx],
            self.policy_u[idx],
            self.policy_theta[idx],
        )
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let s = self.stride();
        &self.values[n * s..(n + 1) * s]
    }

    /// Value at the initial state `(0, r0, x0, D0)` (nearest node).
    pub fn initial_value(&self) -> f64 {
        let i = nearest(&self.wealth, self.meta.producer.initial_wealth);
        let j = nearest(&self.stock, self.meta.producer.initial_stock);
        let k = nearest(&self.demand, self.meta.demand.initial_demand);
        self.value(0, i, j, k)
    }

    /// The two storage-rate Hamiltonian values at a node of slice `m`
    /// (evaluated, like the solver, on the later slice `m + 1`). Used to
    /// probe switching-tie insensitivity.
    pub fn hamiltonian_pair(&self, m: usize, i: usize, j: usize, k: usize) -> (f64, f64) {
        let tables = SliceTables::new(self);
        let ctx = tables.ctx(self, m);
        let (v_c, v_r, v_rr, _v_x) = ctx.derivatives(i, j, k);
        let (theta, _) = ctx.theta_choice(i, k, v_r, v_rr);
        let (u_lo, u_hi) = ctx.u_candidates(j);
        let (h_lo, _) = ctx.hamiltonian(i, j, k, v_c, u_lo, theta);
        let (h_hi, _) = ctx.hamiltonian(i, j, k, v_c, u_hi, theta);
        (h_lo, h_hi)
    }

    /// Central-difference switch indicator `psi(d) v_r - v_x` at a node of
    /// slice `m`, from the same derivatives the solver saw.
    pub fn switch_indicator(&self, m: usize, i: usize, j: usize, k: usize) -> f64 {
        let tables = SliceTables::new(self);
        let ctx = tables.ctx(self, m);
        let (_v_c, v_r, _v_rr, v_x) = ctx.derivatives(i, j, k);
        ctx.psi[k] * v_r - v_x
    }

    /// Wealth second difference on slice `m + 1` at a node, as the solver
    /// computed it when choosing the slice-`m` policy.
    pub fn wealth_curvature(&self, m: usize, i: usize, j: usize, k: usize) -> f64 {
        let tables = SliceTables::new(self);
        let ctx = tables.ctx(self, m);
        let (_, _, v_rr, _) = ctx.derivatives(i, j, k);
        v_rr
    }

    fn tables_row(&self, m: usize) -> (&[f64], &[f64]) {
        let nd = self.demand.len();
        let row = m.min(self.n_steps() - 1);
        (
            &self.vol_table[row * nd..(row + 1) * nd],
            &self.drift_table[row * nd..(row + 1) * nd],
        )
    }
}

/// Per-axis tables rebuilt from a solved grid's metadata, for diagnostics.
struct SliceTables {
    psi: Vec<f64>,
    prof_q: Vec<f64>,
    k_cost: Vec<f64>,
}

impl SliceTables {
    fn new(grid: &ValueGrid) -> Self {
        Self {
            psi: precompute_psi(&grid.meta.spot, &grid.demand),
            prof_q: precompute_prof(&grid.meta.producer, &grid.meta.spot, &grid.demand),
            k_cost: precompute_kcost(&grid.meta.producer, &grid.stock),
        }
    }

    fn ctx<'a>(&'a self, grid: &'a ValueGrid, m: usize) -> SliceCtx<'a> {
        let (vol_row, drift_row) = grid.tables_row(m);
        SliceCtx {
            v: grid.slice(m + 1),
            nr: grid.wealth.len(),
            nx: grid.stock.len(),
            nd: grid.demand.len(),
            dr: grid.wealth[1] - grid.wealth[0],
            dx: grid.stock[1] - grid.stock[0],
            dd: grid.demand[1] - grid.demand[0],
            demand: &grid.demand,
            psi: &self.psi,
            prof_q: &self.prof_q,
            k_cost: &self.k_cost,
            vol_row,
            drift_row,
            a: grid.meta.demand.mean_reversion,
            sigma2: grid.meta.demand.sigma * grid.meta.demand.sigma,
            u_min: grid.meta.producer.min_storage_rate,
            u_max: grid.meta.producer.max_storage_rate,
            theta_cap: grid.meta.theta_cap,
        }
    }
}

fn nearest(axis: &[f64], x: f64) -> usize {
    let step = axis[1] - axis[0];
    let idx = ((x - axis[0]) / step).round();
    (idx.max(0.0) as usize).min(axis.len() - 1)
}

fn precompute_psi(spot: &SpotMap, demand: &[f64]) -> Vec<f64> {
    demand.iter().map(|&d| spot.price(d)).collect()
}

fn precompute_prof(spec: &ProducerSpec, spot: &SpotMap, demand: &[f64]) -> Vec<f64> {
    demand
        .iter()
        .map(|&d| {
            let s = spot.price(d);
            let q = spec.optimal_production(s);
            q * s - spec.cost.production_cost(q)
        })
        .collect()
}

fn precompute_kcost(spec: &ProducerSpec, stock: &[f64]) -> Vec<f64> {
    stock.iter().map(|&x| spec.cost.storage_cost(x)).collect()
}

struct SliceCtx<'a> {
    v: &'a [f64],
    nr: usize,
    nx: usize,
    nd: usize,
    dr: f64,
    dx: f64,
    dd: f64,
    demand: &'a [f64],
    psi: &'a [f64],
    prof_q: &'a [f64],
    k_cost: &'a [f64],
    vol_row: &'a [f64],
    drift_row: &'a [f64],
    a: f64,
    sigma2: f64,
    u_min: f64,
    u_max: f64,
    theta_cap: f64,
}

struct NodeOut {
    value: f64,
    q: f64,
    u: f64,
    theta: f64,
    cfl: f64,
    clamped: bool,
}

impl SliceCtx<'_> {
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.v[(i * self.nx + j) * self.nd + k]
    }

    /// Central differences with one-sided fallbacks on the boundaries; the
    /// wealth second difference is zero on the wealth boundaries (linear
    /// extrapolation above, absorbing wall below).
    fn derivatives(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64, f64) {
        let v_c = self.at(i, j, k);
        let v_r = if i == 0 {
            (self.at(1, j, k) - v_c) / self.dr
        } else if i == self.nr - 1 {
            (v_c - self.at(i - 1, j, k)) / self.dr
        } else {
            (self.at(i + 1, j, k) - self.at(i - 1, j, k)) / (2.0 * self.dr)
        };
        let v_rr = if i == 0 || i == self.nr - 1 {
            0.0
        } else {
            (self.at(i + 1, j, k) - 2.0 * v_c + self.at(i - 1, j, k)) / (self.dr * self.dr)
        };
        let v_x = if j == 0 {
            (self.at(i, 1, k) - v_c) / self.dx
        } else if j == self.nx - 1 {
            (v_c - self.at(i, j - 1, k)) / self.dx
        } else {
            (self.at(i, j + 1, k) - self.at(i, j - 1, k)) / (2.0 * self.dx)
        };
        (v_c, v_r, v_rr, v_x)
    }

    /// Analytic position choice: the concave quadratic maximizer clamped to
    /// the cap; on nodes where the computed curvature is nonnegative the
    /// position goes to the signed cap (flagged as a clamp when interior).
    fn theta_choice(&self, i: usize, k: usize, v_r: f64, v_rr: f64) -> (f64, bool) {
        if i == 0 {
            return (0.0, false);
        }
        let vol = self.vol_row[k];
        let mu = self.drift_row[k];
        if vol <= 0.0 || mu == 0.0 {
            return (0.0, false);
        }
        if v_rr < 0.0 {
            let raw = -(mu / (vol * vol)) * (v_r / v_rr);
            (raw.clamp(-self.theta_cap, self.theta_cap), false)
        } else {
            let direction = mu * v_r;
            let theta = if direction > 0.0 {
                self.theta_cap
            } else if direction < 0.0 {
                -self.theta_cap
            } else {
                0.0
            };
            (theta, i > 0 && i < self.nr - 1)
        }
    }

    fn u_candidates(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 {
            self.u_min.max(0.0)
        } else {
            self.u_min
        };
        let hi = if j == self.nx - 1 {
            self.u_max.min(0.0)
        } else {
            self.u_max
        };
        (lo, hi)
    }

    /// Upwind Hamiltonian for fixed controls; returns the generator value
    /// and the CFL coefficient sum it consumes.
    fn hamiltonian(
        &self,
        i: usize,
        j: usize,
        k: usize,
        v_c: f64,
        u: f64,
        theta: f64,
    ) -> (f64, f64) {
        let mut h = 0.0;
        let mut cfl = 0.0;

        if u > 0.0 {
            h += u * (self.at(i, j + 1, k) - v_c) / self.dx;
            cfl += u / self.dx;
        } else if u < 0.0 {
            h += u * (v_c - self.at(i, j - 1, k)) / self.dx;
            cfl += -u / self.dx;
        }

        let ad = self.a * self.demand[k];
        if ad != 0.0 {
            let slope = if ad > 0.0 {
                if k < self.nd - 1 {
                    (self.at(i, j, k + 1) - v_c) / self.dd
                } else {
                    (v_c - self.at(i, j, k - 1)) / self.dd
                }
            } else if k > 0 {
                (v_c - self.at(i, j, k - 1)) / self.dd
            } else {
                (self.at(i, j, k + 1) - v_c) / self.dd
            };
            h += ad * slope;
            cfl += ad.abs() / self.dd;
        }

        if k > 0 && k < self.nd - 1 {
            h += 0.5 * self.sigma2 * (self.at(i, j, k + 1) - 2.0 * v_c + self.at(i, j, k - 1))
                / (self.dd * self.dd);
            cfl += self.sigma2 / (self.dd * self.dd);
        }

        let profit = self.prof_q[k] - u * self.psi[k] - self.k_cost[j];
        let mut drift_r = profit + self.drift_row[k] * theta;
        if i == 0 && drift_r < 0.0 {
            // Zero-wealth wall: the state cannot leave the admissible set.
            drift_r = 0.0;
        }
        if drift_r > 0.0 {
            let slope = if i < self.nr - 1 {
                (self.at(i + 1, j, k) - v_c) / self.dr
            } else {
                (v_c - self.at(i - 1, j, k)) / self.dr
            };
            h += drift_r * slope;
            cfl += drift_r / self.dr;
        } else if drift_r < 0.0 {
            h += drift_r * (v_c - self.at(i - 1, j, k)) / self.dr;
            cfl += -drift_r / self.dr;
        }

        if theta != 0.0 && i > 0 && i < self.nr - 1 {
            let vol_theta = self.vol_row[k] * theta;
            h += 0.5
                * vol_theta
                * vol_theta
                * (self.at(i + 1, j, k) - 2.0 * v_c + self.at(i - 1, j, k))
                / (self.dr * self.dr);
            cfl += vol_theta * vol_theta / (self.dr * self.dr);
        }

        (h, cfl)
    }

    fn update(&self, i: usize, j: usize, k: usize, q: f64, dt: f64) -> NodeOut {
        let (v_c, v_r, v_rr, _v_x) = self.derivatives(i, j, k);
        let (theta, clamped) = self.theta_choice(i, k, v_r, v_rr);
        let (u_lo, u_hi) = self.u_candidates(j);
        let (h_lo, c_lo) = self.hamiltonian(i, j, k, v_c, u_lo, theta);
        let (h_hi, c_hi) = self.hamiltonian(i, j, k, v_c, u_hi, theta);
        // Ties go to the injection branch.
        let (h, cfl, u) = if h_hi >= h_lo {
            (h_hi, c_hi, u_hi)
        } else {
            (h_lo, c_lo, u_lo)
        };
        NodeOut {
            value: v_c + dt * h,
            q,
            u,
            theta,
            cfl,
            clamped,
        }
    }
}

/// Smallest stable time-step count and the vol/drift tables for it.
/// State-space axes and spacings shared by the solver passes.
struct AxisSet {
    wealth: Vec<f64>,
    stock: Vec<f64>,
    demand: Vec<f64>,
    dr: f64,
    dx: f64,
    dd: f64,
}

impl AxisSet {
    fn new(grid: &GridSpec, spec: &ProducerSpec) -> Self {
        let dr = grid.wealth_max / (grid.nr - 1) as f64;
        let dx = spec.storage_capacity / (grid.nx - 1) as f64;
        let dd = (grid.demand_max - grid.demand_min) / (grid.nd - 1) as f64;
        Self {
            wealth: (0..grid.nr).map(|i| i as f64 * dr).collect(),
            stock: (0..grid.nx).map(|j| j as f64 * dx).collect(),
            demand: (0..grid.nd)
                .map(|k| grid.demand_min + k as f64 * dd)
                .collect(),
            dr,
            dx,
            dd,
        }
    }
}

fn resolve_steps(
    fm: &FuturesModel,
    spec: &ProducerSpec,
    grid: &GridSpec,
    axes: &AxisSet,
) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let demand_axis = &axes.demand;
    let (dr, dd) = (axes.dr, axes.dd);
    let psi = precompute_psi(&fm.spot, demand_axis);
    let prof = precompute_prof(spec, &fm.spot, demand_axis);
    let kcost = precompute_kcost(spec, &axes.stock);
    let k_max = kcost.last().copied().unwrap_or(0.0);
    let sigma2 = fm.demand.sigma * fm.demand.sigma;
    let adv_x = (spec.min_storage_rate.abs()).max(spec.max_storage_rate.abs()) / axes.dx;

    let build = |nt: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let dt = fm.maturity / nt as f64;
        let nd = demand_axis.len();
        let rows = exec::map_indexed(nt * nd, |idx| {
            let m = idx / nd;
            let k = idx % nd;
            fm.vol_and_drift(m as f64 * dt, demand_axis[k])
                .expect("validated inputs")
        });
        Ok((
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
        ))
    };

    let bound = |vol: &[f64], drift: &[f64], nt: usize| -> f64 {
        let nd = demand_axis.len();
        let mut worst = 0.0_f64;
        for m in 0..nt {
            for k in 0..nd {
                let pi_max = [spec.min_storage_rate, spec.max_storage_rate]
                    .iter()
                    .flat_map(|&u| [0.0, k_max].map(|kc| (prof[k] - u * psi[k] - kc).abs()))
                    .fold(0.0_f64, f64::max);
                let mu = drift[m * nd + k].abs();
                let vol_theta = vol[m * nd + k] * grid.theta_cap;
                let sum = adv_x
                    + (fm.demand.mean_reversion * demand_axis[k]).abs() / dd
                    + sigma2 / (dd * dd)
                    + (pi_max + mu * grid.theta_cap) / dr
                    + vol_theta * vol_theta / (dr * dr);
                worst = worst.max(sum);
            }
        }
        worst
    };

    let steps_for = |b: f64| -> usize { ((fm.maturity * b * 1.05).ceil() as usize + 1).max(3) };

    let mut cand = 64usize;
    for _ in 0..24 {
        let (vol, drift) = build(cand)?;
        let req = steps_for(bound(&vol, &drift, cand));
        if req <= cand {
            // `cand` is stable; try the tighter count before settling.
            let (vol_r, drift_r) = build(req)?;
            if steps_for(bound(&vol_r, &drift_r, req)) <= req {
                return Ok((req, vol_r, drift_r));
            }
            return Ok((cand, vol, drift));
        }
        cand = req;
    }
    Err(EngineError::Numerical(
        "stable time-step search did not converge".into(),
    ))
}

/// Solves the dynamic program backward from the power-utility terminal
/// condition and extracts the per-node controls.
pub fn solve_hjb(fm: &FuturesModel, spec: &ProducerSpec, grid: &GridSpec) -> Result<ValueGrid> {
    fm.validate()?;
    spec.validate()?;
    grid.validate(fm, spec)?;

    let (nr, nx, nd) = (grid.nr, grid.nx, grid.nd);
    let axes = AxisSet::new(grid, spec);
    let (dr, dx, dd) = (axes.dr, axes.dx, axes.dd);
    let (required, mut vol_table, mut drift_table) = resolve_steps(fm, spec, grid, &axes)?;
    let AxisSet {
        wealth,
        stock,
        demand,
        ..
    } = axes;
    let nt = match grid.nt {
        None => required,
        Some(user) => {
            if user < required {
                return Err(EngineError::CflViolation {
                    required,
                    got: user,
                });
            }
            // Rebuild the coefficient tables on the user's (finer) slices.
            if user != required {
                let dt = fm.maturity / user as f64;
                let rows = exec::map_indexed(user * nd, |idx| {
                    let m = idx / nd;
                    let k = idx % nd;
                    fm.vol_and_drift(m as f64 * dt, demand[k])
                        .expect("validated inputs")
                });
                vol_table = rows.iter().map(|r| r.0).collect();
                drift_table = rows.iter().map(|r| r.1).collect();
            }
            user
        }
    };
    let dt = fm.maturity / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|m| m as f64 * dt).collect();

    let stride = nr * nx * nd;
    let gamma = spec.utility_exponent;
    let mut values = vec![0.0_f64; (nt + 1) * stride];
    let mut policy_q = vec![0.0_f64; (nt + 1) * stride];
    let mut policy_u = vec![0.0_f64; (nt + 1) * stride];
    let mut policy_theta = vec![0.0_f64; (nt + 1) * stride];

    let psi = precompute_psi(&fm.spot, &demand);
    let prof_q = precompute_prof(spec, &fm.spot, &demand);
    let k_cost = precompute_kcost(spec, &stock);
    let q_star: Vec<f64> = psi.iter().map(|&s| spec.optimal_production(s)).collect();

    // Terminal condition: utility of wealth, independent of stock and demand.
    for i in 0..nr {
        let u_val = wealth[i].powf(gamma);
        let row = &mut values[nt * stride + i * nx * nd..nt * stride + (i + 1) * nx * nd];
        row.fill(u_val);
    }

    let mut max_cfl_dt = 0.0_f64;
    let mut clamp_count = 0u64;

    for m in (0..nt).rev() {
        let (lower, upper) = values.split_at_mut((m + 1) * stride);
        let v_next = &upper[..stride];
        let ctx = SliceCtx {
            v: v_next,
            nr,
            nx,
            nd,
            dr,
            dx,
            dd,
            demand: &demand,
            psi: &psi,
            prof_q: &prof_q,
            k_cost: &k_cost,
            vol_row: &vol_table[m * nd..(m + 1) * nd],
            drift_row: &drift_table[m * nd..(m + 1) * nd],
            a: fm.demand.mean_reversion,
            sigma2: fm.demand.sigma * fm.demand.sigma,
            u_min: spec.min_storage_rate,
            u_max: spec.max_storage_rate,
            theta_cap: grid.theta_cap,
        };
        let out = exec::map_indexed(stride, |node| {
            let i = node / (nx * nd);
            let j = (node / nd) % nx;
            let k = node % nd;
            ctx.update(i, j, k, q_star[k], dt)
        });

        let dest = &mut lower[m * stride..];
        for (node, o) in out.iter().enumerate() {
            dest[node] = o.value;
            policy_q[m * stride + node] = o.q;
            policy_u[m * stride + node] = o.u;
            policy_theta[m * stride + node] = o.theta;
            max_cfl_dt = max_cfl_dt.max(o.cfl * dt);
            if o.clamped {
                clamp_count += 1;
            }
        }
    }
    debug_assert!(max_cfl_dt <= 1.0 + 1e-9, "CFL exceeded: {max_cfl_dt}");

    // Terminal-slice policies: production and the storage indicator from the
    // terminal value; no position remains to be chosen at delivery.
    {
        let base = nt * stride;
        let term = &values[base..];
        for node in 0..stride {
            let i = node / (nx * nd);
            let j = (node / nd) % nx;
            let k = node % nd;
            let v_c = term[node];
            let v_r = if i == 0 {
                (term[(nx + j) * nd + k] - v_c) / dr
            } else if i == nr - 1 {
                (v_c - term[((i - 1) * nx + j) * nd + k]) / dr
            } else {
                (term[((i + 1) * nx + j) * nd + k] - term[((i - 1) * nx + j) * nd + k]) / (2.0 * dr)
            };
            // Terminal value has no stock dependence.
            let v_x = 0.0;
            let u = if psi[k] * v_r > v_x {
                if j == 0 {
                    spec.min_storage_rate.max(0.0)
                } else {
                    spec.min_storage_rate
                }
            } else if j == nx - 1 {
                spec.max_storage_rate.min(0.0)
            } else {
                spec.max_storage_rate
            };
            policy_q[base + node] = q_star[k];
            policy_u[base + node] = u;
            policy_theta[base + node] = 0.0;
        }
    }

    Ok(ValueGrid {
        times,
        wealth,
        stock,
        demand,
        values,
        policy_q,
        policy_u,
        policy_theta,
        vol_table,
        drift_table,
        meta: GridMeta {
            demand: fm.demand,
            risk: fm.risk.clone(),
            spot: fm.spot,
            producer: *spec,
            maturity: fm.maturity,
            theta_cap: grid.theta_cap,
            diagnostics: SchemeDiagnostics {
                dt,
                cfl_bound: max_cfl_dt,
                required_steps: required,
                convexity_clamps: clamp_count,
            },
        },
    })
}

/// Pointwise policy recomputation from the stored value function: production
/// from the spot optimum, the storage switch from the central-difference
/// gradient comparison (truncated at the stock boundaries), and the position
/// from the clamped quadratic maximizer (zero on the zero-wealth wall).
pub fn extract_policy(
    grid: &ValueGrid,
    t: f64,
    wealth: f64,
    stock: f64,
    demand: f64,
) -> Result<(f64, f64, f64)> {
    let meta = &grid.meta;
    let horizon = *grid.times.last().unwrap();
    let slack = 1e-9;
    if !(0.0 - slack..=horizon + slack).contains(&t)
        || !(-slack..=grid.wealth.last().unwrap() + slack).contains(&wealth)
        || !(-slack..=grid.stock.last().unwrap() + slack).contains(&stock)
        || !(grid.demand[0] - slack..=grid.demand.last().unwrap() + slack).contains(&demand)
    {
        return Err(EngineError::ConstraintViolation(format!(
            "state (t={t}, r={wealth}, x={stock}, d={demand}) outside the grid"
        )));
    }

    let n = nearest(&grid.times, t);
    let i = nearest(&grid.wealth, wealth);
    let j = nearest(&grid.stock, stock);
    let k = nearest(&grid.demand, demand);

    let spot = meta.spot.price(demand);
    let q = meta.producer.optimal_production(spot);

    let s = grid.stride();
    let slice = &grid.values[n * s..(n + 1) * s];
    let (nr, nx, nd) = (grid.wealth.len(), grid.stock.len(), grid.demand.len());
    let at = |ii: usize, jj: usize, kk: usize| slice[(ii * nx + jj) * nd + kk];
    let dr = grid.wealth[1] - grid.wealth[0];
    let dx = grid.stock[1] - grid.stock[0];
    let v_c = at(i, j, k);
    let v_r = if i == 0 {
        (at(1, j, k) - v_c) / dr
    } else if i == nr - 1 {
        (v_c - at(i - 1, j, k)) / dr
    } else {
        (at(i + 1, j, k) - at(i - 1, j, k)) / (2.0 * dr)
    };
    let v_rr = if i == 0 || i == nr - 1 {
        0.0
    } else {
        (at(i + 1, j, k) - 2.0 * v_c + at(i - 1, j, k)) / (dr * dr)
    };
    let v_x = if j == 0 {
        (at(i, 1, k) - v_c) / dx
    } else if j == nx - 1 {
        (v_c - at(i, j - 1, k)) / dx
    } else {
        (at(i, j + 1, k) - at(i, j - 1, k)) / (2.0 * dx)
    };

    let mut u = if spot * v_r > v_x {
        meta.producer.min_storage_rate
    } else {
        meta.producer.max_storage_rate
    };
    let eps = 1e-12 * meta.producer.storage_capacity.max(1.0);
    if stock <= eps {
        u = u.max(0.0);
    }
    if stock >= meta.producer.storage_capacity - eps {
        u = u.min(0.0);
    }

    let theta = if wealth <= 0.0 || i == 0 {
        0.0
    } else {
        let (vol_row, drift_row) = grid.tables_row(n);
        let vol = vol_row[k];
        let mu = drift_row[k];
        if vol <= 0.0 || mu == 0.0 {
            0.0
        } else if v_rr < 0.0 {
            (-(mu / (vol * vol)) * (v_r / v_rr)).clamp(-meta.theta_cap, meta.theta_cap)
        } else if mu * v_r > 0.0 {
            meta.theta_cap
        } else if mu * v_r < 0.0 {
            -meta.theta_cap
        } else {
            0.0
        }
    };

    Ok((q, u, theta))
}

/// Writes the stored policies on the time slice nearest to `t` as CSV with
/// header `r,x,d,q,u,theta`, wealth-major row order.
pub fn write_policy_slice_csv<W: std::io::Write>(
    grid: &ValueGrid,
    t: f64,
    mut w: W,
) -> std::io::Result<()> {
    let n = nearest(&grid.times, t);
    writeln!(w, "r,x,d,q,u,theta")?;
    for (i, &r) in grid.wealth.iter().enumerate() {
        for (j, &x) in grid.stock.iter().enumerate() {
            for (k, &d) in grid.demand.iter().enumerate() {
                let (q, u, theta) = grid.policy(n, i, j, k);
                writeln!(w, "{},{},{},{},{},{}", r, x, d, q, u, theta)?;
            }
        }
    }
    Ok(())
}

/// Feedback policy backed by the solver's stored per-node controls.
pub struct GridPolicy<'a> {
    pub grid: &'a ValueGrid,
}

impl Policy for GridPolicy<'_> {
    fn controls(&self, t: f64, wealth: f64, stock: f64, demand: f64) -> (f64, f64, f64) {
        let g = self.grid;
        let dt = g.dt();
        let m = ((t / dt).floor().max(0.0) as usize).min(g.n_steps().saturating_sub(1));
        let i = nearest(&g.wealth, wealth);
        let j = nearest(&g.stock, stock);
        let k = nearest(&g.demand, demand);
        g.policy(m, i, j, k)
    }
}

/// Monte Carlo estimate of a policy's expected terminal utility.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PolicyValue {
    pub mean_utility: f64,
    pub std_err: f64,
    /// Paths whose wealth went negative (trading frozen from there on).
    pub flagged_paths: usize,
}

/// Simulates the controlled state under the physical measure, accounting
/// wealth with the futures drift/volatility at each step, and returns the
/// sample mean of terminal utility.
pub fn evaluate_policy(
    fm: &FuturesModel,
    spec: &ProducerSpec,
    policy: &dyn Policy,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PolicyValue> {
    fm.validate()?;
    spec.validate()?;
    if n_steps < 2 || n_paths == 0 {
        return Err(EngineError::InvalidParameter(
            "policy evaluation needs n_steps >= 2 and n_paths >= 1".into(),
        ));
    }
    let dt = fm.maturity / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let step_flow = transition_factor(&fm.demand, None, 0.0, dt)?;
    let step_sd = conditional_law(&fm.demand, None, 0.0, dt, 0.0)?.std_dev();

    let results = exec::map_paths(n_paths, seed, |_, rng| {
        let mut d = fm.demand.initial_demand;
        let mut x = spec.initial_stock;
        let mut r = spec.initial_wealth;
        let mut frozen = false;
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let (q_raw, u_raw, theta_raw) = policy.controls(t, r, x, d);
            let q = q_raw.clamp(0.0, spec.max_production);
            let u_req = u_raw.clamp(spec.min_storage_rate, spec.max_storage_rate);
            let theta = if frozen { 0.0 } else { theta_raw };

            let x_next = (x + u_req * dt).clamp(0.0, spec.storage_capacity);
            let u = (x_next - x) / dt;
            let s = fm.spot.price(d);
            let profit = (q - u) * s - spec.cost.production_cost(q) - spec.cost.storage_cost(x);

            let z: f64 = rng.sample(StandardNormal);
            let (pnl, d_next) = if theta != 0.0 {
                let (vol, drift) = fm.vol_and_drift(t, d).expect("t < maturity");
                (
                    theta * (drift * dt + vol * sqrt_dt * z),
                    step_flow * d + step_sd * z,
                )
            } else {
                (0.0, step_flow * d + step_sd * z)
            };
            r += profit * dt + pnl;
            if r < 0.0 {
                frozen = true;
            }
            x = x_next;
            d = d_next;
        }
        (spec.utility(r), frozen)
    });

    let utilities: Vec<f64> = results.iter().map(|r| r.0).collect();
    let flagged = results.iter().filter(|r| r.1).count();
    let (mean_utility, std_err) = exec::mean_std_err(&utilities);
    Ok(PolicyValue {
        mean_utility,
        std_err,
        flagged_paths: flagged,
    })
}
