//! Static market maps: scarcity, marginal cost, the spot price as a function
//! of demand, producer cost curves, and the closed-form optimal production.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Parameters of the demand-to-spot map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotMap {
    /// Price normalization constant.
    pub price_scale: f64,
    /// Total market capacity.
    pub capacity: f64,
    /// Scarcity floor: the capacity gap below which the scarcity factor saturates.
    pub scarcity_floor: f64,
    /// Marginal-cost exponent in (0, 1).
    pub cost_exponent: f64,
    /// Demand level beyond which the marginal cost is capped.
    pub cost_cap: f64,
}

impl SpotMap {
    pub fn validate(&self) -> Result<()> {
        if !self.price_scale.is_finite() || self.price_scale <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "spot.price_scale must be finite and > 0".into(),
            ));
        }
        if !self.capacity.is_finite() || self.capacity <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "spot.capacity must be finite and > 0".into(),
            ));
        }
        if !self.scarcity_floor.is_finite()
            || self.scarcity_floor <= 0.0
            || self.scarcity_floor >= self.capacity
        {
            return Err(EngineError::InvalidParameter(
                "spot.scarcity_floor must satisfy 0 < floor < capacity".into(),
            ));
        }
        if !self.cost_exponent.is_finite() || self.cost_exponent <= 0.0 || self.cost_exponent >= 1.0
        {
            return Err(EngineError::InvalidParameter(
                "spot.cost_exponent must lie in (0, 1)".into(),
            ));
        }
        if !self.cost_cap.is_finite() || self.cost_cap < self.capacity - self.scarcity_floor {
            return Err(EngineError::InvalidParameter(
                "spot.cost_cap must be finite and >= capacity - scarcity_floor".into(),
            ));
        }
        Ok(())
    }

    /// Spot price at demand `d`.
    pub fn price(&self, d: f64) -> f64 {
        self.price_scale
            * marginal_cost(d, self.cost_exponent, self.cost_cap)
            * scarcity(self.capacity - d, self.scarcity_floor)
    }

    /// Hard upper bound of the spot price.
    pub fn price_bound(&self) -> f64 {
        self.price_scale * self.cost_cap.powf(self.cost_exponent) / self.scarcity_floor
    }

    /// Demand levels where the spot map changes branch (kinks).
    pub(crate) fn breakpoints(&self) -> [f64; 3] {
        [0.0, self.capacity - self.scarcity_floor, self.cost_cap]
    }
}

/// Reciprocal capacity-gap amplifier, saturated below `floor`.
pub fn scarcity(gap: f64, floor: f64) -> f64 {
    1.0 / gap.max(floor)
}

/// Power marginal cost: `d^exponent` on `[0, cap]`, capped above, zero below.
pub fn marginal_cost(d: f64, exponent: f64, cap: f64) -> f64 {
    if d <= 0.0 {
        0.0
    } else if d >= cap {
        cap.powf(exponent)
    } else {
        d.powf(exponent)
    }
}

/// Quadratic production and storage cost coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub production_linear: f64,
    pub production_quadratic: f64,
    pub storage_linear: f64,
    pub storage_quadratic: f64,
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.production_linear,
            self.production_quadratic,
            self.storage_linear,
            self.storage_quadratic,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(EngineError::InvalidParameter(
                "cost coefficients must be finite".into(),
            ));
        }
        if self.production_quadratic <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "producer.cost.production_quadratic must be > 0 (strict convexity)".into(),
            ));
        }
        if self.production_linear < 0.0 {
            return Err(EngineError::InvalidParameter(
                "producer.cost.production_linear must be >= 0".into(),
            ));
        }
        if self.storage_linear < 0.0 || self.storage_quadratic < 0.0 {
            return Err(EngineError::InvalidParameter(
                "storage cost coefficients must be >= 0".into(),
            ));
        }
        if self.storage_linear + self.storage_quadratic <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "storage cost must be strictly increasing (storage_linear + storage_quadratic > 0)"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn production_cost(&self, q: f64) -> f64 {
        self.production_linear * q + self.production_quadratic * q * q
    }

    /// Storage holding cost; zero at an empty store by construction.
    pub fn storage_cost(&self, x: f64) -> f64 {
        self.storage_linear * x + self.storage_quadratic * x * x
    }
}

/// Producer capacities, bounds, initial state and preferences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerSpec {
    pub cost: CostSpec,
    /// Production capacity (rate).
    pub max_production: f64,
    /// Fastest withdrawal rate (negative).
    pub min_storage_rate: f64,
    /// Fastest injection rate (positive).
    pub max_storage_rate: f64,
    /// Storage capacity.
    pub storage_capacity: f64,
    /// Initial stock level.
    pub initial_stock: f64,
    /// Initial wealth.
    pub initial_wealth: f64,
    /// Power-utility exponent in (0, 1).
    pub utility_exponent: f64,
}

impl ProducerSpec {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        if !self.max_production.is_finite() || self.max_production < 0.0 {
            return Err(EngineError::InvalidParameter(
                "producer.max_production must be finite and >= 0".into(),
            ));
        }
        if !(self.min_storage_rate <= 0.0 && self.max_storage_rate >= 0.0)
            || !self.min_storage_rate.is_finite()
            || !self.max_storage_rate.is_finite()
        {
            return Err(EngineError::InvalidParameter(
                "storage rates must satisfy min_storage_rate <= 0 <= max_storage_rate".into(),
            ));
        }
        if !self.storage_capacity.is_finite() || self.storage_capacity < 0.0 {
            return Err(EngineError::InvalidParameter(
                "producer.storage_capacity must be finite and >= 0".into(),
            ));
        }
        if !self.initial_stock.is_finite()
            || self.initial_stock < 0.0
            || self.initial_stock > self.storage_capacity
        {
            return Err(EngineError::InvalidParameter(
                "producer.initial_stock must lie in [0, storage_capacity]".into(),
            ));
        }
        if !self.initial_wealth.is_finite() || self.initial_wealth <= 0.0 {
            return Err(EngineError::InvalidParameter(
                "producer.initial_wealth must be finite and > 0".into(),
            ));
        }
        if !self.utility_exponent.is_finite()
            || self.utility_exponent <= 0.0
            || self.utility_exponent >= 1.0
        {
            return Err(EngineError::InvalidParameter(
                "producer.utility_exponent must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Power utility of terminal wealth.
    pub fn utility(&self, wealth: f64) -> f64 {
        wealth.max(0.0).powf(self.utility_exponent)
    }

    /// Production maximizing `q s - c(q)` over `[0, max_production]`: the
    /// inverse marginal cost clamped to the capacity box.
    pub fn optimal_production(&self, spot: f64) -> f64 {
        let interior =
            (spot - self.cost.production_linear) / (2.0 * self.cost.production_quadratic);
        interior.clamp(0.0, self.max_production)
    }

    /// Instantaneous profit `(q - u) s - c(q) - k(x)`.
    pub fn profit_rate(&self, q: f64, u: f64, spot: f64, stock: f64) -> Result<f64> {
        if !(0.0..=self.max_production).contains(&q) {
            return Err(EngineError::ConstraintViolation(format!(
                "production {q} outside [0, {}]",
                self.max_production
            )));
        }
        if !(self.min_storage_rate..=self.max_storage_rate).contains(&u) {
            return Err(EngineError::ConstraintViolation(format!(
                "storage rate {u} outside [{}, {}]",
                self.min_storage_rate, self.max_storage_rate
            )));
        }
        if !(0.0..=self.storage_capacity).contains(&stock) {
            return Err(EngineError::ConstraintViolation(format!(
                "stock {stock} outside [0, {}]",
                self.storage_capacity
            )));
        }
        Ok((q - u) * spot - self.cost.production_cost(q) - self.cost.storage_cost(stock))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn bench_map() -> SpotMap {
        SpotMap {
            price_scale: 1.0,
            capacity: 10.0,
            scarcity_floor: 1.0,
            cost_exponent: 0.5,
            cost_cap: 9.0,
        }
    }

    fn producer(c_lin: f64, c_quad: f64, q_max: f64) -> ProducerSpec {
        ProducerSpec {
            cost: CostSpec {
                production_linear: c_lin,
                production_quadratic: c_quad,
                storage_linear: 0.05,
                storage_quadratic: 0.0,
            },
            max_production: q_max,
            min_storage_rate: -0.5,
            max_storage_rate: 0.5,
            storage_capacity: 1.0,
            initial_stock: 0.5,
            initial_wealth: 1.0,
            utility_exponent: 0.5,
        }
    }

    #[test]
    fn scarcity_branches() {
        let eps = 0.5;
        assert_relative_eq!(scarcity(2.0 * eps, eps), 1.0 / (2.0 * eps));
        assert_relative_eq!(scarcity(-1.0, eps), 2.0);
        assert_relative_eq!(scarcity(eps / 2.0, eps), 1.0 / eps);
        // exact branch identities
        assert_eq!(scarcity(3.7, eps), 1.0 / 3.7);
        assert_eq!(scarcity(0.1, eps), 1.0 / eps);
    }

    #[test]
    fn marginal_cost_branches() {
        assert_eq!(marginal_cost(0.0, 0.5, 9.0), 0.0);
        assert_eq!(marginal_cost(-3.0, 0.5, 9.0), 0.0);
        assert_relative_eq!(marginal_cost(4.0, 0.5, 9.0), 2.0, epsilon = 1e-15);
        assert_relative_eq!(marginal_cost(100.0, 0.5, 9.0), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn spot_price_hand_values() {
        let map = bench_map();
        assert_eq!(map.price(-1.0), 0.0);
        assert_relative_eq!(map.price(4.0), 2.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(map.price(9.5), 3.0, epsilon = 1e-15);
        assert_relative_eq!(map.price_bound(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn spot_price_monotone_bounded_continuous() {
        let map = bench_map();
        let n = 10_000;
        let (lo, hi) = (-map.capacity, 2.0 * map.capacity);
        let mut prev = map.price(lo);
        let mut max_jump = 0.0_f64;
        for i in 1..=n {
            let d = lo + (hi - lo) * i as f64 / n as f64;
            let p = map.price(d);
            assert!(p >= prev - 1e-12, "not monotone at d={d}");
            assert!((0.0..=map.price_bound() + 1e-12).contains(&p));
            max_jump = max_jump.max((p - prev).abs());
            prev = p;
        }
        // continuity: jumps shrink with the grid
        let coarse_jump = {
            let mut mj = 0.0_f64;
            let m = 100;
            let mut prev = map.price(lo);
            for i in 1..=m {
                let d = lo + (hi - lo) * i as f64 / m as f64;
                let p = map.price(d);
                mj = mj.max((p - prev).abs());
                prev = p;
            }
            mj
        };
        assert!(max_jump < coarse_jump / 10.0, "{max_jump} vs {coarse_jump}");
    }

    #[test]
    fn optimal_production_examples() {
        // c(q) = q^2/2
        let spec = producer(0.0, 0.5, 2.0);
        assert_relative_eq!(spec.optimal_production(1.5), 1.5, epsilon = 1e-15);
        assert_relative_eq!(spec.optimal_production(5.0), 2.0, epsilon = 1e-15);
        let with_lin = producer(1.0, 0.5, 2.0);
        assert_eq!(with_lin.optimal_production(0.5), 0.0);
    }

    #[test]
    fn optimal_production_beats_grid_search() {
        let mut rng = crate::exec::path_rng(99, 0);
        for _ in 0..100 {
            let spec = producer(rng.gen::<f64>(), 0.1 + rng.gen::<f64>(), 2.0);
            let s = 5.0 * rng.gen::<f64>();
            let q_star = spec.optimal_production(s);
            let objective = |q: f64| q * s - spec.cost.production_cost(q);
            let best = q_star;
            let mut grid_best = f64::NEG_INFINITY;
            for i in 0..=10_000 {
                let q = spec.max_production * i as f64 / 10_000.0;
                grid_best = grid_best.max(objective(q));
            }
            let scale = grid_best.abs().max(1e-12);
            assert!(
                objective(best) >= grid_best - 1e-6 * scale,
                "grid beat q* by {}",
                grid_best - objective(best)
            );
        }
    }

    #[test]
    fn profit_rate_hand_values() {
        // q=u=0, x=0 -> 0 (k(0) = 0)
        let spec = producer(0.0, 0.5, 2.0);
        assert_eq!(spec.profit_rate(0.0, 0.0, 1.0, 0.0).unwrap(), 0.0);

        // c(q) = q^2, k(x) = x: profit = 2 - 1 - 0.5
        let spec2 = ProducerSpec {
            cost: CostSpec {
                production_linear: 0.0,
                production_quadratic: 1.0,
                storage_linear: 1.0,
                storage_quadratic: 0.0,
            },
            ..producer(0.0, 0.5, 2.0)
        };
        assert_relative_eq!(
            spec2.profit_rate(1.0, 0.0, 2.0, 0.5).unwrap(),
            0.5,
            epsilon = 1e-15
        );

        // pure storage purchase: u=0.5 at s=2, x=0 -> -1 + 0 (within rate bounds)
        assert_relative_eq!(
            spec2.profit_rate(0.0, 0.5, 2.0, 0.0).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn profit_rate_rejects_constraint_violations() {
        let spec = producer(0.0, 0.5, 2.0);
        assert!(spec.profit_rate(3.0, 0.0, 1.0, 0.0).is_err());
        assert!(spec.profit_rate(0.0, 0.9, 1.0, 0.0).is_err());
        assert!(spec.profit_rate(0.0, 0.0, 1.0, 7.0).is_err());
    }

    #[test]
    fn profit_concave_in_production_linear_in_storage_rate() {
        let spec = producer(0.3, 0.8, 2.0);
        let h = 1e-3;
        for q in [0.2, 0.7, 1.4] {
            let f = |q: f64| spec.profit_rate(q, 0.1, 2.0, 0.3).unwrap();
            let second = (f(q + h) - 2.0 * f(q) + f(q - h)) / (h * h);
            assert!(second <= 1e-8, "not concave in q at {q}: {second}");
        }
        for u in [-0.3, 0.0, 0.3] {
            let g = |u: f64| spec.profit_rate(0.5, u, 2.0, 0.3).unwrap();
            let second = (g(u + h) - 2.0 * g(u) + g(u - h)) / (h * h);
            assert!(second.abs() <= 1e-8, "not linear in u at {u}: {second}");
        }
    }

    #[test]
    fn validation_catches_bad_parameters() {
        let mut map = bench_map();
        map.cost_cap = 5.0; // below capacity - floor
        assert!(map.validate().is_err());
        let mut spec = producer(0.0, 0.5, 2.0);
        spec.initial_stock = 2.0;
        assert!(spec.validate().is_err());
        let mut spec2 = producer(0.0, 0.5, 2.0);
        spec2.cost.storage_linear = 0.0;
        assert!(spec2.validate().is_err());
    }

    fn arb_map() -> impl Strategy<Value = SpotMap> {
        (
            0.5..3.0f64,
            2.0..20.0f64,
            0.05..0.9f64,
            0.1..0.9f64,
            0.0..5.0f64,
        )
            .prop_map(|(b, cap, floor_frac, alpha, extra)| {
                let floor = floor_frac * cap;
                SpotMap {
                    price_scale: b,
                    capacity: cap,
                    scarcity_floor: floor,
                    cost_exponent: alpha,
                    cost_cap: cap - floor + extra,
                }
            })
    }

    proptest! {
        #[test]
        fn spot_price_properties(map in arb_map(), d in -30.0..60.0f64, step in 1e-6..1e-3f64) {
            map.validate().unwrap();
            let p = map.price(d);
            prop_assert!(p >= 0.0);
            prop_assert!(p <= map.price_bound() + 1e-12);
            prop_assert!(map.price(d + step) + 1e-12 >= p);
        }
    }
}
