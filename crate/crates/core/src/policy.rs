//! Control policies: the interface shared by the simulator and the policy
//! evaluator, plus the closed-form baselines.

use crate::market::{ProducerSpec, SpotMap};

/// A feedback control rule over the state `(t, wealth, stock, demand)`.
/// Returns `(production, storage_rate, futures_position)`; the consumers
/// clamp the returned controls to the admissible boxes.
pub trait Policy: Sync {
    fn controls(&self, t: f64, wealth: f64, stock: f64, demand: f64) -> (f64, f64, f64);
}

impl<F> Policy for F
where
    F: Fn(f64, f64, f64, f64) -> (f64, f64, f64) + Sync,
{
    fn controls(&self, t: f64, wealth: f64, stock: f64, demand: f64) -> (f64, f64, f64) {
        self(t, wealth, stock, demand)
    }
}

/// Do nothing: no production, no storage activity, no trading.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn controls(&self, _t: f64, _r: f64, _x: f64, _d: f64) -> (f64, f64, f64) {
        (0.0, 0.0, 0.0)
    }
}

/// Sell-down baseline: produce at the spot optimum and liquidate storage as
/// fast as allowed, never trading futures. This is the storage rule with the
/// value gradient replaced by the instantaneous utility gradient (which
/// carries no continuation value for stock, so any positive spot price says
/// withdraw; a zero spot price says store for free).
pub struct MyopicPolicy<'a> {
    pub spec: &'a ProducerSpec,
    pub spot: &'a SpotMap,
}

impl Policy for MyopicPolicy<'_> {
    fn controls(&self, _t: f64, _r: f64, _x: f64, d: f64) -> (f64, f64, f64) {
        let s = self.spot.price(d);
        let q = self.spec.optimal_production(s);
        let u = if s > 0.0 {
            self.spec.min_storage_rate
        } else {
            self.spec.max_storage_rate
        };
        (q, u, 0.0)
    }
}

/// Fixed controls, mostly for tests and diagnostics.
pub struct ConstantPolicy {
    pub production: f64,
    pub storage_rate: f64,
    pub position: f64,
}

impl Policy for ConstantPolicy {
    fn controls(&self, _t: f64, _r: f64, _x: f64, _d: f64) -> (f64, f64, f64) {
        (self.production, self.storage_rate, self.position)
    }
}
