//! Bookkeeping of registration hypotheses across time. Each hypothesis
//! accumulates the reward of every instantaneous estimate that falls inside
//! its gate; the one with the largest accumulated reward is reported.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::cphd::wrap_angle;
use crate::fusion::EdgeRegistration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConfig {
    /// Per-edge drift gate in metres; scaled by `sqrt(n)` for `n` neighbors.
    pub drift_gate: f64,
    /// Per-edge angle gate in radians; scaled by `sqrt(n)`.
    pub angle_gate: f64,
    pub max_hypotheses: usize,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self {
            drift_gate: 50.0,
            angle_gate: 5f64.to_radians(),
            max_hypotheses: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// One registration per neighbor, in neighbor order.
    pub regs: Vec<EdgeRegistration>,
    /// Accumulated reward.
    pub kappa: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HypothesisSet {
    pub items: Vec<Hypothesis>,
}

fn within_gate(a: &[EdgeRegistration], b: &[EdgeRegistration], cfg: &HypothesisConfig) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let scale = (a.len() as f64).sqrt();
    let dd: f64 = a.iter().zip(b).map(|(x, y)| (x.drift - y.drift).norm_squared()).sum();
    let da: f64 = a.iter().zip(b).map(|(x, y)| wrap_angle(x.angle - y.angle).powi(2)).sum();
    dd.sqrt() <= cfg.drift_gate * scale && da.sqrt() <= cfg.angle_gate * scale
}

impl HypothesisSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Index of the largest accumulated reward; the earliest wins ties.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (h, item) in self.items.iter().enumerate() {
            if best.is_none_or(|b| item.kappa > self.items[b].kappa) {
                best = Some(h);
            }
        }
        best
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.best_index().map(|h| &self.items[h])
    }

    /// Folds one instantaneous estimate with reward `reward` into the set.
    /// Every hypothesis inside the gate moves toward the estimate by
    /// `reward / (kappa + reward)` and gains `reward`; with no gated
    /// hypothesis the estimate starts a new one. Returns the best index.
    pub fn update(&mut self, estimate: &[EdgeRegistration], reward: f64, cfg: &HypothesisConfig) -> usize {
        let reward = if reward.is_finite() { reward.max(0.0) } else { 0.0 };
        let mut matched = false;
        for h in &mut self.items {
            if !within_gate(estimate, &h.regs, cfg) {
                continue;
            }
            matched = true;
            let total = h.kappa + reward;
            if total > 0.0 {
                let k = reward / total;
                for (cur, new) in h.regs.iter_mut().zip(estimate) {
                    let drift: Vector2<f64> = cur.drift + (new.drift - cur.drift) * k;
                    let angle = wrap_angle(cur.angle + k * wrap_angle(new.angle - cur.angle));
                    *cur = EdgeRegistration { drift, angle };
                }
            }
            h.kappa = total;
        }
        if !matched {
            self.items.push(Hypothesis {
                regs: estimate.to_vec(),
                kappa: reward,
            });
        }
        while self.items.len() > cfg.max_hypotheses.max(1) {
            let mut worst = 0;
            for (h, item) in self.items.iter().enumerate() {
                if item.kappa <= self.items[worst].kappa {
                    worst = h;
                }
            }
            self.items.remove(worst);
        }
        self.best_index().unwrap_or(0)
    }
}

/// Functional form of [`HypothesisSet::update`].
pub fn hypothesis_update(
    set: &HypothesisSet,
    estimate: &[EdgeRegistration],
    reward: f64,
    cfg: &HypothesisConfig,
) -> (HypothesisSet, usize) {
    let mut next = set.clone();
    let best = next.update(estimate, reward, cfg);
    (next, best)
}
