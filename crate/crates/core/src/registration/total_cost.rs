//! Drift estimation with known orientation. The exponential of the negated
//! total cost is carried as `C + W~(theta)`, a constant plus a Gaussian
//! mixture over the stacked drifts, and is updated multiplicatively each
//! scan by `c_0 + W~_inst(theta)`.

use nalgebra::{DVector, Vector2};

use crate::error::{Error, Result};
use crate::gm::{gm_argmax, gm_product, merge_prune, GaussianMixture, MergePrune};

const SCALE_LOW: f64 = 1e-150;
const SCALE_HIGH: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalCostConfig {
    pub merge: MergePrune,
    /// Gate applied inside the mixture products.
    pub gate: Option<f64>,
    /// Number of highest-weight means used as extra ascent starts.
    pub extra_starts: usize,
}

impl Default for TotalCostConfig {
    fn default() -> Self {
        Self {
            merge: MergePrune::default(),
            gate: Some(25.0),
            extra_starts: 5,
        }
    }
}

impl TotalCostConfig {
    /// No pruning, merging, or gating: every product term is kept.
    pub fn exact() -> Self {
        Self {
            merge: MergePrune::disabled(),
            gate: None,
            extra_starts: 5,
        }
    }
}

/// `exp(-TC) = exp(log_scale) * (c + w_tilde)`.
#[derive(Debug, Clone)]
pub struct TotalCostState {
    pub c: f64,
    pub w_tilde: GaussianMixture,
    pub log_scale: f64,
}

impl Default for TotalCostState {
    fn default() -> Self {
        Self {
            c: 1.0,
            w_tilde: GaussianMixture::empty(),
            log_scale: 0.0,
        }
    }
}

fn reduce(mix: GaussianMixture, cfg: &TotalCostConfig) -> GaussianMixture {
    if mix.is_empty() {
        mix
    } else {
        merge_prune(&mix, &cfg.merge)
    }
}

/// `sum_{n >= 1} c^n W^n` with the powers built by repeated products.
pub fn instantaneous_mixture(coeffs: &[f64], w: &GaussianMixture, cfg: &TotalCostConfig) -> Result<GaussianMixture> {
    let mut out = GaussianMixture::empty();
    if w.is_empty() || coeffs.len() < 2 {
        return Ok(out);
    }
    let mut power = w.clone();
    for (n, &c) in coeffs.iter().enumerate().skip(1) {
        if c > 0.0 {
            out.extend(power.clone().scaled(c));
        }
        if n + 1 < coeffs.len() && coeffs[n + 1..].iter().any(|&c| c > 0.0) {
            power = reduce(gm_product(&power, w, cfg.gate)?, cfg);
            if power.is_empty() {
                break;
            }
        }
    }
    Ok(out)
}

impl TotalCostState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.w_tilde.dim()
    }

    /// One scan: `C' = C c_0`,
    /// `W~' = c_0 W~ + C W~_inst + W~_inst W~`.
    /// `coeffs[n]` is the fused cardinality coefficient `c^n` and `w` is the
    /// reward factor over the stacked drifts.
    pub fn update(&self, coeffs: &[f64], w: &GaussianMixture, cfg: &TotalCostConfig) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument("empty cardinality coefficients".into()));
        }
        if let (Some(a), Some(b)) = (self.w_tilde.dim(), w.dim()) {
            if a != b {
                return Err(Error::Dimension { expected: a, got: b });
            }
        }
        let c0 = coeffs[0];
        let inst = reduce(instantaneous_mixture(coeffs, w, cfg)?, cfg);
        let mut next = self.w_tilde.clone().scaled(c0);
        next.extend(inst.clone().scaled(self.c));
        if !inst.is_empty() && !self.w_tilde.is_empty() {
            next.extend(gm_product(&inst, &self.w_tilde, cfg.gate)?);
        }
        let mut state = Self {
            c: self.c * c0,
            w_tilde: reduce(next, cfg),
            log_scale: self.log_scale,
        };
        state.rescale();
        Ok(state)
    }

    fn rescale(&mut self) {
        let total = self.c + self.w_tilde.total_weight();
        if total > 0.0 && total.is_finite() && !(SCALE_LOW..=SCALE_HIGH).contains(&total) {
            self.c /= total;
            self.w_tilde = std::mem::take(&mut self.w_tilde).scaled(1.0 / total);
            self.log_scale += total.ln();
        }
    }

    /// `exp(-TC(theta))`.
    pub fn exp_neg_cost(&self, theta: &DVector<f64>) -> Result<f64> {
        let w = if self.w_tilde.is_empty() { 0.0 } else { self.w_tilde.eval(theta)? };
        Ok((self.c + w) * self.log_scale.exp())
    }

    /// `TC(theta)`.
    pub fn cost(&self, theta: &DVector<f64>) -> Result<f64> {
        let w = if self.w_tilde.is_empty() { 0.0 } else { self.w_tilde.eval(theta)? };
        Ok(-((self.c + w).ln() + self.log_scale))
    }

    /// Minimizer of the total cost, started from `previous` and the heaviest
    /// means. `None` while the mixture part is empty.
    pub fn estimate(&self, previous: &[Vector2<f64>], cfg: &TotalCostConfig) -> Result<Option<Vec<Vector2<f64>>>> {
        if self.w_tilde.is_empty() {
            return Ok(None);
        }
        let dim = self.w_tilde.dim().unwrap_or(0);
        let mut inits = Vec::new();
        if previous.len() * 2 == dim {
            inits.push(DVector::from_iterator(dim, previous.iter().flat_map(|v| [v.x, v.y])));
        }
        for c in self.w_tilde.sorted_by_weight().into_iter().take(cfg.extra_starts) {
            inits.push(c.gaussian.mean().clone());
        }
        let best = gm_argmax(&self.w_tilde, &inits)?;
        Ok(Some(
            (0..dim / 2)
                .map(|j| Vector2::new(best.point[2 * j], best.point[2 * j + 1]))
                .collect(),
        ))
    }
}

/// Functional form of [`TotalCostState::update`].
pub fn tc_update(
    state: &TotalCostState,
    coeffs: &[f64],
    w: &GaussianMixture,
    cfg: &TotalCostConfig,
) -> Result<TotalCostState> {
    state.update(coeffs, w, cfg)
}
