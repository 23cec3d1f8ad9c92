//! Gaussian and Gaussian-mixture primitives.
//!
//! Everything here is a pure function over immutable values. Covariances are
//! factored with Cholesky; a failed factorization gets a single diagonal
//! jitter of `1e-9 * trace / dim` before the operation gives up with
//! [`Error::NumericDomain`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn factor(p: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(p.clone()) {
        return Ok(c);
    }
    let n = p.nrows().max(1);
    let jitter = 1e-9 * p.trace() / n as f64;
    if jitter.is_finite() && jitter > 0.0 {
        let mut q = p.clone();
        for i in 0..p.nrows() {
            q[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(q) {
            return Ok(c);
        }
    }
    Err(Error::NumericDomain(format!(
        "covariance of dimension {} is not positive definite",
        p.nrows()
    )))
}

pub(crate) fn ln_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

pub(crate) fn symmetrize(mut p: DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    p
}

/// `ln(sum(exp(v)))`, returning `-inf` for an empty or all `-inf` input.
pub fn ln_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.into_iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

// ============================================================================
// Gaussian
// ============================================================================

/// A multivariate normal density `G(x; mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    /// Validated constructor: square covariance of matching size, symmetric to
    /// 1e-9 relative, and positive definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        if cov.nrows() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian parameter".into()));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NumericDomain(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(Self {
            mean,
            cov: symmetrize(cov),
        })
    }

    /// Builds without the positive-definiteness check; the covariance is
    /// symmetrized. Used for values produced by our own algebra.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self {
            mean,
            cov: symmetrize(cov),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn ln_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        PreparedGaussian::new(self)?.ln_pdf(x)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.ln_pdf(x)?.exp())
    }
}

/// Standard Gaussian density evaluation.
pub fn eval(g: &Gaussian, x: &DVector<f64>) -> Result<f64> {
    g.pdf(x)
}

/// A Gaussian with its precision and log-normalizer cached for repeated
/// evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PreparedGaussian {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    /// `-0.5 * ln det(2 pi P)`
    pub ln_norm: f64,
}

impl PreparedGaussian {
    pub fn new(g: &Gaussian) -> Result<Self> {
        let ch = factor(&g.cov)?;
        let d = g.dim() as f64;
        let ln_norm = -0.5 * (d * LN_2PI + ln_det(&ch));
        Ok(Self {
            mean: g.mean.clone(),
            precision: symmetrize(ch.inverse()),
            ln_norm,
        })
    }

    pub fn ln_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        let d = x - &self.mean;
        Ok(self.ln_norm - 0.5 * d.dot(&(&self.precision * &d)))
    }
}

/// Product of Gaussian densities: `prod_j G(x; m_j, P_j) = scale * G(x; m, P)`.
///
/// Returns `(ln scale, G(m, P))`. The scale is evaluated in the centered
/// form `sum_j (m_j - m)' P_j^-1 (m_j - m)` of the exponent, which avoids the
/// cancellation between large quadratic forms.
pub fn gaussian_product_ln(factors: &[Gaussian]) -> Result<(f64, Gaussian)> {
    let first = factors
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty factor list".into()))?;
    let dim = first.dim();
    if let Some(bad) = factors.iter().find(|g| g.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.dim(),
        });
    }
    if factors.len() == 1 {
        return Ok((0.0, first.clone()));
    }
    let mut info = DMatrix::zeros(dim, dim);
    let mut info_vec = DVector::zeros(dim);
    let mut precisions = Vec::with_capacity(factors.len());
    let mut ln_det_sum = 0.0;
    for g in factors {
        let ch = factor(&g.cov)?;
        ln_det_sum += dim as f64 * LN_2PI + ln_det(&ch);
        let prec = ch.inverse();
        info_vec += &prec * &g.mean;
        info += &prec;
        precisions.push(prec);
    }
    let info = symmetrize(info);
    let ch = factor(&info)?;
    let cov = symmetrize(ch.inverse());
    let mean = &cov * info_vec;
    let ln_det_bar = dim as f64 * LN_2PI - ln_det(&ch);
    let quad: f64 = factors
        .iter()
        .zip(&precisions)
        .map(|(g, prec)| {
            let d = &g.mean - &mean;
            d.dot(&(prec * &d))
        })
        .sum();
    let ln_scale = 0.5 * ln_det_bar - 0.5 * ln_det_sum - 0.5 * quad;
    Ok((ln_scale, Gaussian::from_parts(mean, cov)))
}

/// Linear-scale variant of [`gaussian_product_ln`].
pub fn gaussian_product(factors: &[Gaussian]) -> Result<(f64, Gaussian)> {
    let (ln_scale, g) = gaussian_product_ln(factors)?;
    Ok((ln_scale.exp(), g))
}

/// Two-factor product `G(x; a) G(x; b) = G(m_a; m_b, P_a + P_b) G(x; m, P)`,
/// computed in Kalman form. Returns `None` when the squared Mahalanobis
/// distance between the means exceeds `gate`.
pub(crate) fn pair_product_ln(
    a: &Gaussian,
    b: &Gaussian,
    gate: Option<f64>,
) -> Result<Option<(f64, Gaussian)>> {
    let s = &a.cov + &b.cov;
    let ch = factor(&s)?;
    let diff = &b.mean - &a.mean;
    let s_inv_diff = ch.solve(&diff);
    let d2 = diff.dot(&s_inv_diff);
    if let Some(g) = gate {
        if d2 > g {
            return Ok(None);
        }
    }
    let ln_scale = -0.5 * (a.dim() as f64 * LN_2PI + ln_det(&ch) + d2);
    let gain = ch.solve(&a.cov).transpose(); // P_a S^-1
    let mean = &a.mean + &a.cov * s_inv_diff;
    let cov = &a.cov - &gain * &a.cov;
    Ok(Some((ln_scale, Gaussian::from_parts(mean, cov))))
}

// ============================================================================
// Gaussian mixture
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub gaussian: Gaussian,
}

impl Component {
    pub fn new(weight: f64, gaussian: Gaussian) -> Self {
        Self { weight, gaussian }
    }
}

/// Weighted sum of Gaussians. Weights are nonnegative; they sum to one when
/// the mixture is used as a spatial PDF, but unnormalized mixtures are fine.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if let Some(first) = components.first() {
            let dim = first.gaussian.dim();
            for c in &components {
                if c.gaussian.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: c.gaussian.dim(),
                    });
                }
                if !(c.weight.is_finite() && c.weight >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "mixture weight {} is not a nonnegative finite number",
                        c.weight
                    )));
                }
            }
        }
        Ok(Self { components })
    }

    pub(crate) fn from_components(components: Vec<Component>) -> Self {
        Self { components }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(g: Gaussian) -> Self {
        Self {
            components: vec![Component::new(1.0, g)],
        }
    }

    pub fn push(&mut self, weight: f64, g: Gaussian) {
        self.components.push(Component::new(weight, g));
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.components.first().map(|c| c.gaussian.dim())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Component> {
        self.components.iter()
    }

    pub fn into_components(self) -> Vec<Component> {
        self.components
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Rescales weights to sum to one. A zero-mass mixture is returned as is.
    pub fn normalized(mut self) -> Self {
        let total = self.total_weight();
        if total > 0.0 && total.is_finite() {
            for c in &mut self.components {
                c.weight /= total;
            }
        }
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for c in &mut self.components {
            c.weight *= factor;
        }
        self
    }

    pub fn extend(&mut self, other: GaussianMixture) {
        self.components.extend(other.components);
    }

    /// Components sorted by decreasing weight; ties keep document order.
    pub fn sorted_by_weight(&self) -> Vec<&Component> {
        let mut v: Vec<&Component> = self.components.iter().collect();
        v.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        v
    }

    /// The `k` highest-weight components, weights unchanged.
    pub fn top(&self, k: usize) -> GaussianMixture {
        Self::from_components(self.sorted_by_weight().into_iter().take(k).cloned().collect())
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.components {
            if c.weight > 0.0 {
                total += c.weight * c.gaussian.pdf(x)?;
            }
        }
        Ok(total)
    }
}

/// Approximates `[s(x)]^omega` by a mixture with covariances `P_k / omega`
/// and weights `alpha_k^omega det(2 pi P_k / omega)^(1/2) / det(2 pi P_k)^(omega/2)`.
///
/// The approximation is exact for single-component mixtures and for the
/// limit of well-separated components.
pub fn gm_power(mix: &GaussianMixture, omega: f64) -> Result<GaussianMixture> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mixture exponent must lie in (0, 1], got {omega}"
        )));
    }
    if omega == 1.0 {
        return Ok(mix.clone());
    }
    let mut out = Vec::with_capacity(mix.len());
    for c in mix.iter() {
        let g = &c.gaussian;
        let d = g.dim() as f64;
        let ln_det_p = ln_det(&factor(g.cov())?);
        let ln_det_2pi_p = d * LN_2PI + ln_det_p;
        let ln_det_2pi_p_omega = d * (LN_2PI - omega.ln()) + ln_det_p;
        let weight = if c.weight > 0.0 {
            (omega * c.weight.ln() + 0.5 * ln_det_2pi_p_omega - 0.5 * omega * ln_det_2pi_p).exp()
        } else {
            0.0
        };
        out.push(Component::new(
            weight,
            Gaussian::from_parts(g.mean().clone(), g.cov() / omega),
        ));
    }
    Ok(GaussianMixture::from_components(out))
}

/// Product of two mixtures, expanded over all component pairs. Pairs whose
/// means are further apart than `gate` (squared Mahalanobis distance under
/// `P_a + P_b`) are skipped.
pub fn gm_product(
    a: &GaussianMixture,
    b: &GaussianMixture,
    gate: Option<f64>,
) -> Result<GaussianMixture> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ca in a.iter().filter(|c| c.weight > 0.0) {
        for cb in b.iter().filter(|c| c.weight > 0.0) {
            if let Some((ln_scale, g)) = pair_product_ln(&ca.gaussian, &cb.gaussian, gate)? {
                let w = ca.weight * cb.weight * ln_scale.exp();
                if w > 0.0 {
                    out.push(Component::new(w, g));
                }
            }
        }
    }
    Ok(GaussianMixture::from_components(out))
}

// ============================================================================
// Merging and pruning
// ============================================================================

/// Mixture reduction settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MergePrune {
    /// Components with weight below `prune_threshold * total_weight` are dropped.
    pub prune_threshold: f64,
    /// Squared Mahalanobis distance under which components are merged.
    pub merge_threshold: f64,
    pub max_components: usize,
}

impl Default for MergePrune {
    fn default() -> Self {
        Self {
            prune_threshold: 1e-5,
            merge_threshold: 4.0,
            max_components: 30,
        }
    }
}

impl MergePrune {
    /// Keeps every component untouched.
    pub fn disabled() -> Self {
        Self {
            prune_threshold: 0.0,
            merge_threshold: -1.0,
            max_components: usize::MAX,
        }
    }
}

fn moment_match(members: &[&Component]) -> Component {
    if members.len() == 1 {
        return members[0].clone();
    }
    let w: f64 = members.iter().map(|c| c.weight).sum();
    let dim = members[0].gaussian.dim();
    let mut mean = DVector::zeros(dim);
    for c in members {
        mean += c.gaussian.mean() * (c.weight / w);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for c in members {
        let d = c.gaussian.mean() - &mean;
        cov += (c.gaussian.cov() + &d * d.transpose()) * (c.weight / w);
    }
    Component::new(w, Gaussian::from_parts(mean, cov))
}

/// Prunes, merges and truncates a mixture. The output is ordered by
/// decreasing weight. Weights are not renormalized.
pub fn merge_prune(mix: &GaussianMixture, cfg: &MergePrune) -> GaussianMixture {
    let total = mix.total_weight();
    if !(total > 0.0) {
        return GaussianMixture::empty();
    }
    let threshold = cfg.prune_threshold * total;
    let mut pool: Vec<(usize, Option<DMatrix<f64>>)> = mix
        .iter()
        .enumerate()
        .filter(|(_, c)| c.weight > 0.0 && c.weight >= threshold)
        .map(|(i, _)| (i, None))
        .collect();
    let comps = mix.components();
    let mut out = Vec::new();
    if cfg.merge_threshold < 0.0 {
        out = pool.iter().map(|(i, _)| comps[*i].clone()).collect();
    } else {
        for entry in &mut pool {
            entry.1 = factor(comps[entry.0].gaussian.cov()).ok().map(|ch| ch.inverse());
        }
        while !pool.is_empty() {
            let lead = pool
                .iter()
                .enumerate()
                .fold(0, |best, (p, (i, _))| {
                    if comps[*i].weight > comps[pool[best].0].weight {
                        p
                    } else {
                        best
                    }
                });
            let lead_mean = comps[pool[lead].0].gaussian.mean().clone();
            let mut members = Vec::new();
            let mut rest = Vec::with_capacity(pool.len());
            for (p, (i, prec)) in pool.into_iter().enumerate() {
                let joins = p == lead
                    || prec.as_ref().is_some_and(|prec| {
                        let d = comps[i].gaussian.mean() - &lead_mean;
                        d.dot(&(prec * &d)) <= cfg.merge_threshold
                    });
                if joins {
                    members.push(&comps[i]);
                } else {
                    rest.push((i, prec));
                }
            }
            pool = rest;
            out.push(moment_match(&members));
        }
    }
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    out.truncate(cfg.max_components);
    GaussianMixture::from_components(out)
}

// ============================================================================
// Global maximization
// ============================================================================

#[derive(Debug, Clone, Copy)]
pub struct ArgmaxOptions {
    pub max_iterations: usize,
    /// Ascent stops once a step is shorter than `step_tolerance * (1 + |x|)`.
    pub step_tolerance: f64,
}

impl Default for ArgmaxOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArgmaxResult {
    pub point: DVector<f64>,
    pub value: f64,
    pub ln_value: f64,
    /// Index of the initial point whose ascent produced `point`.
    pub start: usize,
    pub converged: bool,
    /// No start converged; `point` is the best evaluated point.
    pub degraded: bool,
}

struct PreparedMixture {
    terms: Vec<(f64, PreparedGaussian)>,
}

struct LocalModel {
    ln_value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    /// Fixed-point (mean-shift) target `(sum r P^-1)^-1 sum r P^-1 m`.
    shift_target: Option<DVector<f64>>,
}

impl PreparedMixture {
    fn new(mix: &GaussianMixture) -> Result<Self> {
        let mut terms = Vec::with_capacity(mix.len());
        for c in mix.iter().filter(|c| c.weight > 0.0) {
            let p = PreparedGaussian::new(&c.gaussian)?;
            terms.push((c.weight.ln() + p.ln_norm, p));
        }
        Ok(Self { terms })
    }

    fn ln_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.terms
            .iter()
            .map(|(lw, g)| {
                let d = x - &g.mean;
                lw - 0.5 * d.dot(&(&g.precision * &d))
            })
            .collect()
    }

    fn ln_value(&self, x: &DVector<f64>) -> f64 {
        ln_sum_exp(self.ln_terms(x))
    }

    fn local(&self, x: &DVector<f64>) -> LocalModel {
        let dim = x.len();
        let lt = self.ln_terms(x);
        let lf = ln_sum_exp(lt.iter().copied());
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut a_sum = DMatrix::zeros(dim, dim);
        let mut b_sum = DVector::zeros(dim);
        for ((_, g), l) in self.terms.iter().zip(&lt) {
            let r = (l - lf).exp();
            if r == 0.0 {
                continue;
            }
            let a = -(&g.precision * (x - &g.mean));
            hess += (&a * a.transpose() - &g.precision) * r;
            grad += &a * r;
            a_sum += &g.precision * r;
            b_sum += (&g.precision * &g.mean) * r;
        }
        hess -= &grad * grad.transpose();
        let shift_target = Cholesky::new(symmetrize(a_sum)).map(|ch| ch.solve(&b_sum));
        LocalModel {
            ln_value: lf,
            grad,
            hess,
            shift_target,
        }
    }
}

fn ascend(
    mix: &PreparedMixture,
    start: &DVector<f64>,
    opts: &ArgmaxOptions,
) -> (DVector<f64>, f64, bool) {
    let mut x = start.clone();
    let mut lf = mix.ln_value(&x);
    for _ in 0..opts.max_iterations {
        let model = mix.local(&x);
        if !model.ln_value.is_finite() {
            return (x, lf, false);
        }
        let newton = Cholesky::new(symmetrize(-&model.hess)).map(|ch| ch.solve(&model.grad));
        let shift = model.shift_target.as_ref().map(|t| t - &x);
        let mut moved = false;
        for dir in [newton, shift].into_iter().flatten() {
            if dir.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..40 {
                let step = &dir * alpha;
                let cand = &x + &step;
                let lc = mix.ln_value(&cand);
                if lc >= lf {
                    let small = step.norm() <= opts.step_tolerance * (1.0 + x.norm());
                    x = cand;
                    lf = lc;
                    if small {
                        return (x, lf, true);
                    }
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            // No ascent direction improves the value: x is a stationary point
            // up to floating-point resolution.
            return (x, lf, true);
        }
    }
    (x, lf, false)
}

/// Global maximization of a mixture by local ascent from every initial
/// point: a Newton step on `ln f` when its Hessian is negative definite,
/// otherwise the mean-shift fixed-point step, both with backtracking.
///
/// Equal values (relative 1e-12) resolve to the earliest initial point.
pub fn gm_argmax(mix: &GaussianMixture, inits: &[DVector<f64>]) -> Result<ArgmaxResult> {
    gm_argmax_with(mix, inits, &ArgmaxOptions::default())
}

pub fn gm_argmax_with(
    mix: &GaussianMixture,
    inits: &[DVector<f64>],
    opts: &ArgmaxOptions,
) -> Result<ArgmaxResult> {
    if inits.is_empty() {
        return Err(Error::InvalidArgument("no initial points".into()));
    }
    let dim = mix
        .dim()
        .ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?;
    if let Some(bad) = inits.iter().find(|x| x.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.len(),
        });
    }
    let prepared = PreparedMixture::new(mix)?;
    if prepared.terms.is_empty() {
        return Err(Error::InvalidArgument("mixture has no positive weight".into()));
    }
    let mut best: Option<ArgmaxResult> = None;
    let mut any_converged = false;
    for (start, x0) in inits.iter().enumerate() {
        let (x, lf, converged) = ascend(&prepared, x0, opts);
        any_converged |= converged;
        let better = match &best {
            None => true,
            Some(b) => lf > b.ln_value + 1e-12 * b.ln_value.abs().max(1.0),
        };
        if better {
            best = Some(ArgmaxResult {
                point: x,
                value: lf.exp(),
                ln_value: lf,
                start,
                converged,
                degraded: false,
            });
        }
    }
    let mut best = best.expect("at least one start");
    best.degraded = !any_converged;
    Ok(best)
}
