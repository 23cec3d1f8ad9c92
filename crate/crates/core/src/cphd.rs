//! Local GM-CPHD filtering: i.i.d. cluster densities, prediction, correction
//! and state extraction.
//!
//! The spatial density is kept normalized; the cardinality PMF is truncated
//! at `N_max`. The correction follows the Gaussian-mixture CPHD recursion
//! with elementary symmetric functions evaluated in the log domain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gm::{
    factor, ln_det, ln_sum_exp, merge_prune, Component, Gaussian, GaussianMixture, MergePrune,
    LN_2PI,
};

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

// ============================================================================
// Densities
// ============================================================================

/// Cardinality PMF plus a normalized spatial mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct IidClusterDensity {
    pub card: Vec<f64>,
    pub spatial: GaussianMixture,
}

impl IidClusterDensity {
    /// Validated constructor: PMF entries nonnegative and summing to one,
    /// spatial weights summing to one (both within 1e-9). An empty spatial
    /// mixture is accepted only with `card[0] == 1`.
    pub fn new(card: Vec<f64>, spatial: GaussianMixture) -> Result<Self> {
        if card.is_empty() {
            return Err(Error::InvalidArgument("empty cardinality PMF".into()));
        }
        if card.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("PMF entries must be nonnegative".into()));
        }
        let total: f64 = card.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("PMF sums to {total}")));
        }
        let w = spatial.total_weight();
        if !spatial.is_empty() && (w - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("spatial weights sum to {w}")));
        }
        if spatial.is_empty() && card[0] < 1.0 - 1e-9 {
            return Err(Error::InvalidArgument(
                "empty spatial density requires p(0) = 1".into(),
            ));
        }
        Ok(Self { card, spatial })
    }

    /// A density certain to contain no targets.
    pub fn empty(n_max: usize) -> Self {
        let mut card = vec![0.0; n_max + 1];
        card[0] = 1.0;
        Self {
            card,
            spatial: GaussianMixture::empty(),
        }
    }

    pub fn n_max(&self) -> usize {
        self.card.len() - 1
    }

    pub fn mean_cardinality(&self) -> f64 {
        self.card.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Argmax of the PMF, smallest index on ties.
    pub fn map_cardinality(&self) -> usize {
        let mut best = 0;
        for (n, p) in self.card.iter().enumerate() {
            if *p > self.card[best] {
                best = n;
            }
        }
        best
    }

    pub fn to_record(&self) -> DensityRecord {
        DensityRecord {
            card_pmf: self.card.clone(),
            components: self
                .spatial
                .iter()
                .map(|c| ComponentRecord {
                    weight: c.weight,
                    mean: c.gaussian.mean().iter().copied().collect(),
                    cov_row_major: c.gaussian.cov().transpose().iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &DensityRecord) -> Result<Self> {
        let mut comps = Vec::with_capacity(rec.components.len());
        for c in &rec.components {
            let d = c.mean.len();
            if c.cov_row_major.len() != d * d {
                return Err(Error::Dimension {
                    expected: d * d,
                    got: c.cov_row_major.len(),
                });
            }
            comps.push(Component::new(
                c.weight,
                Gaussian::new(
                    DVector::from_vec(c.mean.clone()),
                    DMatrix::from_row_slice(d, d, &c.cov_row_major),
                )?,
            ));
        }
        Self::new(rec.card_pmf.clone(), GaussianMixture::new(comps)?)
    }
}

/// Structured-text form of a density, for debugging and exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub card_pmf: Vec<f64>,
    pub components: Vec<ComponentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov_row_major: Vec<f64>,
}

/// Truncated Poisson PMF over `0..=n_max`, renormalized.
pub fn truncated_poisson(mean: f64, n_max: usize) -> Vec<f64> {
    let mut ln_p: Vec<f64> = Vec::with_capacity(n_max + 1);
    let mut ln_fact = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        ln_p.push(if mean > 0.0 {
            n as f64 * mean.ln() - ln_fact
        } else if n == 0 {
            0.0
        } else {
            f64::NEG_INFINITY
        });
    }
    let z = ln_sum_exp(ln_p.iter().copied());
    ln_p.iter().map(|l| (l - z).exp()).collect()
}

// ============================================================================
// Models
// ============================================================================

/// New-born target RFS: a birth cardinality PMF and a birth spatial mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthModel {
    pub card: Vec<f64>,
    pub spatial: GaussianMixture,
}

impl BirthModel {
    pub fn none() -> Self {
        Self {
            card: vec![1.0],
            spatial: GaussianMixture::empty(),
        }
    }

    /// Equal-weight birth zones with a truncated Poisson birth count.
    pub fn zones(zones: Vec<Gaussian>, mean_births: f64, n_max: usize) -> Self {
        let k = zones.len();
        let spatial = GaussianMixture::from_components(
            zones
                .into_iter()
                .map(|g| Component::new(1.0 / k as f64, g))
                .collect(),
        );
        let card = if k == 0 {
            vec![1.0]
        } else {
            truncated_poisson(mean_births, n_max)
        };
        Self { card, spatial }
    }

    pub fn mean_cardinality(&self) -> f64 {
        self.card.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub survival: f64,
    pub birth: BirthModel,
}

impl MotionModel {
    /// Nearly-constant-velocity model on `[xi, xi_dot, eta, eta_dot]` driven
    /// by white acceleration noise of standard deviation `sigma_a`.
    pub fn white_noise_acceleration(dt: f64, sigma_a: f64, survival: f64, birth: BirthModel) -> Self {
        let mut f = DMatrix::identity(4, 4);
        f[(0, 1)] = dt;
        f[(2, 3)] = dt;
        let s2 = sigma_a * sigma_a;
        let mut q = DMatrix::zeros(4, 4);
        for b in [0, 2] {
            q[(b, b)] = s2 * dt.powi(4) / 4.0;
            q[(b, b + 1)] = s2 * dt.powi(3) / 2.0;
            q[(b + 1, b)] = s2 * dt.powi(3) / 2.0;
            q[(b + 1, b + 1)] = s2 * dt * dt;
        }
        Self {
            f,
            q,
            survival,
            birth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SensorKind {
    /// `z = H x + v`
    Linear { h: DMatrix<f64> },
    /// `z = [range, bearing]` of the position `(xi, eta) = (x[0], x[2])`,
    /// bearing measured counterclockwise from the `xi` axis.
    RangeBearing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub kind: SensorKind,
    pub r: DMatrix<f64>,
    pub detection: f64,
    /// Expected clutter count per scan.
    pub clutter_rate: f64,
    /// Area (or volume) of the region clutter is uniform over.
    pub clutter_area: f64,
}

impl SensorModel {
    pub fn range_bearing(
        sigma_r: f64,
        sigma_bearing: f64,
        detection: f64,
        clutter_rate: f64,
        clutter_area: f64,
    ) -> Self {
        Self {
            kind: SensorKind::RangeBearing,
            r: DMatrix::from_diagonal(&DVector::from_vec(vec![
                sigma_r * sigma_r,
                sigma_bearing * sigma_bearing,
            ])),
            detection,
            clutter_rate,
            clutter_area,
        }
    }

    pub fn measurement_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Noise-free measurement of a state.
    pub fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            SensorKind::Linear { h } => h * x,
            SensorKind::RangeBearing => range_bearing(x),
        }
    }

    /// Clutter intensity `lambda_c * c(z)`. Clutter is uniform in the plane,
    /// so in range-bearing space its density carries the polar Jacobian `r`.
    pub fn clutter_intensity(&self, z: &DVector<f64>) -> f64 {
        let density = match self.kind {
            SensorKind::Linear { .. } => 1.0 / self.clutter_area,
            SensorKind::RangeBearing => z[0].max(0.0) / self.clutter_area,
        };
        self.clutter_rate * density
    }

    fn linearize(&self, mean: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        match &self.kind {
            SensorKind::Linear { h } => (h * mean, h.clone()),
            SensorKind::RangeBearing => {
                let (xi, eta) = (mean[0], mean[2]);
                let r2 = (xi * xi + eta * eta).max(1e-12);
                let r = r2.sqrt();
                let mut h = DMatrix::zeros(2, mean.len());
                h[(0, 0)] = xi / r;
                h[(0, 2)] = eta / r;
                h[(1, 0)] = -eta / r2;
                h[(1, 2)] = xi / r2;
                (range_bearing(mean), h)
            }
        }
    }

    fn innovation(&self, z: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        let mut nu = z - predicted;
        if matches!(self.kind, SensorKind::RangeBearing) {
            nu[1] = wrap_angle(nu[1]);
        }
        nu
    }
}

pub fn range_bearing(x: &DVector<f64>) -> DVector<f64> {
    let (xi, eta) = (x[0], x[2]);
    DVector::from_vec(vec![(xi * xi + eta * eta).sqrt(), wrap_angle(eta.atan2(xi))])
}

/// Filter settings shared by prediction and correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CphdConfig {
    pub merge: MergePrune,
    /// Squared-Mahalanobis innovation gate; `None` keeps every pair.
    pub gate: Option<f64>,
}

impl Default for CphdConfig {
    fn default() -> Self {
        Self {
            merge: MergePrune::default(),
            gate: Some(25.0),
        }
    }
}

// ============================================================================
// Prediction
// ============================================================================

fn ln_binomial_table(n_max: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        t[n] = t[n - 1] + (n as f64).ln();
    }
    t
}

/// CPHD prediction: Kalman-propagated survivors plus birth components; the
/// cardinality PMF is the binomially thinned prior convolved with the birth
/// PMF, truncated at `N_max`.
pub fn cphd_predict(prior: &IidClusterDensity, motion: &MotionModel) -> Result<IidClusterDensity> {
    let n_max = prior.n_max();
    let ps = motion.survival;
    if !(0.0..=1.0).contains(&ps) {
        return Err(Error::InvalidArgument(format!("survival probability {ps}")));
    }
    let lf = ln_binomial_table(n_max);
    let mut survived = vec![0.0; n_max + 1];
    for (j, pj) in prior.card.iter().enumerate() {
        if *pj == 0.0 {
            continue;
        }
        for (n, s) in survived.iter_mut().enumerate().take(j + 1) {
            let thin = if ps == 1.0 {
                if n == j { 1.0 } else { 0.0 }
            } else if ps == 0.0 {
                if n == 0 { 1.0 } else { 0.0 }
            } else {
                (lf[j] - lf[n] - lf[j - n] + n as f64 * ps.ln() + (j - n) as f64 * (1.0 - ps).ln())
                    .exp()
            };
            *s += thin * pj;
        }
    }
    let mut card = vec![0.0; n_max + 1];
    for (m, sm) in survived.iter().enumerate() {
        for (b, pb) in motion.birth.card.iter().enumerate() {
            if m + b <= n_max {
                card[m + b] += sm * pb;
            }
        }
    }
    let total: f64 = card.iter().sum();
    for p in &mut card {
        *p /= total;
    }

    let n_surv = ps * prior.mean_cardinality();
    let n_birth = motion.birth.mean_cardinality();
    let (w_surv, w_birth) = if n_surv + n_birth > 0.0 {
        (n_surv / (n_surv + n_birth), n_birth / (n_surv + n_birth))
    } else if !prior.spatial.is_empty() {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let ft = motion.f.transpose();
    let mut comps = Vec::with_capacity(prior.spatial.len() + motion.birth.spatial.len());
    if w_surv > 0.0 {
        for c in prior.spatial.iter() {
            let g = &c.gaussian;
            comps.push(Component::new(
                c.weight * w_surv,
                Gaussian::from_parts(&motion.f * g.mean(), &motion.f * g.cov() * &ft + &motion.q),
            ));
        }
    }
    if w_birth > 0.0 {
        let bw = motion.birth.spatial.total_weight();
        for c in motion.birth.spatial.iter() {
            comps.push(Component::new(c.weight / bw * w_birth, c.gaussian.clone()));
        }
    }
    Ok(IidClusterDensity {
        card,
        spatial: GaussianMixture::from_components(comps).normalized(),
    })
}

// ============================================================================
// Correction
// ============================================================================

/// `ln e_j(values)` for `j = 0..=max_order`, where `ln_values` are the logs of
/// the (nonnegative) arguments.
fn ln_esf(ln_values: &[f64], max_order: usize) -> Vec<f64> {
    let m = ln_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let order = max_order.min(ln_values.len());
    let mut e = vec![0.0; order + 1];
    e[0] = 1.0;
    if m.is_finite() {
        for (count, lv) in ln_values.iter().enumerate() {
            let v = (lv - m).exp();
            let top = order.min(count + 1);
            for j in (1..=top).rev() {
                e[j] += v * e[j - 1];
            }
        }
    }
    let mut out: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(j, ej)| if j == 0 { 0.0 } else { j as f64 * m + ej.ln() })
        .collect();
    out.resize(max_order + 1, f64::NEG_INFINITY);
    out
}

/// `ln P^n_j = ln n! / (n-j)!`
fn ln_perm(lf: &[f64], n: usize, j: usize) -> f64 {
    if j > n {
        f64::NEG_INFINITY
    } else {
        lf[n] - lf[n - j]
    }
}

fn ln_missed_pow(ln_q: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * ln_q
    }
}

/// `ln Y^u(n)` for `n = 0..=n_max`, summing `P^n_{j+u} (1-pd)^{n-j-u} e_j`
/// over the admissible `j`.
fn ln_upsilon(lf: &[f64], ln_e: &[f64], js: &[usize], u: usize, ln_q: f64, n_max: usize) -> Vec<f64> {
    (0..=n_max)
        .map(|n| {
            ln_sum_exp(js.iter().filter(|&&j| j + u <= n).map(|&j| {
                ln_perm(lf, n, j + u) + ln_missed_pow(ln_q, n - j - u) + ln_e[j]
            }))
        })
        .collect()
}

struct Linearized {
    z_hat: DVector<f64>,
    gain: DMatrix<f64>,
    cov_upd: DMatrix<f64>,
    s_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ln_norm: f64,
}

/// CPHD correction with a scan of measurements.
pub fn cphd_correct(
    predicted: &IidClusterDensity,
    measurements: &[DVector<f64>],
    sensor: &SensorModel,
    cfg: &CphdConfig,
) -> Result<IidClusterDensity> {
    let mdim = sensor.measurement_dim();
    if let Some(bad) = measurements.iter().find(|z| z.len() != mdim) {
        return Err(Error::InvalidArgument(format!(
            "measurement of dimension {} for a sensor of dimension {mdim}",
            bad.len()
        )));
    }
    let pd = sensor.detection;
    if !(0.0..=1.0).contains(&pd) {
        return Err(Error::InvalidArgument(format!("detection probability {pd}")));
    }
    if pd == 0.0 {
        return Ok(predicted.clone());
    }
    let n_max = predicted.n_max();
    let lf = ln_binomial_table(n_max.max(1) + 1);
    let ln_q = (1.0 - pd).ln();
    let ln_pd = pd.ln();
    let poisson_clutter = sensor.clutter_rate > 0.0;

    // Per-component linearization.
    let comps = predicted.spatial.components();
    let mut lin = Vec::with_capacity(comps.len());
    for c in comps {
        let g = &c.gaussian;
        let (z_hat, h) = sensor.linearize(g.mean());
        let ph = g.cov() * h.transpose();
        let s = crate::gm::symmetrize(&h * &ph + &sensor.r);
        let s_chol = factor(&s)?;
        let gain = s_chol.solve(&ph.transpose()).transpose();
        let cov_upd = g.cov() - &gain * &h * g.cov();
        let ln_norm = -0.5 * (mdim as f64 * LN_2PI + ln_det(&s_chol));
        lin.push(Linearized {
            z_hat,
            gain,
            cov_upd,
            s_chol,
            ln_norm,
        });
    }

    // ln q_k(z) for every gated pair, and ln Lambda_z.
    let nz = measurements.len();
    let mut pairs: Vec<Vec<(usize, f64, DVector<f64>)>> = vec![Vec::new(); nz];
    let mut ln_lambda = vec![f64::NEG_INFINITY; nz];
    let mut ln_kappa = vec![0.0; nz];
    for (zi, z) in measurements.iter().enumerate() {
        if poisson_clutter {
            ln_kappa[zi] = sensor.clutter_intensity(z).ln();
        }
        let mut terms = Vec::new();
        for (k, (c, l)) in comps.iter().zip(&lin).enumerate() {
            if c.weight <= 0.0 {
                continue;
            }
            let nu = sensor.innovation(z, &l.z_hat);
            let d2 = nu.dot(&l.s_chol.solve(&nu));
            if cfg.gate.is_some_and(|g| d2 > g) {
                continue;
            }
            let ln_qz = l.ln_norm - 0.5 * d2;
            terms.push(c.weight.ln() + ln_qz);
            pairs[zi].push((k, ln_qz, nu));
        }
        ln_lambda[zi] = ln_pd + ln_sum_exp(terms.iter().copied()) - ln_kappa[zi];
    }

    let ln_e = ln_esf(&ln_lambda, n_max);
    let all_js: Vec<usize> = if poisson_clutter {
        (0..=nz.min(n_max)).collect()
    } else if nz <= n_max {
        vec![nz]
    } else {
        Vec::new()
    };
    let ln_u0 = ln_upsilon(&lf, &ln_e, &all_js, 0, ln_q, n_max);
    let ln_u1 = ln_upsilon(&lf, &ln_e, &all_js, 1, ln_q, n_max);
    let ln_p: Vec<f64> = predicted.card.iter().map(|p| p.ln()).collect();
    let inner = |u: &[f64]| ln_sum_exp(u.iter().zip(&ln_p).map(|(a, b)| a + b));
    let ln_norm = inner(&ln_u0);
    if !ln_norm.is_finite() {
        // The scan has zero likelihood under the model (e.g. more detections
        // than N_max with no clutter); keep the prediction.
        return Ok(predicted.clone());
    }

    let mut out = Vec::new();
    if pd < 1.0 {
        let ln_missed = inner(&ln_u1) - ln_norm + ln_q;
        for c in comps {
            out.push(Component::new(c.weight * ln_missed.exp(), c.gaussian.clone()));
        }
    }
    let mut detections = false;
    for (zi, zpairs) in pairs.iter().enumerate() {
        if zpairs.is_empty() {
            continue;
        }
        let others: Vec<f64> = ln_lambda
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != zi)
            .map(|(_, v)| *v)
            .collect();
        let ln_e_z = ln_esf(&others, n_max);
        let js: Vec<usize> = if poisson_clutter {
            (0..=(nz - 1).min(n_max)).collect()
        } else if nz - 1 <= n_max {
            vec![nz - 1]
        } else {
            Vec::new()
        };
        let ln_u1z = ln_upsilon(&lf, &ln_e_z, &js, 1, ln_q, n_max);
        let ln_factor = inner(&ln_u1z) - ln_norm + ln_pd - ln_kappa[zi];
        for (k, ln_qz, nu) in zpairs {
            let w = (comps[*k].weight.ln() + ln_qz + ln_factor).exp();
            if w > 0.0 {
                let l = &lin[*k];
                let mean = comps[*k].gaussian.mean() + &l.gain * nu;
                out.push(Component::new(w, Gaussian::from_parts(mean, l.cov_upd.clone())));
                detections = true;
            }
        }
    }

    let card: Vec<f64> = ln_u0
        .iter()
        .zip(&ln_p)
        .map(|(u, p)| (u + p - ln_norm).exp())
        .collect();
    let total: f64 = card.iter().sum();
    let card = card.into_iter().map(|p| p / total).collect();

    let mut spatial = GaussianMixture::from_components(out).normalized();
    if detections {
        spatial = merge_prune(&spatial, &cfg.merge).normalized();
    }
    Ok(IidClusterDensity { card, spatial })
}

/// MAP cardinality estimate followed by the means of that many
/// highest-weight spatial components.
pub fn extract_states(density: &IidClusterDensity) -> Vec<DVector<f64>> {
    let n = density.map_cardinality();
    density
        .spatial
        .sorted_by_weight()
        .into_iter()
        .take(n)
        .map(|c| c.gaussian.mean().clone())
        .collect()
}
