//! Coordinate changes between node frames, GCI fusion of i.i.d. cluster
//! densities, and the synchronous consensus iteration.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};

use crate::cphd::{wrap_angle, IidClusterDensity};
use crate::error::{Error, Result};
use crate::gm::{gm_power, gm_product, merge_prune, Component, Gaussian, GaussianMixture, MergePrune};

// ============================================================================
// Registration parameters and frame changes
// ============================================================================

/// The 4x4 rotation acting on `[xi, xi_dot, eta, eta_dot]`.
pub fn rotation_matrix(gamma: f64) -> Matrix4<f64> {
    let (s, c) = gamma.sin_cos();
    Matrix4::new(
        c, 0.0, -s, 0.0, //
        0.0, c, 0.0, -s, //
        s, 0.0, c, 0.0, //
        0.0, s, 0.0, c,
    )
}

/// The 2x2 rotation acting on planar positions.
pub fn rotation2(gamma: f64) -> Matrix2<f64> {
    let (s, c) = gamma.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Lifts a planar drift into state space: `theta = T drift`.
pub fn lift(drift: &Vector2<f64>) -> Vector4<f64> {
    Vector4::new(drift[0], 0.0, drift[1], 0.0)
}

/// Drift and orientation of a neighbor frame `j` relative to a frame `i`:
/// `x_i = M(angle) x_j + T drift`. `drift` is the position of node `j` in
/// frame `i`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeRegistration {
    pub drift: Vector2<f64>,
    pub angle: f64,
}

impl EdgeRegistration {
    pub fn new(drift_x: f64, drift_y: f64, angle: f64) -> Self {
        Self {
            drift: Vector2::new(drift_x, drift_y),
            angle: wrap_angle(angle),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.drift == Vector2::zeros() && self.angle == 0.0
    }

    /// The registration of frame `i` relative to frame `j`.
    pub fn inverse(&self) -> Self {
        Self {
            drift: -(rotation2(-self.angle) * self.drift),
            angle: wrap_angle(-self.angle),
        }
    }

    pub fn theta(&self) -> Vector4<f64> {
        lift(&self.drift)
    }

    /// Maps a state from frame `j` into frame `i`.
    pub fn apply(&self, x: &Vector4<f64>) -> Vector4<f64> {
        rotation_matrix(self.angle) * x + self.theta()
    }
}

/// Per-neighbor registration held by one node, keyed by neighbor id.
pub type RegistrationParams = BTreeMap<usize, EdgeRegistration>;

/// Expresses a density given in frame `j` in frame `i`: every component
/// maps as `mean -> M mean + theta`, `cov -> M cov M'`. The PMF is untouched.
///
/// The identity transform is accepted for any state dimension; otherwise
/// the state must be 4-dimensional.
pub fn transform_density(
    d: &IidClusterDensity,
    theta: &Vector4<f64>,
    gamma: f64,
) -> Result<IidClusterDensity> {
    if *theta == Vector4::zeros() && gamma == 0.0 {
        return Ok(d.clone());
    }
    if let Some(dim) = d.spatial.dim() {
        if dim != 4 {
            return Err(Error::Dimension { expected: 4, got: dim });
        }
    }
    let m = rotation_matrix(gamma);
    let md = DMatrix::from_iterator(4, 4, m.iter().copied());
    let th = DVector::from_iterator(4, theta.iter().copied());
    let comps = d
        .spatial
        .iter()
        .map(|c| {
            let g = &c.gaussian;
            Component::new(
                c.weight,
                Gaussian::from_parts(&md * g.mean() + &th, &md * g.cov() * md.transpose()),
            )
        })
        .collect();
    Ok(IidClusterDensity {
        card: d.card.clone(),
        spatial: GaussianMixture::from_components(comps),
    })
}

/// [`transform_density`] driven by an edge registration.
pub fn transform_by(d: &IidClusterDensity, reg: &EdgeRegistration) -> Result<IidClusterDensity> {
    transform_density(d, &reg.theta(), reg.angle)
}

// ============================================================================
// Graph
// ============================================================================

/// Directed sensor graph with row-stochastic consensus weights. Row `i`
/// lists the in-neighbors of `i` (including `i`) with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NetworkGraph {
    /// Validated constructor from explicit weight rows.
    pub fn from_weights(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let violations = Self::check_rows(&rows);
        if let Some(v) = violations.into_iter().next() {
            return Err(Error::InvalidArgument(v));
        }
        let mut rows = rows;
        for r in &mut rows {
            r.sort_by_key(|(j, _)| *j);
        }
        Ok(Self { rows })
    }

    /// Every violation of the weight-row invariants, one message per problem.
    pub fn check_rows(rows: &[Vec<(usize, f64)>]) -> Vec<String> {
        let mut out = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if !row.iter().any(|(j, _)| *j == i) {
                out.push(format!("node {i}: own index missing from its neighborhood"));
            }
            for (j, w) in row {
                if *j >= rows.len() {
                    out.push(format!("node {i}: neighbor {j} does not exist"));
                }
                if !(w.is_finite() && *w >= 0.0) {
                    out.push(format!("node {i}: weight for neighbor {j} is {w}"));
                }
            }
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-12 {
                out.push(format!("node {i}: consensus weights sum to {sum}, expected 1"));
            }
        }
        out
    }

    /// Undirected graph with Metropolis weights
    /// `w_ij = 1 / max(|N_i|, |N_j|)` (neighborhoods include the node) and the
    /// remainder on the diagonal.
    pub fn metropolis(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut nbrs = vec![std::collections::BTreeSet::new(); n_nodes];
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) out of range")));
            }
            if a != b {
                nbrs[a].insert(b);
                nbrs[b].insert(a);
            }
        }
        let size: Vec<usize> = nbrs.iter().map(|s| s.len() + 1).collect();
        let rows = (0..n_nodes)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = nbrs[i]
                    .iter()
                    .map(|&j| (j, 1.0 / size[i].max(size[j]) as f64))
                    .collect();
                let rest = 1.0 - row.iter().map(|(_, w)| w).sum::<f64>();
                row.push((i, rest));
                row.sort_by_key(|(j, _)| *j);
                row
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// In-neighborhood of `i` including `i`, with weights, by neighbor id.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// In-neighbors of `i` excluding `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].iter().map(|(j, _)| *j).filter(move |j| *j != i)
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map_or(0.0, |(_, w)| *w)
    }
}

// ============================================================================
// GCI fusion
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub merge: MergePrune,
    /// Squared-Mahalanobis gate on pairwise component products.
    pub gate: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            merge: MergePrune::default(),
            gate: Some(25.0),
        }
    }
}

fn check_inputs(densities: &[IidClusterDensity], weights: &[f64]) -> Result<usize> {
    if densities.is_empty() || densities.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} densities with {} weights",
            densities.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("fusion weights must be nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("fusion weights sum to {sum}")));
    }
    let n_max = densities[0].n_max();
    if let Some(d) = densities.iter().find(|d| d.n_max() != n_max) {
        return Err(Error::Dimension {
            expected: n_max + 1,
            got: d.card.len(),
        });
    }
    Ok(n_max)
}

/// Weighted geometric mean of the spatial densities, unnormalized: its
/// total weight is the overlap integral `W = int prod s_j^w_j dx`.
fn spatial_overlap(
    densities: &[IidClusterDensity],
    weights: &[f64],
    cfg: &FusionConfig,
) -> Result<GaussianMixture> {
    let mut acc: Option<GaussianMixture> = None;
    for (d, &w) in densities.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let powered = gm_power(&d.spatial, w)?;
        acc = Some(match acc {
            None => powered,
            Some(prev) => {
                let prod = gm_product(&prev, &powered, cfg.gate)?;
                merge_prune(&prod, &intermediate(&cfg.merge))
            }
        });
    }
    Ok(acc.unwrap_or_default())
}

/// Intermediate products keep more components than the final reduction.
fn intermediate(m: &MergePrune) -> MergePrune {
    MergePrune {
        max_components: m.max_components.saturating_mul(4),
        ..*m
    }
}

/// `ln c^n = sum_j w_j ln p_j(n)` with `0 * ln 0 = 0`.
pub(crate) fn ln_card_product(densities: &[IidClusterDensity], weights: &[f64], n: usize) -> f64 {
    densities
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(d, w)| w * d.card[n].ln())
        .sum()
}

/// GCI fusion (the weighted Kullback-Leibler average) of i.i.d. cluster
/// densities expressed in a common frame.
pub fn gci_fuse(
    densities: &[IidClusterDensity],
    weights: &[f64],
    cfg: &FusionConfig,
) -> Result<IidClusterDensity> {
    let n_max = check_inputs(densities, weights)?;
    let overlap = spatial_overlap(densities, weights, cfg)?;
    let ln_w = overlap.total_weight().ln();
    let ln_terms: Vec<f64> = (0..=n_max)
        .map(|n| {
            let lc = ln_card_product(densities, weights, n);
            if n == 0 { lc } else { lc + n as f64 * ln_w }
        })
        .collect();
    let z = crate::gm::ln_sum_exp(ln_terms.iter().copied());
    if !z.is_finite() {
        return Err(Error::FusionDegenerate);
    }
    let card: Vec<f64> = ln_terms.iter().map(|l| (l - z).exp()).collect();
    let spatial = merge_prune(&overlap.normalized(), &cfg.merge).normalized();
    Ok(IidClusterDensity { card, spatial })
}

/// GCI divergence `-ln sum_n c^n W^n`, the minimized weighted average
/// Kullback-Leibler divergence. Returns `+inf` when the sum underflows.
///
/// The exact quantity is nonnegative; the mixture power approximation can
/// overestimate `W` for overlapping components, so the result is clamped
/// at zero.
pub fn gci_divergence(densities: &[IidClusterDensity], weights: &[f64], cfg: &FusionConfig) -> Result<f64> {
    let n_max = check_inputs(densities, weights)?;
    let overlap = spatial_overlap(densities, weights, cfg)?;
    let w = overlap.total_weight();
    let cs: Vec<f64> = (0..=n_max).map(|n| ln_card_product(densities, weights, n).exp()).collect();
    Ok(instantaneous_cost_from(&cs, w).max(0.0))
}

/// `-ln sum_n c_n W^n`; `+inf` if the sum is not positive.
pub fn instantaneous_cost_from(c: &[f64], w: f64) -> f64 {
    let mut total = 0.0;
    let mut wn = 1.0;
    for cn in c {
        total += cn * wn;
        wn *= w;
    }
    if total > 0.0 {
        -total.ln()
    } else {
        f64::INFINITY
    }
}

// ============================================================================
// Consensus
// ============================================================================

/// Runs `l` synchronous consensus iterations. Node `i` maps each neighbor's
/// density into its own frame with `params[i][j]` and fuses with its weight
/// row. Neighbors whose registration is the identity are used as is.
pub fn consensus_round(
    densities: &[IidClusterDensity],
    graph: &NetworkGraph,
    params: &[RegistrationParams],
    l: usize,
    cfg: &FusionConfig,
) -> Result<Vec<IidClusterDensity>> {
    if densities.len() != graph.len() || params.len() != graph.len() {
        return Err(Error::InvalidArgument(format!(
            "{} densities and {} registration sets for {} nodes",
            densities.len(),
            params.len(),
            graph.len()
        )));
    }
    let mut current = densities.to_vec();
    for _ in 0..l {
        let mut next = Vec::with_capacity(current.len());
        for i in 0..graph.len() {
            next.push(fuse_neighborhood(&current, graph, &params[i], i, cfg)?);
        }
        current = next;
    }
    Ok(current)
}

/// One node's regional fusion step.
pub fn fuse_neighborhood(
    current: &[IidClusterDensity],
    graph: &NetworkGraph,
    params: &RegistrationParams,
    i: usize,
    cfg: &FusionConfig,
) -> Result<IidClusterDensity> {
    let row = graph.row(i);
    let mut inputs = Vec::with_capacity(row.len());
    let mut weights = Vec::with_capacity(row.len());
    for &(j, w) in row {
        let d = if j == i {
            current[j].clone()
        } else {
            let reg = params.get(&j).ok_or_else(|| {
                Error::InvalidArgument(format!("node {i} has no registration for neighbor {j}"))
            })?;
            if reg.is_identity() {
                current[j].clone()
            } else {
                transform_by(&current[j], reg)?
            }
        };
        inputs.push(d);
        weights.push(w);
    }
    gci_fuse(&inputs, &weights, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_basics() {
        assert_eq!(rotation_matrix(0.0), Matrix4::identity());
        let q = rotation_matrix(std::f64::consts::FRAC_PI_2);
        let v = q * Vector4::new(1.0, 0.0, 0.0, 0.0);
        assert!((v - Vector4::new(0.0, 0.0, 1.0, 0.0)).amax() < 1e-15);
        let g = 0.731;
        assert!((rotation_matrix(g) * rotation_matrix(-g) - Matrix4::identity()).amax() < 1e-12);
        assert!((rotation_matrix(g).determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_satisfies_antisymmetry() {
        let r = EdgeRegistration::new(120.0, -40.0, 0.4);
        let inv = r.inverse();
        assert!((inv.angle + 0.4).abs() < 1e-15);
        let back = -(rotation2(r.angle) * inv.drift);
        assert!((back - r.drift).amax() < 1e-12);
        let x = Vector4::new(5.0, 1.0, -7.0, 2.0);
        assert!((inv.apply(&r.apply(&x)) - x).amax() < 1e-12);
    }

    #[test]
    fn metropolis_rows_sum_to_one() {
        let g = NetworkGraph::metropolis(3, &[(0, 1), (1, 2)]).unwrap();
        for i in 0..3 {
            let s: f64 = g.row(i).iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((g.weight(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.weight(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.weight(0, 2), 0.0);
    }

    #[test]
    fn check_rows_names_node() {
        let v = NetworkGraph::check_rows(&[vec![(0, 0.5), (1, 0.4)], vec![(1, 1.0)]]);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("node 0"));
    }

    #[test]
    fn instantaneous_cost_trivial() {
        assert_eq!(instantaneous_cost_from(&[1.0, 0.0, 0.0], 0.3), -0.0);
        assert_eq!(instantaneous_cost_from(&[0.0, 0.0], 0.0), f64::INFINITY);
    }
}
