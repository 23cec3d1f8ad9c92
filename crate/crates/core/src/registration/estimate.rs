//! Instantaneous registration estimate: the maximizer of the reward factor
//! over drifts and angles, found by ascending from triplet-based starts.

use nalgebra::{DMatrix, DVector, Vector2};

use super::irf::{IrfEval, IrfMixture};
use super::triplet::best_ordering;
use crate::error::{Error, Result};
use crate::fusion::EdgeRegistration;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConfig {
    /// Own components from which local triples are formed.
    pub own_top: usize,
    /// Neighbor components searched for the matching triple.
    pub neighbor_top: usize,
    /// Distinct starts refined by Newton ascent.
    pub refine_starts: usize,
    pub max_iterations: usize,
    /// Angle step for differencing the analytic gradient.
    pub angle_step: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            own_top: 6,
            neighbor_top: 8,
            refine_starts: 2,
            max_iterations: 50,
            angle_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstantaneousEstimate {
    /// One registration per neighbor.
    pub regs: Vec<EdgeRegistration>,
    pub ln_reward: f64,
    /// `W` at `regs`.
    pub reward: f64,
    /// Number of starting points scored.
    pub initial_points: usize,
    /// Largest `ln W` among the starting points.
    pub best_initial_ln_reward: f64,
    pub converged: bool,
}

fn params_of(regs: &[EdgeRegistration]) -> DVector<f64> {
    let n = regs.len();
    let mut p = DVector::zeros(3 * n);
    for (j, r) in regs.iter().enumerate() {
        p[2 * j] = r.drift.x;
        p[2 * j + 1] = r.drift.y;
        p[2 * n + j] = r.angle;
    }
    p
}

fn regs_of(p: &DVector<f64>) -> Vec<EdgeRegistration> {
    let n = p.len() / 3;
    (0..n)
        .map(|j| EdgeRegistration {
            drift: Vector2::new(p[2 * j], p[2 * j + 1]),
            angle: p[2 * n + j],
        })
        .collect()
}

fn close(a: &[EdgeRegistration], b: &[EdgeRegistration]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x.drift - y.drift).norm() < 1.0 && crate::cphd::wrap_angle(x.angle - y.angle).abs() < 1e-3)
}

fn combinations3(k: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..k).flat_map(move |a| (a + 1..k).flat_map(move |b| (b + 1..k).map(move |c| [a, b, c])))
}

/// Starting points from triples of the heaviest own components matched to
/// the best-fitting triple of each neighbor.
pub fn candidate_points(irf: &IrfMixture, cfg: &EstimateConfig) -> Result<Vec<Vec<EdgeRegistration>>> {
    let counts = irf.component_counts();
    if let Some(m) = counts.iter().position(|&c| c < 3) {
        return Err(Error::RegistrationUnavailable(format!(
            "neighborhood slot {m} has {} components, 3 needed",
            counts[m]
        )));
    }
    let n = irf.neighbor_count();
    let nbr_triples: Vec<Vec<([usize; 3], [Vector2<f64>; 3])>> = (1..=n)
        .map(|j| {
            combinations3(counts[j].min(cfg.neighbor_top))
                .map(|t| (t, t.map(|k| irf.position(j, k))))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for own_t in combinations3(counts[0].min(cfg.own_top)) {
        let own = own_t.map(|k| irf.position(0, k));
        let mut regs = Vec::with_capacity(n);
        for triples in &nbr_triples {
            let mut best: Option<(f64, EdgeRegistration)> = None;
            for (_, pts) in triples {
                if let Some((_, fit)) = best_ordering(&own, pts) {
                    if best.as_ref().is_none_or(|(r, _)| fit.residual < *r) {
                        best = Some((fit.residual, fit.registration()));
                    }
                }
            }
            match best {
                Some((_, r)) => regs.push(r),
                None => break,
            }
        }
        if regs.len() == n {
            out.push(regs);
        }
    }
    Ok(out)
}

fn full_hessian(irf: &IrfMixture, p: &DVector<f64>, e: &IrfEval, h: f64) -> Result<DMatrix<f64>> {
    let n = p.len() / 3;
    let mut hess = DMatrix::zeros(3 * n, 3 * n);
    hess.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&e.hess_drift);
    for j in 0..n {
        let mut pp = p.clone();
        pp[2 * n + j] += h;
        let ep = irf.eval_with_derivatives(&regs_of(&pp))?;
        let mut pm = p.clone();
        pm[2 * n + j] -= h;
        let em = irf.eval_with_derivatives(&regs_of(&pm))?;
        if !(ep.ln_value.is_finite() && em.ln_value.is_finite()) {
            return Err(Error::NumericDomain("reward vanished near the iterate".into()));
        }
        let col = (&ep.grad - &em.grad) / (2.0 * h);
        for r in 0..3 * n {
            hess[(r, 2 * n + j)] = col[r];
        }
    }
    // Angle columns come from differencing; use them for the mirrored rows.
    for j in 0..n {
        for r in 0..3 * n {
            let c = 2 * n + j;
            if r < 2 * n {
                hess[(c, r)] = hess[(r, c)];
            }
        }
    }
    let angles = hess.view((2 * n, 2 * n), (n, n)).into_owned();
    let sym = (&angles + angles.transpose()) * 0.5;
    hess.view_mut((2 * n, 2 * n), (n, n)).copy_from(&sym);
    Ok(hess)
}

/// Solves `(-H + lambda D) s = g`, raising `lambda` until the system is
/// positive definite.
fn ascent_step(hess: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let neg = -hess;
    let diag = DMatrix::from_diagonal(&neg.diagonal().map(|d| d.abs().max(1e-12)));
    let mut lambda = 0.0;
    for _ in 0..40 {
        if let Some(ch) = (&neg + &diag * lambda).cholesky() {
            return ch.solve(g);
        }
        lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
    }
    g.zip_map(&diag.diagonal(), |gi, d| gi / d)
}

/// Newton ascent of `ln W` jointly in drifts and angles from `start`.
pub fn refine(
    irf: &IrfMixture,
    start: &[EdgeRegistration],
    cfg: &EstimateConfig,
) -> Result<(Vec<EdgeRegistration>, f64, bool)> {
    let n = start.len();
    let mut p = params_of(start);
    let mut e = irf.eval_with_derivatives(start)?;
    if !e.ln_value.is_finite() {
        return Ok((start.to_vec(), e.ln_value, false));
    }
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let hess = match full_hessian(irf, &p, &e, cfg.angle_step) {
            Ok(h) => h,
            Err(_) => break,
        };
        let step = ascent_step(&hess, &e.grad);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &p + &step * alpha;
            let ln = irf.ln_eval(&regs_of(&trial))?;
            if ln >= e.ln_value {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            converged = true;
            break;
        };
        let moved = &next - &p;
        let drift_move = moved.rows(0, 2 * n).amax();
        let angle_move = moved.rows(2 * n, n).amax();
        p = next;
        for j in 0..n {
            p[2 * n + j] = crate::cphd::wrap_angle(p[2 * n + j]);
        }
        let prev = e.ln_value;
        e = irf.eval_with_derivatives(&regs_of(&p))?;
        if (drift_move < 1e-8 && angle_move < 1e-11) || (e.ln_value - prev).abs() < 1e-13 * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok((regs_of(&p), e.ln_value, converged))
}

/// [`instantaneous_estimate_with`] with default settings and no warm starts.
pub fn instantaneous_estimate(irf: &IrfMixture) -> Result<InstantaneousEstimate> {
    instantaneous_estimate_with(irf, &[], &EstimateConfig::default())
}

/// Scores the triplet starts and `warm_starts`, then refines the best
/// distinct ones and keeps the highest reward.
pub fn instantaneous_estimate_with(
    irf: &IrfMixture,
    warm_starts: &[Vec<EdgeRegistration>],
    cfg: &EstimateConfig,
) -> Result<InstantaneousEstimate> {
    let n = irf.neighbor_count();
    if n == 0 {
        return Err(Error::RegistrationUnavailable("node has no neighbors".into()));
    }
    let mut starts = candidate_points(irf, cfg)?;
    starts.extend(warm_starts.iter().filter(|w| w.len() == n).cloned());
    let mut scored = Vec::with_capacity(starts.len());
    for s in starts {
        let ln = irf.ln_eval(&s)?;
        scored.push((ln, s));
    }
    let initial_points = scored.len();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let best_initial_ln_reward = scored.first().map_or(f64::NEG_INFINITY, |s| s.0);
    let mut chosen: Vec<&Vec<EdgeRegistration>> = Vec::new();
    for (ln, s) in &scored {
        if chosen.len() >= cfg.refine_starts {
            break;
        }
        if !ln.is_finite() || chosen.iter().any(|c| close(c, s)) {
            continue;
        }
        chosen.push(s);
    }
    let mut best: Option<(Vec<EdgeRegistration>, f64, bool)> = None;
    for s in chosen {
        let r = refine(irf, s, cfg)?;
        if best.as_ref().is_none_or(|b| r.1 > b.1) {
            best = Some(r);
        }
    }
    let (regs, ln_reward, converged) = match best {
        Some(b) => b,
        None => match scored.into_iter().next() {
            Some((ln, s)) => (s, ln, false),
            None => return Err(Error::RegistrationUnavailable("no starting points".into())),
        },
    };
    let regs = regs
        .into_iter()
        .map(|r| EdgeRegistration::new(r.drift.x, r.drift.y, r.angle))
        .collect();
    Ok(InstantaneousEstimate {
        regs,
        ln_reward,
        reward: ln_reward.exp(),
        initial_points,
        best_initial_ln_reward,
        converged,
    })
}
