//! The instantaneous reward factor `W(Theta, Gamma)`: the overlap integral of
//! the exponentiated neighborhood densities after mapping each neighbor into
//! the local frame. It is a Gaussian mixture in the stacked drift with one
//! component per association of component indices across the neighborhood.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix4, Vector2, Vector4, U4};

use crate::cphd::IidClusterDensity;
use crate::error::{Error, Result};
use crate::fusion::{rotation_matrix, EdgeRegistration};
use crate::gm::{gm_power, Component, Gaussian, GaussianMixture, LN_2PI};

/// Infinitesimal generator of [`rotation_matrix`]: `dM/dgamma = G M`.
fn generator() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 0.0, -1.0, 0.0, //
        0.0, 0.0, 0.0, -1.0, //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0,
    )
}

/// A component of `[s(x)]^omega` in the form `alpha_hat G(x; mu, P / omega)`.
#[derive(Debug, Clone)]
pub(crate) struct PoweredComp {
    pub ln_alpha: f64,
    pub mean: Vector4<f64>,
    /// `P / omega`
    pub cov: Matrix4<f64>,
    pub prec: Matrix4<f64>,
    /// `ln det(2 pi P / omega)`
    pub ln_det_2pi: f64,
}

/// The reward factor of one node's neighborhood. Slot 0 holds the node's
/// own density; slots `1..=n` hold its in-neighbors, expressed in their own
/// frames. Each slot keeps at most `n_cap` components.
#[derive(Debug, Clone)]
pub struct IrfMixture {
    pub(crate) slots: Vec<Vec<PoweredComp>>,
    pub(crate) weights: Vec<f64>,
    /// Squared-Mahalanobis gate between an own component and a mapped
    /// neighbor component in the fast evaluation paths.
    pub gate: f64,
}

/// One association's Gaussian over the stacked 4n-dimensional drift.
#[derive(Debug, Clone)]
pub struct IrfComponent {
    pub ln_beta: f64,
    pub phi: DVector<f64>,
    pub upsilon: DMatrix<f64>,
}

/// Value and derivatives of `ln W` with respect to the parameter vector
/// `[drift_1, ..., drift_n, angle_1, ..., angle_n]`.
#[derive(Debug, Clone)]
pub struct IrfEval {
    pub ln_value: f64,
    /// Length `3n`: drift gradients first, then angles.
    pub grad: DVector<f64>,
    /// `2n x 2n` Hessian of `ln W` in the drifts.
    pub hess_drift: DMatrix<f64>,
    pub associations: usize,
}

fn to_m4(m: &DMatrix<f64>) -> Matrix4<f64> {
    Matrix4::from_iterator(m.iter().copied())
}

fn to_v4(v: &DVector<f64>) -> Vector4<f64> {
    Vector4::from_iterator(v.iter().copied())
}

fn ln_det4(ch: &Cholesky<f64, U4>) -> f64 {
    let l = ch.l_dirty();
    2.0 * (0..4).map(|i| l[(i, i)].ln()).sum::<f64>()
}

fn chol4(m: &Matrix4<f64>) -> Result<Cholesky<f64, U4>> {
    if let Some(c) = Cholesky::new(*m) {
        return Ok(c);
    }
    let jitter = 1e-9 * m.trace() / 4.0;
    Cholesky::new(m + Matrix4::identity() * jitter)
        .ok_or_else(|| Error::NumericDomain("4x4 covariance is not positive definite".into()))
}

/// Builds the reward factor from the densities of a neighborhood. Slot 0 is
/// the local node; `weights` is its consensus-weight row in the same order.
pub fn build_irf(densities: &[IidClusterDensity], weights: &[f64], n_cap: usize) -> Result<IrfMixture> {
    if densities.len() != weights.len() || densities.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} densities with {} weights",
            densities.len(),
            weights.len()
        )));
    }
    let mut slots = Vec::with_capacity(densities.len());
    for (m, (d, &w)) in densities.iter().zip(weights).enumerate() {
        if d.spatial.is_empty() {
            return Err(Error::RegistrationUnavailable(format!(
                "neighborhood slot {m} has an empty spatial density"
            )));
        }
        if d.spatial.dim() != Some(4) {
            return Err(Error::Dimension {
                expected: 4,
                got: d.spatial.dim().unwrap_or(0),
            });
        }
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::InvalidArgument(format!("slot {m} has weight {w}")));
        }
        let powered = gm_power(&d.spatial.top(n_cap), w)?;
        let mut comps = Vec::with_capacity(powered.len());
        for c in powered.iter().filter(|c| c.weight > 0.0) {
            let cov = to_m4(c.gaussian.cov());
            let ch = chol4(&cov)?;
            comps.push(PoweredComp {
                ln_alpha: c.weight.ln(),
                mean: to_v4(c.gaussian.mean()),
                cov,
                prec: ch.inverse(),
                ln_det_2pi: 4.0 * LN_2PI + ln_det4(&ch),
            });
        }
        slots.push(comps);
    }
    Ok(IrfMixture {
        slots,
        weights: weights.to_vec(),
        gate: 100.0,
    })
}

/// A neighbor component mapped by a rotation (drift not yet applied).
#[derive(Debug, Clone)]
struct Rotated {
    mean: Vector4<f64>,
    cov: Matrix4<f64>,
    prec: Matrix4<f64>,
}

/// Per-association intermediate quantities.
struct AssocTerm {
    ln_value: f64,
    /// `d l / d drift`, length 2n
    grad_drift: Vec<Vector2<f64>>,
    grad_angle: Vec<f64>,
    /// `d^2 l / d drift^2`, 2n x 2n
    hess: DMatrix<f64>,
}

impl IrfMixture {
    pub fn neighbor_count(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn component_counts(&self) -> Vec<usize> {
        self.slots.iter().map(Vec::len).collect()
    }

    pub fn association_count(&self) -> usize {
        self.slots.iter().map(Vec::len).product()
    }

    /// All associations in lexicographic order; entry `m` indexes slot `m`.
    pub fn associations(&self) -> Associations {
        Associations {
            sizes: self.component_counts(),
            next: if self.slots.iter().any(Vec::is_empty) {
                None
            } else {
                Some(vec![0; self.slots.len()])
            },
        }
    }

    /// Position `(xi, eta)` of a component mean, in its own node's frame.
    pub fn position(&self, slot: usize, comp: usize) -> Vector2<f64> {
        let m = &self.slots[slot][comp].mean;
        Vector2::new(m[0], m[2])
    }

    /// Consensus weights, own slot first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight, mean and covariance of one association's component, built
    /// from the stacked matrices: `phi = E mu_i - M u`,
    /// `Upsilon = Psi + E (P_i / w_ii) E'`.
    pub fn component(&self, assoc: &[usize], gammas: &[f64]) -> Result<IrfComponent> {
        let n = self.neighbor_count();
        self.check_assoc(assoc, gammas)?;
        let own = &self.slots[0][assoc[0]];
        let dim = 4 * n;
        let mut phi = DVector::zeros(dim);
        let mut psi = DMatrix::zeros(dim, dim);
        let mut ete_psi_inv_e = Matrix4::zeros();
        for j in 1..=n {
            let c = &self.slots[j][assoc[j]];
            let m = rotation_matrix(gammas[j - 1]);
            let mean = own.mean - m * c.mean;
            let cov = m * c.cov * m.transpose();
            phi.rows_mut(4 * (j - 1), 4).copy_from(&mean);
            psi.view_mut((4 * (j - 1), 4 * (j - 1)), (4, 4)).copy_from(&cov);
            ete_psi_inv_e += m * c.prec * m.transpose();
        }
        let mut upsilon = psi;
        for a in 0..n {
            for b in 0..n {
                let mut blk = upsilon.view_mut((4 * a, 4 * b), (4, 4));
                blk += own.cov;
            }
        }
        let upsilon = crate::gm::symmetrize(upsilon);
        let pbar_inv = ete_psi_inv_e + own.prec;
        let ln_det_2pi_pbar = 4.0 * LN_2PI - ln_det4(&chol4(&pbar_inv)?);
        let ups_ch = crate::gm::factor(&upsilon)?;
        let ln_det_2pi_ups = dim as f64 * LN_2PI + crate::gm::ln_det(&ups_ch);
        let mut ln_beta = 0.5 * ln_det_2pi_pbar + 0.5 * ln_det_2pi_ups;
        for (m, &k) in assoc.iter().enumerate() {
            let c = &self.slots[m][k];
            ln_beta += c.ln_alpha - 0.5 * c.ln_det_2pi;
        }
        Ok(IrfComponent { ln_beta, phi, upsilon })
    }

    fn check_assoc(&self, assoc: &[usize], gammas: &[f64]) -> Result<()> {
        if assoc.len() != self.slots.len() {
            return Err(Error::Dimension {
                expected: self.slots.len(),
                got: assoc.len(),
            });
        }
        if gammas.len() != self.neighbor_count() {
            return Err(Error::Dimension {
                expected: self.neighbor_count(),
                got: gammas.len(),
            });
        }
        for (m, &k) in assoc.iter().enumerate() {
            if k >= self.slots[m].len() {
                return Err(Error::InvalidArgument(format!(
                    "association index {k} out of range for slot {m}"
                )));
            }
        }
        Ok(())
    }

    /// `W(Theta, Gamma) = sum_k beta_k G(Theta; phi_k(Gamma), Upsilon_k(Gamma))`
    /// over every association, with `Theta` the stacked 4n-dimensional drift.
    /// Exhaustive and slow; meant for checking the fast paths.
    pub fn eval_stacked(&self, theta: &DVector<f64>, gammas: &[f64]) -> Result<f64> {
        let n = self.neighbor_count();
        if theta.len() != 4 * n {
            return Err(Error::Dimension {
                expected: 4 * n,
                got: theta.len(),
            });
        }
        let mut total = 0.0;
        for assoc in self.associations() {
            let c = self.component(&assoc, gammas)?;
            let g = Gaussian::from_parts(c.phi, c.upsilon);
            total += (c.ln_beta + g.ln_pdf(theta)?).exp();
        }
        Ok(total)
    }

    fn rotate(&self, gammas: &[f64]) -> Vec<Vec<Rotated>> {
        self.slots[1..]
            .iter()
            .zip(gammas)
            .map(|(comps, &g)| {
                let m = rotation_matrix(g);
                let mt = m.transpose();
                comps
                    .iter()
                    .map(|c| Rotated {
                        mean: m * c.mean,
                        cov: m * c.cov * mt,
                        prec: m * c.prec * mt,
                    })
                    .collect()
            })
            .collect()
    }

    /// Calls `f` for every association that passes the pairwise gate, or
    /// every association when `gated` is false.
    fn for_each_term(
        &self,
        regs: &[EdgeRegistration],
        gated: bool,
        derivs: bool,
        mut f: impl FnMut(&[usize], AssocTerm),
    ) -> Result<()> {
        let n = self.neighbor_count();
        let gammas: Vec<f64> = regs.iter().map(|r| r.angle).collect();
        let rot = self.rotate(&gammas);
        let shifts: Vec<Vector4<f64>> = regs.iter().map(|r| r.theta()).collect();
        let gen = generator();
        let mut cands: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut assoc = vec![0usize; n + 1];
        for (k0, own) in self.slots[0].iter().enumerate() {
            for j in 0..n {
                cands[j].clear();
                for (c, r) in rot[j].iter().enumerate() {
                    if gated {
                        let d = r.mean + shifts[j] - own.mean;
                        let s = chol4(&(own.cov + r.cov))?;
                        if d.dot(&s.solve(&d)) > self.gate {
                            continue;
                        }
                    }
                    cands[j].push(c);
                }
                if cands[j].is_empty() {
                    break;
                }
            }
            if cands.iter().any(Vec::is_empty) {
                continue;
            }
            assoc[0] = k0;
            let mut idx = vec![0usize; n];
            'outer: loop {
                for j in 0..n {
                    assoc[j + 1] = cands[j][idx[j]];
                }
                let term = self.term(&assoc, &rot, &shifts, &gen, derivs)?;
                f(&assoc, term);
                let mut p = n;
                loop {
                    if p == 0 {
                        break 'outer;
                    }
                    p -= 1;
                    idx[p] += 1;
                    if idx[p] < cands[p].len() {
                        break;
                    }
                    idx[p] = 0;
                }
            }
        }
        Ok(())
    }

    fn term(
        &self,
        assoc: &[usize],
        rot: &[Vec<Rotated>],
        shifts: &[Vector4<f64>],
        gen: &Matrix4<f64>,
        derivs: bool,
    ) -> Result<AssocTerm> {
        let n = self.neighbor_count();
        let own = &self.slots[0][assoc[0]];
        let mut lam_bar = own.prec;
        let mut eta = own.prec * own.mean;
        let mut ln_value = own.ln_alpha - 0.5 * own.ln_det_2pi;
        let mut b = Vec::with_capacity(n);
        for j in 0..n {
            let r = &rot[j][assoc[j + 1]];
            let bj = r.mean + shifts[j];
            lam_bar += r.prec;
            eta += r.prec * bj;
            let c = &self.slots[j + 1][assoc[j + 1]];
            ln_value += c.ln_alpha - 0.5 * c.ln_det_2pi;
            b.push(bj);
        }
        let lam_bar = (lam_bar + lam_bar.transpose()) * 0.5;
        let ch = chol4(&lam_bar)?;
        let mu_bar = ch.solve(&eta);
        let d0 = own.mean - mu_bar;
        let mut quad = d0.dot(&(own.prec * d0));
        let mut resid = Vec::with_capacity(n);
        for j in 0..n {
            let r = &rot[j][assoc[j + 1]];
            let d = b[j] - mu_bar;
            let lr = r.prec * d;
            quad += d.dot(&lr);
            resid.push((d, lr));
        }
        ln_value += 0.5 * (4.0 * LN_2PI - ln_det4(&ch)) - 0.5 * quad;
        if !derivs {
            return Ok(AssocTerm {
                ln_value,
                grad_drift: Vec::new(),
                grad_angle: Vec::new(),
                hess: DMatrix::zeros(0, 0),
            });
        }
        let lam_bar_inv = ch.inverse();
        let mut grad_drift = Vec::with_capacity(n);
        let mut grad_angle = Vec::with_capacity(n);
        for j in 0..n {
            let r = &rot[j][assoc[j + 1]];
            let (d, lr) = &resid[j];
            grad_drift.push(Vector2::new(-lr[0], -lr[2]));
            // d Lambda_j = G Lambda_j - Lambda_j G, d b_j = G (M mu_j)
            let dlam = gen * r.prec - r.prec * gen;
            let db = gen * r.mean;
            let tr = (lam_bar_inv * dlam).trace();
            let dq = 2.0 * lr.dot(&db) + d.dot(&(dlam * d));
            grad_angle.push(-0.5 * tr - 0.5 * dq);
        }
        let mut hess = DMatrix::zeros(2 * n, 2 * n);
        let pick = [0usize, 2];
        for j in 0..n {
            let lj = &rot[j][assoc[j + 1]].prec;
            let lj_inv = lj * lam_bar_inv;
            for l in 0..n {
                let ll = &rot[l][assoc[l + 1]].prec;
                let mut blk = -(lj_inv * ll);
                if j == l {
                    blk += lj;
                }
                for (a, &pa) in pick.iter().enumerate() {
                    for (c, &pc) in pick.iter().enumerate() {
                        hess[(2 * j + a, 2 * l + c)] = -blk[(pa, pc)];
                    }
                }
            }
        }
        Ok(AssocTerm {
            ln_value,
            grad_drift,
            grad_angle,
            hess,
        })
    }

    /// `ln W` at the given registrations (one per neighbor), summing the
    /// associations that pass the pairwise gate.
    pub fn ln_eval(&self, regs: &[EdgeRegistration]) -> Result<f64> {
        self.check_regs(regs)?;
        let mut terms = Vec::new();
        self.for_each_term(regs, true, false, |_, t| terms.push(t.ln_value))?;
        Ok(crate::gm::ln_sum_exp(terms))
    }

    /// `W` at the given registrations, gated as in [`Self::ln_eval`].
    pub fn eval(&self, regs: &[EdgeRegistration]) -> Result<f64> {
        Ok(self.ln_eval(regs)?.exp())
    }

    /// `W` summed over every association, without gating.
    pub fn eval_exhaustive(&self, regs: &[EdgeRegistration]) -> Result<f64> {
        self.check_regs(regs)?;
        let mut terms = Vec::new();
        self.for_each_term(regs, false, false, |_, t| terms.push(t.ln_value))?;
        Ok(crate::gm::ln_sum_exp(terms).exp())
    }

    fn check_regs(&self, regs: &[EdgeRegistration]) -> Result<()> {
        if regs.len() != self.neighbor_count() {
            return Err(Error::Dimension {
                expected: self.neighbor_count(),
                got: regs.len(),
            });
        }
        Ok(())
    }

    /// `ln W` with its gradient in all parameters and Hessian in the drifts.
    pub fn eval_with_derivatives(&self, regs: &[EdgeRegistration]) -> Result<IrfEval> {
        self.check_regs(regs)?;
        let n = self.neighbor_count();
        let mut terms = Vec::new();
        self.for_each_term(regs, true, true, |_, t| terms.push(t))?;
        let ln_value = crate::gm::ln_sum_exp(terms.iter().map(|t| t.ln_value));
        let mut grad = DVector::zeros(3 * n);
        let mut hess = DMatrix::zeros(2 * n, 2 * n);
        if ln_value.is_finite() {
            for t in &terms {
                let r = (t.ln_value - ln_value).exp();
                if r == 0.0 {
                    continue;
                }
                let mut g = DVector::zeros(3 * n);
                for j in 0..n {
                    g[2 * j] = t.grad_drift[j][0];
                    g[2 * j + 1] = t.grad_drift[j][1];
                    g[2 * n + j] = t.grad_angle[j];
                }
                let gd = g.rows(0, 2 * n);
                hess += (&t.hess + gd * gd.transpose()) * r;
                grad += g * r;
            }
            let gd = grad.rows(0, 2 * n).into_owned();
            hess -= &gd * gd.transpose();
        }
        Ok(IrfEval {
            ln_value,
            grad,
            hess_drift: crate::gm::symmetrize(hess),
            associations: terms.len(),
        })
    }

    /// `W(., Gamma)` restricted to the drift subspace, as a Gaussian mixture
    /// over the stacked planar drifts (dimension `2n`). Every association
    /// contributes one component.
    pub fn drift_mixture(&self, gammas: &[f64]) -> Result<GaussianMixture> {
        if gammas.len() != self.neighbor_count() {
            return Err(Error::Dimension {
                expected: self.neighbor_count(),
                got: gammas.len(),
            });
        }
        let n = self.neighbor_count();
        let regs: Vec<EdgeRegistration> = gammas
            .iter()
            .map(|&g| EdgeRegistration {
                drift: Vector2::zeros(),
                angle: g,
            })
            .collect();
        let mut comps = Vec::new();
        let mut failure = None;
        self.for_each_term(&regs, false, true, |_, t| {
            if failure.is_some() {
                return;
            }
            // l(v) = l0 + g'v + v'Hv/2 with H negative definite.
            let neg_h = crate::gm::symmetrize(-&t.hess);
            let ch = match crate::gm::factor(&neg_h) {
                Ok(c) => c,
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            };
            let mut g = DVector::zeros(2 * n);
            for j in 0..n {
                g[2 * j] = t.grad_drift[j][0];
                g[2 * j + 1] = t.grad_drift[j][1];
            }
            let mean = ch.solve(&g);
            let cov = ch.inverse();
            let ln_det_2pi_s = 2.0 * n as f64 * LN_2PI - crate::gm::ln_det(&ch);
            let ln_w = t.ln_value + 0.5 * g.dot(&mean) + 0.5 * ln_det_2pi_s;
            comps.push(Component::new(ln_w.exp(), Gaussian::from_parts(mean, cov)));
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(GaussianMixture::from_components(comps))
    }
}

/// Odometer over the Cartesian product of component indices.
#[derive(Debug, Clone)]
pub struct Associations {
    sizes: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for Associations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let cur = self.next.take()?;
        let mut nxt = cur.clone();
        let mut p = nxt.len();
        loop {
            if p == 0 {
                break;
            }
            p -= 1;
            nxt[p] += 1;
            if nxt[p] < self.sizes[p] {
                self.next = Some(nxt);
                break;
            }
            nxt[p] = 0;
        }
        Some(cur)
    }
}
