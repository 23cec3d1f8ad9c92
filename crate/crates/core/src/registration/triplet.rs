//! Closed-form registration from three point correspondences.
//!
//! With `a` the neighbor-frame differences and `b` the local-frame
//! differences, `b = R(gamma) a` is linear in `(cos gamma, sin gamma)`:
//! `b = A(a) [cos, sin]'` where `A(a) = [[a_x, -a_y], [a_y, a_x]]`. Since
//! `A'A` is a multiple of the identity, the unit-norm least-squares
//! solution is `A'b / |A'b|`.

use nalgebra::Vector2;

use crate::fusion::{rotation2, EdgeRegistration};

/// Relative tolerance (in units of the triangle's squared size) under which
/// two correspondences are considered equally good.
pub const AMBIGUITY_TOLERANCE: f64 = 1e-6;

/// Least-squares fit of one correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletFit {
    pub angle: f64,
    pub drift: Vector2<f64>,
    /// Sum of squared residuals of the rotated differences.
    pub residual: f64,
}

impl TripletFit {
    pub fn registration(&self) -> EdgeRegistration {
        EdgeRegistration::new(self.drift.x, self.drift.y, self.angle)
    }
}

fn a_transpose_b(a: &Vector2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(a.x * b.x + a.y * b.y, a.x * b.y - a.y * b.x)
}

/// Fits `own_m = R(gamma) nbr_m + drift` for three ordered pairs. Returns
/// `None` when the neighbor triangle is a single point (`A = 0`).
pub fn fit_triplet(own: &[Vector2<f64>; 3], nbr: &[Vector2<f64>; 3]) -> Option<TripletFit> {
    let b = [own[1] - own[0], own[2] - own[0]];
    let a = [nbr[1] - nbr[0], nbr[2] - nbr[0]];
    let ata = a[0].norm_squared() + a[1].norm_squared();
    if ata == 0.0 {
        return None;
    }
    let atb = a_transpose_b(&a[0], &b[0]) + a_transpose_b(&a[1], &b[1]);
    let unit = if atb.norm() > 0.0 {
        atb / atb.norm()
    } else {
        Vector2::new(1.0, 0.0)
    };
    let angle = unit.y.atan2(unit.x);
    let r = rotation2(angle);
    let residual = (0..2).map(|m| (b[m] - r * a[m]).norm_squared()).sum();
    let drift = (0..3).map(|m| own[m] - r * nbr[m]).sum::<Vector2<f64>>() / 3.0;
    Some(TripletFit { angle, drift, residual })
}

/// All six orderings of three indices; the identity comes first.
pub const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];

/// Initial registration of one edge from a triplet of matched positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletInit {
    pub fit: TripletFit,
    /// Another ordering of the neighbor points fits equally well, or the
    /// neighbor points coincide.
    pub ambiguous: bool,
    /// `(angle, residual)` of every other ordering whose residual is within
    /// tolerance of the chosen one.
    pub alternatives: Vec<(f64, f64)>,
}

/// Fits the given correspondence and checks the other five orderings for
/// ties. With coincident neighbor points the angle is unobservable; the
/// result is then `gamma = 0` and flagged.
pub fn triplet_initial_point(own: &[Vector2<f64>; 3], nbr: &[Vector2<f64>; 3]) -> TripletInit {
    let Some(fit) = fit_triplet(own, nbr) else {
        let drift = (0..3).map(|m| own[m] - nbr[m]).sum::<Vector2<f64>>() / 3.0;
        let b = [own[1] - own[0], own[2] - own[0]];
        return TripletInit {
            fit: TripletFit {
                angle: 0.0,
                drift,
                residual: b[0].norm_squared() + b[1].norm_squared(),
            },
            ambiguous: true,
            alternatives: Vec::new(),
        };
    };
    let scale = (own[1] - own[0]).norm_squared()
        + (own[2] - own[0]).norm_squared()
        + (nbr[1] - nbr[0]).norm_squared()
        + (nbr[2] - nbr[0]).norm_squared();
    let tol = AMBIGUITY_TOLERANCE * scale;
    let mut alternatives = Vec::new();
    for p in &PERMUTATIONS[1..] {
        let permuted = [nbr[p[0]], nbr[p[1]], nbr[p[2]]];
        if let Some(alt) = fit_triplet(own, &permuted) {
            if alt.residual <= fit.residual + tol {
                alternatives.push((alt.angle, alt.residual));
            }
        }
    }
    TripletInit {
        fit,
        ambiguous: !alternatives.is_empty(),
        alternatives,
    }
}

/// Best ordering of `nbr` against `own` by residual; ties keep the earlier
/// ordering in [`PERMUTATIONS`].
pub fn best_ordering(own: &[Vector2<f64>; 3], nbr: &[Vector2<f64>; 3]) -> Option<([usize; 3], TripletFit)> {
    let mut best: Option<([usize; 3], TripletFit)> = None;
    for p in &PERMUTATIONS {
        let permuted = [nbr[p[0]], nbr[p[1]], nbr[p[2]]];
        if let Some(f) = fit_triplet(own, &permuted) {
            if best.as_ref().is_none_or(|(_, b)| f.residual < b.residual) {
                best = Some((*p, f));
            }
        }
    }
    best
}
