//! Performance measures: OSPA distance between state sets and registration
//! errors.

use nalgebra::DVector;

use crate::cphd::wrap_angle;
use crate::error::{Error, Result};
use crate::fusion::EdgeRegistration;

/// OSPA distance with order `p` and cut-off `c` over the position entries
/// `(0, 2)` of each state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ospa {
    pub distance: f64,
    pub localization: f64,
    pub cardinality: f64,
}

/// Minimum-cost assignment of every row to a distinct column for a
/// `rows x cols` cost matrix with `rows <= cols`. Returns the column of each
/// row.
pub fn assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) || n > m {
        return Err(Error::InvalidArgument("cost matrix must be rectangular with rows <= cols".into()));
    }
    // Shortest augmenting path with potentials; index 0 is a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

fn position_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.len() >= 3 && b.len() >= 3 {
        ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    } else {
        (a - b).norm()
    }
}

/// OSPA between `estimates` and `truth`. States of dimension 4 are compared
/// on position only; other dimensions use the full Euclidean distance.
///
/// The result is exactly symmetric in its arguments.
pub fn ospa(estimates: &[DVector<f64>], truth: &[DVector<f64>], c: f64, p: f64) -> Result<Ospa> {
    if !(c > 0.0 && p >= 1.0) {
        return Err(Error::InvalidArgument(format!("OSPA needs c > 0 and p >= 1, got c={c}, p={p}")));
    }
    if estimates.len() < truth.len() {
        ospa_oriented(estimates, truth, c, p)
    } else if estimates.len() > truth.len() {
        ospa_oriented(truth, estimates, c, p)
    } else {
        let a = ospa_oriented(estimates, truth, c, p)?;
        let b = ospa_oriented(truth, estimates, c, p)?;
        Ok(if b.distance < a.distance { b } else { a })
    }
}

fn ospa_oriented(small: &[DVector<f64>], large: &[DVector<f64>], c: f64, p: f64) -> Result<Ospa> {
    let (m, n) = (small.len(), large.len());
    if n == 0 {
        return Ok(Ospa {
            distance: 0.0,
            localization: 0.0,
            cardinality: 0.0,
        });
    }
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|x| large.iter().map(|y| position_distance(x, y).min(c).powf(p)).collect())
        .collect();
    let assign = assignment(&cost)?;
    // Summing in sorted order makes the total independent of labeling.
    let mut matched: Vec<f64> = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).collect();
    matched.sort_by(f64::total_cmp);
    let loc: f64 = matched.iter().sum();
    let card = c.powf(p) * (n - m) as f64;
    let nf = n as f64;
    Ok(Ospa {
        distance: ((loc + card) / nf).powf(1.0 / p),
        localization: (loc / nf).powf(1.0 / p),
        cardinality: (card / nf).powf(1.0 / p),
    })
}

/// Drift error in metres and wrapped `truth - estimate` angle error in
/// radians.
pub fn registration_errors(truth: &EdgeRegistration, estimate: &EdgeRegistration) -> (f64, f64) {
    (
        (truth.drift - estimate.drift).norm(),
        wrap_angle(truth.angle - estimate.angle),
    )
}

/// Mean of the finite values in `values`; `None` when there are none.
pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}
