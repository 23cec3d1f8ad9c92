//! Shared oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regtrack::cphd::{SensorKind, SensorModel};
use regtrack::fusion::rotation_matrix;
use regtrack::gm::{Gaussian, GaussianMixture};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random SPD matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, dim: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(dim, |_, _| rng.random_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn gaussian(mean: &[f64], cov: DMatrix<f64>) -> Gaussian {
    Gaussian::new(DVector::from_column_slice(mean), cov).unwrap()
}

pub fn m4(m: &DMatrix<f64>) -> Matrix4<f64> {
    Matrix4::from_iterator(m.iter().copied())
}

/// Pointwise density of a 4-dim mixture, evaluated with fixed-size algebra.
pub struct Pdf4 {
    comps: Vec<(f64, Vector4<f64>, Matrix4<f64>)>,
}

impl Pdf4 {
    pub fn new(mix: &GaussianMixture) -> Self {
        let comps = mix
            .iter()
            .map(|c| {
                let cov = m4(c.gaussian.cov());
                let norm = c.weight / ((2.0 * std::f64::consts::PI).powi(4) * cov.determinant()).sqrt();
                let mean = Vector4::from_iterator(c.gaussian.mean().iter().copied());
                (norm, mean, cov.try_inverse().unwrap())
            })
            .collect();
        Self { comps }
    }

    pub fn eval(&self, x: &Vector4<f64>) -> f64 {
        self.comps
            .iter()
            .map(|(w, m, p)| {
                let d = x - m;
                w * (-0.5 * d.dot(&(p * d))).exp()
            })
            .sum()
    }
}

/// Tensor trapezoid quadrature of `s_0(x)^{w_0} s_1(M^{-1}(x - theta))^{w_1}`
/// over a box `center +- half`, with `pts` nodes per axis.
pub fn overlap_quadrature(
    own: &GaussianMixture,
    nbr: &GaussianMixture,
    weights: [f64; 2],
    theta: Vector4<f64>,
    gamma: f64,
    center: Vector4<f64>,
    half: Vector4<f64>,
    pts: usize,
) -> f64 {
    let p0 = Pdf4::new(own);
    let p1 = Pdf4::new(nbr);
    let minv = rotation_matrix(gamma).transpose();
    let h: Vec<f64> = (0..4).map(|a| 2.0 * half[a] / (pts - 1) as f64).collect();
    let coord = |a: usize, k: usize| center[a] - half[a] + h[a] * k as f64;
    let tw = |k: usize| if k == 0 || k == pts - 1 { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for i0 in 0..pts {
        for i1 in 0..pts {
            for i2 in 0..pts {
                for i3 in 0..pts {
                    let x = Vector4::new(coord(0, i0), coord(1, i1), coord(2, i2), coord(3, i3));
                    let a = p0.eval(&x);
                    if a == 0.0 {
                        continue;
                    }
                    let b = p1.eval(&(minv * (x - theta)));
                    total += tw(i0) * tw(i1) * tw(i2) * tw(i3) * a.powf(weights[0]) * b.powf(weights[1]);
                }
            }
        }
    }
    total * h.iter().product::<f64>()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// OSPA by minimizing over every assignment of the smaller set.
pub fn ospa_brute_force(x: &[DVector<f64>], y: &[DVector<f64>], c: f64, p: f64) -> f64 {
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let best = permutations(n)
        .iter()
        .map(|perm| {
            small
                .iter()
                .enumerate()
                .map(|(i, s)| (s - &large[perm[i]]).norm().min(c).powf(p))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    ((best + c.powf(p) * (n - small.len()) as f64) / n as f64).powf(1.0 / p)
}

/// Position sensor observing `(x, y)` of a `[x, vx, y, vy]` state.
pub fn linear_sensor(pd: f64, clutter: f64, area: f64, sigma: f64) -> SensorModel {
    let mut h = DMatrix::zeros(2, 4);
    h[(0, 0)] = 1.0;
    h[(1, 2)] = 1.0;
    SensorModel {
        kind: SensorKind::Linear { h },
        r: DMatrix::identity(2, 2) * (sigma * sigma),
        detection: pd,
        clutter_rate: clutter,
        clutter_area: area,
    }
}

/// Standalone Kalman filter on the constant-velocity model.
pub struct Kalman {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
}

impl Kalman {
    pub fn step(&mut self, f: &Matrix4<f64>, q: &Matrix4<f64>, h: &Matrix2x4<f64>, r: &Matrix2<f64>, z: &Vector2<f64>) {
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        let s = h * self.p * h.transpose() + r;
        let k = self.p * h.transpose() * s.try_inverse().unwrap();
        self.x += k * (z - h * self.x);
        let ikh = Matrix4::identity() - k * h;
        self.p = ikh * self.p * ikh.transpose() + k * r * k.transpose();
    }
}
