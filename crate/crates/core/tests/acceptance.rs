//! Acceptance checks. Runs every criterion at its stated tolerance, prints
//! one pass/fail line per criterion and exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use rand::seq::SliceRandom;
use rand::Rng;
use regtrack::cphd::{cphd_correct, cphd_predict, wrap_angle, BirthModel, CphdConfig, IidClusterDensity, MotionModel};
use regtrack::fusion::{
    consensus_round, gci_divergence, gci_fuse, rotation2, rotation_matrix, transform_by, EdgeRegistration,
    FusionConfig,
};
use regtrack::gm::{gm_power, gm_product, GaussianMixture, MergePrune};
use regtrack::metrics::ospa;
use regtrack::registration::{
    best_ordering, build_irf, cardinality_coefficients, instantaneous_cost, triplet_initial_point, TotalCostConfig, TotalCostState,
};
use regtrack::scenario::{Scenario, Topology};
use regtrack::sim::{
    generate_measurements, propagate_targets, run_monte_carlo, stream_rng, Mode, Network, RunOptions, RunRecord,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_pmf(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn density(mix: GaussianMixture) -> IidClusterDensity {
    let mut card = vec![0.0; 11];
    card[mix.len().min(10)] = 1.0;
    IidClusterDensity::new(card, mix.normalized()).unwrap()
}

fn exact_fusion() -> FusionConfig {
    FusionConfig {
        merge: MergePrune::disabled(),
        gate: None,
    }
}

// ---------------------------------------------------------------------------
// Set integral of two 1-dim i.i.d. cluster densities
// ---------------------------------------------------------------------------

fn pdf1(mix: &[(f64, f64, f64)], x: f64) -> f64 {
    mix.iter()
        .map(|&(w, m, v)| w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
        .sum()
}

fn mixture1(parts: &[(f64, f64, f64)]) -> GaussianMixture {
    let mut m = GaussianMixture::empty();
    for &(w, mean, var) in parts {
        m.push(w, gaussian(&[mean], DMatrix::from_element(1, 1, var)));
    }
    m
}

/// `-ln` of the set integral of `f_1^w f_2^(1-w)`, summing the n-fold grid
/// integrals of the multi-object densities `n! p(n) prod s(x_k)` with `1/n!`.
fn brute_force_cost(p1: &[f64], s1: &[f64], p2: &[f64], s2: &[f64], w: f64, h: f64) -> f64 {
    let tw = |k: usize| if k == 0 || k == s1.len() - 1 { 0.5 * h } else { h };
    let mut total = p1[0].powf(w) * p2[0].powf(1.0 - w);
    if p1.len() > 1 {
        let mut one = 0.0;
        for k in 0..s1.len() {
            one += tw(k) * (p1[1] * s1[k]).powf(w) * (p2[1] * s2[k]).powf(1.0 - w);
        }
        total += one;
    }
    if p1.len() > 2 {
        let mut two = 0.0;
        for k in 0..s1.len() {
            for l in 0..s1.len() {
                let a = 2.0 * p1[2] * s1[k] * s1[l];
                let b = 2.0 * p2[2] * s2[k] * s2[l];
                two += tw(k) * tw(l) * a.powf(w) * b.powf(1.0 - w);
            }
        }
        total += two / 2.0;
    }
    -total.ln()
}

fn criterion_4() -> Outcome {
    let mut rng = rng(401);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n_max in [1, 2] {
        for case in 0..8 {
            let comps = 1 + case % 2;
            let w: f64 = rng.random_range(0.2..0.8);
            let shift = rng.random_range(-5.0..5.0);
            let own: Vec<(f64, f64, f64)> = (0..comps)
                .map(|k| (rng.random_range(0.2..1.0), 40.0 * k as f64 + rng.random_range(-2.0..2.0), rng.random_range(0.5..3.0)))
                .collect();
            let nbr: Vec<(f64, f64, f64)> = own
                .iter()
                .map(|&(_, m, _)| (rng.random_range(0.2..1.0), m - shift + rng.random_range(-1.5..1.5), rng.random_range(0.5..3.0)))
                .collect();
            let norm = |v: Vec<(f64, f64, f64)>| {
                let s: f64 = v.iter().map(|c| c.0).sum();
                v.into_iter().map(|(a, m, var)| (a / s, m, var)).collect::<Vec<_>>()
            };
            let (own, nbr) = (norm(own), norm(nbr));
            // Neighbor density expressed in the own frame.
            let nbr_here: Vec<_> = nbr.iter().map(|&(a, m, v)| (a, m + shift, v)).collect();
            let (p1, p2) = (random_pmf(&mut rng, n_max + 1), random_pmf(&mut rng, n_max + 1));

            let reach = (60.0 * 3.0 / w.min(1.0 - w)).sqrt();
            let means = own.iter().chain(&nbr_here).map(|c| c.1);
            let lo = means.clone().fold(f64::INFINITY, f64::min) - reach;
            let hi = means.fold(f64::NEG_INFINITY, f64::max) + reach;
            let pts = 2001;
            let h = (hi - lo) / (pts - 1) as f64;
            let grid: Vec<f64> = (0..pts).map(|k| lo + h * k as f64).collect();
            let s1: Vec<f64> = grid.iter().map(|&x| pdf1(&own, x)).collect();
            let s2: Vec<f64> = grid.iter().map(|&x| pdf1(&nbr, x - shift)).collect();
            let brute = brute_force_cost(&p1, &s1, &p2, &s2, w, h);

            let (a, b) = (mixture1(&own), mixture1(&nbr_here));
            let dens = [
                IidClusterDensity::new(p1.clone(), a.clone()).map_err(|e| e.to_string())?,
                IidClusterDensity::new(p2.clone(), b.clone()).map_err(|e| e.to_string())?,
            ];
            let weights = [w, 1.0 - w];
            let via_fusion = gci_divergence(&dens, &weights, &exact_fusion()).map_err(|e| e.to_string())?;
            let overlap = gm_product(&gm_power(&a, w).unwrap(), &gm_power(&b, 1.0 - w).unwrap(), None)
                .map_err(|e| e.to_string())?
                .total_weight();
            let via_cost = instantaneous_cost(&dens, &weights, overlap).map_err(|e| e.to_string())?;
            for got in [via_fusion, via_cost] {
                let err = (got - brute).abs();
                worst = worst.max(err);
                ensure(err <= 1e-5, || format!("N_max {n_max} case {case}: {got} vs set integral {brute}"))?;
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} cases, max |IC - brute force| = {worst:.1e} (tol 1e-5)"))
}

// ---------------------------------------------------------------------------
// Reward factor against 4-dim quadrature
// ---------------------------------------------------------------------------

/// Mean and covariance of the normalized product `N(m1, P1)^w1 N(m2, P2)^w2`.
fn powered_product(m1: &Vector4<f64>, p1: &Matrix4<f64>, w1: f64, m2: &Vector4<f64>, p2: &Matrix4<f64>, w2: f64) -> (Vector4<f64>, Matrix4<f64>) {
    let (i1, i2) = (p1.try_inverse().unwrap(), p2.try_inverse().unwrap());
    let cov = (i1 * w1 + i2 * w2).try_inverse().unwrap();
    (cov * (i1 * m1 * w1 + i2 * m2 * w2), cov)
}

/// Box holding every pairwise powered product to 7 standard deviations.
fn quadrature_box(own: &GaussianMixture, nbr: &GaussianMixture, w: [f64; 2], reg: &EdgeRegistration) -> (Vector4<f64>, Vector4<f64>) {
    let m = rotation_matrix(reg.angle);
    let (mut lo, mut hi) = (Vector4::repeat(f64::INFINITY), Vector4::repeat(f64::NEG_INFINITY));
    for a in own.iter() {
        for b in nbr.iter() {
            let mb = m * Vector4::from_column_slice(b.gaussian.mean().as_slice()) + reg.theta();
            let pb = m * m4(b.gaussian.cov()) * m.transpose();
            let ma = Vector4::from_column_slice(a.gaussian.mean().as_slice());
            let (mean, cov) = powered_product(&ma, &m4(a.gaussian.cov()), w[0], &mb, &pb, w[1]);
            for i in 0..4 {
                let r = 7.0 * cov[(i, i)].sqrt();
                lo[i] = lo[i].min(mean[i] - r);
                hi[i] = hi[i].max(mean[i] + r);
            }
        }
    }
    ((lo + hi) * 0.5, (hi - lo) * 0.5)
}

fn random_component(rng: &mut impl Rng, mix: &mut GaussianMixture, mean: Vector4<f64>) {
    mix.push(rng.random_range(0.2..1.0), gaussian(mean.as_slice(), random_spd(rng, 4, 1.0, 6.0)));
}

fn irf_case(rng: &mut impl Rng, comps: usize, pts: usize) -> Result<(f64, f64), String> {
    let reg = EdgeRegistration::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-PI..PI));
    let w0 = rng.random_range(0.3..0.7);
    let w = [w0, 1.0 - w0];
    let base = Vector4::from_fn(|_, _| rng.random_range(-50.0..50.0));
    let minv = rotation_matrix(reg.angle).transpose();
    let (mut own, mut nbr) = (GaussianMixture::empty(), GaussianMixture::empty());
    for k in 0..comps {
        let mean = base + Vector4::new(15.0 * k as f64, 0.0, 0.0, 0.0);
        random_component(rng, &mut own, mean);
        let noise = Vector4::from_fn(|_, _| rng.random_range(-2.0..2.0));
        random_component(rng, &mut nbr, minv * (mean - reg.theta()) + noise);
    }
    let (own, nbr) = (own.normalized(), nbr.normalized());
    let irf = build_irf(&[density(own.clone()), density(nbr.clone())], &w, 8).map_err(|e| e.to_string())?;
    let fast = irf.eval(&[reg]).map_err(|e| e.to_string())?;
    let full = irf.eval_exhaustive(&[reg]).map_err(|e| e.to_string())?;
    let (center, half) = quadrature_box(&own, &nbr, w, &reg);
    let quad = overlap_quadrature(&own, &nbr, w, reg.theta(), reg.angle, center, half, pts);
    let rel = ((fast - quad).abs().max((full - quad).abs())) / quad;
    Ok((rel, quad))
}

fn criterion_5() -> Outcome {
    let mut rng = rng(501);
    let mut worst_single: f64 = 0.0;
    for case in 0..50 {
        let (rel, quad) = irf_case(&mut rng, 1, 25)?;
        worst_single = worst_single.max(rel);
        ensure(rel <= 1e-4, || format!("single component case {case}: relative error {rel:.2e} (quadrature {quad:.3e})"))?;
    }
    let mut worst_pair: f64 = 0.0;
    for case in 0..10 {
        let (rel, quad) = irf_case(&mut rng, 2, 41)?;
        worst_pair = worst_pair.max(rel);
        ensure(rel <= 0.05, || format!("two component case {case}: relative error {rel:.2e} (quadrature {quad:.3e})"))?;
    }
    Ok(format!(
        "50 single-component cases max rel err {worst_single:.1e} (tol 1e-4); 10 two-component cases max rel err {worst_pair:.1e} (tol 5e-2)"
    ))
}

// ---------------------------------------------------------------------------
// Total cost recursion
// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut rng = rng(601);
    let truth = EdgeRegistration::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-PI..PI));
    let minv = rotation_matrix(truth.angle).transpose();
    let cfg = TotalCostConfig::exact();
    let weights = [0.5, 0.5];
    let mut state = TotalCostState::new();
    let mut steps = Vec::new();
    for _ in 0..3 {
        let (mut own, mut nbr) = (GaussianMixture::empty(), GaussianMixture::empty());
        for _ in 0..2 {
            let mean = Vector4::from_fn(|_, _| rng.random_range(-8.0..8.0));
            random_component(&mut rng, &mut own, mean);
            let noise = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            random_component(&mut rng, &mut nbr, minv * (mean - truth.theta()) + noise);
        }
        let dens = [
            IidClusterDensity::new(random_pmf(&mut rng, 3), own.normalized()).unwrap(),
            IidClusterDensity::new(random_pmf(&mut rng, 3), nbr.normalized()).unwrap(),
        ];
        let irf = build_irf(&dens, &weights, 8).map_err(|e| e.to_string())?;
        let coeffs = cardinality_coefficients(&dens, &weights).map_err(|e| e.to_string())?;
        let w = irf.drift_mixture(&[truth.angle]).map_err(|e| e.to_string())?;
        state = state.update(&coeffs, &w, &cfg).map_err(|e| e.to_string())?;
        steps.push((irf, coeffs));
    }
    let mut worst: f64 = 0.0;
    for a in 0..50 {
        for b in 0..50 {
            let drift = truth.drift + Vector2::new(-6.0 + 12.0 * a as f64 / 49.0, -6.0 + 12.0 * b as f64 / 49.0);
            let reg = EdgeRegistration { drift, angle: truth.angle };
            let mut direct = 1.0;
            for (irf, coeffs) in &steps {
                let w = irf.eval_exhaustive(&[reg]).map_err(|e| e.to_string())?;
                direct *= coeffs.iter().enumerate().map(|(n, c)| c * w.powi(n as i32)).sum::<f64>();
            }
            let got = state.exp_neg_cost(&DVector::from_column_slice(drift.as_slice())).map_err(|e| e.to_string())?;
            let rel = (got - direct).abs() / direct;
            worst = worst.max(rel);
            ensure(rel <= 1e-6, || format!("grid point ({a}, {b}): {got} vs {direct}"))?;
        }
    }
    Ok(format!("2500 grid points after 3 updates, max rel err {worst:.1e} (tol 1e-6)"))
}

// ---------------------------------------------------------------------------
// Triplet closed form
// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut rng = rng(701);
    let (mut drawn, mut worst_angle, mut worst_drift) = (0, 0.0f64, 0.0f64);
    while drawn < 1000 {
        let own: [Vector2<f64>; 3] =
            std::array::from_fn(|_| Vector2::new(rng.random_range(-4000.0..4000.0), rng.random_range(-4000.0..4000.0)));
        let sides = [(own[1] - own[0]).norm(), (own[2] - own[1]).norm(), (own[0] - own[2]).norm()];
        let longest = sides.iter().copied().fold(0.0, f64::max);
        let shortest = sides.iter().copied().fold(f64::INFINITY, f64::min);
        let area = 0.5 * (own[1] - own[0]).perp(&(own[2] - own[0])).abs();
        // Skip nearly collinear and nearly equilateral draws.
        if area < 0.05 * longest * longest || longest - shortest < 0.05 * longest {
            continue;
        }
        drawn += 1;
        let reg = EdgeRegistration::new(rng.random_range(-3000.0..3000.0), rng.random_range(-3000.0..3000.0), rng.random_range(-PI..PI));
        let rinv = rotation2(reg.angle).transpose();
        let nbr = own.map(|p| rinv * (p - reg.drift));
        let init = triplet_initial_point(&own, &nbr);
        ensure(!init.ambiguous, || format!("draw {drawn} flagged ambiguous"))?;
        // Without the correspondence, the best of the six orderings must
        // land on the same registration.
        let mut shuffled = nbr;
        shuffled.shuffle(&mut rng);
        let (_, unordered) = best_ordering(&own, &shuffled).ok_or_else(|| format!("draw {drawn}: no ordering fits"))?;
        for fit in [init.fit, unordered] {
            let angle_err = wrap_angle(fit.angle - reg.angle).abs();
            let drift_err = (fit.drift - reg.drift).norm();
            worst_angle = worst_angle.max(angle_err);
            worst_drift = worst_drift.max(drift_err);
            ensure(angle_err <= 1e-9 && drift_err <= 1e-9, || {
                format!("draw {drawn}: angle error {angle_err:.2e} rad, drift error {drift_err:.2e} m")
            })?;
        }
    }
    let own: [Vector2<f64>; 3] = std::array::from_fn(|k| {
        let a = 2.0 * PI * k as f64 / 3.0;
        Vector2::new(500.0 + 1000.0 * a.cos(), -200.0 + 1000.0 * a.sin())
    });
    let reg = EdgeRegistration::new(340.0, -75.0, 0.9);
    let rinv = rotation2(reg.angle).transpose();
    let equilateral = triplet_initial_point(&own, &own.map(|p| rinv * (p - reg.drift)));
    ensure(equilateral.ambiguous, || "equilateral triangle not flagged".into())?;
    Ok(format!(
        "1000 draws, max angle err {worst_angle:.1e} rad, max drift err {worst_drift:.1e} m (tol 1e-9); equilateral case flagged with {} alternatives",
        equilateral.alternatives.len()
    ))
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

fn separated_mixture(rng: &mut impl Rng, comps: usize) -> GaussianMixture {
    let mut m = GaussianMixture::empty();
    for k in 0..comps {
        let mean = [1000.0 * k as f64, rng.random_range(-5.0..5.0), rng.random_range(-50.0..50.0), 1.0];
        m.push(rng.random_range(0.2..1.0), gaussian(&mean, random_spd(rng, 4, 1.0, 20.0)));
    }
    m.normalized()
}

fn idempotence_and_divergence() -> Result<String, String> {
    let mut rng = rng(801);
    let cfg = FusionConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_div: f64 = 0.0;
    let mut least_perturbed = f64::INFINITY;
    for case in 0..20 {
        let comps = 1 + case % 4;
        let copies = 2 + case % 3;
        let d = IidClusterDensity::new(random_pmf(&mut rng, 7), separated_mixture(&mut rng, comps)).unwrap();
        let w = random_pmf(&mut rng, copies);
        let inputs = vec![d.clone(); copies];
        let fused = gci_fuse(&inputs, &w, &cfg).map_err(|e| e.to_string())?;
        for (a, b) in fused.card.iter().zip(&d.card) {
            worst = worst.max((a - b).abs());
        }
        for c in d.spatial.iter() {
            for _ in 0..10 {
                let x = c.gaussian.mean() + DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
                let (u, v) = (fused.spatial.eval(&x).unwrap(), d.spatial.eval(&x).unwrap());
                worst = worst.max((u - v).abs() / v);
            }
        }
        ensure(worst <= 1e-9, || format!("fusing {copies} copies changed the density by {worst:.2e}"))?;
        let div = gci_divergence(&inputs, &w, &cfg).map_err(|e| e.to_string())?;
        worst_div = worst_div.max(div.abs());
        ensure(div.abs() <= 1e-9, || format!("divergence {div:.2e} on coincident inputs"))?;

        let mut moved = inputs.clone();
        moved[1] = transform_by(&d, &EdgeRegistration::new(0.5, -0.5, 0.0)).unwrap();
        let mut recounted = inputs.clone();
        let mut card = d.card.clone();
        card.rotate_left(1);
        recounted[0] = IidClusterDensity::new(card, d.spatial.clone()).unwrap();
        for other in [moved, recounted] {
            let div = gci_divergence(&other, &w, &cfg).map_err(|e| e.to_string())?;
            least_perturbed = least_perturbed.min(div);
            ensure(div > 0.0, || format!("divergence {div} on perturbed inputs"))?;
        }
    }
    Ok(format!(
        "idempotence err {worst:.1e} (tol 1e-9), coincident divergence {worst_div:.1e}, smallest perturbed divergence {least_perturbed:.2e}"
    ))
}

/// Largest divergence between any two nodes after mapping into a common frame.
fn max_pairwise_divergence(s: &Scenario, dens: &[IidClusterDensity], cfg: &FusionConfig) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for i in 0..dens.len() {
        for j in i + 1..dens.len() {
            let there = transform_by(&dens[j], &s.true_registration(i, j)).map_err(|e| e.to_string())?;
            let d = gci_divergence(&[dens[i].clone(), there], &[0.5, 0.5], cfg).map_err(|e| e.to_string())?;
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

fn consensus_contraction(topology: Topology) -> Result<String, String> {
    let s = Scenario::reference(topology);
    let seed = 802;
    let mut net = Network::new(&s, &RunOptions::new(Mode::LocalOnly, seed)).map_err(|e| e.to_string())?;
    let sensor = s.sensor_model();
    let snapshot = s.consensus.start_step;
    for t in 1..=snapshot {
        let truth = propagate_targets(&s, t);
        let scans: Vec<_> = (0..s.nodes.len())
            .map(|i| generate_measurements(&s, &sensor, &truth, i, &mut stream_rng(seed, 0, i as u64, t as u64, 1)))
            .collect();
        net.step(t, &scans).map_err(|e| e.to_string())?;
    }
    let local: Vec<_> = net.nodes.iter().map(|n| n.density.clone()).collect();
    let params: Vec<_> = (0..s.nodes.len()).map(|i| net.true_params(i).clone()).collect();
    let filter: CphdConfig = s.cphd_config();
    let cfg = FusionConfig {
        merge: filter.merge,
        gate: filter.gate,
    };
    let mut trace = vec![max_pairwise_divergence(&s, &local, &cfg)?];
    for l in 1..=10 {
        let fused = consensus_round(&local, &net.graph, &params, l, &cfg).map_err(|e| e.to_string())?;
        trace.push(max_pairwise_divergence(&s, &fused, &cfg)?);
    }
    let shown: Vec<String> = trace.iter().map(|d| format!("{d:.3e}")).collect();
    for l in 1..trace.len() {
        ensure(trace[l] <= trace[l - 1], || format!("{topology:?}: divergence rose at L = {l}: [{}]", shown.join(", ")))?;
    }
    ensure(trace[10] < trace[0], || format!("{topology:?}: no contraction: [{}]", shown.join(", ")))?;
    Ok(format!("{topology:?} snapshot at t = {snapshot}, L = 0..10: [{}]", shown.join(", ")))
}

fn criterion_8() -> Outcome {
    let a = idempotence_and_divergence()?;
    let b = consensus_contraction(Topology::Tree)?;
    let c = consensus_contraction(Topology::Cycles)?;
    Ok(format!("{a}; max pairwise divergence {b}; {c}"))
}

// ---------------------------------------------------------------------------
// OSPA
// ---------------------------------------------------------------------------

fn random_set(rng: &mut impl Rng, n: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_vec(vec![rng.random_range(0.0..120.0), rng.random_range(0.0..120.0)]))
        .collect()
}

fn criterion_9() -> Outcome {
    let (c, p) = (50.0, 2.0);
    let mut rng = rng(901);
    let d = |x: &[DVector<f64>], y: &[DVector<f64>]| ospa(x, y, c, p).map(|r| r.distance).map_err(|e| e.to_string());
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let (m, n) = (rng.random_range(0..=6), rng.random_range(0..=6));
        let (x, y) = (random_set(&mut rng, m), random_set(&mut rng, n));
        let got = d(&x, &y)?;
        let err = (got - ospa_brute_force(&x, &y, c, p)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("instance {case} ({m} x {n}): error {err:.2e}"))?;
        ensure((0.0..=c).contains(&got), || format!("instance {case}: {got} outside [0, c]"))?;
        ensure(d(&x, &x)? == 0.0, || format!("instance {case}: d(x, x) != 0"))?;
        let mut shuffled = y.clone();
        shuffled.shuffle(&mut rng);
        ensure((d(&x, &shuffled)? - got).abs() <= 1e-12, || format!("instance {case}: relabeling changed the distance"))?;
    }
    let mut slack = f64::INFINITY;
    for case in 0..1000 {
        let sets: Vec<_> = (0..3)
            .map(|_| {
                let n = rng.random_range(0..=5);
                random_set(&mut rng, n)
            })
            .collect();
        let (ab, ba) = (d(&sets[0], &sets[1])?, d(&sets[1], &sets[0])?);
        ensure(ab == ba, || format!("triple {case}: asymmetric {ab} vs {ba}"))?;
        let gap = ab + d(&sets[1], &sets[2])? - d(&sets[0], &sets[2])?;
        slack = slack.min(gap);
        ensure(gap >= -1e-9, || format!("triple {case}: triangle inequality violated by {:.2e}", -gap))?;
    }
    Ok(format!("1000 instances, max err {worst:.1e} (tol 1e-9); symmetry exact, min triangle slack {slack:.2e} over 1000 triples"))
}

// ---------------------------------------------------------------------------
// Kalman degeneracy
// ---------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let sensor = linear_sensor(1.0, 0.0, 1e6, 2.0);
    let motion = MotionModel::white_noise_acceleration(1.0, 3.0, 1.0, BirthModel::none());
    let exact = CphdConfig {
        merge: MergePrune::disabled(),
        gate: None,
    };
    let x0 = Vector4::new(0.0, 5.0, 0.0, -3.0);
    let mut density = IidClusterDensity::new(vec![0.0, 1.0], GaussianMixture::single(gaussian(x0.as_slice(), DMatrix::identity(4, 4) * 100.0)))
        .map_err(|e| e.to_string())?;
    let mut kf = Kalman {
        x: x0,
        p: Matrix4::identity() * 100.0,
    };
    let (f, q) = (m4(&motion.f), m4(&motion.q));
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let r = Matrix2::identity() * 4.0;
    let mut rng = rng(1001);
    let (mut worst_x, mut worst_p) = (0.0f64, 0.0f64);
    for t in 0..100 {
        let z = Vector2::new(5.0 * t as f64 + rng.random_range(-3.0..3.0), -3.0 * t as f64 + rng.random_range(-3.0..3.0));
        density = cphd_predict(&density, &motion).map_err(|e| e.to_string())?;
        density = cphd_correct(&density, &[DVector::from_column_slice(z.as_slice())], &sensor, &exact).map_err(|e| e.to_string())?;
        kf.step(&f, &q, &h, &r, &z);
        ensure(density.spatial.len() == 1, || format!("step {t}: {} components", density.spatial.len()))?;
        let g = &density.spatial.components()[0].gaussian;
        worst_x = worst_x.max((Vector4::from_column_slice(g.mean().as_slice()) - kf.x).norm());
        worst_p = worst_p.max((m4(g.cov()) - kf.p).norm());
        ensure(worst_x <= 1e-8 && worst_p <= 1e-8, || format!("step {t}: mean error {worst_x:.2e}, covariance error {worst_p:.2e}"))?;
    }
    Ok(format!("100 steps, max mean err {worst_x:.1e}, max covariance err {worst_p:.1e} (tol 1e-8)"))
}

// ---------------------------------------------------------------------------
// Monte Carlo criteria on the reference scenarios
// ---------------------------------------------------------------------------

/// Runs compared against the known-registration baseline.
const RUNS: usize = 20;
/// Runs averaged for the registration error traces. The windowed trend of
/// the angle error is far below the spread of a 20-run mean.
const REGISTRATION_RUNS: usize = 200;
const SEED: u64 = 2024;

struct Campaign {
    topology: Topology,
    /// `REGISTRATION_RUNS` runs; the first `RUNS` are the ones a `RUNS`-run
    /// campaign with the same seed produces.
    jsr: Vec<RunRecord>,
    pk: Vec<RunRecord>,
    seconds: f64,
}

impl Campaign {
    fn jsr_head(&self) -> &[RunRecord] {
        &self.jsr[..RUNS]
    }
}

fn campaign(topology: Topology) -> Result<Campaign, String> {
    let s = Scenario::reference(topology);
    let started = Instant::now();
    let jsr = run_monte_carlo(&s, &RunOptions::new(Mode::JsrDmt, SEED), REGISTRATION_RUNS).map_err(|e| e.to_string())?;
    let pk = run_monte_carlo(&s, &RunOptions::new(Mode::CcphdPk, SEED), RUNS).map_err(|e| e.to_string())?;
    for r in jsr.iter().chain(&pk) {
        if let Some(f) = &r.failure {
            return Err(format!("{topology:?} run {}: {f}", r.run));
        }
    }
    Ok(Campaign {
        topology,
        jsr,
        pk,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn window_ospa<'a>(runs: impl IntoIterator<Item = &'a RunRecord>, lo: usize, hi: usize, node: Option<usize>) -> f64 {
    mean(
        runs.into_iter()
            .flat_map(|r| &r.tracks)
            .filter(|t| (lo..=hi).contains(&t.step) && node.is_none_or(|n| t.node == n))
            .map(|t| t.ospa_m),
    )
}

fn criterion_1(campaigns: &[Campaign]) -> Outcome {
    let mut parts = Vec::new();
    for c in campaigns {
        let jsr = window_ospa(c.jsr_head(), 200, 300, None);
        let pk = window_ospa(&c.pk, 200, 300, None);
        let gap = (jsr - pk).abs() / pk;
        parts.push(format!("{:?}: jsr-dmt {jsr:.3} m vs ccphd-pk {pk:.3} m ({:.1}%, {:.0} s)", c.topology, 100.0 * gap, c.seconds));
        ensure(gap <= 0.25, || parts.join("; "))?;
    }
    Ok(parts.join("; "))
}

/// Per-edge mean over runs of drift error and absolute angle error at each step.
fn edge_traces(runs: &[RunRecord]) -> BTreeMap<(usize, usize), BTreeMap<usize, (f64, f64, usize)>> {
    let mut out: BTreeMap<(usize, usize), BTreeMap<usize, (f64, f64, usize)>> = BTreeMap::new();
    for r in runs.iter().flat_map(|r| &r.registration) {
        let e = out.entry((r.node, r.neighbor)).or_default().entry(r.step).or_default();
        e.0 += r.drift_error_m;
        e.1 += r.angle_error_rad.abs();
        e.2 += 1;
    }
    for trace in out.values_mut() {
        for v in trace.values_mut() {
            *v = (v.0 / v.2 as f64, v.1 / v.2 as f64, v.2);
        }
    }
    out
}

fn criterion_2(campaigns: &[Campaign]) -> Outcome {
    let mut parts = Vec::new();
    for c in campaigns {
        let traces = edge_traces(&c.jsr);
        ensure(!traces.is_empty(), || format!("{:?}: no registration records", c.topology))?;
        let (mut max_drift, mut max_angle) = (0.0f64, 0.0f64);
        for (&(i, j), trace) in &traces {
            let &(drift, angle, n) = trace.get(&300).ok_or_else(|| format!("edge ({i}, {j}) has no record at t = 300"))?;
            ensure(n == REGISTRATION_RUNS, || format!("edge ({i}, {j}): {n} runs at t = 300"))?;
            max_drift = max_drift.max(drift);
            max_angle = max_angle.max(angle.to_degrees());
            ensure(drift < 10.0 && angle.to_degrees() < 1.0, || {
                format!("{:?} edge ({i}, {j}) at t = 300: drift {drift:.3} m, angle {:.4} deg", c.topology, angle.to_degrees())
            })?;
            let win = |lo: usize, hi: usize, f: fn(&(f64, f64, usize)) -> f64| mean(trace.range(lo..hi).map(|(_, v)| f(v)));
            let drift_trend = (win(200, 250, |v| v.0), win(250, 301, |v| v.0));
            let angle_trend = (win(200, 250, |v| v.1), win(250, 301, |v| v.1));
            ensure(drift_trend.1 <= drift_trend.0, || {
                format!("{:?} edge ({i}, {j}): windowed drift error rose {:.4} -> {:.4} m", c.topology, drift_trend.0, drift_trend.1)
            })?;
            ensure(angle_trend.1 <= angle_trend.0, || {
                format!(
                    "{:?} edge ({i}, {j}): windowed angle error rose {:.3e} -> {:.3e} rad",
                    c.topology, angle_trend.0, angle_trend.1
                )
            })?;
        }
        parts.push(format!(
            "{:?}: {} edges over {} runs, worst at t = 300 drift {max_drift:.3} m, angle {max_angle:.4} deg; windowed traces non-increasing",
            c.topology,
            traces.len(),
            c.jsr.len()
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_3(campaigns: &[Campaign]) -> Outcome {
    let mut parts = Vec::new();
    for c in campaigns {
        let runs = c.jsr_head();
        let nodes = runs[0].tracks.iter().map(|t| t.node).max().unwrap_or(0) + 1;
        let mut good = 0;
        for run in runs {
            let better = (0..nodes).all(|i| {
                let late = window_ospa([run], 200, 300, Some(i));
                let early = window_ospa([run], 50, 149, Some(i));
                late < early
            });
            good += better as usize;
        }
        parts.push(format!(
            "{:?}: every node improved in {good} of {} runs (early {:.3} m, late {:.3} m)",
            c.topology,
            runs.len(),
            window_ospa(runs, 50, 149, None),
            window_ospa(runs, 200, 300, None)
        ));
        ensure(good >= 18, || parts.join("; "))?;
    }
    Ok(parts.join("; "))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let tag = if outcome.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &outcome {
            Ok(s) | Err(s) => s,
        };
        println!("criterion {n:>2} {tag} {name}: {detail}");
        results.push((n, name, outcome));
    };
    report(4, "cost equals set integral", criterion_4());
    report(5, "reward factor equals quadrature", criterion_5());
    report(6, "total cost recursion", criterion_6());
    report(7, "triplet closed form", criterion_7());
    report(8, "fusion properties", criterion_8());
    report(9, "OSPA oracle", criterion_9());
    report(10, "Kalman degeneracy", criterion_10());
    match [Topology::Tree, Topology::Cycles].into_iter().map(campaign).collect::<Result<Vec<_>, _>>() {
        Ok(campaigns) => {
            report(1, "tracking accuracy versus known registration", criterion_1(&campaigns));
            report(2, "registration convergence", criterion_2(&campaigns));
            report(3, "consensus benefit", criterion_3(&campaigns));
        }
        Err(e) => {
            for (n, name) in [(1, "tracking accuracy versus known registration"), (2, "registration convergence"), (3, "consensus benefit")] {
                report(n, name, Err(e.clone()));
            }
        }
    }
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed in {:.0} s", results.len() - failed.len(), results.len(), started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
