//! Registration of one neighbor from three shared targets: the closed-form
//! triplet start, the instantaneous reward maximizer, and drift tracking
//! through the total cost when the orientation is known.
//!
//! `cargo run --example registration`

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use regtrack::cphd::IidClusterDensity;
use regtrack::fusion::{rotation2, rotation_matrix, EdgeRegistration};
use regtrack::gm::{Gaussian, GaussianMixture};
use regtrack::registration::{
    build_irf, cardinality_coefficients, instantaneous_estimate, triplet_initial_point, HypothesisConfig,
    HypothesisSet, TotalCostConfig, TotalCostState,
};

fn main() -> regtrack::Result<()> {
    let truth = EdgeRegistration::new(-420.0, 910.0, 0.8);
    let targets = [[1000.0, 2000.0], [-1500.0, 500.0], [300.0, -2500.0]];

    let own: [Vector2<f64>; 3] = targets.map(|p| Vector2::new(p[0], p[1]));
    let nbr = own.map(|p| rotation2(truth.angle).transpose() * (p - truth.drift));
    let init = triplet_initial_point(&own, &nbr);
    println!(
        "triplet start: drift ({:.3}, {:.3}) m, angle {:.5} rad, ambiguous {}",
        init.fit.drift.x, init.fit.drift.y, init.fit.angle, init.ambiguous
    );

    let mut rng_state = 7u64;
    let mut jitter = move || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 6.0
    };
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![25.0, 4.0, 25.0, 4.0]));
    let minv = rotation_matrix(truth.angle).transpose();
    let mut hypotheses = HypothesisSet::new();
    let mut total = TotalCostState::new();
    let tc_cfg = TotalCostConfig::default();
    for scan in 1..=5 {
        let (mut a, mut b) = (GaussianMixture::empty(), GaussianMixture::empty());
        for p in &targets {
            let x = Vector4::new(p[0] + jitter(), 0.0, p[1] + jitter(), 0.0);
            let seen = Vector4::new(p[0] + jitter(), 0.0, p[1] + jitter(), 0.0);
            let xj = minv * (seen - truth.theta());
            a.push(1.0, Gaussian::new(DVector::from_column_slice(x.as_slice()), cov.clone())?);
            b.push(1.0, Gaussian::new(DVector::from_column_slice(xj.as_slice()), cov.clone())?);
        }
        let card = vec![0.0, 0.0, 0.0, 1.0];
        let dens = [IidClusterDensity::new(card.clone(), a.normalized())?, IidClusterDensity::new(card, b.normalized())?];
        let weights = [0.5, 0.5];
        let irf = build_irf(&dens, &weights, 8)?;

        let est = instantaneous_estimate(&irf)?;
        hypotheses.update(&est.regs, est.reward, &HypothesisConfig::default());
        let best = hypotheses.best().map(|h| h.regs[0]).unwrap_or(est.regs[0]);

        let w = irf.drift_mixture(&[truth.angle])?;
        total = total.update(&cardinality_coefficients(&dens, &weights)?, &w, &tc_cfg)?;
        let drift = total.estimate(&[best.drift], &tc_cfg)?.map(|d| d[0]).unwrap_or(best.drift);
        println!(
            "scan {scan}: hypothesis drift error {:.3} m, angle error {:.2e} rad ({} kept); known-orientation drift error {:.3} m",
            (best.drift - truth.drift).norm(),
            (best.angle - truth.angle).abs(),
            hypotheses.len(),
            (drift - truth.drift).norm()
        );
    }
    Ok(())
}
