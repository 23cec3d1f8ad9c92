//! Gaussian mixture toolkit: evaluation, powers, products, reduction and
//! mode finding.
//!
//! `cargo run --example gaussian_mixtures`

use nalgebra::{DMatrix, DVector};
use regtrack::gm::{gm_argmax, gm_power, gm_product, merge_prune, Gaussian, GaussianMixture, MergePrune};

fn g(x: f64, y: f64, var: f64) -> regtrack::Result<Gaussian> {
    Gaussian::new(DVector::from_vec(vec![x, y]), DMatrix::identity(2, 2) * var)
}

fn main() -> regtrack::Result<()> {
    let mut mix = GaussianMixture::empty();
    mix.push(0.5, g(0.0, 0.0, 4.0)?);
    mix.push(0.3, g(0.5, -0.2, 3.0)?);
    mix.push(0.2, g(20.0, 5.0, 1.0)?);
    let origin = DVector::from_vec(vec![0.0, 0.0]);
    println!("{} components, mass {:.3}, value at origin {:.5}", mix.len(), mix.total_weight(), mix.eval(&origin)?);

    // Fractional powers keep one component per input; the weights absorb
    // the normalizing constants.
    let half = gm_power(&mix, 0.5)?;
    for c in half.iter() {
        println!("power 0.5: weight {:.4} mean {:?}", c.weight, c.gaussian.mean().as_slice());
    }

    // The product of the two roots recovers the mixture only away from
    // overlapping components: near the origin the first two components
    // overlap and their cross terms add mass.
    let back = gm_product(&half, &half, None)?;
    let isolated = DVector::from_vec(vec![20.0, 5.0]);
    for (label, x) in [("origin", &origin), ("isolated component", &isolated)] {
        println!("product of roots at {label}: {:.5} vs {:.5}", back.eval(x)?, mix.eval(x)?);
    }

    let reduced = merge_prune(&mix, &MergePrune::default());
    println!("merged and pruned: {} -> {} components", mix.len(), reduced.len());

    let starts: Vec<DVector<f64>> = mix.iter().map(|c| c.gaussian.mean().clone()).collect();
    let best = gm_argmax(&mix, &starts)?;
    println!("mode at {:?} with density {:.5}", best.point.as_slice(), best.value);
    Ok(())
}
