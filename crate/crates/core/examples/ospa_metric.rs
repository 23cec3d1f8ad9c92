//! OSPA distance between point sets and its split into localization and
//! cardinality parts.
//!
//! `cargo run --example ospa_metric`

use nalgebra::DVector;
use regtrack::metrics::{ospa, registration_errors};
use regtrack::fusion::EdgeRegistration;

fn pts(v: &[[f64; 2]]) -> Vec<DVector<f64>> {
    v.iter().map(|p| DVector::from_vec(p.to_vec())).collect()
}

fn main() -> regtrack::Result<()> {
    let truth = pts(&[[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]]);
    let cases = [
        ("exact", pts(&[[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])),
        ("small errors", pts(&[[3.0, 4.0], [98.0, 1.0], [0.0, 106.0]])),
        ("one missed", pts(&[[1.0, 1.0], [100.0, 2.0]])),
        ("one false", pts(&[[1.0, 1.0], [100.0, 2.0], [0.0, 99.0], [500.0, 500.0]])),
        ("nothing", Vec::new()),
    ];
    for (name, est) in &cases {
        let d = ospa(est, &truth, 50.0, 2.0)?;
        println!(
            "{name:>12}: OSPA {:6.2} m (localization {:6.2}, cardinality {:6.2})",
            d.distance, d.localization, d.cardinality
        );
    }
    let (drift, angle) = registration_errors(
        &EdgeRegistration::new(10.0, 20.0, 179f64.to_radians()),
        &EdgeRegistration::new(13.0, 24.0, -179f64.to_radians()),
    );
    println!("registration error: drift {drift:.1} m, angle {:.1} deg", angle.to_degrees());
    Ok(())
}
