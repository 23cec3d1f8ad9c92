//! A single node of the reference scenario running the GM-CPHD filter on
//! its own range-bearing scans.
//!
//! `cargo run --release --example cphd_tracking -- [node] [seed]`

use regtrack::cphd::{cphd_correct, cphd_predict, extract_states, IidClusterDensity};
use regtrack::metrics::ospa;
use regtrack::scenario::{Scenario, Topology};
use regtrack::sim::{generate_measurements, generate_truth, stream_rng, OSPA_CUTOFF, OSPA_ORDER};

fn main() -> regtrack::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let node: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let scenario = Scenario::reference(Topology::Tree);
    let truth = generate_truth(&scenario);
    let motion = scenario.motion_model(node)?;
    let sensor = scenario.sensor_model();
    let cfg = scenario.cphd_config();

    let mut density = IidClusterDensity::empty(scenario.filter.n_max);
    for t in 1..=scenario.steps {
        let targets: Vec<_> = truth.at(t).iter().map(|(_, x)| x.clone()).collect();
        let scan = generate_measurements(&scenario, &sensor, &targets, node, &mut stream_rng(seed, 0, node as u64, t as u64, 1));
        density = cphd_predict(&density, &motion)?;
        density = cphd_correct(&density, &scan, &sensor, &cfg)?;
        if t % 20 == 0 {
            let local_truth: Vec<_> = targets.iter().map(|x| scenario.to_local_state(node, x)).collect();
            let est = extract_states(&density);
            let d = ospa(&est, &local_truth, OSPA_CUTOFF, OSPA_ORDER)?;
            println!(
                "t {t:>3}: {:>2} measurements, E[n] {:.2} (truth {}), {} components, OSPA {:.2} m",
                scan.len(),
                density.mean_cardinality(),
                targets.len(),
                density.spatial.len(),
                d.distance
            );
        }
    }
    Ok(())
}
