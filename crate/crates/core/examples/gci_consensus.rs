//! Consensus fusion on a snapshot of the reference network. Local filters
//! run to the consensus start, then neighborhoods are fused with the true
//! registration for a growing number of rounds.
//!
//! `cargo run --release --example gci_consensus -- [ref_tree|ref_cycles]`

use regtrack::fusion::{consensus_round, gci_divergence, transform_by, FusionConfig};
use regtrack::scenario::Scenario;
use regtrack::sim::{generate_measurements, propagate_targets, stream_rng, Mode, Network, RunOptions};

fn main() -> regtrack::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "ref_tree".into());
    let s = Scenario::load(&name)?;
    let mut net = Network::new(&s, &RunOptions::new(Mode::LocalOnly, 3))?;
    let sensor = s.sensor_model();
    for t in 1..=s.consensus.start_step {
        let truth = propagate_targets(&s, t);
        let scans: Vec<_> = (0..s.nodes.len())
            .map(|i| generate_measurements(&s, &sensor, &truth, i, &mut stream_rng(3, 0, i as u64, t as u64, 1)))
            .collect();
        net.step(t, &scans)?;
    }
    let local: Vec<_> = net.nodes.iter().map(|n| n.density.clone()).collect();
    let params: Vec<_> = (0..s.nodes.len()).map(|i| net.true_params(i).clone()).collect();
    let filter = s.cphd_config();
    let cfg = FusionConfig {
        merge: filter.merge,
        gate: filter.gate,
    };
    for l in 0..=6 {
        let fused = if l == 0 { local.clone() } else { consensus_round(&local, &net.graph, &params, l, &cfg)? };
        let mut worst: f64 = 0.0;
        for i in 0..fused.len() {
            for j in i + 1..fused.len() {
                let there = transform_by(&fused[j], &s.true_registration(i, j))?;
                worst = worst.max(gci_divergence(&[fused[i].clone(), there], &[0.5, 0.5], &cfg)?);
            }
        }
        let card: Vec<String> = fused.iter().map(|d| format!("{:.2}", d.mean_cardinality())).collect();
        println!("L = {l}: max pairwise divergence {worst:.4}, E[n] per node [{}]", card.join(", "));
    }
    Ok(())
}
