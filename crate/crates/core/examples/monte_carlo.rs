//! Small Monte Carlo comparison of the three operating modes on one
//! reference network, reported over the pre- and post-consensus windows.
//!
//! `cargo run --release --example monte_carlo -- [ref_tree|ref_cycles] [runs]`

use regtrack::metrics::mean;
use regtrack::output::aggregate_registration;
use regtrack::scenario::Scenario;
use regtrack::sim::{run_monte_carlo, Mode, RunOptions};

fn main() -> regtrack::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map_or("ref_tree", String::as_str);
    let runs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let scenario = Scenario::load(name)?;
    let start = scenario.consensus.start_step;
    for mode in [Mode::LocalOnly, Mode::CcphdPk, Mode::JsrDmt] {
        let records = run_monte_carlo(&scenario, &RunOptions::new(mode, 11), runs)?;
        let tracks = || records.iter().flat_map(|r| &r.tracks);
        let before = mean(tracks().filter(|t| t.step >= 50 && t.step < start).map(|t| t.ospa_m)).unwrap_or(f64::NAN);
        let after = mean(tracks().filter(|t| t.step >= 200).map(|t| t.ospa_m)).unwrap_or(f64::NAN);
        let last = aggregate_registration(&records).into_iter().filter(|a| a.step == scenario.steps);
        let worst_drift = last.map(|a| a.mean_drift_error_m).fold(0.0, f64::max);
        let secs: f64 = records.iter().map(|r| r.seconds).sum();
        println!(
            "{:>10}: OSPA {before:5.2} m before consensus, {after:5.2} m late; worst final drift error {worst_drift:.3} m; {secs:.1} s",
            mode.as_str()
        );
    }
    Ok(())
}
