//! One Monte Carlo run of a reference scenario, summarized by time window.
//!
//! `cargo run --release --example reference_run -- [ref_tree|ref_cycles] [jsr-dmt|ccphd-pk|local-only] [seed]`

use regtrack::metrics::mean;
use regtrack::scenario::Scenario;
use regtrack::sim::{generate_truth, run_single, Mode, RunOptions};

fn main() -> regtrack::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map_or("ref_tree", String::as_str);
    let mode = match args.get(2).map_or("jsr-dmt", String::as_str) {
        "ccphd-pk" => Mode::CcphdPk,
        "local-only" => Mode::LocalOnly,
        _ => Mode::JsrDmt,
    };
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let scenario = Scenario::load(name)?;
    let truth = generate_truth(&scenario);
    let rec = run_single(&scenario, &truth, &RunOptions::new(mode, seed), 0);
    if let Some(f) = &rec.failure {
        eprintln!("run failed: {f}");
    }
    println!("{name} {} seed {seed}: {:.1} s", mode.as_str(), rec.seconds);
    for w in (0..scenario.steps).step_by(25) {
        let in_window = |s: usize| s > w && s <= w + 25;
        let o = mean(rec.tracks.iter().filter(|r| in_window(r.step)).map(|r| r.ospa_m)).unwrap_or(f64::NAN);
        let c = mean(rec.tracks.iter().filter(|r| in_window(r.step)).map(|r| r.estimated_cardinality)).unwrap_or(f64::NAN);
        let d = mean(rec.registration.iter().filter(|r| in_window(r.step)).map(|r| r.drift_error_m)).unwrap_or(f64::NAN);
        let a = mean(rec.registration.iter().filter(|r| in_window(r.step)).map(|r| r.angle_error_rad.abs().to_degrees()))
            .unwrap_or(f64::NAN);
        println!("steps {:>3}-{:>3}: ospa {o:6.2} m  card {c:5.2}  drift err {d:8.2} m  angle err {a:7.3} deg", w + 1, w + 25);
    }
    Ok(())
}
