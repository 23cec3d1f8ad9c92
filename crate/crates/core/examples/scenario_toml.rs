//! Prints a built-in scenario as TOML and validates an edited copy.
//!
//! `cargo run --example scenario_toml -- ref_cycles > my_scenario.toml`

use regtrack::scenario::Scenario;

fn main() -> regtrack::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "ref_tree".into());
    let scenario = Scenario::load(&name)?;
    print!("{}", scenario.to_toml()?);

    let mut broken = scenario.clone();
    if let Some(w) = broken.consensus.weights.as_mut() {
        w[2][2] -= 0.1;
    }
    broken.registration_truth[0].angle_deg += 2.0;
    for v in broken.validate() {
        eprintln!("edited copy: {v}");
    }
    Ok(())
}
