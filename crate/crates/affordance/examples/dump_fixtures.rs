//! Writes the built-in knowledge graphs and door rule as JSON fixtures.
//!
//! `cargo run -p affordance --example dump_fixtures -- <dir>`

use std::path::PathBuf;

use affordance::formats::write_json;
use affordance::synth::door_rule;
use affordance_core::kb::fixtures;

fn main() -> affordance::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()).into();
    write_json(&dir.join("push_down_handle.json"), &fixtures::push_down_handle())?;
    write_json(&dir.join("give_cup.json"), &fixtures::give_cup())?;
    write_json(&dir.join("door_openers.json"), &fixtures::door_openers())?;
    write_json(&dir.join("door_rule.json"), &door_rule())?;
    Ok(())
}
