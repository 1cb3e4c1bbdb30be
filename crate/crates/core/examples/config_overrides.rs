//! Loads a run configuration from TOML, applies `key=value` overrides the
//! way the command line does, and prints the resolved snapshot.
//!
//!     cargo run --release --example config_overrides

use ssdiff::config::RunConfig;

fn main() -> ssdiff::error::Result<()> {
    let text = "[network]\nbands = 4\n\n[train]\nlr = 0.002\n";
    let overrides = ["train.lr=0.0005".to_string(), "sample.steps=50".to_string(), "network.variant=V3".to_string()];
    let cfg = RunConfig::from_toml(text, &overrides)?;
    cfg.validate()?;
    println!("{}", cfg.to_toml()?);
    match RunConfig::from_toml(text, &["train.bogus=1".to_string()]) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown keys are rejected"),
    }
    Ok(())
}
