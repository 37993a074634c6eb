//! Runs a JSON configuration through the same path as `edgecache simulate`
//! and prints the per-run summary.
//!
//! cargo run --release --example run_config -- examples/configs/berlin_quick.json [out_dir]

use std::path::PathBuf;

use edgecache::cli::{cmd_simulate, Overrides};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "examples/configs/berlin_quick.json".into()));
    let overrides = Overrides {
        out: Some(args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("edgecache-example"))),
        ..Overrides::default()
    };
    let summary = cmd_simulate(&config, &overrides)?;
    println!("wrote {}", summary.csv.display());
    Ok(())
}
