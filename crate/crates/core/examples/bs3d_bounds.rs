//! Three-asset Black-Scholes basket put: projected surface, obstacle solve,
//! and Monte Carlo lower/upper bounds per strike. Writes CSV and data files.
//!
//! cargo run --release --example bs3d_bounds [paths] [out_dir]

use std::path::PathBuf;

use basketproj::config::preset;
use basketproj::pipeline::run;

fn main() -> basketproj::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = preset("bs3d")?;
    cfg.strikes = vec![280.0, 300.0, 320.0];
    cfg.numerics.tiers = vec![1024];
    cfg.numerics.paths = args.next().and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| cfg.outputs.dir.clone());
    let report = run(&cfg, Some(&out))?;
    print!("{}", report.summary());
    println!("outputs in {}", out.display());
    Ok(())
}
