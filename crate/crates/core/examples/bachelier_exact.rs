//! Five-asset Bachelier basket: the projected coefficient is an exact
//! constant, so the bounds bracket the true projected price.
//!
//! cargo run --release --example bachelier_exact [paths]

use basketproj::config::preset;
use basketproj::pipeline::{run, surface_deviation};
use basketproj::projection::bachelier_projected_vol_sq;

fn main() -> basketproj::error::Result<()> {
    let mut cfg = preset("bachelier-exact")?;
    cfg.numerics.tiers = vec![512, 1024];
    cfg.numerics.paths = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let (model, p) = (cfg.model_spec()?, cfg.portfolio()?);
    let exact = bachelier_projected_vol_sq(&model, &p);
    let report = run(&cfg, None)?;
    println!("w Omega w^T = {exact:.6}, surface deviation {:e}\n", surface_deviation(&report.surface, exact));
    print!("{}", report.summary());
    Ok(())
}
