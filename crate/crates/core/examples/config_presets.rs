//! Shipped presets, their canonical hashes, and parsing a custom experiment.
//!
//! cargo run --release --example config_presets

use basketproj::config::{preset, preset_text, ExperimentConfig, PRESETS};

fn main() -> basketproj::error::Result<()> {
    for &name in PRESETS {
        let cfg = preset(name)?;
        let model = cfg.model_spec()?;
        println!(
            "{name:<16} d={:<3} {:<14} strikes {:?} tiers {:?} paths {} hash {}",
            model.dim(),
            model.kind().name(),
            cfg.strikes,
            cfg.numerics.tiers,
            cfg.numerics.paths,
            &cfg.hash()[..16]
        );
    }

    let custom = "name = custom
[model]
kind = black_scholes
rate = 0.03
maturity = 1.0
x0 = constant(4, 50)
vols = uniform(7, 4, 0.15, 0.3)
correlation = random_correlation(7, 4, 0.2)
[portfolio]
weights = [1, 1, 1, 1]
normalize_sum = 1
[payoff]
strikes = atm
";
    let cfg = ExperimentConfig::parse(custom)?;
    println!("\ncustom experiment, canonical form:\n{}", cfg.serialize());
    println!("bs3d preset source:\n{}", preset_text("bs3d").unwrap());
    Ok(())
}
