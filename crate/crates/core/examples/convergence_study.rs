//! Time-step bias of the hitting time of the exercise region and of the
//! running basket maximum, on coupled tiers with a frozen boundary.
//!
//! cargo run --release --example convergence_study [paths]

use basketproj::config::preset;
use basketproj::pipeline::{forward_bias, run};

fn main() -> basketproj::error::Result<()> {
    let mut cfg = preset("bs3d")?;
    cfg.strikes = vec![300.0];
    cfg.numerics.paths = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20_000);
    // Only the finest solve is needed; the boundary is subsampled per tier.
    let mut top = cfg.clone();
    top.numerics.tiers = vec![*cfg.numerics.tiers.last().unwrap()];
    top.numerics.paths = 1000;
    let report = run(&top, None)?;
    for fb in forward_bias(&cfg, &report.boundaries)? {
        println!("K = {}", fb.strike);
        println!("{:>6} {:>18} {:>18} {:>20} {:>20}", "N_t", "E[tau]", "E[max S]", "|bias tau|", "|bias max|");
        for t in &fb.tiers {
            let b = |x: Option<basketproj::mc::Bias>| x.map_or("-".into(), |b| format!("{:.2e} ± {:.1e}", b.value, b.se));
            println!(
                "{:>6} {:>9.5} ± {:<6.5} {:>9.4} ± {:<6.4} {:>20} {:>20}",
                t.n_t, t.hitting_time.mean, t.hitting_time.se, t.maximum.mean, t.maximum.se, b(t.bias_hitting), b(t.bias_maximum)
            );
        }
        let f = |x: Option<f64>| x.map_or("undefined".into(), |v| format!("{v:.3}"));
        println!("decay slopes: hitting {}, maximum {} (reference 0.5)", f(fb.slope_hitting), f(fb.slope_maximum));
    }
    Ok(())
}
