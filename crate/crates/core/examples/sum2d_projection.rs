//! Projected volatility of the two-asset sum basket: Laplace approximation in
//! both coordinate systems against Gauss-Legendre quadrature and a binned
//! Monte Carlo estimate.
//!
//! cargo run --release --example sum2d_projection

use basketproj::config::preset;
use basketproj::density::Coordinates;
use basketproj::oracle::{binned_conditional_vol, quadrature_projected_vol, BinSpec, QuadratureSpec};
use basketproj::projection::{projected_vol_sq, ProjectionOptions};

fn main() -> basketproj::error::Result<()> {
    let cfg = preset("sum2d")?;
    let (model, p) = (cfg.model_spec()?, cfg.portfolio()?);
    let price = ProjectionOptions { coordinates: Some(Coordinates::Price), ..Default::default() };

    println!("{:>8} {:>12} {:>12} {:>12}", "s", "log-price", "price", "quadrature");
    for s in [180.0, 190.0, 200.0, 210.0, 220.0] {
        let lp = projected_vol_sq(&model, &p, 1.0, s, &ProjectionOptions::default())?;
        let pr = projected_vol_sq(&model, &p, 1.0, s, &price)?;
        let q = quadrature_projected_vol(&model, &p, 1.0, s, &QuadratureSpec::default())?;
        println!("{s:>8.1} {lp:>12.4} {pr:>12.4} {q:>12.4}");
    }

    println!("\nbinned exact-in-law estimate (200000 paths)");
    let bins = BinSpec { count: 9, range: Some((173.0, 227.0)), min_samples: 50 };
    for b in binned_conditional_vol(&model, &p, 1.0, 200_000, &bins, 1)? {
        let lp = projected_vol_sq(&model, &p, 1.0, b.s_mean, &ProjectionOptions::default())?;
        println!("s {:>8.3} binned {:>9.3} ± {:<7.3} laplace {lp:>9.3} ({} samples)", b.s_mean, b.estimate, b.se, b.samples);
    }
    Ok(())
}
