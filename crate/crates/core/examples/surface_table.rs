//! Builds the projected coefficient surface for a preset, prints slice fits,
//! and round-trips the table through its text format.
//!
//! cargo run --release --example surface_table [preset]

use basketproj::config::preset;
use basketproj::hjb::LocalVolatility;
use basketproj::pipeline::surface;
use basketproj::surface::CoefficientSurface;

fn main() -> basketproj::error::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "bs3d".into());
    let cfg = preset(&name)?;
    let build = surface(&cfg)?;
    let surf = &build.surface;
    let frame = surf.frame();
    println!("{name}: {} evaluations ({} skipped), floor {:.4}, rectangle [{:.2}, {:.2}]", build.evaluations.len(), build.skipped, surf.floor(), frame.s_min, frame.s_max);
    for sl in surf.slices() {
        println!("t {:.4}  center {:>9.3}  halfwidth {:>8.3}  rms residual {:.2e}", sl.time, sl.center, sl.halfwidth, sl.residual_rms);
    }
    let s0 = cfg.portfolio()?.weights().dot(cfg.model_spec()?.x0());
    let t = 0.5 * frame.maturity;
    println!("\nb^2({t}, {s0}) = {:.4}", surf.vol_sq(t, s0));

    let mut text = Vec::new();
    surf.write_table(&mut text)?;
    let back = CoefficientSurface::read_table(text.as_slice())?;
    println!("table round trip: {} bytes, identical evaluation {}", text.len(), back.vol_sq(t, s0) == surf.vol_sq(t, s0));
    Ok(())
}
