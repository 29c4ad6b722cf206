//! One-dimensional obstacle solver on `b^2 = sigma^2 s^2` against the CRR
//! tree and the closed-form European put, with the early-exercise boundary.
//!
//! cargo run --release --example solver_oracles

use basketproj::hjb::{exercise_boundary, solve, Flavor, FnVolatility, Grid, EXERCISE_TOL};
use basketproj::model::PutPayoff;
use basketproj::oracle::{binomial_american_put, black_scholes_put};

fn main() -> basketproj::error::Result<()> {
    let (sigma, r, k, t) = (0.2, 0.05, 100.0, 0.5);
    let coeff = FnVolatility { rate: r, vol_sq: move |_, s: f64| sigma * sigma * s * s };
    let g = PutPayoff::new(k)?;
    let tree = binomial_american_put(100.0, sigma, r, k, t, 10_000)?;
    let (exact, exact_delta) = black_scholes_put(100.0, k, r, sigma, t);
    println!("tree american {tree:.5}, closed-form european {exact:.5} (delta {exact_delta:.5})\n");

    println!("{:>6} {:>6} {:>11} {:>11} {:>10}", "N_t", "N_s", "american", "european", "delta");
    for n_t in [64, 256, 1024, 4096] {
        let grid = Grid::coupled(n_t, 16.0, 0.0, 400.0, t)?;
        let am = solve(&coeff, &g, &grid, Flavor::American)?;
        let eu = solve(&coeff, &g, &grid, Flavor::European)?;
        println!(
            "{n_t:>6} {:>6} {:>11.5} {:>11.5} {:>10.5}",
            grid.n_s(),
            am.value_at(0.0, 100.0)?,
            eu.value_at(0.0, 100.0)?,
            eu.delta(0, 100.0)
        );
        if n_t == 4096 {
            let boundary = exercise_boundary(&am, EXERCISE_TOL)?;
            println!("\nexercise boundary:");
            for n in (0..=n_t).step_by(512) {
                println!("  t {:.4}  s* {}", grid.time(n), boundary.level(n).map_or("-".into(), |l| format!("{l:.3}")));
            }
        }
    }
    Ok(())
}
