use basketproj::density::{chart, finite_difference_derivatives, log_integrands, Coordinates, LogFunction};
use basketproj::hjb::{exercise_boundary, solve, Flavor, FnVolatility, Grid, EXERCISE_TOL};
use basketproj::mc::{simulate_tiers, SimulationOptions, StrikeJob, TierJob};
use basketproj::model::{ModelKind, ModelSpec, Portfolio, PutPayoff};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn bs3d() -> ModelSpec {
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.8, 0.3, 0.8, 1.0, 0.1, 0.3, 0.1, 1.0]);
    ModelSpec::from_correlation(ModelKind::BlackScholes, 0.05, &[0.2, 0.15, 0.1], &corr, DVector::from_element(3, 100.0), 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, rng_seed: RngSeed::Fixed(20241014), ..ProptestConfig::default() })]

    #[test]
    fn obstacle_and_dirichlet_rows(sigma in 0.05f64..0.8, r in 0.0f64..0.12, k in 20.0f64..200.0, n_t in 16usize..200) {
        let coeff = FnVolatility { rate: r, vol_sq: move |_, s: f64| sigma * sigma * s * s };
        let grid = Grid::coupled(n_t, 16.0, 0.0, 4.0 * k, 1.0).unwrap();
        let g = PutPayoff::new(k).unwrap();
        let am = solve(&coeff, &g, &grid, Flavor::American).unwrap();
        let eu = solve(&coeff, &g, &grid, Flavor::European).unwrap();
        let last = grid.n_s() - 1;
        for n in 0..=grid.n_t() {
            prop_assert_eq!(am.at(n, 0), g.value(grid.node(0)));
            prop_assert_eq!(am.at(n, last), g.value(grid.node(last)));
            prop_assert_eq!(eu.at(n, last), g.value(grid.node(last)));
            for m in 0..=last {
                prop_assert!(am.at(n, m) >= g.value(grid.node(m)) - 1e-12);
                prop_assert!(am.at(n, m) >= eu.at(n, m) - 1e-10);
            }
        }
    }

    #[test]
    fn payoff_is_lipschitz(k in 1.0f64..500.0, a in -100.0f64..800.0, b in -100.0f64..800.0) {
        let g = PutPayoff::new(k).unwrap();
        prop_assert!((g.value(a) - g.value(b)).abs() <= (a - b).abs() + 1e-12);
        prop_assert!(g.value(a) >= 0.0);
    }

    #[test]
    fn basket_payoff_is_lipschitz(
        w in proptest::collection::vec(-3.0f64..3.0, 4),
        x in proptest::collection::vec(0.0f64..300.0, 4),
        y in proptest::collection::vec(0.0f64..300.0, 4),
    ) {
        prop_assume!(w.iter().any(|v| *v > 1e-3));
        let p = Portfolio::new(w.clone()).unwrap();
        let g = PutPayoff::new(250.0).unwrap();
        let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
        let bound: f64 = w.iter().map(|v| v.abs()).sum::<f64>() * (&x - &y).amax();
        prop_assert!((g.value(p.value(&x).unwrap()) - g.value(p.value(&y).unwrap())).abs() <= bound + 1e-9);
    }

    #[test]
    fn chart_round_trip(w in proptest::collection::vec(0.05f64..3.0, 2..9), flip in any::<u8>(), s in -500.0f64..500.0, z in proptest::collection::vec(-300.0f64..300.0, 8)) {
        let w: Vec<f64> = w.iter().enumerate().map(|(i, v)| if flip >> (i % 8) & 1 == 1 { -v } else { *v }).collect();
        let d = w.len();
        let Ok(p) = Portfolio::new(w) else { return Ok(()) };
        let c = chart(&p, s).unwrap();
        let z = DVector::from_column_slice(&z[..d - 1]);
        let x = c.point(&z);
        prop_assert!((p.value(&x).unwrap() - s).abs() <= 1e-10 * s.abs().max(1.0));
        prop_assert!((c.point(&c.project(&x)) - &x).amax() <= 1e-10 * x.amax().max(1.0));
    }

    #[test]
    fn derivatives_match_finite_differences(t in 0.05f64..0.5, rel in 0.9f64..1.1, u in proptest::collection::vec(0.85f64..1.15, 3), log in any::<bool>()) {
        let model = bs3d();
        let p = Portfolio::new(vec![1.0, 2.0, 0.5]).unwrap();
        let s = p.value(model.x0()).unwrap() * rel;
        let coords = if log { Coordinates::LogPrice } else { Coordinates::Price };
        let li = log_integrands(&model, &p, t, s, coords).unwrap();
        let piv = li.chart().pivot();
        let mut x = DVector::from_fn(3, |i, _| model.x0()[i] * u[i]);
        let rest: f64 = (0..3).filter(|&i| i != piv).map(|i| p.weights()[i] * x[i]).sum();
        x[piv] = (s - rest) / p.weights()[piv];
        prop_assume!(x[piv] > 1.0);
        let z = li.coordinates_of(&x);
        let scale = if log { 1.0 } else { 100.0 };
        for func in [li.f(), li.ftilde()] {
            let (_, g, h) = func.derivatives(&z).unwrap();
            let (gfd, hfd) = finite_difference_derivatives(|w| func.value(w), &z, 1e-4, scale);
            prop_assert!((&g - &gfd).amax() <= 1e-5 * g.amax().max(h.amax() * scale), "grad {} vs {}", g, gfd);
            prop_assert!((&h - &hfd).amax() <= 1e-5 * h.amax(), "hess {} vs {}", h, hfd);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, rng_seed: RngSeed::Fixed(20241014), ..ProptestConfig::default() })]

    #[test]
    fn bounds_ordered_and_seed_stable(seed in any::<u64>(), k in 85.0f64..115.0, sigma in 0.1f64..0.4) {
        let m = ModelSpec::new(ModelKind::BlackScholes, 0.05, nalgebra::dmatrix![sigma], DVector::from_element(1, 100.0), 0.5).unwrap();
        let p = Portfolio::new(vec![1.0]).unwrap();
        let coeff = FnVolatility { rate: 0.05, vol_sq: move |_, s: f64| sigma * sigma * s * s };
        let grid = Grid::coupled(64, 16.0, 0.0, 400.0, 0.5).unwrap();
        let g = PutPayoff::new(k).unwrap();
        let am = solve(&coeff, &g, &grid, Flavor::American).unwrap();
        let boundary = exercise_boundary(&am, EXERCISE_TOL).unwrap();
        let deltas = am.delta_table();
        let opts = SimulationOptions { paths: 1000, seed, ci_level: 0.95 };
        let run = || {
            let job = StrikeJob { payoff: g, boundary: &boundary, deltas: &deltas };
            simulate_tiers(&m, &p, &[TierJob { n_t: 64, strikes: vec![job] }], &opts).unwrap()
        };
        let a = run();
        prop_assert_eq!(&a, &run());
        prop_assert!(a[0][0].is_ordered(), "{:?}", a[0][0]);
    }
}
