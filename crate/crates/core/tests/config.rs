use basketproj::config::{preset, ExperimentConfig, PRESETS};

#[test]
fn presets_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for &name in PRESETS {
        let cfg = preset(name).unwrap();
        let path = dir.path().join(format!("{name}.ini"));
        std::fs::write(&path, cfg.serialize()).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(back, cfg, "{name}");
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.hash().len(), 64);
        cfg.model_spec().unwrap();
        cfg.payoffs().unwrap();
    }
}

#[test]
fn hash_tracks_content() {
    let a = preset("bs3d").unwrap();
    let mut b = a.clone();
    b.numerics.seed += 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn rejects_malformed_configs() {
    let base = preset("sum2d").unwrap().serialize();
    for bad in [
        base.replace("kind = black_scholes", "kind = heston"),
        base.replace("[portfolio]", "[portfolio]\nextra = 1"),
        base.replace("weights = [1.0, 1.0]", "weights = [1.0]"),
        format!("{base}\n[mystery]\nx = 1\n"),
        base.replace("maturity = 1.0", "maturity = -1"),
    ] {
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.is_config(), "{err}");
    }
}
