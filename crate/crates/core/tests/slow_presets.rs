//! Higher-dimensional presets; slow on a laptop, run with `--ignored`.

use basketproj::config::preset;
use basketproj::pipeline::run;

fn gap_gate(name: &str) {
    let cfg = preset(name).unwrap();
    let report = run(&cfg, None).unwrap();
    print!("{}", report.summary());
    assert!(report.passed());
    for row in report.top_tier() {
        assert!(row.bounds.relative_gap() <= 0.03, "K={} gap {}", row.strike, row.bounds.relative_gap());
    }
}

#[test]
#[ignore]
fn bs10d_gap() {
    gap_gate("bs10d");
}

#[test]
#[ignore]
fn bs25d_gap() {
    gap_gate("bs25d");
}
