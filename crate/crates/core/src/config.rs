//! Sectioned `key = value` experiment files and the shipped presets.
//!
//! ```text
//! [model]
//! kind = black_scholes            # or bachelier
//! rate = 0.05
//! maturity = 0.5
//! x0 = constant(3, 100)
//! vols = [0.2, 0.15, 0.1]         # with `correlation`, or give `sigma`
//! correlation = [[1, 0.8, 0.3], [0.8, 1, 0.1], [0.3, 0.1, 1]]
//!
//! [portfolio]
//! weights = [1, 1, 1]
//!
//! [payoff]
//! strikes = [280, 300, 320]       # or `atm`
//!
//! [numerics]
//! tiers = [512, 1024, 2048, 4096]
//! paths = 100000
//!
//! [outputs]
//! dir = out
//! ```
//!
//! Vectors and matrices are bracketed lists or generators:
//! `constant(n, v)`, `uniform(seed, n, lo, hi)`, `identity(n)`,
//! `random_correlation(seed, n, base)`, `upper_random(seed, n, diag)`.
//! Generators are expanded on parse; serialization writes explicit values,
//! so parse -> serialize -> parse is the identity.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::density::Coordinates;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, Portfolio, PutPayoff};
use crate::projection::{NewtonOptions, ProjectionOptions};
use crate::surface::SurfaceOptions;

/// How the loadings are specified.
#[derive(Debug, Clone, PartialEq)]
pub enum Loadings {
    /// `Sigma = diag(vols) * chol(correlation)`.
    Correlated { vols: Vec<f64>, correlation: Vec<Vec<f64>> },
    Sigma(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub kind: ModelKind,
    pub rate: f64,
    pub maturity: f64,
    pub x0: Vec<f64>,
    pub loadings: Loadings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    pub tiers: Vec<usize>,
    pub coupling: f64,
    pub paths: usize,
    pub pilot_paths: usize,
    pub pilot_steps: usize,
    pub degree: usize,
    pub slices: usize,
    pub abscissae: usize,
    pub floor: Option<f64>,
    pub coordinates: Option<Coordinates>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            tiers: vec![512, 1024, 2048, 4096],
            coupling: 16.0,
            paths: 100_000,
            pilot_paths: 100,
            pilot_steps: 64,
            degree: 3,
            slices: 16,
            abscissae: 24,
            floor: None,
            coordinates: None,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            ci_level: 0.95,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub dir: PathBuf,
    pub csv: bool,
    pub plots: bool,
    pub surface: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), csv: true, plots: true, surface: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelBlock,
    pub weights: Vec<f64>,
    pub strikes: Vec<f64>,
    pub numerics: Numerics,
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let sections = Sections { ini: &ini };
        sections.check_keys()?;

        let name = sections.get(None, "name").unwrap_or("experiment").to_string();
        let kind = match sections.require("model", "kind")? {
            "bachelier" => ModelKind::Bachelier,
            "black_scholes" | "blackscholes" => ModelKind::BlackScholes,
            other => return Err(Error::Config(format!("unknown model kind '{other}'"))),
        };
        let rate = parse_f64("model.rate", sections.require("model", "rate")?)?;
        let maturity = parse_f64("model.maturity", sections.require("model", "maturity")?)?;
        let x0 = parse_vector("model.x0", sections.require("model", "x0")?)?;
        let loadings = match (sections.get(Some("model"), "sigma"), sections.get(Some("model"), "vols")) {
            (Some(s), None) => Loadings::Sigma(parse_matrix("model.sigma", s)?),
            (None, Some(v)) => Loadings::Correlated {
                vols: parse_vector("model.vols", v)?,
                correlation: parse_matrix("model.correlation", sections.require("model", "correlation")?)?,
            },
            _ => return Err(Error::Config("model needs exactly one of 'sigma' or 'vols' + 'correlation'".into())),
        };
        let model = ModelBlock { kind, rate, maturity, x0, loadings };

        let mut weights = parse_vector("portfolio.weights", sections.require("portfolio", "weights")?)?;
        if let Some(total) = sections.get(Some("portfolio"), "normalize_sum") {
            let total = parse_f64("portfolio.normalize_sum", total)?;
            let sum: f64 = weights.iter().sum();
            if sum == 0.0 {
                return Err(Error::Config("cannot rescale weights summing to zero".into()));
            }
            weights.iter_mut().for_each(|w| *w *= total / sum);
        }

        let strikes = match sections.get(Some("payoff"), "strikes").unwrap_or("atm").trim() {
            "atm" => vec![weights.iter().zip(&model.x0).map(|(w, x)| w * x).sum()],
            s => parse_vector("payoff.strikes", s)?,
        };

        let d = Numerics::default();
        let n = |k: &str| sections.get(Some("numerics"), k);
        let numerics = Numerics {
            tiers: match n("tiers") {
                Some(v) => parse_vector("numerics.tiers", v)?.into_iter().map(|x| to_count("numerics.tiers", x)).collect::<Result<_>>()?,
                None => d.tiers,
            },
            coupling: opt(n("coupling"), "numerics.coupling", parse_f64)?.unwrap_or(d.coupling),
            paths: opt(n("paths"), "numerics.paths", parse_count)?.unwrap_or(d.paths),
            pilot_paths: opt(n("pilot_paths"), "numerics.pilot_paths", parse_count)?.unwrap_or(d.pilot_paths),
            pilot_steps: opt(n("pilot_steps"), "numerics.pilot_steps", parse_count)?.unwrap_or(d.pilot_steps),
            degree: opt(n("degree"), "numerics.degree", parse_count)?.unwrap_or(d.degree),
            slices: opt(n("slices"), "numerics.slices", parse_count)?.unwrap_or(d.slices),
            abscissae: opt(n("abscissae"), "numerics.abscissae", parse_count)?.unwrap_or(d.abscissae),
            floor: match n("floor") {
                None | Some("auto") => None,
                Some(v) => Some(parse_f64("numerics.floor", v)?),
            },
            coordinates: match n("coordinates") {
                None | Some("auto") => None,
                Some("price") => Some(Coordinates::Price),
                Some("log_price") => Some(Coordinates::LogPrice),
                Some(o) => return Err(Error::Config(format!("unknown coordinates '{o}'"))),
            },
            newton_tol: opt(n("newton_tol"), "numerics.newton_tol", parse_f64)?.unwrap_or(d.newton_tol),
            newton_max_iter: opt(n("newton_max_iter"), "numerics.newton_max_iter", parse_count)?.unwrap_or(d.newton_max_iter),
            ci_level: opt(n("ci_level"), "numerics.ci_level", parse_f64)?.unwrap_or(d.ci_level),
            seed: opt(n("seed"), "numerics.seed", |k, v| v.trim().parse::<u64>().map_err(|e| bad(k, e)))?.unwrap_or(d.seed),
        };

        let o = Outputs::default();
        let out = |k: &str| sections.get(Some("outputs"), k);
        let outputs = Outputs {
            dir: out("dir").map(PathBuf::from).unwrap_or(o.dir),
            csv: opt(out("csv"), "outputs.csv", parse_bool)?.unwrap_or(o.csv),
            plots: opt(out("plots"), "outputs.plots", parse_bool)?.unwrap_or(o.plots),
            surface: opt(out("surface"), "outputs.surface", parse_bool)?.unwrap_or(o.surface),
        };
        let cfg = Self { name, model, weights, strikes, numerics, outputs };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Consistency of sizes and ranges; the model itself is checked by
    /// [`ExperimentConfig::model_spec`].
    pub fn check(&self) -> Result<()> {
        let d = self.model.x0.len();
        let c = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.to_string())) };
        c(d > 0, "x0 must not be empty")?;
        c(self.weights.len() == d, "weights and x0 differ in length")?;
        match &self.model.loadings {
            Loadings::Correlated { vols, correlation } => {
                c(vols.len() == d, "vols and x0 differ in length")?;
                c(correlation.len() == d && correlation.iter().all(|r| r.len() == d), "correlation must be d x d")?;
            }
            Loadings::Sigma(s) => {
                c(s.len() == d && !s.is_empty() && s.iter().all(|r| r.len() == s[0].len()), "sigma must have d equal rows")?;
            }
        }
        c(!self.strikes.is_empty() && self.strikes.iter().all(|k| *k > 0.0), "strikes must be positive")?;
        let t = &self.numerics.tiers;
        c(!t.is_empty() && t.windows(2).all(|w| w[1] > w[0]), "tiers must be strictly increasing")?;
        c(t.iter().all(|n| *n > 0 && t.last().unwrap() % n == 0), "every tier must divide the finest tier")?;
        c(self.numerics.paths >= 30, "need at least 30 paths")?;
        c(self.numerics.pilot_paths >= 2, "need at least 2 pilot paths")?;
        c(self.numerics.abscissae > self.numerics.degree, "need more abscissae than the polynomial degree")?;
        c(self.numerics.slices >= 1 && self.numerics.pilot_steps >= 1, "slices and pilot steps must be positive")?;
        c(self.numerics.coupling > 0.0, "coupling must be positive")?;
        c(self.numerics.ci_level > 0.0 && self.numerics.ci_level < 1.0, "ci_level must be in (0, 1)")?;
        c(self.numerics.floor.map_or(true, |f| f > 0.0), "floor must be positive")?;
        self.model_spec()?;
        self.portfolio()?;
        self.payoffs()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let x0 = DVector::from_vec(m.x0.clone());
        let spec = match &m.loadings {
            Loadings::Correlated { vols, correlation } => {
                ModelSpec::from_correlation(m.kind, m.rate, vols, &to_matrix(correlation), x0, m.maturity)
            }
            Loadings::Sigma(s) => ModelSpec::new(m.kind, m.rate, to_matrix(s), x0, m.maturity),
        };
        spec.map_err(|e| Error::Config(format!("model: {e}")))
    }

    pub fn portfolio(&self) -> Result<Portfolio> {
        Portfolio::new(self.weights.clone()).map_err(|e| Error::Config(format!("portfolio: {e}")))
    }

    pub fn payoffs(&self) -> Result<Vec<PutPayoff>> {
        self.strikes.iter().map(|&k| PutPayoff::new(k).map_err(|e| Error::Config(e.to_string()))).collect()
    }

    pub fn surface_options(&self) -> SurfaceOptions {
        let n = &self.numerics;
        SurfaceOptions {
            degree: n.degree,
            slices: n.slices,
            abscissae: n.abscissae,
            pilot_paths: n.pilot_paths,
            pilot_steps: n.pilot_steps,
            floor: n.floor,
            projection: self.projection_options(),
            seed: n.seed ^ 0x5eed_0001,
        }
    }

    pub fn projection_options(&self) -> ProjectionOptions {
        ProjectionOptions {
            coordinates: self.numerics.coordinates,
            newton: NewtonOptions { tol: self.numerics.newton_tol, max_iter: self.numerics.newton_max_iter },
        }
    }

    /// Canonical text with every generator expanded.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let v = |x: &[f64]| format!("[{}]", x.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", "));
        let mtx = |m: &[Vec<f64>]| format!("[{}]", m.iter().map(|r| v(r)).collect::<Vec<_>>().join(", "));
        let m = &self.model;
        let n = &self.numerics;
        let o = &self.outputs;
        let kind = match m.kind {
            ModelKind::Bachelier => "bachelier",
            ModelKind::BlackScholes => "black_scholes",
        };
        writeln!(s, "name = {}\n", self.name).unwrap();
        writeln!(s, "[model]\nkind = {kind}\nrate = {:?}\nmaturity = {:?}\nx0 = {}", m.rate, m.maturity, v(&m.x0)).unwrap();
        match &m.loadings {
            Loadings::Correlated { vols, correlation } => {
                writeln!(s, "vols = {}\ncorrelation = {}", v(vols), mtx(correlation)).unwrap()
            }
            Loadings::Sigma(sig) => writeln!(s, "sigma = {}", mtx(sig)).unwrap(),
        }
        writeln!(s, "\n[portfolio]\nweights = {}", v(&self.weights)).unwrap();
        writeln!(s, "\n[payoff]\nstrikes = {}", v(&self.strikes)).unwrap();
        let tiers = n.tiers.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ");
        writeln!(s, "\n[numerics]\ntiers = [{tiers}]\ncoupling = {:?}\npaths = {}", n.coupling, n.paths).unwrap();
        writeln!(s, "pilot_paths = {}\npilot_steps = {}\ndegree = {}\nslices = {}\nabscissae = {}", n.pilot_paths, n.pilot_steps, n.degree, n.slices, n.abscissae).unwrap();
        writeln!(s, "floor = {}", n.floor.map_or("auto".to_string(), |f| format!("{f:?}"))).unwrap();
        let coords = match n.coordinates {
            None => "auto",
            Some(Coordinates::Price) => "price",
            Some(Coordinates::LogPrice) => "log_price",
        };
        writeln!(s, "coordinates = {coords}\nnewton_tol = {:?}\nnewton_max_iter = {}", n.newton_tol, n.newton_max_iter).unwrap();
        writeln!(s, "ci_level = {:?}\nseed = {}", n.ci_level, n.seed).unwrap();
        writeln!(s, "\n[outputs]\ndir = {}\ncsv = {}\nplots = {}\nsurface = {}", o.dir.display(), o.csv, o.plots, o.surface).unwrap();
        s
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }
}

struct Sections<'a> {
    ini: &'a Ini,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("model", &["kind", "rate", "maturity", "x0", "vols", "correlation", "sigma"]),
    ("portfolio", &["weights", "normalize_sum"]),
    ("payoff", &["strikes"]),
    (
        "numerics",
        &[
            "tiers", "coupling", "paths", "pilot_paths", "pilot_steps", "degree", "slices", "abscissae", "floor",
            "coordinates", "newton_tol", "newton_max_iter", "ci_level", "seed",
        ],
    ),
    ("outputs", &["dir", "csv", "plots", "surface"]),
];

impl Sections<'_> {
    fn check_keys(&self) -> Result<()> {
        for (sec, props) in self.ini.iter() {
            let allowed: &[&str] = match sec {
                None => &["name"],
                Some(name) => KNOWN
                    .iter()
                    .find(|(s, _)| *s == name)
                    .map(|(_, k)| *k)
                    .ok_or_else(|| Error::Config(format!("unknown section [{name}]")))?,
            };
            for (k, _) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(Error::Config(format!("unknown key '{k}' in [{}]", sec.unwrap_or(""))));
                }
            }
        }
        Ok(())
    }

    fn get(&self, section: Option<&str>, key: &str) -> Option<&str> {
        self.ini.section(section).and_then(|p| p.get(key))
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(Some(section), key).ok_or_else(|| Error::Config(format!("missing {section}.{key}")))
    }
}

fn bad(key: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {e}"))
}

fn opt<T>(v: Option<&str>, key: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
    v.map(|v| f(key, v)).transpose()
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.trim().parse().map_err(|e| bad(key, e))?;
    if !x.is_finite() {
        return Err(bad(key, "not finite"));
    }
    Ok(x)
}

fn parse_count(key: &str, v: &str) -> Result<usize> {
    to_count(key, parse_f64(key, v)?)
}

fn to_count(key: &str, x: f64) -> Result<usize> {
    if x < 0.0 || x.fract() != 0.0 {
        return Err(bad(key, format!("{x} is not a non-negative integer")));
    }
    Ok(x as usize)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(bad(key, format!("'{o}' is not a boolean"))),
    }
}

/// `name(a, b, ...)` split into the name and its numeric arguments.
fn generator(v: &str) -> Option<(&str, Vec<&str>)> {
    let open = v.find('(')?;
    let inner = v.strip_suffix(')')?.get(open + 1..)?;
    Some((v[..open].trim(), inner.split(',').map(str::trim).collect()))
}

fn parse_vector(key: &str, v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    if let Some((name, args)) = generator(v) {
        let num = |i: usize| -> Result<f64> { parse_f64(key, args.get(i).ok_or_else(|| bad(key, "missing argument"))?) };
        let count = |i: usize| -> Result<usize> { to_count(key, num(i)?) };
        return match (name, args.len()) {
            ("constant", 2) => Ok(vec![num(1)?; count(0)?]),
            ("uniform", 4) => Ok(uniform(num(0)? as u64, count(1)?, num(2)?, num(3)?)),
            _ => Err(bad(key, format!("unknown vector generator '{v}'"))),
        };
    }
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| bad(key, "expected a bracketed list"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|x| parse_f64(key, x)).collect()
}

fn parse_matrix(key: &str, v: &str) -> Result<Vec<Vec<f64>>> {
    let v = v.trim();
    if let Some((name, args)) = generator(v) {
        let num = |i: usize| -> Result<f64> { parse_f64(key, args.get(i).ok_or_else(|| bad(key, "missing argument"))?) };
        let count = |i: usize| -> Result<usize> { to_count(key, num(i)?) };
        let m = match (name, args.len()) {
            ("identity", 1) => DMatrix::identity(count(0)?, count(0)?),
            ("random_correlation", 3) => random_correlation(num(0)? as u64, count(1)?, num(2)?),
            ("upper_random", 3) => upper_random(num(0)? as u64, count(1)?, num(2)?),
            _ => return Err(bad(key, format!("unknown matrix generator '{v}'"))),
        };
        return Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect());
    }
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| bad(key, "expected a bracketed list of rows"))?;
    let mut rows = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let end = rest.find(']').ok_or_else(|| bad(key, "unterminated row"))?;
        rows.push(parse_vector(key, &rest[..=end])?);
        rest = rest[end + 1..].trim_start().trim_start_matches(',').trim_start();
    }
    Ok(rows)
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.first().map_or(0, |r| r.len()), |i, j| rows[i][j])
}

/// `n` draws from `U[lo, hi]`.
pub fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Identity plus symmetric `N(0, base^2)` off-diagonal noise, projected to a
/// correlation matrix by clipping eigenvalues at `1e-3` and rescaling to a
/// unit diagonal.
pub fn random_correlation(seed: u64, n: usize, base: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let z: f64 = rng.sample(StandardNormal);
            a[(i, j)] = base * z;
            a[(j, i)] = base * z;
        }
    }
    let eig = SymmetricEigen::new(a);
    let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(1e-3)));
    let b = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
    let scale = DVector::from_fn(n, |i, _| 1.0 / b[(i, i)].sqrt());
    let mut c = DMatrix::from_fn(n, n, |i, j| b[(i, j)] * scale[i] * scale[j]);
    for i in 0..n {
        c[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Upper-triangular loadings: `diag` on the diagonal, `N(0, 1)` above it.
pub fn upper_random(seed: u64, n: usize, diag: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag;
        for j in i + 1..n {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Names of the shipped presets.
pub const PRESETS: &[&str] = &["sum2d", "bachelier-exact", "bs3d", "bs10d", "bs25d"];

/// Shipped experiment files.
pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "sum2d" => include_str!("../presets/sum2d.ini"),
        "bachelier-exact" => include_str!("../presets/bachelier-exact.ini"),
        "bs3d" => include_str!("../presets/bs3d.ini"),
        "bs10d" => include_str!("../presets/bs10d.ini"),
        "bs25d" => include_str!("../presets/bs25d.ini"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}' (available: {})", PRESETS.join(", "))))?;
    ExperimentConfig::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let again = ExperimentConfig::parse(&cfg.serialize()).unwrap();
            assert_eq!(cfg, again, "{name}");
            assert_eq!(cfg.hash(), again.hash());
            cfg.model_spec().unwrap();
            cfg.portfolio().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn generators() {
        let c = random_correlation(3, 25, 0.2);
        assert!((0..25).all(|i| c[(i, i)] == 1.0));
        assert_eq!(c, c.transpose());
        assert!(SymmetricEigen::new(c.clone()).eigenvalues.min() > 0.0);
        assert_eq!(random_correlation(3, 25, 0.2), c);
        let u = upper_random(1, 4, 20.0);
        assert!((0..4).all(|i| u[(i, i)] == 20.0 && (0..i).all(|j| u[(i, j)] == 0.0)));
        let w = uniform(5, 100, 0.5, 1.5);
        assert!(w.iter().all(|x| (0.5..1.5).contains(x)));
    }

    #[test]
    fn parse_details() {
        let text = "[model]\nkind = bachelier\nrate = 0.05\nmaturity = 0.25\nx0 = constant(2, 100)\nsigma = [[20, 1], [0, 20]]\n\
                    [portfolio]\nweights = uniform(1, 2, 0.5, 1.5)\nnormalize_sum = 2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert!((cfg.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let atm: f64 = cfg.weights.iter().map(|w| w * 100.0).sum();
        assert!((cfg.strikes[0] - atm).abs() < 1e-12);
        assert_eq!(cfg.numerics, Numerics::default());
        assert_eq!(ExperimentConfig::parse(&cfg.serialize()).unwrap(), cfg);

        for broken in [
            text.replace("bachelier", "heston"),
            text.replace("[portfolio]", "[portfolio]\ncolour = red"),
            text.replace("constant(2, 100)", "[100]"),
            format!("{text}[numerics]\ntiers = [1024, 512]\n"),
            format!("{text}[numerics]\ntiers = [512, 1000]\n"),
            format!("{text}[numerics]\npaths = 1.5\n"),
            text.replace("sigma = [[20, 1], [0, 20]]", "sigma = [[20, 1], [0, 20]\nvols = [1, 1]"),
        ] {
            assert!(matches!(ExperimentConfig::parse(&broken), Err(Error::Config(_))), "{broken}");
        }
    }
}
