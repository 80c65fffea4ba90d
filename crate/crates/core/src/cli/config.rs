//! Strict `key = value` run configuration.
//!
//! ```text
//! [grid]
//! dims = 1
//! n1 = 64
//!
//! [species.1]
//! delta = 0.01
//! coeff = skt
//! d = 0.05
//! d_1 = 0
//! d_2 = 1
//! init = bump:0.3,0.2,1.0
//!
//! [scheme]
//! tau = 0.01
//! T = 1
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown sections, unknown keys
//! and repeated keys are errors that name the offending line.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::output::read_snapshot;
use crate::diagnostics::Tolerances;
use crate::error::{Error, Result};
use crate::fixedpoint::PicardConfig;
use crate::grid::{Field, Grid};
use crate::model::{CoefficientSpec, ModelSpec, Species, Table};
use crate::sparse::Preconditioner;
use crate::stepper::{LinearBackend, SchemeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Converge,
    CrossValidate,
    Invariants,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "simulate" => Some(Mode::Simulate),
            "converge" => Some(Mode::Converge),
            "cross-validate" => Some(Mode::CrossValidate),
            "invariants" => Some(Mode::Invariants),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Converge => "converge",
            Mode::CrossValidate => "cross-validate",
            Mode::Invariants => "invariants",
        })
    }
}

/// Initial profile of one species, evaluated on any grid.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Constant(f64),
    /// `left` on the first half of axis 1, `right` on the second.
    Step { left: f64, right: f64 },
    /// `amplitude · cos²(π r / 2 width)` inside `r < width`, zero outside.
    Bump { center: [f64; 2], width: f64, amplitude: f64 },
    /// `mean + amplitude · cos(k1 π x / L1) cos(k2 π y / L2)`.
    Cosine { mean: f64, amplitude: f64, modes: [u32; 2] },
    /// Independent uniform samples in `[lo, hi)` drawn from the run seed.
    Random { lo: f64, hi: f64 },
    /// Row `row` of a snapshot file, or its only row.
    File(PathBuf),
}

impl InitSpec {
    fn parse(value: &str, dims: usize, base_dir: &Path) -> std::result::Result<Self, String> {
        let (kind, args) = value.split_once(':').unwrap_or((value, ""));
        let nums = || -> std::result::Result<Vec<f64>, String> {
            args.split(',')
                .map(|a| parse_f64(a.trim()))
                .collect()
        };
        let want = |v: Vec<f64>, n: usize| {
            if v.len() == n {
                Ok(v)
            } else {
                Err(format!("`{kind}` takes {n} comma-separated numbers, got {}", v.len()))
            }
        };
        Ok(match kind.trim() {
            "constant" => InitSpec::Constant(want(nums()?, 1)?[0]),
            "step" => {
                let v = want(nums()?, 2)?;
                InitSpec::Step { left: v[0], right: v[1] }
            }
            "bump" if dims == 1 => {
                let v = want(nums()?, 3)?;
                InitSpec::Bump { center: [v[0], 0.0], width: v[1], amplitude: v[2] }
            }
            "bump" => {
                let v = want(nums()?, 4)?;
                InitSpec::Bump { center: [v[0], v[1]], width: v[2], amplitude: v[3] }
            }
            "cosine" => {
                let v = nums()?;
                if v.len() != 2 + dims {
                    return Err(format!("`cosine` takes mean, amplitude and {dims} mode number(s)"));
                }
                let mode = |x: f64| {
                    if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                        Ok(x as u32)
                    } else {
                        Err(format!("mode number {x} is not a nonnegative integer"))
                    }
                };
                let k2 = if dims == 2 { mode(v[3])? } else { 0 };
                InitSpec::Cosine { mean: v[0], amplitude: v[1], modes: [mode(v[2])?, k2] }
            }
            "random" => {
                let v = want(nums()?, 2)?;
                if !(v[0] <= v[1]) {
                    return Err(format!("random range [{}, {}) is empty", v[0], v[1]));
                }
                InitSpec::Random { lo: v[0], hi: v[1] }
            }
            "file" if !args.trim().is_empty() => InitSpec::File(base_dir.join(args.trim())),
            other => return Err(format!("unknown initial profile `{other}`")),
        })
    }

    /// Samples the profile; `stream` separates the random draws of species.
    pub fn sample(&self, grid: &Grid, seed: u64, stream: u64, row: usize) -> Result<Field> {
        let len = grid.domain_lengths();
        Ok(match *self {
            InitSpec::Constant(c) => Field::constant(grid, c),
            InitSpec::Step { left, right } => grid.field_from_fn(|x| if x[0] < 0.5 * len[0] { left } else { right }),
            InitSpec::Bump { center, width, amplitude } => grid.field_from_fn(|x| {
                let r = (0..grid.dims()).map(|k| (x[k] - center[k]).powi(2)).sum::<f64>().sqrt();
                if r < width {
                    amplitude * (std::f64::consts::FRAC_PI_2 * r / width).cos().powi(2)
                } else {
                    0.0
                }
            }),
            InitSpec::Cosine { mean, amplitude, modes } => grid.field_from_fn(|x| {
                let mut v = amplitude;
                for k in 0..grid.dims() {
                    v *= (modes[k] as f64 * std::f64::consts::PI * x[k] / len[k]).cos();
                }
                mean + v
            }),
            InitSpec::Random { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let values = (0..grid.len()).map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect();
                Field::new(grid, values)?
            }
            InitSpec::File(ref path) => {
                let snap = read_snapshot(path)?;
                if snap.grid != *grid {
                    return Err(Error::Format {
                        path: path.clone(),
                        message: "snapshot grid differs from the configured grid".into(),
                    });
                }
                let k = if snap.fields.len() == 1 { 0 } else { row };
                snap.fields.into_iter().nth(k).ok_or_else(|| Error::Format {
                    path: path.clone(),
                    message: format!("snapshot has no row for species {}", row + 1),
                })?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesSource {
    pub delta: f64,
    pub coefficient: CoefficientSource,
    pub init: InitSpec,
    /// Explicit Lipschitz flag; structural detection when absent.
    pub lipschitz: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSource {
    Skt { base: f64, cross: Vec<f64>, exponent: f64 },
    Tabulated { table: Table, lower_bound: f64 },
}

impl CoefficientSource {
    fn build(&self) -> CoefficientSpec {
        match self {
            CoefficientSource::Skt { base, cross, exponent } => CoefficientSpec::skt(*base, cross, *exponent),
            CoefficientSource::Tabulated { table, lower_bound } => CoefficientSpec::Tabulated {
                table: table.clone(),
                lower_bound: *lower_bound,
            },
        }
    }
}

/// Grid and species as written in the config, so the model can be rebuilt
/// on refined grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSource {
    pub cells: Vec<usize>,
    pub spacing: Vec<f64>,
    pub species: Vec<SpeciesSource>,
}

impl ModelSource {
    /// Builds and validates the model with every axis refined by `refine`.
    pub fn build(&self, refine: usize, seed: u64) -> Result<ModelSpec> {
        let cells: Vec<usize> = self.cells.iter().map(|n| n * refine).collect();
        let spacing: Vec<f64> = self.spacing.iter().map(|h| h / refine as f64).collect();
        let grid = Grid::new(&cells, &spacing)?;
        let species = self
            .species
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let coefficient = s.coefficient.build();
                let lipschitz = s.lipschitz.unwrap_or_else(|| coefficient.is_structurally_lipschitz());
                let initial = s.init.sample(&grid, seed, i as u64, i)?;
                Ok(Species::new(s.delta, coefficient, initial).with_lipschitz(lipschitz))
            })
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(grid, species).validated()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    /// Number of `τ` halvings in the temporal and cross-validation studies.
    pub halvings: usize,
    pub spatial: bool,
    /// Grid levels of the spatial study (each refines the previous by 2).
    pub spatial_levels: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            halvings: 3,
            spatial: false,
            spatial_levels: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: ModelSource,
    pub model: ModelSpec,
    pub scheme: SchemeConfig,
    pub picard: Option<PicardConfig>,
    pub tolerances: Tolerances,
    pub study: StudyConfig,
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Replaces the seed and redraws any random initial data.
    pub fn with_seed(mut self, seed: u64) -> Result<Self> {
        self.model = self.source.build(1, seed)?;
        self.seed = seed;
        Ok(self)
    }
}

struct Entry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.iter_mut().find(|e| e.key == key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => parse(&v).map(Some).map_err(|message| Error::Config {
                line,
                message: format!("`{key}`: {message}"),
            }),
        }
    }

    fn require<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        let line = self.line;
        let name = self.name.clone();
        self.get(key, parse)?.ok_or_else(|| Error::Config {
            line,
            message: format!("[{name}] is missing `{key}`"),
        })
    }

    /// Rejects the first key not listed in `allowed`.
    fn allow(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key.as_str())) {
            None => Ok(()),
            Some(e) => Err(Error::Config {
                line: e.line,
                message: format!("unknown key `{}` in [{}]", e.key, self.name),
            }),
        }
    }

    fn finish(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            None => Ok(()),
            Some(e) => Err(Error::Config {
                line: e.line,
                message: format!("unknown key `{}` in [{}]", e.key, self.name),
            }),
        }
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a finite number")),
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(format!("`{s}` is not a boolean")),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(parse_f64)
        .collect()
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                line,
                message: format!("malformed section header `{content}`"),
            })?;
            let name = name.trim().to_string();
            if sections.iter().any(|s| s.name == name) {
                return Err(Error::Config {
                    line,
                    message: format!("section [{name}] appears twice"),
                });
            }
            sections.push(Section { name, line, entries: Vec::new() });
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let section = sections.last_mut().ok_or_else(|| Error::Config {
            line,
            message: format!("key `{key}` outside any section"),
        })?;
        if key.is_empty() {
            return Err(Error::Config { line, message: "empty key".into() });
        }
        if section.entries.iter().any(|e| e.key == key) {
            return Err(Error::Config {
                line,
                message: format!("key `{key}` repeated in [{}]", section.name),
            });
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
            used: false,
        });
    }
    Ok(sections)
}

/// Parses a config whose relative `file:` paths are taken from the working
/// directory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, Path::new("."))
}

/// Parses a config; relative `file:` paths are resolved against `base_dir`.
pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut sections = split_sections(text)?;
    let known = ["grid", "scheme", "picard", "diagnostics", "study", "run"];
    let mut species_sections: Vec<(usize, usize)> = Vec::new();
    for (k, s) in sections.iter().enumerate() {
        if let Some(idx) = s.name.strip_prefix("species.") {
            match idx.parse::<usize>() {
                Ok(i) if i >= 1 => species_sections.push((i, k)),
                _ => {
                    return Err(Error::Config {
                        line: s.line,
                        message: format!("species sections are numbered from 1, got [{}]", s.name),
                    })
                }
            }
        } else if !known.contains(&s.name.as_str()) {
            return Err(Error::Config {
                line: s.line,
                message: format!("unknown section [{}]", s.name),
            });
        }
    }
    species_sections.sort();
    for (expect, &(i, k)) in species_sections.iter().enumerate() {
        if i != expect + 1 {
            return Err(Error::Config {
                line: sections[k].line,
                message: format!("species sections must be numbered 1..I without gaps; found [species.{i}]"),
            });
        }
    }
    let species_count = species_sections.len();
    if species_count == 0 {
        return Err(Error::Config { line: 0, message: "no [species.i] section".into() });
    }

    let empty = |name: &str| Section { name: name.into(), line: 0, entries: Vec::new() };
    let position = |sections: &[Section], name: &str| sections.iter().position(|s| s.name == name);
    let mut take = |name: &str| match position(&sections, name) {
        Some(k) => std::mem::replace(&mut sections[k], empty(name)),
        None => empty(name),
    };

    let mut grid = take("grid");
    if grid.line == 0 {
        return Err(Error::Config { line: 0, message: "missing [grid] section".into() });
    }
    grid.allow(&["dims", "n1", "n2", "h1", "h2"])?;
    let dims = grid.get("dims", parse_usize)?.unwrap_or(1);
    if dims != 1 && dims != 2 {
        return Err(Error::Config {
            line: grid.line,
            message: format!("dims must be 1 or 2, got {dims}"),
        });
    }
    let mut cells = vec![grid.require("n1", parse_usize)?];
    if dims == 2 {
        cells.push(grid.require("n2", parse_usize)?);
    }
    let mut spacing = Vec::new();
    for (k, &n) in cells.iter().enumerate() {
        let default = 1.0 / n.max(1) as f64;
        spacing.push(grid.get(&format!("h{}", k + 1), parse_f64)?.unwrap_or(default));
    }
    grid.finish()?;

    let mut species = Vec::with_capacity(species_count);
    for i in 1..=species_count {
        let mut s = take(&format!("species.{i}"));
        let cross_keys: Vec<String> = (1..=species_count).map(|j| format!("d_{j}")).collect();
        let mut allowed = vec!["delta", "coeff", "init", "lipschitz", "d", "p", "k_max", "points", "values", "lower_bound"];
        allowed.extend(cross_keys.iter().map(String::as_str));
        s.allow(&allowed)?;
        let delta = s.require("delta", parse_f64)?;
        let kind = s.get("coeff", |v| Ok(v.to_string()))?.unwrap_or_else(|| "skt".into());
        let coefficient = match kind.as_str() {
            "skt" => {
                let base = s.require("d", parse_f64)?;
                let exponent = s.get("p", parse_f64)?.unwrap_or(1.0);
                let mut cross = Vec::with_capacity(species_count);
                for j in 1..=species_count {
                    cross.push(s.get(&format!("d_{j}"), parse_f64)?.unwrap_or(0.0));
                }
                CoefficientSource::Skt { base, cross, exponent }
            }
            "tabulated" => {
                let k_max = s.require("k_max", parse_f64)?;
                let points = s.require("points", parse_usize)?;
                let (values, line) = s.take("values").ok_or_else(|| Error::Config {
                    line: s.line,
                    message: format!("[species.{i}] is missing `values`"),
                })?;
                let values = parse_list(&values).map_err(|message| Error::Config { line, message })?;
                let table = Table::new(species_count, k_max, points, values).map_err(|e| Error::Config {
                    line,
                    message: e.to_string(),
                })?;
                let lower_bound = s.require("lower_bound", parse_f64)?;
                CoefficientSource::Tabulated { table, lower_bound }
            }
            other => {
                return Err(Error::Config {
                    line: s.entries.iter().find(|e| e.key == "coeff").map_or(s.line, |e| e.line),
                    message: format!("unknown coefficient kind `{other}` (expected skt or tabulated)"),
                })
            }
        };
        let init = s.require("init", |v| InitSpec::parse(v, dims, base_dir))?;
        let lipschitz = s.get("lipschitz", parse_bool)?;
        s.finish()?;
        species.push(SpeciesSource { delta, coefficient, init, lipschitz });
    }

    let mut sc = take("scheme");
    if sc.line == 0 {
        return Err(Error::Config { line: 0, message: "missing [scheme] section".into() });
    }
    sc.allow(&[
        "tau",
        "T",
        "linear_tol",
        "linear_max_iter",
        "output_stride",
        "clamp_tilde_positive",
        "a_max",
        "parallel",
        "preconditioner",
        "backend",
    ])?;
    let mut scheme = SchemeConfig::new(sc.require("tau", parse_f64)?, sc.require("T", parse_f64)?);
    if let Some(v) = sc.get("linear_tol", parse_f64)? {
        scheme.linear_tol = v;
    }
    if let Some(v) = sc.get("linear_max_iter", parse_usize)? {
        scheme.linear_max_iter = v;
    }
    if let Some(v) = sc.get("output_stride", parse_usize)? {
        scheme.output_stride = v;
    }
    if let Some(v) = sc.get("clamp_tilde_positive", parse_bool)? {
        scheme.clamp_tilde_positive = v;
    }
    scheme.coefficient_cap = sc.get("a_max", parse_f64)?;
    if let Some(v) = sc.get("parallel", parse_bool)? {
        scheme.parallel = v;
    }
    if let Some(v) = sc.get("preconditioner", |v| match v {
        "none" => Ok(Preconditioner::None),
        "jacobi" => Ok(Preconditioner::Jacobi),
        _ => Err(format!("`{v}` is not one of none, jacobi")),
    })? {
        scheme.preconditioner = v;
    }
    if let Some(v) = sc.get("backend", |v| match v {
        "iterative" => Ok(LinearBackend::Iterative),
        "dense" => Ok(LinearBackend::Dense),
        _ => Err(format!("`{v}` is not one of iterative, dense")),
    })? {
        scheme.backend = v;
    }
    sc.finish()?;
    scheme.validate().map_err(|e| Error::Config { line: sc.line, message: e.to_string() })?;

    let mut pc = take("picard");
    let picard = if pc.line == 0 {
        None
    } else {
        let mut p = PicardConfig::default();
        if let Some(v) = pc.get("max_sweeps", parse_usize)? {
            p.max_sweeps = v;
        }
        if let Some(v) = pc.get("sweep_tol", parse_f64)? {
            p.sweep_tol = v;
        }
        pc.finish()?;
        p.validate().map_err(|e| Error::Config { line: pc.line, message: e.to_string() })?;
        Some(p)
    };

    let mut dg = take("diagnostics");
    let mut tolerances = Tolerances::for_linear_tol(scheme.linear_tol);
    if let Some(v) = dg.get("tol_mass", parse_f64)? {
        tolerances.mass = v;
    }
    if let Some(v) = dg.get("tol_pos", parse_f64)? {
        tolerances.positivity = v;
    }
    if let Some(v) = dg.get("tol_mono", parse_f64)? {
        tolerances.monotonicity = v;
    }
    dg.finish()?;

    let mut st = take("study");
    let mut study = StudyConfig::default();
    if let Some(v) = st.get("halvings", parse_usize)? {
        study.halvings = v;
    }
    if let Some(v) = st.get("spatial", parse_bool)? {
        study.spatial = v;
    }
    if let Some(v) = st.get("spatial_levels", parse_usize)? {
        study.spatial_levels = v;
    }
    st.finish()?;
    if study.halvings < 2 || study.spatial_levels < 3 {
        return Err(Error::Config {
            line: st.line,
            message: "studies need halvings ≥ 2 and spatial_levels ≥ 3 to fit an order".into(),
        });
    }

    let mut rn = take("run");
    let mode = rn
        .get("mode", |v| Mode::parse(v).ok_or_else(|| format!("`{v}` is not one of simulate, converge, cross-validate, invariants")))?
        .unwrap_or(Mode::Simulate);
    let output_dir = rn.get("output_dir", |v| Ok(PathBuf::from(v)))?.unwrap_or_else(|| PathBuf::from("."));
    let seed = rn.get("seed", parse_u64)?.unwrap_or(0);
    rn.finish()?;

    let source = ModelSource { cells, spacing, species };
    let model = source.build(1, seed)?;
    Ok(RunConfig {
        source,
        model,
        scheme,
        picard,
        tolerances,
        study,
        mode,
        output_dir,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[grid]
n1 = 8

[species.1]
delta = 0.1
d = 1
init = constant:2

[scheme]
tau = 0.1
T = 1
";

    fn with_line(extra_section: &str, line: &str) -> String {
        MINIMAL.replace(&format!("[{extra_section}]\n"), &format!("[{extra_section}]\n{line}\n"))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Simulate);
        assert_eq!(c.seed, 0);
        assert_eq!(c.output_dir, PathBuf::from("."));
        assert_eq!(c.model.grid.len(), 8);
        assert_eq!(c.model.grid.spacing(), &[0.125]);
        assert_eq!(c.scheme.linear_tol, 1e-10);
        assert!(c.scheme.clamp_tilde_positive);
        assert_eq!(c.scheme.output_stride, 1);
        assert!(c.picard.is_none());
        assert_eq!(c.study, StudyConfig::default());
        assert!(c.model.species[0].lipschitz);
        assert!(c.model.species[0].initial.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let text = with_line("scheme", "taau = 0.1");
        match parse_config(&text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 10);
                assert!(message.contains("taau"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_delta_is_a_validation_error() {
        let text = MINIMAL.replace("delta = 0.1", "delta = -1");
        match parse_config(&text) {
            Err(Error::InvalidModel(v)) => assert!(v.iter().any(|x| x.to_string().contains("delta")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let cases = [
            MINIMAL.replace("[species.1]", "[species.2]"),
            MINIMAL.replace("[grid]", "[grd]"),
            MINIMAL.replace("d = 1\n", ""),
            MINIMAL.replace("n1 = 8", "n1 = eight"),
            MINIMAL.replace("init = constant:2", "init = wave:2"),
            MINIMAL.replace("init = constant:2", "init = step:1"),
            with_line("grid", "n1 = 9"),
            with_line("grid", "just words"),
            format!("x = 1\n{MINIMAL}"),
            format!("{MINIMAL}[scheme]\n"),
            MINIMAL.replace("tau = 0.1", "tau = 2"),
            MINIMAL.replace("d = 1", "d = inf"),
        ];
        for text in &cases {
            assert!(parse_config(text).is_err(), "accepted:\n{text}");
        }
    }

    #[test]
    fn two_species_skt_and_options() {
        let text = "\
# comment
[grid]
dims = 2
n1 = 4
n2 = 6
h1 = 0.5

[species.1]
delta = 0.01
coeff = skt
d = 0.05
d_2 = 1   # cross term
p = 2
init = bump:1,0.5,0.3,1

[species.2]
delta = 0.02
d = 0.1
d_1 = 0.5
init = random:0,1
lipschitz = false

[scheme]
tau = 0.01
T = 0.1
linear_tol = 1e-12
clamp_tilde_positive = off
a_max = 4
parallel = true
preconditioner = jacobi
backend = dense

[picard]
max_sweeps = 7

[diagnostics]
tol_mass = 0

[study]
halvings = 4
spatial = true

[run]
mode = cross-validate
output_dir = out
seed = 42
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.model.grid.cells_per_axis(), &[4, 6]);
        assert_eq!(c.model.grid.spacing(), &[0.5, 1.0 / 6.0]);
        match &c.model.species[0].coefficient {
            CoefficientSpec::Skt { base, cross, exponent } => {
                assert_eq!((*base, cross.as_slice(), *exponent), (0.05, &[0.0, 1.0][..], 2.0));
            }
            other => panic!("{other:?}"),
        }
        assert!(!c.model.species[1].lipschitz);
        assert!(!c.scheme.clamp_tilde_positive);
        assert_eq!(c.scheme.coefficient_cap, Some(4.0));
        assert!(c.scheme.parallel);
        assert_eq!(c.scheme.preconditioner, Preconditioner::Jacobi);
        assert_eq!(c.scheme.backend, LinearBackend::Dense);
        assert_eq!(c.picard.unwrap().max_sweeps, 7);
        assert_eq!(c.tolerances.mass, 0.0);
        assert_eq!(c.study.halvings, 4);
        assert!(c.study.spatial);
        assert_eq!(c.mode, Mode::CrossValidate);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.seed, 42);

        let again = parse_config(text).unwrap();
        assert_eq!(c.model.species[1].initial, again.model.species[1].initial);
        let reseeded = again.with_seed(43).unwrap();
        assert_ne!(c.model.species[1].initial, reseeded.model.species[1].initial);
        assert!(reseeded.model.species[1].initial.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn tabulated_coefficient() {
        let text = MINIMAL.replace(
            "d = 1\n",
            "coeff = tabulated\nk_max = 4\npoints = 3\nvalues = 1 2 3\nlower_bound = 1\n",
        );
        let c = parse_config(&text).unwrap();
        assert!(matches!(c.model.species[0].coefficient, CoefficientSpec::Tabulated { lower_bound, .. } if lower_bound == 1.0));
        let wrong = text.replace("values = 1 2 3", "values = 1 2");
        assert!(parse_config(&wrong).is_err());
        let missing = text.replace("lower_bound = 1\n", "");
        assert!(parse_config(&missing).is_err());
    }

    #[test]
    fn profiles() {
        let g = Grid::unit(1, 4).unwrap();
        let step = InitSpec::Step { left: 1.0, right: 3.0 }.sample(&g, 0, 0, 0).unwrap();
        assert_eq!(step.as_slice(), &[1.0, 1.0, 3.0, 3.0]);
        let bump = InitSpec::Bump { center: [0.125, 0.0], width: 0.3, amplitude: 2.0 }.sample(&g, 0, 0, 0).unwrap();
        assert_eq!(bump[0], 2.0);
        assert_eq!(&bump[2..], &[0.0, 0.0]);
        let cos = InitSpec::Cosine { mean: 1.0, amplitude: 0.5, modes: [1, 0] }.sample(&g, 0, 0, 0).unwrap();
        assert!((cos.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(cos[0] > cos[3]);
    }
}
