//! Species, relaxation lengths and diffusion coefficient families.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Multilinear interpolation of samples on the lattice `[0, k_max]^I`.
///
/// Inputs beyond `k_max` are clamped to the lattice edge, so the
/// interpolant is bounded below by the smallest sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    k_max: f64,
    points: usize,
    arity: usize,
    values: Vec<f64>,
}

impl Table {
    /// `values` are in row-major order, the first input varying fastest.
    pub fn new(arity: usize, k_max: f64, points: usize, values: Vec<f64>) -> Result<Self> {
        if arity == 0 || points < 2 || !(k_max > 0.0 && k_max.is_finite()) {
            return Err(Error::InvalidScheme(format!(
                "table needs arity ≥ 1, ≥ 2 points per axis and k_max > 0 (got {arity}, {points}, {k_max})"
            )));
        }
        let expected = points.pow(arity as u32);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(cell) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                cell,
                value: values[cell],
            });
        }
        Ok(Table {
            k_max,
            points,
            arity,
            values,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn eval(&self, r: &[f64]) -> f64 {
        let step = self.k_max / (self.points - 1) as f64;
        let mut base = vec![0usize; self.arity];
        let mut frac = vec![0.0; self.arity];
        for (a, &x) in r.iter().enumerate() {
            let s = (x.clamp(0.0, self.k_max) / step).min((self.points - 1) as f64);
            let i = (s.floor() as usize).min(self.points - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.arity) {
            let mut weight = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            for a in 0..self.arity {
                let up = (corner >> a) & 1 == 1;
                weight *= if up { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + up as usize) * stride;
                stride *= self.points;
            }
            if weight != 0.0 {
                acc += weight * self.values[flat];
            }
        }
        acc
    }
}

pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CoefficientSpec {
    /// `a(r) = base + Σ_j cross[j] · r_j^exponent`.
    Skt {
        base: f64,
        cross: Vec<f64>,
        exponent: f64,
    },
    Tabulated {
        table: Table,
        lower_bound: f64,
    },
    /// Arbitrary continuous function with a declared positive lower bound.
    /// The bound is spot-checked during validation, not proven.
    Custom {
        func: CoefficientFn,
        lower_bound: f64,
        arity: usize,
    },
}

impl fmt::Debug for CoefficientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientSpec::Skt {
                base,
                cross,
                exponent,
            } => f
                .debug_struct("Skt")
                .field("base", base)
                .field("cross", cross)
                .field("exponent", exponent)
                .finish(),
            CoefficientSpec::Tabulated { table, lower_bound } => f
                .debug_struct("Tabulated")
                .field("table", table)
                .field("lower_bound", lower_bound)
                .finish(),
            CoefficientSpec::Custom {
                lower_bound, arity, ..
            } => f
                .debug_struct("Custom")
                .field("lower_bound", lower_bound)
                .field("arity", arity)
                .finish_non_exhaustive(),
        }
    }
}

impl CoefficientSpec {
    pub fn skt(base: f64, cross: &[f64], exponent: f64) -> Self {
        CoefficientSpec::Skt {
            base,
            cross: cross.to_vec(),
            exponent,
        }
    }

    /// Constant coefficient `a ≡ d` for a system of `arity` species.
    pub fn constant(d: f64, arity: usize) -> Self {
        CoefficientSpec::Skt {
            base: d,
            cross: vec![0.0; arity],
            exponent: 1.0,
        }
    }

    pub fn tabulated(table: Table) -> Self {
        let lower_bound = table.min_value();
        CoefficientSpec::Tabulated { table, lower_bound }
    }

    pub fn custom(
        arity: usize,
        lower_bound: f64,
        func: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CoefficientSpec::Custom {
            func: Arc::new(func),
            lower_bound,
            arity,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            CoefficientSpec::Skt { cross, .. } => cross.len(),
            CoefficientSpec::Tabulated { table, .. } => table.arity(),
            CoefficientSpec::Custom { arity, .. } => *arity,
        }
    }

    /// The bound `d̲` with `a(r) ≥ d̲` on the nonnegative orthant.
    pub fn lower_bound(&self) -> f64 {
        match self {
            CoefficientSpec::Skt { base, .. } => *base,
            CoefficientSpec::Tabulated { lower_bound, .. }
            | CoefficientSpec::Custom { lower_bound, .. } => *lower_bound,
        }
    }

    /// Whether the coefficient is locally Lipschitz on `[0,∞)^I` without the
    /// user having to assert it.
    pub fn is_structurally_lipschitz(&self) -> bool {
        match self {
            CoefficientSpec::Skt {
                cross, exponent, ..
            } => *exponent >= 1.0 || cross.iter().all(|&c| c == 0.0),
            CoefficientSpec::Tabulated { .. } => true,
            CoefficientSpec::Custom { .. } => false,
        }
    }

    /// Evaluation without the sign check on `r`.
    pub(crate) fn eval_raw(&self, r: &[f64]) -> f64 {
        match self {
            CoefficientSpec::Skt {
                base,
                cross,
                exponent,
            } => {
                let mut a = *base;
                for (c, &x) in cross.iter().zip(r) {
                    if *c != 0.0 {
                        a += c * if *exponent == 1.0 { x } else { x.powf(*exponent) };
                    }
                }
                a
            }
            CoefficientSpec::Tabulated { table, .. } => table.eval(r),
            CoefficientSpec::Custom { func, .. } => func(r),
        }
    }
}

/// Evaluates `a_i(r)` for `r` in the nonnegative orthant.
pub fn eval_coefficient(spec: &CoefficientSpec, r: &[f64]) -> Result<f64> {
    if r.len() != spec.arity() {
        return Err(Error::DimensionMismatch {
            expected: spec.arity(),
            actual: r.len(),
        });
    }
    if let Some(component) = r.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::NegativeInput {
            component,
            value: r[component],
        });
    }
    Ok(spec.eval_raw(r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationBound {
    pub value: f64,
    /// Lattice spacing of the sampled maximization, `None` when the
    /// supremum is exact.
    pub sampling_step: Option<f64>,
}

pub const TRUNCATION_SAMPLES_PER_AXIS: usize = 21;

/// `G(k) = max_i sup_{r ∈ [0,k]^I} a_i(r)`.
///
/// SKT coefficients are nondecreasing in every input, so their supremum
/// sits at the corner `(k, …, k)`. Other families are maximized over a
/// uniform lattice of [`TRUNCATION_SAMPLES_PER_AXIS`] points per axis.
pub fn truncation_bound(specs: &[CoefficientSpec], k: f64) -> TruncationBound {
    let k = k.max(0.0);
    let mut value = f64::NEG_INFINITY;
    let mut sampling_step = None;
    for spec in specs {
        let arity = spec.arity();
        let sup = match spec {
            CoefficientSpec::Skt { .. } => spec.eval_raw(&vec![k; arity]),
            _ => {
                let per_axis = if k == 0.0 { 1 } else { TRUNCATION_SAMPLES_PER_AXIS };
                let step = if per_axis > 1 { k / (per_axis - 1) as f64 } else { 0.0 };
                sampling_step = Some(step);
                let mut r = vec![0.0; arity];
                let mut best = f64::NEG_INFINITY;
                for flat in 0..per_axis.pow(arity as u32) {
                    let mut rest = flat;
                    for x in r.iter_mut() {
                        *x = (rest % per_axis) as f64 * step;
                        rest /= per_axis;
                    }
                    best = best.max(spec.eval_raw(&r));
                }
                best
            }
        };
        value = value.max(sup);
    }
    TruncationBound {
        value,
        sampling_step,
    }
}

#[derive(Debug, Clone)]
pub struct Species {
    pub delta: f64,
    pub coefficient: CoefficientSpec,
    pub initial: Field,
    pub lipschitz: bool,
}

impl Species {
    pub fn new(delta: f64, coefficient: CoefficientSpec, initial: Field) -> Self {
        let lipschitz = coefficient.is_structurally_lipschitz();
        Species {
            delta,
            coefficient,
            initial,
            lipschitz,
        }
    }

    pub fn with_lipschitz(mut self, lipschitz: bool) -> Self {
        self.lipschitz = lipschitz;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub grid: Grid,
    pub species: Vec<Species>,
}

impl ModelSpec {
    pub fn new(grid: Grid, species: Vec<Species>) -> Self {
        ModelSpec { grid, species }
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn coefficients(&self) -> Vec<CoefficientSpec> {
        self.species.iter().map(|s| s.coefficient.clone()).collect()
    }

    /// Returns the model unchanged if [`validate_model`] finds nothing.
    pub fn validated(self) -> Result<Self> {
        let v = validate_model(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(v))
        }
    }
}

/// A broken model invariant. Species and cell indices are zero-based; the
/// `Display` form reports species one-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoSpecies,
    NonPositiveDelta { species: usize, delta: f64 },
    InitialSizeMismatch { species: usize, expected: usize, actual: usize },
    NegativeInitial { species: usize, cell: usize, value: f64 },
    NonFiniteInitial { species: usize, cell: usize },
    ArityMismatch { species: usize, expected: usize, actual: usize },
    NonPositiveLowerBound { species: usize, bound: f64 },
    NegativeCrossCoefficient { species: usize, other: usize, value: f64 },
    NonPositiveExponent { species: usize, exponent: f64 },
    BelowDeclaredBound { species: usize, value: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match *self {
            NoSpecies => write!(f, "model has no species"),
            NonPositiveDelta { species, delta } => {
                write!(f, "species {}: delta must be positive (got {delta})", species + 1)
            }
            InitialSizeMismatch {
                species,
                expected,
                actual,
            } => write!(
                f,
                "species {}: initial data has {actual} values, grid has {expected} cells",
                species + 1
            ),
            NegativeInitial {
                species,
                cell,
                value,
            } => write!(
                f,
                "species {}: initial data must be nonnegative (cell {cell} is {value})",
                species + 1
            ),
            NonFiniteInitial { species, cell } => {
                write!(f, "species {}: initial data is not finite at cell {cell}", species + 1)
            }
            ArityMismatch {
                species,
                expected,
                actual,
            } => write!(
                f,
                "species {}: coefficient takes {actual} inputs, model has {expected} species",
                species + 1
            ),
            NonPositiveLowerBound { species, bound } => write!(
                f,
                "species {}: coefficient lower bound must be positive (got {bound})",
                species + 1
            ),
            NegativeCrossCoefficient {
                species,
                other,
                value,
            } => write!(
                f,
                "species {}: cross coefficient d_{} must be nonnegative (got {value})",
                species + 1,
                other + 1
            ),
            NonPositiveExponent { species, exponent } => write!(
                f,
                "species {}: exponent p must be positive (got {exponent})",
                species + 1
            ),
            BelowDeclaredBound {
                species,
                value,
                bound,
            } => write!(
                f,
                "species {}: coefficient value {value} falls below declared lower bound {bound}",
                species + 1
            ),
        }
    }
}

const SPOT_CHECKS: usize = 1000;

pub fn validate_model(m: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let count = m.species.len();
    if count == 0 {
        out.push(Violation::NoSpecies);
    }
    for (i, s) in m.species.iter().enumerate() {
        if !(s.delta > 0.0 && s.delta.is_finite()) {
            out.push(Violation::NonPositiveDelta {
                species: i,
                delta: s.delta,
            });
        }
        if s.initial.len() != m.grid.len() {
            out.push(Violation::InitialSizeMismatch {
                species: i,
                expected: m.grid.len(),
                actual: s.initial.len(),
            });
        }
        for (cell, &v) in s.initial.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFiniteInitial { species: i, cell });
            } else if v < 0.0 {
                out.push(Violation::NegativeInitial {
                    species: i,
                    cell,
                    value: v,
                });
            }
        }
        validate_coefficient(i, count, &s.coefficient, &mut out);
    }
    out
}

fn validate_coefficient(i: usize, count: usize, spec: &CoefficientSpec, out: &mut Vec<Violation>) {
    if spec.arity() != count {
        out.push(Violation::ArityMismatch {
            species: i,
            expected: count,
            actual: spec.arity(),
        });
        return;
    }
    let bound = spec.lower_bound();
    if !(bound > 0.0 && bound.is_finite()) {
        out.push(Violation::NonPositiveLowerBound { species: i, bound });
    }
    match spec {
        CoefficientSpec::Skt {
            cross, exponent, ..
        } => {
            for (j, &c) in cross.iter().enumerate() {
                if !(c >= 0.0 && c.is_finite()) {
                    out.push(Violation::NegativeCrossCoefficient {
                        species: i,
                        other: j,
                        value: c,
                    });
                }
            }
            if !(*exponent > 0.0 && exponent.is_finite()) {
                out.push(Violation::NonPositiveExponent {
                    species: i,
                    exponent: *exponent,
                });
            }
        }
        CoefficientSpec::Tabulated { table, lower_bound } => {
            // The multilinear interpolant never goes below its smallest node.
            let min = table.min_value();
            if min < *lower_bound {
                out.push(Violation::BelowDeclaredBound {
                    species: i,
                    value: min,
                    bound: *lower_bound,
                });
            }
        }
        CoefficientSpec::Custom {
            func, lower_bound, ..
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let mut r = vec![0.0; count];
            for k in 0..SPOT_CHECKS {
                if k > 0 {
                    // Mix unit-scale and large inputs.
                    let scale = if k % 2 == 0 { 1.0 } else { 100.0 };
                    r.iter_mut().for_each(|x| *x = rng.gen_range(0.0..scale));
                }
                let v = func(&r);
                if !(v >= *lower_bound) {
                    out.push(Violation::BelowDeclaredBound {
                        species: i,
                        value: v,
                        bound: *lower_bound,
                    });
                    break;
                }
            }
        }
    }
}
