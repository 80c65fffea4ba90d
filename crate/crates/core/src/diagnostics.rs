//! Invariant monitoring: masses, extrema, `w` increments, the discrete
//! energy balance of frozen-coefficient slabs and the growth of `sup ‖ũ‖∞`
//! with the horizon.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::model::ModelSpec;
use crate::stepper::{FrozenCoefficient, SchemeConfig, SpeciesStepStats, Stepper, SystemState};

/// One row per (step, species).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    /// Zero-based.
    pub species: usize,
    pub mass_u: f64,
    pub mass_utilde: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_utilde: f64,
    pub max_utilde: f64,
    pub w_min_increment: f64,
    pub coef_min: f64,
    pub coef_max: f64,
    pub clamp_activations: usize,
    pub cap_activations: usize,
    pub cg_iterations: usize,
    pub short_step: bool,
}

impl DiagnosticsRow {
    fn base(grid: &Grid, state: &SystemState, species: usize) -> Self {
        let u = &state.u[species];
        let ut = &state.u_tilde[species];
        DiagnosticsRow {
            step: state.step,
            time: state.time,
            species,
            mass_u: grid.integrate(u).unwrap_or(f64::NAN),
            mass_utilde: grid.integrate(ut).unwrap_or(f64::NAN),
            min_u: u.min(),
            max_u: u.max(),
            min_utilde: ut.min(),
            max_utilde: ut.max(),
            w_min_increment: 0.0,
            coef_min: f64::NAN,
            coef_max: f64::NAN,
            clamp_activations: 0,
            cap_activations: 0,
            cg_iterations: 0,
            short_step: false,
        }
    }

    /// Row of the initial state; the coefficients are those the first step
    /// will freeze.
    pub fn initial(grid: &Grid, state: &SystemState, species: usize, frozen: &FrozenCoefficient, cg_iterations: usize) -> Self {
        DiagnosticsRow {
            coef_min: frozen.values.min(),
            coef_max: frozen.values.max(),
            clamp_activations: frozen.clamp_activations,
            cap_activations: frozen.cap_activations,
            cg_iterations,
            ..Self::base(grid, state, species)
        }
    }

    pub fn from_step(grid: &Grid, after: &SystemState, species: usize, stats: &SpeciesStepStats, short_step: bool) -> Self {
        DiagnosticsRow {
            w_min_increment: stats.w_min_increment,
            coef_min: stats.coef_min,
            coef_max: stats.coef_max,
            clamp_activations: stats.clamp_activations,
            cap_activations: stats.cap_activations,
            cg_iterations: stats.cg_iterations,
            short_step,
            ..Self::base(grid, after, species)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative drift of `∫uᵢ` per step, and of `∫ũᵢ` against `∫uᵢ`.
    pub mass: f64,
    /// How far below zero `u` and `ũ` may dip.
    pub positivity: f64,
    /// How far below zero a `w` increment may dip.
    pub monotonicity: f64,
}

impl Tolerances {
    pub fn for_linear_tol(linear_tol: f64) -> Self {
        Tolerances {
            mass: 1e-10,
            positivity: 10.0 * linear_tol,
            monotonicity: 10.0 * linear_tol,
        }
    }

    pub fn unbounded() -> Self {
        Tolerances {
            mass: f64::INFINITY,
            positivity: f64::INFINITY,
            monotonicity: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantKind {
    Mass,
    RegularizedMass,
    PositivityU,
    PositivityUTilde,
    WMonotonicity,
}

impl fmt::Display for InvariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvariantKind::Mass => "mass drift",
            InvariantKind::RegularizedMass => "mass of u_tilde differs from mass of u",
            InvariantKind::PositivityU => "negative u",
            InvariantKind::PositivityUTilde => "negative u_tilde",
            InvariantKind::WMonotonicity => "decreasing w",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepViolation {
    pub kind: InvariantKind,
    /// Zero-based.
    pub species: usize,
    /// Worst cell, when the invariant is pointwise.
    pub cell: Option<usize>,
    pub magnitude: f64,
}

impl fmt::Display for StepViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "species {}: {} of magnitude {:e}", self.species + 1, self.kind, self.magnitude)?;
        if let Some(c) = self.cell {
            write!(f, " at cell {c}")?;
        }
        Ok(())
    }
}

fn relative(diff: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        diff.abs() / reference.abs()
    } else {
        diff.abs()
    }
}

/// Worst `(cell, value)` of `values` below `-tol`.
fn worst_below(values: impl Iterator<Item = f64>, tol: f64) -> Option<(usize, f64)> {
    values
        .enumerate()
        .filter(|&(_, v)| v < -tol)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Checks the invariants of one step. Empty iff all hold.
pub fn check_step(grid: &Grid, before: &SystemState, after: &SystemState, tol: &Tolerances) -> Vec<StepViolation> {
    let mut out = Vec::new();
    for i in 0..after.species_count() {
        let m0 = grid.integrate(&before.u[i]).unwrap_or(f64::NAN);
        let m1 = grid.integrate(&after.u[i]).unwrap_or(f64::NAN);
        let mt = grid.integrate(&after.u_tilde[i]).unwrap_or(f64::NAN);
        let drift = relative(m1 - m0, m0);
        if !(drift <= tol.mass) {
            out.push(StepViolation {
                kind: InvariantKind::Mass,
                species: i,
                cell: None,
                magnitude: drift,
            });
        }
        let gap = relative(mt - m1, m1);
        if !(gap <= tol.mass) {
            out.push(StepViolation {
                kind: InvariantKind::RegularizedMass,
                species: i,
                cell: None,
                magnitude: gap,
            });
        }
        for (kind, f) in [
            (InvariantKind::PositivityU, &after.u[i]),
            (InvariantKind::PositivityUTilde, &after.u_tilde[i]),
        ] {
            if let Some((cell, v)) = worst_below(f.iter().copied(), tol.positivity) {
                out.push(StepViolation {
                    kind,
                    species: i,
                    cell: Some(cell),
                    magnitude: -v,
                });
            }
        }
        let increments = after.w[i].iter().zip(before.w[i].iter()).map(|(a, b)| a - b);
        if let Some((cell, v)) = worst_below(increments, tol.monotonicity) {
            out.push(StepViolation {
                kind: InvariantKind::WMonotonicity,
                species: i,
                cell: Some(cell),
                magnitude: -v,
            });
        }
    }
    out
}

/// Terms of the discrete energy balance of a frozen-coefficient slab
/// `wⁿ⁺¹ = wⁿ + τ L(Aⁿ ⊙ wⁿ⁺¹)`, with `S = τ Σₙ Aⁿ ⊙ wⁿ⁺¹`:
///
/// ```text
/// reaction + gradient + dissipation = source
/// reaction    = τ Σₙ ⟨Aⁿ wⁿ⁺¹, wⁿ⁺¹⟩
/// gradient    = ½ ⟨−L S, S⟩
/// dissipation = ½ Σₙ ⟨−L ΔSⁿ, ΔSⁿ⟩,  ΔSⁿ = τ Aⁿ ⊙ wⁿ⁺¹
/// source      = ⟨w₀, S⟩
/// ```
///
/// The continuous identity has no dissipation term; here it is `O(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    pub reaction: f64,
    pub gradient: f64,
    pub dissipation: f64,
    pub source: f64,
}

impl EnergyBalance {
    pub fn lhs(&self) -> f64 {
        self.reaction + self.gradient
    }

    /// Mismatch of the exact discrete identity, relative to the source.
    pub fn exact_defect(&self) -> f64 {
        (self.reaction + self.gradient + self.dissipation - self.source).abs()
            / (self.source.abs() + f64::MIN_POSITIVE)
    }
}

/// `trajectory` holds `w⁰ … wᴺ`, `coefficients` holds `A⁰ … Aᴺ⁻¹`.
pub fn energy_balance(grid: &Grid, trajectory: &[Field], coefficients: &[Field], tau: f64) -> Result<EnergyBalance> {
    if trajectory.len() != coefficients.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: coefficients.len() + 1,
            actual: trajectory.len(),
        });
    }
    let lap = grid.assemble_laplacian();
    let n = grid.len();
    let w0 = &trajectory[0];
    let mut s = vec![0.0; n];
    let mut reaction = 0.0;
    let mut dissipation = 0.0;
    let mut ls = vec![0.0; n];
    for (a, w) in coefficients.iter().zip(&trajectory[1..]) {
        if a.len() != n || w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: a.len().min(w.len()),
            });
        }
        let ds: Vec<f64> = a.iter().zip(w.iter()).map(|(ai, wi)| tau * ai * wi).collect();
        reaction += grid.cell_measure() * ds.iter().zip(w.iter()).map(|(d, wi)| d * wi).sum::<f64>();
        lap.mul_vec(&ds, &mut ls)?;
        dissipation -= 0.5 * grid.cell_measure() * ls.iter().zip(&ds).map(|(l, d)| l * d).sum::<f64>();
        s.iter_mut().zip(&ds).for_each(|(si, d)| *si += d);
    }
    lap.mul_vec(&s, &mut ls)?;
    let gradient = -0.5 * grid.cell_measure() * ls.iter().zip(&s).map(|(l, x)| l * x).sum::<f64>();
    let source = grid.cell_measure() * w0.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
    Ok(EnergyBalance {
        reaction,
        gradient,
        dissipation,
        source,
    })
}

/// `|LHS − RHS| / (|RHS| + floor)` of the continuous energy identity
/// evaluated on a discrete slab trajectory.
pub fn energy_identity_residual(grid: &Grid, trajectory: &[Field], coefficients: &[Field], tau: f64) -> Result<f64> {
    let b = energy_balance(grid, trajectory, coefficients, tau)?;
    Ok((b.lhs() - b.source).abs() / (b.source.abs() + f64::MIN_POSITIVE))
}

/// Least-squares line through `sup_{t≤T} maxᵢ δᵢ‖ũᵢ(t)‖∞` over horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundFit {
    pub horizons: Vec<f64>,
    pub sup_utilde: Vec<f64>,
    pub fitted_intercept: f64,
    pub fitted_slope: f64,
    /// `max_k |y_k − fit(T_k)| / |fit(T_k)|`.
    pub max_relative_residual: f64,
}

impl BoundFit {
    pub fn fitted(&self, t: f64) -> f64 {
        self.fitted_intercept + self.fitted_slope * t
    }

    /// Whether every sample stays below the fitted line inflated by `slack`.
    pub fn within(&self, slack: f64) -> bool {
        self.horizons
            .iter()
            .zip(&self.sup_utilde)
            .all(|(&t, &y)| y <= self.fitted(t) * (1.0 + slack))
    }
}

pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Runs once to the largest horizon and fits the growth of the scaled
/// regularized sup-norm.
pub fn fit_linear_bound(m: &ModelSpec, base: &SchemeConfig, horizons: &[f64]) -> Result<BoundFit> {
    if horizons.len() < 3 {
        return Err(Error::InvalidScheme(format!(
            "need at least 3 horizons, got {}",
            horizons.len()
        )));
    }
    if horizons.windows(2).any(|w| !(w[1] > w[0])) || !(horizons[0] > 0.0) {
        return Err(Error::InvalidScheme("horizons must be positive and strictly increasing".into()));
    }
    let mut cfg = base.clone();
    cfg.horizon = *horizons.last().unwrap();
    let stepper = Stepper::new(m, cfg)?;
    let deltas: Vec<f64> = m.species.iter().map(|s| s.delta).collect();
    let scaled_sup = |s: &SystemState| {
        s.u_tilde
            .iter()
            .zip(&deltas)
            .map(|(f, d)| d * f.max_abs())
            .fold(0.0f64, f64::max)
    };

    struct Tracker<'a, F: Fn(&SystemState) -> f64> {
        horizons: &'a [f64],
        next: usize,
        running: f64,
        out: Vec<f64>,
        measure: F,
    }
    impl<F: Fn(&SystemState) -> f64> crate::stepper::Observer for Tracker<'_, F> {
        fn on_step(&mut self, _b: &SystemState, after: &SystemState, _r: &[DiagnosticsRow]) -> Result<()> {
            while self.next < self.horizons.len() && after.time > self.horizons[self.next] * (1.0 + 1e-9) {
                self.out.push(self.running);
                self.next += 1;
            }
            self.running = self.running.max((self.measure)(after));
            Ok(())
        }
    }
    let mut tracker = Tracker {
        horizons,
        next: 0,
        running: 0.0,
        out: Vec::new(),
        measure: scaled_sup,
    };
    stepper.run(&mut tracker)?;
    while tracker.out.len() < horizons.len() {
        tracker.out.push(tracker.running);
    }
    let sup = tracker.out;
    let (intercept, slope) = least_squares(horizons, &sup);
    let max_relative_residual = horizons
        .iter()
        .zip(&sup)
        .map(|(&t, &y)| {
            let f = intercept + slope * t;
            relative(y - f, f)
        })
        .fold(0.0, f64::max);
    Ok(BoundFit {
        horizons: horizons.to_vec(),
        sup_utilde: sup,
        fitted_intercept: intercept,
        fitted_slope: slope,
        max_relative_residual,
    })
}
