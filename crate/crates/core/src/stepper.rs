//! Semi-implicit time stepping.
//!
//! One step from `uⁿ`:
//!
//! ```text
//! ũᵢⁿ − δᵢ L ũᵢⁿ = uᵢⁿ                   (regularization, explicit)
//! Aᵢⁿ = aᵢ([ũⁿ]⁺)                         (frozen coefficients)
//! (uᵢⁿ⁺¹ − uᵢⁿ)/τ − L (Aᵢⁿ ⊙ uᵢⁿ⁺¹) = 0     (implicit in u)
//! ```
//!
//! The implicit system `I/τ − L·diag(A)` is not symmetric. Substituting
//! `z = A ⊙ uⁿ⁺¹` turns it into the SPD system `(diag(1/(τA)) − L) z = uⁿ/τ`
//! solved by CG. The new density is then recovered in flux form,
//! `uⁿ⁺¹ = uⁿ + τ L z`, which has the same integral as `uⁿ` up to
//! floating-point summation because `L` has zero column sums.

use rayon::prelude::*;

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::model::{validate_model, ModelSpec};
use crate::sparse::{cg_solve_from, dense_solve, CgOptions, Preconditioner, ShiftedOperator, SolverReport, SparseMatrix};

/// How the per-species linear systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearBackend {
    /// CG on the symmetrized systems.
    #[default]
    Iterative,
    /// Pivoted dense elimination on the original (nonsymmetric) systems.
    /// Only sensible for small grids.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub tau: f64,
    pub horizon: f64,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    pub preconditioner: Preconditioner,
    /// Evaluate coefficients at the positive part of `ũ`.
    pub clamp_tilde_positive: bool,
    /// Optional cap `aᵢ ← min(aᵢ, a_max)`.
    pub coefficient_cap: Option<f64>,
    pub output_stride: usize,
    pub backend: LinearBackend,
    /// Run the per-species solves of a step on the rayon pool.
    pub parallel: bool,
}

impl SchemeConfig {
    pub fn new(tau: f64, horizon: f64) -> Self {
        SchemeConfig {
            tau,
            horizon,
            linear_tol: 1e-10,
            linear_max_iter: 20_000,
            preconditioner: Preconditioner::None,
            clamp_tilde_positive: true,
            coefficient_cap: None,
            output_stride: 1,
            backend: LinearBackend::Iterative,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScheme(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("T must be positive, got {}", self.horizon));
        }
        if self.tau > self.horizon * (1.0 + 1e-12) {
            return bad(format!("tau = {} exceeds T = {}", self.tau, self.horizon));
        }
        if !(self.linear_tol > 0.0) {
            return bad(format!("linear_tol must be positive, got {}", self.linear_tol));
        }
        if self.linear_max_iter == 0 {
            return bad("linear_max_iter must be at least 1".into());
        }
        if self.output_stride == 0 {
            return bad("output_stride must be at least 1".into());
        }
        if let Some(cap) = self.coefficient_cap {
            if !(cap > 0.0) {
                return bad(format!("coefficient cap must be positive, got {cap}"));
            }
        }
        Ok(())
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            tol: self.linear_tol,
            max_iter: self.linear_max_iter,
            preconditioner: self.preconditioner,
        }
    }

    /// Step sizes that land exactly on the horizon. When `τ` does not divide
    /// `T`, the last step is shortened; the flag reports that.
    pub fn schedule(&self) -> (Vec<f64>, bool) {
        let ratio = self.horizon / self.tau;
        let rounded = ratio.round();
        if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * rounded {
            return (vec![self.tau; rounded as usize], false);
        }
        let n = ratio.ceil() as usize;
        let mut taus = vec![self.tau; n];
        taus[n - 1] = self.horizon - (n - 1) as f64 * self.tau;
        (taus, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub step: usize,
    pub time: f64,
    pub u: Vec<Field>,
    pub u_tilde: Vec<Field>,
    /// `wᵢ = δᵢũᵢ + Σ_{m<n} τ Aᵢᵐ ⊙ uᵢᵐ⁺¹`.
    pub w: Vec<Field>,
}

impl SystemState {
    pub fn species_count(&self) -> usize {
        self.u.len()
    }
}

/// Per-species bookkeeping of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpeciesStepStats {
    pub coef_min: f64,
    pub coef_max: f64,
    /// Cells where a negative `ũᵢ` fed the coefficients: set to zero when
    /// clamping is on, passed through raw when it is off.
    pub clamp_activations: usize,
    /// Cells where the optional coefficient cap was hit.
    pub cap_activations: usize,
    pub cg_iterations: usize,
    pub w_min_increment: f64,
}

/// Frozen coefficient field of one species.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCoefficient {
    pub values: Field,
    pub clamp_activations: usize,
    pub cap_activations: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SystemState,
    pub stats: Vec<SpeciesStepStats>,
    pub coefficients: Vec<Field>,
}

fn check_len(grid: &Grid, f: &[f64]) -> Result<()> {
    if f.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: f.len(),
        });
    }
    Ok(())
}

/// Solves `(I − δL) ũ = u` on `grid`.
pub fn regularize(grid: &Grid, u: &Field, delta: f64, opts: &CgOptions) -> Result<(Field, SolverReport)> {
    check_len(grid, u)?;
    regularize_with(&grid.assemble_laplacian(), u, delta, opts)
}

/// [`regularize`] against a pre-assembled Laplacian.
///
/// The CG result `x` is post-processed into `u + δ L x`, which differs from
/// `x` by the final residual and has exactly the integral of `u`.
pub fn regularize_with(lap: &SparseMatrix, u: &Field, delta: f64, opts: &CgOptions) -> Result<(Field, SolverReport)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidScheme(format!("delta must be positive, got {delta}")));
    }
    let ones = vec![1.0; u.len()];
    let op = ShiftedOperator {
        diag: &ones,
        base: lap,
        scale: delta,
    };
    let (x, report) = cg_solve_from(&op, u, u.to_vec(), opts)?;
    let report = report.ensure_converged()?;
    let mut lx = vec![0.0; x.len()];
    lap.mul_vec(&x, &mut lx)?;
    let out = u.iter().zip(&lx).map(|(ui, li)| ui + delta * li).collect();
    Ok((Field::from_vec(out), report))
}

/// Dense pivoted solve of `(I − δL) ũ = u`.
pub fn regularize_dense(lap: &SparseMatrix, u: &Field, delta: f64) -> Result<Field> {
    let mut m = lap.to_dense();
    for (i, row) in m.iter_mut().enumerate() {
        row.iter_mut().for_each(|v| *v *= -delta);
        row[i] += 1.0;
    }
    Ok(Field::from_vec(dense_solve(&m, u)?))
}

/// One backward-Euler step of `∂ₜu = Δ(A u)`: solves
/// `(I/τ − L·diag(A)) uⁿ⁺¹ = uⁿ/τ`.
pub fn implicit_diffusion_step(
    grid: &Grid,
    u_n: &Field,
    a: &Field,
    tau: f64,
    opts: &CgOptions,
) -> Result<(Field, SolverReport)> {
    check_len(grid, u_n)?;
    check_len(grid, a)?;
    implicit_step_with(&grid.assemble_laplacian(), u_n, a, tau, opts)
}

pub fn implicit_step_with(
    lap: &SparseMatrix,
    u_n: &Field,
    a: &Field,
    tau: f64,
    opts: &CgOptions,
) -> Result<(Field, SolverReport)> {
    check_step_inputs(u_n, a, tau)?;
    let diag: Vec<f64> = a.iter().map(|ai| 1.0 / (tau * ai)).collect();
    let b: Vec<f64> = u_n.iter().map(|ui| ui / tau).collect();
    let z0: Vec<f64> = a.iter().zip(u_n.iter()).map(|(ai, ui)| ai * ui).collect();
    let op = ShiftedOperator {
        diag: &diag,
        base: lap,
        scale: 1.0,
    };
    let (z, report) = cg_solve_from(&op, &b, z0, opts)?;
    let report = report.ensure_converged()?;
    let mut lz = vec![0.0; z.len()];
    lap.mul_vec(&z, &mut lz)?;
    let out = u_n.iter().zip(&lz).map(|(ui, li)| ui + tau * li).collect();
    Ok((Field::from_vec(out), report))
}

/// Dense pivoted solve of the unsymmetrized implicit system.
pub fn implicit_step_dense(lap: &SparseMatrix, u_n: &Field, a: &Field, tau: f64) -> Result<Field> {
    check_step_inputs(u_n, a, tau)?;
    let mut m = lap.to_dense();
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= -a[j];
        }
        row[i] += 1.0 / tau;
    }
    let b: Vec<f64> = u_n.iter().map(|ui| ui / tau).collect();
    Ok(Field::from_vec(dense_solve(&m, &b)?))
}

fn check_step_inputs(u_n: &Field, a: &Field, tau: f64) -> Result<()> {
    if a.len() != u_n.len() {
        return Err(Error::DimensionMismatch {
            expected: u_n.len(),
            actual: a.len(),
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidScheme(format!("tau must be positive, got {tau}")));
    }
    if let Some(cell) = a.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::CoefficientOutOfRange {
            species: 0,
            cell,
            value: a[cell],
            bound: 0.0,
        });
    }
    Ok(())
}

/// Per-species result of advancing one step with frozen coefficients.
#[derive(Debug, Clone)]
pub struct SpeciesAdvance {
    pub u: Field,
    pub u_tilde: Field,
    pub iterations: usize,
}

/// Receives per-step output of [`Stepper::run`].
pub trait Observer {
    /// Called once for the initial state (with `before == after`) and after
    /// every step.
    fn on_step(&mut self, _before: &SystemState, _after: &SystemState, _rows: &[DiagnosticsRow]) -> Result<()> {
        Ok(())
    }

    /// Called for the initial state, every `output_stride` steps and for
    /// the final state.
    fn on_snapshot(&mut self, _state: &SystemState) -> Result<()> {
        Ok(())
    }
}

pub struct NullObserver;

impl Observer for NullObserver {}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SystemState,
    pub rows: Vec<DiagnosticsRow>,
    pub shortened_last_step: bool,
}

/// Validated model and scheme together with the assembled Laplacian.
#[derive(Debug, Clone)]
pub struct Stepper<'m> {
    model: &'m ModelSpec,
    cfg: SchemeConfig,
    lap: SparseMatrix,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m ModelSpec, cfg: SchemeConfig) -> Result<Self> {
        let v = validate_model(model);
        if !v.is_empty() {
            return Err(Error::InvalidModel(v));
        }
        cfg.validate()?;
        Ok(Stepper {
            model,
            cfg,
            lap: model.grid.assemble_laplacian(),
        })
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn laplacian(&self) -> &SparseMatrix {
        &self.lap
    }

    pub fn grid(&self) -> &Grid {
        &self.model.grid
    }

    /// Maps `f` over species, on the rayon pool when configured. Each call
    /// is self-contained, so the result does not depend on the mode.
    pub(crate) fn per_species<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let n = self.model.species_count();
        if self.cfg.parallel {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }

    pub fn regularize(&self, species: usize, u: &Field) -> Result<(Field, usize)> {
        let delta = self.model.species[species].delta;
        match self.cfg.backend {
            LinearBackend::Iterative => {
                let (f, rep) = regularize_with(&self.lap, u, delta, &self.cfg.cg_options())?;
                Ok((f, rep.iterations))
            }
            LinearBackend::Dense => Ok((regularize_dense(&self.lap, u, delta)?, 0)),
        }
    }

    /// `ũ⁰ = J(u⁰)`, `w⁰ = δ ũ⁰`.
    pub fn initial_state(&self) -> Result<(SystemState, Vec<usize>)> {
        let res = self.per_species(|i| {
            let u = self.model.species[i].initial.clone();
            let (ut, iters) = self.regularize(i, &u).map_err(|e| e.in_species(0, i))?;
            Ok((u, ut, iters))
        })?;
        let mut state = SystemState {
            step: 0,
            time: 0.0,
            u: Vec::new(),
            u_tilde: Vec::new(),
            w: Vec::new(),
        };
        let mut iters = Vec::new();
        for (i, (u, ut, it)) in res.into_iter().enumerate() {
            let delta = self.model.species[i].delta;
            state.w.push(Field::from_vec(ut.iter().map(|v| delta * v).collect()));
            state.u.push(u);
            state.u_tilde.push(ut);
            iters.push(it);
        }
        Ok((state, iters))
    }

    /// Coefficient fields `Aᵢ = aᵢ([ũ]⁺)` for every species.
    pub fn coefficients(&self, u_tilde: &[Field]) -> Result<Vec<FrozenCoefficient>> {
        let n = self.model.species_count();
        let cells = self.model.grid.len();
        let clamp = self.cfg.clamp_tilde_positive;
        let negatives: Vec<usize> = u_tilde.iter().map(|f| f.iter().filter(|&&v| v < 0.0).count()).collect();
        let mut out = Vec::with_capacity(n);
        let mut r = vec![0.0; n];
        for (i, s) in self.model.species.iter().enumerate() {
            let bound = s.coefficient.lower_bound();
            let mut values = Vec::with_capacity(cells);
            let mut caps = 0;
            for c in 0..cells {
                for (j, rj) in r.iter_mut().enumerate() {
                    let v = u_tilde[j][c];
                    *rj = if clamp { v.max(0.0) } else { v };
                }
                let mut a = s.coefficient.eval_raw(&r);
                // Raw negative inputs may legitimately dip below the bound.
                let admissible = if r.iter().all(|&x| x >= 0.0) { a >= bound } else { a > 0.0 };
                if !(admissible && a.is_finite()) {
                    return Err(Error::CoefficientOutOfRange {
                        species: i,
                        cell: c,
                        value: a,
                        bound,
                    });
                }
                if let Some(cap) = self.cfg.coefficient_cap {
                    if a > cap {
                        a = cap;
                        caps += 1;
                    }
                }
                values.push(a);
            }
            out.push(FrozenCoefficient {
                values: Field::from_vec(values),
                clamp_activations: negatives[i],
                cap_activations: caps,
            });
        }
        Ok(out)
    }

    /// Implicit update of species `i` from `u_n` with frozen `a`, followed by
    /// the regularization of the result.
    pub fn advance(&self, i: usize, u_n: &Field, a: &Field, tau: f64) -> Result<SpeciesAdvance> {
        let (u, iters) = match self.cfg.backend {
            LinearBackend::Iterative => {
                let (u, rep) = implicit_step_with(&self.lap, u_n, a, tau, &self.cfg.cg_options())?;
                (u, rep.iterations)
            }
            LinearBackend::Dense => (implicit_step_dense(&self.lap, u_n, a, tau)?, 0),
        };
        let (u_tilde, reg_iters) = self.regularize(i, &u)?;
        Ok(SpeciesAdvance {
            u,
            u_tilde,
            iterations: iters + reg_iters,
        })
    }

    /// Assembles the next state from per-species advances, updating `w` by
    /// the rectangle rule `wⁿ⁺¹ = wⁿ + δ(ũⁿ⁺¹ − ũⁿ) + τ Aⁿ ⊙ uⁿ⁺¹`.
    pub fn assemble_state(
        &self,
        before: &SystemState,
        advances: Vec<SpeciesAdvance>,
        coefficients: &[FrozenCoefficient],
        tau: f64,
        time: f64,
    ) -> (SystemState, Vec<SpeciesStepStats>) {
        let mut state = SystemState {
            step: before.step + 1,
            time,
            u: Vec::new(),
            u_tilde: Vec::new(),
            w: Vec::new(),
        };
        let mut stats = Vec::new();
        for (i, adv) in advances.into_iter().enumerate() {
            let delta = self.model.species[i].delta;
            let a = &coefficients[i].values;
            let w: Vec<f64> = (0..adv.u.len())
                .map(|c| {
                    before.w[i][c] + delta * (adv.u_tilde[c] - before.u_tilde[i][c]) + tau * a[c] * adv.u[c]
                })
                .collect();
            let w_min_increment = w
                .iter()
                .zip(before.w[i].iter())
                .map(|(n, o)| n - o)
                .fold(f64::INFINITY, f64::min);
            stats.push(SpeciesStepStats {
                coef_min: a.min(),
                coef_max: a.max(),
                clamp_activations: coefficients[i].clamp_activations,
                cap_activations: coefficients[i].cap_activations,
                cg_iterations: adv.iterations,
                w_min_increment,
            });
            state.u.push(adv.u);
            state.u_tilde.push(adv.u_tilde);
            state.w.push(Field::from_vec(w));
        }
        (state, stats)
    }

    pub fn step(&self, state: &SystemState) -> Result<StepOutcome> {
        self.step_by(state, self.cfg.tau, state.time + self.cfg.tau)
    }

    /// One step of size `tau`, stamping the new state with `time`.
    pub fn step_by(&self, state: &SystemState, tau: f64, time: f64) -> Result<StepOutcome> {
        let step = state.step + 1;
        let coefficients = self.coefficients(&state.u_tilde).map_err(|e| match e {
            Error::CoefficientOutOfRange { species, .. } => e.in_species(step, species),
            other => other,
        })?;
        let advances = self.per_species(|i| {
            self.advance(i, &state.u[i], &coefficients[i].values, tau)
                .map_err(|e| e.in_species(step, i))
        })?;
        let (next, stats) = self.assemble_state(state, advances, &coefficients, tau, time);
        Ok(StepOutcome {
            state: next,
            stats,
            coefficients: coefficients.into_iter().map(|c| c.values).collect(),
        })
    }

    /// Marches to the horizon, reporting every step to `observer`.
    pub fn run(&self, observer: &mut dyn Observer) -> Result<RunOutput> {
        let (mut state, iters) = self.initial_state()?;
        let grid = &self.model.grid;
        let frozen = self.coefficients(&state.u_tilde)?;
        let mut rows: Vec<DiagnosticsRow> = (0..state.species_count())
            .map(|i| DiagnosticsRow::initial(grid, &state, i, &frozen[i], iters[i]))
            .collect();
        observer.on_step(&state, &state, &rows)?;
        observer.on_snapshot(&state)?;

        let (taus, shortened) = self.cfg.schedule();
        let n = taus.len();
        for (k, &tau) in taus.iter().enumerate() {
            let time = if k + 1 == n {
                self.cfg.horizon
            } else {
                (k + 1) as f64 * self.cfg.tau
            };
            let out = self.step_by(&state, tau, time)?;
            let step_rows: Vec<DiagnosticsRow> = out
                .stats
                .iter()
                .enumerate()
                .map(|(i, st)| DiagnosticsRow::from_step(grid, &out.state, i, st, k + 1 == n && shortened))
                .collect();
            observer.on_step(&state, &out.state, &step_rows)?;
            state = out.state;
            if state.step % self.cfg.output_stride == 0 || k + 1 == n {
                observer.on_snapshot(&state)?;
            }
            rows.extend(step_rows);
        }
        Ok(RunOutput {
            state,
            rows,
            shortened_last_step: shortened,
        })
    }
}

/// One semi-implicit step of `state` under `m` and `cfg`.
pub fn step(state: &SystemState, m: &ModelSpec, cfg: &SchemeConfig) -> Result<SystemState> {
    Ok(Stepper::new(m, cfg.clone())?.step(state)?.state)
}

/// Runs `m` to the horizon of `cfg`.
pub fn run(m: &ModelSpec, cfg: &SchemeConfig, observer: &mut dyn Observer) -> Result<RunOutput> {
    Stepper::new(m, cfg.clone())?.run(observer)
}
