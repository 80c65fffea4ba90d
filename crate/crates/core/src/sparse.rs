//! Compressed-row matrices, conjugate gradients and a dense LU oracle.

use crate::error::{Error, Result};

/// Square or rectangular matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    entries: Vec<f64>,
    zero_row_sums: bool,
}

impl SparseMatrix {
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        entries: Vec<f64>,
    ) -> Result<Self> {
        let layout = |msg: String| Err(Error::InvalidGrid(format!("bad CSR layout: {msg}")));
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return layout("row offsets".into());
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != entries.len()
        {
            return layout("offset/index/entry lengths disagree".into());
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if hi < lo {
                return layout(format!("row {r} offsets decrease"));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n_cols) {
                return layout(format!("row {r} has a column out of bounds"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return layout(format!("row {r} columns unsorted or duplicated"));
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            entries,
            zero_row_sums: false,
        })
    }

    /// Declares that every row sums to zero. Products are then evaluated in
    /// difference form, `yᵢ = Σ_{j≠i} aᵢⱼ (xⱼ − xᵢ)`, which maps constant
    /// vectors to exact zeros.
    pub fn with_zero_row_sums(mut self) -> Result<Self> {
        for r in 0..self.n_rows {
            let (sum, mag) = self.row(r).fold((0.0, 0.0), |(s, m), (_, v)| (s + v, m + v.abs()));
            if sum.abs() > 1e-12 * mag {
                return Err(Error::InvalidGrid(format!("row {r} sums to {sum}, not zero")));
            }
        }
        self.zero_row_sums = true;
        Ok(self)
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::InvalidGrid(format!("triplet ({r}, {c}) out of bounds")));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0; n_rows + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            cols.push(c);
            vals.push(v);
            row_offsets[r + 1] = cols.len();
        }
        for r in 0..n_rows {
            row_offsets[r + 1] = row_offsets[r + 1].max(row_offsets[r]);
        }
        Self::from_csr(n_rows, n_cols, row_offsets, cols, vals)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            entries: vec![1.0; n],
            zero_row_sums: false,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Iterates the stored `(col, value)` pairs of a row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.entries[lo..hi].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                actual: x.len(),
            });
        }
        if y.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                actual: y.len(),
            });
        }
        self.mul_vec_unchecked(x, y);
        Ok(())
    }

    fn mul_vec_unchecked(&self, x: &[f64], y: &mut [f64]) {
        if self.zero_row_sums {
            for (r, yr) in y.iter_mut().enumerate() {
                let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
                let xr = x[r];
                let mut acc = 0.0;
                for k in lo..hi {
                    let c = self.col_indices[k];
                    if c != r {
                        acc += self.entries[k] * (x[c] - xr);
                    }
                }
                *yr = acc;
            }
            return;
        }
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.entries[k] * x[self.col_indices[k]];
            }
            *yr = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }
}

/// A square linear map usable by [`cg_solve`].
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y ← A x`; both slices have length [`LinearOperator::dim`].
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_unchecked(x, y);
    }

    fn diagonal(&self) -> Vec<f64> {
        SparseMatrix::diagonal(self)
    }
}

/// `diag(d) − s·L` for a sparse `L`, applied without materializing it.
///
/// With `L` the zero-flux Laplacian, `d > 0` and `s ≥ 0` this is symmetric
/// positive definite.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedOperator<'a> {
    pub diag: &'a [f64],
    pub base: &'a SparseMatrix,
    pub scale: f64,
}

impl LinearOperator for ShiftedOperator<'_> {
    fn dim(&self) -> usize {
        self.base.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.base.mul_vec_unchecked(x, y);
        for ((yi, &di), &xi) in y.iter_mut().zip(self.diag).zip(x) {
            *yi = di * xi - self.scale * *yi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.base
            .diagonal()
            .iter()
            .zip(self.diag)
            .map(|(l, d)| d - self.scale * l)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    #[default]
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: 10_000,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
    pub tolerance_used: f64,
    /// The absolute target `tol · (‖b‖₂ + ε_abs)` the residual was held to.
    pub target: f64,
}

impl SolverReport {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residual_norm,
                target: self.target,
            })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients from a zero initial guess.
///
/// Stops once `‖b − Ax‖₂ ≤ tol · (‖b‖₂ + ε_abs)` with
/// `ε_abs = 1e-14 · ‖b‖∞ · n`, checked on the true residual. A report with
/// `converged == false` is returned (not an error) when `max_iter` runs out.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    cg_solve_from(a, b, vec![0.0; b.len()], opts)
}

pub fn cg_solve_from<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Vec<f64>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    let n = a.dim();
    for len in [b.len(), x0.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let b_inf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps_abs = 1e-14 * b_inf * n as f64;
    let target = opts.tol * (dot(b, b).sqrt() + eps_abs);

    let inv_diag: Option<Vec<f64>> = match opts.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(a.diagonal().iter().map(|d| 1.0 / d).collect()),
    };
    let precondition = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(m) => z.iter_mut().zip(r).zip(m).for_each(|((zi, ri), mi)| *zi = ri * mi),
        None => z.copy_from_slice(r),
    };

    let mut x = x0;
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], scratch: &mut [f64]| {
        a.apply(x, scratch);
        for i in 0..n {
            r[i] = b[i] - scratch[i];
        }
        dot(r, r).sqrt()
    };
    let mut rnorm = true_residual(&x, &mut r, &mut ap);
    let initial = rnorm;
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut iterations = 0;

    // Outer loop restarts from the true residual when the recurrence
    // residual has drifted below the target but the true one has not.
    'outer: while rnorm > target && iterations < opts.max_iter {
        precondition(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < opts.max_iter {
            a.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break 'outer;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if dot(&r, &r).sqrt() <= target {
                rnorm = true_residual(&x, &mut r, &mut ap);
                continue 'outer;
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        rnorm = true_residual(&x, &mut r, &mut ap);
    }

    let report = SolverReport {
        iterations,
        residual_norm: rnorm,
        initial_residual_norm: initial,
        converged: rnorm <= target,
        tolerance_used: opts.tol,
        target,
    };
    Ok((x, report))
}

/// Gaussian elimination with partial pivoting on a dense row-major matrix.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.len(),
        });
    }
    if let Some(row) = a.iter().find(|row| row.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: row.len(),
        });
    }
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() <= f64::EPSILON * scale * n as f64 || scale == 0.0 {
            return Err(Error::Singular { column: col });
        }
        m.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| m[col][k] * x[k]).sum();
        x[col] = (x[col] - s) / m[col][col];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tridiag_2x2() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)])
            .unwrap()
    }

    #[test]
    fn cg_two_by_two() {
        let (x, rep) = cg_solve(&tridiag_2x2(), &[2.0, 0.0], &CgOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((x[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cg_identity_is_one_iteration() {
        let b = [3.0, -1.0, 0.5, 7.0];
        let (x, rep) = cg_solve(&SparseMatrix::identity(4), &b, &CgOptions::default()).unwrap();
        assert!(rep.iterations <= 1);
        assert_eq!(x, b);
    }

    #[test]
    fn cg_zero_rhs_is_immediate() {
        let (x, rep) = cg_solve(&tridiag_2x2(), &[0.0, 0.0], &CgOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn helmholtz_keeps_constants() {
        let g = crate::grid::Grid::new_1d(3, 1.0).unwrap();
        let lap = g.assemble_laplacian();
        let ones = vec![1.0; 3];
        let op = ShiftedOperator {
            diag: &ones,
            base: &lap,
            scale: 0.7,
        };
        let (x, rep) = cg_solve(&op, &[2.5; 3], &CgOptions::default()).unwrap();
        assert!(rep.converged);
        for v in x {
            assert!((v - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let g = crate::grid::Grid::new_1d(50, 0.02).unwrap();
        let lap = g.assemble_laplacian();
        let d = vec![1e-3; 50];
        let op = ShiftedOperator {
            diag: &d,
            base: &lap,
            scale: 1.0,
        };
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let opts = CgOptions {
            tol: 1e-14,
            max_iter: 3,
            ..Default::default()
        };
        let (_, rep) = cg_solve(&op, &b, &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(matches!(rep.ensure_converged(), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn cg_dimension_mismatch() {
        assert!(cg_solve(&tridiag_2x2(), &[1.0], &CgOptions::default()).is_err());
    }

    #[test]
    fn dense_examples() {
        let x = dense_solve(&[vec![3.0, -1.0], vec![-2.0, 2.0]], &[2.0, 0.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(dense_solve(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dense_detects_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(matches!(dense_solve(&a, &[1.0, 1.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn triplets_sum_duplicates_and_allow_empty_rows() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (0, 0, 2.0), (2, 1, 5.0)]).unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.row(1).count(), 0);
        assert_eq!(m.get(2, 1), 5.0);
    }

    #[test]
    fn malformed_csr_is_rejected() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        // B Bᵀ + n I, kept sparse-ish by zeroing entries.
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.gen_bool(0.4) { rng.gen_range(-1.0..1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b[i][k] * b[j][k]).sum();
            }
            a[i][i] += 1.0;
        }
        a
    }

    fn to_sparse(a: &[Vec<f64>]) -> SparseMatrix {
        let n = a.len();
        let t: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| a[i][j] != 0.0)
            .map(|(i, j)| (i, j, a[i][j]))
            .collect();
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn rel_err(x: &[f64], y: &[f64]) -> f64 {
        let num = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = y.iter().map(|b| b * b).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn random_spd_8x8_dense_and_cg_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_spd(8, &mut rng);
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xd = dense_solve(&a, &b).unwrap();
        let (xc, _) = cg_solve(&to_sparse(&a), &b, &CgOptions { tol: 1e-13, ..Default::default() }).unwrap();
        assert!(rel_err(&xc, &xd) <= 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cg_matches_dense_on_random_spd(n in 1usize..=64, seed in any::<u64>(), jacobi in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xd = dense_solve(&a, &b).unwrap();
            let opts = CgOptions {
                tol: 1e-12,
                max_iter: 10 * n,
                preconditioner: if jacobi { Preconditioner::Jacobi } else { Preconditioner::None },
            };
            let (xc, rep) = cg_solve(&to_sparse(&a), &b, &opts).unwrap();
            prop_assert!(rep.converged);
            prop_assert!(rel_err(&xc, &xd) <= 1e-8);
        }

        #[test]
        fn cg_iteration_count_is_bounded(n in 1usize..=64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let opts = CgOptions { tol: 1e-10, max_iter: 100 * n, ..Default::default() };
            let (_, rep) = cg_solve(&to_sparse(&a), &b, &opts).unwrap();
            prop_assert!(rep.converged);
            prop_assert!(rep.iterations <= 3 * n, "{} iterations for n = {}", rep.iterations, n);
        }
    }
}
