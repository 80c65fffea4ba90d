//! Cell-centered rectangular grids with the zero-flux (homogeneous Neumann)
//! discrete Laplacian.
//!
//! Cells are flattened with axis 1 varying fastest: the cell `(i1, i2)` has
//! flat index `i1 + n1 * i2`. Each boundary cell only couples to the
//! neighbours that exist, which is the reflective closure of the
//! finite-volume flux form. The induced matrix is symmetric with zero row
//! sums, so the integral of any Laplacian vanishes.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: usize,
    cells: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    pub fn new_1d(n: usize, h: f64) -> Result<Self> {
        Self::new(&[n], &[h])
    }

    pub fn new_2d(n1: usize, n2: usize, h1: f64, h2: f64) -> Result<Self> {
        Self::new(&[n1, n2], &[h1, h2])
    }

    /// Uniform grid of `n` cells per axis on the unit interval or square.
    pub fn unit(dims: usize, n: usize) -> Result<Self> {
        let h = 1.0 / n as f64;
        match dims {
            1 => Self::new_1d(n, h),
            2 => Self::new_2d(n, n, h, h),
            _ => Err(Error::InvalidGrid(format!("dims must be 1 or 2, got {dims}"))),
        }
    }

    pub fn new(cells: &[usize], spacing: &[f64]) -> Result<Self> {
        let dims = cells.len();
        if !(1..=2).contains(&dims) {
            return Err(Error::InvalidGrid(format!("dims must be 1 or 2, got {dims}")));
        }
        if spacing.len() != dims {
            return Err(Error::InvalidGrid(format!(
                "{dims} axes but {} spacings",
                spacing.len()
            )));
        }
        if let Some(axis) = cells.iter().position(|&n| n == 0) {
            return Err(Error::InvalidGrid(format!("axis {} has no cells", axis + 1)));
        }
        if let Some(axis) = spacing.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing on axis {} must be positive and finite, got {}",
                axis + 1,
                spacing[axis]
            )));
        }
        let mut g = Grid {
            dims,
            cells: [1, 1],
            spacing: [1.0, 1.0],
        };
        g.cells[..dims].copy_from_slice(cells);
        g.spacing[..dims].copy_from_slice(spacing);
        Ok(g)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dims]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dims]
    }

    pub fn domain_lengths(&self) -> Vec<f64> {
        (0..self.dims)
            .map(|a| self.cells[a] as f64 * self.spacing[a])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing[..self.dims].iter().product()
    }

    pub fn domain_measure(&self) -> f64 {
        self.cell_measure() * self.len() as f64
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 + self.cells[0] * i2
    }

    /// Axis indices `(i1, i2)` of a flat cell index (`i2 = 0` in 1D).
    #[inline]
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.cells[0], cell / self.cells[0])
    }

    /// Physical coordinates of the cell center.
    pub fn center(&self, cell: usize) -> [f64; 2] {
        let (i1, i2) = self.coords(cell);
        [
            (i1 as f64 + 0.5) * self.spacing[0],
            if self.dims == 2 {
                (i2 as f64 + 0.5) * self.spacing[1]
            } else {
                0.0
            },
        ]
    }

    pub fn zeros(&self) -> Field {
        Field::constant(self, 0.0)
    }

    pub fn field_from_fn(&self, mut f: impl FnMut([f64; 2]) -> f64) -> Field {
        Field((0..self.len()).map(|c| f(self.center(c))).collect())
    }

    fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: f.len(),
            });
        }
        Ok(())
    }

    /// Neighbours of `cell` together with the coupling weight `1/h²` of the
    /// shared face.
    fn neighbours(&self, cell: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (i1, i2) = self.coords(cell);
        let w1 = 1.0 / (self.spacing[0] * self.spacing[0]);
        let w2 = 1.0 / (self.spacing[1] * self.spacing[1]);
        let n1 = self.cells[0];
        let n2 = self.cells[1];
        let lower1 = (i1 > 0).then(|| (cell - 1, w1));
        let upper1 = (i1 + 1 < n1).then(|| (cell + 1, w1));
        let lower2 = (self.dims == 2 && i2 > 0).then(|| (cell - n1, w2));
        let upper2 = (self.dims == 2 && i2 + 1 < n2).then(|| (cell + n1, w2));
        [lower2, lower1, upper1, upper2].into_iter().flatten()
    }

    /// Matrix-free application of the zero-flux Laplacian.
    pub fn laplacian_apply(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let out = (0..self.len())
            .map(|c| {
                let fc = f[c];
                self.neighbours(c).map(|(nb, w)| w * (f[nb] - fc)).sum()
            })
            .collect();
        Ok(Field(out))
    }

    /// Compressed-row form of [`Grid::laplacian_apply`].
    pub fn assemble_laplacian(&self) -> SparseMatrix {
        let n = self.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(5 * n);
        let mut vals = Vec::with_capacity(5 * n);
        row_offsets.push(0);
        for c in 0..n {
            let mut row: Vec<(usize, f64)> = self.neighbours(c).collect();
            let diag: f64 = -row.iter().map(|&(_, w)| w).sum::<f64>();
            row.push((c, diag));
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_offsets.push(cols.len());
        }
        SparseMatrix::from_csr(n, n, row_offsets, cols, vals)
            .and_then(SparseMatrix::with_zero_row_sums)
            .expect("stencil produces a well-formed zero-row-sum CSR layout")
    }

    /// Midpoint quadrature: cell measure times the sum of cell values.
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.check(f)?;
        Ok(self.cell_measure() * f.iter().sum::<f64>())
    }

    /// `L²(Ω)` inner product under midpoint quadrature.
    pub fn inner(&self, a: &Field, b: &Field) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.cell_measure() * a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
    }
}

/// Scalar values on the cells of a [`Grid`], flat in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        grid.check(&values)?;
        if let Some(cell) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                cell,
                value: values[cell],
            });
        }
        Ok(Field(values))
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field(vec![c; grid.len()])
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest componentwise distance to `other`.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
