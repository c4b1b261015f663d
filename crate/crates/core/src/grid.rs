//! Cell-centered rectangular meshes with mirror-ghost (zero-flux) boundaries,
//! plus the discrete calculus every other module builds on.
//!
//! Cells are stored row-major with axis 0 varying slowest. Axes beyond the
//! grid dimension are carried internally as a single cell so that 1D, 2D and
//! 3D meshes share the same loops.
//!
//! The ghost cell outside each boundary carries the value of the boundary
//! cell itself. The difference across every boundary face is therefore zero,
//! which is the discrete statement of `∂f/∂ν = 0`, and conservation-form
//! operators telescope to exactly zero total.

use thiserror::Error;

/// Errors raised by grid construction and the discrete operators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("cells and lengths disagree on the number of axes ({cells} vs {lengths})")]
    AxisCount { cells: usize, lengths: usize },
    #[error("axis {axis} has {cells} cells; at least {required} are required")]
    TooFewCells {
        axis: usize,
        cells: usize,
        required: usize,
    },
    #[error("axis {axis} has non-positive or non-finite length {length}")]
    Length { axis: usize, length: f64 },
    #[error("field has {got} values but the grid has {expected} cells")]
    ValueCount { expected: usize, got: usize },
    #[error("non-finite value {value} at cell {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("L^p exponent must satisfy p >= 1 or p = inf (got {0})")]
    Exponent(f64),
    #[error("expected one face flux per axis ({expected}), got {got}")]
    FluxAxes { expected: usize, got: usize },
    #[error("face flux on axis {axis} has shape {got:?}, expected {expected:?}")]
    FaceShape {
        axis: usize,
        expected: [usize; 3],
        got: [usize; 3],
    },
    #[error("boundary face flux on axis {axis} is {value}, must be exactly zero")]
    BoundaryFlux { axis: usize, value: f64 },
    #[error("cannot restrict a {fine:?} grid onto {coarse:?}")]
    Restriction {
        fine: [usize; 3],
        coarse: [usize; 3],
    },
}

pub type Result<T> = std::result::Result<T, GridError>;

/// Axis-aligned rectangle `[0, L_0] × … × [0, L_{d-1}]` split into uniform cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 3],
    lengths: [f64; 3],
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(lengths: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = cells.len();
        if !(1..=3).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if lengths.len() != dim {
            return Err(GridError::AxisCount {
                cells: dim,
                lengths: lengths.len(),
            });
        }
        let mut grid = Grid {
            dim,
            cells: [1; 3],
            lengths: [1.0; 3],
            spacing: [1.0; 3],
        };
        for axis in 0..dim {
            let (n, l) = (cells[axis], lengths[axis]);
            if n < 2 {
                return Err(GridError::TooFewCells {
                    axis,
                    cells: n,
                    required: 2,
                });
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(GridError::Length { axis, length: l });
            }
            grid.cells[axis] = n;
            grid.lengths[axis] = l;
            grid.spacing[axis] = l / n as f64;
        }
        Ok(grid)
    }

    /// Unit hypercube with `n` cells along each of `dim` axes.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(&vec![1.0; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn h_min(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Same domain with every axis split twice as finely.
    pub fn refined(&self) -> Self {
        let cells: Vec<usize> = self.cells().iter().map(|n| 2 * n).collect();
        Grid::new(self.lengths(), &cells).expect("refining a valid grid stays valid")
    }

    pub(crate) fn dims3(&self) -> [usize; 3] {
        self.cells
    }

    pub(crate) fn stride(&self, axis: usize) -> usize {
        stride(self.cells, axis)
    }

    /// Multi-index of a flat cell index (unused axes are 0).
    pub fn unravel(&self, index: usize) -> [usize; 3] {
        let [_, n1, n2] = self.cells;
        [index / (n1 * n2), (index / n2) % n1, index % n2]
    }

    /// Cell-center coordinates (unused axes are 0).
    pub fn center(&self, index: usize) -> [f64; 3] {
        let ijk = self.unravel(index);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = (ijk[axis] as f64 + 0.5) * self.spacing[axis];
        }
        x
    }

    pub(crate) fn require_cells(&self, required: usize) -> Result<()> {
        for (axis, &n) in self.cells().iter().enumerate() {
            if n < required {
                return Err(GridError::TooFewCells {
                    axis,
                    cells: n,
                    required,
                });
            }
        }
        Ok(())
    }
}

fn stride(dims: [usize; 3], axis: usize) -> usize {
    dims[axis + 1..].iter().product()
}

/// Calls `f(start, stride)` for every 1D line of `dims` running along `axis`.
fn for_each_line(dims: [usize; 3], axis: usize, mut f: impl FnMut(usize, usize)) {
    let s = stride(dims, axis);
    let outer: usize = dims[..axis].iter().product();
    let block = dims[axis] * s;
    for o in 0..outer {
        for inner in 0..s {
            f(o * block + inner, s);
        }
    }
}

/// Scalar samples, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    /// Wraps raw cell values; rejects wrong lengths and non-finite entries.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(GridError::ValueCount {
                expected: grid.num_cells(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_cells());
        Field { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field::from_raw(grid, vec![c; grid.num_cells()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.num_cells()).map(|i| f(grid.center(i))).collect();
        Field::from_raw(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Field::from_raw(self.grid, values))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest cellwise difference `max |self − other|`.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Averages blocks of `2^dim` fine cells onto `coarse`, whose cell counts
    /// must be exactly half of this field's.
    pub fn restrict_to(&self, coarse: &Grid) -> Result<Field> {
        let fine = self.grid;
        let ok = fine.dim == coarse.dim
            && (0..fine.dim).all(|a| {
                fine.cells[a] == 2 * coarse.cells[a]
                    && (fine.lengths[a] - coarse.lengths[a]).abs() <= 1e-12 * fine.lengths[a]
            });
        if !ok {
            return Err(GridError::Restriction {
                fine: fine.cells,
                coarse: coarse.cells,
            });
        }
        let weight = 1.0 / (1usize << fine.dim) as f64;
        let mut out = vec![0.0; coarse.num_cells()];
        for (i, &v) in self.values.iter().enumerate() {
            let ijk = fine.unravel(i);
            let c = [ijk[0] >> 1, ijk[1] >> 1, ijk[2] >> 1];
            let [_, n1, n2] = coarse.cells;
            out[(c[0] * n1 + c[1]) * n2 + c[2]] += weight * v;
        }
        Ok(Field::from_raw(*coarse, out))
    }
}

/// Flux values on the cell faces normal to one axis.
///
/// Along `axis` there are `cells + 1` faces; face `k` separates cells `k − 1`
/// and `k`. The first and last faces lie on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    axis: usize,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid, axis: usize) -> Self {
        let dims = face_dims(grid, axis);
        FaceField {
            axis,
            dims,
            values: vec![0.0; dims.iter().product()],
        }
    }

    /// Builds a face flux from `f(lower_cell, upper_cell)` on interior faces;
    /// boundary faces are left at zero.
    pub fn from_interior(grid: &Grid, axis: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut face = Self::zeros(grid, axis);
        let n = grid.cells[axis];
        let cell_dims = grid.dims3();
        let cs = grid.stride(axis);
        let fs = stride(face.dims, axis);
        for_each_line(cell_dims, axis, |cstart, _| {
            let fstart = face_line_start(cell_dims, face.dims, axis, cstart);
            for k in 1..n {
                let lo = cstart + (k - 1) * cs;
                face.values[fstart + k * fs] = f(lo, lo + cs);
            }
        });
        face
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn face_dims(grid: &Grid, axis: usize) -> [usize; 3] {
    let mut dims = grid.dims3();
    dims[axis] += 1;
    dims
}

/// Maps the start of a cell line along `axis` to the start of the matching face line.
fn face_line_start(
    cell_dims: [usize; 3],
    face_dims: [usize; 3],
    axis: usize,
    cstart: usize,
) -> usize {
    let s = stride(cell_dims, axis);
    let outer = cstart / (cell_dims[axis] * s);
    let inner = cstart % s;
    outer * face_dims[axis] * s + inner
}

/// Second-order Laplacian with mirror ghosts.
pub fn laplacian(f: &Field) -> Result<Field> {
    let grid = f.grid;
    grid.require_cells(2)?;
    let mut out = vec![0.0; grid.num_cells()];
    for axis in 0..grid.dim {
        let n = grid.cells[axis];
        let inv_h2 = 1.0 / (grid.spacing[axis] * grid.spacing[axis]);
        for_each_line(grid.dims3(), axis, |start, s| {
            let v = &f.values;
            for k in 0..n {
                let c = start + k * s;
                let lo = if k == 0 { c } else { c - s };
                let hi = if k + 1 == n { c } else { c + s };
                // (hi − c) − (c − lo): the two face differences, each zero on the boundary.
                out[c] += ((v[hi] - v[c]) - (v[c] - v[lo])) * inv_h2;
            }
        });
    }
    Ok(Field::from_raw(grid, out))
}

/// Central differences along `axis` with mirror ghosts.
fn derivative(f: &Field, axis: usize) -> Field {
    let grid = f.grid;
    let n = grid.cells[axis];
    let inv_2h = 0.5 / grid.spacing[axis];
    let mut out = vec![0.0; grid.num_cells()];
    for_each_line(grid.dims3(), axis, |start, s| {
        let v = &f.values;
        for k in 0..n {
            let c = start + k * s;
            let lo = if k == 0 { c } else { c - s };
            let hi = if k + 1 == n { c } else { c + s };
            out[c] = (v[hi] - v[lo]) * inv_2h;
        }
    });
    Field::from_raw(grid, out)
}

/// Cell-centered gradient, one component per axis.
///
/// Boundary cells difference against the mirror ghost, so the result there is
/// the mean of the interior face gradient and the (zero) boundary face gradient.
pub fn grad_centered(f: &Field) -> Result<Vec<Field>> {
    f.grid.require_cells(2)?;
    Ok((0..f.grid.dim).map(|axis| derivative(f, axis)).collect())
}

/// Conservative divergence of staggered face fluxes.
///
/// Boundary faces must carry exactly zero flux.
pub fn flux_divergence(grid: &Grid, fluxes: &[FaceField]) -> Result<Field> {
    grid.require_cells(2)?;
    if fluxes.len() != grid.dim {
        return Err(GridError::FluxAxes {
            expected: grid.dim,
            got: fluxes.len(),
        });
    }
    let mut out = vec![0.0; grid.num_cells()];
    for (axis, flux) in fluxes.iter().enumerate() {
        let expected = face_dims(grid, axis);
        if flux.axis != axis || flux.dims != expected {
            return Err(GridError::FaceShape {
                axis,
                expected,
                got: flux.dims,
            });
        }
        let n = grid.cells[axis];
        let inv_h = 1.0 / grid.spacing[axis];
        let cs = grid.stride(axis);
        let fs = stride(flux.dims, axis);
        let mut bad = None;
        for_each_line(grid.dims3(), axis, |cstart, _| {
            let fstart = face_line_start(grid.dims3(), flux.dims, axis, cstart);
            let q = &flux.values;
            for boundary in [q[fstart], q[fstart + n * fs]] {
                if boundary != 0.0 && bad.is_none() {
                    bad = Some(boundary);
                }
            }
            for k in 0..n {
                out[cstart + k * cs] += (q[fstart + (k + 1) * fs] - q[fstart + k * fs]) * inv_h;
            }
        });
        if let Some(value) = bad {
            return Err(GridError::BoundaryFlux { axis, value });
        }
    }
    Ok(Field::from_raw(*grid, out))
}

/// Symmetric matrix of second derivatives, stored as the upper triangle.
#[derive(Debug, Clone)]
pub struct Hessian {
    dim: usize,
    entries: Vec<Field>,
}

impl Hessian {
    fn slot(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * dim - i * (i + 1) / 2 + j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> &Field {
        &self.entries[Self::slot(self.dim, i, j)]
    }

    /// Cellwise `|D²f|² = Σ_{i,j} (∂_i∂_j f)²`, mixed entries counted twice.
    pub fn frobenius_sq(&self) -> Field {
        let grid = *self.entries[0].grid();
        let mut out = vec![0.0; grid.num_cells()];
        for i in 0..self.dim {
            for j in i..self.dim {
                let weight = if i == j { 1.0 } else { 2.0 };
                for (o, v) in out.iter_mut().zip(self.entry(i, j).values()) {
                    *o += weight * v * v;
                }
            }
        }
        Field::from_raw(grid, out)
    }
}

/// Second-derivative stencils: the Laplacian stencil per axis on the diagonal,
/// centered cross-differences with mirror ghosts off the diagonal.
pub fn hessian_entries(f: &Field) -> Result<Hessian> {
    let grid = f.grid;
    grid.require_cells(3)?;
    let dim = grid.dim;
    let first: Vec<Field> = (0..dim).map(|a| derivative(f, a)).collect();
    let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in i..dim {
            if i == j {
                entries.push(second_difference(f, i));
            } else {
                entries.push(derivative(&first[i], j));
            }
        }
    }
    Ok(Hessian { dim, entries })
}

fn second_difference(f: &Field, axis: usize) -> Field {
    let grid = f.grid;
    let n = grid.cells[axis];
    let inv_h2 = 1.0 / (grid.spacing[axis] * grid.spacing[axis]);
    let mut out = vec![0.0; grid.num_cells()];
    for_each_line(grid.dims3(), axis, |start, s| {
        let v = &f.values;
        for k in 0..n {
            let c = start + k * s;
            let lo = if k == 0 { c } else { c - s };
            let hi = if k + 1 == n { c } else { c + s };
            out[c] = ((v[hi] - v[c]) - (v[c] - v[lo])) * inv_h2;
        }
    });
    Field::from_raw(grid, out)
}

/// Midpoint rule.
pub fn integrate(f: &Field) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// `(∫|f|^p)^{1/p}`, or `max |f|` for `p = ∞`.
pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(GridError::Exponent(p));
    }
    if p.is_infinite() {
        return Ok(f.values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let sum: f64 = if p == 1.0 {
        f.values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        f.values.iter().map(|v| v * v).sum()
    } else {
        f.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    Ok((sum * f.grid.cell_volume()).powf(1.0 / p))
}
