//! Neumann Laplacian on a node set and its pressure solvers.
//!
//! The operator is negative semidefinite with the constants as nullspace
//! (one per connected component). Both solver paths work on `M = -A`:
//! the direct path removes one pinned node per component and factors the
//! remaining SPD block with an envelope Cholesky in reverse Cuthill–McKee
//! order; the iterative path runs CG with a zero-fill incomplete Cholesky
//! preconditioner on the compatible singular system.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::band_fields::BandScalarField;
use crate::error::{Error, Result};
use crate::geometry::NodeSet;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().zip(&self.vals[range]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (yi, w) in y.iter_mut().zip(self.row_ptr.windows(2)) {
            let (cols, vals) = (&self.cols[w[0]..w[1]], &self.vals[w[0]..w[1]]);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *yi = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .fold(0.0, |m, (i, j, v)| m.max((v - self.get(j, i)).abs()))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    ConjugateGradient,
    Trivial,
}

#[derive(Clone, Debug)]
pub struct PressureSolution {
    pub pressure: BandScalarField,
    pub method: SolveMethod,
    pub iterations: usize,
    /// Relative residual `‖b - A p‖ / ‖b‖` of the compatible system.
    pub residual: f64,
}

/// Parameters consulted by [`solve_pressure`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverLimits {
    pub direct_solver_threshold: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

/// The band Laplacian with Neumann closure and optional cached factorization.
#[derive(Debug)]
pub struct PoissonOperator {
    matrix: CsrMatrix,
    stamp: u64,
    component_of: Vec<u32>,
    component_sizes: Vec<usize>,
    pins: Vec<usize>,
    factor: OnceLock<Option<EnvelopeCholesky>>,
    ichol: OnceLock<IncompleteCholesky>,
}

/// Seven-point Laplacian; a missing neighbor drops its flux and the
/// diagonal shrinks with it so every row sums to zero.
pub fn assemble_laplacian(nodes: &NodeSet) -> PoissonOperator {
    let n = nodes.len();
    let inv_h2 = 1.0 / (nodes.spacing() * nodes.spacing());
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(7 * n);
    let mut vals = Vec::with_capacity(7 * n);
    row_ptr.push(0);
    for o in 0..n {
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(7);
        let mut diag = 0.0;
        for axis in 0..3 {
            for step in [-1, 1] {
                if let Some(nb) = nodes.neighbor(o, axis, step) {
                    row.push((nb as u32, inv_h2));
                    diag -= inv_h2;
                }
            }
        }
        row.push((o as u32, diag));
        row.sort_by_key(|&(c, _)| c);
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    let matrix = CsrMatrix { n, row_ptr, cols, vals };

    // connected components by BFS
    let mut component_of = vec![u32::MAX; n];
    let mut component_sizes = Vec::new();
    let mut pins = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if component_of[seed] != u32::MAX {
            continue;
        }
        let id = component_sizes.len() as u32;
        component_of[seed] = id;
        pins.push(seed);
        queue.push_back(seed);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for (j, _) in matrix.row(i) {
                if component_of[j] == u32::MAX {
                    component_of[j] = id;
                    queue.push_back(j);
                }
            }
        }
        component_sizes.push(size);
    }

    PoissonOperator {
        matrix,
        stamp: NEXT_STAMP.fetch_add(1, Ordering::Relaxed),
        component_of,
        component_sizes,
        pins,
        factor: OnceLock::new(),
        ichol: OnceLock::new(),
    }
}

impl PoissonOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.n
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn component_count(&self) -> usize {
        self.component_sizes.len()
    }

    /// Applies the Laplacian to a field.
    pub fn apply(&self, field: &BandScalarField) -> BandScalarField {
        BandScalarField::from_values(self.matrix.mul(field.values()))
    }

    /// Builds (once) the cached factorization. Returns whether one is available.
    pub fn factorize(&self) -> bool {
        self.factor
            .get_or_init(|| match EnvelopeCholesky::factor_pinned(&self.matrix, &self.pins, self.stamp) {
                Ok(f) => Some(f),
                Err(e) => {
                    warn!("pressure factorization failed, falling back to conjugate gradient: {e}");
                    None
                }
            })
            .is_some()
    }

    pub fn has_factorization(&self) -> bool {
        matches!(self.factor.get(), Some(Some(_)))
    }

    /// Subtracts the per-component mean, in place.
    fn remove_component_means(&self, values: &mut [f64]) {
        // a second pass removes the rounding left by the first
        self.subtract_means(values);
        self.subtract_means(values);
    }

    fn subtract_means(&self, values: &mut [f64]) {
        let mut sums = vec![0.0; self.component_sizes.len()];
        for (v, &c) in values.iter().zip(&self.component_of) {
            sums[c as usize] += v;
        }
        for (s, &size) in sums.iter_mut().zip(&self.component_sizes) {
            *s /= size as f64;
        }
        for (v, &c) in values.iter_mut().zip(&self.component_of) {
            *v -= sums[c as usize];
        }
    }

    fn residual_norm(&self, p: &[f64], b: &[f64]) -> f64 {
        let ap = self.matrix.mul(p);
        ap.iter().zip(b).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }
}

/// Zero-fill incomplete `L D L^T` of `M = -A`. The band graph has no
/// triangles, so the off-diagonal factors keep the values of `M` and only
/// the pivots need computing.
#[derive(Debug)]
struct IncompleteCholesky {
    inv_pivots: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl IncompleteCholesky {
    fn new(matrix: &CsrMatrix) -> Self {
        let n = matrix.n;
        let mut pivots = vec![0.0; n];
        let mut diag_pos = vec![0; n];
        for i in 0..n {
            let mut m_ii = 0.0;
            let mut sub = 0.0;
            for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
                let (j, a) = (matrix.cols[k] as usize, matrix.vals[k]);
                if j < i {
                    sub += a * a / pivots[j];
                } else if j == i {
                    m_ii = -a;
                    diag_pos[i] = k;
                }
            }
            let d = m_ii - sub;
            // the last node of each component has a near-zero pivot
            pivots[i] = if d > 1e-8 * m_ii { d } else if m_ii > 0.0 { m_ii } else { 1.0 };
        }
        Self {
            inv_pivots: pivots.iter().map(|d| 1.0 / d).collect(),
            diag_pos,
        }
    }

    /// `z = (D + L) D^-1 (D + L^T)` inverse applied to `r`.
    fn apply(&self, matrix: &CsrMatrix, r: &[f64], z: &mut [f64]) {
        let n = matrix.n;
        let (cols, vals) = (&matrix.cols, &matrix.vals);
        for i in 0..n {
            let lo = matrix.row_ptr[i];
            let mid = self.diag_pos[i];
            let mut acc = r[i];
            for (&c, &a) in cols[lo..mid].iter().zip(&vals[lo..mid]) {
                acc += a * z[c as usize];
            }
            z[i] = acc * self.inv_pivots[i];
        }
        for i in (0..n).rev() {
            let mid = self.diag_pos[i] + 1;
            let hi = matrix.row_ptr[i + 1];
            let mut acc = 0.0;
            for (&c, &a) in cols[mid..hi].iter().zip(&vals[mid..hi]) {
                acc += a * z[c as usize];
            }
            z[i] += acc * self.inv_pivots[i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A p = rhs - mean(rhs)` with a zero-mean gauge.
pub fn solve_pressure(op: &PoissonOperator, rhs: &BandScalarField, limits: &SolverLimits) -> Result<PressureSolution> {
    solve_pressure_with_guess(op, rhs, None, limits)
}

/// As [`solve_pressure`]; `guess` warm-starts the iterative path.
pub fn solve_pressure_with_guess(
    op: &PoissonOperator,
    rhs: &BandScalarField,
    guess: Option<&BandScalarField>,
    limits: &SolverLimits,
) -> Result<PressureSolution> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::InvalidArgument(format!("rhs has {} entries, operator has {n}", rhs.len())));
    }
    if !rhs.is_finite() {
        return Err(Error::InvalidArgument("pressure rhs is not finite".into()));
    }
    let scale = rhs.max_abs();
    let mut b = rhs.values().to_vec();
    op.remove_component_means(&mut b);
    let b_max = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || b_max <= 1e-13 * scale {
        return Ok(PressureSolution {
            pressure: BandScalarField::zeros(n),
            method: SolveMethod::Trivial,
            iterations: 0,
            residual: 0.0,
        });
    }
    let b_norm = dot(&b, &b).sqrt();

    if n <= limits.direct_solver_threshold && op.factorize() {
        if let Some(Some(factor)) = op.factor.get() {
            if factor.stamp == op.stamp {
                let mut p = factor.solve_negated(&b);
                op.remove_component_means(&mut p);
                let residual = op.residual_norm(&p, &b) / b_norm;
                return Ok(PressureSolution {
                    pressure: BandScalarField::from_values(p),
                    method: SolveMethod::Direct,
                    iterations: 0,
                    residual,
                });
            }
            warn!("stale pressure factorization (stamp mismatch), using conjugate gradient");
        }
    }

    conjugate_gradient(op, &b, b_norm, guess, limits)
}

fn conjugate_gradient(
    op: &PoissonOperator,
    b: &[f64],
    b_norm: f64,
    guess: Option<&BandScalarField>,
    limits: &SolverLimits,
) -> Result<PressureSolution> {
    let n = op.dim();
    // solve M x = -b with M = -A (SPD on the complement of the constants)
    let target: Vec<f64> = b.iter().map(|v| -v).collect();
    let mut x = match guess {
        Some(g) if g.len() == n && g.is_finite() => g.values().to_vec(),
        _ => vec![0.0; n],
    };
    let mut mx = op.matrix.mul(&x);
    let mut r: Vec<f64> = target.iter().zip(&mx).map(|(t, a)| t + a).collect();
    let tol = limits.cg_tolerance * b_norm;
    let mut r_norm = dot(&r, &r).sqrt();
    let mut iterations = 0;
    if r_norm > tol {
        let pre = op.ichol.get_or_init(|| IncompleteCholesky::new(&op.matrix));
        let mut z = vec![0.0; n];
        pre.apply(&op.matrix, &r, &mut z);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < limits.cg_max_iterations {
            iterations += 1;
            op.matrix.mul_into(&d, &mut mx);
            // mx holds A d; M d = -A d
            let dmd = -dot(&d, &mx);
            if !(dmd > 0.0) {
                break;
            }
            let alpha = rz / dmd;
            for i in 0..n {
                x[i] += alpha * d[i];
                r[i] += alpha * mx[i];
            }
            r_norm = dot(&r, &r).sqrt();
            if r_norm <= tol {
                break;
            }
            pre.apply(&op.matrix, &r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                d[i] = z[i] + beta * d[i];
            }
        }
    }
    op.remove_component_means(&mut x);
    let residual = op.residual_norm(&x, b) / b_norm;
    if residual > limits.cg_tolerance {
        return Err(Error::SolverFailure { iterations, residual });
    }
    Ok(PressureSolution {
        pressure: BandScalarField::from_values(x),
        method: SolveMethod::ConjugateGradient,
        iterations,
        residual,
    })
}

/// Reverse Cuthill–McKee ordering of the graph restricted to `keep`.
fn reverse_cuthill_mckee(matrix: &CsrMatrix, keep: &[bool]) -> Vec<usize> {
    let n = matrix.n;
    let degree = |i: usize| matrix.row(i).filter(|&(j, _)| j != i && keep[j]).count();
    let mut visited: Vec<bool> = keep.iter().map(|k| !k).collect();
    let mut order = Vec::with_capacity(n);
    let mut neighbors = Vec::new();
    loop {
        // lowest-degree unvisited node seeds each component
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree(i));
        let Some(seed) = seed else { break };
        visited[seed] = true;
        let start = order.len();
        order.push(seed);
        let mut head = start;
        while head < order.len() {
            let i = order[head];
            head += 1;
            neighbors.clear();
            neighbors.extend(matrix.row(i).map(|(j, _)| j).filter(|&j| !visited[j]));
            neighbors.sort_by_key(|&j| degree(j));
            for &j in &neighbors {
                visited[j] = true;
                order.push(j);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (profile) Cholesky factor `L Lᵀ = P M' Pᵀ` of the pinned,
/// negated Laplacian.
#[derive(Debug, Clone)]
struct EnvelopeCholesky {
    stamp: u64,
    /// position in the reduced ordering → original ordinal
    perm: Vec<usize>,
    /// first stored column of each row
    first: Vec<usize>,
    /// start offset of each row in `values`; row `i` holds columns `first[i]..=i`
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    fn factor_pinned(matrix: &CsrMatrix, pins: &[usize], stamp: u64) -> Result<Self> {
        let n = matrix.n;
        let mut keep = vec![true; n];
        for &p in pins {
            keep[p] = false;
        }
        let perm = reverse_cuthill_mckee(matrix, &keep);
        let m = perm.len();
        let mut position = vec![usize::MAX; n];
        for (pos, &o) in perm.iter().enumerate() {
            position[o] = pos;
        }

        let mut first = vec![0usize; m];
        for (pos, &o) in perm.iter().enumerate() {
            first[pos] = matrix
                .row(o)
                .filter_map(|(j, _)| (position[j] != usize::MAX).then_some(position[j]))
                .filter(|&q| q <= pos)
                .min()
                .unwrap_or(pos);
        }
        let mut offset = Vec::with_capacity(m + 1);
        let mut total = 0usize;
        for pos in 0..m {
            offset.push(total);
            total += pos - first[pos] + 1;
        }
        offset.push(total);
        let mut values = vec![0.0; total];
        for (pos, &o) in perm.iter().enumerate() {
            for (j, v) in matrix.row(o) {
                let q = position[j];
                if q != usize::MAX && q <= pos {
                    values[offset[pos] + q - first[pos]] = -v;
                }
            }
        }

        for i in 0..m {
            let fi = first[i];
            let oi = offset[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offset[j];
                let lo = fi.max(fj);
                let mut s = values[oi + j - fi];
                for k in lo..j {
                    s -= values[oi + k - fi] * values[oj + k - fj];
                }
                values[oi + j - fi] = s / values[oj + j - fj];
            }
            let mut d = values[oi + i - fi];
            for k in fi..i {
                let l = values[oi + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Config(format!("matrix not positive definite at pivot {i} ({d:e})")));
            }
            values[oi + i - fi] = d.sqrt();
        }
        Ok(Self {
            stamp,
            perm,
            first,
            offset,
            values,
        })
    }

    /// Returns `p` with `A p = b` (pinned entries zero).
    fn solve_negated(&self, b: &[f64]) -> Vec<f64> {
        let m = self.perm.len();
        // M = -A, so M p = -b
        let mut y: Vec<f64> = self.perm.iter().map(|&o| -b[o]).collect();
        for i in 0..m {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[oi + k - fi] * y[k];
            }
            y[i] = s / self.values[oi + i - fi];
        }
        for i in (0..m).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.values[oi + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[oi + k - fi] * yi;
            }
        }
        let mut p = vec![0.0; b.len()];
        for (pos, &o) in self.perm.iter().enumerate() {
            p[o] = y[pos];
        }
        p
    }
}
