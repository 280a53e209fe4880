//! Sampled matrices and the sparse residual kernel.
//!
//! A [`SampledMatrix`] holds the observed entries of a partially known data
//! matrix: the index set Ω together with the values at those positions. The
//! residual of a factored iterate against a sampled matrix shares the same
//! index set and carries the values of the Euclidean gradient of the
//! completion objective, so both the objective and the gradient reuse one
//! O(|Ω|·s) kernel.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lowrank::LowRankMatrix;

/// Immutable index structure of the observed set Ω.
///
/// Entries are kept sorted row-major; `col_order` is a permutation of entry
/// indices sorted column-major, so products against the matrix and its
/// transpose both traverse memory coherently.
#[derive(Debug)]
pub struct OmegaPattern {
    m: usize,
    n: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    col_order: Vec<u32>,
}

impl OmegaPattern {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, e: usize) -> usize {
        self.rows[e] as usize
    }

    pub fn col(&self, e: usize) -> usize {
        self.cols[e] as usize
    }

    /// Entry indices ordered by (column, row).
    pub fn col_order(&self) -> &[u32] {
        &self.col_order
    }
}

fn build_pattern(m: usize, n: usize, entries: &mut [(usize, usize, f64)]) -> Result<OmegaPattern> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("matrix dimensions must be positive"));
    }
    if entries.is_empty() {
        return Err(Error::invalid("the observed set must contain at least one entry"));
    }
    if m > u32::MAX as usize || n > u32::MAX as usize {
        return Err(Error::invalid("dimensions exceed the supported index range"));
    }
    for &(i, j, v) in entries.iter() {
        if i >= m || j >= n {
            return Err(Error::invalid(format!(
                "entry ({i}, {j}) out of bounds for a {m}x{n} matrix"
            )));
        }
        if !v.is_finite() {
            return Err(Error::invalid(format!("entry ({i}, {j}) has a non-finite value")));
        }
    }
    entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
    for w in entries.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            // Duplicates are rejected rather than merged: silently combining
            // observations hides data errors.
            return Err(Error::invalid(format!(
                "duplicate observed entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
    }
    let rows: Vec<u32> = entries.iter().map(|e| e.0 as u32).collect();
    let cols: Vec<u32> = entries.iter().map(|e| e.1 as u32).collect();
    let mut col_order: Vec<u32> = (0..entries.len() as u32).collect();
    col_order.sort_unstable_by_key(|&e| (cols[e as usize], rows[e as usize]));
    Ok(OmegaPattern {
        m,
        n,
        rows,
        cols,
        col_order,
    })
}

/// Observed entries of a partially known m×n matrix.
#[derive(Debug, Clone)]
pub struct SampledMatrix {
    pattern: Arc<OmegaPattern>,
    values: Vec<f64>,
}

impl SampledMatrix {
    /// Builds a sampled matrix from `(row, col, value)` triples.
    ///
    /// Rejects out-of-range indices, non-finite values, duplicate positions,
    /// and empty observation sets.
    pub fn new(m: usize, n: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let pattern = build_pattern(m, n, &mut entries)?;
        let values = entries.iter().map(|e| e.2).collect();
        Ok(SampledMatrix {
            pattern: Arc::new(pattern),
            values,
        })
    }

    pub fn m(&self) -> usize {
        self.pattern.m
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<OmegaPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nnz()).map(move |e| (self.pattern.row(e), self.pattern.col(e), self.values[e]))
    }

    /// Frobenius norm of the observed part, ‖P_Ω(A)‖_F.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Writes MatrixMarket coordinate format with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.m(), self.n(), self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    /// Parses MatrixMarket coordinate format (real, general).
    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (lineno, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
        let header = header?;
        let head_fields: Vec<&str> = header.split_whitespace().collect();
        if head_fields.len() < 4
            || !header.starts_with("%%MatrixMarket")
            || head_fields[1] != "matrix"
            || head_fields[2] != "coordinate"
            || head_fields[3] != "real"
        {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("unsupported MatrixMarket header: {header}"),
            });
        }
        let mut size_line = None;
        let mut size_lineno = 0;
        for (lineno, line) in lines.by_ref() {
            let line = line?;
            if line.starts_with('%') || line.trim().is_empty() {
                continue;
            }
            size_line = Some(line);
            size_lineno = lineno + 1;
            break;
        }
        let size_line = size_line.ok_or(Error::Parse {
            line: size_lineno,
            msg: "missing size line".into(),
        })?;
        let dims: Vec<usize> = size_line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: size_lineno,
                msg: format!("bad size line: {e}"),
            })?;
        if dims.len() != 3 {
            return Err(Error::Parse {
                line: size_lineno,
                msg: "size line must contain `m n nnz`".into(),
            });
        }
        let (m, n, nnz) = (dims[0], dims[1], dims[2]);
        let mut entries = Vec::with_capacity(nnz);
        for (lineno, line) in lines {
            let line = line?;
            if line.starts_with('%') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected `i j value`".into(),
                });
            }
            let parse_idx = |s: &str| -> Result<usize> {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad index `{s}`: {e}"),
                })
            };
            let i = parse_idx(fields[0])?;
            let j = parse_idx(fields[1])?;
            let v: f64 = fields[2].parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad value `{}`: {e}", fields[2]),
            })?;
            if i == 0 || j == 0 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "MatrixMarket indices are 1-based".into(),
                });
            }
            entries.push((i - 1, j - 1, v));
        }
        if entries.len() != nnz {
            return Err(Error::invalid(format!(
                "size line declares {} entries, found {}",
                nnz,
                entries.len()
            )));
        }
        SampledMatrix::new(m, n, entries)
    }
}

/// Sparse residual P_Ω(X) − P_Ω(A) on the same index set as the problem.
///
/// These are exactly the nonzero entries of the Euclidean gradient of
/// f(X) = ½‖P_Ω(X) − P_Ω(A)‖²_F.
#[derive(Debug, Clone)]
pub struct SparseResidual {
    pattern: Arc<OmegaPattern>,
    values: Vec<f64>,
}

impl SparseResidual {
    pub fn pattern(&self) -> &Arc<OmegaPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m(&self) -> usize {
        self.pattern.m
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Evaluates the residual P_Ω(X) − P_Ω(A) in O(|Ω|·s).
///
/// The factors are transposed once so every observed entry reduces to a
/// contiguous length-s dot product.
pub fn residual(problem: &SampledMatrix, x: &LowRankMatrix) -> Result<SparseResidual> {
    if x.nrows() != problem.m() || x.ncols() != problem.n() {
        return Err(Error::shape(format!(
            "point is {}x{}, problem is {}x{}",
            x.nrows(),
            x.ncols(),
            problem.m(),
            problem.n()
        )));
    }
    let ust = x.u_scaled_transposed(); // s×m, column i = row i of UΣ
    let vt = x.v().transpose(); // s×n
    let s = x.rank();
    let pat = problem.pattern();
    let mut values = vec![0.0; problem.nnz()];
    for e in 0..problem.nnz() {
        let i = pat.row(e);
        let j = pat.col(e);
        let a = ust.column(i);
        let b = vt.column(j);
        let mut acc = 0.0;
        for c in 0..s {
            acc += a[c] * b[c];
        }
        values[e] = acc - problem.values()[e];
    }
    Ok(SparseResidual {
        pattern: Arc::clone(pat),
        values,
    })
}

/// Completion objective f(X) = ½‖P_Ω(X) − P_Ω(A)‖²_F.
pub fn objective(problem: &SampledMatrix, x: &LowRankMatrix) -> Result<f64> {
    Ok(objective_of_residual(&residual(problem, x)?))
}

/// Objective value from an already computed residual.
pub fn objective_of_residual(res: &SparseResidual) -> f64 {
    0.5 * res.values.iter().map(|v| v * v).sum::<f64>()
}

/// Sum over Ω of r_e · Σ_c W[i,c]·d[c]·Y[j,c], the inner product of a sparse
/// vector with a sampled low-rank outer product.
pub(crate) fn dot_sampled_factored(
    res: &SparseResidual,
    w: &DMatrix<f64>,
    d: &[f64],
    y: &DMatrix<f64>,
) -> f64 {
    let pat = &res.pattern;
    let wt = w.transpose();
    let yt = y.transpose();
    let l = d.len();
    let mut acc = 0.0;
    for e in 0..res.values.len() {
        let a = wt.column(pat.row(e));
        let b = yt.column(pat.col(e));
        let mut val = 0.0;
        for c in 0..l {
            val += a[c] * d[c] * b[c];
        }
        acc += res.values[e] * val;
    }
    acc
}

/// ‖P_Ω(W diag(d) Yᵀ)‖²_F over the residual's index set.
pub(crate) fn sampled_factored_norm2(
    res: &SparseResidual,
    w: &DMatrix<f64>,
    d: &[f64],
    y: &DMatrix<f64>,
) -> f64 {
    let pat = &res.pattern;
    let wt = w.transpose();
    let yt = y.transpose();
    let l = d.len();
    let mut acc = 0.0;
    for e in 0..res.values.len() {
        let a = wt.column(pat.row(e));
        let b = yt.column(pat.col(e));
        let mut val = 0.0;
        for c in 0..l {
            val += a[c] * d[c] * b[c];
        }
        acc += val * val;
    }
    acc
}
