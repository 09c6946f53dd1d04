//! Symmetric-matrix certificate machinery.
//!
//! Every certificate in this crate reduces
//! to "this symmetric matrix is positive definite with some margin". The
//! helpers here assemble such matrices from blocks, judge them with a dense
//! symmetric eigensolver, and build the positive-definite matrices that all
//! direct parameterizations are derived from.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Schur, SymmetricEigen};

use crate::error::{Error, Result};
use crate::Mat;

const EIGEN_MAX_ITER: usize = 10_000;

/// Outcome of a positive-definiteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymCheckReport {
    pub feasible: bool,
    /// Smallest eigenvalue of `(M + Mᵀ)/2`.
    pub min_eigenvalue: f64,
    pub margin_used: f64,
    pub dimension: usize,
}

impl fmt::Display for SymCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (dim {}, min eigenvalue {:e}, margin {:e})",
            if self.feasible { "feasible" } else { "infeasible" },
            self.dimension,
            self.min_eigenvalue,
            self.margin_used
        )
    }
}

impl SymCheckReport {
    /// Turns an infeasible report into [`Error::CertificateFailed`].
    pub fn require(self) -> Result<Self> {
        if self.feasible {
            Ok(self)
        } else {
            Err(Error::CertificateFailed(self))
        }
    }
}

pub(crate) fn ensure_square(m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Relative margin `1e-8 · (1 + max |Mᵢⱼ|)`.
pub fn default_margin(m: &Mat) -> f64 {
    1e-8 * (1.0 + m.amax())
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue and a unit eigenvector of the symmetric part of `m`.
pub fn min_eigenpair(m: &Mat) -> Result<(f64, crate::Vector)> {
    ensure_square(m)?;
    ensure_finite(m, "symmetric check input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok((f64::INFINITY, crate::Vector::zeros(0)));
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenFailure)?;
    let (idx, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    Ok((lmin, eig.eigenvectors.column(idx).into_owned()))
}

/// Positive-definiteness test of the symmetrized matrix: feasible iff its
/// smallest eigenvalue exceeds `margin`.
pub fn is_positive_definite(m: &Mat, margin: f64) -> Result<SymCheckReport> {
    if !margin.is_finite() {
        return Err(Error::NonFinite("margin"));
    }
    let (min_eigenvalue, _) = min_eigenpair(m)?;
    Ok(SymCheckReport {
        feasible: min_eigenvalue > margin,
        min_eigenvalue,
        margin_used: margin,
        dimension: m.nrows(),
    })
}

/// Largest eigenvalue modulus, over complex eigenvalues.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    ensure_square(a)?;
    ensure_finite(a, "spectral radius input")?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max))
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &Mat) -> Result<f64> {
    let (lmin, _) = min_eigenpair(&-m)?;
    Ok(-lmin)
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    nalgebra::SVD::new(m.clone(), false, false)
        .singular_values
        .max()
}

/// Skew-symmetric matrix stored by its strict lower triangle, so `S + Sᵀ = 0`
/// holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewSymmetric {
    dim: usize,
    lower: Vec<f64>,
}

impl SkewSymmetric {
    /// Number of free entries of a `dim × dim` skew matrix.
    pub const fn free_len(dim: usize) -> usize {
        dim * dim.saturating_sub(1) / 2
    }

    /// `lower` lists entries `(i, j)`, `i > j`, row by row.
    pub fn new(dim: usize, lower: Vec<f64>) -> Result<Self> {
        if lower.len() != Self::free_len(dim) {
            return Err(Error::DimensionMismatch {
                what: "skew-symmetric strict lower triangle",
                expected: Self::free_len(dim),
                found: lower.len(),
            });
        }
        if lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("skew-symmetric entries"));
        }
        Ok(Self { dim, lower })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            lower: alloc::vec![0.0; Self::free_len(dim)],
        }
    }

    /// Skew part of the strict lower triangle of `m` (upper triangle ignored).
    pub fn from_lower_of(m: &Mat) -> Result<Self> {
        ensure_square(m)?;
        let n = m.nrows();
        let mut lower = Vec::with_capacity(Self::free_len(n));
        for i in 0..n {
            for j in 0..i {
                lower.push(m[(i, j)]);
            }
        }
        Self::new(n, lower)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.lower
    }

    pub fn to_matrix(&self) -> Mat {
        let mut s = Mat::zeros(self.dim, self.dim);
        let mut k = 0;
        for i in 0..self.dim {
            for j in 0..i {
                s[(i, j)] = self.lower[k];
                s[(j, i)] = -self.lower[k];
                k += 1;
            }
        }
        s
    }

    /// Leading `k × k` principal block, itself skew.
    pub fn leading_block(&self, k: usize) -> Result<Self> {
        if k > self.dim {
            return Err(Error::invalid("skew block larger than matrix"));
        }
        Ok(Self {
            dim: k,
            lower: self.lower[..Self::free_len(k)].to_vec(),
        })
    }

    /// Pulls a gradient with respect to the full matrix back onto the free
    /// entries.
    pub(crate) fn pullback(grad: &Mat) -> Vec<f64> {
        let n = grad.nrows();
        let mut out = Vec::with_capacity(Self::free_len(n));
        for i in 0..n {
            for j in 0..i {
                out.push(grad[(i, j)] - grad[(j, i)]);
            }
        }
        out
    }
}

/// Free parameters of a positive-definite matrix `H = V Vᵀ + eps·I`, plus a
/// skew-symmetric companion of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectFactor {
    v: Mat,
    s: SkewSymmetric,
    eps: f64,
}

impl DirectFactor {
    pub fn new(v: Mat, s: SkewSymmetric, eps: f64) -> Result<Self> {
        ensure_square(&v)?;
        ensure_finite(&v, "direct factor V")?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("direct factor eps must be finite and > 0"));
        }
        if s.dim() != v.nrows() {
            return Err(Error::DimensionMismatch {
                what: "direct factor skew part",
                expected: v.nrows(),
                found: s.dim(),
            });
        }
        Ok(Self { v, s, eps })
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn skew(&self) -> &SkewSymmetric {
        &self.s
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

/// `H = V Vᵀ + eps·I`.
pub fn factor_to_pd(f: &DirectFactor) -> Mat {
    gram_plus_eps(&f.v, f.eps)
}

pub(crate) fn gram_plus_eps(v: &Mat, eps: f64) -> Mat {
    let mut h = v * v.transpose();
    for i in 0..h.nrows() {
        h[(i, i)] += eps;
    }
    // exact symmetry, independent of the product's rounding order
    symmetrize(&h)
}

/// Row-major grid of blocks of a square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    sizes: Vec<usize>,
    blocks: Vec<Mat>,
}

impl BlockGrid {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Block `(i, j)`, zero-based.
    pub fn get(&self, i: usize, j: usize) -> &Mat {
        &self.blocks[i * self.sizes.len() + j]
    }

    pub fn assemble(&self) -> Mat {
        let mut asm = BlockAssembler::new(&self.sizes);
        let k = self.sizes.len();
        for i in 0..k {
            for j in 0..k {
                asm.set(i, j, self.get(i, j));
            }
        }
        asm.finish()
    }
}

/// Splits `h` into blocks with the given row/column sizes.
pub fn partition_blocks(h: &Mat, sizes: &[usize]) -> Result<BlockGrid> {
    ensure_square(h)?;
    let total: usize = sizes.iter().sum();
    if total != h.nrows() {
        return Err(Error::DimensionMismatch {
            what: "block partition sizes",
            expected: h.nrows(),
            found: total,
        });
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("block sizes must be positive"));
    }
    let offsets = offsets(sizes);
    let mut blocks = Vec::with_capacity(sizes.len() * sizes.len());
    for (i, &ri) in sizes.iter().enumerate() {
        for (j, &cj) in sizes.iter().enumerate() {
            blocks.push(h.view((offsets[i], offsets[j]), (ri, cj)).into_owned());
        }
    }
    Ok(BlockGrid {
        sizes: sizes.to_vec(),
        blocks,
    })
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

/// Writes blocks into a zero matrix; zero-sized blocks are allowed so that
/// degenerate dimensions (no hidden units, no state) assemble naturally.
pub(crate) struct BlockAssembler {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    m: Mat,
}

impl BlockAssembler {
    pub(crate) fn new(sizes: &[usize]) -> Self {
        let total = sizes.iter().sum();
        Self {
            offsets: offsets(sizes),
            sizes: sizes.to_vec(),
            m: Mat::zeros(total, total),
        }
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, block: &Mat) {
        debug_assert_eq!(block.shape(), (self.sizes[i], self.sizes[j]));
        self.m
            .view_mut((self.offsets[i], self.offsets[j]), block.shape())
            .copy_from(block);
    }

    /// Sets `(i, j)` to `block` and `(j, i)` to its transpose.
    pub(crate) fn set_sym(&mut self, i: usize, j: usize, block: &Mat) {
        self.set(i, j, block);
        if i != j {
            self.set(j, i, &block.transpose());
        }
    }

    pub(crate) fn finish(self) -> Mat {
        self.m
    }
}

/// Bisection for the smallest `gamma` in `[lo, hi]` at which `feasible`
/// holds, assuming feasibility is monotone in `gamma`. Returns `None` when
/// `hi` itself is infeasible.
pub fn bisect_threshold(
    mut feasible: impl FnMut(f64) -> Result<bool>,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
) -> Result<Option<f64>> {
    if !feasible(hi)? {
        return Ok(None);
    }
    if feasible(lo)? {
        return Ok(Some(lo));
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
