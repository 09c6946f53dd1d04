//! Stable linear time-invariant models in explicit and implicit form.
//!
//! The implicit form `E x⁺ = F x + K u` with metric `P` is certified by the
//! block LMI `[[E + Eᵀ − P, −F], [−Fᵀ, P]] ≻ 0`, which is jointly convex in
//! `(E, F, P)` even though the set of Schur-stable `A = E⁻¹F` is not.

use nalgebra::SVD;

use crate::certkit::{
    self, ensure_finite, ensure_square, BlockAssembler, DirectFactor, SymCheckReport,
};
use crate::error::{expect_dim, Error, Result};
use crate::{Mat, Vector};

/// Reciprocal condition below which `E` is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitLti {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl ExplicitLti {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let m = Self { a, b, c, d };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_square(&self.a)?;
        let n = self.a.nrows();
        expect_dim("B rows", n, self.b.nrows())?;
        expect_dim("C cols", n, self.c.ncols())?;
        expect_dim("D rows", self.c.nrows(), self.d.nrows())?;
        expect_dim("D cols", self.b.ncols(), self.d.ncols())?;
        for (m, what) in [(&self.a, "A"), (&self.b, "B"), (&self.c, "C"), (&self.d, "D")] {
            ensure_finite(m, what)?;
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        (&self.a * x + &self.b * u, &self.c * x + &self.d * u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitLti {
    pub e: Mat,
    pub f: Mat,
    pub k: Mat,
    pub c: Mat,
    pub d: Mat,
    /// Contraction metric.
    pub p: Mat,
}

impl ImplicitLti {
    pub fn new(e: Mat, f: Mat, k: Mat, c: Mat, d: Mat, p: Mat) -> Result<Self> {
        let m = Self { e, f, k, c, d, p };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_square(&self.e)?;
        let n = self.e.nrows();
        expect_dim("F rows", n, self.f.nrows())?;
        expect_dim("F cols", n, self.f.ncols())?;
        expect_dim("P rows", n, self.p.nrows())?;
        expect_dim("P cols", n, self.p.ncols())?;
        expect_dim("K rows", n, self.k.nrows())?;
        expect_dim("C cols", n, self.c.ncols())?;
        expect_dim("D rows", self.c.nrows(), self.d.nrows())?;
        expect_dim("D cols", self.k.ncols(), self.d.ncols())?;
        for (m, what) in [
            (&self.e, "E"),
            (&self.f, "F"),
            (&self.k, "K"),
            (&self.c, "C"),
            (&self.d, "D"),
            (&self.p, "P"),
        ] {
            ensure_finite(m, what)?;
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// One step, solving `E x⁺ = F x + K u`.
    pub fn step(&self, x: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let rhs = &self.f * x + &self.k * u;
        let next = self
            .e
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular { rcond: 0.0 })?;
        Ok((next, &self.c * x + &self.d * u))
    }
}

/// Block LMI `[[E + Eᵀ − P, −F], [−Fᵀ, P]] ≻ 0`.
pub fn stable_lmi_matrix(m: &ImplicitLti) -> Result<Mat> {
    m.validate()?;
    let n = m.state_dim();
    let mut asm = BlockAssembler::new(&[n, n]);
    asm.set(0, 0, &(&m.e + m.e.transpose() - &m.p));
    asm.set_sym(0, 1, &-&m.f);
    asm.set(1, 1, &m.p);
    Ok(asm.finish())
}

pub fn check_stable_lmi(m: &ImplicitLti, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&stable_lmi_matrix(m)?, margin)
}

/// Maps a `2n × 2n` factor onto a certified implicit model:
/// `P = H₂₂`, `F = −H₁₂`, `E = (H₁₁ + H₂₂ + S)/2` with `S` the leading
/// `n × n` block of the factor's skew part.
pub fn direct_parameterize_lti(f: &DirectFactor, k: Mat, c: Mat, d: Mat) -> Result<ImplicitLti> {
    let dim = f.dim();
    if !dim.is_multiple_of(2) {
        return Err(Error::invalid("stable LTI factor needs even dimension 2n"));
    }
    let n = dim / 2;
    let h = certkit::factor_to_pd(f);
    let h11 = h.view((0, 0), (n, n));
    let h12 = h.view((0, n), (n, n));
    let h22 = h.view((n, n), (n, n)).into_owned();
    let s = f.skew().leading_block(n)?.to_matrix();
    let e = (h11 + &h22 + s) * 0.5;
    ImplicitLti::new(e, -h12, k, c, d, h22)
}

/// `A = E⁻¹F`, `B = E⁻¹K` by linear solves.
pub fn to_explicit(m: &ImplicitLti) -> Result<ExplicitLti> {
    m.validate()?;
    let n = m.state_dim();
    if n > 0 {
        let sv = SVD::new(m.e.clone(), false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(rcond >= SINGULAR_RCOND) {
            return Err(Error::Singular { rcond });
        }
    }
    let lu = m.e.clone().lu();
    let a = lu.solve(&m.f).ok_or(Error::Singular { rcond: 0.0 })?;
    let b = lu.solve(&m.k).ok_or(Error::Singular { rcond: 0.0 })?;
    ExplicitLti::new(a, b, m.c.clone(), m.d.clone())
}

/// Lyapunov decrease `P − AᵀPA ≻ 0`.
pub fn check_lyapunov_explicit(a: &Mat, p: &Mat, margin: f64) -> Result<SymCheckReport> {
    ensure_square(a)?;
    ensure_square(p)?;
    expect_dim("P dimension", a.nrows(), p.nrows())?;
    certkit::is_positive_definite(&(p - a.transpose() * p * a), margin)
}

/// Solves `P = AᵀPA + Q` through the vectorized system
/// `(I − Aᵀ⊗Aᵀ) vec P = vec Q`. Requires `ρ(A) < 1`.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    ensure_square(a)?;
    ensure_square(q)?;
    let n = a.nrows();
    expect_dim("Q dimension", n, q.nrows())?;
    if certkit::spectral_radius(a)? >= 1.0 {
        return Err(Error::invalid("discrete Lyapunov equation needs a Schur-stable A"));
    }
    let at = a.transpose();
    let kron = at.kronecker(&at);
    let lhs = Mat::identity(n * n, n * n) - kron;
    let rhs = Vector::from_column_slice(q.as_slice());
    let vec_p = lhs.lu().solve(&rhs).ok_or(Error::Singular { rcond: 0.0 })?;
    let p = Mat::from_column_slice(n, n, vec_p.as_slice());
    Ok(certkit::symmetrize(&p))
}

/// Implicit witness `E = P`, `F = PA` for a stable `A`, with `P` solving
/// `P = AᵀPA + I`.
pub fn lyapunov_witness(a: &Mat, b: Mat, c: Mat, d: Mat) -> Result<ImplicitLti> {
    let n = a.nrows();
    let p = solve_discrete_lyapunov(a, &Mat::identity(n, n))?;
    let f = &p * a;
    let k = &p * b;
    ImplicitLti::new(p.clone(), f, k, c, d, p)
}

/// Two stable matrices whose average is unstable.
#[derive(Debug, Clone, PartialEq)]
pub struct NonconvexityReport {
    pub a_a: Mat,
    pub a_b: Mat,
    pub a_c: Mat,
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho_c: f64,
}

pub fn nonconvexity_demo() -> NonconvexityReport {
    let a_a = Mat::from_row_slice(2, 2, &[0.5, 2.0, 0.0, 0.0]);
    let a_b = Mat::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.5]);
    let a_c = (&a_a + &a_b) * 0.5;
    let rho = |m: &Mat| certkit::spectral_radius(m).expect("finite 2x2 input");
    NonconvexityReport {
        rho_a: rho(&a_a),
        rho_b: rho(&a_b),
        rho_c: rho(&a_c),
        a_a,
        a_b,
        a_c,
    }
}
