//! Recurrent equilibrium networks.
//!
//! ```text
//! E x⁺ = F x + B₁ w + B₂ u + b_x
//!    v = C₁ x + D₁₁ w + D₁₂ u + b_v,   w = σ(v)
//!    y = C₂ x + D₂₁ w + D₂₂ u + b_y
//! ```
//!
//! Stored in multiplier-absorbed form `C̃ = ΛC₁`, `D̃₁₁ = ΛD₁₁`. The
//! contraction LMI's lower-right block `2Λ − D̃₁₁ − D̃₁₁ᵀ` is the
//! well-posedness condition of the inner equilibrium network, so a
//! contracting REN always has a unique `w`.
//!
//! Every other model family embeds as a REN: stable LTI (`q = 0`), robust
//! RNN (`D̃₁₁ = 0`) and static equilibrium networks (`n = 0`).

use crate::activation::Activation;
use crate::certkit::{self, ensure_finite, ensure_square, SkewSymmetric, SymCheckReport};
use crate::eqnet::EquilibriumNetwork;
use crate::error::{expect_dim, Error, Result};
use crate::lti::{ExplicitLti, ImplicitLti};
use crate::rnn::{
    check_gamma, check_lambda, contraction_matrix, dissipation_matrix, scale_rows, unscale_rows,
    DissipationBlocks, RobustRnn,
};
use crate::solver::{solve_fixed_point, SolverOptions};
use crate::{Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Ren {
    pub e: Mat,
    pub f: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c_tilde: Mat,
    pub d11_tilde: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub d21: Mat,
    pub d22: Mat,
    pub lambda: Vector,
    pub p: Mat,
    pub b_x: Vector,
    pub b_v: Vector,
    pub b_y: Vector,
    pub act: Activation,
}

impl Ren {
    pub fn state_dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b2.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c2.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_square(&self.e)?;
        let (n, q, m, p) = (self.state_dim(), self.hidden_dim(), self.input_dim(), self.output_dim());
        let shapes: [(&Mat, &'static str, usize, usize); 11] = [
            (&self.e, "E", n, n),
            (&self.f, "F", n, n),
            (&self.p, "P", n, n),
            (&self.b1, "B1", n, q),
            (&self.b2, "B2", n, m),
            (&self.c_tilde, "Ctilde", q, n),
            (&self.d11_tilde, "D11tilde", q, q),
            (&self.d12, "D12", q, m),
            (&self.c2, "C2", p, n),
            (&self.d21, "D21", p, q),
            (&self.d22, "D22", p, m),
        ];
        for (mat, what, r, c) in shapes {
            expect_dim(what, r, mat.nrows())?;
            expect_dim(what, c, mat.ncols())?;
            ensure_finite(mat, what)?;
        }
        expect_dim("b_x", n, self.b_x.len())?;
        expect_dim("b_v", q, self.b_v.len())?;
        expect_dim("b_y", p, self.b_y.len())?;
        if !self
            .b_x
            .iter()
            .chain(self.b_v.iter())
            .chain(self.b_y.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("REN bias"));
        }
        check_lambda(&self.lambda)
    }

    /// `C₁ = Λ⁻¹C̃`.
    pub fn c1(&self) -> Mat {
        unscale_rows(&self.lambda, &self.c_tilde)
    }

    /// `D₁₁ = Λ⁻¹D̃₁₁`.
    pub fn d11(&self) -> Mat {
        unscale_rows(&self.lambda, &self.d11_tilde)
    }

    /// The inner equilibrium network seen at a fixed state (biases dropped).
    pub fn inner_network(&self) -> EquilibriumNetwork {
        EquilibriumNetwork {
            d11: self.d11(),
            d12: self.d12.clone(),
            d21: self.d21.clone(),
            b_w: self.b_v.clone(),
            b_y: self.b_y.clone(),
            lambda: self.lambda.clone(),
            act: self.act,
            gamma: None,
        }
    }

    pub fn from_implicit_lti(m: &ImplicitLti) -> Self {
        let (n, mm, p) = (m.state_dim(), m.input_dim(), m.output_dim());
        Self {
            e: m.e.clone(),
            f: m.f.clone(),
            b1: Mat::zeros(n, 0),
            b2: m.k.clone(),
            c_tilde: Mat::zeros(0, n),
            d11_tilde: Mat::zeros(0, 0),
            d12: Mat::zeros(0, mm),
            c2: m.c.clone(),
            d21: Mat::zeros(p, 0),
            d22: m.d.clone(),
            lambda: Vector::zeros(0),
            p: m.p.clone(),
            b_x: Vector::zeros(n),
            b_v: Vector::zeros(0),
            b_y: Vector::zeros(p),
            act: Activation::Identity,
        }
    }

    /// `E = I`, `F = A`; the metric is a placeholder identity.
    pub fn from_explicit_lti(m: &ExplicitLti) -> Self {
        let n = m.state_dim();
        Self::from_implicit_lti(&ImplicitLti {
            e: Mat::identity(n, n),
            f: m.a.clone(),
            k: m.b.clone(),
            c: m.c.clone(),
            d: m.d.clone(),
            p: Mat::identity(n, n),
        })
    }

    pub fn from_rnn(m: &RobustRnn) -> Self {
        let (n, q, p) = (m.state_dim(), m.hidden_dim(), m.output_dim());
        Self {
            e: m.e.clone(),
            f: m.f.clone(),
            b1: m.b1.clone(),
            b2: m.b2.clone(),
            c_tilde: m.c_tilde.clone(),
            d11_tilde: Mat::zeros(q, q),
            d12: m.d12.clone(),
            c2: m.c2.clone(),
            d21: m.d21.clone(),
            d22: m.d22.clone(),
            lambda: m.lambda.clone(),
            p: m.p.clone(),
            b_x: Vector::zeros(n),
            b_v: Vector::zeros(q),
            b_y: Vector::zeros(p),
            act: m.act,
        }
    }

    /// Stateless embedding (`n = 0`).
    pub fn from_eqnet(net: &EquilibriumNetwork) -> Self {
        let (q, m, p) = (net.hidden_dim(), net.input_dim(), net.output_dim());
        Self {
            e: Mat::zeros(0, 0),
            f: Mat::zeros(0, 0),
            b1: Mat::zeros(0, q),
            b2: Mat::zeros(0, m),
            c_tilde: Mat::zeros(q, 0),
            d11_tilde: scale_rows(&net.lambda, &net.d11),
            d12: net.d12.clone(),
            c2: Mat::zeros(p, 0),
            d21: net.d21.clone(),
            d22: Mat::zeros(p, m),
            lambda: net.lambda.clone(),
            p: Mat::zeros(0, 0),
            b_x: Vector::zeros(0),
            b_v: net.b_w.clone(),
            b_y: net.b_y.clone(),
            act: net.act,
        }
    }

    /// Back to the implicit LTI form; only valid for `q = 0`.
    pub fn to_implicit_lti(&self) -> Result<ImplicitLti> {
        if self.hidden_dim() != 0 {
            return Err(Error::invalid("REN with hidden units is not an LTI model"));
        }
        ImplicitLti::new(
            self.e.clone(),
            self.f.clone(),
            self.b2.clone(),
            self.c2.clone(),
            self.d22.clone(),
            self.p.clone(),
        )
    }

    fn sector_block(&self) -> Mat {
        Mat::from_diagonal(&(&self.lambda * 2.0)) - &self.d11_tilde - self.d11_tilde.transpose()
    }
}

pub fn ren_step(m: &Ren, x: &Vector, u: &Vector, opts: &SolverOptions) -> Result<(Vector, Vector)> {
    m.validate()?;
    expect_dim("state", m.state_dim(), x.len())?;
    expect_dim("input", m.input_dim(), u.len())?;
    let offset = m.c1() * x + &m.d12 * u + &m.b_v;
    let w = solve_fixed_point(&m.d11(), &offset, m.act, opts, None)?.w;
    let rhs = &m.f * x + &m.b1 * &w + &m.b2 * u + &m.b_x;
    let next = if m.state_dim() == 0 {
        Vector::zeros(0)
    } else {
        m.e.clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular { rcond: 0.0 })?
    };
    let y = &m.c2 * x + &m.d21 * &w + &m.d22 * u + &m.b_y;
    Ok((next, y))
}

pub fn contracting_ren_matrix(m: &Ren) -> Result<Mat> {
    m.validate()?;
    Ok(contraction_matrix(&m.e, &m.f, &m.b1, &m.c_tilde, &m.p, &m.sector_block()))
}

/// `[[E+Eᵀ−P, −F, −B₁], [−Fᵀ, P, −C̃ᵀ], [−B₁ᵀ, −C̃, 2Λ − D̃₁₁ − D̃₁₁ᵀ]] ≻ 0`.
pub fn check_contracting_ren(m: &Ren, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&contracting_ren_matrix(m)?, margin)
}

/// Incremental dissipation matrix in `ζ = (Δx⁺, Δx, Δw, Δu)`.
pub fn lipschitz_ren_matrix(m: &Ren, gamma: f64) -> Result<Mat> {
    check_gamma(gamma)?;
    m.validate()?;
    let blocks = DissipationBlocks {
        e: &m.e,
        f: &m.f,
        b1: &m.b1,
        b2: &m.b2,
        c_tilde: &m.c_tilde,
        d12_tilde: scale_rows(&m.lambda, &m.d12),
        c2: &m.c2,
        d21: &m.d21,
        d22: &m.d22,
        p: &m.p,
        ww: m.sector_block(),
    };
    Ok(dissipation_matrix(&blocks, gamma))
}

pub fn check_lipschitz_ren(m: &Ren, gamma: f64, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&lipschitz_ren_matrix(m, gamma)?, margin)
}

/// Smallest `γ` in `[lo, hi]` certified by [`check_lipschitz_ren`] at the
/// given margin, to relative precision `rel_tol`.
pub fn certified_gamma(m: &Ren, margin: f64, lo: f64, hi: f64, rel_tol: f64) -> Result<Option<f64>> {
    certkit::bisect_threshold(
        |g| Ok(check_lipschitz_ren(m, g, margin)?.feasible),
        lo,
        hi,
        rel_tol,
    )
}

/// Same explicit model with every implicit quantity scaled by `c`
/// (`E, F, B₁, B₂, b_x, C̃, D̃₁₁, Λ, P`). Certificates are homogeneous in this
/// scaling except for the output terms, so the scale trades contraction
/// slack against output gain.
pub fn rescale_certificate(m: &Ren, c: f64) -> Result<Ren> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("certificate scale must be finite and > 0"));
    }
    Ok(Ren {
        e: &m.e * c,
        f: &m.f * c,
        b1: &m.b1 * c,
        b2: &m.b2 * c,
        c_tilde: &m.c_tilde * c,
        d11_tilde: &m.d11_tilde * c,
        lambda: &m.lambda * c,
        p: &m.p * c,
        b_x: &m.b_x * c,
        ..m.clone()
    })
}

/// Best `γ` over certificate scales `c = 2^(k/2)`, `k ∈ [−40, 80]`, each
/// bisected on `[1e-6, 1e6]`. Returns the rescaled model whose stored
/// `(P, Λ)` certify the returned `γ`.
pub fn tighten_gamma(m: &Ren, margin: f64, rel_tol: f64) -> Result<Option<(f64, Ren)>> {
    let mut best: Option<(f64, Ren)> = None;
    for k in -40..=80 {
        let scaled = rescale_certificate(m, libm::exp2(k as f64 * 0.5))?;
        let hi = best.as_ref().map_or(1e6, |b| b.0);
        if !check_lipschitz_ren(&scaled, hi, margin)?.feasible {
            continue;
        }
        if let Some(g) = certified_gamma(&scaled, margin, 1e-6, hi, rel_tol)? {
            best = Some((g, scaled));
        }
    }
    Ok(best)
}

/// Unconstrained parameters of a contracting REN.
#[derive(Debug, Clone, PartialEq)]
pub struct RenDirectParams {
    /// `(2n + q) × (2n + q)` factor of `H = VVᵀ + eps·I`.
    pub v: Mat,
    pub s_e: SkewSymmetric,
    pub s_w: SkewSymmetric,
    /// `Λ = exp(lambda_log)`.
    pub lambda_log: Vector,
    pub eps: f64,
    pub b2: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub d21: Mat,
    pub d22: Mat,
    pub b_x: Vector,
    pub b_v: Vector,
    pub b_y: Vector,
    pub act: Activation,
}

impl RenDirectParams {
    pub fn hidden_dim(&self) -> usize {
        self.lambda_log.len()
    }

    pub fn state_dim(&self) -> usize {
        self.v.nrows().saturating_sub(self.hidden_dim()) / 2
    }

    pub fn validate(&self) -> Result<()> {
        ensure_square(&self.v)?;
        let q = self.hidden_dim();
        if self.v.nrows() < q || !(self.v.nrows() - q).is_multiple_of(2) {
            return Err(Error::invalid("REN factor must have dimension 2n + q"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("eps must be finite and > 0"));
        }
        let n = self.state_dim();
        expect_dim("S_E", n, self.s_e.dim())?;
        expect_dim("S_w", q, self.s_w.dim())?;
        ensure_finite(&self.v, "V")?;
        Ok(())
    }
}

/// Partition `H` into `(n, n, q)` blocks and set `P = H₂₂`, `F = −H₁₂`,
/// `B₁ = −H₁₃`, `C̃ = −H₃₂`, `E = (H₁₁ + H₂₂ + S_E)/2`,
/// `D̃₁₁ = Λ − H₃₃/2 + S_w`. The symmetrized contraction LMI then equals `H`.
pub fn direct_parameterize_ren(p: &RenDirectParams) -> Result<Ren> {
    p.validate()?;
    let n = p.state_dim();
    let q = p.hidden_dim();
    let h = certkit::gram_plus_eps(&p.v, p.eps);
    let blk = |i: usize, j: usize, r: usize, c: usize| h.view((i, j), (r, c)).into_owned();
    let h11 = blk(0, 0, n, n);
    let h12 = blk(0, n, n, n);
    let h13 = blk(0, 2 * n, n, q);
    let h22 = blk(n, n, n, n);
    let h32 = blk(2 * n, n, q, n);
    let h33 = blk(2 * n, 2 * n, q, q);
    let lambda = p.lambda_log.map(libm::exp);
    let e = (h11 + &h22 + p.s_e.to_matrix()) * 0.5;
    let d11_tilde = Mat::from_diagonal(&lambda) - h33 * 0.5 + p.s_w.to_matrix();
    let ren = Ren {
        e,
        f: -h12,
        b1: -h13,
        b2: p.b2.clone(),
        c_tilde: -h32,
        d11_tilde,
        d12: p.d12.clone(),
        c2: p.c2.clone(),
        d21: p.d21.clone(),
        d22: p.d22.clone(),
        lambda,
        p: h22,
        b_x: p.b_x.clone(),
        b_v: p.b_v.clone(),
        b_y: p.b_y.clone(),
        act: p.act,
    };
    ren.validate()?;
    Ok(ren)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(n: usize, q: usize, m: usize, p: usize, eps: f64) -> RenDirectParams {
        RenDirectParams {
            v: Mat::zeros(2 * n + q, 2 * n + q),
            s_e: SkewSymmetric::zeros(n),
            s_w: SkewSymmetric::zeros(q),
            lambda_log: Vector::zeros(q),
            eps,
            b2: Mat::zeros(n, m),
            d12: Mat::zeros(q, m),
            c2: Mat::zeros(p, n),
            d21: Mat::zeros(p, q),
            d22: Mat::zeros(p, m),
            b_x: Vector::zeros(n),
            b_v: Vector::zeros(q),
            b_y: Vector::zeros(p),
            act: Activation::Tanh,
        }
    }

    #[test]
    fn scalar_zero_factor() {
        let ren = direct_parameterize_ren(&params(1, 1, 1, 1, 0.1)).unwrap();
        assert!((ren.p[(0, 0)] - 0.1).abs() < 1e-15);
        assert_eq!(ren.f[(0, 0)], 0.0);
        assert_eq!(ren.b1[(0, 0)], 0.0);
        assert_eq!(ren.c_tilde[(0, 0)], 0.0);
        assert!((ren.e[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((ren.d11_tilde[(0, 0)] - 0.95).abs() < 1e-15);
        let r = check_contracting_ren(&ren, 0.0).unwrap();
        assert!(r.feasible && (r.min_eigenvalue - 0.1).abs() < 1e-14);
    }

    #[test]
    fn zero_hidden_matches_lti_parameterization() {
        let v = Mat::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6);
        let s = SkewSymmetric::new(4, vec![0.3, -0.2, 0.1, 0.5, 0.4, -0.7]).unwrap();
        let mut p = params(2, 0, 1, 1, 1e-3);
        p.v = v.clone();
        p.s_e = s.leading_block(2).unwrap();
        p.b2 = Mat::from_row_slice(2, 1, &[1.0, -1.0]);
        p.c2 = Mat::from_row_slice(1, 2, &[0.5, 2.0]);
        p.d22 = Mat::from_row_slice(1, 1, &[0.1]);
        let ren = direct_parameterize_ren(&p).unwrap();
        let f = certkit::DirectFactor::new(v, s, 1e-3).unwrap();
        let lti = crate::lti::direct_parameterize_lti(&f, p.b2.clone(), p.c2.clone(), p.d22.clone()).unwrap();
        assert_eq!(ren.to_implicit_lti().unwrap(), lti);
    }

    #[test]
    fn zero_coupling_reduces_to_rnn_step() {
        let mut p = params(2, 3, 1, 1, 0.5);
        p.v = Mat::from_fn(7, 7, |i, j| libm::sin((i * 7 + j) as f64));
        p.b2 = Mat::from_row_slice(2, 1, &[1.0, 0.3]);
        p.c2 = Mat::from_row_slice(1, 2, &[1.0, -1.0]);
        p.d12 = Mat::from_row_slice(3, 1, &[0.2, -0.4, 0.9]);
        p.d21 = Mat::from_row_slice(1, 3, &[0.5, 0.5, -1.0]);
        let mut ren = direct_parameterize_ren(&p).unwrap();
        ren.d11_tilde = Mat::zeros(3, 3);
        let rnn = RobustRnn {
            e: ren.e.clone(),
            f: ren.f.clone(),
            b1: ren.b1.clone(),
            b2: ren.b2.clone(),
            c_tilde: ren.c_tilde.clone(),
            lambda: ren.lambda.clone(),
            c2: ren.c2.clone(),
            d12: ren.d12.clone(),
            d21: ren.d21.clone(),
            d22: ren.d22.clone(),
            p: ren.p.clone(),
            act: ren.act,
            gamma: None,
        };
        let x = Vector::from_vec(vec![0.3, -1.1]);
        let u = Vector::from_vec(vec![0.8]);
        assert_eq!(
            ren_step(&ren, &x, &u, &Default::default()).unwrap(),
            crate::rnn::rnn_step(&rnn, &x, &u).unwrap()
        );
        assert_eq!(
            check_lipschitz_ren(&ren, 3.0, 0.0).unwrap(),
            crate::rnn::check_lipschitz_rnn(&rnn, 3.0, 0.0).unwrap()
        );
        assert_eq!(
            check_contracting_ren(&ren, 0.0).unwrap(),
            crate::rnn::check_contraction_rnn(&rnn, 0.0).unwrap()
        );
    }

    #[test]
    fn static_slice_gain_threshold() {
        let mut p = params(1, 1, 2, 2, 1.0);
        p.d22 = Mat::from_row_slice(2, 2, &[0.3, -1.2, 0.8, 0.4]);
        let mut ren = direct_parameterize_ren(&p).unwrap();
        ren.e = Mat::identity(1, 1);
        ren.p = Mat::identity(1, 1);
        let smax = certkit::spectral_norm(&ren.d22);
        assert!(check_lipschitz_ren(&ren, smax * 1.0001, 0.0).unwrap().feasible);
        assert!(!check_lipschitz_ren(&ren, smax * 0.9999, 0.0).unwrap().feasible);
        let g = certified_gamma(&ren, 0.0, 1e-3, 100.0, 1e-9).unwrap().unwrap();
        assert!((g - smax).abs() < 1e-6 * smax);
    }

    #[test]
    fn invalid_factor_shape() {
        let mut p = params(1, 1, 1, 1, 0.1);
        p.v = Mat::zeros(4, 4);
        assert!(direct_parameterize_ren(&p).is_err());
        let mut p = params(1, 1, 1, 1, 0.1);
        p.eps = 0.0;
        assert!(direct_parameterize_ren(&p).is_err());
    }
}
