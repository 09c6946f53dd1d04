//! Contracting and robust recurrent networks.
//!
//! ```text
//! E x⁺ = F x + B₁ w + B₂ u,   v = C₁ x + D₁₂ u,   w = σ(v)
//!    y = C₂ x + D₂₁ w + D₂₂ u
//! ```
//!
//! The sector multiplier `Λ` is absorbed into the model as `C̃ = ΛC₁`, which
//! makes both certificates below linear in the stored parameters.

use alloc::vec::Vec;

use crate::activation::Activation;
use crate::certkit::{self, ensure_finite, ensure_square, BlockAssembler, SymCheckReport};
use crate::error::{expect_dim, Error, Result};
use crate::{Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct RobustRnn {
    pub e: Mat,
    pub f: Mat,
    pub b1: Mat,
    pub b2: Mat,
    /// `C̃ = ΛC₁`.
    pub c_tilde: Mat,
    /// Diagonal of `Λ`, strictly positive.
    pub lambda: Vector,
    pub c2: Mat,
    pub d12: Mat,
    pub d21: Mat,
    pub d22: Mat,
    pub p: Mat,
    pub act: Activation,
    pub gamma: Option<f64>,
}

pub(crate) fn check_lambda(lambda: &Vector) -> Result<()> {
    if lambda.iter().all(|&l| l > 0.0 && l.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("multiplier Lambda must have strictly positive entries"))
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("Lipschitz bound gamma must be finite and > 0"))
    }
}

/// Row scaling `diag(1/λ) · M`.
pub(crate) fn unscale_rows(lambda: &Vector, m: &Mat) -> Mat {
    let mut out = m.clone();
    for (i, l) in lambda.iter().enumerate() {
        out.row_mut(i).scale_mut(1.0 / l);
    }
    out
}

/// Row scaling `diag(λ) · M`.
pub(crate) fn scale_rows(lambda: &Vector, m: &Mat) -> Mat {
    let mut out = m.clone();
    for (i, l) in lambda.iter().enumerate() {
        out.row_mut(i).scale_mut(*l);
    }
    out
}

impl RobustRnn {
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
        let n = self.state_dim();
        let q = self.hidden_dim();
        let m = self.input_dim();
        let p = self.output_dim();
        let shapes: [(&Mat, &'static str, usize, usize); 10] = [
            (&self.f, "F", n, n),
            (&self.p, "P", n, n),
            (&self.b1, "B1", n, q),
            (&self.b2, "B2", n, m),
            (&self.c_tilde, "Ctilde", q, n),
            (&self.c2, "C2", p, n),
            (&self.d12, "D12", q, m),
            (&self.d21, "D21", p, q),
            (&self.d22, "D22", p, m),
            (&self.e, "E", n, n),
        ];
        for (mat, what, r, c) in shapes {
            expect_dim(what, r, mat.nrows())?;
            expect_dim(what, c, mat.ncols())?;
            ensure_finite(mat, what)?;
        }
        check_lambda(&self.lambda)
    }

    /// `C₁ = Λ⁻¹C̃`.
    pub fn c1(&self) -> Mat {
        unscale_rows(&self.lambda, &self.c_tilde)
    }
}

pub fn rnn_step(m: &RobustRnn, x: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
    m.validate()?;
    expect_dim("state", m.state_dim(), x.len())?;
    expect_dim("input", m.input_dim(), u.len())?;
    let v = m.c1() * x + &m.d12 * u;
    let w = m.act.apply(&v);
    let rhs = &m.f * x + &m.b1 * &w + &m.b2 * u;
    let next = m
        .e
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular { rcond: 0.0 })?;
    let y = &m.c2 * x + &m.d21 * &w + &m.d22 * u;
    Ok((next, y))
}

/// Blocks of the incremental dissipation inequality shared by RNNs and RENs.
/// `ww` is the sector block before the output term, `2Λ` for an RNN and
/// `2Λ − D̃₁₁ − D̃₁₁ᵀ` for a REN.
pub(crate) struct DissipationBlocks<'a> {
    pub e: &'a Mat,
    pub f: &'a Mat,
    pub b1: &'a Mat,
    pub b2: &'a Mat,
    pub c_tilde: &'a Mat,
    pub d12_tilde: Mat,
    pub c2: &'a Mat,
    pub d21: &'a Mat,
    pub d22: &'a Mat,
    pub p: &'a Mat,
    pub ww: Mat,
}

/// `[[E+Eᵀ−P, −F, −B₁], [−Fᵀ, P, −C̃ᵀ], [−B₁ᵀ, −C̃, ww]]`.
pub(crate) fn contraction_matrix(
    e: &Mat,
    f: &Mat,
    b1: &Mat,
    c_tilde: &Mat,
    p: &Mat,
    ww: &Mat,
) -> Mat {
    let n = e.nrows();
    let q = ww.nrows();
    let mut asm = BlockAssembler::new(&[n, n, q]);
    asm.set(0, 0, &(e + e.transpose() - p));
    asm.set_sym(0, 1, &-f);
    asm.set_sym(0, 2, &-b1);
    asm.set(1, 1, p);
    asm.set_sym(1, 2, &-c_tilde.transpose());
    asm.set(2, 2, ww);
    asm.finish()
}

/// Quadratic form in `ζ = (Δx⁺, Δx, Δw, Δu)` of
/// `γ²|Δu|² − |Δy|² − (storage decrease − model term + sector term)`.
pub(crate) fn dissipation_matrix(b: &DissipationBlocks<'_>, gamma: f64) -> Mat {
    let n = b.e.nrows();
    let q = b.ww.nrows();
    let m = b.b2.ncols();
    let c2t = b.c2.transpose();
    let d21t = b.d21.transpose();
    let mut asm = BlockAssembler::new(&[n, n, q, m]);
    asm.set(0, 0, &(b.e + b.e.transpose() - b.p));
    asm.set_sym(0, 1, &-b.f);
    asm.set_sym(0, 2, &-b.b1);
    asm.set_sym(0, 3, &-b.b2);
    asm.set(1, 1, &(b.p - &c2t * b.c2));
    asm.set_sym(1, 2, &(-b.c_tilde.transpose() - &c2t * b.d21));
    asm.set_sym(1, 3, &-(&c2t * b.d22));
    asm.set(2, 2, &(&b.ww - &d21t * b.d21));
    asm.set_sym(2, 3, &(-&b.d12_tilde - &d21t * b.d22));
    let mut uu = -(b.d22.transpose() * b.d22);
    for i in 0..m {
        uu[(i, i)] += gamma * gamma;
    }
    asm.set(3, 3, &uu);
    asm.finish()
}

fn diag2(lambda: &Vector) -> Mat {
    Mat::from_diagonal(&(lambda * 2.0))
}

pub fn contraction_rnn_matrix(m: &RobustRnn) -> Result<Mat> {
    m.validate()?;
    Ok(contraction_matrix(&m.e, &m.f, &m.b1, &m.c_tilde, &m.p, &diag2(&m.lambda)))
}

pub fn check_contraction_rnn(m: &RobustRnn, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&contraction_rnn_matrix(m)?, margin)
}

pub fn lipschitz_rnn_matrix(m: &RobustRnn, gamma: f64) -> Result<Mat> {
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
        ww: diag2(&m.lambda),
    };
    Ok(dissipation_matrix(&blocks, gamma))
}

pub fn check_lipschitz_rnn(m: &RobustRnn, gamma: f64, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&lipschitz_rnn_matrix(m, gamma)?, margin)
}

/// Stable implicit LTI embedded with `B₁ = 0`, `C̃ = 0`, `Λ = I`.
pub fn from_implicit_lti(lti: &crate::lti::ImplicitLti, q: usize, act: Activation) -> RobustRnn {
    let n = lti.state_dim();
    let m = lti.input_dim();
    let p = lti.output_dim();
    RobustRnn {
        e: lti.e.clone(),
        f: lti.f.clone(),
        b1: Mat::zeros(n, q),
        b2: lti.k.clone(),
        c_tilde: Mat::zeros(q, n),
        lambda: Vector::from_element(q, 1.0),
        c2: lti.c.clone(),
        d12: Mat::zeros(q, m),
        d21: Mat::zeros(p, q),
        d22: lti.d.clone(),
        p: lti.p.clone(),
        act,
        gamma: None,
    }
}

/// Slope-restricted sector pair `(Δσ·Δv, Δσ²)` for diagnostics.
pub fn sector_terms(act: Activation, va: &[f64], vb: &[f64]) -> Vec<(f64, f64)> {
    va.iter()
        .zip(vb)
        .map(|(&a, &b)| {
            let dw = act.eval(a) - act.eval(b);
            (dw * (a - b), dw * dw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_rnn(n: usize, q: usize, m: usize, p: usize) -> RobustRnn {
        RobustRnn {
            e: Mat::identity(n, n),
            f: Mat::zeros(n, n),
            b1: Mat::zeros(n, q),
            b2: Mat::zeros(n, m),
            c_tilde: Mat::zeros(q, n),
            lambda: Vector::from_element(q, 1.0),
            c2: Mat::zeros(p, n),
            d12: Mat::zeros(q, m),
            d21: Mat::zeros(p, q),
            d22: Mat::zeros(p, m),
            p: Mat::identity(n, n),
            act: Activation::Tanh,
            gamma: None,
        }
    }

    #[test]
    fn zero_model_maps_zero_to_zero() {
        let m = zero_rnn(3, 2, 1, 1);
        let (x, y) = rnn_step(&m, &Vector::zeros(3), &Vector::zeros(1)).unwrap();
        assert_eq!(x, Vector::zeros(3));
        assert_eq!(y, Vector::zeros(1));
    }

    #[test]
    fn reduces_to_implicit_lti_step() {
        let lti = crate::lti::ImplicitLti::new(
            Mat::from_row_slice(2, 2, &[2.0, 0.1, -0.1, 1.5]),
            Mat::from_row_slice(2, 2, &[0.3, 0.2, 0.0, -0.4]),
            Mat::from_row_slice(2, 1, &[1.0, 0.5]),
            Mat::from_row_slice(1, 2, &[1.0, -1.0]),
            Mat::from_row_slice(1, 1, &[0.2]),
            Mat::identity(2, 2),
        )
        .unwrap();
        let rnn = from_implicit_lti(&lti, 3, Activation::Relu);
        let x = Vector::from_vec(alloc::vec![0.7, -0.2]);
        let u = Vector::from_vec(alloc::vec![1.3]);
        assert_eq!(rnn_step(&rnn, &x, &u).unwrap(), lti.step(&x, &u).unwrap());
    }

    #[test]
    fn contraction_rejects_nonpositive_multiplier() {
        let mut m = zero_rnn(2, 2, 1, 1);
        m.lambda[1] = 0.0;
        assert!(check_contraction_rnn(&m, 0.0).is_err());
        assert!(check_lipschitz_rnn(&zero_rnn(2, 2, 1, 1), 0.0, 0.0).is_err());
    }

    #[test]
    fn stable_lti_embeds_as_contracting_rnn() {
        let mut m = zero_rnn(2, 3, 1, 1);
        m.f = Mat::identity(2, 2) * 0.5;
        assert!(check_contraction_rnn(&m, 0.0).unwrap().feasible);
    }

    #[test]
    fn decoupled_model_is_robust_for_any_gamma() {
        let m = zero_rnn(2, 2, 2, 2);
        for g in [1e-3, 0.5, 10.0] {
            assert!(check_lipschitz_rnn(&m, g, 0.0).unwrap().feasible);
        }
    }

    #[test]
    fn static_gain_threshold() {
        let mut m = zero_rnn(1, 1, 2, 2);
        m.d22 = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let smax = certkit::spectral_norm(&m.d22);
        assert!(check_lipschitz_rnn(&m, smax * 1.001, 0.0).unwrap().feasible);
        assert!(!check_lipschitz_rnn(&m, smax * 0.999, 0.0).unwrap().feasible);
    }
}
