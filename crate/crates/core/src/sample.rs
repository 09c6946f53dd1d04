//! Seeded random draws of models and parameters.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::Activation;
use crate::certkit::{spectral_radius, DirectFactor, SkewSymmetric};
use crate::eqnet::LbenParams;
use crate::error::Result;
use crate::ren::RenDirectParams;
use crate::simfit::ModelDims;
use crate::{Mat, Vector};

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * normal(rng))
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, scale: f64) -> Vector {
    Vector::from_fn(len, |_, _| scale * normal(rng))
}

pub fn skew<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> SkewSymmetric {
    let entries: Vec<f64> = (0..SkewSymmetric::free_len(dim)).map(|_| scale * normal(rng)).collect();
    SkewSymmetric::new(dim, entries).expect("length matches")
}

/// Gaussian matrix rescaled to a spectral radius drawn uniformly from
/// `[0, rho_max]`.
pub fn schur_stable<R: Rng + ?Sized>(rng: &mut R, n: usize, rho_max: f64) -> Result<Mat> {
    let g = normal_matrix(rng, n, n, 1.0);
    let rho = spectral_radius(&g)?;
    let target = rho_max * rng.random::<f64>();
    Ok(if rho > 0.0 { g * (target / rho) } else { g })
}

/// Factor for `direct_parameterize_lti` with `H` of size `2n`.
pub fn lti_factor<R: Rng + ?Sized>(rng: &mut R, n: usize, eps: f64) -> Result<DirectFactor> {
    let d = 2 * n;
    let v = normal_matrix(rng, d, d, 1.0 / libm::sqrt(d as f64));
    DirectFactor::new(v, skew(rng, d, 0.5), eps)
}

/// Direct REN parameters; every block Gaussian with O(1) gain.
pub fn ren_params<R: Rng + ?Sized>(rng: &mut R, dims: ModelDims, eps: f64, act: Activation) -> RenDirectParams {
    let ModelDims { n, m, p, q } = dims;
    let d = 2 * n + q;
    let s = |k: usize| 1.0 / libm::sqrt(k.max(1) as f64);
    RenDirectParams {
        v: normal_matrix(rng, d, d, s(d)),
        s_e: skew(rng, n, 0.5),
        s_w: skew(rng, q, 0.5),
        lambda_log: normal_vector(rng, q, 0.3),
        eps,
        b2: normal_matrix(rng, n, m, s(m)),
        d12: normal_matrix(rng, q, m, s(m)),
        c2: normal_matrix(rng, p, n, s(n)),
        d21: normal_matrix(rng, p, q, s(q)),
        d22: normal_matrix(rng, p, m, s(m)),
        b_x: normal_vector(rng, n, 0.1),
        b_v: normal_vector(rng, q, 0.1),
        b_y: normal_vector(rng, p, 0.1),
        act,
    }
}

pub fn lben_params<R: Rng + ?Sized>(rng: &mut R, q: usize, m: usize, p: usize, eps: f64, act: Activation) -> LbenParams {
    let s = |k: usize| 1.0 / libm::sqrt(k.max(1) as f64);
    LbenParams {
        lambda_log: normal_vector(rng, q, 0.3),
        s_w: skew(rng, q, 0.5),
        v: normal_matrix(rng, q, q, s(q)),
        eps,
        d21: normal_matrix(rng, p, q, s(q)),
        d12_tilde: normal_matrix(rng, q, m, s(m)),
        b_w: normal_vector(rng, q, 0.1),
        b_y: normal_vector(rng, p, 0.1),
        act,
    }
}
