//! Fixed-point solver for `w = σ(D w + c)`.
//!
//! Damped Picard iteration with step `α = 1/(1 + ‖D‖∞)` is tried first. When
//! it stalls (per-iteration residual reduction worse than one half) the
//! solver switches to a semismooth Newton iteration on `w − σ(Dw + c)` with
//! residual backtracking. The Newton Jacobian `I − diag(σ')·D` is nonsingular
//! whenever `2Λ − ΛD − DᵀΛ ≻ 0` for some positive diagonal `Λ`.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Absolute tolerance on `‖w − σ(Dw + c)‖∞`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub w: Vector,
    pub residual: f64,
    pub iterations: usize,
}

const PICARD_PATIENCE: usize = 5;
const STALL_RATIO: f64 = 0.5;
const MAX_BACKTRACK: usize = 30;

/// Picard damping `1/(1 + ‖D‖∞)`.
pub(crate) fn picard_step(d11: &Mat) -> f64 {
    let norm_inf = d11
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    1.0 / (1.0 + norm_inf)
}

fn inf_norm(v: &Vector) -> f64 {
    v.amax()
}

pub(crate) fn solve_fixed_point(
    d11: &Mat,
    offset: &Vector,
    act: Activation,
    opts: &SolverOptions,
    init: Option<&Vector>,
) -> Result<Equilibrium> {
    let q = offset.len();
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be > 0"));
    }
    if q == 0 {
        return Ok(Equilibrium {
            w: Vector::zeros(0),
            residual: 0.0,
            iterations: 0,
        });
    }
    let alpha = picard_step(d11);
    let map = |w: &Vector| act.apply(&(d11 * w + offset));

    let mut w = init.cloned().unwrap_or_else(|| Vector::zeros(q));
    let mut g = map(&w);
    let mut r = inf_norm(&(&w - &g));
    let mut best = r;
    let mut iterations = 0;
    let mut newton = false;

    while !(r <= opts.tol) {
        if iterations >= opts.max_iter || !r.is_finite() {
            return Err(Error::NonConvergence {
                residual: best,
                iterations,
            });
        }
        iterations += 1;
        let mut stepped = false;
        if newton {
            let s = act.slopes(&(d11 * &w + offset));
            let mut jac = -(Mat::from_diagonal(&s) * d11);
            for i in 0..q {
                jac[(i, i)] += 1.0;
            }
            if let Some(delta) = jac.lu().solve(&(&g - &w)) {
                let mut t = 1.0;
                for _ in 0..MAX_BACKTRACK {
                    let w_try = &w + &delta * t;
                    let g_try = map(&w_try);
                    let r_try = inf_norm(&(&w_try - &g_try));
                    if r_try < r {
                        w = w_try;
                        g = g_try;
                        r = r_try;
                        stepped = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        if !stepped {
            w = &w * (1.0 - alpha) + &g * alpha;
            g = map(&w);
            let r_new = inf_norm(&(&w - &g));
            if !newton && iterations >= PICARD_PATIENCE && r_new > STALL_RATIO * r {
                newton = true;
            }
            r = r_new;
        }
        best = best.min(r);
    }
    Ok(Equilibrium {
        w,
        residual: r,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coupling_converges_in_one_iteration() {
        let off = Vector::from_vec(alloc::vec![0.3, -1.2]);
        let eq = solve_fixed_point(&Mat::zeros(2, 2), &off, Activation::Tanh, &Default::default(), None).unwrap();
        assert_eq!(eq.iterations, 1);
        assert_eq!(eq.w, Activation::Tanh.apply(&off));
        assert_eq!(eq.residual, 0.0);
    }

    #[test]
    fn slow_picard_switches_to_newton() {
        // strongly self-coupled but well-posed: 2 - 2·0.999 > 0
        let d = Mat::from_row_slice(2, 2, &[0.999, 0.3, -0.3, 0.999]);
        let off = Vector::from_vec(alloc::vec![0.5, -0.25]);
        let opts = SolverOptions {
            tol: 1e-12,
            max_iter: 200,
        };
        let eq = solve_fixed_point(&d, &off, Activation::Identity, &opts, None).unwrap();
        let exact = (Mat::identity(2, 2) - &d).lu().solve(&off).unwrap();
        assert!((eq.w - exact).amax() < 1e-9);
    }

    #[test]
    fn reports_best_residual_on_failure() {
        // w = w + 1 has no solution
        let d = Mat::identity(1, 1);
        let off = Vector::from_vec(alloc::vec![1.0]);
        let opts = SolverOptions { tol: 1e-8, max_iter: 20 };
        match solve_fixed_point(&d, &off, Activation::Identity, &opts, None) {
            Err(Error::NonConvergence { residual, iterations }) => {
                assert_eq!(iterations, 20);
                assert!(residual > 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
