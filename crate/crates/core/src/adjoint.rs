//! Reverse-mode derivatives of REN rollouts.
//!
//! The forward pass records states, pre-activations and equilibria. The
//! backward pass runs backpropagation through time; at each step the
//! equilibrium `w = σ(D₁₁w + r)` is differentiated through the implicit
//! function relation `(I − diag(σ')D₁₁) dw = diag(σ') dr` at the converged
//! point, never through solver iterations.

use alloc::vec::Vec;

use nalgebra::LU;

use crate::certkit::{self, SkewSymmetric};
use crate::error::{Error, Result};
use crate::ren::{Ren, RenDirectParams};
use crate::rnn::unscale_rows;
use crate::solver::{solve_fixed_point, SolverOptions};
use crate::{Mat, Vector};

type Lu = LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// Explicit-form cache of a REN: `x⁺ = A x + B̂₁ w + B̂₂ u + b̂ₓ` with hats
/// denoting `E⁻¹(·)`.
pub(crate) struct RenKernel<'a> {
    pub ren: &'a Ren,
    et_lu: Option<Lu>,
    a: Mat,
    b1: Mat,
    b2: Mat,
    bx: Vector,
    c1: Mat,
    d11: Mat,
    opts: SolverOptions,
}

pub(crate) struct Tape {
    /// `x₀, …, x_T`.
    pub xs: Vec<Vector>,
    pub vs: Vec<Vector>,
    pub ws: Vec<Vector>,
    pub ys: Vec<Vector>,
}

/// Gradient with respect to every stored REN field.
#[derive(Debug, Clone)]
pub(crate) struct RenGrad {
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
}

impl RenGrad {
    pub fn zeros_like(r: &Ren) -> Self {
        let z = |m: &Mat| Mat::zeros(m.nrows(), m.ncols());
        let zv = |v: &Vector| Vector::zeros(v.len());
        Self {
            e: z(&r.e),
            f: z(&r.f),
            b1: z(&r.b1),
            b2: z(&r.b2),
            c_tilde: z(&r.c_tilde),
            d11_tilde: z(&r.d11_tilde),
            d12: z(&r.d12),
            c2: z(&r.c2),
            d21: z(&r.d21),
            d22: z(&r.d22),
            lambda: zv(&r.lambda),
            p: z(&r.p),
            b_x: zv(&r.b_x),
            b_v: zv(&r.b_v),
            b_y: zv(&r.b_y),
        }
    }

    pub fn axpy(&mut self, s: f64, o: &RenGrad) {
        self.e += &o.e * s;
        self.f += &o.f * s;
        self.b1 += &o.b1 * s;
        self.b2 += &o.b2 * s;
        self.c_tilde += &o.c_tilde * s;
        self.d11_tilde += &o.d11_tilde * s;
        self.d12 += &o.d12 * s;
        self.c2 += &o.c2 * s;
        self.d21 += &o.d21 * s;
        self.d22 += &o.d22 * s;
        self.lambda += &o.lambda * s;
        self.p += &o.p * s;
        self.b_x += &o.b_x * s;
        self.b_v += &o.b_v * s;
        self.b_y += &o.b_y * s;
    }
}

pub(crate) struct Backward {
    pub params: Option<RenGrad>,
    pub x0: Vector,
    pub inputs: Vec<Vector>,
}

fn singular() -> Error {
    Error::Singular { rcond: 0.0 }
}

impl<'a> RenKernel<'a> {
    pub fn new(ren: &'a Ren, opts: SolverOptions) -> Result<Self> {
        ren.validate()?;
        let n = ren.state_dim();
        let (et_lu, a, b1, b2, bx) = if n == 0 {
            (None, ren.f.clone(), ren.b1.clone(), ren.b2.clone(), ren.b_x.clone())
        } else {
            let lu = ren.e.clone().lu();
            let a = lu.solve(&ren.f).ok_or_else(singular)?;
            let b1 = lu.solve(&ren.b1).ok_or_else(singular)?;
            let b2 = lu.solve(&ren.b2).ok_or_else(singular)?;
            let bx = lu.solve(&ren.b_x).ok_or_else(singular)?;
            (Some(ren.e.transpose().lu()), a, b1, b2, bx)
        };
        Ok(Self {
            ren,
            et_lu,
            a,
            b1,
            b2,
            bx,
            c1: ren.c1(),
            d11: ren.d11(),
            opts,
        })
    }

    /// One step: `(v, w, x⁺, y)`.
    pub fn step(&self, x: &Vector, u: &Vector) -> Result<(Vector, Vector, Vector, Vector)> {
        let r = self.ren;
        let offset = &self.c1 * x + &r.d12 * u + &r.b_v;
        let w = solve_fixed_point(&self.d11, &offset, r.act, &self.opts, None)?.w;
        let v = &self.d11 * &w + offset;
        let next = &self.a * x + &self.b1 * &w + &self.b2 * u + &self.bx;
        let y = &r.c2 * x + &r.d21 * &w + &r.d22 * u + &r.b_y;
        Ok((v, w, next, y))
    }

    pub fn forward(&self, x0: &Vector, us: &[Vector]) -> Result<Tape> {
        let t = us.len();
        let mut tape = Tape {
            xs: Vec::with_capacity(t + 1),
            vs: Vec::with_capacity(t),
            ws: Vec::with_capacity(t),
            ys: Vec::with_capacity(t),
        };
        tape.xs.push(x0.clone());
        for u in us {
            let x = tape.xs.last().expect("nonempty");
            let (v, w, next, y) = self.step(x, u)?;
            tape.vs.push(v);
            tape.ws.push(w);
            tape.ys.push(y);
            tape.xs.push(next);
        }
        Ok(tape)
    }

    /// Vector-Jacobian product of the output sequence with `ybar`.
    pub fn backward(&self, tape: &Tape, us: &[Vector], ybar: &[Vector], want_params: bool) -> Result<Backward> {
        let r = self.ren;
        let (n, q) = (r.state_dim(), r.hidden_dim());
        let t_len = us.len();
        let mut g = want_params.then(|| RenGrad::zeros_like(r));
        let mut g_a = Mat::zeros(n, n);
        let mut g_b1 = Mat::zeros(n, q);
        let mut g_b2 = Mat::zeros(n, r.input_dim());
        let mut g_bx = Vector::zeros(n);
        let mut g_c1 = Mat::zeros(q, n);
        let mut g_d11 = Mat::zeros(q, q);

        let mut gx_next = Vector::zeros(n);
        let mut inputs = alloc::vec![Vector::zeros(r.input_dim()); t_len];
        for t in (0..t_len).rev() {
            let (x, w, v, u, gy) = (&tape.xs[t], &tape.ws[t], &tape.vs[t], &us[t], &ybar[t]);
            let gw = self.b1.tr_mul(&gx_next) + r.d21.tr_mul(gy);
            let mut gx = self.a.tr_mul(&gx_next) + r.c2.tr_mul(gy);
            let mut gu = self.b2.tr_mul(&gx_next) + r.d22.tr_mul(gy);
            if let Some(g) = g.as_mut() {
                g_a.ger(1.0, &gx_next, x, 1.0);
                g_b1.ger(1.0, &gx_next, w, 1.0);
                g_b2.ger(1.0, &gx_next, u, 1.0);
                g_bx += &gx_next;
                g.c2.ger(1.0, gy, x, 1.0);
                g.d21.ger(1.0, gy, w, 1.0);
                g.d22.ger(1.0, gy, u, 1.0);
                g.b_y += gy;
            }
            if q > 0 {
                let s = r.act.slopes(v);
                // (I − S D₁₁)ᵀ z = gw, then ∂/∂v-offset = S z
                let mut jt = -(self.d11.transpose() * Mat::from_diagonal(&s));
                for i in 0..q {
                    jt[(i, i)] += 1.0;
                }
                let z = jt.lu().solve(&gw).ok_or_else(singular)?;
                let gv = s.component_mul(&z);
                gx += self.c1.tr_mul(&gv);
                gu += r.d12.tr_mul(&gv);
                if let Some(g) = g.as_mut() {
                    g_c1.ger(1.0, &gv, x, 1.0);
                    g_d11.ger(1.0, &gv, w, 1.0);
                    g.d12.ger(1.0, &gv, u, 1.0);
                    g.b_v += &gv;
                }
            }
            inputs[t] = gu;
            gx_next = gx;
        }

        if let Some(g) = g.as_mut() {
            if let Some(lu) = &self.et_lu {
                let za = lu.solve(&g_a).ok_or_else(singular)?;
                let zb1 = lu.solve(&g_b1).ok_or_else(singular)?;
                let zb2 = lu.solve(&g_b2).ok_or_else(singular)?;
                let zbx = lu.solve(&g_bx).ok_or_else(singular)?;
                g.e = -(&za * self.a.transpose()
                    + &zb1 * self.b1.transpose()
                    + &zb2 * self.b2.transpose()
                    + &zbx * self.bx.transpose());
                g.f = za;
                g.b1 = zb1;
                g.b2 = zb2;
                g.b_x = zbx;
            }
            // C₁ = Λ⁻¹C̃, D₁₁ = Λ⁻¹D̃₁₁
            g.c_tilde = unscale_rows(&r.lambda, &g_c1);
            g.d11_tilde = unscale_rows(&r.lambda, &g_d11);
            for i in 0..q {
                let li = r.lambda[i];
                let dot_c: f64 = g_c1.row(i).dot(&self.c1.row(i));
                let dot_d: f64 = g_d11.row(i).dot(&self.d11.row(i));
                g.lambda[i] -= (dot_c + dot_d) / li;
            }
        }
        Ok(Backward {
            params: g,
            x0: gx_next,
            inputs,
        })
    }
}

/// `λ_min` of the REN dissipation matrix at `γ` and its gradient with
/// respect to the stored fields.
pub(crate) fn lipschitz_min_eig_grad(ren: &Ren, gamma: f64) -> Result<(f64, RenGrad)> {
    let m = crate::ren::lipschitz_ren_matrix(ren, gamma)?;
    let (lmin, z) = certkit::min_eigenpair(&m)?;
    let (n, q, mm) = (ren.state_dim(), ren.hidden_dim(), ren.input_dim());
    let a = z.rows(0, n).into_owned();
    let b = z.rows(n, n).into_owned();
    let c = z.rows(2 * n, q).into_owned();
    let d = z.rows(2 * n + q, mm).into_owned();
    let r = &ren.c2 * &b + &ren.d21 * &c + &ren.d22 * &d;
    let mut g = RenGrad::zeros_like(ren);
    g.e = &a * a.transpose() * 2.0;
    g.p = &b * b.transpose() - &a * a.transpose();
    g.f = &a * b.transpose() * -2.0;
    g.b1 = &a * c.transpose() * -2.0;
    g.b2 = &a * d.transpose() * -2.0;
    g.c_tilde = &c * b.transpose() * -2.0;
    g.d11_tilde = &c * c.transpose() * -2.0;
    g.d12 = c.component_mul(&ren.lambda) * d.transpose() * -2.0;
    g.c2 = &r * b.transpose() * -2.0;
    g.d21 = &r * c.transpose() * -2.0;
    g.d22 = &r * d.transpose() * -2.0;
    let d12d = &ren.d12 * &d;
    for i in 0..q {
        g.lambda[i] = 2.0 * c[i] * c[i] - 2.0 * c[i] * d12d[i];
    }
    Ok((lmin, g))
}

/// Gradient on the free parameters of [`RenDirectParams`], flattened in the
/// same order as [`RenDirectParams`]'s fields.
#[derive(Debug, Clone)]
pub(crate) struct DirectGrad {
    pub v: Mat,
    pub s_e: Vec<f64>,
    pub s_w: Vec<f64>,
    pub lambda_log: Vector,
    pub b2: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub d21: Mat,
    pub d22: Mat,
    pub b_x: Vector,
    pub b_v: Vector,
    pub b_y: Vector,
}

/// Chain rule through `direct_parameterize_ren`.
pub(crate) fn pullback_direct(p: &RenDirectParams, ren: &Ren, g: &RenGrad) -> DirectGrad {
    let n = p.state_dim();
    let q = p.hidden_dim();
    let d = 2 * n + q;
    let mut gh = Mat::zeros(d, d);
    {
        let mut add = |i: usize, j: usize, m: &Mat, s: f64| {
            let mut view = gh.view_mut((i, j), m.shape());
            view += m * s;
        };
        add(0, 0, &g.e, 0.5);
        add(n, n, &g.e, 0.5);
        add(n, n, &g.p, 1.0);
        add(0, n, &g.f, -1.0);
        add(0, 2 * n, &g.b1, -1.0);
        add(2 * n, n, &g.c_tilde, -1.0);
        add(2 * n, 2 * n, &g.d11_tilde, -0.5);
    }
    let gv = (&gh + gh.transpose()) * &p.v;
    let s_e = SkewSymmetric::pullback(&(&g.e * 0.5));
    let s_w = SkewSymmetric::pullback(&g.d11_tilde);
    let mut g_lambda = g.lambda.clone();
    for i in 0..q {
        g_lambda[i] += g.d11_tilde[(i, i)];
    }
    let lambda_log = g_lambda.component_mul(&ren.lambda);
    DirectGrad {
        v: gv,
        s_e,
        s_w,
        lambda_log,
        b2: g.b2.clone(),
        d12: g.d12.clone(),
        c2: g.c2.clone(),
        d21: g.d21.clone(),
        d22: g.d22.clone(),
        b_x: g.b_x.clone(),
        b_v: g.b_v.clone(),
        b_y: g.b_y.clone(),
    }
}
