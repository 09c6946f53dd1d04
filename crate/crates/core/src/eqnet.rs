//! Equilibrium networks: static maps defined implicitly by
//! `w = σ(D₁₁ w + D₁₂ u + b_w)`, `y = D₂₁ w + b_y`.

use alloc::vec::Vec;

use crate::activation::Activation;
use crate::certkit::{self, ensure_finite, ensure_square, SkewSymmetric, SymCheckReport};
use crate::error::{expect_dim, Error, Result};
use crate::rnn::{check_gamma, check_lambda, scale_rows, unscale_rows};
use crate::solver::{solve_fixed_point, Equilibrium, SolverOptions};
use crate::{Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumNetwork {
    pub d11: Mat,
    pub d12: Mat,
    pub d21: Mat,
    pub b_w: Vector,
    pub b_y: Vector,
    pub lambda: Vector,
    pub act: Activation,
    pub gamma: Option<f64>,
}

impl EquilibriumNetwork {
    pub fn hidden_dim(&self) -> usize {
        self.d11.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.d12.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.d21.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_square(&self.d11)?;
        let q = self.hidden_dim();
        expect_dim("D12 rows", q, self.d12.nrows())?;
        expect_dim("D21 cols", q, self.d21.ncols())?;
        expect_dim("b_w", q, self.b_w.len())?;
        expect_dim("b_y", self.output_dim(), self.b_y.len())?;
        expect_dim("Lambda", q, self.lambda.len())?;
        for (m, what) in [(&self.d11, "D11"), (&self.d12, "D12"), (&self.d21, "D21")] {
            ensure_finite(m, what)?;
        }
        if !self.b_w.iter().chain(self.b_y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("equilibrium network bias"));
        }
        check_lambda(&self.lambda)
    }
}

pub fn solve_equilibrium(net: &EquilibriumNetwork, u: &Vector, opts: &SolverOptions) -> Result<Equilibrium> {
    solve_equilibrium_from(net, u, None, opts)
}

/// Same as [`solve_equilibrium`] with an explicit initial guess.
pub fn solve_equilibrium_from(
    net: &EquilibriumNetwork,
    u: &Vector,
    init: Option<&Vector>,
    opts: &SolverOptions,
) -> Result<Equilibrium> {
    net.validate()?;
    expect_dim("input", net.input_dim(), u.len())?;
    if let Some(w0) = init {
        expect_dim("initial guess", net.hidden_dim(), w0.len())?;
    }
    let offset = &net.d12 * u + &net.b_w;
    solve_fixed_point(&net.d11, &offset, net.act, opts, init)
}

pub fn forward(net: &EquilibriumNetwork, u: &Vector, opts: &SolverOptions) -> Result<Vector> {
    let eq = solve_equilibrium(net, u, opts)?;
    Ok(&net.d21 * eq.w + &net.b_y)
}

pub fn wellposed_matrix(net: &EquilibriumNetwork) -> Result<Mat> {
    net.validate()?;
    let ld = scale_rows(&net.lambda, &net.d11);
    Ok(Mat::from_diagonal(&(&net.lambda * 2.0)) - &ld - ld.transpose())
}

/// `2Λ − ΛD₁₁ − D₁₁ᵀΛ ≻ 0`.
pub fn check_wellposed(net: &EquilibriumNetwork, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&wellposed_matrix(net)?, margin)
}

pub fn lipschitz_eqnet_matrix(net: &EquilibriumNetwork, gamma: f64) -> Result<Mat> {
    check_gamma(gamma)?;
    let base = wellposed_matrix(net)?;
    let ld12 = scale_rows(&net.lambda, &net.d12);
    Ok(base - (net.d21.transpose() * &net.d21) / gamma - (&ld12 * ld12.transpose()) / gamma)
}

/// `2Λ − ΛD₁₁ − D₁₁ᵀΛ − D₂₁ᵀD₂₁/γ − ΛD₁₂D₁₂ᵀΛ/γ ≻ 0`, certifying
/// `|Δy| ≤ γ|Δu|`.
pub fn check_lipschitz_eqnet(net: &EquilibriumNetwork, gamma: f64, margin: f64) -> Result<SymCheckReport> {
    certkit::is_positive_definite(&lipschitz_eqnet_matrix(net, gamma)?, margin)
}

/// Layer stack `z⁰ = u`, `zˡ⁺¹ = σ(Wˡ zˡ + bˡ)`, `y = Wᴸ zᴸ + bᴸ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardSpec {
    pub layers: Vec<(Mat, Vector)>,
    pub act: Activation,
}

impl FeedforwardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::invalid(
                "feedforward network needs at least one hidden layer and an output layer",
            ));
        }
        for (l, (w, b)) in self.layers.iter().enumerate() {
            expect_dim("layer bias", w.nrows(), b.len())?;
            ensure_finite(w, "layer weight")?;
            if l > 0 {
                expect_dim("layer chain", self.layers[l - 1].0.nrows(), w.ncols())?;
            }
        }
        Ok(())
    }

    /// Hidden layer widths `|z¹|, …, |zᴸ|`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        let l = self.layers.len();
        self.layers[..l - 1].iter().map(|(w, _)| w.nrows()).collect()
    }

    /// Direct layer-by-layer evaluation.
    pub fn evaluate(&self, u: &Vector) -> Result<Vector> {
        self.validate()?;
        let (last, hidden) = self.layers.split_last().expect("validated");
        expect_dim("input", hidden[0].0.ncols(), u.len())?;
        let mut z = u.clone();
        for (w, b) in hidden {
            z = self.act.apply(&(w * &z + b));
        }
        Ok(&last.0 * z + &last.1)
    }
}

/// Rewrites a feedforward stack as an equilibrium network with strictly
/// lower block-triangular `D₁₁`.
pub fn from_feedforward(spec: &FeedforwardSpec) -> Result<EquilibriumNetwork> {
    spec.validate()?;
    let widths = spec.hidden_widths();
    let q: usize = widths.iter().sum();
    let (last, hidden) = spec.layers.split_last().expect("validated");
    let m = hidden[0].0.ncols();
    let p = last.0.nrows();

    let mut d11 = Mat::zeros(q, q);
    let mut d12 = Mat::zeros(q, m);
    let mut b_w = Vector::zeros(q);
    let mut row = 0;
    let mut prev_col = 0;
    for (l, (w, b)) in hidden.iter().enumerate() {
        let rows = w.nrows();
        if l == 0 {
            d12.view_mut((0, 0), (rows, m)).copy_from(w);
        } else {
            d11.view_mut((row, prev_col), w.shape()).copy_from(w);
            prev_col += w.ncols();
        }
        b_w.rows_mut(row, rows).copy_from(b);
        row += rows;
    }
    let mut d21 = Mat::zeros(p, q);
    let last_width = *widths.last().expect("nonempty");
    d21.view_mut((0, q - last_width), (p, last_width)).copy_from(&last.0);

    Ok(EquilibriumNetwork {
        d11,
        d12,
        d21,
        b_w,
        b_y: last.1.clone(),
        lambda: Vector::from_element(q, 1.0),
        act: spec.act,
        gamma: None,
    })
}

/// Free parameters of a Lipschitz-bounded equilibrium network.
#[derive(Debug, Clone, PartialEq)]
pub struct LbenParams {
    /// `Λ = exp(lambda_log)`.
    pub lambda_log: Vector,
    pub s_w: SkewSymmetric,
    /// `q × q` factor of `H = VVᵀ + eps·I`.
    pub v: Mat,
    pub eps: f64,
    pub d21: Mat,
    /// `D̃₁₂ = ΛD₁₂`.
    pub d12_tilde: Mat,
    pub b_w: Vector,
    pub b_y: Vector,
    pub act: Activation,
}

/// Sets `ΛD₁₁ = Λ − (H + D₂₁ᵀD₂₁/γ + D̃₁₂D̃₁₂ᵀ/γ)/2 + S_w`, so the Lipschitz
/// matrix at `γ` equals `H` exactly.
pub fn direct_parameterize_lben(p: &LbenParams, gamma: f64) -> Result<EquilibriumNetwork> {
    check_gamma(gamma)?;
    let q = p.lambda_log.len();
    ensure_square(&p.v)?;
    expect_dim("V", q, p.v.nrows())?;
    expect_dim("S_w", q, p.s_w.dim())?;
    expect_dim("D21 cols", q, p.d21.ncols())?;
    expect_dim("D12tilde rows", q, p.d12_tilde.nrows())?;
    if !(p.eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    let lambda = p.lambda_log.map(libm::exp);
    check_lambda(&lambda)?;
    let h = certkit::gram_plus_eps(&p.v, p.eps);
    let inner = h
        + (p.d21.transpose() * &p.d21) / gamma
        + (&p.d12_tilde * p.d12_tilde.transpose()) / gamma;
    let ld11 = Mat::from_diagonal(&lambda) - inner * 0.5 + p.s_w.to_matrix();
    Ok(EquilibriumNetwork {
        d11: unscale_rows(&lambda, &ld11),
        d12: unscale_rows(&lambda, &p.d12_tilde),
        d21: p.d21.clone(),
        b_w: p.b_w.clone(),
        b_y: p.b_y.clone(),
        lambda,
        act: p.act,
        gamma: Some(gamma),
    })
}
