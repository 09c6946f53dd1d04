//! Simulation-error fitting over direct parameters.
//!
//! Fitting runs a first-order optimizer on an unconstrained parameter vector
//! that is mapped through [`direct_parameterize_ren`] at every iterate, so
//! every model the optimizer ever produces is certified by construction. The
//! stable-LTI family is the `q = 0` slice of the same map without biases.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::Activation;
use crate::adjoint::{lipschitz_min_eig_grad, pullback_direct, DirectGrad, RenKernel};
use crate::certkit::SkewSymmetric;
use crate::eqnet::{self, EquilibriumNetwork};
use crate::error::{expect_dim, Error, Result};
use crate::lti::{ExplicitLti, ImplicitLti};
use crate::ren::{direct_parameterize_ren, ren_step, Ren, RenDirectParams};
use crate::rnn::{rnn_step, RobustRnn};
use crate::solver::SolverOptions;
use crate::{Mat, Vector};

/// Outputs `y₀…y_{T−1}` and states `x₀…x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub outputs: Vec<Vector>,
    pub states: Vec<Vector>,
}

/// A discrete-time model `x⁺ = f(x, u)`, `y = g(x, u)`.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn step(&self, x: &Vector, u: &Vector, opts: &SolverOptions) -> Result<(Vector, Vector)>;

    /// REN embedding; used wherever derivatives with respect to inputs are
    /// needed.
    fn to_ren(&self) -> Ren;

    fn simulate(&self, us: &[Vector], x0: &Vector, opts: &SolverOptions) -> Result<Trajectory> {
        expect_dim("initial state", self.state_dim(), x0.len())?;
        let mut states = Vec::with_capacity(us.len() + 1);
        let mut outputs = Vec::with_capacity(us.len());
        states.push(x0.clone());
        for u in us {
            expect_dim("input", self.input_dim(), u.len())?;
            let (next, y) = self.step(states.last().expect("nonempty"), u, opts)?;
            outputs.push(y);
            states.push(next);
        }
        Ok(Trajectory { outputs, states })
    }
}

pub fn simulate<M: Dynamics + ?Sized>(
    model: &M,
    us: &[Vector],
    x0: &Vector,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    model.simulate(us, x0, opts)
}

impl Dynamics for ExplicitLti {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn step(&self, x: &Vector, u: &Vector, _: &SolverOptions) -> Result<(Vector, Vector)> {
        Ok(ExplicitLti::step(self, x, u))
    }
    fn to_ren(&self) -> Ren {
        Ren::from_explicit_lti(self)
    }
}

impl Dynamics for ImplicitLti {
    fn state_dim(&self) -> usize {
        ImplicitLti::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        ImplicitLti::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        ImplicitLti::output_dim(self)
    }
    fn step(&self, x: &Vector, u: &Vector, _: &SolverOptions) -> Result<(Vector, Vector)> {
        ImplicitLti::step(self, x, u)
    }
    fn to_ren(&self) -> Ren {
        Ren::from_implicit_lti(self)
    }
}

impl Dynamics for RobustRnn {
    fn state_dim(&self) -> usize {
        RobustRnn::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        RobustRnn::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        RobustRnn::output_dim(self)
    }
    fn step(&self, x: &Vector, u: &Vector, _: &SolverOptions) -> Result<(Vector, Vector)> {
        rnn_step(self, x, u)
    }
    fn to_ren(&self) -> Ren {
        Ren::from_rnn(self)
    }
}

impl Dynamics for Ren {
    fn state_dim(&self) -> usize {
        Ren::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        Ren::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        Ren::output_dim(self)
    }
    fn step(&self, x: &Vector, u: &Vector, opts: &SolverOptions) -> Result<(Vector, Vector)> {
        ren_step(self, x, u, opts)
    }
    fn to_ren(&self) -> Ren {
        self.clone()
    }
    fn simulate(&self, us: &[Vector], x0: &Vector, opts: &SolverOptions) -> Result<Trajectory> {
        expect_dim("initial state", self.state_dim(), x0.len())?;
        for u in us {
            expect_dim("input", self.input_dim(), u.len())?;
        }
        let tape = RenKernel::new(self, *opts)?.forward(x0, us)?;
        Ok(Trajectory {
            outputs: tape.ys,
            states: tape.xs,
        })
    }
}

/// Static map, evaluated independently at every time step.
impl Dynamics for EquilibriumNetwork {
    fn state_dim(&self) -> usize {
        0
    }
    fn input_dim(&self) -> usize {
        EquilibriumNetwork::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        EquilibriumNetwork::output_dim(self)
    }
    fn step(&self, _: &Vector, u: &Vector, opts: &SolverOptions) -> Result<(Vector, Vector)> {
        Ok((Vector::zeros(0), eqnet::forward(self, u, opts)?))
    }
    fn to_ren(&self) -> Ren {
        Ren::from_eqnet(self)
    }
}

/// Measured input/output sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub u: Vec<Vector>,
    pub y: Vec<Vector>,
    /// Known initial state; when absent, fitting learns one.
    pub x0: Option<Vector>,
}

impl TimeSeriesDataset {
    pub fn new(u: Vec<Vector>, y: Vec<Vector>, x0: Option<Vector>) -> Result<Self> {
        let d = Self { u, y, x0 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.is_empty() {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        expect_dim("output sequence length", self.u.len(), self.y.len())?;
        let (m, p) = (self.u[0].len(), self.y[0].len());
        for (u, y) in self.u.iter().zip(&self.y) {
            expect_dim("input width", m, u.len())?;
            expect_dim("output width", p, y.len())?;
            if !u.iter().chain(y.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("dataset"));
            }
        }
        if let Some(x0) = &self.x0 {
            if !x0.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("dataset initial state"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.u.first().map_or(0, |v| v.len())
    }

    pub fn output_dim(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }
}

/// `Σₜ |yₜ − ỹₜ|²`.
pub fn simulation_error(y: &[Vector], y_ref: &[Vector]) -> Result<f64> {
    expect_dim("sequence length", y_ref.len(), y.len())?;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(y_ref) {
        expect_dim("output width", b.len(), a.len())?;
        total += (a - b).norm_squared();
    }
    Ok(total)
}

/// `√(error / Σₜ |ỹₜ − mean ỹ|²)`; `None` when the reference has no
/// variation (the 0/0 case).
pub fn nrmse(y: &[Vector], y_ref: &[Vector]) -> Result<Option<f64>> {
    let err = simulation_error(y, y_ref)?;
    if y_ref.is_empty() {
        return Ok(None);
    }
    let mut mean = Vector::zeros(y_ref[0].len());
    for v in y_ref {
        mean += v;
    }
    mean /= y_ref.len() as f64;
    let spread: f64 = y_ref.iter().map(|v| (v - &mean).norm_squared()).sum();
    if spread > 0.0 {
        Ok(Some(libm::sqrt(err / spread)))
    } else if err == 0.0 {
        Ok(None)
    } else {
        Ok(Some(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    StableLti,
    ContractingRen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

/// Flat layout of the trainable parameters of a family. Matrices are stored
/// column-major, in the field order of [`RenDirectParams`], followed by the
/// biases (REN family only) and the learnable initial state (when used).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub family: Family,
    pub dims: ModelDims,
    pub learn_x0: bool,
    pub eps: f64,
    pub act: Activation,
}

impl ParamLayout {
    pub fn new(family: Family, dims: ModelDims, learn_x0: bool, eps: f64, act: Activation) -> Result<Self> {
        if family == Family::StableLti && dims.q != 0 {
            return Err(Error::invalid("stable LTI family has no hidden units (q must be 0)"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("eps must be > 0"));
        }
        Ok(Self {
            family,
            dims,
            learn_x0,
            eps,
            act,
        })
    }

    fn has_biases(&self) -> bool {
        self.family == Family::ContractingRen
    }

    fn shapes(&self) -> [(usize, usize); 12] {
        let ModelDims { n, m, p, q } = self.dims;
        let d = 2 * n + q;
        let b = usize::from(self.has_biases());
        [
            (d, d),
            (SkewSymmetric::free_len(n), 1),
            (SkewSymmetric::free_len(q), 1),
            (q, 1),
            (n, m),
            (q, m),
            (p, n),
            (p, q),
            (p, m),
            (n * b, 1),
            (q * b, 1),
            (p * b, 1),
        ]
    }

    pub fn len(&self) -> usize {
        let base: usize = self.shapes().iter().map(|(r, c)| r * c).sum();
        base + if self.learn_x0 { self.dims.n } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<(RenDirectParams, Option<Vector>)> {
        expect_dim("parameter vector", self.len(), theta.len())?;
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        let ModelDims { n, m: _, p, q } = self.dims;
        let shapes = self.shapes();
        let mut off = 0;
        let mut take = |k: usize| {
            let (r, c) = shapes[k];
            let s = &theta[off..off + r * c];
            off += r * c;
            (r, c, s)
        };
        let mat = |(r, c, s): (usize, usize, &[f64])| Mat::from_column_slice(r, c, s);
        let vecv = |(_, _, s): (usize, usize, &[f64])| Vector::from_column_slice(s);
        let v = mat(take(0));
        let s_e = SkewSymmetric::new(n, take(1).2.to_vec())?;
        let s_w = SkewSymmetric::new(q, take(2).2.to_vec())?;
        let lambda_log = vecv(take(3));
        let b2 = mat(take(4));
        let d12 = mat(take(5));
        let c2 = mat(take(6));
        let d21 = mat(take(7));
        let d22 = mat(take(8));
        let mut bias = |k: usize, len: usize| {
            let v = vecv(take(k));
            if v.is_empty() {
                Vector::zeros(len)
            } else {
                v
            }
        };
        let b_x = bias(9, n);
        let b_v = bias(10, q);
        let b_y = bias(11, p);
        let x0 = self
            .learn_x0
            .then(|| Vector::from_column_slice(&theta[off..off + n]));
        Ok((
            RenDirectParams {
                v,
                s_e,
                s_w,
                lambda_log,
                eps: self.eps,
                b2,
                d12,
                c2,
                d21,
                d22,
                b_x,
                b_v,
                b_y,
                act: self.act,
            },
            x0,
        ))
    }

    fn pack_grad(&self, g: &DirectGrad, gx0: Option<&Vector>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(g.v.as_slice());
        out.extend_from_slice(&g.s_e);
        out.extend_from_slice(&g.s_w);
        out.extend_from_slice(g.lambda_log.as_slice());
        for m in [&g.b2, &g.d12, &g.c2, &g.d21, &g.d22] {
            out.extend_from_slice(m.as_slice());
        }
        if self.has_biases() {
            for v in [&g.b_x, &g.b_v, &g.b_y] {
                out.extend_from_slice(v.as_slice());
            }
        }
        if self.learn_x0 {
            out.extend_from_slice(gx0.expect("x0 gradient").as_slice());
        }
        out
    }

    /// Seeded random starting point.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelDims { n, m, p, q } = self.dims;
        let mut normal = |count: usize, scale: f64| -> Vec<f64> {
            (0..count)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let inv_sqrt = |k: usize| 1.0 / libm::sqrt(k.max(1) as f64);
        let d = 2 * n + q;
        let mut theta = Vec::with_capacity(self.len());
        theta.extend(normal(d * d, inv_sqrt(d)));
        theta.extend(alloc::vec![0.0; SkewSymmetric::free_len(n)]);
        theta.extend(alloc::vec![0.0; SkewSymmetric::free_len(q)]);
        theta.extend(alloc::vec![0.0; q]);
        theta.extend(normal(n * m, inv_sqrt(m)));
        theta.extend(normal(q * m, inv_sqrt(m)));
        theta.extend(normal(p * n, inv_sqrt(n)));
        theta.extend(normal(p * q, 0.1 * inv_sqrt(q)));
        theta.extend(alloc::vec![0.0; p * m]);
        if self.has_biases() {
            theta.extend(alloc::vec![0.0; n + q + p]);
        }
        if self.learn_x0 {
            theta.extend(alloc::vec![0.0; n]);
        }
        theta
    }

    pub fn model(&self, theta: &[f64]) -> Result<Ren> {
        direct_parameterize_ren(&self.unpack(theta)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamCoefficients {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamCoefficients {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    GradientDescent,
    AdamLike(AdamCoefficients),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    AnalyticUnrolled,
    FiniteDifference,
}

/// Soft robustness objective `weight · max(0, margin − λ_min(M_γ))²` on the
/// REN dissipation matrix at `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzPenalty {
    pub gamma: f64,
    pub weight: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub grad_mode: GradMode,
    pub fd_step: f64,
    pub seed: u64,
    pub solver: SolverOptions,
    /// `eps` of `H = VVᵀ + eps·I`.
    pub eps: f64,
    pub act: Activation,
    pub penalty: Option<LipschitzPenalty>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            iterations: 2000,
            optimizer: Optimizer::AdamLike(AdamCoefficients::default()),
            grad_mode: GradMode::AnalyticUnrolled,
            fd_step: 1e-6,
            seed: 0,
            solver: SolverOptions::default(),
            eps: 1e-3,
            act: Activation::Tanh,
            penalty: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if !(1e-8..=1e-3).contains(&self.fd_step) {
            return Err(Error::invalid("fd_step must lie in [1e-8, 1e-3]"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be > 0"));
        }
        if let Some(p) = &self.penalty {
            crate::rnn::check_gamma(p.gamma)?;
            if !(p.weight >= 0.0) {
                return Err(Error::invalid("penalty weight must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Objective pieces at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub simulation_error: f64,
    pub penalty: f64,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.simulation_error + self.penalty
    }
}

fn initial_state(layout: &ParamLayout, x0: Option<Vector>, data: &TimeSeriesDataset) -> Result<Vector> {
    match (x0, &data.x0) {
        (Some(x), _) => Ok(x),
        (None, Some(x)) => {
            expect_dim("dataset initial state", layout.dims.n, x.len())?;
            Ok(x.clone())
        }
        (None, None) => Ok(Vector::zeros(layout.dims.n)),
    }
}

fn check_data_dims(layout: &ParamLayout, data: &TimeSeriesDataset) -> Result<()> {
    data.validate()?;
    expect_dim("dataset input width", layout.dims.m, data.input_dim())?;
    expect_dim("dataset output width", layout.dims.p, data.output_dim())
}

/// Objective value at `theta`.
pub fn objective(theta: &[f64], layout: &ParamLayout, data: &TimeSeriesDataset, config: &FitConfig) -> Result<Objective> {
    check_data_dims(layout, data)?;
    let (params, x0) = layout.unpack(theta)?;
    let ren = direct_parameterize_ren(&params)?;
    let x0 = initial_state(layout, x0, data)?;
    let tape = RenKernel::new(&ren, config.solver)?.forward(&x0, &data.u)?;
    let penalty = match &config.penalty {
        Some(pen) => {
            let lmin = crate::certkit::min_eigenpair(&crate::ren::lipschitz_ren_matrix(&ren, pen.gamma)?)?.0;
            let gap = (pen.margin - lmin).max(0.0);
            pen.weight * gap * gap
        }
        None => 0.0,
    };
    Ok(Objective {
        simulation_error: simulation_error(&tape.ys, &data.y)?,
        penalty,
    })
}

/// Objective value and gradient at `theta`.
pub fn value_and_gradient(
    theta: &[f64],
    layout: &ParamLayout,
    data: &TimeSeriesDataset,
    config: &FitConfig,
) -> Result<(Objective, Vec<f64>)> {
    match config.grad_mode {
        GradMode::AnalyticUnrolled => analytic_gradient(theta, layout, data, config),
        GradMode::FiniteDifference => {
            let value = objective(theta, layout, data, config)?;
            let mut work = theta.to_vec();
            let mut grad = Vec::with_capacity(theta.len());
            let h = config.fd_step;
            for i in 0..theta.len() {
                work[i] = theta[i] + h;
                let plus = objective(&work, layout, data, config)?.total();
                work[i] = theta[i] - h;
                let minus = objective(&work, layout, data, config)?.total();
                work[i] = theta[i];
                grad.push((plus - minus) / (2.0 * h));
            }
            Ok((value, grad))
        }
    }
}

/// Gradient of the objective with respect to the flat parameters.
pub fn loss_gradient(theta: &[f64], layout: &ParamLayout, data: &TimeSeriesDataset, config: &FitConfig) -> Result<Vec<f64>> {
    Ok(value_and_gradient(theta, layout, data, config)?.1)
}

fn analytic_gradient(
    theta: &[f64],
    layout: &ParamLayout,
    data: &TimeSeriesDataset,
    config: &FitConfig,
) -> Result<(Objective, Vec<f64>)> {
    check_data_dims(layout, data)?;
    let (params, x0_param) = layout.unpack(theta)?;
    let ren = direct_parameterize_ren(&params)?;
    let learn_x0 = x0_param.is_some();
    let x0 = initial_state(layout, x0_param, data)?;
    let kernel = RenKernel::new(&ren, config.solver)?;
    let tape = kernel.forward(&x0, &data.u)?;
    let err = simulation_error(&tape.ys, &data.y)?;
    let ybar: Vec<Vector> = tape.ys.iter().zip(&data.y).map(|(y, r)| (y - r) * 2.0).collect();
    let back = kernel.backward(&tape, &data.u, &ybar, true)?;
    let mut g = back.params.expect("parameter gradient requested");

    let mut penalty = 0.0;
    if let Some(pen) = &config.penalty {
        let (lmin, g_eig) = lipschitz_min_eig_grad(&ren, pen.gamma)?;
        let gap = (pen.margin - lmin).max(0.0);
        penalty = pen.weight * gap * gap;
        if gap > 0.0 {
            g.axpy(-2.0 * pen.weight * gap, &g_eig);
        }
    }
    let direct = pullback_direct(&params, &ren, &g);
    let grad = layout.pack_grad(&direct, learn_x0.then_some(&back.x0));
    Ok((
        Objective {
            simulation_error: err,
            penalty,
        },
        grad,
    ))
}

/// One row of the per-iteration loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub nrmse: Option<f64>,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FittedModel {
    Lti(ImplicitLti),
    Ren(Ren),
}

impl FittedModel {
    pub fn to_ren(&self) -> Ren {
        match self {
            FittedModel::Lti(m) => Ren::from_implicit_lti(m),
            FittedModel::Ren(r) => r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub model: FittedModel,
    pub x0: Vector,
    /// Rows for iterations `0..=iterations`; the last row is the returned model.
    pub trace: Vec<TraceRow>,
}

impl FitResult {
    pub fn final_nrmse(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.nrmse)
    }
}

/// Snapshot handed to the observer of [`fit_with_observer`].
pub struct FitIterate<'a> {
    pub iteration: usize,
    pub model: &'a Ren,
    pub objective: Objective,
}

pub fn fit(family: Family, dims: ModelDims, data: &TimeSeriesDataset, config: &FitConfig) -> Result<FitResult> {
    fit_with_observer(family, dims, data, config, |_| {})
}

/// [`fit`] with a callback invoked at every iterate, including the final one.
pub fn fit_with_observer(
    family: Family,
    dims: ModelDims,
    data: &TimeSeriesDataset,
    config: &FitConfig,
    mut observer: impl FnMut(&FitIterate<'_>),
) -> Result<FitResult> {
    config.validate()?;
    let dims = match family {
        Family::StableLti => ModelDims { q: 0, ..dims },
        Family::ContractingRen => dims,
    };
    let learn_x0 = data.x0.is_none();
    let act = match family {
        Family::StableLti => Activation::Identity,
        Family::ContractingRen => config.act,
    };
    let layout = ParamLayout::new(family, dims, learn_x0, config.eps, act)?;
    check_data_dims(&layout, data)?;
    let mut theta = layout.init(config.seed);

    let mut first = alloc::vec![0.0; theta.len()];
    let mut second = alloc::vec![0.0; theta.len()];
    let mut trace = Vec::with_capacity(config.iterations + 1);

    for it in 0..=config.iterations {
        let (obj, grad) = value_and_gradient(&theta, &layout, data, config)?;
        let model = layout.model(&theta)?;
        let total = obj.total();
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                trace: trace.iter().map(|r: &TraceRow| r.loss).collect(),
            });
        }
        let x0 = initial_state(&layout, layout.unpack(&theta)?.1, data)?;
        let nrmse_now = {
            let sim = model.simulate(&data.u, &x0, &config.solver)?;
            nrmse(&sim.outputs, &data.y)?
        };
        trace.push(TraceRow {
            iteration: it,
            loss: obj.simulation_error,
            nrmse: nrmse_now,
            penalty: obj.penalty,
        });
        observer(&FitIterate {
            iteration: it,
            model: &model,
            objective: obj,
        });
        if it == config.iterations {
            break;
        }
        match config.optimizer {
            Optimizer::GradientDescent => {
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= config.learning_rate * g;
                }
            }
            Optimizer::AdamLike(c) => {
                let k = (it + 1) as i32;
                let bc1 = 1.0 - libm::pow(c.beta1, k as f64);
                let bc2 = 1.0 - libm::pow(c.beta2, k as f64);
                for i in 0..theta.len() {
                    first[i] = c.beta1 * first[i] + (1.0 - c.beta1) * grad[i];
                    second[i] = c.beta2 * second[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                    let mhat = first[i] / bc1;
                    let vhat = second[i] / bc2;
                    theta[i] -= config.learning_rate * mhat / (libm::sqrt(vhat) + c.epsilon);
                }
            }
        }
    }

    let (params, x0_param) = layout.unpack(&theta)?;
    let ren = direct_parameterize_ren(&params)?;
    let x0 = initial_state(&layout, x0_param, data)?;
    let model = match family {
        Family::StableLti => FittedModel::Lti(ren.to_implicit_lti()?),
        Family::ContractingRen => FittedModel::Ren(ren),
    };
    Ok(FitResult {
        layout,
        params: theta,
        model,
        x0,
        trace,
    })
}
