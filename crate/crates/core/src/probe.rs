//! Empirical checks that try to falsify certificates: contraction-rate
//! estimation from paired trajectories, and local search for large
//! incremental gains.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adjoint::RenKernel;
use crate::error::{expect_dim, Error, Result};
use crate::simfit::{simulation_error, Dynamics, GradMode};
use crate::solver::SolverOptions;
use crate::{Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    /// Per-step decay ratio from the log-linear fit.
    pub alpha_hat: f64,
    pub k_hat: f64,
    /// `|x_tᵃ − x_tᵇ|` for `t = 0..=steps`.
    pub distance_trace: Vec<f64>,
    /// Last step used in the fit.
    pub fit_end: usize,
}

fn paired_states<M: Dynamics + ?Sized>(
    model: &M,
    us: &[Vector],
    a: &Vector,
    b: &Vector,
    opts: &SolverOptions,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    expect_dim("initial state a", model.state_dim(), a.len())?;
    expect_dim("initial state b", model.state_dim(), b.len())?;
    if a == b {
        return Err(Error::invalid("contraction probe needs distinct initial states"));
    }
    let ta = model.simulate(us, a, opts)?;
    let tb = model.simulate(us, b, opts)?;
    Ok((ta.states, tb.states))
}

/// Runs two trajectories from `a` and `b` under the same inputs and fits
/// `log |Δx_t| ≈ log(K|a − b|) + t log α` over the steps before the distance
/// hits the rounding floor.
pub fn contraction_probe<M: Dynamics + ?Sized>(
    model: &M,
    us: &[Vector],
    a: &Vector,
    b: &Vector,
    opts: &SolverOptions,
) -> Result<ContractionEstimate> {
    let (xa, xb) = paired_states(model, us, a, b, opts)?;
    let trace: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| (p - q).norm()).collect();
    let scale = xa
        .iter()
        .chain(&xb)
        .map(|x| x.norm())
        .fold(trace[0], f64::max);
    let floor = 1e2 * f64::EPSILON * scale;
    let d0 = trace[0];
    let fit_end = trace.iter().rposition(|&d| d > floor).unwrap_or(0);

    let (alpha_hat, k_hat) = match fit_end {
        0 => (0.0, 1.0),
        1 => (trace[1] / d0, 1.0),
        _ => {
            let pts: Vec<(f64, f64)> = (1..=fit_end)
                .filter(|&t| trace[t] > 0.0)
                .map(|t| (t as f64, libm::log(trace[t])))
                .collect();
            let k = pts.len() as f64;
            let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
            let slope = sxy / sxx;
            let intercept = ml - slope * mt;
            (libm::exp(slope), libm::exp(intercept) / d0)
        }
    };
    Ok(ContractionEstimate {
        alpha_hat,
        k_hat,
        distance_trace: trace,
        fit_end,
    })
}

/// `Δx_tᵀ P Δx_t` along the paired trajectories.
pub fn metric_distance_trace<M: Dynamics + ?Sized>(
    model: &M,
    us: &[Vector],
    a: &Vector,
    b: &Vector,
    p: &Mat,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let n = model.state_dim();
    if p.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "metric",
            expected: n,
            found: p.nrows(),
        });
    }
    let (xa, xb) = paired_states(model, us, a, b, opts)?;
    Ok(xa
        .iter()
        .zip(&xb)
        .map(|(x, y)| {
            let d = x - y;
            d.dot(&(p * &d))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub restarts: usize,
    /// Iteration budget per restart.
    pub steps: usize,
    /// Per-entry RMS size of the perturbation, relative to the RMS of the
    /// base input (or absolute when the base input is zero).
    pub step_size: f64,
    pub seed: u64,
    pub grad_mode: GradMode,
    pub fd_step: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            steps: 500,
            step_size: 0.01,
            seed: 0,
            grad_mode: GradMode::AnalyticUnrolled,
            fd_step: 1e-6,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be > 0"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::invalid("fd_step must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackTraceRow {
    pub restart: usize,
    pub iteration: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub gamma_lb: f64,
    pub perturbation: Vec<Vector>,
    pub base_input: Vec<Vector>,
    pub x0: Vector,
    pub iterations: usize,
    pub trace: Vec<AttackTraceRow>,
}

/// `‖y(u + δ) − y(u)‖_T / ‖δ‖_T` from a shared initial state.
pub fn incremental_ratio<M: Dynamics + ?Sized>(
    model: &M,
    base: &[Vector],
    perturbation: &[Vector],
    x0: &Vector,
    opts: &SolverOptions,
) -> Result<f64> {
    expect_dim("perturbation length", base.len(), perturbation.len())?;
    let shifted: Vec<Vector> = base.iter().zip(perturbation).map(|(u, d)| u + d).collect();
    let ya = model.simulate(base, x0, opts)?.outputs;
    let yb = model.simulate(&shifted, x0, opts)?.outputs;
    let den: f64 = perturbation.iter().map(|d| d.norm_squared()).sum();
    if den < DEGENERATE * DEGENERATE {
        return Err(Error::DegenerateAttack);
    }
    Ok(libm::sqrt(simulation_error(&yb, &ya)? / den))
}

const DEGENERATE: f64 = 1e-12;

struct Search<'a> {
    kernel: RenKernel<'a>,
    base: &'a [Vector],
    base_y: Vec<Vector>,
    x0: &'a Vector,
    config: &'a AttackConfig,
}

impl Search<'_> {
    fn deviation(&self, delta: &[Vector]) -> Result<(f64, Vec<Vector>)> {
        let us: Vec<Vector> = self.base.iter().zip(delta).map(|(u, d)| u + d).collect();
        let tape = self.kernel.forward(self.x0, &us)?;
        let dy: Vec<Vector> = tape.ys.iter().zip(&self.base_y).map(|(a, b)| a - b).collect();
        let value = dy.iter().map(|d| d.norm_squared()).sum();
        let grad = match self.config.grad_mode {
            GradMode::AnalyticUnrolled => {
                let ybar: Vec<Vector> = dy.iter().map(|d| d * 2.0).collect();
                self.kernel.backward(&tape, &us, &ybar, false)?.inputs
            }
            GradMode::FiniteDifference => {
                let h = self.config.fd_step;
                let mut work = delta.to_vec();
                let mut grad: Vec<Vector> = delta.iter().map(|d| Vector::zeros(d.len())).collect();
                for t in 0..work.len() {
                    for i in 0..work[t].len() {
                        let orig = work[t][i];
                        work[t][i] = orig + h;
                        let plus = self.value(&work)?;
                        work[t][i] = orig - h;
                        let minus = self.value(&work)?;
                        work[t][i] = orig;
                        grad[t][i] = (plus - minus) / (2.0 * h);
                    }
                }
                grad
            }
        };
        Ok((value, grad))
    }

    fn value(&self, delta: &[Vector]) -> Result<f64> {
        let us: Vec<Vector> = self.base.iter().zip(delta).map(|(u, d)| u + d).collect();
        let tape = self.kernel.forward(self.x0, &us)?;
        Ok(tape.ys.iter().zip(&self.base_y).map(|(a, b)| (a - b).norm_squared()).sum())
    }
}

fn seq_norm(s: &[Vector]) -> f64 {
    libm::sqrt(s.iter().map(|v| v.norm_squared()).sum())
}

fn rescale(s: &mut [Vector], radius: f64) -> bool {
    let nrm = seq_norm(s);
    if !(nrm >= DEGENERATE) || !nrm.is_finite() {
        return false;
    }
    for v in s.iter_mut() {
        *v *= radius / nrm;
    }
    true
}

/// Best perturbation on the sphere `‖δ‖_T = radius`, and the number of
/// search iterations spent.
fn sphere_search<M: Dynamics + ?Sized>(
    model: &M,
    base: &[Vector],
    x0: &Vector,
    radius: f64,
    config: &AttackConfig,
    opts: &SolverOptions,
) -> Result<(Vec<Vector>, usize, Vec<AttackTraceRow>)> {
    config.validate()?;
    if base.is_empty() {
        return Err(Error::invalid("attack needs a nonempty base input"));
    }
    expect_dim("initial state", model.state_dim(), x0.len())?;
    for u in base {
        expect_dim("input", model.input_dim(), u.len())?;
    }
    let ren = model.to_ren();
    let kernel = RenKernel::new(&ren, *opts)?;
    let base_y = kernel.forward(x0, base)?.ys;
    let search = Search {
        kernel,
        base,
        base_y,
        x0,
        config,
    };
    let denom = radius * radius;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, Vec<Vector>)> = None;
    let mut iterations = 0;
    let mut trace = Vec::new();

    for restart in 0..config.restarts {
        let mut delta: Vec<Vector> = base
            .iter()
            .map(|u| Vector::from_fn(u.len(), |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        if !rescale(&mut delta, radius) {
            continue;
        }
        let (mut value, mut grad) = search.deviation(&delta)?;
        trace.push(AttackTraceRow {
            restart,
            iteration: 0,
            ratio: libm::sqrt(value / denom),
        });
        let mut eta = 0.5;
        for it in 1..=config.steps {
            iterations += 1;
            // tangential part of the gradient
            let radial: f64 = grad.iter().zip(&delta).map(|(g, d)| g.dot(d)).sum::<f64>() / denom;
            let mut dir: Vec<Vector> = grad.iter().zip(&delta).map(|(g, d)| g - d * radial).collect();
            if !rescale(&mut dir, radius) {
                break;
            }
            let mut accepted = false;
            while eta >= 1e-9 {
                let mut cand: Vec<Vector> = delta.iter().zip(&dir).map(|(d, g)| d + g * eta).collect();
                if !rescale(&mut cand, radius) {
                    eta *= 0.25;
                    continue;
                }
                let (v, g) = search.deviation(&cand)?;
                if v > value {
                    delta = cand;
                    value = v;
                    grad = g;
                    eta = (eta * 2.0).min(1e6);
                    accepted = true;
                    break;
                }
                eta *= 0.25;
            }
            trace.push(AttackTraceRow {
                restart,
                iteration: it,
                ratio: libm::sqrt(value / denom),
            });
            if !accepted {
                break;
            }
        }
        let ratio = incremental_ratio(model, base, &delta, x0, opts)?;
        if best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((ratio, delta));
        }
    }
    let (_, delta) = best.ok_or(Error::DegenerateAttack)?;
    Ok((delta, iterations, trace))
}

fn input_rms(base: &[Vector]) -> f64 {
    let count: usize = base.iter().map(|u| u.len()).sum();
    if count == 0 {
        return 0.0;
    }
    libm::sqrt(base.iter().map(|u| u.norm_squared()).sum::<f64>() / count as f64)
}

/// Local search for a large `‖Δy‖_T / ‖Δu‖_T` around `base`, both runs
/// starting from `x0`. The returned ratio is attained by the returned
/// perturbation, so it is a valid lower bound on the incremental gain.
pub fn lipschitz_lower_bound<M: Dynamics + ?Sized>(
    model: &M,
    base: &[Vector],
    x0: &Vector,
    config: &AttackConfig,
    opts: &SolverOptions,
) -> Result<AttackResult> {
    let scale = match input_rms(base) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let count: usize = base.iter().map(|u| u.len()).sum();
    let radius = config.step_size * scale * libm::sqrt(count as f64);
    let (delta, iterations, trace) = sphere_search(model, base, x0, radius, config, opts)?;
    let gamma_lb = incremental_ratio(model, base, &delta, x0, opts)?;
    Ok(AttackResult {
        gamma_lb,
        perturbation: delta,
        base_input: base.to_vec(),
        x0: x0.clone(),
        iterations,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationResult {
    pub budget: f64,
    /// `‖Δy‖_T` attained by `perturbation`.
    pub deviation: f64,
    pub perturbation: Vec<Vector>,
}

/// Fixed-budget mode: largest output deviation found over perturbations with
/// `‖Δu‖_T = budget`.
pub fn worst_case_deviation<M: Dynamics + ?Sized>(
    model: &M,
    base: &[Vector],
    x0: &Vector,
    budget: f64,
    config: &AttackConfig,
    opts: &SolverOptions,
) -> Result<DeviationResult> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::invalid("budget must be > 0"));
    }
    let (delta, _, _) = sphere_search(model, base, x0, budget, config, opts)?;
    let deviation = incremental_ratio(model, base, &delta, x0, opts)? * seq_norm(&delta);
    Ok(DeviationResult {
        budget,
        deviation,
        perturbation: delta,
    })
}
