//! The `contrax` command line. Exit codes: 0 success or feasible, 1
//! analysis-negative, 2 usage or input error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use contrax_core::lti::nonconvexity_demo;
use contrax_core::probe::{self, AttackConfig};
use contrax_core::simfit::{
    self, AdamCoefficients, Family, FitConfig, FittedModel, GradMode, LipschitzPenalty, Optimizer,
};
use contrax_core::{eqnet, Activation, Dynamics, Mat, ModelDims, SolverOptions, Vector};
use serde::Serialize;
use serde_json::json;

use crate::dataio::{
    self, load_model, load_timeseries, load_weights, run_checks, save_model, save_timeseries, Certificate, Model,
    ModelRecord, SyntheticKind, SyntheticSpec,
};
use crate::error::IoError;
use crate::manifest::{sha256_file, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "contrax", version, about = "Certified stable and Lipschitz-bounded dynamical models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Re-check the certificates of a model file.
    Verify(VerifyArgs),
    /// Fit a certified model to a time series by simulation error.
    Fit(FitArgs),
    /// Simulate a model on a dataset's inputs and report NRMSE.
    Simulate(SimulateArgs),
    /// Search for a large incremental gain around a dataset's inputs.
    Attack(AttackArgs),
    /// Convert feedforward weights to an equilibrium network.
    Convert(ConvertArgs),
    /// Print the spectral radii of the nonconvexity example.
    DemoNonconvexity(DemoArgs),
    /// Generate a synthetic identification dataset.
    Generate(GenerateArgs),
    /// Re-run the command recorded in a manifest and compare its artifacts.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    pub model: PathBuf,
    /// Also check the incremental gain bound at this value.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Defaults to the stored certificate margin, or 0.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    StableLti,
    ContractingRen,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adam,
    Gd,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradArg {
    Analytic,
    Fd,
}

impl From<GradArg> for GradMode {
    fn from(g: GradArg) -> Self {
        match g {
            GradArg::Analytic => GradMode::AnalyticUnrolled,
            GradArg::Fd => GradMode::FiniteDifference,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// `n` or `n,q`.
    #[arg(long)]
    pub dims: String,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub learning_rate: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = GradArg::Analytic)]
    pub grad: GradArg,
    #[arg(long, default_value_t = 1e-6)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value = "tanh")]
    pub activation: String,
    /// Start from `x0 = 0` instead of learning the initial state.
    #[arg(long)]
    pub zero_init: bool,
    #[arg(long)]
    pub penalty_gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub penalty_weight: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub penalty_margin: f64,
    /// Exit 1 unless the final NRMSE is at most this value.
    #[arg(long)]
    pub require: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GradArg::Analytic)]
    pub grad: GradArg,
    /// Fixed-budget mode: report the worst output deviation for
    /// perturbations of this size.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvertArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DemoArgs {
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    StableLti,
    LtiTanh,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputArg {
    WhiteNoise,
    Multisine,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = KindArg::StableLti)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value_t = 500)]
    pub horizon: usize,
    #[arg(long, value_enum, default_value_t = InputArg::WhiteNoise)]
    pub input: InputArg,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write the replayed artifacts here instead of the recorded location.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: msg.to_string(),
        }
    }

    fn negative(msg: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: msg.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Core(c) => c.into(),
            other => Failure::input(other),
        }
    }
}

impl From<contrax_core::Error> for Failure {
    fn from(e: contrax_core::Error) -> Self {
        use contrax_core::Error as E;
        match e {
            E::NotSquare { .. } | E::NonFinite(_) | E::DimensionMismatch { .. } | E::InvalidParameter(_) => {
                Failure::input(e)
            }
            _ => Failure::negative(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e)
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return e.exit_code();
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, argv, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cmd: Command, argv: Vec<String>, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Fit(a) => cmd_fit(&a, argv, out),
        Command::Simulate(a) => cmd_simulate(&a, argv, out),
        Command::Attack(a) => cmd_attack(&a, argv, out),
        Command::Convert(a) => cmd_convert(&a, argv, out),
        Command::DemoNonconvexity(a) => cmd_demo(&a, out),
        Command::Generate(a) => cmd_generate(&a, argv, out),
        Command::Replay(a) => cmd_replay(&a, out),
    }
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn finish_manifest(mut manifest: RunManifest, dir: &Path, artifacts: &[PathBuf]) -> Result<(), Failure> {
    for a in artifacts {
        manifest.record(a)?;
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(())
}

fn print_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<(), Failure> {
    writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json"))?;
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Failure::input(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> CmdResult {
    if let Some(g) = a.gamma {
        check_positive("--gamma", g)?;
    }
    if let Some(m) = a.margin {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Failure::input("--margin must be finite and >= 0"));
        }
    }
    let rec = load_model(&a.model)?;
    let margin = a.margin.or(rec.certificate.map(|c| c.margin)).unwrap_or(0.0);
    let gamma = a.gamma.or(rec.certificate.and_then(|c| c.gamma));
    let checks = run_checks(&rec.model, margin, gamma)?;
    let feasible = checks.iter().all(|c| c.feasible);
    if a.json {
        print_json(
            out,
            &json!({
                "model": a.model.display().to_string(),
                "family": rec.model.family().name(),
                "feasible": feasible,
                "checks": checks,
            }),
        )?;
    } else {
        for c in &checks {
            writeln!(out, "{c}")?;
        }
        writeln!(out, "result: {}", if feasible { "feasible" } else { "infeasible" })?;
    }
    Ok(if feasible { 0 } else { 1 })
}

fn parse_dims(text: &str, family: FamilyArg) -> Result<(usize, usize), Failure> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Failure::input(format!("--dims: cannot parse {s:?} as a count")))
    };
    let (n, q) = match parts.as_slice() {
        [n] => (num(n)?, 0),
        [n, q] => (num(n)?, num(q)?),
        _ => return Err(Failure::input("--dims expects `n` or `n,q`")),
    };
    if n == 0 {
        return Err(Failure::input("--dims: state dimension must be positive"));
    }
    if matches!(family, FamilyArg::StableLti) && q != 0 {
        return Err(Failure::input("--dims: stable-lti has no hidden units"));
    }
    Ok((n, q))
}

fn cmd_fit(a: &FitArgs, argv: Vec<String>, out: &mut dyn Write) -> CmdResult {
    let (n, q) = parse_dims(&a.dims, a.family)?;
    let act: Activation = a.activation.parse().map_err(Failure::input)?;
    let mut data = load_timeseries(&a.data)?;
    if a.zero_init {
        data.x0 = Some(Vector::zeros(n));
    }
    let family = match a.family {
        FamilyArg::StableLti => Family::StableLti,
        FamilyArg::ContractingRen => Family::ContractingRen,
    };
    let penalty = match a.penalty_gamma {
        Some(gamma) => {
            check_positive("--penalty-gamma", gamma)?;
            Some(LipschitzPenalty {
                gamma,
                weight: a.penalty_weight,
                margin: a.penalty_margin,
            })
        }
        None => None,
    };
    let config = FitConfig {
        learning_rate: a.learning_rate,
        iterations: a.iterations,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::AdamLike(AdamCoefficients::default()),
            OptimizerArg::Gd => Optimizer::GradientDescent,
        },
        grad_mode: a.grad.into(),
        fd_step: a.fd_step,
        seed: a.seed,
        solver: SolverOptions::default(),
        eps: a.eps,
        act,
        penalty,
    };
    let dims = ModelDims {
        n,
        m: data.input_dim(),
        p: data.output_dim(),
        q,
    };
    let res = simfit::fit(family, dims, &data, &config)?;
    let model = match &res.model {
        FittedModel::Lti(m) => Model::ImplicitLti(m.clone()),
        FittedModel::Ren(r) => Model::Ren(r.clone()),
    };
    let gamma = match penalty {
        Some(p) if run_checks(&model, 0.0, Some(p.gamma))?.iter().all(|c| c.feasible) => Some(p.gamma),
        _ => None,
    };
    let mut rec = ModelRecord::new(model);
    rec.certificate = Some(Certificate { margin: 0.0, gamma });
    rec.x0 = Some(res.x0.clone());
    rec.metadata.insert("source".into(), "fit".into());
    rec.metadata.insert("data".into(), a.data.display().to_string());

    prepare_dir(&a.out_dir)?;
    let model_path = a.out_dir.join("model.json");
    let loss_path = a.out_dir.join("loss.csv");
    save_model(&rec, &model_path)?;
    dataio::write_loss_trace(&loss_path, &res.trace)?;
    finish_manifest(
        RunManifest::new("fit", argv, config_json(a), Some(a.seed)),
        &a.out_dir,
        &[model_path.clone(), loss_path],
    )?;

    // Reported for the stored model, so `simulate` on the same data agrees exactly.
    let replayed = rec.model.simulate(&data.u, &res.x0, &config.solver)?;
    let final_nrmse = simfit::nrmse(&replayed.outputs, &data.y)?;
    print_json(
        out,
        &json!({
            "model": model_path.display().to_string(),
            "iterations": a.iterations,
            "final_loss": res.trace.last().map(|r| r.loss),
            "final_nrmse": final_nrmse,
            "certified_gamma": gamma,
        }),
    )?;
    if let Some(limit) = a.require {
        match final_nrmse {
            Some(v) if v <= limit => {}
            other => {
                return Err(Failure::negative(format!(
                    "final NRMSE {other:?} does not meet --require {limit}"
                )))
            }
        }
    }
    Ok(0)
}

fn load_pair(model: &Path, data: &Path) -> Result<(ModelRecord, contrax_core::TimeSeriesDataset), Failure> {
    let rec = load_model(model)?;
    let data = load_timeseries(data)?;
    if data.input_dim() != rec.model.input_dim() || data.output_dim() != rec.model.output_dim() {
        return Err(Failure::input(format!(
            "shape mismatch: model maps {} inputs to {} outputs, data has {} inputs and {} outputs",
            rec.model.input_dim(),
            rec.model.output_dim(),
            data.input_dim(),
            data.output_dim()
        )));
    }
    Ok((rec, data))
}

fn cmd_simulate(a: &SimulateArgs, argv: Vec<String>, out: &mut dyn Write) -> CmdResult {
    let (rec, data) = load_pair(&a.model, &a.data)?;
    let traj = rec.model.simulate(&data.u, &rec.initial_state(), &SolverOptions::default())?;
    let err = simfit::simulation_error(&traj.outputs, &data.y)?;
    let nrmse = simfit::nrmse(&traj.outputs, &data.y)?;
    let summary = json!({
        "horizon": data.len(),
        "simulation_error": err,
        "nrmse": nrmse,
        "nrmse_status": if nrmse.is_some() { "ok" } else { "undefined (0/0)" },
    });
    prepare_dir(&a.out_dir)?;
    let pred = a.out_dir.join("predictions.csv");
    let summary_path = a.out_dir.join("summary.json");
    let file = std::fs::File::create(&pred).map_err(|e| Failure::input(format!("{}: {e}", pred.display())))?;
    dataio::write_predictions(file, &traj.outputs)?;
    std::fs::write(&summary_path, format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")))?;
    finish_manifest(
        RunManifest::new("simulate", argv, config_json(a), None),
        &a.out_dir,
        &[pred, summary_path],
    )?;
    print_json(out, &summary)?;
    Ok(0)
}

fn seq_json(s: &[Vector]) -> serde_json::Value {
    json!(s.iter().map(|v| v.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn cmd_attack(a: &AttackArgs, argv: Vec<String>, out: &mut dyn Write) -> CmdResult {
    if a.restarts == 0 {
        return Err(Failure::input("--restarts must be at least 1"));
    }
    let (rec, data) = load_pair(&a.model, &a.data)?;
    let config = AttackConfig {
        restarts: a.restarts,
        steps: a.steps,
        step_size: a.step_size,
        seed: a.seed,
        grad_mode: a.grad.into(),
        ..AttackConfig::default()
    };
    config.validate()?;
    let opts = SolverOptions::default();
    let x0 = rec.initial_state();
    let certified = rec.certificate.and_then(|c| c.gamma);
    prepare_dir(&a.out_dir)?;
    let result_path = a.out_dir.join("attack.json");
    let mut artifacts = vec![result_path.clone()];
    let (summary, code) = match a.budget {
        Some(budget) => {
            check_positive("--budget", budget)?;
            let r = probe::worst_case_deviation(&rec.model, &data.u, &x0, budget, &config, &opts)?;
            let s = json!({
                "mode": "fixed_budget",
                "budget": r.budget,
                "deviation": r.deviation,
                "certified_gamma": certified,
                "perturbation": seq_json(&r.perturbation),
            });
            let violated = certified.is_some_and(|g| r.deviation > g * budget * (1.0 + 1e-6));
            (s, if violated { 1 } else { 0 })
        }
        None => {
            let r = probe::lipschitz_lower_bound(&rec.model, &data.u, &x0, &config, &opts)?;
            let trace_path = a.out_dir.join("attack_trace.csv");
            dataio::write_attack_trace(&trace_path, &r.trace)?;
            artifacts.push(trace_path);
            let violated = certified.is_some_and(|g| r.gamma_lb > g * (1.0 + 1e-6));
            let s = json!({
                "mode": "ratio",
                "gamma_lb": r.gamma_lb,
                "certified_gamma": certified,
                "iterations": r.iterations,
                "perturbation": seq_json(&r.perturbation),
                "base_input": seq_json(&r.base_input),
            });
            (s, if violated { 1 } else { 0 })
        }
    };
    std::fs::write(&result_path, format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")))?;
    finish_manifest(
        RunManifest::new("attack", argv, config_json(a), Some(a.seed)),
        &a.out_dir,
        &artifacts,
    )?;
    let mut brief = summary.clone();
    if let Some(obj) = brief.as_object_mut() {
        obj.remove("perturbation");
        obj.remove("base_input");
    }
    print_json(out, &brief)?;
    if code == 1 {
        return Err(Failure::negative("attack lower bound exceeds the certified gamma"));
    }
    Ok(0)
}

fn cmd_convert(a: &ConvertArgs, argv: Vec<String>, out: &mut dyn Write) -> CmdResult {
    let spec = load_weights(&a.weights)?;
    let net = eqnet::from_feedforward(&spec)?;
    let mut rec = ModelRecord::new(Model::Eqnet(net));
    rec.metadata.insert("source".into(), "feedforward".into());
    rec.metadata.insert("hidden_widths".into(), format!("{:?}", spec.hidden_widths()));
    prepare_dir(&a.out_dir)?;
    let path = a.out_dir.join("model.json");
    save_model(&rec, &path)?;
    finish_manifest(RunManifest::new("convert", argv, config_json(a), None), &a.out_dir, std::slice::from_ref(&path))?;
    print_json(out, &json!({ "model": path.display().to_string(), "hidden_dim": rec.model.hidden_dim() }))?;
    Ok(0)
}

fn mat_json(m: &Mat) -> serde_json::Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

/// Radii rounded to 12 decimals, so both output modes show the same values.
fn rounded(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn cmd_demo(a: &DemoArgs, out: &mut dyn Write) -> CmdResult {
    let r = nonconvexity_demo();
    let (rho_a, rho_b, rho_c) = (rounded(r.rho_a), rounded(r.rho_b), rounded(r.rho_c));
    if a.json {
        print_json(
            out,
            &json!({
                "rho_a": rho_a, "rho_b": rho_b, "rho_c": rho_c,
                "a_a": mat_json(&r.a_a), "a_b": mat_json(&r.a_b), "a_c": mat_json(&r.a_c),
            }),
        )?;
    } else {
        writeln!(out, "matrix  spectral_radius")?;
        for (name, rho) in [("A_a", rho_a), ("A_b", rho_b), ("A_c", rho_c)] {
            writeln!(out, "{name:<7} {rho}")?;
        }
    }
    Ok(0)
}

fn cmd_generate(a: &GenerateArgs, argv: Vec<String>, out: &mut dyn Write) -> CmdResult {
    let spec = SyntheticSpec {
        kind: match a.kind {
            KindArg::StableLti => SyntheticKind::StableLti,
            KindArg::LtiTanh => SyntheticKind::LtiPlusStaticNonlinearity,
        },
        n: a.n,
        m: a.m,
        p: a.p,
        horizon: a.horizon,
        input: match a.input {
            InputArg::WhiteNoise => dataio::InputKind::WhiteNoise,
            InputArg::Multisine => dataio::InputKind::Multisine,
        },
        noise_std: a.noise_std,
        seed: a.seed,
    };
    let syn = dataio::generate_synthetic(&spec)?;
    prepare_dir(&a.out_dir)?;
    let data_path = a.out_dir.join("data.csv");
    let system_path = a.out_dir.join("system.json");
    save_timeseries(&syn.dataset, &data_path)?;
    let mut rec = ModelRecord::new(Model::ImplicitLti(syn.system));
    rec.certificate = Some(Certificate {
        margin: 0.0,
        gamma: None,
    });
    rec.metadata.insert("source".into(), "generate".into());
    rec.metadata.insert(
        "output_nonlinearity".into(),
        if syn.output_tanh { "tanh" } else { "none" }.into(),
    );
    save_model(&rec, &system_path)?;
    finish_manifest(
        RunManifest::new("generate", argv, config_json(a), Some(a.seed)),
        &a.out_dir,
        &[data_path.clone(), system_path.clone()],
    )?;
    print_json(
        out,
        &json!({ "data": data_path.display().to_string(), "system": system_path.display().to_string() }),
    )?;
    Ok(0)
}

fn with_out_dir(cmd: &mut Command, dir: &Path) -> Result<(), Failure> {
    let slot = match cmd {
        Command::Fit(a) => &mut a.out_dir,
        Command::Simulate(a) => &mut a.out_dir,
        Command::Attack(a) => &mut a.out_dir,
        Command::Convert(a) => &mut a.out_dir,
        Command::Generate(a) => &mut a.out_dir,
        _ => return Err(Failure::input("manifest command has no output directory")),
    };
    *slot = dir.to_path_buf();
    Ok(())
}

fn out_dir_of(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Fit(a) => Some(&a.out_dir),
        Command::Simulate(a) => Some(&a.out_dir),
        Command::Attack(a) => Some(&a.out_dir),
        Command::Convert(a) => Some(&a.out_dir),
        Command::Generate(a) => Some(&a.out_dir),
        _ => None,
    }
}

fn cmd_replay(a: &ReplayArgs, out: &mut dyn Write) -> CmdResult {
    let manifest = RunManifest::load(&a.manifest)?;
    let mut full = vec!["contrax".to_string()];
    full.extend(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(&full).map_err(|e| Failure::input(format!("manifest argv: {e}")))?;
    let mut cmd = cli.command;
    if matches!(cmd, Command::Replay(_)) {
        return Err(Failure::input("manifest records a replay"));
    }
    let recorded_dir = out_dir_of(&cmd).map(Path::to_path_buf);
    if let Some(dir) = &a.out_dir {
        with_out_dir(&mut cmd, dir)?;
    }
    let mut sink = Vec::new();
    let code = execute(cmd, manifest.argv.clone(), &mut sink)?;
    let mut all_match = true;
    for (path, digest) in manifest.artifact_names() {
        let target = match (&a.out_dir, &recorded_dir) {
            (Some(new), Some(old)) => new.join(path.strip_prefix(old).unwrap_or(&path)),
            _ => path.clone(),
        };
        let now = sha256_file(&target)?;
        let same = now == digest;
        all_match &= same;
        writeln!(out, "{} {}", if same { "match" } else { "DIFFER" }, target.display())?;
    }
    if code != 0 {
        return Ok(code);
    }
    Ok(if all_match { 0 } else { 1 })
}
