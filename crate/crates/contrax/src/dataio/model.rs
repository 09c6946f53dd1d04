use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use contrax_core::certkit::{is_positive_definite, spectral_radius, SymCheckReport};
use contrax_core::eqnet::{self, EquilibriumNetwork};
use contrax_core::lti::{self, check_stable_lmi, ExplicitLti, ImplicitLti};
use contrax_core::ren::{self, Ren};
use contrax_core::rnn::{self, RobustRnn};
use contrax_core::simfit::Trajectory;
use contrax_core::{Activation, Dynamics, Mat, SolverOptions, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, IoError, Result};

pub const SCHEMA_VERSION: &str = "1";

/// Dense matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_mat(m: &Mat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn from_vector(v: &Vector) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.iter().copied().collect(),
        }
    }

    pub fn to_mat(&self, name: &str) -> Result<Mat> {
        if self.data.len() != self.rows * self.cols {
            return Err(IoError::schema(format!(
                "matrix {name}: {}x{} needs {} entries, found {}",
                self.rows,
                self.cols,
                self.rows * self.cols,
                self.data.len()
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(IoError::schema(format!("matrix {name}: non-finite entry")));
        }
        Ok(Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    ExplicitLti,
    ImplicitLti,
    RobustRnn,
    Eqnet,
    Ren,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::ExplicitLti => "explicit_lti",
            ModelFamily::ImplicitLti => "implicit_lti",
            ModelFamily::RobustRnn => "robust_rnn",
            ModelFamily::Eqnet => "eqnet",
            ModelFamily::Ren => "ren",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

/// Stored certificate: the checks of the family hold at `margin`, and the
/// incremental gain bound holds at `gamma` when present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// On-disk layout. The metric `P` and multiplier `Lambda` are stored with
/// the other matrices since the implicit forms depend on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: String,
    pub family: ModelFamily,
    pub dims: Dims,
    pub activation: String,
    pub matrices: BTreeMap<String, MatrixRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificates: Option<Certificate>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// Optional Lyapunov matrix `P` for the check `P − AᵀPA ≻ 0`.
    ExplicitLti { lti: ExplicitLti, p: Option<Mat> },
    ImplicitLti(ImplicitLti),
    RobustRnn(RobustRnn),
    Eqnet(EquilibriumNetwork),
    Ren(Ren),
}

impl Model {
    pub fn family(&self) -> ModelFamily {
        match self {
            Model::ExplicitLti { .. } => ModelFamily::ExplicitLti,
            Model::ImplicitLti(_) => ModelFamily::ImplicitLti,
            Model::RobustRnn(_) => ModelFamily::RobustRnn,
            Model::Eqnet(_) => ModelFamily::Eqnet,
            Model::Ren(_) => ModelFamily::Ren,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Model::ExplicitLti { .. } | Model::ImplicitLti(_) => 0,
            Model::RobustRnn(m) => m.hidden_dim(),
            Model::Eqnet(m) => m.hidden_dim(),
            Model::Ren(m) => m.hidden_dim(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Model::ExplicitLti { .. } | Model::ImplicitLti(_) => Activation::Identity,
            Model::RobustRnn(m) => m.act,
            Model::Eqnet(m) => m.act,
            Model::Ren(m) => m.act,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.state_dim(),
            m: self.input_dim(),
            p: self.output_dim(),
            q: self.hidden_dim(),
        }
    }

    fn validate(&self) -> contrax_core::Result<()> {
        match self {
            Model::ExplicitLti { lti, .. } => lti.validate(),
            Model::ImplicitLti(m) => m.validate(),
            Model::RobustRnn(m) => m.validate(),
            Model::Eqnet(m) => m.validate(),
            Model::Ren(m) => m.validate(),
        }
    }

    fn set_gamma(&mut self, gamma: Option<f64>) {
        match self {
            Model::RobustRnn(m) => m.gamma = gamma,
            Model::Eqnet(m) => m.gamma = gamma,
            _ => {}
        }
    }
}

impl Dynamics for Model {
    fn state_dim(&self) -> usize {
        match self {
            Model::ExplicitLti { lti, .. } => lti.state_dim(),
            Model::ImplicitLti(m) => m.state_dim(),
            Model::RobustRnn(m) => m.state_dim(),
            Model::Eqnet(_) => 0,
            Model::Ren(m) => m.state_dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Model::ExplicitLti { lti, .. } => lti.b.ncols(),
            Model::ImplicitLti(m) => m.input_dim(),
            Model::RobustRnn(m) => m.input_dim(),
            Model::Eqnet(m) => m.input_dim(),
            Model::Ren(m) => m.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Model::ExplicitLti { lti, .. } => lti.c.nrows(),
            Model::ImplicitLti(m) => m.output_dim(),
            Model::RobustRnn(m) => m.output_dim(),
            Model::Eqnet(m) => m.output_dim(),
            Model::Ren(m) => m.output_dim(),
        }
    }

    fn step(&self, x: &Vector, u: &Vector, opts: &SolverOptions) -> contrax_core::Result<(Vector, Vector)> {
        match self {
            Model::ExplicitLti { lti, .. } => Dynamics::step(lti, x, u, opts),
            Model::ImplicitLti(m) => Dynamics::step(m, x, u, opts),
            Model::RobustRnn(m) => m.step(x, u, opts),
            Model::Eqnet(m) => m.step(x, u, opts),
            Model::Ren(m) => m.step(x, u, opts),
        }
    }

    fn to_ren(&self) -> Ren {
        match self {
            Model::ExplicitLti { lti, p } => {
                let mut r = Ren::from_explicit_lti(lti);
                if let Some(p) = p {
                    // E = P, F = PA keeps the embedding exact while carrying the metric
                    r.e = p.clone();
                    r.f = p * &lti.a;
                    r.b2 = p * &lti.b;
                    r.p = p.clone();
                }
                r
            }
            Model::ImplicitLti(m) => m.to_ren(),
            Model::RobustRnn(m) => m.to_ren(),
            Model::Eqnet(m) => m.to_ren(),
            Model::Ren(m) => m.clone(),
        }
    }

    fn simulate(&self, us: &[Vector], x0: &Vector, opts: &SolverOptions) -> contrax_core::Result<Trajectory> {
        match self {
            Model::Ren(m) => m.simulate(us, x0, opts),
            _ => {
                let mut states = vec![x0.clone()];
                let mut outputs = Vec::with_capacity(us.len());
                contrax_core::error::expect_dim("initial state", self.state_dim(), x0.len())?;
                for u in us {
                    contrax_core::error::expect_dim("input", self.input_dim(), u.len())?;
                    let (next, y) = self.step(states.last().expect("nonempty"), u, opts)?;
                    outputs.push(y);
                    states.push(next);
                }
                Ok(Trajectory { outputs, states })
            }
        }
    }
}

/// A model together with everything stored beside it in a file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model: Model,
    pub certificate: Option<Certificate>,
    /// Initial state used when simulating against data.
    pub x0: Option<Vector>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelRecord {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            certificate: None,
            x0: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn initial_state(&self) -> Vector {
        self.x0.clone().unwrap_or_else(|| Vector::zeros(self.model.state_dim()))
    }
}

/// Result of one named certificate check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub feasible: bool,
    pub min_eigenvalue: f64,
    pub margin: f64,
    pub dimension: usize,
}

impl CheckOutcome {
    fn from_report(name: &str, r: &SymCheckReport) -> Self {
        Self {
            name: name.to_string(),
            feasible: r.feasible,
            min_eigenvalue: r.min_eigenvalue,
            margin: r.margin_used,
            dimension: r.dimension,
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (min eigenvalue {:.6e}, margin {:.3e}, dim {})",
            self.name,
            if self.feasible { "feasible" } else { "infeasible" },
            self.min_eigenvalue,
            self.margin,
            self.dimension
        )
    }
}

/// Family-appropriate checks at `margin`, plus the gain bound at `gamma`.
pub fn run_checks(model: &Model, margin: f64, gamma: Option<f64>) -> contrax_core::Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    match model {
        Model::ExplicitLti { lti, p } => match p {
            Some(p) => {
                out.push(CheckOutcome::from_report(
                    "lyapunov",
                    &lti::check_lyapunov_explicit(&lti.a, p, margin)?,
                ));
            }
            None => {
                let rho = spectral_radius(&lti.a)?;
                let report = if rho < 1.0 {
                    let q = Mat::identity(lti.state_dim(), lti.state_dim());
                    lti::check_lyapunov_explicit(&lti.a, &lti::solve_discrete_lyapunov(&lti.a, &q)?, margin)?
                } else {
                    SymCheckReport {
                        feasible: false,
                        min_eigenvalue: 1.0 - rho,
                        margin_used: margin,
                        dimension: lti.state_dim(),
                    }
                };
                out.push(CheckOutcome::from_report("lyapunov_solved", &report));
            }
        },
        Model::ImplicitLti(m) => {
            out.push(CheckOutcome::from_report("stable_lmi", &check_stable_lmi(m, margin)?));
            out.push(CheckOutcome::from_report("metric", &is_positive_definite(&m.p, margin)?));
        }
        Model::RobustRnn(m) => {
            out.push(CheckOutcome::from_report(
                "contraction",
                &rnn::check_contraction_rnn(m, margin)?,
            ));
        }
        Model::Eqnet(m) => {
            out.push(CheckOutcome::from_report("well_posedness", &eqnet::check_wellposed(m, margin)?));
        }
        Model::Ren(m) => {
            out.push(CheckOutcome::from_report("contraction", &ren::check_contracting_ren(m, margin)?));
        }
    }
    if let Some(g) = gamma {
        let report = match model {
            Model::RobustRnn(m) => rnn::check_lipschitz_rnn(m, g, margin)?,
            Model::Eqnet(m) => eqnet::check_lipschitz_eqnet(m, g, margin)?,
            other => ren::check_lipschitz_ren(&other.to_ren(), g, margin)?,
        };
        out.push(CheckOutcome::from_report("lipschitz", &report));
    }
    Ok(out)
}

struct Fetch<'a> {
    family: ModelFamily,
    matrices: &'a BTreeMap<String, MatrixRecord>,
    used: BTreeSet<&'static str>,
}

impl Fetch<'_> {
    fn get(&mut self, name: &'static str, rows: usize, cols: usize) -> Result<Mat> {
        let rec = self
            .matrices
            .get(name)
            .ok_or_else(|| IoError::schema(format!("{} model requires matrix {name}", self.family.name())))?;
        self.used.insert(name);
        if (rec.rows, rec.cols) != (rows, cols) {
            return Err(IoError::schema(format!(
                "matrix {name}: declared dims need {rows}x{cols}, found {}x{}",
                rec.rows, rec.cols
            )));
        }
        rec.to_mat(name)
    }

    fn vec(&mut self, name: &'static str, len: usize) -> Result<Vector> {
        Ok(self.get(name, len, 1)?.column(0).into_owned())
    }

    fn optional(&mut self, name: &'static str, rows: usize, cols: usize) -> Result<Option<Mat>> {
        if self.matrices.contains_key(name) {
            self.get(name, rows, cols).map(Some)
        } else {
            Ok(None)
        }
    }

    fn finish(self) -> Result<()> {
        match self.matrices.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(extra) => Err(IoError::schema(format!(
                "unexpected matrix {extra} for {} model",
                self.family.name()
            ))),
            None => Ok(()),
        }
    }
}

fn model_from_file(file: &ModelFile) -> Result<ModelRecord> {
    if file.schema_version != SCHEMA_VERSION {
        return Err(IoError::schema(format!(
            "unsupported schema_version {:?} (expected {SCHEMA_VERSION:?})",
            file.schema_version
        )));
    }
    let act: Activation = file.activation.parse().map_err(|e: contrax_core::Error| IoError::schema(e.to_string()))?;
    let Dims { n, m, p, q } = file.dims;
    let family = file.family;
    let mut f = Fetch {
        family,
        matrices: &file.matrices,
        used: BTreeSet::new(),
    };
    let stateless = family == ModelFamily::Eqnet;
    let linear = matches!(family, ModelFamily::ExplicitLti | ModelFamily::ImplicitLti);
    if stateless && n != 0 {
        return Err(IoError::schema("eqnet models have no state (n must be 0)"));
    }
    if linear && q != 0 {
        return Err(IoError::schema("linear models have no hidden units (q must be 0)"));
    }
    let gamma = file.certificates.and_then(|c| c.gamma);
    let mut model = match family {
        ModelFamily::ExplicitLti => Model::ExplicitLti {
            lti: ExplicitLti {
                a: f.get("A", n, n)?,
                b: f.get("B", n, m)?,
                c: f.get("C", p, n)?,
                d: f.get("D", p, m)?,
            },
            p: f.optional("P", n, n)?,
        },
        ModelFamily::ImplicitLti => Model::ImplicitLti(ImplicitLti {
            e: f.get("E", n, n)?,
            f: f.get("F", n, n)?,
            k: f.get("K", n, m)?,
            c: f.get("C", p, n)?,
            d: f.get("D", p, m)?,
            p: f.get("P", n, n)?,
        }),
        ModelFamily::RobustRnn => Model::RobustRnn(RobustRnn {
            e: f.get("E", n, n)?,
            f: f.get("F", n, n)?,
            b1: f.get("B1", n, q)?,
            b2: f.get("B2", n, m)?,
            c_tilde: f.get("C_tilde", q, n)?,
            lambda: f.vec("Lambda", q)?,
            c2: f.get("C2", p, n)?,
            d12: f.get("D12", q, m)?,
            d21: f.get("D21", p, q)?,
            d22: f.get("D22", p, m)?,
            p: f.get("P", n, n)?,
            act,
            gamma,
        }),
        ModelFamily::Eqnet => Model::Eqnet(EquilibriumNetwork {
            d11: f.get("D11", q, q)?,
            d12: f.get("D12", q, m)?,
            d21: f.get("D21", p, q)?,
            b_w: f.vec("b_w", q)?,
            b_y: f.vec("b_y", p)?,
            lambda: f.vec("Lambda", q)?,
            act,
            gamma,
        }),
        ModelFamily::Ren => Model::Ren(Ren {
            e: f.get("E", n, n)?,
            f: f.get("F", n, n)?,
            b1: f.get("B1", n, q)?,
            b2: f.get("B2", n, m)?,
            c_tilde: f.get("C_tilde", q, n)?,
            d11_tilde: f.get("D11_tilde", q, q)?,
            d12: f.get("D12", q, m)?,
            c2: f.get("C2", p, n)?,
            d21: f.get("D21", p, q)?,
            d22: f.get("D22", p, m)?,
            lambda: f.vec("Lambda", q)?,
            p: f.get("P", n, n)?,
            b_x: f.vec("b_x", n)?,
            b_v: f.vec("b_v", q)?,
            b_y: f.vec("b_y", p)?,
            act,
        }),
    };
    let x0 = if stateless {
        None
    } else {
        f.optional("x0", n, 1)?.map(|m| m.column(0).into_owned())
    };
    f.finish()?;
    model.validate()?;
    model.set_gamma(gamma);

    if let Some(cert) = &file.certificates {
        if !(cert.margin >= 0.0 && cert.margin.is_finite()) {
            return Err(IoError::schema("certificate margin must be finite and >= 0"));
        }
        let checks = run_checks(&model, cert.margin, cert.gamma)?;
        if let Some(bad) = checks.iter().find(|c| !c.feasible) {
            return Err(IoError::Certificate(bad.to_string()));
        }
    }
    Ok(ModelRecord {
        model,
        certificate: file.certificates,
        x0,
        metadata: file.metadata.clone(),
    })
}

fn model_to_file(rec: &ModelRecord) -> ModelFile {
    let mut mats = BTreeMap::new();
    let mut put = |name: &str, m: &Mat| {
        mats.insert(name.to_string(), MatrixRecord::from_mat(m));
    };
    match &rec.model {
        Model::ExplicitLti { lti, p } => {
            put("A", &lti.a);
            put("B", &lti.b);
            put("C", &lti.c);
            put("D", &lti.d);
            if let Some(p) = p {
                put("P", p);
            }
        }
        Model::ImplicitLti(m) => {
            put("E", &m.e);
            put("F", &m.f);
            put("K", &m.k);
            put("C", &m.c);
            put("D", &m.d);
            put("P", &m.p);
        }
        Model::RobustRnn(m) => {
            put("E", &m.e);
            put("F", &m.f);
            put("B1", &m.b1);
            put("B2", &m.b2);
            put("C_tilde", &m.c_tilde);
            put("Lambda", &Mat::from_column_slice(m.lambda.len(), 1, m.lambda.as_slice()));
            put("C2", &m.c2);
            put("D12", &m.d12);
            put("D21", &m.d21);
            put("D22", &m.d22);
            put("P", &m.p);
        }
        Model::Eqnet(m) => {
            put("D11", &m.d11);
            put("D12", &m.d12);
            put("D21", &m.d21);
            put("b_w", &Mat::from_column_slice(m.b_w.len(), 1, m.b_w.as_slice()));
            put("b_y", &Mat::from_column_slice(m.b_y.len(), 1, m.b_y.as_slice()));
            put("Lambda", &Mat::from_column_slice(m.lambda.len(), 1, m.lambda.as_slice()));
        }
        Model::Ren(m) => {
            put("E", &m.e);
            put("F", &m.f);
            put("B1", &m.b1);
            put("B2", &m.b2);
            put("C_tilde", &m.c_tilde);
            put("D11_tilde", &m.d11_tilde);
            put("D12", &m.d12);
            put("C2", &m.c2);
            put("D21", &m.d21);
            put("D22", &m.d22);
            put("Lambda", &Mat::from_column_slice(m.lambda.len(), 1, m.lambda.as_slice()));
            put("P", &m.p);
            put("b_x", &Mat::from_column_slice(m.b_x.len(), 1, m.b_x.as_slice()));
            put("b_v", &Mat::from_column_slice(m.b_v.len(), 1, m.b_v.as_slice()));
            put("b_y", &Mat::from_column_slice(m.b_y.len(), 1, m.b_y.as_slice()));
        }
    }
    if let Some(x0) = &rec.x0 {
        mats.insert("x0".to_string(), MatrixRecord::from_vector(x0));
    }
    ModelFile {
        schema_version: SCHEMA_VERSION.to_string(),
        family: rec.model.family(),
        dims: rec.model.dims(),
        activation: rec.model.activation().name().to_string(),
        matrices: mats,
        certificates: rec.certificate,
        metadata: rec.metadata.clone(),
    }
}

/// Canonical text: fixed key order, shortest round-trip numbers, trailing
/// newline.
pub fn model_to_json(rec: &ModelRecord) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&model_to_file(rec))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<ModelRecord> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| IoError::schema(e.to_string()))?;
    model_from_file(&file)
}

pub fn save_model(rec: &ModelRecord, path: &Path) -> Result<()> {
    write_file(path, model_to_json(rec)?.as_bytes())
}

/// Loads and re-verifies any stored certificate.
pub fn load_model(path: &Path) -> Result<ModelRecord> {
    model_from_json(&read_file(path)?)
}
