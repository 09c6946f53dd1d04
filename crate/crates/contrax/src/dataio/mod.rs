//! On-disk datasets and models, plus CSV reports.

mod model;
mod report;
mod synthetic;
mod timeseries;
mod weights;

pub use model::{
    load_model, model_from_json, model_to_json, run_checks, save_model, Certificate, CheckOutcome, Dims, MatrixRecord,
    Model, ModelFamily, ModelFile, ModelRecord, SCHEMA_VERSION,
};
pub use report::{format_f64, write_attack_trace, write_loss_trace, write_predictions};
pub use synthetic::{generate_synthetic, InputKind, Synthetic, SyntheticKind, SyntheticSpec};
pub use timeseries::{load_timeseries, parse_timeseries, save_timeseries, write_timeseries};
pub use weights::{load_weights, parse_weights, LayerRecord, WeightsFile};
