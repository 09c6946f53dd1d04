use std::io::Write;
use std::path::Path;

use contrax_core::probe::AttackTraceRow;
use contrax_core::simfit::TraceRow;
use contrax_core::Vector;

use crate::error::{IoError, Result};

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    match serde_json::Number::from_f64(x) {
        Some(n) => n.to_string(),
        None => x.to_string(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

/// `iteration,loss,nrmse,penalty`; an undefined NRMSE is left empty.
pub fn write_loss_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "loss", "nrmse", "penalty"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            format_f64(r.loss),
            r.nrmse.map(format_f64).unwrap_or_default(),
            format_f64(r.penalty),
        ])?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_attack_trace(path: &Path, trace: &[AttackTraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["restart", "iteration", "ratio"])?;
    for r in trace {
        w.write_record([r.restart.to_string(), r.iteration.to_string(), format_f64(r.ratio)])?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// `t,y_1..y_p`.
pub fn write_predictions<W: Write>(out: W, ys: &[Vector]) -> Result<()> {
    let p = ys.first().map_or(0, |y| y.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for (t, y) in ys.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(y.iter().map(|&v| format_f64(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IoError::parse(e.to_string()))
}
