use std::io::{Read, Write};
use std::path::Path;

use contrax_core::{TimeSeriesDataset, Vector};

use super::report::format_f64;
use crate::error::{IoError, Result};

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"t") {
        return Err(IoError::parse("header must start with column t"));
    }
    let m = cols[1..].iter().take_while(|c| c.starts_with("u_")).count();
    let p = cols.len() - 1 - m;
    for (i, c) in cols[1..=m].iter().enumerate() {
        if *c != format!("u_{}", i + 1) {
            return Err(IoError::parse(format!("header column {} should be u_{}, found {c}", i + 2, i + 1)));
        }
    }
    for (i, c) in cols[m + 1..].iter().enumerate() {
        if *c != format!("y_{}", i + 1) {
            return Err(IoError::parse(format!(
                "header column {} should be y_{}, found {c}",
                m + i + 2,
                i + 1
            )));
        }
    }
    if p == 0 {
        return Err(IoError::parse("header has no output columns y_1..y_p"));
    }
    Ok((m, p))
}

/// CSV with header `t,u_1..u_m,y_1..y_p` and rows `t = 0, 1, 2, …`.
pub fn parse_timeseries<R: Read>(input: R) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let (m, p) = parse_header(&header)?;
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        if rec.len() != 1 + m + p {
            return Err(IoError::parse(format!(
                "row {row}: expected {} cells, found {}",
                1 + m + p,
                rec.len()
            )));
        }
        let cell = |j: usize| -> Result<f64> {
            let text = rec[j].trim();
            if text.is_empty() {
                return Err(IoError::parse(format!("row {row}: missing value in column {}", &header[j])));
            }
            let v: f64 = text
                .parse()
                .map_err(|_| IoError::parse(format!("row {row}: cannot parse {text:?} in column {}", &header[j])))?;
            if !v.is_finite() {
                return Err(IoError::parse(format!("row {row}: non-finite value in column {}", &header[j])));
            }
            Ok(v)
        };
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| IoError::parse(format!("row {row}: t must be a nonnegative integer")))?;
        if t != k {
            return Err(IoError::parse(format!("row {row}: expected t = {k}, found {t}")));
        }
        u.push(Vector::from_iterator(m, (1..=m).map(&cell).collect::<Result<Vec<_>>>()?));
        y.push(Vector::from_iterator(p, (m + 1..=m + p).map(&cell).collect::<Result<Vec<_>>>()?));
    }
    if u.is_empty() {
        return Err(IoError::parse("no data rows"));
    }
    Ok(TimeSeriesDataset::new(u, y, None)?)
}

pub fn load_timeseries(path: &Path) -> Result<TimeSeriesDataset> {
    let file = std::fs::File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_timeseries(file)
}

pub fn write_timeseries<W: Write>(out: W, data: &TimeSeriesDataset) -> Result<()> {
    data.validate()?;
    let (m, p) = (data.input_dim(), data.output_dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend((1..=p).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for (t, (u, y)) in data.u.iter().zip(&data.y).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(u.iter().chain(y.iter()).map(|&v| format_f64(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IoError::parse(e.to_string()))
}

pub fn save_timeseries(data: &TimeSeriesDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    write_timeseries(file, data)
}
