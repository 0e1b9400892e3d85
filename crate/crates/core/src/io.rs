//! Text formats for waveforms and tabular results.
//!
//! Waveform CSV: header `t_ns,value`, one row per sample, LF line endings.
//! Waveform JSON: `{"t0": .., "sample_period": .., "samples": [..]}`.
//! Floats are written in Rust's shortest round-trip representation, so a
//! value read back is bit-identical to the value written.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::waveform::Waveform;

pub fn write_waveform_csv<W: Write>(w: &Waveform, out: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(["t_ns", "value"])?;
    for (t, v) in w.times().zip(w.samples()) {
        wr.write_record([t.to_string(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn waveform_csv_string(w: &Waveform) -> Result<String> {
    let mut buf = Vec::new();
    write_waveform_csv(w, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads a `t_ns,value` CSV. The time column must be uniformly spaced.
pub fn read_waveform_csv<R: Read>(input: R) -> Result<Waveform> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = rd.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "t_ns" {
        return Err(Error::Parse(format!("expected header `t_ns,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let t = parse_f64(&rec[0], row, "t_ns")?;
        let v = parse_f64(&rec[1], row, "value")?;
        times.push(t);
        values.push(v);
    }
    let (t0, ts) = uniform_grid(&times)?;
    Waveform::new(values, ts, t0)
}

pub fn write_waveform_json<W: Write>(w: &Waveform, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, w)?;
    Ok(())
}

pub fn read_waveform_json<R: Read>(input: R) -> Result<Waveform> {
    let w: Waveform = serde_json::from_reader(input)?;
    // re-validate invariants that serde bypasses
    Waveform::new(w.samples().to_vec(), w.sample_period(), w.t0())
}

pub(crate) fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("row {}: column `{col}`: cannot parse `{field}`: {e}", row + 1)))
}

/// Start and spacing of a uniform grid; rejects non-uniform spacing.
pub fn uniform_grid(times: &[f64]) -> Result<(f64, f64)> {
    match times.len() {
        0 => Err(Error::Parse("no samples".into())),
        1 => Ok((times[0], 1.0)),
        n => {
            let ts = (times[n - 1] - times[0]) / (n - 1) as f64;
            if !(ts > 0.0) {
                return Err(Error::Parse("time column must be increasing".into()));
            }
            for (i, &t) in times.iter().enumerate() {
                let expected = times[0] + i as f64 * ts;
                if (t - expected).abs() > 1e-6 * ts {
                    return Err(Error::Parse(format!("time column is not uniform at row {}", i + 1)));
                }
            }
            Ok((times[0], ts))
        }
    }
}

/// Writes rows of `(t, value, stderr)` with header `t_ns,value,stderr`.
/// Undefined entries are written as empty fields.
pub fn write_track_csv<W: Write>(rows: &[(f64, Option<f64>, Option<f64>)], out: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    wr.write_record(["t_ns", "value", "stderr"])?;
    for (t, v, e) in rows {
        wr.write_record([t.to_string(), opt(v), opt(e)])?;
    }
    wr.flush()?;
    Ok(())
}

/// `(time, eps_max, stderr)` rows of a peak-track CSV.
pub type TrackRow = (f64, Option<f64>, Option<f64>);

pub fn read_track_csv<R: Read>(input: R) -> Result<Vec<TrackRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let t = parse_f64(&rec[0], row, "t_ns")?;
        let v = if rec[1].is_empty() { None } else { Some(parse_f64(&rec[1], row, "value")?) };
        let e = if rec[2].is_empty() { None } else { Some(parse_f64(&rec[2], row, "stderr")?) };
        out.push((t, v, e));
    }
    Ok(out)
}

fn opt(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Matrix CSV: first row is `corner,<column axis...>`, then one row per
/// row-axis value followed by the row's entries.
pub fn write_matrix_csv<W: Write>(corner: &str, row_axis: &[f64], col_axis: &[f64], rows: &[Vec<f64>], out: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec![corner.to_string()];
    header.extend(col_axis.iter().map(|c| c.to_string()));
    wr.write_record(&header)?;
    for (r, row) in row_axis.iter().zip(rows) {
        let mut rec = vec![r.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub struct MatrixCsv {
    pub corner: String,
    pub row_axis: Vec<f64>,
    pub col_axis: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<MatrixCsv> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut records = rd.records();
    let header = records.next().ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let corner = header.get(0).unwrap_or_default().to_string();
    let col_axis = header.iter().skip(1).enumerate().map(|(i, f)| parse_f64(f, 0, &format!("axis[{i}]"))).collect::<Result<Vec<_>>>()?;
    let mut row_axis = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != col_axis.len() + 1 {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", r + 2, rec.len(), col_axis.len() + 1)));
        }
        row_axis.push(parse_f64(&rec[0], r + 1, "axis")?);
        rows.push(rec.iter().skip(1).map(|f| parse_f64(f, r + 1, "value")).collect::<Result<Vec<_>>>()?);
    }
    Ok(MatrixCsv { corner, row_axis, col_axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let w = Waveform::new(vec![0.0, 0.5, 1.0], 0.5, 1.0).unwrap();
        let s = waveform_csv_string(&w).unwrap();
        assert_eq!(s, "t_ns,value\n1,0\n1.5,0.5\n2,1\n");
    }

    #[test]
    fn rejects_nonuniform_csv() {
        let s = "t_ns,value\n0,1\n1,2\n3,3\n";
        assert!(read_waveform_csv(s.as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn waveform_formats_round_trip(samples in prop::collection::vec(-1e6f64..1e6, 2..40), ts in 0.01f64..10.0) {
            let w = Waveform::new(samples, ts, 0.0).unwrap();
            let mut json = Vec::new();
            write_waveform_json(&w, &mut json).unwrap();
            let back = read_waveform_json(json.as_slice()).unwrap();
            prop_assert_eq!(&back, &w);

            let csv = waveform_csv_string(&w).unwrap();
            let back = read_waveform_csv(csv.as_bytes()).unwrap();
            prop_assert_eq!(back.samples(), w.samples());
            prop_assert!((back.sample_period() - ts).abs() <= 1e-9 * ts);
        }
    }
}
