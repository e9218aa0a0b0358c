use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dsp::{FeatureConfig, LpsFeatures, Waveform};
use crate::error::{Error, Result};

/// Writes the log-power spectra of `w` as CSV, one row per frame.
pub fn export_spectrogram_matrix(w: &Waveform, cfg: &FeatureConfig, path: &Path) -> Result<LpsFeatures> {
    let (_, lps) = cfg.analyze(w)?;
    write_matrix_csv(&lps.data, lps.n_bins, path)?;
    Ok(lps)
}

/// Row-major matrix with `cols` columns, values in scientific notation with
/// a six-digit mantissa fraction.
pub fn write_matrix_csv(data: &[f64], cols: usize, path: &Path) -> Result<()> {
    if cols == 0 || data.len() % cols != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of {cols}", data.len())));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`]; returns `(rows, cols, data)`.
pub fn read_matrix_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let (mut rows, mut cols, mut data) = (0, 0, Vec::new());
    for (i, line) in text.lines().enumerate() {
        let values = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?;
        if rows == 0 {
            cols = values.len();
        } else if values.len() != cols {
            return Err(Error::Parse { line: i + 1, reason: format!("{} columns, expected {cols}", values.len()) });
        }
        data.extend(values);
        rows += 1;
    }
    Ok((rows, cols, data))
}
