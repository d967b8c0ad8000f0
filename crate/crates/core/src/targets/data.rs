//! Design matrices and labels from CSV files, and seeded synthetic data sets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::regression::sigmoid;
use crate::error::{Error, Result};
use crate::rng::RngStream;

fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rows = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // an unparsable first line is a header
            Err(_) if n == 0 => continue,
            Err(e) => {
                return Err(Error::config(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Reads a design matrix: one row per feature, one column per data point.
/// A non-numeric first line is treated as a header.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let rows = read_numeric_rows(path)?;
    if rows.is_empty() {
        return Err(Error::config(format!("{}: no numeric rows", path.display())));
    }
    crate::linalg::matrix_from_rows(&rows, &path.display().to_string())
}

/// Reads a vector stored either as one row or as one column.
pub fn load_labels_csv(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let rows = read_numeric_rows(path)?;
    let values: Vec<f64> = if rows.len() == 1 {
        rows.into_iter().next().unwrap_or_default()
    } else if rows.iter().all(|r| r.len() == 1) {
        rows.into_iter().map(|r| r[0]).collect()
    } else {
        return Err(Error::config(format!(
            "{}: expected a single row or a single column",
            path.display()
        )));
    };
    Ok(DVector::from_vec(values))
}

/// Design and responses drawn from the model itself.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub design: DMatrix<f64>,
    pub responses: DVector<f64>,
    pub truth: DVector<f64>,
}

fn gaussian_design(stream: &RngStream, d: usize, n: usize, scale: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream.substream(0);
    let design = DMatrix::from_fn(d, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let truth = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (design, truth)
}

/// `a_n ~ N(0, scale² I)`, `z_true ~ N(0, I)`, `x_n = z_trueᵀ a_n + σ ε_n`.
pub fn synthetic_linear(seed: u64, d: usize, n: usize, scale: f64, sigma: f64) -> SyntheticData {
    let stream = RngStream::new(seed);
    let (design, truth) = gaussian_design(&stream, d, n, scale);
    let mut rng = stream.substream(1);
    let responses = DVector::from_fn(n, |j, _| {
        design.column(j).dot(&truth) + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    SyntheticData {
        design,
        responses,
        truth,
    }
}

/// `a_n ~ N(0, scale² I)`, `z_true ~ N(0, I)`, `P(x_n = +1) = σ(z_trueᵀ a_n)`.
pub fn synthetic_logistic(seed: u64, d: usize, n: usize, scale: f64) -> SyntheticData {
    let stream = RngStream::new(seed);
    let (design, truth) = gaussian_design(&stream, d, n, scale);
    let mut rng = stream.substream(1);
    let responses = DVector::from_fn(n, |j, _| {
        let p = sigmoid(design.column(j).dot(&truth));
        if rng.random::<f64>() < p {
            1.0
        } else {
            -1.0
        }
    });
    SyntheticData {
        design,
        responses,
        truth,
    }
}
