//! Per-iteration metrics and their CSV form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the trajectory CSV.
pub const CSV_HEADER: &str = "t,gamma,dist_sq_to_ref,kl_to_ref,elbo_mc,elbo_se,grad_sq_norm,wall_ms";

/// Metrics recorded at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: u64,
    pub gamma: f64,
    pub dist_sq_to_ref: Option<f64>,
    pub kl_to_ref: Option<f64>,
    pub elbo_mc: Option<f64>,
    pub elbo_se: Option<f64>,
    pub grad_sq_norm: f64,
    pub wall_ms: f64,
}

impl RunRecord {
    /// Whether every present metric is finite.
    pub fn is_finite(&self) -> bool {
        let opt = |v: Option<f64>| v.map_or(true, f64::is_finite);
        self.gamma.is_finite()
            && self.grad_sq_norm.is_finite()
            && opt(self.dist_sq_to_ref)
            && opt(self.kl_to_ref)
            && opt(self.elbo_mc)
    }
}

/// Write records with the fixed header; missing values become empty fields.
pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> std::result::Result<Vec<RunRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(file, records).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<RunRecord> {
        vec![
            RunRecord {
                t: 0,
                gamma: 0.1,
                dist_sq_to_ref: Some(1.0 / 3.0),
                kl_to_ref: None,
                elbo_mc: Some(-1.234e-17),
                elbo_se: Some(5e-3),
                grad_sq_norm: 12.5,
                wall_ms: 0.0,
            },
            RunRecord {
                t: 1,
                gamma: 0.1,
                dist_sq_to_ref: None,
                kl_to_ref: Some(2.0f64.sqrt()),
                elbo_mc: None,
                elbo_se: None,
                grad_sq_norm: 1e300,
                wall_ms: 0.25,
            },
        ]
    }

    #[test]
    fn header_is_exact_and_missing_values_are_empty() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        lines.next();
        assert_eq!(lines.next().unwrap(), "1,0.1,,1.4142135623730951,,,1e300,0.25");
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        write_records_csv(&path, &sample()).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), sample());
    }

    #[test]
    fn empty_trajectory_has_only_header() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER);
    }

    #[test]
    fn finiteness() {
        let mut r = sample()[0].clone();
        assert!(r.is_finite());
        r.dist_sq_to_ref = Some(f64::NAN);
        assert!(!r.is_finite());
    }
}
