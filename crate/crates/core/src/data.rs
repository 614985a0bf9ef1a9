//! Dataset ingestion, persistence, and train/test splitting.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::constraints::ConstraintFamily;
use crate::error::{Error, Result};
use crate::posterior::ObsData;
use crate::rng::{domain, RngKey};

/// A rectangular numeric dataset with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Split rows into (constrained, unconstrained) blocks by column index.
    pub fn to_obs(&self, constrained: &[usize]) -> Result<ObsData> {
        for &c in constrained {
            if c >= self.dim() {
                return Err(Error::Config(format!(
                    "constrained index {} out of range for {} columns",
                    c,
                    self.dim()
                )));
            }
        }
        let mut xa = Vec::with_capacity(self.len());
        let mut xac = Vec::with_capacity(self.len());
        for row in &self.rows {
            let mut a = Vec::with_capacity(constrained.len());
            let mut ac = Vec::with_capacity(self.dim() - constrained.len());
            for (j, v) in row.iter().enumerate() {
                if constrained.contains(&j) {
                    a.push(*v);
                } else {
                    ac.push(*v);
                }
            }
            xa.push(a);
            xac.push(ac);
        }
        Ok(ObsData { xa, xac })
    }
}

/// Read a CSV with a header row and numeric cells, validating the
/// constrained columns against the family support. Support violations are
/// hard errors at ingestion, named by row and column.
pub fn ingest_csv(
    path: &Path,
    constrained: &[usize],
    family: Option<ConstraintFamily>,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {}", path.display(), e)))?;
    let columns: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if columns.is_empty() {
        return Err(Error::Data("no columns in header".into()));
    }
    for &c in constrained {
        if c >= columns.len() {
            return Err(Error::Data(format!(
                "constrained index {} out of range for {} columns",
                c,
                columns.len()
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != columns.len() {
            return Err(Error::Data(format!(
                "row {}: {} cells, expected {}",
                i + 1,
                record.len(),
                columns.len()
            )));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column '{}': cannot parse '{}' as a number",
                    i + 1,
                    columns[j],
                    cell
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {}, column '{}': non-finite value",
                    i + 1,
                    columns[j]
                )));
            }
            if constrained.contains(&j) {
                let ok = match family {
                    Some(ConstraintFamily::Lognormal) | Some(ConstraintFamily::Exponential) => {
                        v > 0.0
                    }
                    _ => true,
                };
                if !ok {
                    return Err(Error::Data(format!(
                        "row {}, column '{}': value {} outside the {:?} support",
                        i + 1,
                        columns[j],
                        v,
                        family.unwrap()
                    )));
                }
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(Dataset { columns, rows })
}

/// Write a dataset as CSV. Values use the shortest decimal encoding that
/// round-trips to the same f64, so write-then-ingest is bit exact.
pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(&dataset.columns)?;
    for row in &dataset.rows {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Disjoint uniformly random split into (train, test), deterministic in the
/// seed.
pub fn split_dataset(
    dataset: &Dataset,
    train_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if train_n + test_n > n {
        return Err(Error::Data(format!(
            "split {} + {} exceeds {} rows",
            train_n, test_n, n
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngKey::root(seed).child(domain::SPLIT).rng();
    idx.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>| -> Dataset {
        Dataset {
            columns: dataset.columns.clone(),
            rows: range.map(|i| dataset.rows[idx[i]].clone()).collect(),
        }
    };
    Ok((take(0..train_n), take(train_n..train_n + test_n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingests_a_simple_file() {
        let f = write_tmp("x1,x2\n1.5,2.0\n-0.25,3e-2\n");
        let d = ingest_csv(f.path(), &[0], Some(ConstraintFamily::Gaussian)).unwrap();
        assert_eq!(d.columns, vec!["x1", "x2"]);
        assert_eq!(d.rows, vec![vec![1.5, 2.0], vec![-0.25, 0.03]]);
    }

    #[test]
    fn names_row_and_column_on_parse_failure() {
        let f = write_tmp("a,b\n1.0,2.0\n1.0,oops\n");
        let err = ingest_csv(f.path(), &[0], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{}", msg);
        assert!(msg.contains("'b'"), "{}", msg);
    }

    #[test]
    fn rejects_out_of_support_constrained_values() {
        let f = write_tmp("t,m\n0.0,5.0\n");
        let err = ingest_csv(f.path(), &[0], Some(ConstraintFamily::Exponential)).unwrap_err();
        assert!(err.to_string().contains("support"), "{}", err);
        // The same value is fine for an unconstrained column.
        let f2 = write_tmp("t,m\n0.0,5.0\n");
        assert!(ingest_csv(f2.path(), &[1], Some(ConstraintFamily::Exponential)).is_ok());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = crate::rng::RngKey::root(77).rng();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                vec![
                    f64::from_bits(rng.gen::<u64>() >> 12 | 0x3ff0000000000000),
                    rng.gen::<f64>() * 1e-8,
                ]
            })
            .collect();
        let d = Dataset { columns: vec!["a".into(), "b".into()], rows };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), &d).unwrap();
        let back = ingest_csv(f.path(), &[], None).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn split_is_disjoint_deterministic_partition() {
        let d = Dataset {
            columns: vec!["a".into()],
            rows: (0..100).map(|i| vec![i as f64]).collect(),
        };
        let (tr1, te1) = split_dataset(&d, 70, 30, 5).unwrap();
        let (tr2, te2) = split_dataset(&d, 70, 30, 5).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        let mut all: Vec<i64> = tr1
            .rows
            .iter()
            .chain(te1.rows.iter())
            .map(|r| r[0] as i64)
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<i64>>());
        let (tr3, _) = split_dataset(&d, 70, 30, 6).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn split_overflow_is_an_error() {
        let d = Dataset { columns: vec!["a".into()], rows: vec![vec![0.0]; 10] };
        assert!(split_dataset(&d, 8, 3, 0).is_err());
    }

    #[test]
    fn to_obs_splits_blocks() {
        let d = Dataset {
            columns: vec!["a".into(), "b".into(), "c".into()],
            rows: vec![vec![1.0, 2.0, 3.0]],
        };
        let obs = d.to_obs(&[1]).unwrap();
        assert_eq!(obs.xa, vec![vec![2.0]]);
        assert_eq!(obs.xac, vec![vec![1.0, 3.0]]);
    }
}
