//! Observation/action datasets and their CSV representation.
//!
//! File layout: a header row `o_0,...,o_{d_o-1},a_0,...,a_{d_a-1}` optionally
//! followed by `behavior` and `start_id` columns, then one record per row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{ImcError, Result};

/// Label value for "no behavior assigned".
pub const UNLABELED: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub behavior_labels: Option<Vec<i64>>,
    pub start_ids: Option<Vec<i64>>,
    /// Declared behavior count `B`; labels must lie in `[-1, B)`.
    pub n_behaviors: Option<usize>,
}

/// Column layout expected when reading a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub has_behavior: bool,
    pub has_start_id: bool,
    pub n_behaviors: Option<usize>,
}

impl DatasetSchema {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        DatasetSchema {
            obs_dim,
            act_dim,
            has_behavior: false,
            has_start_id: false,
            n_behaviors: None,
        }
    }

    pub fn with_behavior(mut self, n_behaviors: Option<usize>) -> Self {
        self.has_behavior = true;
        self.n_behaviors = n_behaviors;
        self
    }

    pub fn with_start_id(mut self) -> Self {
        self.has_start_id = true;
        self
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.obs_dim).map(|i| format!("o_{i}")).collect();
        h.extend((0..self.act_dim).map(|i| format!("a_{i}")));
        if self.has_behavior {
            h.push("behavior".into());
        }
        if self.has_start_id {
            h.push("start_id".into());
        }
        h
    }

    /// Reads the column layout from a header row.
    pub fn from_header<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut obs_dim = 0;
        let mut act_dim = 0;
        let mut has_behavior = false;
        let mut has_start_id = false;
        for (i, name) in header.iter().enumerate() {
            let name = name.as_ref().trim();
            if name == format!("o_{obs_dim}") && act_dim == 0 && !has_behavior {
                obs_dim += 1;
            } else if name == format!("a_{act_dim}") && !has_behavior && !has_start_id {
                act_dim += 1;
            } else if name == "behavior" && !has_behavior && !has_start_id {
                has_behavior = true;
            } else if name == "start_id" && !has_start_id {
                has_start_id = true;
            } else {
                return Err(ImcError::InvalidData {
                    row: 0,
                    column: format!("{i} ({name})"),
                    reason: "unexpected header column".into(),
                });
            }
        }
        if obs_dim == 0 || act_dim == 0 {
            return Err(ImcError::InvalidInput(
                "header needs at least one o_ and one a_ column".into(),
            ));
        }
        Ok(DatasetSchema {
            obs_dim,
            act_dim,
            has_behavior,
            has_start_id,
            n_behaviors: None,
        })
    }
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>, actions: DMatrix<f64>) -> Result<Self> {
        let d = Dataset {
            observations,
            actions,
            behavior_labels: None,
            start_ids: None,
            n_behaviors: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_behaviors(mut self, labels: Vec<i64>, n_behaviors: usize) -> Result<Self> {
        self.behavior_labels = Some(labels);
        self.n_behaviors = Some(n_behaviors);
        self.validate()?;
        Ok(self)
    }

    pub fn with_start_ids(mut self, ids: Vec<i64>) -> Result<Self> {
        self.start_ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn act_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            obs_dim: self.obs_dim(),
            act_dim: self.act_dim(),
            has_behavior: self.behavior_labels.is_some(),
            has_start_id: self.start_ids.is_some(),
            n_behaviors: self.n_behaviors,
        }
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            observations: self.observations.select_rows(idx),
            actions: self.actions.select_rows(idx),
            behavior_labels: self
                .behavior_labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            start_ids: self
                .start_ids
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i]).collect()),
            n_behaviors: self.n_behaviors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.observations.nrows();
        if n == 0 {
            return Err(ImcError::InvalidInput("dataset has no rows".into()));
        }
        if self.actions.nrows() != n {
            return Err(ImcError::DimensionMismatch(format!(
                "{} observation rows vs {} action rows",
                n,
                self.actions.nrows()
            )));
        }
        if self.obs_dim() == 0 || self.act_dim() == 0 {
            return Err(ImcError::InvalidInput("empty observation or action width".into()));
        }
        for (name, m) in [("o", &self.observations), ("a", &self.actions)] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if !m[(r, c)].is_finite() {
                        return Err(ImcError::InvalidData {
                            row: r,
                            column: format!("{name}_{c}"),
                            reason: format!("non-finite value {}", m[(r, c)]),
                        });
                    }
                }
            }
        }
        if let Some(labels) = &self.behavior_labels {
            if labels.len() != n {
                return Err(ImcError::DimensionMismatch(format!(
                    "{} behavior labels for {} rows",
                    labels.len(),
                    n
                )));
            }
            for (r, &l) in labels.iter().enumerate() {
                let in_range = match self.n_behaviors {
                    Some(b) => l == UNLABELED || (l >= 0 && (l as usize) < b),
                    None => l >= UNLABELED,
                };
                if !in_range {
                    return Err(ImcError::InvalidData {
                        row: r,
                        column: "behavior".into(),
                        reason: format!("label {l} out of range"),
                    });
                }
            }
        }
        if let Some(ids) = &self.start_ids {
            if ids.len() != n {
                return Err(ImcError::DimensionMismatch(format!(
                    "{} start ids for {} rows",
                    ids.len(),
                    n
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let schema = self.schema();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(schema.header())?;
        let mut record: Vec<String> = Vec::with_capacity(schema.header().len());
        for n in 0..self.len() {
            record.clear();
            record.extend(self.observations.row(n).iter().map(|v| format!("{v:?}")));
            record.extend(self.actions.row(n).iter().map(|v| format!("{v:?}")));
            if let Some(l) = &self.behavior_labels {
                record.push(l[n].to_string());
            }
            if let Some(s) = &self.start_ids {
                record.push(s[n].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| ImcError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| ImcError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses a dataset, checking the header against `schema`.
    pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let expected = schema.header();
        if header != expected {
            return Err(ImcError::InvalidData {
                row: 0,
                column: "header".into(),
                reason: format!("expected {:?}, found {:?}", expected, header),
            });
        }
        let width = expected.len();
        let (d_o, d_a) = (schema.obs_dim, schema.act_dim);
        let mut obs = Vec::new();
        let mut act = Vec::new();
        let mut labels = Vec::new();
        let mut starts = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != width {
                return Err(ImcError::InvalidData {
                    row,
                    column: "*".into(),
                    reason: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            for (c, field) in rec.iter().enumerate().take(d_o + d_a) {
                let v: f64 = field.trim().parse().map_err(|_| ImcError::InvalidData {
                    row,
                    column: expected[c].clone(),
                    reason: format!("not a number: {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(ImcError::InvalidData {
                        row,
                        column: expected[c].clone(),
                        reason: format!("non-finite value {field}"),
                    });
                }
                if c < d_o {
                    obs.push(v);
                } else {
                    act.push(v);
                }
            }
            let mut c = d_o + d_a;
            let parse_int = |c: usize| -> Result<i64> {
                rec[c].trim().parse().map_err(|_| ImcError::InvalidData {
                    row,
                    column: expected[c].clone(),
                    reason: format!("not an integer: {:?}", &rec[c]),
                })
            };
            if schema.has_behavior {
                labels.push(parse_int(c)?);
                c += 1;
            }
            if schema.has_start_id {
                starts.push(parse_int(c)?);
            }
        }
        let n = obs.len() / d_o;
        if n == 0 {
            return Err(ImcError::InvalidInput("dataset file has no records".into()));
        }
        let ds = Dataset {
            observations: DMatrix::from_row_slice(n, d_o, &obs),
            actions: DMatrix::from_row_slice(n, d_a, &act),
            behavior_labels: schema.has_behavior.then_some(labels),
            start_ids: schema.has_start_id.then_some(starts),
            n_behaviors: schema.n_behaviors,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ImcError::io(path, e))?;
    Dataset::read_csv(std::io::BufReader::new(file), schema)
}

/// Loads a dataset taking the column layout from the file's own header.
pub fn load_dataset_auto(path: impl AsRef<Path>, n_behaviors: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ImcError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(std::io::BufReader::new(file));
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut schema = DatasetSchema::from_header(&header)?;
    schema.n_behaviors = n_behaviors;
    load_dataset(path, &schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_ROWS: &str = "o_0,o_1,a_0\n0.1,0.2,1.0\n0.3,0.4,2.0\n0.5,0.6,3.0\n";

    #[test]
    fn parses_three_rows() {
        let ds = Dataset::read_csv(THREE_ROWS.as_bytes(), &DatasetSchema::new(2, 1)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.obs_dim(), 2);
        assert_eq!(ds.act_dim(), 1);
        assert_eq!(ds.observations[(2, 1)], 0.6);
        assert_eq!(ds.actions[(1, 0)], 2.0);
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let text = "o_0,o_1,a_0\n0.1,0.2,1.0\n0.3,NaN,2.0\n";
        match Dataset::read_csv(text.as_bytes(), &DatasetSchema::new(2, 1)) {
            Err(ImcError::InvalidData { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "o_1");
            }
            other => panic!("expected invalid data, got {other:?}"),
        }
    }

    #[test]
    fn ragged_and_non_numeric_rows_fail() {
        let ragged = "o_0,a_0\n1.0,2.0\n1.0\n";
        assert!(matches!(
            Dataset::read_csv(ragged.as_bytes(), &DatasetSchema::new(1, 1)),
            Err(ImcError::InvalidData { row: 1, .. })
        ));
        let text = "o_0,a_0\n1.0,abc\n";
        assert!(matches!(
            Dataset::read_csv(text.as_bytes(), &DatasetSchema::new(1, 1)),
            Err(ImcError::InvalidData { row: 0, .. })
        ));
    }

    #[test]
    fn label_out_of_range_fails() {
        let text = "o_0,a_0,behavior\n1.0,2.0,0\n1.0,2.0,4\n";
        let schema = DatasetSchema::new(1, 1).with_behavior(Some(4));
        assert!(matches!(
            Dataset::read_csv(text.as_bytes(), &schema),
            Err(ImcError::InvalidData { row: 1, .. })
        ));
        let ok = "o_0,a_0,behavior\n1.0,2.0,-1\n1.0,2.0,3\n";
        assert!(Dataset::read_csv(ok.as_bytes(), &schema).is_ok());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset("/nonexistent/file.csv", &DatasetSchema::new(1, 1)).unwrap_err();
        assert!(matches!(err, ImcError::Io { .. }));
    }

    #[test]
    fn header_inference() {
        let s = DatasetSchema::from_header(&["o_0", "o_1", "a_0", "a_1", "behavior", "start_id"])
            .unwrap();
        assert_eq!((s.obs_dim, s.act_dim, s.has_behavior, s.has_start_id), (2, 2, true, true));
        assert!(DatasetSchema::from_header(&["a_0", "o_0"]).is_err());
        assert!(DatasetSchema::from_header(&["o_0", "x"]).is_err());
    }

    #[test]
    fn mismatched_rows_rejected() {
        let err = Dataset::new(DMatrix::zeros(3, 1), DMatrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, ImcError::DimensionMismatch(_)));
    }
}
