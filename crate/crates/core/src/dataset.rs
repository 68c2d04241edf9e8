//! Score tables and the sample covariance the fit is compared against.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, SemError};
use crate::modelspec::ModelSpec;

/// Rows are evaluated models, columns are benchmarks. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub row_ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(
        row_ids: Vec<String>,
        columns: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(SemError::MalformedHeader(format!("duplicate column `{c}`")));
            }
        }
        let mut seen = HashSet::new();
        for r in &row_ids {
            if !seen.insert(r.as_str()) {
                return Err(SemError::DuplicateRow(r.clone()));
            }
        }
        if values.len() != row_ids.len() || values.iter().any(|r| r.len() != columns.len()) {
            return Err(SemError::Invalid("ragged score table".into()));
        }
        Ok(Self {
            row_ids,
            columns,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.values[row][col].is_none()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| SemError::MalformedHeader(e.to_string()))?
            .clone();
        match header.get(0) {
            Some("model") => {}
            Some(other) => {
                return Err(SemError::MalformedHeader(format!(
                    "first column must be `model`, found `{other}`"
                )))
            }
            None => return Err(SemError::MalformedHeader("empty header".into())),
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        if columns.iter().any(String::is_empty) {
            return Err(SemError::MalformedHeader("empty benchmark name".into()));
        }

        let mut row_ids = Vec::new();
        let mut values = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| SemError::MalformedHeader(e.to_string()))?;
            let id = record.get(0).unwrap_or("").to_string();
            let mut row = Vec::with_capacity(columns.len());
            for (j, name) in columns.iter().enumerate() {
                let cell = record.get(j + 1).unwrap_or("");
                if cell.is_empty() {
                    row.push(None);
                } else {
                    let v = cell
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| SemError::NonNumeric {
                            row: i + 1,
                            column: name.clone(),
                            value: cell.to_string(),
                        })?;
                    row.push(Some(v));
                }
            }
            row_ids.push(id);
            values.push(row);
        }
        Self::new(row_ids, columns, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let io_err = |e: csv::Error| SemError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(io_err)?;
        for (id, row) in self.row_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(
                row.iter()
                    .map(|v| v.map(|x| format!("{x:?}")).unwrap_or_default()),
            );
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| SemError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        })
    }
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SemError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ScoreTable::from_reader(file)
}

/// Sample covariance aligned to a model's observed variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CovInput {
    pub s: DMatrix<f64>,
    pub n: usize,
    pub columns: Vec<String>,
    /// Rows dropped by listwise deletion.
    pub deleted: usize,
    pub warnings: Vec<String>,
}

impl CovInput {
    /// Wraps a known covariance matrix. `s` is symmetrized from its upper triangle.
    pub fn from_covariance(s: DMatrix<f64>, n: usize, columns: Vec<String>) -> Result<Self> {
        if !s.is_square() || s.nrows() != columns.len() {
            return Err(SemError::Invalid(
                "covariance shape does not match column names".into(),
            ));
        }
        if n < 2 {
            return Err(SemError::InsufficientData { n });
        }
        let s = mirror_upper(s);
        Ok(Self {
            s,
            n,
            columns,
            deleted: 0,
            warnings: Vec::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }
}

fn mirror_upper(mut s: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..s.nrows() {
        for j in 0..i {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CovOptions {
    /// z-score each column before computing the covariance.
    pub standardize: bool,
}

/// Listwise-deletes incomplete rows and computes the n−1 covariance of the
/// model's observed columns in `spec.observed` order.
pub fn align_and_covariance(
    table: &ScoreTable,
    spec: &ModelSpec,
    options: CovOptions,
) -> Result<CovInput> {
    let idx: Vec<usize> = spec
        .observed
        .iter()
        .map(|name| {
            table
                .column_index(name)
                .ok_or_else(|| SemError::MissingColumn(name.clone()))
        })
        .collect::<Result<_>>()?;
    let p = idx.len();

    let rows: Vec<Vec<f64>> = table
        .values
        .iter()
        .filter_map(|row| idx.iter().map(|&j| row[j]).collect::<Option<Vec<f64>>>())
        .collect();
    let n = rows.len();
    let deleted = table.n_rows() - n;
    if n < 3 {
        return Err(SemError::InsufficientData { n });
    }
    let mut warnings = Vec::new();
    if deleted > 0 {
        warnings.push(format!(
            "listwise deletion removed {deleted} incomplete rows"
        ));
    }
    if n < p + 1 {
        warnings.push(format!(
            "only {n} complete rows for {p} observed variables; the sample covariance is singular"
        ));
    }

    let mut data = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let nf = n as f64;
    for j in 0..p {
        let mean = data.column(j).sum() / nf;
        data.column_mut(j).add_scalar_mut(-mean);
    }
    if options.standardize {
        for j in 0..p {
            let sd = (data.column(j).norm_squared() / (nf - 1.0)).sqrt();
            if sd > 0.0 {
                data.column_mut(j).scale_mut(1.0 / sd);
            }
        }
    }

    let mut s = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            s[(i, j)] = data.column(i).dot(&data.column(j)) / (nf - 1.0);
        }
    }
    let s = mirror_upper(s);
    for (j, name) in spec.observed.iter().enumerate() {
        if s[(j, j)] == 0.0 {
            warnings.push(format!("column `{name}` is constant (zero variance)"));
        }
    }

    Ok(CovInput {
        s,
        n,
        columns: spec.observed.clone(),
        deleted,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelspec::parse_model;

    fn table(csv: &str) -> Result<ScoreTable> {
        ScoreTable::from_reader(csv.as_bytes())
    }

    #[test]
    fn loads_shape() {
        let t = table("model,cnn_dm,squad\ngpt,0.1,0.2\nllama,0.3,0.4\nmistral,0.5,0.6\n").unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.n_cols(), 2);
        assert_eq!(t.values[2][1], Some(0.6));
    }

    #[test]
    fn empty_cell_is_missing() {
        let t = table("model,a,b\nm1,1.0,\nm2,2,3\n").unwrap();
        assert!(t.is_missing(0, 1));
        assert!(!t.is_missing(1, 1));
    }

    #[test]
    fn header_without_model_rejected() {
        assert!(matches!(
            table("name,a,b\nm1,1,2\n"),
            Err(SemError::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_numeric_and_duplicate_rows_rejected() {
        assert!(matches!(
            table("model,a\nm1,abc\n"),
            Err(SemError::NonNumeric { row: 1, .. })
        ));
        assert_eq!(
            table("model,a\nm1,1\nm1,2\n"),
            Err(SemError::DuplicateRow("m1".into()))
        );
    }

    #[test]
    fn hand_computed_covariance() {
        let t = table("model,x,y\na,1,2\nb,2,4\nc,3,6\n").unwrap();
        let spec = parse_model("F =~ x + y").unwrap();
        let cov = align_and_covariance(&t, &spec, CovOptions::default()).unwrap();
        assert_eq!(cov.n, 3);
        assert_eq!(cov.s, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn listwise_deletion_counts() {
        let t = table("model,x,y,z\na,1,2,\nb,2,,1\nc,3,6,1\nd,4,8,2\ne,5,9,3\n").unwrap();
        let spec = parse_model("F =~ x + y").unwrap();
        let cov = align_and_covariance(&t, &spec, CovOptions::default()).unwrap();
        // z is unused, so only row b is incomplete.
        assert_eq!(cov.n, 4);
        assert_eq!(cov.deleted, 1);
    }

    #[test]
    fn constant_column_warns() {
        let t = table("model,x,y\na,1,5\nb,2,5\nc,3,5\n").unwrap();
        let spec = parse_model("F =~ x + y").unwrap();
        let cov = align_and_covariance(&t, &spec, CovOptions::default()).unwrap();
        assert_eq!(cov.s[(1, 1)], 0.0);
        assert_eq!(cov.s[(0, 1)], 0.0);
        assert!(cov.warnings.iter().any(|w| w.contains("`y` is constant")));
    }

    #[test]
    fn missing_benchmark_named() {
        let t = table("model,hhh,scala\na,1,2\nb,2,3\nc,4,4\n").unwrap();
        let spec = parse_model("HHH_dan =~ danish_hhh + hhh").unwrap();
        let err = align_and_covariance(&t, &spec, CovOptions::default()).unwrap_err();
        assert_eq!(err, SemError::MissingColumn("danish_hhh".into()));
        assert!(err.to_string().contains("danish_hhh"));
    }

    #[test]
    fn too_few_rows() {
        let t = table("model,x,y\na,1,2\nb,,3\nc,2,5\n").unwrap();
        let spec = parse_model("F =~ x + y").unwrap();
        assert_eq!(
            align_and_covariance(&t, &spec, CovOptions::default()),
            Err(SemError::InsufficientData { n: 2 })
        );
    }

    #[test]
    fn standardized_diagonal_is_one() {
        let t = table("model,x,y,z\na,1,20,3\nb,2,41,1\nc,3.5,60,0\nd,7,85,4\n").unwrap();
        let spec = parse_model("F =~ x + y + z").unwrap();
        let cov = align_and_covariance(&t, &spec, CovOptions { standardize: true }).unwrap();
        for j in 0..3 {
            assert!((cov.s[(j, j)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = table("model,a,b\nm1,1.5,\nm2,-2,3e-3\n").unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(ScoreTable::from_reader(buf.as_slice()).unwrap(), t);
    }
}
