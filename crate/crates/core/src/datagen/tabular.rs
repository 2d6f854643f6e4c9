//! Local CSV ingestion, z-scoring and k-fold partitioning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dataset, Targets};
use crate::rng::StreamKey;

pub const MAX_ROWS: usize = 2000;
pub const MAX_FEATURES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvTarget {
    Regression,
    BinaryClassification,
}

/// Validated but unnormalized table. Binary targets are already mapped to
/// 0 (smaller label) and 1 (larger label).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kind: CsvTarget,
}

impl RawTable {
    pub fn rows(&self) -> usize {
        self.x.len()
    }

    pub fn features(&self) -> usize {
        self.header.len() - 1
    }

    /// Test folds paired with training folds, each normalized with statistics
    /// of its own training rows.
    pub fn kfold(&self, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
        let folds = kfold_indices(self.rows(), k, seed)?;
        folds
            .iter()
            .map(|test| {
                let train: Vec<usize> = (0..self.rows()).filter(|i| !test.contains(i)).collect();
                let norm = Normalizer::fit(self, &train);
                Ok((norm.apply(self, &train)?, norm.apply(self, test)?))
            })
            .collect()
    }
}

pub fn read_csv_table(path: &Path, kind: CsvTarget) -> Result<RawTable> {
    let err = |reason: String| Error::Csv { path: path.to_path_buf(), reason };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let header: Vec<String> = reader.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(err("need at least one feature and a target column".into()));
    }
    if header.len() - 1 > MAX_FEATURES {
        return Err(err(format!("{} features exceed the limit of {MAX_FEATURES}", header.len() - 1)));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        if x.len() == MAX_ROWS {
            return Err(err(format!("more than {MAX_ROWS} rows")));
        }
        let mut vals = Vec::with_capacity(header.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(format!("row {}, column `{}`: non-numeric cell `{cell}`", r + 1, header[c])))?;
            if !v.is_finite() {
                return Err(err(format!("row {}, column `{}`: missing or non-finite value", r + 1, header[c])));
            }
            vals.push(v);
        }
        y.push(vals.pop().expect("at least two columns"));
        x.push(vals);
    }
    if x.is_empty() {
        return Err(err("no data rows".into()));
    }
    if kind == CsvTarget::BinaryClassification {
        let mut labels = y.clone();
        labels.sort_by(f64::total_cmp);
        labels.dedup();
        if labels.len() > 2 {
            return Err(err(format!("{} distinct target values for a binary task", labels.len())));
        }
        // a single observed label keeps its 0/1 meaning when it has one
        let positive = if labels.len() == 2 { labels[1] } else { 1.0 };
        for v in &mut y {
            *v = if *v == positive { 1.0 } else { 0.0 };
        }
    }
    Ok(RawTable { header, x, y, kind })
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // constant columns are only centered
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, sd)
}

impl Normalizer {
    pub fn fit(table: &RawTable, rows: &[usize]) -> Self {
        let (x_mean, x_sd) = (0..table.features())
            .map(|j| mean_sd(rows.iter().map(|&i| table.x[i][j])))
            .unzip();
        let (y_mean, y_sd) = match table.kind {
            CsvTarget::Regression => mean_sd(rows.iter().map(|&i| table.y[i])),
            CsvTarget::BinaryClassification => (0.0, 1.0),
        };
        Self { x_mean, x_sd, y_mean, y_sd }
    }

    pub fn apply(&self, table: &RawTable, rows: &[usize]) -> Result<Dataset> {
        let d = table.features();
        let mut x = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            x.extend((0..d).map(|j| (table.x[i][j] - self.x_mean[j]) / self.x_sd[j]));
        }
        let y = match table.kind {
            CsvTarget::Regression => {
                Targets::Real(rows.iter().map(|&i| (table.y[i] - self.y_mean) / self.y_sd).collect())
            }
            CsvTarget::BinaryClassification => Targets::Class(rows.iter().map(|&i| table.y[i] as usize).collect()),
        };
        Dataset::new(rows.len(), d, x, y, vec![true; rows.len()], vec![true; d])
    }
}

/// Reads, validates and z-scores a CSV file over all of its rows.
pub fn ingest_csv(path: &Path, kind: CsvTarget) -> Result<Dataset> {
    let table = read_csv_table(path, kind)?;
    let rows: Vec<usize> = (0..table.rows()).collect();
    Normalizer::fit(&table, &rows).apply(&table, &rows)
}

/// Shuffled partition of `0..n` into `k` test folds; the first `n % k` folds
/// hold one extra row.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidSpec(format!("cannot split {n} rows into {k} folds")));
    }
    let perm = StreamKey::root(seed).tag("kfold").rng().permutation(n);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(perm[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// `(train, test)` pairs over the active rows of an already-normalized dataset.
pub fn kfold_split(data: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let active: Vec<usize> = data.active_rows().collect();
    let folds = kfold_indices(active.len(), k, seed)?;
    Ok(folds
        .iter()
        .map(|test| {
            let mut in_test = vec![false; active.len()];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..active.len()).filter(|&i| !in_test[i]).map(|i| active[i]).collect();
            let test: Vec<usize> = test.iter().map(|&i| active[i]).collect();
            (data.select_rows(&train), data.select_rows(&test))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_row_zscore() {
        let f = write_csv("a,y\n0,1\n2,3\n");
        let ds = ingest_csv(f.path(), CsvTarget::Regression).unwrap();
        assert_eq!(ds.x, vec![-1.0, 1.0]);
        assert_eq!(ds.y, Targets::Real(vec![-1.0, 1.0]));
    }

    #[test]
    fn constant_column_centered() {
        let f = write_csv("a,b,y\n5,1,0\n5,2,1\n5,3,1\n");
        let ds = ingest_csv(f.path(), CsvTarget::BinaryClassification).unwrap();
        assert!((0..3).all(|i| ds.row(i)[0] == 0.0));
        assert_eq!(ds.y, Targets::Class(vec![0, 1, 1]));
    }

    #[test]
    fn rejections() {
        let nan = write_csv("a,y\n1,NaN\n2,1\n");
        assert!(matches!(ingest_csv(nan.path(), CsvTarget::Regression), Err(Error::Csv { .. })));
        let text = write_csv("a,y\nfoo,1\n");
        assert!(ingest_csv(text.path(), CsvTarget::Regression).is_err());
        let empty_cell = write_csv("a,y\n,1\n");
        assert!(ingest_csv(empty_cell.path(), CsvTarget::Regression).is_err());
        let three = write_csv("a,y\n1,0\n2,1\n3,2\n");
        assert!(ingest_csv(three.path(), CsvTarget::BinaryClassification).is_err());
        let wide = write_csv(&format!("{}\n{}\n", vec!["c"; 102].join(","), vec!["1"; 102].join(",")));
        assert!(ingest_csv(wide.path(), CsvTarget::Regression).is_err());
    }

    #[test]
    fn binary_labels_mapped() {
        let f = write_csv("a,y\n1,-1\n2,1\n3,-1\n");
        let ds = ingest_csv(f.path(), CsvTarget::BinaryClassification).unwrap();
        assert_eq!(ds.y, Targets::Class(vec![0, 1, 0]));
        let f = write_csv("a,y\n1,1\n2,1\n");
        let ds = ingest_csv(f.path(), CsvTarget::BinaryClassification).unwrap();
        assert_eq!(ds.y, Targets::Class(vec![1, 1]));
    }

    #[test]
    fn fold_sizes() {
        let sizes = |n| kfold_indices(n, 5, 3).unwrap().iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(10), vec![2; 5]);
        assert_eq!(sizes(11), vec![3, 2, 2, 2, 2]);
        let mut all: Vec<usize> = kfold_indices(11, 5, 3).unwrap().concat();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(kfold_indices(11, 5, 3).unwrap(), kfold_indices(11, 5, 3).unwrap());
    }

    #[test]
    fn fold_normalization_uses_training_rows() {
        let f = write_csv("a,y\n0,0\n1,1\n2,2\n3,3\n4,4\n10,10\n");
        let table = read_csv_table(f.path(), CsvTarget::Regression).unwrap();
        for (train, _test) in table.kfold(3, 1).unwrap() {
            let xs: Vec<f64> = (0..train.n_max).map(|i| train.row(i)[0]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }
}
