//! Ordinal data ingestion, indicator matrices, and column standardization.
//!
//! Levels are stored internally on the scale `1..=k_j`. Data declared on a
//! shifted scale (for instance `-4..=4`) is re-indexed at load time and the
//! offset recorded, so that `internal = raw + offset`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scaling::Quantification;
use crate::Scalar;

/// An `n x p` matrix of integer category levels plus per-variable metadata.
///
/// Invariants (enforced on construction): every entry of column `j` lies in
/// `1..=k_j`, every `k_j >= 2`, no column is constant, and `n > p`.
#[derive(Debug, Clone)]
pub struct OrdinalDataMatrix {
    values: Array2<u32>,
    level_counts: Vec<usize>,
    variable_names: Vec<String>,
    offsets: Vec<i64>,
}

impl OrdinalDataMatrix {
    /// Builds a validated data matrix. `offsets[j]` records how raw labels
    /// were shifted onto `1..=k_j` (zero when the data was already 1-based).
    pub fn new(
        values: Array2<u32>,
        level_counts: Vec<usize>,
        variable_names: Vec<String>,
        offsets: Vec<i64>,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if p == 0 || n == 0 {
            return Err(Error::validation("data matrix is empty"));
        }
        if level_counts.len() != p || variable_names.len() != p || offsets.len() != p {
            return Err(Error::validation(
                "level_counts, variable_names and offsets must all have length p",
            ));
        }
        if n <= p {
            return Err(Error::validation(format!(
                "need more observations than variables (n = {n}, p = {p})"
            )));
        }
        for (j, &k) in level_counts.iter().enumerate() {
            if k < 2 {
                return Err(Error::validation(format!(
                    "variable '{}' has fewer than two levels (k = {k})",
                    variable_names[j]
                )));
            }
            let column = values.column(j);
            for (i, &v) in column.iter().enumerate() {
                if v < 1 || v as usize > k {
                    return Err(Error::validation(format!(
                        "variable '{}', row {}: level {} outside 1..={}",
                        variable_names[j],
                        i + 1,
                        v,
                        k
                    )));
                }
            }
            let first = column[0];
            if column.iter().all(|&v| v == first) {
                return Err(Error::validation(format!(
                    "variable '{}' is constant and cannot be standardized",
                    variable_names[j]
                )));
            }
        }
        Ok(Self {
            values,
            level_counts,
            variable_names,
            offsets,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<u32> {
        &self.values
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, u32> {
        self.values.column(j)
    }

    pub fn level_counts(&self) -> &[usize] {
        &self.level_counts
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    /// External (as-loaded) label for an internal level of variable `j`.
    pub fn external_label(&self, j: usize, level: usize) -> i64 {
        level as i64 - self.offsets[j]
    }

    /// True when some declared level of variable `j` never occurs in the data.
    pub fn has_unobserved_levels(&self, j: usize) -> bool {
        let mut seen = vec![false; self.level_counts[j]];
        for &v in self.values.column(j) {
            seen[v as usize - 1] = true;
        }
        seen.iter().any(|&s| !s)
    }

    /// Copies the rows at `rows` into a new data matrix with the same
    /// declared level universe and names.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Array2::zeros((rows.len(), self.p()));
        for (out, &r) in rows.iter().enumerate() {
            values.row_mut(out).assign(&self.values.row(r));
        }
        Self::new(
            values,
            self.level_counts.clone(),
            self.variable_names.clone(),
            self.offsets.clone(),
        )
    }

    /// The raw labels as reals, for initializing fits and the linear baseline.
    pub fn labels_as<S: Scalar>(&self) -> Array2<S> {
        self.values.mapv(|v| S::cast_usize(v as usize))
    }
}

/// Zero/one indicator expansion of one ordinal variable: entry `(i, l)` is 1
/// exactly when observation `i` takes level `l + 1`.
#[derive(Debug, Clone)]
pub struct IndicatorMatrix {
    levels: Vec<u32>,
    k: usize,
    variable_index: usize,
}

impl IndicatorMatrix {
    pub fn variable_index(&self) -> usize {
        self.variable_index
    }

    pub fn n(&self) -> usize {
        self.levels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Materializes the dense `n x k_j` zero/one matrix.
    pub fn entries(&self) -> Array2<u8> {
        let mut z = Array2::zeros((self.levels.len(), self.k));
        for (i, &l) in self.levels.iter().enumerate() {
            z[(i, l as usize - 1)] = 1;
        }
        z
    }

    /// Column sums: the observed frequency of each level.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &l in &self.levels {
            counts[l as usize - 1] += 1;
        }
        counts
    }

    /// `Z_j * theta`: looks up the score of each observation's level.
    pub fn apply<S: Scalar>(&self, theta: ArrayView1<'_, S>) -> Array1<S> {
        assert_eq!(theta.len(), self.k, "theta length must equal k_j");
        Array1::from_iter(self.levels.iter().map(|&l| theta[l as usize - 1]))
    }

    /// `Z_j^T * w`: per-level sums of an observation-indexed vector.
    pub fn weighted_sums<S: Scalar>(&self, w: ArrayView1<'_, S>) -> Array1<S> {
        assert_eq!(w.len(), self.levels.len(), "weight length must equal n");
        let mut sums = Array1::zeros(self.k);
        for (i, &l) in self.levels.iter().enumerate() {
            sums[l as usize - 1] += w[i];
        }
        sums
    }
}

/// Builds the indicator matrix of variable `j` (0-based). The matrix always
/// has `k_j` columns; columns of unobserved levels are all zero.
pub fn build_indicator(data: &OrdinalDataMatrix, j: usize) -> Result<IndicatorMatrix> {
    if j >= data.p() {
        return Err(Error::validation(format!(
            "variable index {j} out of range for p = {}",
            data.p()
        )));
    }
    Ok(IndicatorMatrix {
        levels: data.column(j).to_vec(),
        k: data.level_counts()[j],
        variable_index: j,
    })
}

/// A real matrix whose columns have mean zero and unit variance
/// (divisor `n - 1`), together with the removed means and scales.
#[derive(Debug, Clone)]
pub struct StandardizedMatrix<S> {
    pub values: Array2<S>,
    pub column_means: Vec<S>,
    pub column_sds: Vec<S>,
}

impl<S: Scalar> StandardizedMatrix<S> {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Wraps a matrix that is already standardized, verifying it.
    ///
    /// Used by the ALS loop, which standardizes each column exactly during
    /// the quantification step.
    pub fn from_standardized(values: Array2<S>) -> Result<Self> {
        let p = values.ncols();
        let n = values.nrows();
        let mean_tol = S::cast(1e-8).max(S::epsilon() * S::cast(100.0));
        let var_tol = S::cast(1e-6).max(S::epsilon() * S::cast(1000.0));
        for j in 0..p {
            let col = values.column(j);
            let mean = col.sum() / S::cast_usize(n);
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>()
                / S::cast_usize(n - 1);
            if mean.abs() > mean_tol || (var - S::one()).abs() > var_tol {
                return Err(Error::numerical(format!(
                    "column {j} is not standardized (mean {mean}, variance {var})"
                )));
            }
        }
        Ok(Self {
            values,
            column_means: vec![S::zero(); p],
            column_sds: vec![S::one(); p],
        })
    }
}

/// Centers and scales every column to mean zero and unit variance with
/// divisor `n - 1`. Fails on constant columns.
pub fn standardize_columns<S: Scalar>(values: &Array2<S>) -> Result<StandardizedMatrix<S>> {
    let (n, p) = values.dim();
    if n < 2 {
        return Err(Error::validation(
            "standardization needs at least two rows",
        ));
    }
    let mut out = values.clone();
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for j in 0..p {
        let mut col = out.column_mut(j);
        let mean = col.sum() / S::cast_usize(n);
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>()
            / S::cast_usize(n - 1);
        let sd = var.sqrt();
        if !sd.is_finite() || sd <= S::cast(1e-12) {
            return Err(Error::validation(format!(
                "column {j} is constant and cannot be standardized"
            )));
        }
        col.mapv_inplace(|v| (v - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }
    Ok(StandardizedMatrix {
        values: out,
        column_means: means,
        column_sds: sds,
    })
}

/// Applies per-variable level scores to the raw data: entry `(i, j)` becomes
/// `theta_j[x_ij]`. No standardization is performed here.
pub fn apply_scaling<S: Scalar>(
    data: &OrdinalDataMatrix,
    thetas: &[Quantification<S>],
) -> Result<Array2<S>> {
    if thetas.len() != data.p() {
        return Err(Error::validation(format!(
            "expected {} quantifications, got {}",
            data.p(),
            thetas.len()
        )));
    }
    for (j, q) in thetas.iter().enumerate() {
        if q.theta.len() != data.level_counts()[j] {
            return Err(Error::validation(format!(
                "quantification for variable '{}' has length {}, expected k = {}",
                data.variable_names()[j],
                q.theta.len(),
                data.level_counts()[j]
            )));
        }
    }
    let mut out = Array2::zeros((data.n(), data.p()));
    for j in 0..data.p() {
        let theta = &thetas[j].theta;
        for (i, &v) in data.column(j).iter().enumerate() {
            out[(i, j)] = theta[v as usize - 1];
        }
    }
    Ok(out)
}

/// Reads an ordinal CSV file.
///
/// Layout: an optional header row of variable names (controlled by `header`),
/// then optional schema rows whose first cell starts with `levels:` or
/// `offset:`, then integer data rows. A `levels:` row declares `k_j` per
/// variable (otherwise the observed maximum is used); an `offset:` row shifts
/// raw labels so that `internal = raw + offset` lands on `1..=k_j`.
pub fn load_ordinal_csv(path: impl AsRef<Path>, header: bool) -> Result<OrdinalDataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::validation(format!(
                "cannot open '{}'",
                path.as_ref().display()
            )),
            _ => Error::validation(e.to_string()),
        })?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::validation(e.to_string()))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::validation("CSV file contains no rows"));
    }
    let p = rows[0].len();
    for (idx, row) in rows.iter().enumerate() {
        if row.len() != p {
            return Err(Error::validation(format!(
                "row {} has {} cells, expected {}",
                idx + 1,
                row.len(),
                p
            )));
        }
    }

    let mut cursor = 0usize;
    let variable_names: Vec<String> = if header {
        let names = rows[cursor].clone();
        cursor += 1;
        names
    } else {
        (1..=p).map(|j| format!("v{j}")).collect()
    };

    let mut declared_levels: Option<Vec<usize>> = None;
    let mut offsets: Vec<i64> = vec![0; p];
    while cursor < rows.len() {
        let first = rows[cursor][0].as_str();
        if let Some(rest) = first.strip_prefix("levels:") {
            let row_no = cursor + 1;
            let mut levels = Vec::with_capacity(p);
            levels.push(parse_schema_cell(rest, row_no, 1)? as usize);
            for (c, cell) in rows[cursor][1..].iter().enumerate() {
                levels.push(parse_schema_cell(cell, row_no, c + 2)? as usize);
            }
            declared_levels = Some(levels);
            cursor += 1;
        } else if let Some(rest) = first.strip_prefix("offset:") {
            let row_no = cursor + 1;
            offsets[0] = parse_schema_cell(rest, row_no, 1)?;
            for (c, cell) in rows[cursor][1..].iter().enumerate() {
                offsets[c + 1] = parse_schema_cell(cell, row_no, c + 2)?;
            }
            cursor += 1;
        } else {
            break;
        }
    }

    let data_rows = &rows[cursor..];
    if data_rows.is_empty() {
        return Err(Error::validation("CSV file contains no data rows"));
    }
    let n = data_rows.len();
    let mut values = Array2::<u32>::zeros((n, p));
    for (i, row) in data_rows.iter().enumerate() {
        let file_row = cursor + i + 1;
        for (j, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    row: file_row,
                    column: j + 1,
                    message: "empty cell (missing values are not supported)".into(),
                });
            }
            let raw: i64 = cell.parse().map_err(|_| Error::Parse {
                row: file_row,
                column: j + 1,
                message: format!("'{cell}' is not an integer"),
            })?;
            let internal = raw + offsets[j];
            if internal < 1 || internal > u32::MAX as i64 {
                return Err(Error::validation(format!(
                    "variable '{}', row {}: level {} maps below 1 after offset {}",
                    variable_names[j], file_row, raw, offsets[j]
                )));
            }
            values[(i, j)] = internal as u32;
        }
    }

    let level_counts = match declared_levels {
        Some(levels) => levels,
        None => (0..p)
            .map(|j| values.column(j).iter().copied().max().unwrap_or(0) as usize)
            .collect(),
    };

    OrdinalDataMatrix::new(values, level_counts, variable_names, offsets)
}

fn parse_schema_cell(cell: &str, row: usize, column: usize) -> Result<i64> {
    cell.trim().parse().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("'{cell}' is not an integer schema entry"),
    })
}
