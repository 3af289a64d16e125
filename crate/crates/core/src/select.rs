//! Smoothing-parameter selection (cross-validated VAF and the training-path
//! delta rule) and component-count selection via scree spectra.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{standardize_columns, OrdinalDataMatrix};
use crate::error::{Error, Result};
use crate::linalg::{pca, vaf};
use crate::scaling::{als_fit, AlsConfig, PenaltyConfig, LAMBDA_FLOOR};
use crate::Scalar;

/// Default selection grid: a `lambda -> 0` proxy, 25 log-spaced points over
/// `[1e-3, 1e3]`, and a `lambda -> inf` proxy.
pub fn default_lambda_grid<S: Scalar>() -> Vec<S> {
    let mut grid = vec![S::cast(LAMBDA_FLOOR)];
    let count = 25;
    for i in 0..count {
        let exp = -3.0 + 6.0 * i as f64 / (count - 1) as f64;
        grid.push(S::cast(10f64.powf(exp)));
    }
    grid.push(S::cast(1e8));
    grid
}

/// K-fold cross-validation curve of the VAF over a `lambda` grid.
#[derive(Debug, Clone)]
pub struct CvResult<S> {
    /// Grid, ascending.
    pub lambda_grid: Vec<S>,
    /// `K x |grid|` validation VAF; failed cells hold NaN.
    pub fold_vaf: Array2<S>,
    /// Mean over the non-failed folds per grid point.
    pub mean_vaf: Vec<S>,
    /// Argmax of `mean_vaf`; ties resolved toward the larger `lambda`.
    pub best_lambda: S,
    pub k: usize,
    pub seed: u64,
    /// Flagged `(fold, grid index, message)` failures excluded from the mean.
    pub failures: Vec<(usize, usize, String)>,
}

/// Deterministic fold assignment: a seeded shuffle of the row indices dealt
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignments(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    assignment
}

/// Splits rows into the training complement and the validation fold.
pub(crate) fn split_rows(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (row, &f) in assignment.iter().enumerate() {
        if f == fold {
            validation.push(row);
        } else {
            train.push(row);
        }
    }
    (train, validation)
}

/// Fits on each training complement and scores the held-out fold: the
/// trained quantifications scale the validation rows, the scaled columns are
/// standardized within the fold, and the VAF of the first `m` components is
/// recorded as `M_k(lambda)`.
pub fn cross_validate<S: Scalar>(
    data: &OrdinalDataMatrix,
    penalty_template: &PenaltyConfig<S>,
    config: &AlsConfig<S>,
    grid: &[S],
    k: usize,
    seed: u64,
) -> Result<CvResult<S>> {
    if k < 2 {
        return Err(Error::validation("cross-validation needs at least 2 folds"));
    }
    let n = data.n();
    if n < 2 * k {
        return Err(Error::validation(format!(
            "n = {n} is too small for K = {k} folds (need n >= 2K so folds can be standardized)"
        )));
    }
    validate_grid(grid)?;

    let assignment = fold_assignments(n, k, seed);
    let tasks: Vec<(usize, usize)> = (0..k)
        .flat_map(|fold| (0..grid.len()).map(move |g| (fold, g)))
        .collect();

    let cells: Vec<((usize, usize), std::result::Result<S, String>)> = tasks
        .par_iter()
        .map(|&(fold, g)| {
            let value = evaluate_fold(data, penalty_template, config, grid[g], &assignment, fold);
            ((fold, g), value.map_err(|e| e.to_string()))
        })
        .collect();

    let mut fold_vaf = Array2::from_elem((k, grid.len()), S::nan());
    let mut failures = Vec::new();
    for ((fold, g), value) in cells {
        match value {
            Ok(v) => fold_vaf[(fold, g)] = v,
            Err(message) => failures.push((fold, g, message)),
        }
    }

    let mut mean_vaf = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let valid: Vec<S> = (0..k)
            .map(|fold| fold_vaf[(fold, g)])
            .filter(|v| !v.is_nan())
            .collect();
        if valid.is_empty() {
            mean_vaf.push(S::nan());
        } else {
            mean_vaf.push(valid.iter().copied().sum::<S>() / S::cast_usize(valid.len()));
        }
    }

    let mut best_lambda = None;
    let mut best_value = S::neg_infinity();
    for (g, &value) in mean_vaf.iter().enumerate() {
        if !value.is_nan() && value >= best_value {
            best_value = value;
            best_lambda = Some(grid[g]);
        }
    }
    let best_lambda = best_lambda
        .ok_or_else(|| Error::numerical("every fold failed on every grid point"))?;

    Ok(CvResult {
        lambda_grid: grid.to_vec(),
        fold_vaf,
        mean_vaf,
        best_lambda,
        k,
        seed,
        failures,
    })
}

fn evaluate_fold<S: Scalar>(
    data: &OrdinalDataMatrix,
    penalty_template: &PenaltyConfig<S>,
    config: &AlsConfig<S>,
    lambda: S,
    assignment: &[usize],
    fold: usize,
) -> Result<S> {
    let (train_rows, validation_rows) = split_rows(assignment, fold);
    let train = data.subset_rows(&train_rows)?;
    let penalty = penalty_template.with_lambda(lambda, train.level_counts())?;
    let fit = als_fit(&train, &penalty, config)?;

    let validation = ValidationView {
        data,
        rows: validation_rows,
    };
    let scaled = validation.apply(&fit.quantifications)?;
    let std = standardize_columns(&scaled)?;
    let sol = pca(&std, config.m)?;
    vaf(&sol, config.m)
}

/// Validation rows scored with training-side quantifications. The training
/// fit never sees these rows; they are materialized only here.
struct ValidationView<'a> {
    data: &'a OrdinalDataMatrix,
    rows: Vec<usize>,
}

impl ValidationView<'_> {
    fn apply<S: Scalar>(
        &self,
        thetas: &[crate::scaling::Quantification<S>],
    ) -> Result<Array2<S>> {
        let p = self.data.p();
        let mut out = Array2::zeros((self.rows.len(), p));
        for j in 0..p {
            let theta = &thetas[j].theta;
            if theta.len() != self.data.level_counts()[j] {
                return Err(Error::validation("quantification length mismatch"));
            }
            for (i, &row) in self.rows.iter().enumerate() {
                let level = self.data.values()[(row, j)] as usize;
                out[(i, j)] = theta[level - 1];
            }
        }
        Ok(out)
    }
}

/// Training VAF as a function of `lambda`, one full-data fit per grid point.
#[derive(Debug, Clone)]
pub struct VafPath<S> {
    pub lambda_grid: Vec<S>,
    /// Training VAF per grid point; NaN where the fit failed.
    pub train_vaf: Vec<S>,
    pub failures: Vec<(usize, String)>,
}

pub fn vaf_path<S: Scalar>(
    data: &OrdinalDataMatrix,
    penalty_template: &PenaltyConfig<S>,
    config: &AlsConfig<S>,
    grid: &[S],
) -> Result<VafPath<S>> {
    validate_grid(grid)?;
    let cells: Vec<(usize, std::result::Result<S, String>)> = grid
        .par_iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let value = penalty_template
                .with_lambda(lambda, data.level_counts())
                .and_then(|penalty| als_fit(data, &penalty, config))
                .map(|fit| fit.vaf_m);
            (g, value.map_err(|e| e.to_string()))
        })
        .collect();

    let mut train_vaf = vec![S::nan(); grid.len()];
    let mut failures = Vec::new();
    for (g, value) in cells {
        match value {
            Ok(v) => train_vaf[g] = v,
            Err(message) => failures.push((g, message)),
        }
    }
    Ok(VafPath {
        lambda_grid: grid.to_vec(),
        train_vaf,
        failures,
    })
}

/// Outcome of the delta rule on a training path.
#[derive(Debug, Clone)]
pub struct DeltaSelection<S> {
    /// Largest grid `lambda` whose VAF stays within `delta` of the
    /// `lambda -> 0` VAF.
    pub lambda0: S,
    pub delta: S,
    /// Set when no grid point satisfied the condition and the smallest grid
    /// `lambda` was returned instead.
    pub warning: Option<String>,
}

/// Picks the largest grid `lambda` with `VAF(0) - VAF(lambda) <= delta`,
/// taking the smallest grid point (the `lambda -> 0` proxy) as `VAF(0)`.
pub fn choose_lambda_delta<S: Scalar>(path: &VafPath<S>, delta: S) -> Result<DeltaSelection<S>> {
    if !(delta > S::zero()) {
        return Err(Error::validation("delta must be positive"));
    }
    if path.lambda_grid.is_empty() {
        return Err(Error::validation("path is empty"));
    }
    let base = path.train_vaf[0];
    // Rounding slack so that a drop of exactly delta still qualifies.
    let slop = (base.abs() + delta) * S::epsilon() * S::cast(16.0);
    let mut lambda0 = None;
    for g in 0..path.lambda_grid.len() {
        let v = path.train_vaf[g];
        if !v.is_nan() && base - v <= delta + slop {
            lambda0 = Some(path.lambda_grid[g]);
        }
    }
    match lambda0 {
        Some(lambda0) => Ok(DeltaSelection {
            lambda0,
            delta,
            warning: None,
        }),
        None => Ok(DeltaSelection {
            lambda0: path.lambda_grid[0],
            delta,
            warning: Some(
                "no grid point satisfied the delta condition; returning the smallest lambda"
                    .into(),
            ),
        }),
    }
}

/// One spectrum per requested model, plus the linear-PCA baseline.
#[derive(Debug, Clone)]
pub struct ScreeTable<S> {
    pub spectra: Vec<ScreeSpectrum<S>>,
}

#[derive(Debug, Clone)]
pub struct ScreeSpectrum<S> {
    /// `None` marks the linear-PCA baseline on standardized labels.
    pub model: Option<(usize, S)>,
    pub eigenvalues: Vec<S>,
}

/// Refits at each `(m, lambda)` pair and emits the full eigenvalue sequence,
/// with linear PCA on the standardized labels as the first row. Elbow
/// reading is left to whoever plots the table.
pub fn scree_table<S: Scalar>(
    data: &OrdinalDataMatrix,
    settings: &[(usize, S)],
    penalty_template: &PenaltyConfig<S>,
    base_config: &AlsConfig<S>,
) -> Result<ScreeTable<S>> {
    let mut spectra = Vec::with_capacity(settings.len() + 1);
    let std = standardize_columns(&data.labels_as::<S>())?;
    let linear = pca(&std, 1)?;
    spectra.push(ScreeSpectrum {
        model: None,
        eigenvalues: linear.eigenvalues,
    });
    for &(m, lambda) in settings {
        let penalty = penalty_template.with_lambda(lambda, data.level_counts())?;
        let mut config = base_config.clone();
        config.m = m;
        let fit = als_fit(data, &penalty, &config)?;
        spectra.push(ScreeSpectrum {
            model: Some((m, lambda)),
            eigenvalues: fit.final_pca.eigenvalues,
        });
    }
    Ok(ScreeTable { spectra })
}

fn validate_grid<S: Scalar>(grid: &[S]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::validation(
                "lambda grid must be strictly ascending",
            ));
        }
    }
    if grid.iter().any(|l| !(*l >= S::zero()) || !l.is_finite()) {
        return Err(Error::validation("lambda grid entries must be finite and non-negative"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy_data(seed: u64, n: usize, p: usize, k: usize) -> OrdinalDataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let a = Array2::from_shape_fn((p, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let x = y.dot(&a.t())
            + Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let mut values = Array2::<u32>::zeros((n, p));
        for j in 0..p {
            let mut sorted: Vec<f64> = x.column(j).to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cuts: Vec<f64> = (1..k).map(|q| sorted[q * n / k]).collect();
            for i in 0..n {
                let level = 1 + cuts.iter().filter(|&&c| c < x[(i, j)]).count();
                values[(i, j)] = level as u32;
            }
        }
        OrdinalDataMatrix::new(
            values,
            vec![k; p],
            (1..=p).map(|j| format!("v{j}")).collect(),
            vec![0; p],
        )
        .unwrap()
    }

    #[test]
    fn fold_assignment_is_deterministic_and_balanced() {
        let a = fold_assignments(103, 5, 42);
        let b = fold_assignments(103, 5, 42);
        assert_eq!(a, b);
        let mut sizes = vec![0usize; 5];
        for &f in &a {
            sizes[f] += 1;
        }
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        assert!(max - min <= 1, "fold sizes {sizes:?}");
        let c = fold_assignments(103, 5, 43);
        assert_ne!(a, c, "different seeds should shuffle differently");
    }

    #[test]
    fn split_rows_partition_is_exact() {
        let assignment = fold_assignments(40, 4, 7);
        for fold in 0..4 {
            let (train, validation) = split_rows(&assignment, fold);
            assert_eq!(train.len() + validation.len(), 40);
            for &r in &validation {
                assert_eq!(assignment[r], fold);
            }
            for &r in &train {
                assert_ne!(assignment[r], fold);
            }
        }
    }

    #[test]
    fn training_subset_excludes_validation_rows_exactly() {
        let data = toy_data(11, 60, 4, 4);
        let assignment = fold_assignments(60, 3, 5);
        let (train_rows, validation_rows) = split_rows(&assignment, 0);
        let train = data.subset_rows(&train_rows).unwrap();
        assert_eq!(train.n(), train_rows.len());
        for (out, &src) in train_rows.iter().enumerate() {
            for j in 0..4 {
                assert_eq!(train.values()[(out, j)], data.values()[(src, j)]);
            }
        }
        // No validation row index appears in the training subset.
        for &v in &validation_rows {
            assert!(!train_rows.contains(&v));
        }
    }

    #[test]
    fn too_few_rows_per_fold_is_rejected() {
        let data = toy_data(3, 30, 4, 3);
        let penalty = PenaltyConfig::new(0.5, data.level_counts(), vec![false; 4]).unwrap();
        let config = AlsConfig::new(2);
        // K = n would leave single-row folds that cannot be standardized.
        let err = cross_validate(&data, &penalty, &config, &[0.5], 30, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = cross_validate(&data, &penalty, &config, &[0.5], 1, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn cross_validation_is_reproducible_and_mean_is_exact() {
        let data = toy_data(19, 80, 4, 4);
        let penalty = PenaltyConfig::new(0.5, data.level_counts(), vec![false; 4]).unwrap();
        let config = AlsConfig::new(1);
        let grid = [0.01, 1.0, 1e6];
        let a = cross_validate(&data, &penalty, &config, &grid, 4, 9).unwrap();
        let b = cross_validate(&data, &penalty, &config, &grid, 4, 9).unwrap();
        assert_eq!(a.fold_vaf, b.fold_vaf);
        assert!(a.failures.is_empty());
        for g in 0..grid.len() {
            let mean: f64 = (0..4).map(|f| a.fold_vaf[(f, g)]).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(a.mean_vaf[g], mean, epsilon = 1e-15);
        }
    }

    #[test]
    fn best_lambda_ties_break_toward_the_larger_value() {
        let path = VafPath {
            lambda_grid: vec![0.1, 1.0, 10.0],
            train_vaf: vec![0.5, 0.5, 0.4],
            failures: vec![],
        };
        // Mirror the argmax rule through a CvResult-like scan.
        let mut best = f64::NEG_INFINITY;
        let mut best_lambda = 0.0;
        for (g, &v) in path.train_vaf.iter().enumerate() {
            if v >= best {
                best = v;
                best_lambda = path.lambda_grid[g];
            }
        }
        assert_eq!(best_lambda, 1.0);
    }

    #[test]
    fn single_point_grid_at_the_linear_limit_matches_linear_pca() {
        let data = toy_data(23, 70, 4, 4);
        let penalty = PenaltyConfig::new(0.5, data.level_counts(), vec![false; 4]).unwrap();
        let config = AlsConfig::new(2);
        let path = vaf_path(&data, &penalty, &config, &[1e8]).unwrap();
        let std = standardize_columns(&data.labels_as::<f64>()).unwrap();
        let linear = pca(&std, 2).unwrap();
        let linear_vaf = vaf(&linear, 2).unwrap();
        assert_abs_diff_eq!(path.train_vaf[0], linear_vaf, epsilon = 1e-4);
    }

    #[test]
    fn vaf_path_is_non_increasing() {
        let data = toy_data(29, 90, 5, 4);
        let penalty = PenaltyConfig::new(0.5, data.level_counts(), vec![false; 5]).unwrap();
        let config = AlsConfig::new(2).with_epsilon(1e-9).with_max_iter(300);
        let grid = [LAMBDA_FLOOR, 1e-2, 1e-1, 1.0, 10.0, 1e3, 1e8];
        let path = vaf_path(&data, &penalty, &config, &grid).unwrap();
        assert!(path.failures.is_empty());
        for w in path.train_vaf.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "path increased: {w:?}");
        }
    }

    #[test]
    fn delta_rule_examples() {
        let path = VafPath {
            lambda_grid: vec![1e-8, 0.1, 1.0, 10.0],
            train_vaf: vec![0.50, 0.50, 0.499, 0.47],
            failures: vec![],
        };
        let sel = choose_lambda_delta(&path, 0.001).unwrap();
        assert_eq!(sel.lambda0, 1.0);
        assert!(sel.warning.is_none());

        // A vacuous delta selects the largest grid point.
        let sel = choose_lambda_delta(&path, 1.0).unwrap();
        assert_eq!(sel.lambda0, 10.0);

        assert!(choose_lambda_delta(&path, 0.0).is_err());

        // A one-point grid selects that point.
        let single = VafPath {
            lambda_grid: vec![0.5],
            train_vaf: vec![0.42],
            failures: vec![],
        };
        let sel = choose_lambda_delta(&single, 0.001).unwrap();
        assert_eq!(sel.lambda0, 0.5);
    }

    #[test]
    fn delta_rule_warns_when_nothing_qualifies() {
        // With a failed lambda -> 0 fit nothing can satisfy the condition;
        // the rule falls back to the smallest grid point with a warning.
        let path = VafPath {
            lambda_grid: vec![1e-8, 1.0],
            train_vaf: vec![f64::NAN, 0.4],
            failures: vec![(0, "fit failed".into())],
        };
        let sel = choose_lambda_delta(&path, 0.001).unwrap();
        assert_eq!(sel.lambda0, 1e-8);
        assert!(sel.warning.is_some());
    }

    #[test]
    fn scree_spectra_sum_to_p() {
        let data = toy_data(31, 80, 5, 4);
        let penalty = PenaltyConfig::new(0.5, data.level_counts(), vec![false; 5]).unwrap();
        let config = AlsConfig::new(2);
        let table = scree_table(&data, &[(1, 0.5), (2, 0.5)], &penalty, &config).unwrap();
        assert_eq!(table.spectra.len(), 3);
        assert!(table.spectra[0].model.is_none());
        for spectrum in &table.spectra {
            let total: f64 = spectrum.eigenvalues.iter().sum();
            assert_abs_diff_eq!(total, 5.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn identical_columns_give_a_single_spike_spectrum() {
        // Exactly rank-one structure: every variable repeats the same column.
        let base = toy_data(41, 60, 1, 4);
        let mut values = Array2::<u32>::zeros((60, 4));
        for j in 0..4 {
            values.column_mut(j).assign(&base.column(0));
        }
        let data = OrdinalDataMatrix::new(
            values,
            vec![4; 4],
            (1..=4).map(|j| format!("v{j}")).collect(),
            vec![0; 4],
        )
        .unwrap();
        let penalty =
            PenaltyConfig::<f64>::new(0.5, data.level_counts(), vec![false; 4]).unwrap();
        let config = AlsConfig::new(2);
        let table = scree_table(&data, &[(2, 0.5)], &penalty, &config).unwrap();
        for spectrum in &table.spectra {
            assert!((spectrum.eigenvalues[0] - 4.0).abs() < 1e-8);
            for &v in &spectrum.eigenvalues[1..] {
                assert!(v.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_two_data_shows_two_dominant_eigenvalues_for_all_m() {
        // Nearly noiseless rank-2 latent structure.
        let data = toy_data(37, 120, 6, 5);
        let penalty = PenaltyConfig::new(0.1, data.level_counts(), vec![false; 6]).unwrap();
        let config = AlsConfig::new(2);
        let table = scree_table(&data, &[(2, 0.1), (3, 0.1)], &penalty, &config).unwrap();
        for spectrum in table.spectra.iter().skip(1) {
            let e = &spectrum.eigenvalues;
            assert!(
                e[1] > e[2],
                "second eigenvalue should dominate the third: {e:?}"
            );
        }
    }

    #[test]
    fn default_grid_covers_both_limits() {
        let grid = default_lambda_grid::<f64>();
        assert_eq!(grid.len(), 27);
        assert_eq!(grid[0], LAMBDA_FLOOR);
        assert_eq!(*grid.last().unwrap(), 1e8);
        for w in grid.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
