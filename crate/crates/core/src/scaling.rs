//! The penalized optimal scaling machinery: difference matrices, the
//! second-order difference penalty, the per-variable quantification step,
//! and the alternating least squares loop.
//!
//! The fit alternates a PCA step (SVD of the current scaled matrix, pseudo
//! responses `U = Y A'`) with a quantification step that refits each
//! variable's level scores against its pseudo-response column under the
//! penalty `lambda_j * theta' Omega theta` and optional monotonicity
//! constraints. After each quantification the fitted column is re-centered
//! and re-scaled to exact unit variance, so every PCA runs on standardized
//! data.

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::{
    build_indicator, standardize_columns, IndicatorMatrix, OrdinalDataMatrix, StandardizedMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::{pca, pseudo_responses, vaf, PcaSolution};
use crate::qp::{solve as qp_solve, QpProblem};
use crate::Scalar;

/// Replacement for `lambda = 0` when a variable has unobserved declared
/// levels; keeps the quantification system non-singular while the penalty
/// interpolates scores for the missing levels.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Whether a score vector is kept as fitted or sign-flipped by [`orient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    AsFit,
    Flipped,
}

/// Level scores for one ordinal variable.
///
/// After a fit, the induced column `Z_j theta` has mean zero and unit
/// variance over the observed data, and monotone fits satisfy
/// `theta[l+1] >= theta[l]` up to numerical tolerance.
#[derive(Debug, Clone)]
pub struct Quantification<S> {
    pub theta: Array1<S>,
    pub variable_index: usize,
    pub monotone: bool,
    pub orientation: Orientation,
}

impl<S: Scalar> Quantification<S> {
    pub fn new(theta: Array1<S>, variable_index: usize) -> Self {
        Self {
            theta,
            variable_index,
            monotone: false,
            orientation: Orientation::AsFit,
        }
    }
}

/// Penalty configuration shared by a fit: the global `lambda`, the
/// per-variable weights `lambda_j = lambda * (k_j - 1)`, the monotonicity
/// mask, and the penalty matrices `Omega_j = D2' D2`.
#[derive(Debug, Clone)]
pub struct PenaltyConfig<S> {
    lambda: S,
    per_variable_lambda: Vec<S>,
    monotone_mask: Vec<bool>,
    omega: Vec<Array2<S>>,
}

impl<S: Scalar> PenaltyConfig<S> {
    pub fn new(lambda: S, level_counts: &[usize], monotone_mask: Vec<bool>) -> Result<Self> {
        if !(lambda >= S::zero()) || !lambda.is_finite() {
            return Err(Error::validation("lambda must be finite and non-negative"));
        }
        if monotone_mask.len() != level_counts.len() {
            return Err(Error::validation(
                "monotone mask length must equal the number of variables",
            ));
        }
        let per_variable_lambda = level_counts
            .iter()
            .map(|&k| lambda * S::cast_usize(k - 1))
            .collect();
        let omega = level_counts
            .iter()
            .map(|&k| second_diff_penalty(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lambda,
            per_variable_lambda,
            monotone_mask,
            omega,
        })
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn per_variable_lambda(&self) -> &[S] {
        &self.per_variable_lambda
    }

    pub fn monotone_mask(&self) -> &[bool] {
        &self.monotone_mask
    }

    pub fn omega(&self, j: usize) -> &Array2<S> {
        &self.omega[j]
    }

    /// Same mask and level universe, different `lambda`.
    pub fn with_lambda(&self, lambda: S, level_counts: &[usize]) -> Result<Self> {
        Self::new(lambda, level_counts, self.monotone_mask.clone())
    }
}

/// Iteration controls for the alternating fit.
#[derive(Debug, Clone)]
pub struct AlsConfig<S> {
    /// Components used while fitting the scaling functions.
    pub m: usize,
    /// Convergence threshold on the mean squared change of the scaled matrix.
    pub epsilon: S,
    pub max_iter: usize,
    /// Reserved for randomized restarts; the default initialization is
    /// deterministic and ignores it.
    pub seed: u64,
}

impl<S: Scalar> AlsConfig<S> {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            epsilon: S::cast(1e-7),
            max_iter: 100,
            seed: 0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: S) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::validation("m must be at least 1"));
        }
        if !(self.epsilon > S::zero()) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if self.max_iter < 1 {
            return Err(Error::validation("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Converged (or capped) result of [`als_fit`].
#[derive(Debug, Clone)]
pub struct FitResult<S> {
    pub quantifications: Vec<Quantification<S>>,
    /// The scaled, standardized data matrix `Phi` at the final iterate.
    pub scaled: StandardizedMatrix<S>,
    /// Final PCA of `scaled`, carrying all `p` eigenvalues.
    pub final_pca: PcaSolution<S>,
    /// VAF of the first `m` components of `final_pca`.
    pub vaf_m: S,
    pub iterations: usize,
    /// Mean squared change of `Phi` per full cycle.
    pub convergence_trace: Vec<S>,
    pub converged: bool,
}

/// First-order difference matrix: `(k-1) x k` rows encoding
/// `theta[l+1] - theta[l]`.
pub fn first_diff_matrix<S: Scalar>(k: usize) -> Result<Array2<S>> {
    if k < 2 {
        return Err(Error::validation("difference matrix needs k >= 2"));
    }
    let mut d = Array2::zeros((k - 1, k));
    for row in 0..k - 1 {
        d[(row, row)] = -S::one();
        d[(row, row + 1)] = S::one();
    }
    Ok(d)
}

/// Second-order difference penalty `Omega = D2' D2` (`k x k`), the zero
/// matrix for `k = 2`. Its quadratic form sums squared second differences,
/// so affine score vectors are unpenalized.
pub fn second_diff_penalty<S: Scalar>(k: usize) -> Result<Array2<S>> {
    if k < 2 {
        return Err(Error::validation("difference penalty needs k >= 2"));
    }
    if k == 2 {
        return Ok(Array2::zeros((2, 2)));
    }
    let mut d2 = Array2::zeros((k - 2, k));
    for row in 0..k - 2 {
        d2[(row, row)] = S::one();
        d2[(row, row + 1)] = -S::cast(2.0);
        d2[(row, row + 2)] = S::one();
    }
    Ok(d2.t().dot(&d2))
}

/// Raw penalized level scores: the minimizer of
/// `||u - Z theta||^2 + lambda_j * theta' Omega theta`, subject to
/// `D1 theta >= 0` when `monotone`. No standardization is applied, so at
/// `lambda_j = 0` without constraints this is exactly the vector of
/// per-level means of `u`.
pub fn penalized_level_scores<S: Scalar>(
    zj: &IndicatorMatrix,
    uj: ArrayView1<'_, S>,
    lambda_j: S,
    monotone: bool,
) -> Result<Array1<S>> {
    if uj.len() != zj.n() {
        return Err(Error::validation(
            "pseudo response length must equal the number of observations",
        ));
    }
    if !(lambda_j >= S::zero()) || !lambda_j.is_finite() {
        return Err(Error::validation("lambda_j must be finite and non-negative"));
    }
    let k = zj.k();
    let counts = zj.counts();
    if lambda_j == S::zero() && counts.iter().any(|&c| c == 0) {
        return Err(Error::numerical(format!(
            "variable {}: unobserved levels make the unpenalized system singular",
            zj.variable_index()
        )));
    }

    let mut g = second_diff_penalty::<S>(k)?;
    g.mapv_inplace(|v| v * lambda_j);
    for (l, &c) in counts.iter().enumerate() {
        g[(l, l)] += S::cast_usize(c);
    }
    let a = zj.weighted_sums(uj);

    let mut problem = QpProblem::new(g, a)?;
    if monotone {
        problem = problem.with_inequalities(first_diff_matrix(k)?, Array1::zeros(k - 1))?;
    }
    let solution = qp_solve(&problem)?;
    Ok(solution.x)
}

/// One quantification step: penalized fit of the level scores against the
/// pseudo responses, followed by exact re-standardization of the fitted
/// column (the affine rescaling is absorbed into `theta`). Non-monotone
/// scores keep the orientation of the previous iterate's column; monotone
/// scores are inherently oriented by the constraint.
pub fn quantification_step<S: Scalar>(
    zj: &IndicatorMatrix,
    uj: ArrayView1<'_, S>,
    lambda_j: S,
    phi_prev: ArrayView1<'_, S>,
    monotone: bool,
) -> Result<Quantification<S>> {
    let n = zj.n();
    if phi_prev.len() != n {
        return Err(Error::validation(
            "previous column length must equal the number of observations",
        ));
    }
    let mean_prev = phi_prev.sum() / S::cast_usize(n);
    let var_prev = phi_prev
        .iter()
        .map(|&v| (v - mean_prev) * (v - mean_prev))
        .sum::<S>()
        / S::cast_usize(n - 1);
    if mean_prev.abs() > S::cast(1e-6) || (var_prev - S::one()).abs() > S::cast(1e-4) {
        return Err(Error::validation(
            "previous column must be standardized (mean 0, variance 1)",
        ));
    }

    let standardize = |raw: Array1<S>| -> Option<Array1<S>> {
        let fitted = zj.apply(raw.view());
        let mean = fitted.sum() / S::cast_usize(n);
        let sd = (fitted
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<S>()
            / S::cast_usize(n - 1))
        .sqrt();
        if !sd.is_finite() || sd <= S::cast(1e-10) {
            None
        } else {
            Some(raw.mapv(|v| (v - mean) / sd))
        }
    };

    let raw = penalized_level_scores(zj, uj, lambda_j, monotone)?;
    let mut theta = match standardize(raw) {
        Some(theta) => theta,
        None => {
            // A variable the retained components do not represent gets a
            // (near-)zero pseudo response and a constant fit. Refit against
            // the previous column so its scores persist, smoothed, until a
            // later PCA step picks the variable up again.
            let raw = penalized_level_scores(zj, phi_prev, lambda_j, monotone)?;
            standardize(raw).ok_or_else(|| {
                Error::numerical(format!(
                    "variable {}: fitted scores are constant over the observed data",
                    zj.variable_index()
                ))
            })?
        }
    };
    if !monotone {
        let aligned = zj.apply(theta.view()).dot(&phi_prev);
        if aligned < S::zero() {
            theta.mapv_inplace(|v| -v);
        }
    }
    Ok(Quantification {
        theta,
        variable_index: zj.variable_index(),
        monotone,
        orientation: Orientation::AsFit,
    })
}

/// Penalized alternating least squares.
///
/// Initializes the scaled matrix with the standardized labels, then cycles
/// PCA and quantification steps until the mean squared change of the scaled
/// matrix drops below `config.epsilon` or `config.max_iter` is reached
/// (reported via `converged`, not an error). A final PCA on the converged
/// matrix supplies the full eigenvalue spectrum.
pub fn als_fit<S: Scalar>(
    data: &OrdinalDataMatrix,
    penalty: &PenaltyConfig<S>,
    config: &AlsConfig<S>,
) -> Result<FitResult<S>> {
    config.validate()?;
    let n = data.n();
    let p = data.p();
    if config.m > p {
        return Err(Error::validation(format!(
            "m = {} exceeds the number of variables p = {p}",
            config.m
        )));
    }
    if penalty.per_variable_lambda.len() != p {
        return Err(Error::validation(
            "penalty configuration does not match the data's variable count",
        ));
    }

    let indicators: Vec<IndicatorMatrix> = (0..p)
        .map(|j| build_indicator(data, j))
        .collect::<Result<_>>()?;

    // lambda = 0 with unobserved declared levels would make the per-variable
    // system singular; substitute the documented floor for those variables.
    let floor = S::cast(LAMBDA_FLOOR);
    let effective_lambda: Vec<S> = (0..p)
        .map(|j| {
            let k = data.level_counts()[j];
            if penalty.lambda == S::zero() && data.has_unobserved_levels(j) {
                floor * S::cast_usize(k - 1)
            } else {
                penalty.per_variable_lambda[j]
            }
        })
        .collect();

    let init = standardize_columns(&data.labels_as::<S>())?;
    let mut phi = init.values;
    let mut quantifications: Vec<Quantification<S>> = (0..p)
        .map(|j| {
            let k = data.level_counts()[j];
            let mean = init.column_means[j];
            let sd = init.column_sds[j];
            Quantification {
                theta: Array1::from_iter(
                    (1..=k).map(|l| (S::cast_usize(l) - mean) / sd),
                ),
                variable_index: j,
                monotone: penalty.monotone_mask[j],
                orientation: Orientation::AsFit,
            }
        })
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let np = S::cast_usize(n * p);

    for _ in 0..config.max_iter {
        let std = StandardizedMatrix::from_standardized(phi.clone())?;
        let pca_sol = pca(&std, config.m)?;
        let pseudo = pseudo_responses(&pca_sol);

        let mut new_phi = Array2::<S>::zeros((n, p));
        for j in 0..p {
            let q = quantification_step(
                &indicators[j],
                pseudo.values.column(j),
                effective_lambda[j],
                phi.column(j),
                penalty.monotone_mask[j],
            )?;
            new_phi
                .column_mut(j)
                .assign(&indicators[j].apply(q.theta.view()));
            quantifications[j] = q;
        }

        let criterion = phi
            .iter()
            .zip(new_phi.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            / np;
        trace.push(criterion);
        iterations += 1;
        phi = new_phi;
        if criterion < config.epsilon {
            converged = true;
            break;
        }
    }

    let scaled = StandardizedMatrix::from_standardized(phi)?;
    let final_pca = pca(&scaled, config.m)?;
    let vaf_m = vaf(&final_pca, config.m)?;
    Ok(FitResult {
        quantifications,
        scaled,
        final_pca,
        vaf_m,
        iterations,
        convergence_trace: trace,
        converged,
    })
}

/// Deterministic sign convention for score vectors: when the overall trend
/// (sum of first differences) dominates, flip decreasing vectors so they
/// increase; when the curvature (sum of second differences) dominates, as
/// with symmetric V shapes, flip so the curvature is positive (V rather than
/// inverted V).
pub fn orient<S: Scalar>(q: &Quantification<S>) -> Quantification<S> {
    let theta = &q.theta;
    let k = theta.len();
    let d1_sum = theta[k - 1] - theta[0];
    let d2_sum = if k >= 3 {
        (theta[k - 1] - theta[k - 2]) - (theta[1] - theta[0])
    } else {
        S::zero()
    };
    let flip = if d1_sum.abs() >= d2_sum.abs() {
        d1_sum < S::zero()
    } else {
        d2_sum < S::zero()
    };
    if flip {
        Quantification {
            theta: theta.mapv(|v| -v),
            variable_index: q.variable_index,
            monotone: q.monotone,
            orientation: match q.orientation {
                Orientation::AsFit => Orientation::Flipped,
                Orientation::Flipped => Orientation::AsFit,
            },
        }
    } else {
        q.clone()
    }
}
