//! Latent-factor simulation study: five orthogonal factors with variances
//! `(6, 5, 4, 3, 2)` load block-wise on twenty variables, noise is added,
//! and each column is discretized onto a five-point scale through a
//! shape-specific threshold mechanism (V, S, linear, square root, quadratic).
//! Replicated fits summarize the oriented quantifications per level.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::OrdinalDataMatrix;
use crate::error::{Error, Result};
use crate::scaling::{als_fit, orient, AlsConfig, PenaltyConfig};
use crate::Scalar;

const N_VARIABLES: usize = 20;
const N_FACTORS: usize = 5;
const N_LEVELS: usize = 5;
/// Block sizes per factor; block `r` holds `7 - (r + 1)` variables.
const BLOCK_SIZES: [usize; N_FACTORS] = [6, 5, 4, 3, 2];
const FACTOR_VARIANCES: [f64; N_FACTORS] = [6.0, 5.0, 4.0, 3.0, 2.0];
/// Level-boundary positions on the 1..=5 scale, fed through each shape's
/// transform to place the cutpoints.
const BOUNDARY_GRID: [f64; 4] = [1.5, 2.5, 3.5, 4.5];
/// V-shape thresholds in column standard-deviation units.
const V_ZETA: (f64, f64) = (0.5, 1.5);

/// Discretization shape of a simulated variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    VShaped,
    SShaped,
    Linear,
    Sqrt,
    Quadratic,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::VShaped => "v",
            Shape::SShaped => "s",
            Shape::Linear => "linear",
            Shape::Sqrt => "sqrt",
            Shape::Quadratic => "quadratic",
        }
    }

    /// Monotone transform applied to the boundary grid; the V shape has its
    /// own two-threshold mechanism and no monotone transform.
    fn transform(self, level_pos: f64) -> f64 {
        match self {
            Shape::VShaped => level_pos,
            Shape::SShaped => (1.2 * (level_pos - 3.0)).tanh(),
            Shape::Linear => level_pos,
            Shape::Sqrt => level_pos.sqrt(),
            Shape::Quadratic => level_pos * level_pos,
        }
    }
}

/// The fixed study design plus the run-specific sample size, noise level,
/// and seed.
#[derive(Debug, Clone)]
pub struct SimDesign<S> {
    pub n: usize,
    /// Noise standard deviation `tau` (variance `tau^2`).
    pub noise_sd: S,
    pub seed: u64,
    /// `1..=5` factor variances, descending.
    pub factor_variances: Vec<S>,
    /// `20 x 5` block loading matrix; each row has one nonzero entry and
    /// each column has unit norm.
    pub block_loadings: Array2<S>,
    pub shape_map: Vec<Shape>,
    /// Per-variable cutpoints in standard-deviation units: four for monotone
    /// shapes, two (`zeta_1 < zeta_2`) for the V shape.
    pub cutpoints: Vec<Vec<S>>,
}

impl<S: Scalar> SimDesign<S> {
    pub fn new(n: usize, noise_sd: S, seed: u64) -> Result<Self> {
        if n <= N_VARIABLES {
            return Err(Error::validation(format!(
                "simulation needs n > {N_VARIABLES} (got {n})"
            )));
        }
        if !(noise_sd >= S::zero()) {
            return Err(Error::validation("noise_sd must be non-negative"));
        }
        let mut block_loadings = Array2::zeros((N_VARIABLES, N_FACTORS));
        let mut shape_map = Vec::with_capacity(N_VARIABLES);
        let shapes = [
            Shape::VShaped,
            Shape::SShaped,
            Shape::Linear,
            Shape::Sqrt,
            Shape::Quadratic,
        ];
        let mut row = 0;
        for (r, (&size, &shape)) in BLOCK_SIZES.iter().zip(shapes.iter()).enumerate() {
            let entry = S::cast(1.0 / (size as f64).sqrt());
            for _ in 0..size {
                block_loadings[(row, r)] = entry;
                shape_map.push(shape);
                row += 1;
            }
        }
        let cutpoints = shape_map.iter().map(|&s| standard_cutpoints(s)).collect();
        Ok(Self {
            n,
            noise_sd,
            seed,
            factor_variances: FACTOR_VARIANCES.iter().map(|&v| S::cast(v)).collect(),
            block_loadings,
            shape_map,
            cutpoints,
        })
    }

    pub fn p(&self) -> usize {
        N_VARIABLES
    }

    pub fn m(&self) -> usize {
        N_FACTORS
    }

    fn with_seed(&self, seed: u64) -> Self {
        let mut d = self.clone();
        d.seed = seed;
        d
    }
}

/// Cutpoints in standard-deviation units: the shape's transform evaluated on
/// the level-boundary grid, then affinely rescaled so the outer cutpoints sit
/// at -1.5 and +1.5 (which keeps the linear shape at the equidistant grid
/// -1.5, -0.5, 0.5, 1.5). The V shape keeps its two fixed thresholds.
fn standard_cutpoints<S: Scalar>(shape: Shape) -> Vec<S> {
    if shape == Shape::VShaped {
        return vec![S::cast(V_ZETA.0), S::cast(V_ZETA.1)];
    }
    let raw: Vec<f64> = BOUNDARY_GRID.iter().map(|&g| shape.transform(g)).collect();
    let lo = raw[0];
    let hi = raw[3];
    raw.iter()
        .map(|&v| S::cast(-1.5 + 3.0 * (v - lo) / (hi - lo)))
        .collect()
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 step keeps per-column and per-replication streams apart.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Draws the latent factors, forms `Y A' + E`, and discretizes each column
/// per its shape. Returns the ordinal matrix and the latent factor matrix.
pub fn generate<S>(design: &SimDesign<S>) -> Result<(OrdinalDataMatrix, Array2<S>)>
where
    S: Scalar,
    StandardNormal: Distribution<S>,
{
    let n = design.n;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let mut latent = Array2::<S>::zeros((n, N_FACTORS));
    for r in 0..N_FACTORS {
        let sd = design.factor_variances[r].sqrt();
        for i in 0..n {
            latent[(i, r)] = rng.sample::<S, _>(StandardNormal) * sd;
        }
    }
    let mut x = latent.dot(&design.block_loadings.t());
    if design.noise_sd > S::zero() {
        for v in x.iter_mut() {
            *v += rng.sample::<S, _>(StandardNormal) * design.noise_sd;
        }
    }

    let mut values = Array2::<u32>::zeros((n, N_VARIABLES));
    for j in 0..N_VARIABLES {
        let col = x.column(j);
        let mean = col.sum() / S::cast_usize(n);
        let sd = (col
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<S>()
            / S::cast_usize(n - 1))
        .sqrt();
        let cuts: Vec<S> = design.cutpoints[j].iter().map(|&z| mean + sd * z).collect();
        let levels = discretize(
            col,
            design.shape_map[j],
            &cuts,
            derive_seed(design.seed, 1 + j as u64),
        )?;
        for (i, &l) in levels.iter().enumerate() {
            values[(i, j)] = l;
        }
    }

    let data = OrdinalDataMatrix::new(
        values,
        vec![N_LEVELS; N_VARIABLES],
        (1..=N_VARIABLES).map(|j| format!("v{j:02}")).collect(),
        vec![0; N_VARIABLES],
    )?;
    Ok((data, latent))
}

/// Thresholds one continuous column into levels `1..=5`.
///
/// Monotone shapes use four cutpoints: the level is one plus the number of
/// cutpoints below the value. The V shape uses two thresholds: values below
/// `zeta_1` become level 3, values in `[zeta_1, zeta_2]` become level 2 or 4
/// by a fair coin, and values above `zeta_2` become level 1 or 5 by a fair
/// coin; the latent value only determines how extreme the category is.
pub fn discretize<S: Scalar>(
    column: ArrayView1<'_, S>,
    shape: Shape,
    cutpoints: &[S],
    seed: u64,
) -> Result<Vec<u32>> {
    for w in cutpoints.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::validation("cutpoints must be strictly ascending"));
        }
    }
    match shape {
        Shape::VShaped => {
            if cutpoints.len() != 2 {
                return Err(Error::validation("the V shape needs exactly two cutpoints"));
            }
            let (zeta1, zeta2) = (cutpoints[0], cutpoints[1]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(column
                .iter()
                .map(|&v| {
                    if v < zeta1 {
                        3
                    } else if v <= zeta2 {
                        if rng.random::<bool>() {
                            2
                        } else {
                            4
                        }
                    } else if rng.random::<bool>() {
                        1
                    } else {
                        5
                    }
                })
                .collect())
        }
        _ => {
            if cutpoints.len() != 4 {
                return Err(Error::validation(
                    "monotone shapes need exactly four cutpoints",
                ));
            }
            Ok(column
                .iter()
                .map(|&v| 1 + cutpoints.iter().filter(|&&c| c < v).count() as u32)
                .collect())
        }
    }
}

/// Per-level summary of oriented quantifications across replications.
#[derive(Debug, Clone)]
pub struct SimReplicateSummary<S> {
    pub lambda: S,
    /// `[variable][level]` mean of the oriented scores.
    pub mean_theta: Vec<Vec<S>>,
    /// `[variable][level]` standard deviation (divisor `R_eff - 1`).
    pub sd_theta: Vec<Vec<S>>,
    /// Replications that contributed (generation or fit failures excluded).
    pub replications: usize,
    pub failures: usize,
}

/// Repeats generate-fit-orient `r` times per `lambda` and accumulates the
/// per-level mean and standard deviation of the oriented scores. Individual
/// replication failures are excluded and counted.
pub fn replicate_study<S>(
    design: &SimDesign<S>,
    lambdas: &[S],
    config: &AlsConfig<S>,
    monotone_mask: Option<&[bool]>,
    r: usize,
) -> Result<Vec<SimReplicateSummary<S>>>
where
    S: Scalar,
    StandardNormal: Distribution<S>,
{
    if r < 2 {
        return Err(Error::validation(
            "replications must be at least 2 to estimate a standard deviation",
        ));
    }
    if lambdas.is_empty() {
        return Err(Error::validation("no lambda values requested"));
    }
    let mask = match monotone_mask {
        Some(m) => {
            if m.len() != N_VARIABLES {
                return Err(Error::validation(format!(
                    "monotone mask must have length {N_VARIABLES}"
                )));
            }
            m.to_vec()
        }
        None => vec![false; N_VARIABLES],
    };

    // One result per replication: for each lambda, the oriented theta table,
    // or an error message.
    type RepOutcome<S> = Vec<std::result::Result<Vec<Vec<S>>, String>>;
    let outcomes: Vec<RepOutcome<S>> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let rep_design = design.with_seed(derive_seed(design.seed, 0x5151 + rep as u64));
            let generated = generate(&rep_design);
            match generated {
                Err(e) => vec![Err(e.to_string()); lambdas.len()],
                Ok((data, _)) => lambdas
                    .iter()
                    .map(|&lambda| {
                        PenaltyConfig::new(lambda, data.level_counts(), mask.clone())
                            .and_then(|penalty| als_fit(&data, &penalty, config))
                            .map(|fit| {
                                fit.quantifications
                                    .iter()
                                    .map(|q| orient(q).theta.to_vec())
                                    .collect::<Vec<_>>()
                            })
                            .map_err(|e| e.to_string())
                    })
                    .collect(),
            }
        })
        .collect();

    let mut summaries = Vec::with_capacity(lambdas.len());
    for (g, &lambda) in lambdas.iter().enumerate() {
        let tables: Vec<&Vec<Vec<S>>> = outcomes
            .iter()
            .filter_map(|rep| rep[g].as_ref().ok())
            .collect();
        let failures = r - tables.len();
        if tables.len() < 2 {
            return Err(Error::numerical(format!(
                "fewer than two successful replications at lambda = {lambda}"
            )));
        }
        let r_eff = S::cast_usize(tables.len());
        let mut mean_theta = vec![vec![S::zero(); N_LEVELS]; N_VARIABLES];
        let mut sd_theta = vec![vec![S::zero(); N_LEVELS]; N_VARIABLES];
        for j in 0..N_VARIABLES {
            for l in 0..N_LEVELS {
                let mean = tables.iter().map(|t| t[j][l]).sum::<S>() / r_eff;
                let var = tables
                    .iter()
                    .map(|t| (t[j][l] - mean) * (t[j][l] - mean))
                    .sum::<S>()
                    / (r_eff - S::one());
                mean_theta[j][l] = mean;
                sd_theta[j][l] = var.sqrt();
            }
        }
        summaries.push(SimReplicateSummary {
            lambda,
            mean_theta,
            sd_theta,
            replications: tables.len(),
            failures,
        });
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn design_blocks_are_normalized_and_aligned() {
        let design = SimDesign::<f64>::new(100, 0.2_f64.sqrt(), 1).unwrap();
        assert_eq!(design.p(), 20);
        for r in 0..5 {
            let norm: f64 = design
                .block_loadings
                .column(r)
                .iter()
                .map(|v| v * v)
                .sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        for row in design.block_loadings.rows() {
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        }
        assert_eq!(design.shape_map[0], Shape::VShaped);
        assert_eq!(design.shape_map[6], Shape::SShaped);
        assert_eq!(design.shape_map[11], Shape::Linear);
        assert_eq!(design.shape_map[15], Shape::Sqrt);
        assert_eq!(design.shape_map[18], Shape::Quadratic);
        // Linear cutpoints stay on the equidistant grid.
        assert_eq!(design.cutpoints[11], vec![-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn generated_levels_are_in_range_and_deterministic() {
        let design = SimDesign::<f64>::new(200, 0.2_f64.sqrt(), 7).unwrap();
        let (a, _) = generate(&design).unwrap();
        let (b, _) = generate(&design).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|&v| (1..=5).contains(&v)));
        assert_eq!(a.n(), 200);
        assert_eq!(a.p(), 20);
    }

    #[test]
    fn latent_covariance_approaches_the_design() {
        // tau = 0: cov(Y A') -> A diag(6..2) A'.
        let design = SimDesign::<f64>::new(50_000, 0.0, 3).unwrap();
        let (_, latent) = generate(&design).unwrap();
        let x = latent.dot(&design.block_loadings.t());
        let n = x.nrows();
        let means: Vec<f64> = (0..20).map(|j| x.column(j).sum() / n as f64).collect();
        let a = &design.block_loadings;
        let target = a.dot(&Array2::from_diag(&array![6.0, 5.0, 4.0, 3.0, 2.0])).dot(&a.t());
        for i in 0..20 {
            for j in 0..20 {
                let mut cov = 0.0;
                for row in 0..n {
                    cov += (x[(row, i)] - means[i]) * (x[(row, j)] - means[j]);
                }
                cov /= (n - 1) as f64;
                assert!(
                    (cov - target[(i, j)]).abs() < 0.05,
                    "cov({i},{j}) = {cov} vs {}",
                    target[(i, j)]
                );
            }
        }
    }

    #[test]
    fn noiseless_latent_data_has_full_vaf_at_five_components() {
        use crate::data::standardize_columns;
        use crate::linalg::{pca, vaf};
        let design = SimDesign::<f64>::new(400, 0.0, 13).unwrap();
        let (_, latent) = generate(&design).unwrap();
        let x = latent.dot(&design.block_loadings.t());
        let std = standardize_columns(&x).unwrap();
        let sol = pca(&std, 5).unwrap();
        assert!((vaf(&sol, 5).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_discretization_thresholds() {
        let col = array![0.0_f64, -2.0, 2.0, 0.6];
        let levels = discretize(
            col.view(),
            Shape::Linear,
            &[-1.5, -0.5, 0.5, 1.5],
            1,
        )
        .unwrap();
        assert_eq!(levels, vec![3, 1, 5, 4]);
    }

    #[test]
    fn v_shape_middle_goes_to_level_three() {
        let col = Array1::from_elem(50, 0.0_f64);
        let levels = discretize(col.view(), Shape::VShaped, &[0.5, 1.5], 9).unwrap();
        assert!(levels.iter().all(|&l| l == 3));
    }

    #[test]
    fn v_shape_extremes_split_evenly() {
        let col = Array1::from_elem(10_000, 2.0_f64);
        let levels = discretize(col.view(), Shape::VShaped, &[0.5, 1.5], 11).unwrap();
        let ones = levels.iter().filter(|&&l| l == 1).count() as f64;
        let fives = levels.iter().filter(|&&l| l == 5).count() as f64;
        assert_eq!(ones + fives, 10_000.0);
        let freq = ones / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn unsorted_cutpoints_are_rejected() {
        let col = array![0.0_f64, 1.0];
        assert!(discretize(col.view(), Shape::Linear, &[1.0, 0.5, 2.0, 3.0], 1).is_err());
        assert!(discretize(col.view(), Shape::VShaped, &[1.5, 0.5], 1).is_err());
    }

    #[test]
    fn replicate_study_recovers_shapes_at_small_scale() {
        let design = SimDesign::<f64>::new(300, 0.2_f64.sqrt(), 21).unwrap();
        let config = AlsConfig::new(5);
        let summaries =
            replicate_study(&design, &[0.1], &config, None, 10).unwrap();
        let s = &summaries[0];
        assert_eq!(s.replications + s.failures, 10);
        // Variable 1 (index 0) is V-shaped: level 3 minimal, 1 and 5 largest.
        let v = &s.mean_theta[0];
        assert!(v[2] < v[0] && v[2] < v[4], "not V-shaped: {v:?}");
        assert!(v[0] > v[1] && v[4] > v[3], "extremes not maximal: {v:?}");
        // Variables 7/16/19 (indices 6/15/18) are monotone in the mean.
        for &j in &[6usize, 15, 18] {
            let t = &s.mean_theta[j];
            for l in 0..4 {
                assert!(
                    t[l + 1] >= t[l] - 0.05,
                    "variable {j} mean theta not monotone: {t:?}"
                );
            }
        }
    }

    #[test]
    fn infinite_penalty_forces_linear_mean_scores() {
        let design = SimDesign::<f64>::new(200, 0.2_f64.sqrt(), 33).unwrap();
        let config = AlsConfig::new(5);
        let summaries = replicate_study(&design, &[1e8], &config, None, 5).unwrap();
        let t = &summaries[0].mean_theta[11]; // linear variable
        for l in 1..4 {
            let d2 = t[l + 1] - 2.0 * t[l] + t[l - 1];
            assert!(d2.abs() < 1e-3, "second difference {d2}");
        }
    }

    #[test]
    fn single_replication_is_rejected() {
        let design = SimDesign::<f64>::new(100, 0.2_f64.sqrt(), 1).unwrap();
        let config = AlsConfig::new(5);
        assert!(replicate_study(&design, &[0.1], &config, None, 1).is_err());
    }
}
