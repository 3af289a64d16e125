//! Dense linear algebra for the PCA step: thin SVD, component extraction,
//! variance accounted for, and pseudo-response construction.

use ndarray::{Array1, Array2};

use crate::data::StandardizedMatrix;
use crate::error::{Error, Result};
use crate::Scalar;

const MAX_JACOBI_SWEEPS: usize = 64;

/// Thin singular value decomposition `M = U diag(d) V^T` of an `n x p`
/// matrix with `n >= p`. Singular values are sorted non-increasing and the
/// columns of `U` (`n x p`) and `V` (`p x p`) are orthonormal.
#[derive(Debug, Clone)]
pub struct ThinSvd<S> {
    pub u: Array2<S>,
    pub singular_values: Array1<S>,
    pub v: Array2<S>,
}

/// One-sided Jacobi SVD: rotates column pairs of a working copy until all
/// columns are mutually orthogonal, then reads off norms and directions.
pub fn thin_svd<S: Scalar>(matrix: &Array2<S>) -> Result<ThinSvd<S>> {
    let (n, p) = matrix.dim();
    if n < p {
        return Err(Error::validation(format!(
            "thin_svd needs n >= p (got {n} x {p})"
        )));
    }
    if p == 0 {
        return Err(Error::validation("thin_svd of an empty matrix"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("thin_svd input contains non-finite entries"));
    }

    let mut w = matrix.clone();
    let mut v = Array2::<S>::eye(p);
    let tol = S::epsilon() * S::cast(8.0);

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..p - 1 {
            for j in i + 1..p {
                let mut alpha = S::zero();
                let mut beta = S::zero();
                let mut gamma = S::zero();
                for r in 0..n {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    alpha += wi * wi;
                    beta += wj * wj;
                    gamma += wi * wj;
                }
                if alpha == S::zero() || beta == S::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                // Rotation zeroing the off-diagonal of [[alpha, gamma], [gamma, beta]].
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = if zeta == S::zero() {
                    S::one()
                } else {
                    let sign = if zeta > S::zero() { S::one() } else { -S::one() };
                    sign / (zeta.abs() + (S::one() + zeta * zeta).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    w[(r, i)] = c * wi - s * wj;
                    w[(r, j)] = s * wi + c * wj;
                }
                for r in 0..p {
                    let vi = v[(r, i)];
                    let vj = v[(r, j)];
                    v[(r, i)] = c * vi - s * vj;
                    v[(r, j)] = s * vi + c * vj;
                }
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "jacobi SVD did not converge within {MAX_JACOBI_SWEEPS} sweeps"
        )));
    }

    let mut norms: Vec<S> = (0..p)
        .map(|j| w.column(j).iter().map(|&x| x * x).sum::<S>().sqrt())
        .collect();

    // Sort non-increasing; ties keep the lower original index first.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .expect("singular values are finite")
            .then(a.cmp(&b))
    });

    let mut u = Array2::<S>::zeros((n, p));
    let mut v_sorted = Array2::<S>::zeros((p, p));
    let max_norm = order.first().map(|&j| norms[j]).unwrap_or(S::zero());
    let rank_tol = max_norm * S::epsilon() * S::cast_usize(n.max(p));
    let mut null_cols = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.column_mut(dst).assign(&v.column(src));
        if norms[src] > rank_tol && norms[src] > S::zero() {
            let d = norms[src];
            for r in 0..n {
                u[(r, dst)] = w[(r, src)] / d;
            }
        } else {
            norms[src] = S::zero();
            null_cols.push(dst);
        }
    }
    // Columns with zero singular value need an orthonormal completion:
    // Gram-Schmidt standard basis vectors against the columns built so far.
    for dst in null_cols {
        let mut placed = false;
        for cand in 0..n {
            let mut vec = Array1::<S>::zeros(n);
            vec[cand] = S::one();
            for c in 0..p {
                if c == dst {
                    continue;
                }
                let proj = u.column(c).dot(&vec);
                if proj != S::zero() {
                    let col = u.column(c).to_owned();
                    vec.zip_mut_with(&col, |v, &u| *v -= proj * u);
                }
            }
            let norm = vec.iter().map(|&x| x * x).sum::<S>().sqrt();
            if norm > S::cast(0.5) {
                vec.mapv_inplace(|x| x / norm);
                u.column_mut(dst).assign(&vec);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::numerical(
                "could not complete orthonormal basis for rank-deficient input",
            ));
        }
    }

    let singular_values = Array1::from_iter(order.iter().map(|&j| norms[j]));
    Ok(ThinSvd {
        u,
        singular_values,
        v: v_sorted,
    })
}

/// Principal component solution on a standardized matrix.
///
/// `eigenvalues` holds all `p` eigenvalues of the correlation matrix (in
/// variance units, `d_r^2 / (n - 1)`), not just the `m` retained ones, so the
/// full scree spectrum is available without a refit.
#[derive(Debug, Clone)]
pub struct PcaSolution<S> {
    /// `p x m` loadings with orthonormal columns.
    pub loadings: Array2<S>,
    /// `n x m` component scores, `standardized data * loadings`.
    pub scores: Array2<S>,
    /// All `p` eigenvalues, sorted non-increasing.
    pub eigenvalues: Vec<S>,
    /// Retained component count.
    pub m: usize,
}

/// PCA via SVD of the standardized matrix. Loadings are the first `m` right
/// singular vectors, with the sign of each column fixed so that its
/// largest-magnitude entry is positive (ties broken by lowest index).
pub fn pca<S: Scalar>(std: &StandardizedMatrix<S>, m: usize) -> Result<PcaSolution<S>> {
    let (n, p) = std.values.dim();
    if m < 1 || m > p {
        return Err(Error::validation(format!(
            "component count m = {m} out of range 1..={p}"
        )));
    }
    let svd = thin_svd(&std.values)?;
    let denom = S::cast_usize(n - 1);
    let eigenvalues: Vec<S> = svd
        .singular_values
        .iter()
        .map(|&d| d * d / denom)
        .collect();

    let mut loadings = Array2::<S>::zeros((p, m));
    for r in 0..m {
        loadings.column_mut(r).assign(&svd.v.column(r));
    }
    canonicalize_column_signs(&mut loadings);
    let scores = std.values.dot(&loadings);

    Ok(PcaSolution {
        loadings,
        scores,
        eigenvalues,
        m,
    })
}

/// Flips each column so its largest-magnitude entry is positive; ties in
/// magnitude are broken toward the lowest row index.
fn canonicalize_column_signs<S: Scalar>(matrix: &mut Array2<S>) {
    for mut col in matrix.columns_mut() {
        let mut best = 0usize;
        let mut best_abs = S::zero();
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < S::zero() {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Proportion of variance accounted for by the first `m` components:
/// `sum(eigenvalues[..m]) / p` on standardized data.
pub fn vaf<S: Scalar>(solution: &PcaSolution<S>, m: usize) -> Result<S> {
    let p = solution.eigenvalues.len();
    if m < 1 || m > p {
        return Err(Error::validation(format!(
            "component count m = {m} out of range 1..={p}"
        )));
    }
    let top: S = solution.eigenvalues[..m].iter().copied().sum();
    Ok(top / S::cast_usize(p))
}

/// Rank-`m` reconstruction `U = Y A^T` used as the regression target of the
/// quantification step.
#[derive(Debug, Clone)]
pub struct PseudoResponseMatrix<S> {
    pub values: Array2<S>,
}

pub fn pseudo_responses<S: Scalar>(solution: &PcaSolution<S>) -> PseudoResponseMatrix<S> {
    PseudoResponseMatrix {
        values: solution.scores.dot(&solution.loadings.t()),
    }
}
