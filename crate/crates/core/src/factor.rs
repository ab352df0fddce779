//! Principal-component factor estimation and residualization.
//!
//! The factors are the leading eigenvectors of the Gram matrix of the panel,
//! scaled so that `F_hat' F_hat = T I`. Residualizing projects both the
//! regressors and the outcome on the orthogonal complement of the factor
//! space (optionally extended by observed extra regressors, which are
//! treated as observed factors).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a trailing eigenvalue is
/// treated as exactly zero (infinite eigenvalue ratio).
const ZERO_EIG_REL: f64 = 1e-13;

/// Relative gap under which the kept/dropped eigenspaces are flagged as
/// numerically inseparable.
const DEGENERATE_GAP_REL: f64 = 1e-10;

/// Observed panel: outcome `y` (length T), regressors `x` (T x p), optional
/// extra regressors `w` (T x l).
#[derive(Clone, Debug)]
pub struct PanelData {
    y: DVector<f64>,
    x: DMatrix<f64>,
    w: Option<DMatrix<f64>>,
}

impl PanelData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, w: Option<DMatrix<f64>>) -> Result<Self> {
        let t = x.nrows();
        if t < 2 || x.ncols() < 1 {
            return Err(Error::InvalidArgument(format!(
                "panel must have T >= 2 rows and p >= 1 columns, got T={t}, p={}",
                x.ncols()
            )));
        }
        if y.len() != t {
            return Err(Error::InvalidArgument(format!(
                "Y has {} rows but X has {t}",
                y.len()
            )));
        }
        if let Some(w) = &w {
            if w.nrows() != t {
                return Err(Error::InvalidArgument(format!(
                    "W has {} rows but X has {t}",
                    w.nrows()
                )));
            }
            if w.ncols() < 1 {
                return Err(Error::InvalidArgument("W present but has no columns".into()));
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::Data("non-finite value in W".into()));
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite value in Y".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite value in X".into()));
        }
        Ok(Self { y, x, w })
    }

    pub fn num_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_regressors(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_extra(&self) -> usize {
        self.w.as_ref().map_or(0, |w| w.ncols())
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> Option<&DMatrix<f64>> {
        self.w.as_ref()
    }
}

/// Output of [`estimate_factors`]: factors, loadings and the Gram spectrum.
#[derive(Clone, Debug)]
pub struct FactorEstimate {
    /// T x K, normalized so `f_hat' f_hat = T I`.
    pub f_hat: DMatrix<f64>,
    /// p x K loadings, `b_hat = f_hat' x / T` transposed.
    pub b_hat: DMatrix<f64>,
    /// Eigenvalues of the smaller Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// True when the K-th and (K+1)-th eigenvalues coincide within relative
    /// gap 1e-10, so the kept eigenspace is not numerically separated.
    pub degenerate_boundary: bool,
}

/// Residualized panel, ready for the LASSO stage.
#[derive(Clone, Debug)]
pub struct FactorDecomposition {
    pub k_hat: usize,
    pub f_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// (I - P) X
    pub u_hat: DMatrix<f64>,
    /// (I - P) Y
    pub y_tilde: DVector<f64>,
    pub used_w: bool,
    pub degenerate_boundary: bool,
}

/// Eigenvalues of the smaller Gram matrix (X X'/ c when T <= p, else
/// X' X / c), descending, together with the matching unit eigenvectors.
fn gram_eigen(x: &DMatrix<f64>, scale: f64) -> (Vec<f64>, DMatrix<f64>, bool) {
    let (t, p) = x.shape();
    let small_side_is_rows = t <= p;
    let gram = if small_side_is_rows {
        x * x.transpose() / scale
    } else {
        x.transpose() * x / scale
    };
    // Symmetrize to kill round-off asymmetry before the eigensolver.
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = gram.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors, small_side_is_rows)
}

fn check_finite(x: &DMatrix<f64>, name: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Data(format!("non-finite value in {name}")))
    }
}

/// Eigenvalue-ratio estimate of the number of factors: the k in
/// `1..=k_max` maximizing `mu_k / mu_{k+1}` over the eigenvalues of
/// `X X' / (T p)`. Ties break toward the smallest k; a zero trailing
/// eigenvalue makes the ratio infinite and the smallest such k wins.
pub fn estimate_num_factors(x: &DMatrix<f64>, k_max: usize) -> Result<usize> {
    check_finite(x, "X")?;
    let (t, p) = x.shape();
    let limit = t.min(p).saturating_sub(1);
    if k_max < 1 || k_max > limit {
        return Err(Error::InvalidArgument(format!(
            "k_max must be in 1..=min(T,p)-1 = {limit}, got {k_max}"
        )));
    }
    let (eigs, _, _) = gram_eigen(x, (t * p) as f64);
    let top = eigs[0];
    if top.is_nan() || top <= 0.0 {
        return Err(Error::Degenerate(
            "panel has no spectral mass; cannot estimate the number of factors".into(),
        ));
    }
    let mut best_k = 1;
    let mut best_ratio = f64::NEG_INFINITY;
    for k in 1..=k_max {
        let denom = eigs[k];
        if denom <= top * ZERO_EIG_REL {
            // Infinite ratio; smallest such k wins.
            return Ok(k);
        }
        let ratio = eigs[k - 1] / denom;
        if ratio > best_ratio {
            best_ratio = ratio;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Extract the K leading principal-component factors of X.
///
/// The columns of `f_hat / sqrt(T)` are unit eigenvectors of `X X'` for the
/// K leading eigenvalues, sign-fixed so each column's entry of largest
/// absolute value is positive (first such index on ties). The decomposition
/// runs on the smaller of `X X'` and `X' X`.
pub fn estimate_factors(x: &DMatrix<f64>, k: usize) -> Result<FactorEstimate> {
    check_finite(x, "X")?;
    let (t, p) = x.shape();
    if k > t.min(p) {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds min(T, p) = {}",
            t.min(p)
        )));
    }
    let (eigenvalues, vectors, small_side_is_rows) = gram_eigen(x, 1.0);
    let top = eigenvalues[0].max(0.0);

    let mut f_hat = DMatrix::zeros(t, k);
    let sqrt_t = (t as f64).sqrt();
    #[allow(clippy::needless_range_loop)]
    for j in 0..k {
        let col: DVector<f64> = if small_side_is_rows {
            vectors.column(j).into()
        } else {
            // Eigenvector w of X'X maps to eigenvector X w / sqrt(mu) of X X'.
            let mu = eigenvalues[j];
            if mu <= top * ZERO_EIG_REL || mu <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "cannot extract {k} factors: eigenvalue {} of the Gram matrix vanishes",
                    j + 1
                )));
            }
            x * vectors.column(j) / mu.sqrt()
        };
        // Rescale exactly to norm sqrt(T); conversion through X loses a few ulps.
        let norm = col.norm();
        f_hat.set_column(j, &(col * (sqrt_t / norm)));
    }
    apply_sign_convention(&mut f_hat);

    let b_hat = (x.transpose() * &f_hat) / t as f64;
    let degenerate_boundary = k > 0
        && k < eigenvalues.len()
        && (eigenvalues[k - 1] - eigenvalues[k]).abs() <= DEGENERATE_GAP_REL * top.max(f64::MIN_POSITIVE);

    Ok(FactorEstimate {
        f_hat,
        b_hat,
        eigenvalues,
        degenerate_boundary,
    })
}

/// Sign-fix each column so its entry of largest absolute value is positive.
fn apply_sign_convention(f: &mut DMatrix<f64>) {
    for mut col in f.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Project X and Y on the orthogonal complement of the estimated factors
/// (and of W when present). Without W the projector is `F_hat F_hat' / T`;
/// with W it is the orthogonal projector onto the columns of `(F_hat W)`,
/// built by modified Gram-Schmidt with reorthogonalization.
pub fn residualize(data: &PanelData, est: &FactorEstimate) -> Result<FactorDecomposition> {
    let t = data.num_obs();
    let k = est.f_hat.ncols();
    if est.f_hat.nrows() != t {
        return Err(Error::InvalidArgument(format!(
            "F_hat has {} rows but the panel has T = {t}",
            est.f_hat.nrows()
        )));
    }
    // F_hat' F_hat = T I within tolerance.
    if k > 0 {
        let gram = est.f_hat.transpose() * &est.f_hat;
        let tol = 1e-8 * t as f64;
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { t as f64 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > tol {
                    return Err(Error::InvalidArgument(
                        "factor matrix is not normalized: F_hat' F_hat != T I".into(),
                    ));
                }
            }
        }
    }
    let ell = data.num_extra();
    if ell > 0 && k + ell >= t {
        return Err(Error::InvalidArgument(format!(
            "K + l = {} must be smaller than T = {t}",
            k + ell
        )));
    }

    let (u_hat, y_tilde) = match data.w() {
        None => {
            if k == 0 {
                (data.x().clone(), data.y().clone())
            } else {
                let coeff_x = est.f_hat.transpose() * data.x() / t as f64;
                let coeff_y = est.f_hat.transpose() * data.y() / t as f64;
                (data.x() - &est.f_hat * coeff_x, data.y() - &est.f_hat * coeff_y)
            }
        }
        Some(w) => {
            let q = orthonormal_basis(&est.f_hat, w)?;
            let u_hat = data.x() - &q * (q.transpose() * data.x());
            let y_tilde = data.y() - &q * (q.transpose() * data.y());
            (u_hat, y_tilde)
        }
    };

    Ok(FactorDecomposition {
        k_hat: k,
        f_hat: est.f_hat.clone(),
        b_hat: est.b_hat.clone(),
        eigenvalues: est.eigenvalues.clone(),
        u_hat,
        y_tilde,
        used_w: data.w().is_some(),
        degenerate_boundary: est.degenerate_boundary,
    })
}

/// Orthonormal basis of the column space of (F W) via modified Gram-Schmidt
/// with a second reorthogonalization pass. A column whose residual norm
/// drops below 1e-10 of its original norm is reported as collinear.
fn orthonormal_basis(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = f.nrows();
    let k = f.ncols();
    let total = k + w.ncols();
    let mut q = DMatrix::<f64>::zeros(t, total);
    for j in 0..total {
        let (mut v, label): (DVector<f64>, String) = if j < k {
            (f.column(j).into(), format!("factor column {}", j + 1))
        } else {
            (w.column(j - k).into(), format!("W column {}", j - k + 1))
        };
        let orig = v.norm();
        if orig == 0.0 {
            return Err(Error::Collinear(format!("{label} is identically zero")));
        }
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v -= qi * proj;
            }
        }
        let norm = v.norm();
        if norm < 1e-10 * orig {
            return Err(Error::Collinear(format!(
                "{label} lies in the span of the preceding columns of (F_hat W)"
            )));
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q)
}
