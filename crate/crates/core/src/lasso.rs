//! Penalized regression of the residualized outcome on the residualized
//! regressors, solved by cyclic coordinate descent, plus the penalty grid
//! used by the bootstrap stage.
//!
//! The objective is `(1/T) ||Y_tilde - U_hat b||_2^2 + lambda ||b||_1`,
//! with no 1/2 factor: the grid ceiling, the bootstrap criterion and the
//! rejection rule all carry the matching 2/T scaling, and mixing
//! conventions would silently shift the fixed point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sweep-to-sweep coordinate change below which the solver stops, relative
/// to max(1, ||Y_tilde||_inf).
const CONVERGENCE_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100_000;

/// `(2/T) ||U_hat' v||_inf`. Shared by the grid ceiling, the test statistic
/// and the bootstrap criterion so the three agree to the last bit.
pub(crate) fn sup_score(u_hat: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let t = u_hat.nrows();
    assert_eq!(v.len(), t, "dimension mismatch in sup_score");
    let mut max = 0.0f64;
    for j in 0..u_hat.ncols() {
        let dot = u_hat.column(j).dot(v);
        let scaled = (2.0 / t as f64) * dot;
        if scaled.abs() > max {
            max = scaled.abs();
        }
    }
    max
}

/// Smallest penalty at which the solution is exactly zero:
/// `lambda_bar = (2/T) ||U_hat' Y_tilde||_inf`. Also the test statistic.
pub fn compute_lambda_bar(u_hat: &DMatrix<f64>, y_tilde: &DVector<f64>) -> Result<f64> {
    if u_hat.nrows() != y_tilde.len() {
        return Err(Error::InvalidArgument(format!(
            "U_hat has {} rows but Y_tilde has {}",
            u_hat.nrows(),
            y_tilde.len()
        )));
    }
    let bar = sup_score(u_hat, y_tilde);
    // Exact orthogonality gives 0; near-orthogonality at round-off scale is
    // just as unusable.
    let col_scale = (0..u_hat.ncols())
        .map(|j| u_hat.column(j).norm())
        .fold(0.0f64, f64::max);
    let t = u_hat.nrows() as f64;
    if bar <= 1e-14 * (2.0 / t) * col_scale * y_tilde.norm() || bar == 0.0 {
        return Err(Error::Degenerate(
            "lambda_bar = 0: residualized outcome is orthogonal to every residualized regressor"
                .into(),
        ));
    }
    Ok(bar)
}

/// Penalty grid `0 < lambda_1 < ... < lambda_M < lambda_bar`.
#[derive(Clone, Debug)]
pub struct LambdaGrid {
    values: Vec<f64>,
    lambda_bar: f64,
}

impl LambdaGrid {
    /// Equidistant grid `lambda_m = m lambda_bar / (M + 1)`, open at both
    /// ends.
    pub fn equidistant(lambda_bar: f64, m: usize) -> Result<Self> {
        if lambda_bar <= 0.0 || !lambda_bar.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda_bar must be positive and finite, got {lambda_bar}"
            )));
        }
        if m < 1 {
            return Err(Error::InvalidArgument("grid size M must be >= 1".into()));
        }
        let step = lambda_bar / (m + 1) as f64;
        Ok(Self {
            values: (1..=m).map(|i| i as f64 * step).collect(),
            lambda_bar,
        })
    }

    pub fn from_values(values: Vec<f64>, lambda_bar: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        if !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly increasing".into(),
            ));
        }
        if values[0] <= 0.0 || *values.last().unwrap() >= lambda_bar {
            return Err(Error::InvalidArgument(
                "lambda grid must satisfy 0 < lambda_1 and lambda_M < lambda_bar".into(),
            ));
        }
        Ok(Self { values, lambda_bar })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One solution of the penalized regression.
#[derive(Clone, Debug)]
pub struct LassoFit {
    pub lambda: f64,
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn check_fit_inputs(u_hat: &DMatrix<f64>, y_tilde: &DVector<f64>, lambda: f64) -> Result<()> {
    if u_hat.nrows() != y_tilde.len() {
        return Err(Error::InvalidArgument(format!(
            "U_hat has {} rows but Y_tilde has {}",
            u_hat.nrows(),
            y_tilde.len()
        )));
    }
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    if !u_hat.iter().all(|v| v.is_finite()) || !y_tilde.iter().all(|v| v.is_finite()) {
        return Err(Error::Data("non-finite value in LASSO inputs".into()));
    }
    Ok(())
}

/// Cyclic coordinate descent for one penalty value.
///
/// Coordinates with an identically zero regressor column stay at zero. For
/// `lambda >= lambda_bar` the exact zero vector is returned without
/// iterating.
pub fn fit(
    u_hat: &DMatrix<f64>,
    y_tilde: &DVector<f64>,
    lambda: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    check_fit_inputs(u_hat, y_tilde, lambda)?;
    let (t, p) = u_hat.shape();
    let t_f = t as f64;

    if lambda >= sup_score(u_hat, y_tilde) {
        let residuals = y_tilde.clone();
        let objective = residuals.norm_squared() / t_f;
        return Ok(LassoFit {
            lambda,
            beta: DVector::zeros(p),
            residuals,
            objective,
            iterations: 0,
            converged: true,
        });
    }

    // a_j = (2/T) ||u_j||^2; zero columns are frozen at beta_j = 0.
    let col_sq: Vec<f64> = (0..p)
        .map(|j| (2.0 / t_f) * u_hat.column(j).norm_squared())
        .collect();

    let mut beta = match warm_start {
        Some(b) if b.len() == p => b.clone(),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "warm start has the wrong dimension".into(),
            ))
        }
        None => DVector::zeros(p),
    };
    let mut residuals = if beta.iter().all(|&v| v == 0.0) {
        y_tilde.clone()
    } else {
        y_tilde - u_hat * &beta
    };

    let tol = CONVERGENCE_TOL * y_tilde.amax().max(1.0);
    let mut converged = false;
    let mut sweeps = 0;
    let mut prev_objective = f64::INFINITY;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            let a = col_sq[j];
            if a == 0.0 {
                if beta[j] != 0.0 {
                    residuals += u_hat.column(j) * beta[j];
                    beta[j] = 0.0;
                }
                continue;
            }
            let c = (2.0 / t_f) * u_hat.column(j).dot(&residuals) + a * beta[j];
            let new = soft_threshold(c, lambda) / a;
            let delta = new - beta[j];
            if delta != 0.0 {
                residuals -= u_hat.column(j) * delta;
                beta[j] = new;
                if delta.abs() > max_change {
                    max_change = delta.abs();
                }
            }
        }
        let objective = residuals.norm_squared() / t_f + lambda * beta.lp_norm(1);
        assert!(
            objective <= prev_objective + 1e-10 * (1.0 + prev_objective.abs()),
            "coordinate descent objective increased: {prev_objective} -> {objective}"
        );
        prev_objective = objective;
        if max_change <= tol {
            converged = true;
            break;
        }
    }

    let objective = residuals.norm_squared() / t_f + lambda * beta.lp_norm(1);
    Ok(LassoFit {
        lambda,
        beta,
        residuals,
        objective,
        iterations: sweeps,
        converged,
    })
}

/// Fits along the grid from `lambda_M` down to `lambda_1`, each warm-started
/// at the previous solution. Returned in descending lambda order.
pub fn fit_path(
    u_hat: &DMatrix<f64>,
    y_tilde: &DVector<f64>,
    grid: &LambdaGrid,
) -> Result<Vec<LassoFit>> {
    let mut fits = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lambda in grid.values().iter().rev() {
        let f = fit(u_hat, y_tilde, lambda, warm.as_ref())?;
        warm = Some(f.beta.clone());
        fits.push(f);
    }
    Ok(fits)
}

/// Max KKT residual of a fit, scaled by lambda; <= 1e-6 for a converged
/// solution of the stated objective.
pub fn kkt_residual(u_hat: &DMatrix<f64>, fit: &LassoFit) -> f64 {
    let t_f = u_hat.nrows() as f64;
    let mut worst = 0.0f64;
    for j in 0..u_hat.ncols() {
        let g = (2.0 / t_f) * u_hat.column(j).dot(&fit.residuals);
        let r = if fit.beta[j] != 0.0 {
            (g - fit.lambda * fit.beta[j].signum()).abs()
        } else {
            (g.abs() - fit.lambda).max(0.0)
        };
        if r > worst {
            worst = r;
        }
    }
    worst
}
