//! Multiplier-bootstrap test of the null that the sparse coefficient vector
//! is zero.
//!
//! Pipeline: estimate factors, residualize, build a penalty grid under
//! `lambda_bar = (2/T)||U_hat' Y_tilde||_inf`, fit the LASSO path with warm
//! starts, evaluate the bootstrap criterion on L Gaussian multiplier draws
//! at every grid point, pick the penalty as the smallest grid point from
//! which the empirical quantile stays below the penalty, and reject when
//! the statistic (which equals `lambda_bar` by construction) exceeds the
//! selected quantile.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::{estimate_factors, estimate_num_factors, residualize, FactorDecomposition, PanelData};
use crate::lasso::{compute_lambda_bar, fit_path, sup_score, LambdaGrid};
use crate::rng::{standard_normal_vector, StreamKey};

/// How the number of factors is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KChoice {
    /// Eigenvalue-ratio estimate with ceiling `k_max`
    /// (default `min(8, min(T,p) - 1)`).
    Auto { k_max: Option<usize> },
    Fixed(usize),
}

/// Test configuration shared by the test, p-value and simulation surfaces.
#[derive(Clone, Copy, Debug)]
pub struct TestConfig {
    /// Grid size M.
    pub grid_size: usize,
    /// Bootstrap draws L.
    pub num_bootstrap: usize,
    pub k: KChoice,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            grid_size: 200,
            num_bootstrap: 200,
            k: KChoice::Auto { k_max: None },
            seed: 42,
        }
    }
}

/// Bootstrap criterion `(2/T) ||sum_t u_t eps_t e_t||_inf` for one
/// multiplier vector `e`.
pub fn criterion_q(u_hat: &DMatrix<f64>, residuals: &DVector<f64>, e: &DVector<f64>) -> f64 {
    assert_eq!(residuals.len(), u_hat.nrows(), "dimension mismatch");
    assert_eq!(e.len(), u_hat.nrows(), "dimension mismatch");
    let weighted = residuals.component_mul(e);
    sup_score(u_hat, &weighted)
}

/// Criterion evaluations for every (draw, grid point) pair, plus a sentinel
/// column at `lambda_bar` where the LASSO solution is exactly zero.
#[derive(Clone, Debug)]
pub struct BootstrapDraws {
    /// L rows; each row holds M entries in ascending lambda order.
    q: Vec<Vec<f64>>,
    /// Criterion at lambda_bar (residuals = Y_tilde), one entry per draw.
    sentinel: Vec<f64>,
    grid: LambdaGrid,
    seed: u64,
}

impl BootstrapDraws {
    pub fn num_draws(&self) -> usize {
        self.q.len()
    }

    pub fn grid(&self) -> &LambdaGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column of criterion values at grid index `m` (0-based, ascending).
    pub fn column(&self, m: usize) -> Vec<f64> {
        self.q.iter().map(|row| row[m]).collect()
    }

    pub fn sentinel_column(&self) -> &[f64] {
        &self.sentinel
    }
}

/// Evaluate the criterion for `l` multiplier draws at every grid point.
///
/// `residual_matrix` is T x (M+1): columns 0..M-1 hold the path residuals in
/// ascending lambda order, column M holds `Y_tilde` (the sentinel at
/// `lambda_bar`). Draw `ell` uses the stream keyed `(seed, "boot", ell)`,
/// so results do not depend on evaluation order or thread count.
fn compute_draws(
    u_hat: &DMatrix<f64>,
    residual_matrix: &DMatrix<f64>,
    grid: &LambdaGrid,
    l: usize,
    seed: u64,
) -> Result<BootstrapDraws> {
    if l < 1 {
        return Err(Error::InvalidArgument(
            "number of bootstrap draws must be >= 1".into(),
        ));
    }
    let t = u_hat.nrows();
    let t_f = t as f64;
    let cols = residual_matrix.ncols();
    let u_t = u_hat.transpose();

    let rows: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|ell| {
            let e = standard_normal_vector(StreamKey::new(seed, "boot", ell as u64), t)
                .expect("t >= 1");
            let mut weighted = residual_matrix.clone();
            for (ti, &et) in e.iter().enumerate() {
                for c in 0..cols {
                    weighted[(ti, c)] *= et;
                }
            }
            let scores = &u_t * weighted;
            (0..cols)
                .map(|c| (2.0 / t_f) * scores.column(c).amax())
                .collect()
        })
        .collect();

    let sentinel = rows.iter().map(|r| r[cols - 1]).collect();
    let q = rows
        .into_iter()
        .map(|mut r| {
            r.truncate(cols - 1);
            r
        })
        .collect();
    Ok(BootstrapDraws {
        q,
        sentinel,
        grid: grid.clone(),
        seed,
    })
}

/// Empirical (1-alpha)-quantile: the order statistic at rank
/// `ceil((1-alpha) L)` (at least 1), i.e. the smallest draw q with
/// `#(draws <= q) / L >= 1 - alpha`.
pub fn empirical_quantile(draws: &[f64], alpha: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument(
            "empirical_quantile: empty draws".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let l = draws.len();
    let rank = (((1.0 - alpha) * l as f64).ceil() as usize).clamp(1, l);
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted[rank - 1])
}

/// Fixed-point penalty selection: the smallest grid index m such that the
/// empirical quantile stays at or below lambda for every grid point from m
/// up. Returns the 1-based index (None when no grid point qualifies, in
/// which case the threshold is the quantile at `lambda_bar`) and the
/// selected threshold.
pub fn select_lambda(draws: &BootstrapDraws, alpha: f64) -> Result<(Option<usize>, f64, Vec<f64>)> {
    let m_total = draws.grid().len();
    let mut quantiles = Vec::with_capacity(m_total);
    for m in 0..m_total {
        quantiles.push(empirical_quantile(&draws.column(m), alpha)?);
    }
    let lambdas = draws.grid().values();
    let mut m_hat = None;
    for m in (0..m_total).rev() {
        if quantiles[m] <= lambdas[m] {
            m_hat = Some(m + 1);
        } else {
            break;
        }
    }
    let threshold = match m_hat {
        Some(m) => quantiles[m - 1],
        // Beyond lambda_bar the solution is exactly zero and the criterion
        // no longer depends on lambda, so the scan's limit is the quantile
        // at lambda_bar itself.
        None => empirical_quantile(draws.sentinel_column(), alpha)?,
    };
    Ok((m_hat, threshold, quantiles))
}

/// Everything that does not depend on alpha: decomposition, grid, path
/// residuals and bootstrap draws. Computed once and shared across the alpha
/// grid when evaluating p-values.
pub struct PreparedTest {
    pub decomposition: FactorDecomposition,
    pub grid: LambdaGrid,
    pub draws: BootstrapDraws,
    pub statistic: f64,
    config: TestConfig,
}

/// Run steps 1-4 of the procedure (everything except the alpha-dependent
/// quantile selection).
pub fn prepare(data: &PanelData, cfg: &TestConfig) -> Result<PreparedTest> {
    if cfg.grid_size < 1 {
        return Err(Error::InvalidArgument("grid size M must be >= 1".into()));
    }
    let (t, p) = (data.num_obs(), data.num_regressors());
    let k_hat = match cfg.k {
        KChoice::Fixed(k) => k,
        KChoice::Auto { k_max } => {
            let cap = k_max.unwrap_or_else(|| 8.min(t.min(p).saturating_sub(1)));
            estimate_num_factors(data.x(), cap)?
        }
    };
    let est = estimate_factors(data.x(), k_hat)?;
    let dec = residualize(data, &est)?;

    if dec.y_tilde.norm() <= 1e-12 * data.y().norm() {
        return Err(Error::Degenerate(
            "residualized outcome is numerically zero: Y lies in the projector span".into(),
        ));
    }
    let lambda_bar = compute_lambda_bar(&dec.u_hat, &dec.y_tilde)?;
    let grid = LambdaGrid::equidistant(lambda_bar, cfg.grid_size)?;
    let path = fit_path(&dec.u_hat, &dec.y_tilde, &grid)?;

    // T x (M+1) residual matrix, ascending lambda, sentinel last.
    let m_total = grid.len();
    let mut residual_matrix = DMatrix::zeros(t, m_total + 1);
    for (i, f) in path.iter().enumerate() {
        // path is in descending lambda order
        residual_matrix.set_column(m_total - 1 - i, &f.residuals);
    }
    residual_matrix.set_column(m_total, &dec.y_tilde);

    let draws = compute_draws(&dec.u_hat, &residual_matrix, &grid, cfg.num_bootstrap, cfg.seed)?;

    // Same expression as lambda_bar, bit for bit.
    let statistic = grid.lambda_bar();
    Ok(PreparedTest {
        decomposition: dec,
        grid,
        draws,
        statistic,
        config: *cfg,
    })
}

/// Decision of the level-alpha test.
#[derive(Clone, Debug, Serialize)]
pub struct TestResult {
    pub alpha: f64,
    /// `(2/T) ||U_hat' Y_tilde||_inf`, identical to the grid's lambda_bar.
    pub statistic: f64,
    pub threshold: f64,
    /// 1-based grid index of the selected penalty; None when the fallback
    /// at lambda_bar was used.
    pub m_hat: Option<usize>,
    pub reject: bool,
    pub k_hat: usize,
    pub grid_size: usize,
    pub num_bootstrap: usize,
    pub seed: u64,
    /// Empirical quantile at every grid point, ascending lambda.
    pub quantile_path: Vec<f64>,
}

/// Level-alpha decision from prepared machinery.
pub fn decide(prepared: &PreparedTest, alpha: f64) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let (m_hat, threshold, quantile_path) = select_lambda(&prepared.draws, alpha)?;
    Ok(TestResult {
        alpha,
        statistic: prepared.statistic,
        threshold,
        m_hat,
        reject: prepared.statistic > threshold,
        k_hat: prepared.decomposition.k_hat,
        grid_size: prepared.config.grid_size,
        num_bootstrap: prepared.config.num_bootstrap,
        seed: prepared.config.seed,
        quantile_path,
    })
}

/// Full test: factor extraction, residualization, path, bootstrap, decision.
pub fn run_test(data: &PanelData, alpha: f64, cfg: &TestConfig) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let prepared = prepare(data, cfg)?;
    decide(&prepared, alpha)
}

/// P-value over a grid of levels, sharing one set of bootstrap draws.
#[derive(Clone, Debug, Serialize)]
pub struct PValueResult {
    pub alpha_grid: Vec<f64>,
    /// Largest rejecting alpha in the grid; 1.0 when none rejects.
    pub p_value: f64,
    pub decisions: Vec<bool>,
    pub statistic: f64,
    pub k_hat: usize,
    pub grid_size: usize,
    pub num_bootstrap: usize,
    pub seed: u64,
}

/// P-value = largest alpha in the grid at which the level-alpha test
/// rejects; grid endpoints 0 and 1 are dropped silently.
pub fn p_value(data: &PanelData, alpha_grid: &[f64], cfg: &TestConfig) -> Result<PValueResult> {
    let grid: Vec<f64> = alpha_grid
        .iter()
        .copied()
        .filter(|&a| a > 0.0 && a < 1.0)
        .collect();
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty alpha grid".into()));
    }
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "alpha grid must be strictly increasing".into(),
        ));
    }
    let prepared = prepare(data, cfg)?;
    let mut decisions = Vec::with_capacity(grid.len());
    let mut p = 1.0f64;
    for &alpha in &grid {
        let res = decide(&prepared, alpha)?;
        if res.reject {
            p = alpha;
        }
        decisions.push(res.reject);
    }
    Ok(PValueResult {
        alpha_grid: grid,
        p_value: p,
        decisions,
        statistic: prepared.statistic,
        k_hat: prepared.decomposition.k_hat,
        grid_size: cfg.grid_size,
        num_bootstrap: cfg.num_bootstrap,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vector, StreamKey};

    fn random_instance(t: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let z = standard_normal_vector(StreamKey::new(seed, "boot-test", 0), t * p + t).unwrap();
        (
            DMatrix::from_column_slice(t, p, &z[..t * p]),
            DVector::from_column_slice(&z[t * p..]),
        )
    }

    #[test]
    fn criterion_zero_residuals() {
        let (u, _) = random_instance(6, 4, 1);
        let res = DVector::zeros(6);
        let e = DVector::from_element(6, 1.3);
        assert_eq!(criterion_q(&u, &res, &e), 0.0);
    }

    #[test]
    fn criterion_unit_multipliers_collapse() {
        let (u, y) = random_instance(8, 5, 2);
        let ones = DVector::from_element(8, 1.0);
        let q = criterion_q(&u, &y, &ones);
        assert_eq!(q, sup_score(&u, &y));
    }

    #[test]
    fn criterion_hand_example() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let res = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let e = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let q = criterion_q(&u, &res, &e);
        assert!((q - 8.0 / 3.0).abs() < 1e-12, "q = {q}");
    }

    #[test]
    fn quantile_order_statistics() {
        let draws: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&draws, 0.05).unwrap(), 10.0);
        assert_eq!(empirical_quantile(&draws, 0.5).unwrap(), 5.0);
        assert!(empirical_quantile(&[], 0.1).is_err());
    }

    #[test]
    fn quantile_matches_normal_oracle() {
        let z = standard_normal_vector(StreamKey::new(7, "qtest", 0), 10_000).unwrap();
        let q = empirical_quantile(&z, 0.1).unwrap();
        assert!((q - 1.2816).abs() < 0.05, "q = {q}");
    }

    #[test]
    fn quantile_monotone_in_alpha() {
        let z = standard_normal_vector(StreamKey::new(8, "qtest", 1), 500).unwrap();
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.25, 0.5, 0.9] {
            let q = empirical_quantile(&z, alpha).unwrap();
            assert!(q <= prev);
            prev = q;
        }
    }

    fn synthetic_draws(quantile_targets: &[f64], grid: LambdaGrid) -> BootstrapDraws {
        // Constant draws: every quantile equals the target value.
        let l = 10;
        BootstrapDraws {
            q: (0..l)
                .map(|_| quantile_targets.to_vec())
                .collect(),
            sentinel: vec![grid.lambda_bar(); l],
            grid,
            seed: 0,
        }
    }

    #[test]
    fn select_full_satisfaction_picks_first() {
        let grid = LambdaGrid::equidistant(1.0, 5).unwrap();
        let q: Vec<f64> = grid.values().iter().map(|&l| 0.5 * l).collect();
        let draws = synthetic_draws(&q, grid);
        let (m_hat, threshold, _) = select_lambda(&draws, 0.1).unwrap();
        assert_eq!(m_hat, Some(1));
        assert_eq!(threshold, q[0]);
    }

    #[test]
    fn select_empty_set_uses_sentinel() {
        let grid = LambdaGrid::equidistant(1.0, 5).unwrap();
        let q = vec![1.0; 5]; // constant at lambda_bar, above every grid point
        let draws = synthetic_draws(&q, grid);
        let (m_hat, threshold, _) = select_lambda(&draws, 0.1).unwrap();
        assert_eq!(m_hat, None);
        assert_eq!(threshold, 1.0);
    }

    #[test]
    fn select_synthetic_crossing() {
        // q(lambda_m) = lambda_m + (0.5 - m/M) lambda_bar on M = 10:
        // satisfied iff m/M >= 0.5, so m_hat = 5.
        let m_total = 10;
        let grid = LambdaGrid::equidistant(1.0, m_total).unwrap();
        let q: Vec<f64> = grid
            .values()
            .iter()
            .enumerate()
            .map(|(i, &l)| l + (0.5 - (i + 1) as f64 / m_total as f64))
            .collect();
        let draws = synthetic_draws(&q, grid);
        let (m_hat, _, _) = select_lambda(&draws, 0.1).unwrap();
        assert_eq!(m_hat, Some(5));
    }

    fn small_panel(seed: u64) -> PanelData {
        let (x, mut y) = random_instance(30, 20, seed);
        // Add a bit of factor structure so K estimation is sensible.
        let f = standard_normal_vector(StreamKey::new(seed, "f", 0), 30).unwrap();
        let mut x = x;
        for t in 0..30 {
            for j in 0..20 {
                x[(t, j)] += 2.0 * f[t] * ((j as f64 * 0.37).cos());
            }
            y[t] += 0.5 * f[t];
        }
        PanelData::new(y, x, None).unwrap()
    }

    #[test]
    fn statistic_equals_lambda_bar_bitwise() {
        let data = small_panel(3);
        let cfg = TestConfig {
            grid_size: 30,
            num_bootstrap: 50,
            ..TestConfig::default()
        };
        let res = run_test(&data, 0.1, &cfg).unwrap();
        let prepared = prepare(&data, &cfg).unwrap();
        assert_eq!(res.statistic.to_bits(), prepared.grid.lambda_bar().to_bits());
    }

    #[test]
    fn sentinel_column_with_unit_multipliers_equals_statistic() {
        // The criterion at lambda_bar with e = 1 is the statistic itself.
        let data = small_panel(4);
        let prepared = prepare(&data, &TestConfig::default()).unwrap();
        let ones = DVector::from_element(data.num_obs(), 1.0);
        let q = criterion_q(&prepared.decomposition.u_hat, &prepared.decomposition.y_tilde, &ones);
        assert_eq!(q.to_bits(), prepared.statistic.to_bits());
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let data = small_panel(5);
        assert!(run_test(&data, 0.0, &TestConfig::default()).is_err());
        assert!(run_test(&data, 1.0, &TestConfig::default()).is_err());
        assert!(run_test(&data, 1.5, &TestConfig::default()).is_err());
    }

    #[test]
    fn degenerate_outcome_reported() {
        // Y exactly in the span of the estimated factors.
        let (x, _) = random_instance(20, 10, 6);
        let est = crate::factor::estimate_factors(&x, 2).unwrap();
        let y: DVector<f64> = &est.f_hat * DVector::from_vec(vec![0.7, -0.2]);
        let data = PanelData::new(y, x, None).unwrap();
        let cfg = TestConfig {
            k: KChoice::Fixed(2),
            ..TestConfig::default()
        };
        assert!(matches!(
            run_test(&data, 0.1, &cfg),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let data = small_panel(7);
        let cfg = TestConfig {
            grid_size: 40,
            num_bootstrap: 60,
            ..TestConfig::default()
        };
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_test(&data, 0.1, &cfg).unwrap())
        };
        let a = serde_json::to_string(&run_with(1)).unwrap();
        let b = serde_json::to_string(&run_with(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn p_value_consistent_with_tests() {
        let data = small_panel(8);
        let cfg = TestConfig {
            grid_size: 40,
            num_bootstrap: 80,
            ..TestConfig::default()
        };
        let alphas: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
        let pv = p_value(&data, &alphas, &cfg).unwrap();
        for (i, &alpha) in pv.alpha_grid.iter().enumerate() {
            let res = run_test(&data, alpha, &cfg).unwrap();
            assert_eq!(res.reject, pv.decisions[i]);
        }
        if pv.decisions.iter().all(|&d| !d) {
            assert_eq!(pv.p_value, 1.0);
        } else {
            let largest = pv
                .alpha_grid
                .iter()
                .zip(&pv.decisions)
                .filter(|(_, &d)| d)
                .map(|(&a, _)| a)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(pv.p_value, largest);
        }
    }

    #[test]
    fn p_value_drops_grid_endpoints() {
        let data = small_panel(9);
        let cfg = TestConfig {
            grid_size: 20,
            num_bootstrap: 40,
            ..TestConfig::default()
        };
        let pv = p_value(&data, &[0.0, 0.05, 1.0], &cfg).unwrap();
        assert_eq!(pv.alpha_grid, vec![0.05]);
        assert!(pv.p_value == 0.05 || pv.p_value == 1.0);
        assert!(p_value(&data, &[0.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn draws_deterministic_in_seed() {
        let data = small_panel(10);
        let cfg = TestConfig {
            grid_size: 15,
            num_bootstrap: 25,
            ..TestConfig::default()
        };
        let a = prepare(&data, &cfg).unwrap();
        let b = prepare(&data, &cfg).unwrap();
        assert_eq!(a.draws.q, b.draws.q);
        assert_eq!(a.draws.sentinel, b.draws.sentinel);
        let cfg2 = TestConfig { seed: 43, ..cfg };
        let c = prepare(&data, &cfg2).unwrap();
        assert_ne!(a.draws.q, c.draws.q);
    }

    #[test]
    fn draws_are_nonnegative() {
        let data = small_panel(11);
        let prepared = prepare(
            &data,
            &TestConfig {
                grid_size: 10,
                num_bootstrap: 20,
                ..TestConfig::default()
            },
        )
        .unwrap();
        assert!(prepared.draws.q.iter().flatten().all(|&v| v >= 0.0));
        assert!(prepared.draws.sentinel.iter().all(|&v| v >= 0.0));
    }
}
