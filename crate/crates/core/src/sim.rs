//! Monte Carlo data generation and rejection-frequency tables.
//!
//! Panels follow the factor-augmented sparse model: AR(1) factors with
//! standard-normal stationary law, AR(1) idiosyncratic shocks with Toeplitz
//! stationary covariance, AR(1) regression errors, uniform loadings redrawn
//! every replication, and a sparse signal `beta = m (1, 0.5, 0, ..., 0)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::{decide, prepare, KChoice, TestConfig};
use crate::error::{Error, Result};
use crate::factor::PanelData;
use crate::rng::{standard_normal_vector, uniform_vector, StreamKey};

/// Shape of the sparse signal vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalShape {
    /// beta = m (1, 0.5, 0, ..., 0): exactly two nonzero coordinates.
    TwoSparse,
    /// beta_j = m 0.5^(j-1): geometric decay, for sensitivity runs.
    GeometricDecay,
}

/// Dependency design: the AR(1) coefficient triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Design {
    /// rho_f = rho_u = rho_e = 0 (i.i.d. across t).
    One,
    /// rho_f = 0.6, rho_u = 0.1, rho_e = 0.
    Two,
    /// rho_f = 0.6, rho_u = rho_e = 0.1.
    Three,
    Custom { rho_f: f64, rho_u: f64, rho_e: f64 },
}

impl Design {
    pub fn rhos(&self) -> (f64, f64, f64) {
        match *self {
            Design::One => (0.0, 0.0, 0.0),
            Design::Two => (0.6, 0.1, 0.0),
            Design::Three => (0.6, 0.1, 0.1),
            Design::Custom { rho_f, rho_u, rho_e } => (rho_f, rho_u, rho_e),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Design::One => "1".into(),
            Design::Two => "2".into(),
            Design::Three => "3".into(),
            Design::Custom { rho_f, rho_u, rho_e } => {
                format!("custom({rho_f},{rho_u},{rho_e})")
            }
        }
    }
}

/// Full configuration of one Monte Carlo cell.
#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub t: usize,
    pub p: usize,
    pub k: usize,
    pub design: Design,
    /// Signal strength m.
    pub signal: f64,
    pub signal_shape: SignalShape,
    pub gamma_star: Vec<f64>,
    /// Toeplitz base of the idiosyncratic covariance, Sigma_ij = base^|i-j|.
    pub sigma_decay: f64,
    pub reps: usize,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub grid_size: usize,
    pub num_bootstrap: usize,
    /// None: estimate K per replication by the eigenvalue-ratio rule.
    pub k_fixed: Option<usize>,
    pub k_max: Option<usize>,
}

impl SimulationConfig {
    pub fn new(t: usize, p: usize, design: Design, signal: f64) -> Self {
        Self {
            t,
            p,
            k: 2,
            design,
            signal,
            signal_shape: SignalShape::TwoSparse,
            gamma_star: vec![0.5, 0.5],
            sigma_decay: 0.6,
            reps: 2000,
            seed: 42,
            alphas: vec![0.1, 0.05, 0.01],
            grid_size: 200,
            num_bootstrap: 200,
            k_fixed: None,
            k_max: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let (rho_f, rho_u, rho_e) = self.design.rhos();
        for (name, rho) in [("rho_f", rho_f), ("rho_u", rho_u), ("rho_e", rho_e)] {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {rho}"
                )));
            }
        }
        if self.k < 1 || self.t < 2 || self.p < 1 {
            return Err(Error::InvalidArgument(
                "simulation needs K >= 1, T >= 2, p >= 1".into(),
            ));
        }
        if self.gamma_star.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "gamma_star has {} entries but K = {}",
                self.gamma_star.len(),
                self.k
            )));
        }
        if self.signal < 0.0 {
            return Err(Error::InvalidArgument("signal strength m must be >= 0".into()));
        }
        Ok(())
    }

    fn beta_star(&self) -> DVector<f64> {
        let mut beta = DVector::zeros(self.p);
        match self.signal_shape {
            SignalShape::TwoSparse => {
                beta[0] = self.signal;
                if self.p > 1 {
                    beta[1] = 0.5 * self.signal;
                }
            }
            SignalShape::GeometricDecay => {
                let mut w = 1.0;
                for j in 0..self.p {
                    beta[j] = self.signal * w;
                    w *= 0.5;
                }
            }
        }
        beta
    }
}

/// Sampler for N(0, Sigma) via a Cholesky factor computed once.
pub struct CovarianceSampler {
    chol: DMatrix<f64>,
}

impl CovarianceSampler {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance matrix is not SPD".into()))?;
        Ok(Self { chol: chol.l() })
    }

    /// Map i.i.d. standard normals to a correlated draw.
    pub fn transform(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.chol * z
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

pub fn toeplitz(p: usize, base: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| base.powi((i as i32 - j as i32).abs()))
}

/// Cholesky factor of the Toeplitz covariance, cached per (p, base).
fn cached_toeplitz_chol(p: usize, base: f64) -> Result<Arc<DMatrix<f64>>> {
    type Cache = Mutex<HashMap<(usize, u64), Arc<DMatrix<f64>>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (p, base.to_bits());
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let sampler = CovarianceSampler::new(&toeplitz(p, base))?;
    let arc = Arc::new(sampler.chol);
    cache.lock().unwrap().insert(key, arc.clone());
    Ok(arc)
}

/// Intermediate draws kept for white-box tests of the generator.
#[allow(dead_code)]
pub(crate) struct PanelInternals {
    pub factors: DMatrix<f64>,
    pub idio: DMatrix<f64>,
    pub errors: DVector<f64>,
    pub beta_star: DVector<f64>,
}

pub(crate) fn generate_panel_full(
    cfg: &SimulationConfig,
    rep_index: u64,
) -> Result<(PanelData, PanelInternals)> {
    cfg.validate()?;
    let (t, p, k) = (cfg.t, cfg.p, cfg.k);
    let (rho_f, rho_u, rho_e) = cfg.design.rhos();
    let chol = cached_toeplitz_chol(p, cfg.sigma_decay)?;

    let loadings = uniform_vector(
        StreamKey::new(cfg.seed, "dgp/load", rep_index),
        p * k,
        -1.0,
        1.0,
    )?;
    let b = DMatrix::from_column_slice(p, k, &loadings);

    // Factors: stationary N(0, I_K) start, AR(1) recursion.
    let zf = standard_normal_vector(StreamKey::new(cfg.seed, "dgp/fac", rep_index), t * k)?;
    let mut factors = DMatrix::zeros(t, k);
    let f_scale = (1.0 - rho_f * rho_f).sqrt();
    for j in 0..k {
        factors[(0, j)] = zf[j];
    }
    for ti in 1..t {
        for j in 0..k {
            factors[(ti, j)] = rho_f * factors[(ti - 1, j)] + f_scale * zf[ti * k + j];
        }
    }

    // Idiosyncratic shocks: stationary N(0, Sigma) start.
    let zu = standard_normal_vector(StreamKey::new(cfg.seed, "dgp/idio", rep_index), t * p)?;
    let mut idio = DMatrix::zeros(t, p);
    let u_scale = (1.0 - rho_u * rho_u).sqrt();
    let mut prev = chol.as_ref() * DVector::from_column_slice(&zu[..p]);
    idio.row_mut(0).copy_from(&prev.transpose());
    for ti in 1..t {
        let innov = chol.as_ref() * DVector::from_column_slice(&zu[ti * p..(ti + 1) * p]);
        let cur = &prev * rho_u + innov * u_scale;
        idio.row_mut(ti).copy_from(&cur.transpose());
        prev = cur;
    }

    // Regression errors.
    let ze = standard_normal_vector(StreamKey::new(cfg.seed, "dgp/err", rep_index), t)?;
    let mut errors = DVector::zeros(t);
    let e_scale = (1.0 - rho_e * rho_e).sqrt();
    errors[0] = ze[0];
    for ti in 1..t {
        errors[ti] = rho_e * errors[ti - 1] + e_scale * ze[ti];
    }

    let beta_star = cfg.beta_star();
    let gamma = DVector::from_column_slice(&cfg.gamma_star);
    let x = &factors * b.transpose() + &idio;
    let y = &factors * &gamma + &idio * &beta_star + &errors;

    let data = PanelData::new(y, x, None)?;
    Ok((
        data,
        PanelInternals {
            factors,
            idio,
            errors,
            beta_star,
        },
    ))
}

/// Generate one replication's panel. All randomness comes from streams keyed
/// `(seed, "dgp/*", rep_index)`; loadings are redrawn per replication.
pub fn generate_panel(cfg: &SimulationConfig, rep_index: u64) -> Result<PanelData> {
    generate_panel_full(cfg, rep_index).map(|(data, _)| data)
}

/// One row of a rejection table.
#[derive(Clone, Debug, Serialize)]
pub struct RejectionRow {
    pub design: String,
    pub t: usize,
    pub p: usize,
    pub m: f64,
    pub alpha: f64,
    pub reps: usize,
    pub reject_rate: f64,
    pub degenerate_count: usize,
    pub seconds: f64,
}

/// Rejection frequencies for one simulation cell (one m, several alphas).
#[derive(Clone, Debug, Serialize)]
pub struct RejectionTable {
    pub rows: Vec<RejectionRow>,
    pub seed: u64,
}

impl RejectionTable {
    pub fn merge(tables: Vec<RejectionTable>) -> RejectionTable {
        let seed = tables.first().map_or(0, |t| t.seed);
        RejectionTable {
            rows: tables.into_iter().flat_map(|t| t.rows).collect(),
            seed,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("design,T,p,m,alpha,reps,reject_rate,degenerate_count,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.4},{},{:.3}\n",
                r.design, r.t, r.p, r.m, r.alpha, r.reps, r.reject_rate, r.degenerate_count,
                r.seconds
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>8} {:>6} {:>6} {:>6} {:>7} {:>6} {:>12} {:>11} {:>9}\n",
            "design", "T", "p", "m", "alpha", "reps", "reject_rate", "degenerate", "seconds"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:>8} {:>6} {:>6} {:>6} {:>7} {:>6} {:>12.4} {:>11} {:>9.3}\n",
                r.design, r.t, r.p, r.m, r.alpha, r.reps, r.reject_rate, r.degenerate_count,
                r.seconds
            ));
        }
        out
    }
}

enum RepOutcome {
    Decisions(Vec<bool>),
    Degenerate,
}

/// Run the Monte Carlo for one cell: per replication, generate a panel and
/// test at every alpha (sharing bootstrap draws across alphas).
/// Replications run in parallel and each owns its stream keys, so the table
/// is deterministic in the seed and independent of worker count.
pub fn run_monte_carlo(cfg: &SimulationConfig) -> Result<RejectionTable> {
    cfg.validate()?;
    if cfg.reps < 1 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    for &alpha in &cfg.alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0, 1), got {alpha}"
            )));
        }
    }
    let start = Instant::now();
    let outcomes: Vec<Result<RepOutcome>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = generate_panel(cfg, rep)?;
            let test_cfg = TestConfig {
                grid_size: cfg.grid_size,
                num_bootstrap: cfg.num_bootstrap,
                k: match cfg.k_fixed {
                    Some(k) => KChoice::Fixed(k),
                    None => KChoice::Auto { k_max: cfg.k_max },
                },
                seed: StreamKey::new(cfg.seed, "rep", rep).derive_seed(),
            };
            match prepare(&data, &test_cfg) {
                Ok(prepared) => {
                    let mut decisions = Vec::with_capacity(cfg.alphas.len());
                    for &alpha in &cfg.alphas {
                        decisions.push(decide(&prepared, alpha)?.reject);
                    }
                    Ok(RepOutcome::Decisions(decisions))
                }
                Err(Error::Degenerate(_)) => Ok(RepOutcome::Degenerate),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut reject_counts = vec![0usize; cfg.alphas.len()];
    let mut degenerate = 0usize;
    let mut decided = 0usize;
    for outcome in outcomes {
        match outcome? {
            RepOutcome::Decisions(d) => {
                decided += 1;
                for (i, r) in d.into_iter().enumerate() {
                    if r {
                        reject_counts[i] += 1;
                    }
                }
            }
            RepOutcome::Degenerate => degenerate += 1,
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let rows = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| RejectionRow {
            design: cfg.design.label(),
            t: cfg.t,
            p: cfg.p,
            m: cfg.signal,
            alpha,
            reps: cfg.reps,
            reject_rate: if decided > 0 {
                reject_counts[i] as f64 / decided as f64
            } else {
                f64::NAN
            },
            degenerate_count: degenerate,
            seconds,
        })
        .collect();
    Ok(RejectionTable {
        rows,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toeplitz_cholesky_reconstructs() {
        let sigma = toeplitz(8, 0.6);
        let sampler = CovarianceSampler::new(&sigma).unwrap();
        let l = sampler.cholesky_factor();
        assert!((l * l.transpose() - sigma).abs().max() < 1e-10);
    }

    #[test]
    fn non_spd_rejected() {
        let mut sigma = toeplitz(3, 0.6);
        sigma[(0, 0)] = -1.0;
        assert!(CovarianceSampler::new(&sigma).is_err());
    }

    #[test]
    fn identity_covariance_uncorrelated() {
        let sampler = CovarianceSampler::new(&DMatrix::identity(2, 2)).unwrap();
        let n = 100_000;
        let z = standard_normal_vector(StreamKey::new(3, "cov-test", 0), 2 * n).unwrap();
        let mut cross = 0.0;
        for i in 0..n {
            let v = sampler.transform(&DVector::from_vec(vec![z[2 * i], z[2 * i + 1]]));
            cross += v[0] * v[1];
        }
        assert!((cross / n as f64).abs() < 0.01);
    }

    #[test]
    fn toeplitz_correlation_recovered() {
        let sampler = CovarianceSampler::new(&toeplitz(2, 0.6)).unwrap();
        let n = 100_000;
        let z = standard_normal_vector(StreamKey::new(4, "cov-test", 1), 2 * n).unwrap();
        let (mut s01, mut s0, mut s1) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let v = sampler.transform(&DVector::from_vec(vec![z[2 * i], z[2 * i + 1]]));
            s01 += v[0] * v[1];
            s0 += v[0] * v[0];
            s1 += v[1] * v[1];
        }
        let corr = s01 / (s0 * s1).sqrt();
        assert!((corr - 0.6).abs() < 0.01, "corr = {corr}");
    }

    #[test]
    fn invalid_rho_rejected() {
        let cfg = SimulationConfig::new(
            50,
            10,
            Design::Custom {
                rho_f: 1.0,
                rho_u: 0.0,
                rho_e: 0.0,
            },
            0.0,
        );
        assert!(generate_panel(&cfg, 0).is_err());
    }

    #[test]
    fn panel_shapes_and_determinism() {
        let cfg = SimulationConfig::new(40, 15, Design::Two, 0.3);
        let a = generate_panel(&cfg, 5).unwrap();
        let b = generate_panel(&cfg, 5).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x(), b.x());
        assert_eq!(a.num_obs(), 40);
        assert_eq!(a.num_regressors(), 15);
        let c = generate_panel(&cfg, 6).unwrap();
        assert_ne!(a.y(), c.y());
    }

    #[test]
    fn design_nesting_bit_for_bit() {
        // Design 2 with all AR coefficients zero is exactly Design 1.
        let mut cfg2 = SimulationConfig::new(30, 10, Design::Two, 0.2);
        cfg2.design = Design::Custom {
            rho_f: 0.0,
            rho_u: 0.0,
            rho_e: 0.0,
        };
        let cfg1 = SimulationConfig::new(30, 10, Design::One, 0.2);
        let a = generate_panel(&cfg2, 3).unwrap();
        let b = generate_panel(&cfg1, 3).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x(), b.x());
    }

    #[test]
    fn null_outcome_unrelated_to_idio() {
        // m = 0: least squares of Y on the true idiosyncratic shocks is flat.
        let mut cfg = SimulationConfig::new(10_000, 10, Design::One, 0.0);
        cfg.reps = 1;
        let (data, internals) = generate_panel_full(&cfg, 0).unwrap();
        let u = &internals.idio;
        let coef = (u.transpose() * u)
            .try_inverse()
            .unwrap()
            * (u.transpose() * data.y());
        assert!(coef.amax() < 0.05, "max coef = {}", coef.amax());
    }

    #[test]
    fn iid_errors_have_no_lag_one_autocorrelation() {
        let mut cfg = SimulationConfig::new(2000, 5, Design::One, 0.0);
        cfg.reps = 1;
        let (data, internals) = generate_panel_full(&cfg, 1).unwrap();
        // Y minus the factor part is beta* u + errors = errors under m = 0.
        let gamma = DVector::from_column_slice(&cfg.gamma_star);
        let resid = data.y() - &internals.factors * gamma;
        let t = cfg.t;
        let mean = resid.sum() / t as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..t {
            let d = resid[i] - mean;
            den += d * d;
            if i + 1 < t {
                num += d * (resid[i + 1] - mean);
            }
        }
        let rho = num / den;
        assert!(rho.abs() < 3.0 / (t as f64).sqrt(), "rho = {rho}");
    }

    #[test]
    fn stationary_idio_covariance() {
        let mut cfg = SimulationConfig::new(100_000, 5, Design::One, 0.0);
        cfg.reps = 1;
        let (_, internals) = generate_panel_full(&cfg, 2).unwrap();
        let u = &internals.idio;
        let t = cfg.t as f64;
        let cov = u.transpose() * u / t;
        let target = toeplitz(5, 0.6);
        assert!((cov - target).abs().max() < 0.02);
    }

    #[test]
    fn stationary_marginals() {
        let mut cfg = SimulationConfig::new(50_000, 3, Design::Three, 0.0);
        cfg.reps = 1;
        let (_, internals) = generate_panel_full(&cfg, 3).unwrap();
        let t = cfg.t as f64;
        for j in 0..cfg.k {
            let var = internals.factors.column(j).norm_squared() / t;
            assert!((var - 1.0).abs() < 0.05, "factor var = {var}");
        }
        let evar = internals.errors.norm_squared() / t;
        assert!((evar - 1.0).abs() < 0.05, "error var = {evar}");
    }

    #[test]
    fn beta_shapes() {
        let cfg = SimulationConfig::new(10, 6, Design::One, 0.4);
        let beta = cfg.beta_star();
        assert_eq!(beta[0], 0.4);
        assert_eq!(beta[1], 0.2);
        assert!(beta.iter().skip(2).all(|&b| b == 0.0));
        let mut gcfg = cfg.clone();
        gcfg.signal_shape = SignalShape::GeometricDecay;
        let gb = gcfg.beta_star();
        assert_eq!(gb[0], 0.4);
        assert_eq!(gb[1], 0.2);
        assert_eq!(gb[2], 0.1);
    }

    #[test]
    fn single_rep_table_deterministic() {
        let mut cfg = SimulationConfig::new(40, 20, Design::One, 0.0);
        cfg.reps = 1;
        cfg.grid_size = 20;
        cfg.num_bootstrap = 20;
        let a = run_monte_carlo(&cfg).unwrap();
        let b = run_monte_carlo(&cfg).unwrap();
        let strip = |t: &RejectionTable| {
            t.rows
                .iter()
                .map(|r| (r.alpha, r.reject_rate, r.degenerate_count))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }
}
