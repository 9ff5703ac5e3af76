//! Domain types for data, parameters, and hyperparameters, plus the exact
//! log-density evaluations used by the sampler and the MAP estimator.
//!
//! The generative model: each observation column is y(t) = Ψ s(t) + e(t)
//! with e(t) ~ N(0, σ²I), Ψ an M×N matrix with orthonormal columns (N ≤ M),
//! and each source entry a Bernoulli-Gaussian draw: active with probability
//! λ_n, active amplitudes N(0, a_n²).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{max_orthonormality_deviation, polar_orthonormal_factor, ORTHO_INPUT_TOL};

pub const LN_2PI: f64 = 1.8378770664093453;

/// The M×T data matrix, observations y(t) as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    x: DMatrix<f64>,
}

impl ObservationSet {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::dimension("observations must be at least 1x1"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("observations must be finite"));
        }
        Ok(ObservationSet { x })
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column(&self, t: usize) -> nalgebra::DVectorView<'_, f64> {
        self.x.column(t)
    }

    /// Total energy Σ_t ‖y(t)‖².
    pub fn energy(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }
}

/// An M×N matrix with orthonormal columns; the dictionary whose atoms mix
/// the sources.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    psi: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(psi: DMatrix<f64>) -> Result<Self> {
        let (m, n) = psi.shape();
        if n == 0 || n > m {
            return Err(Error::dimension(format!(
                "dictionary requires 1 <= N <= M, got M={m}, N={n}"
            )));
        }
        let dev = max_orthonormality_deviation(&psi);
        if dev > ORTHO_INPUT_TOL {
            return Err(Error::domain(format!(
                "dictionary columns not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(Dictionary { psi })
    }

    pub fn m(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n(&self) -> usize {
        self.psi.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn column(&self, n: usize) -> nalgebra::DVectorView<'_, f64> {
        self.psi.column(n)
    }

    pub fn orthonormality_deviation(&self) -> f64 {
        max_orthonormality_deviation(&self.psi)
    }

    /// Project back onto the manifold (nearest matrix with orthonormal
    /// columns, by polar factorization).
    pub fn reorthonormalize(&mut self) -> Result<()> {
        self.psi = polar_orthonormal_factor(&self.psi)?;
        Ok(())
    }

    pub(crate) fn set_column(&mut self, n: usize, col: &DVector<f64>) {
        self.psi.set_column(n, col);
    }
}

/// Source amplitudes S and binary activity indicators Q (both N×T), kept
/// mutually consistent: an inactive entry has amplitude exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceState {
    s: DMatrix<f64>,
    q: DMatrix<u8>,
}

impl SourceState {
    pub fn new(s: DMatrix<f64>, q: DMatrix<u8>) -> Result<Self> {
        if s.shape() != q.shape() {
            return Err(Error::dimension(format!(
                "S {:?} and Q {:?} shapes differ",
                s.shape(),
                q.shape()
            )));
        }
        for (v, &flag) in s.iter().zip(q.iter()) {
            if flag > 1 {
                return Err(Error::domain("indicators must be 0 or 1"));
            }
            if flag == 0 && *v != 0.0 {
                return Err(Error::domain(
                    "inactive entries must have amplitude exactly zero",
                ));
            }
            if !v.is_finite() {
                return Err(Error::domain("amplitudes must be finite"));
            }
        }
        Ok(SourceState { s, q })
    }

    pub fn zeros(n: usize, t: usize) -> Self {
        SourceState {
            s: DMatrix::zeros(n, t),
            q: DMatrix::zeros(n, t),
        }
    }

    /// Derive indicators from the nonzero pattern of an amplitude matrix.
    pub fn from_amplitudes(s: DMatrix<f64>) -> Result<Self> {
        let q = s.map(|v| u8::from(v != 0.0));
        SourceState::new(s, q)
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.s.ncols()
    }

    pub fn amplitudes(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn indicators(&self) -> &DMatrix<u8> {
        &self.q
    }

    pub fn is_active(&self, n: usize, t: usize) -> bool {
        self.q[(n, t)] == 1
    }

    pub fn amplitude(&self, n: usize, t: usize) -> f64 {
        self.s[(n, t)]
    }

    pub fn set_active(&mut self, n: usize, t: usize, amplitude: f64) {
        self.q[(n, t)] = 1;
        self.s[(n, t)] = amplitude;
    }

    pub fn set_inactive(&mut self, n: usize, t: usize) {
        self.q[(n, t)] = 0;
        self.s[(n, t)] = 0.0;
    }

    /// Number of active entries m_n(1) in row n.
    pub fn count_active(&self, n: usize) -> usize {
        (0..self.t_len()).filter(|&t| self.q[(n, t)] == 1).count()
    }

    /// Time indices where row n is active.
    pub fn active_times(&self, n: usize) -> Vec<usize> {
        (0..self.t_len()).filter(|&t| self.q[(n, t)] == 1).collect()
    }

    /// Squared norm ‖s_n‖² of row n.
    pub fn row_norm_sq(&self, n: usize) -> f64 {
        (0..self.t_len()).map(|t| self.s[(n, t)].powi(2)).sum()
    }

    /// Total number of active entries.
    pub fn total_active(&self) -> usize {
        self.q.iter().filter(|&&f| f == 1).count()
    }
}

/// Noise variance and per-source sparsity/amplitude hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperState {
    pub sigma2: f64,
    pub lambda: DVector<f64>,
    pub a2: DVector<f64>,
}

impl HyperState {
    pub fn new(sigma2: f64, lambda: DVector<f64>, a2: DVector<f64>) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::domain(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        if lambda.len() != a2.len() {
            return Err(Error::dimension("lambda and a2 lengths differ"));
        }
        if lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::domain("activation probabilities must lie in [0,1]"));
        }
        if a2.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("active variances must be positive"));
        }
        Ok(HyperState { sigma2, lambda, a2 })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }
}

/// Fixed model dimensions and hyper-hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Noise-variance prior shape; the model fixes it at 2.
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
}

fn default_nu() -> f64 {
    2.0
}

fn default_alpha0() -> f64 {
    2.0
}

fn default_alpha1() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(m: usize, n: usize, t: usize) -> Result<Self> {
        let cfg = ModelConfig {
            m,
            n,
            t,
            nu: default_nu(),
            alpha0: default_alpha0(),
            alpha1: default_alpha1(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_alphas(mut self, alpha0: f64, alpha1: f64) -> Result<Self> {
        self.alpha0 = alpha0;
        self.alpha1 = alpha1;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.t == 0 || self.n == 0 {
            return Err(Error::Config("dimensions must be at least 1".into()));
        }
        if self.n >= self.m {
            return Err(Error::Config(format!(
                "under-complete model requires N < M, got N={}, M={}",
                self.n, self.m
            )));
        }
        if self.nu != 2.0 {
            return Err(Error::Config(format!(
                "noise-prior shape nu is fixed at 2, got {}",
                self.nu
            )));
        }
        if !(self.alpha0 > 0.0) || !(self.alpha1 > 0.0) {
            return Err(Error::Config("alpha0 and alpha1 must be positive".into()));
        }
        Ok(())
    }
}

/// Residual energy Σ_t ‖y(t) − Ψ s(t)‖².
pub fn residual_energy(obs: &ObservationSet, dict: &Dictionary, src: &SourceState) -> f64 {
    let recon = dict.matrix() * src.amplitudes();
    obs.matrix()
        .iter()
        .zip(recon.iter())
        .map(|(y, r)| (y - r).powi(2))
        .sum()
}

/// Full Gaussian log-likelihood of the observations.
pub fn log_likelihood(
    obs: &ObservationSet,
    dict: &Dictionary,
    src: &SourceState,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::domain(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    check_dims(obs, dict, src)?;
    let mt = (obs.m() * obs.t_len()) as f64;
    let r = residual_energy(obs, dict, src);
    Ok(-0.5 * mt * (LN_2PI + sigma2.ln()) - 0.5 * r / sigma2)
}

/// Log prior of one source row under the Bernoulli-Gaussian mixture:
/// m(0)·log(1-λ) + m(1)·log(λ) plus a N(0, a²) log-density per active entry.
pub fn bg_log_prior(
    amplitudes: &[f64],
    indicators: &[u8],
    lambda_n: f64,
    a2_n: f64,
) -> Result<f64> {
    if amplitudes.len() != indicators.len() {
        return Err(Error::dimension("amplitude/indicator lengths differ"));
    }
    if !(0.0..=1.0).contains(&lambda_n) {
        return Err(Error::domain(format!(
            "activation probability must lie in [0,1], got {lambda_n}"
        )));
    }
    if !(a2_n > 0.0) {
        return Err(Error::domain(format!(
            "active variance must be positive, got {a2_n}"
        )));
    }
    let m1 = indicators.iter().filter(|&&q| q == 1).count();
    let m0 = indicators.len() - m1;
    let mut lp = 0.0;
    if m0 > 0 {
        lp += m0 as f64 * (1.0 - lambda_n).ln();
    }
    if m1 > 0 {
        lp += m1 as f64 * lambda_n.ln();
    }
    for (s, &q) in amplitudes.iter().zip(indicators.iter()) {
        if q == 1 {
            lp += -0.5 * (LN_2PI + a2_n.ln()) - 0.5 * s * s / a2_n;
        }
    }
    Ok(lp)
}

/// Log of the joint posterior of (S, Ψ) with the noise variance and all
/// hyperparameters integrated out, up to one additive constant shared by all
/// states of the same dimensions:
///
/// Σ_n log B(1+m_n(1), 1+m_n(0)) − (MT/2)·log R
///   + Σ_n [ log Γ(α₀+m_n(1)/2) − (α₀+m_n(1)/2)·log(α₁+‖s_n‖²/2)
///           − (m_n(1)/2)·log 2π ]
///
/// where R is the residual energy. The 2π term comes from the Gaussian slab
/// normalizers and depends on the activity counts, so it cannot be dropped
/// as a constant. A zero residual yields −∞, which any argmax comparison
/// treats as strictly smallest.
pub fn log_marginal_posterior(
    src: &SourceState,
    dict: &Dictionary,
    obs: &ObservationSet,
    cfg: &ModelConfig,
) -> Result<f64> {
    check_dims(obs, dict, src)?;
    cfg.validate()?;
    let mt = (obs.m() * obs.t_len()) as f64;
    let t = src.t_len();
    let r = residual_energy(obs, dict, src);
    if r <= 0.0 {
        log::warn!("zero residual in marginal posterior; returning -inf sentinel");
        return Ok(f64::NEG_INFINITY);
    }
    let mut lp = -0.5 * mt * r.ln();
    for n in 0..src.n() {
        let m1 = src.count_active(n) as f64;
        let m0 = t as f64 - m1;
        let half_norm = 0.5 * src.row_norm_sq(n);
        lp += ln_beta(1.0 + m1, 1.0 + m0);
        lp += ln_gamma(cfg.alpha0 + 0.5 * m1);
        lp -= (cfg.alpha0 + 0.5 * m1) * (cfg.alpha1 + half_norm).ln();
        lp -= 0.5 * m1 * LN_2PI;
    }
    Ok(lp)
}

/// Signal-to-noise ratio in dB of a clean signal against a noise variance:
/// 10·log10(Σ_t ‖x(t)‖² / (M·T·σ²)).
pub fn snr_db(obs_clean: &ObservationSet, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::domain(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    let energy = obs_clean.energy();
    if energy == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mt = (obs_clean.m() * obs_clean.t_len()) as f64;
    Ok(10.0 * (energy / (mt * sigma2)).log10())
}

fn check_dims(obs: &ObservationSet, dict: &Dictionary, src: &SourceState) -> Result<()> {
    if dict.m() != obs.m() {
        return Err(Error::dimension(format!(
            "dictionary rows {} != observation rows {}",
            dict.m(),
            obs.m()
        )));
    }
    if dict.n() != src.n() {
        return Err(Error::dimension(format!(
            "dictionary atoms {} != source rows {}",
            dict.n(),
            src.n()
        )));
    }
    if src.t_len() != obs.t_len() {
        return Err(Error::dimension(format!(
            "source columns {} != observation columns {}",
            src.t_len(),
            obs.t_len()
        )));
    }
    Ok(())
}
