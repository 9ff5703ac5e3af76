//! Partially collapsed Gibbs sampler.
//!
//! One iteration, in fixed order: for every time index, resample the
//! indicator column with the amplitudes marginalized out, then immediately
//! redraw the active amplitudes as a block; then resample every dictionary
//! column from its von Mises-Fisher conditional in the null space of the
//! remaining columns; then the noise variance, the activation probabilities,
//! and the active-amplitude variances from their conjugate conditionals.
//!
//! The indicator step before the amplitude block is what makes the sampler
//! partially collapsed; permuting those two steps would change the
//! stationary distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    log_marginal_posterior, residual_energy, Dictionary, HyperState, ModelConfig, ObservationSet,
    SourceState,
};
use crate::rng::{
    null_space_basis, polar_orthonormal_factor, sample_beta, sample_gaussian,
    sample_inverse_gamma, sample_vmf, RngStream, VmfParams, ORTHO_INPUT_TOL,
};

/// Activation probabilities are clamped away from {0,1} inside log-odds;
/// Beta draws can round to exact 0 or 1 in floating point.
pub const LAMBDA_CLAMP: f64 = 1e-12;

/// Full parameter state of the chain.
#[derive(Clone, Debug)]
pub struct GibbsState {
    pub src: SourceState,
    pub dict: Dictionary,
    pub hyp: HyperState,
    pub iteration: usize,
}

impl GibbsState {
    /// Data-driven start: dictionary from the leading left singular vectors
    /// of X rotated toward sparse loadings, sources all inactive, noise
    /// variance at the mean data energy, flat activation guess, prior-mean
    /// amplitude variance.
    ///
    /// The sparse rotation matters at high SNR: the SVD fixes the signal
    /// subspace but leaves an arbitrary rotation inside it, and the
    /// column-at-a-time dictionary moves rotate slowly once the noise
    /// variance is small.
    pub fn init_from_data(obs: &ObservationSet, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if obs.m() != cfg.m || obs.t_len() != cfg.t {
            return Err(Error::dimension(format!(
                "observations are {}x{}, config says {}x{}",
                obs.m(),
                obs.t_len(),
                cfg.m,
                cfg.t
            )));
        }
        let mut psi = leading_left_singular_vectors(obs.matrix(), cfg.n)?;
        if cfg.n > 1 {
            rotate_to_sparse_loadings(obs.matrix(), &mut psi);
            refine_by_thresholded_procrustes(obs.matrix(), &mut psi);
        }
        let dict = Dictionary::new(psi)?;
        let src = SourceState::zeros(cfg.n, cfg.t);
        let mt = (cfg.m * cfg.t) as f64;
        let sigma2 = (obs.energy() / mt).max(f64::MIN_POSITIVE);
        let hyp = HyperState::new(
            sigma2,
            DVector::from_element(cfg.n, 0.1),
            DVector::from_element(cfg.n, cfg.alpha1 / cfg.alpha0),
        )?;
        Ok(GibbsState {
            src,
            dict,
            hyp,
            iteration: 0,
        })
    }
}

/// Varimax rotation of the initial basis: pairwise plane rotations of the
/// loadings A = XᵀΨ (and of Ψ with them) maximizing the fourth-moment
/// sparsity criterion Σ_j [⟨a⁴⟩_j − ⟨a²⟩_j²].
fn rotate_to_sparse_loadings(x: &DMatrix<f64>, psi: &mut DMatrix<f64>) {
    let mut loadings = x.transpose() * &*psi;
    let t = loadings.nrows();
    let n = loadings.ncols();
    let t_f = t as f64;
    for _ in 0..50 {
        let mut largest_angle: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut su, mut sv, mut suv, mut su2v2) = (0.0, 0.0, 0.0, 0.0);
                for r in 0..t {
                    let a = loadings[(r, p)];
                    let b = loadings[(r, q)];
                    let u = a * a - b * b;
                    let v = 2.0 * a * b;
                    su += u;
                    sv += v;
                    suv += u * v;
                    su2v2 += u * u - v * v;
                }
                let num = 2.0 * (suv - su * sv / t_f);
                let den = su2v2 - (su * su - sv * sv) / t_f;
                let angle = 0.25 * num.atan2(den);
                if angle.abs() < 1e-9 {
                    continue;
                }
                largest_angle = largest_angle.max(angle.abs());
                let (c, s) = (angle.cos(), angle.sin());
                for r in 0..t {
                    let a = loadings[(r, p)];
                    let b = loadings[(r, q)];
                    loadings[(r, p)] = c * a + s * b;
                    loadings[(r, q)] = -s * a + c * b;
                }
                for r in 0..psi.nrows() {
                    let a = psi[(r, p)];
                    let b = psi[(r, q)];
                    psi[(r, p)] = c * a + s * b;
                    psi[(r, q)] = -s * a + c * b;
                }
            }
        }
        if largest_angle < 1e-7 {
            break;
        }
    }
}

/// Alternate hard-thresholded source estimates with the orthogonal
/// Procrustes fit of the dictionary. Each round keeps only loading entries
/// clearly above the per-row bulk scale (robust MAD estimate), then maps
/// the basis onto the polar factor of X·Ŝᵀ. A few rounds push the residual
/// rotation of the start down to the noise level, which the column-wise
/// sampler cannot do quickly once the noise variance is small.
fn refine_by_thresholded_procrustes(x: &DMatrix<f64>, psi: &mut DMatrix<f64>) {
    let n = psi.ncols();
    let t = x.ncols();
    for _ in 0..30 {
        let loadings = psi.transpose() * x;
        let mut target = loadings.clone();
        for row in 0..n {
            let mut magnitudes: Vec<f64> = (0..t).map(|c| loadings[(row, c)].abs()).collect();
            magnitudes.sort_by(f64::total_cmp);
            // Median |loading| estimates the inactive-bulk scale; with
            // sparse rows the median sits in the bulk.
            let bulk = magnitudes[t / 2] / 0.6745;
            let tau = 5.0 * bulk;
            for c in 0..t {
                if target[(row, c)].abs() < tau {
                    target[(row, c)] = 0.0;
                }
            }
        }
        // Every row needs surviving entries for the fit to make sense.
        if (0..n).any(|row| (0..t).all(|c| target[(row, c)] == 0.0)) {
            break;
        }
        let prod = x * target.transpose();
        match polar_orthonormal_factor(&prod) {
            Ok(next) => {
                let moved = (&next - &*psi).amax();
                *psi = next;
                if moved < 1e-10 {
                    break;
                }
            }
            Err(_) => break,
        }
    }
}

fn leading_left_singular_vectors(x: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let mut svd = x.clone().svd(true, false);
    svd.sort_by_singular_values();
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Degenerate("SVD did not produce left singular vectors".into()))?;
    let avail = u.ncols().min(n);
    let mut psi = DMatrix::zeros(x.nrows(), n);
    psi.columns_mut(0, avail).copy_from(&u.columns(0, avail));
    if avail < n {
        // Fewer singular vectors than atoms (T < N); complete the basis.
        let partial = psi.columns(0, avail).clone_owned();
        let fill = null_space_basis(&partial)?;
        for k in avail..n {
            psi.set_column(k, &fill.column(k - avail));
        }
    }
    Ok(psi)
}

/// Scalars of one marginalized indicator update, in the notation of the
/// recursive scheme: flip direction δ, variance ratio μ = a²/σ², the
/// quadratic coefficients τ and η, and the resulting log-odds increment Δu.
/// `active` lists the columns currently forming G.
#[derive(Clone, Debug)]
pub struct IndicatorWork {
    pub delta: f64,
    pub mu: f64,
    pub tau: f64,
    pub eta: f64,
    pub delta_u: f64,
    pub active: Vec<usize>,
}

impl IndicatorWork {
    /// Evaluate the update scalars for source `n` at time `t` against the
    /// current state.
    pub fn compute(obs: &ObservationSet, state: &GibbsState, t: usize, n: usize) -> Self {
        let src = &state.src;
        let dict = &state.dict;
        let sigma2 = state.hyp.sigma2;
        let y = obs.column(t);
        let psi_n = dict.column(n);

        let active = src.active_sources_at(t);
        let delta = if src.is_active(n, t) { -1.0 } else { 1.0 };
        let mu = state.hyp.a2[n] / sigma2;

        // Gᵀψ_n and Gᵀy over the active columns.
        let mut g_psi_sq = 0.0;
        let mut gy_gpsi = 0.0;
        for &i in &active {
            let col = dict.column(i);
            let d_psi = col.dot(&psi_n);
            g_psi_sq += d_psi * d_psi;
            gy_gpsi += col.dot(&y) * d_psi;
        }

        let shrink = mu / (1.0 + mu);
        let tau = delta + mu * psi_n.norm_squared() - mu * shrink * g_psi_sq;
        let eta = y.dot(&psi_n) - shrink * gy_gpsi;

        let lambda = state.hyp.lambda[n].clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP);
        // δτ stays positive whenever the dictionary is orthonormal:
        // τ = 1+μ on an activate move and -1/(1+μ) on the reverse, up to
        // the orthonormality tolerance.
        let delta_tau = (delta * tau).max(f64::MIN_POSITIVE);
        let delta_u = delta_tau.ln() - (mu / (sigma2 * tau)) * eta * eta
            + 2.0 * delta * (1.0 / lambda - 1.0).ln();

        IndicatorWork {
            delta,
            mu,
            tau,
            eta,
            delta_u,
            active,
        }
    }

    /// Probability of flipping the indicator from its current value.
    pub fn flip_probability(&self) -> f64 {
        1.0 - 1.0 / (1.0 + (-0.5 * self.delta_u).exp())
    }

    /// Log-odds that the indicator equals 1, regardless of its current
    /// value; comparable with [`indicator_logodds_oracle`].
    pub fn log_odds_active(&self) -> f64 {
        -0.5 * self.delta * self.delta_u
    }
}

impl SourceState {
    /// Indices of sources active at time t, ascending.
    pub fn active_sources_at(&self, t: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_active(i, t)).collect()
    }
}

/// One recursive sweep over the indicator column q(t): each source in order
/// gets a marginalized flip proposal. Flipping a source off zeroes its
/// amplitude; flipping it on leaves the amplitude at zero for the block
/// redraw that must follow this sweep.
pub fn sweep_indicators_column(
    obs: &ObservationSet,
    state: &mut GibbsState,
    t: usize,
    rng: &mut RngStream,
) {
    for n in 0..state.src.n() {
        let work = IndicatorWork::compute(obs, state, t, n);
        let w = rng.uniform_01();
        if w > 1.0 / (1.0 + (-0.5 * work.delta_u).exp()) {
            if state.src.is_active(n, t) {
                state.src.set_inactive(n, t);
            } else {
                state.src.set_active(n, t, 0.0);
            }
        }
    }
}

/// Direct evaluation of the marginalized indicator conditional for source
/// `n` at time `t`: log-odds that q_n(t) = 1, computed from the two
/// candidate covariances B_ε = Ψ diag(a_i² q_i^[ε]) Ψᵀ + σ²I by explicit
/// factorization. Quadratic cost in M; intended for validation on small
/// instances.
pub fn indicator_logodds_oracle(
    obs: &ObservationSet,
    state: &GibbsState,
    t: usize,
    n: usize,
) -> Result<f64> {
    let m = obs.m();
    let y = obs.column(t).clone_owned();
    let lambda = state.hyp.lambda[n].clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP);

    let mut u = [0.0f64; 2];
    for (eps, u_eps) in u.iter_mut().enumerate() {
        let mut b = DMatrix::from_diagonal_element(m, m, state.hyp.sigma2);
        for i in 0..state.src.n() {
            let active = if i == n {
                eps == 1
            } else {
                state.src.is_active(i, t)
            };
            if active {
                let col = state.dict.column(i).clone_owned();
                let a2 = state.hyp.a2[i];
                for r in 0..m {
                    for c in 0..m {
                        b[(r, c)] += a2 * col[r] * col[c];
                    }
                }
            }
        }
        let chol = nalgebra::Cholesky::new(b).ok_or_else(|| {
            Error::Degenerate("indicator covariance not positive definite".into())
        })?;
        let ln_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let solved = chol.solve(&y);
        let quad = y.dot(&solved);
        *u_eps = quad + ln_det + 2.0 * (eps as f64) * (1.0 / lambda - 1.0).ln();
    }
    Ok(0.5 * (u[0] - u[1]))
}

/// Block redraw of the source column s(t) given the freshly updated
/// indicators: inactive entries are exactly zero, the active ones get
/// independent Gaussians with mean (μ/(1+μ))·ψᵀy(t) and variance σ²μ/(1+μ).
pub fn sample_amplitudes_column(
    obs: &ObservationSet,
    state: &mut GibbsState,
    t: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let y = obs.column(t);
    let sigma2 = state.hyp.sigma2;
    for n in 0..state.src.n() {
        if state.src.is_active(n, t) {
            let mu = state.hyp.a2[n] / sigma2;
            let gain = mu / (1.0 + mu);
            let mean = gain * state.dict.column(n).dot(&y);
            let var = sigma2 * gain;
            let draw = sample_gaussian(mean, var, rng)?;
            state.src.set_active(n, t, draw);
        } else {
            state.src.set_inactive(n, t);
        }
    }
    Ok(())
}

/// Resample dictionary column `n` from its von Mises-Fisher conditional,
/// expressed in the null space of the other columns.
pub fn sample_dictionary_column(
    obs: &ObservationSet,
    state: &mut GibbsState,
    n: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let m = state.dict.m();
    let n_atoms = state.dict.n();

    // Σ_t s_n(t)·[y(t) − Ψ₋ₙ s₋ₙ(t)]; only times where source n is active
    // contribute.
    let mut moment = DVector::zeros(m);
    for t in state.src.active_times(n) {
        let s_nt = state.src.amplitude(n, t);
        if s_nt == 0.0 {
            continue;
        }
        let mut resid = obs.column(t).clone_owned();
        for i in 0..n_atoms {
            if i == n {
                continue;
            }
            let s_it = state.src.amplitude(i, t);
            if s_it != 0.0 {
                resid.axpy(-s_it, &state.dict.column(i).clone_owned(), 1.0);
            }
        }
        moment.axpy(s_nt, &resid, 1.0);
    }

    let partial = remove_column(state.dict.matrix(), n);
    let basis = null_space_basis(&partial)?;
    let c = basis.transpose() * moment / state.hyp.sigma2;
    let params = VmfParams::new(c)?;
    let v = sample_vmf(&params, rng)?;
    state.dict.set_column(n, &(&basis * v));
    Ok(())
}

fn remove_column(mat: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let (rows, cols) = mat.shape();
    let mut out = DMatrix::zeros(rows, cols - 1);
    let mut j = 0;
    for col in 0..cols {
        if col != n {
            out.set_column(j, &mat.column(col));
            j += 1;
        }
    }
    out
}

/// Conjugate posterior parameters (shape, scale) of the noise variance:
/// IG(MT/2, R/2) with R the residual energy.
pub fn noise_variance_posterior(
    obs: &ObservationSet,
    dict: &Dictionary,
    src: &SourceState,
) -> (f64, f64) {
    let mt = (obs.m() * obs.t_len()) as f64;
    (0.5 * mt, 0.5 * residual_energy(obs, dict, src))
}

/// Draw σ² from IG(MT/2, R/2) and store it in the state.
pub fn sample_noise_variance(
    obs: &ObservationSet,
    state: &mut GibbsState,
    rng: &mut RngStream,
) -> Result<f64> {
    sample_noise_variance_with_prior(obs, state, 0.0, 0.0, rng)
}

/// Noise-variance draw with an explicit IG(shape0, scale0) prior folded in:
/// σ² ~ IG(MT/2 + shape0, R/2 + scale0). The production update uses (0, 0),
/// the marginalized scale-invariant prior; the sampler-correctness harness
/// passes a proper prior so it can forward-simulate.
pub fn sample_noise_variance_with_prior(
    obs: &ObservationSet,
    state: &mut GibbsState,
    shape0: f64,
    scale0: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let (shape, scale) = noise_variance_posterior(obs, &state.dict, &state.src);
    let scale = scale + scale0;
    if scale <= 0.0 {
        return Err(Error::Degenerate(
            "zero residual energy: noise variance draw undefined".into(),
        ));
    }
    let draw = sample_inverse_gamma(shape + shape0, scale, rng)?;
    state.hyp.sigma2 = draw;
    Ok(draw)
}

/// Conjugate posterior shape parameters of λ_n given the indicator counts:
/// density ∝ λ^{m(1)}(1−λ)^{m(0)}, i.e. Beta(m(1)+1, m(0)+1).
pub fn lambda_posterior(src: &SourceState, n: usize) -> (f64, f64) {
    let m1 = src.count_active(n) as f64;
    let m0 = src.t_len() as f64 - m1;
    (m1 + 1.0, m0 + 1.0)
}

/// Draw λ_n from its Beta conditional and store it.
pub fn sample_lambda(state: &mut GibbsState, n: usize, rng: &mut RngStream) -> Result<f64> {
    let (a, b) = lambda_posterior(&state.src, n);
    let draw = sample_beta(a, b, rng)?;
    state.hyp.lambda[n] = draw;
    Ok(draw)
}

/// Conjugate posterior parameters (shape, scale) of a_n²:
/// IG(m(1)/2 + α₀, ‖s_n‖²/2 + α₁).
pub fn active_variance_posterior(src: &SourceState, n: usize, cfg: &ModelConfig) -> (f64, f64) {
    let m1 = src.count_active(n) as f64;
    (0.5 * m1 + cfg.alpha0, 0.5 * src.row_norm_sq(n) + cfg.alpha1)
}

/// Draw a_n² from its inverse-gamma conditional and store it.
pub fn sample_active_variance(
    state: &mut GibbsState,
    n: usize,
    cfg: &ModelConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let (shape, scale) = active_variance_posterior(&state.src, n, cfg);
    let draw = sample_inverse_gamma(shape, scale, rng)?;
    state.hyp.a2[n] = draw;
    Ok(draw)
}

/// Run one full Gibbs iteration in the fixed partially collapsed order.
pub fn gibbs_iteration(
    obs: &ObservationSet,
    state: &mut GibbsState,
    cfg: &ModelConfig,
    rng: &mut RngStream,
) -> Result<()> {
    for t in 0..obs.t_len() {
        sweep_indicators_column(obs, state, t, rng);
        sample_amplitudes_column(obs, state, t, rng)?;
    }
    for n in 0..state.dict.n() {
        sample_dictionary_column(obs, state, n, rng)?;
    }
    let dev = state.dict.orthonormality_deviation();
    if dev > ORTHO_INPUT_TOL {
        log::warn!("dictionary drifted off the manifold (deviation {dev:.3e}); reprojecting");
        state.dict.reorthonormalize()?;
    }
    sample_noise_variance(obs, state, rng)?;
    for n in 0..state.src.n() {
        sample_lambda(state, n, rng)?;
    }
    for n in 0..state.src.n() {
        sample_active_variance(state, n, cfg, rng)?;
    }
    state.iteration += 1;
    Ok(())
}

/// Per-iteration scalar record kept for every iteration, burn-in included.
#[derive(Clone, Debug)]
pub struct IterationScalars {
    pub iteration: usize,
    pub sigma2: f64,
    pub lambda: Vec<f64>,
    pub a2: Vec<f64>,
    pub log_marginal: f64,
}

/// Chain output: retained post-burn-in states with their marginal
/// log-posterior values, plus the scalar history of the whole run.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    pub samples: Vec<GibbsState>,
    pub log_map_values: Vec<f64>,
    pub scalars: Vec<IterationScalars>,
    pub n_mc: usize,
    pub n_bi: usize,
}

impl ChainTrace {
    pub fn retained_len(&self) -> usize {
        self.samples.len()
    }
}

/// Sampler settings for one chain.
#[derive(Clone, Debug)]
pub struct SamplerSettings {
    pub n_mc: usize,
    pub n_bi: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub init: ChainInit,
}

/// How the chain state is initialized.
#[derive(Clone, Debug, Default)]
pub enum ChainInit {
    /// SVD dictionary, inactive sources, data-energy noise variance.
    #[default]
    FromData,
    /// Caller-provided state.
    State(Box<GibbsState>),
}

impl SamplerSettings {
    pub fn new(n_mc: usize, n_bi: usize, seed: u64) -> Self {
        SamplerSettings {
            n_mc,
            n_bi,
            seed,
            stream_id: 0,
            init: ChainInit::FromData,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.n_bi >= self.n_mc {
            return Err(Error::Config(format!(
                "burn-in must be shorter than the chain, got n_mc={}, n_bi={}",
                self.n_mc, self.n_bi
            )));
        }
        Ok(())
    }
}

/// Iteration-level progress reporting; the library never writes to the
/// console itself.
pub trait ProgressSink {
    fn on_iteration(&mut self, iteration: usize, n_mc: usize, log_marginal: f64);
}

/// Sink that ignores all progress.
pub struct NullProgress;

impl ProgressSink for NullProgress {
    fn on_iteration(&mut self, _iteration: usize, _n_mc: usize, _log_marginal: f64) {}
}

/// Run the full chain and collect the trace. Retains iterations
/// n_bi+1 ..= n_mc.
pub fn run_chain(
    obs: &ObservationSet,
    cfg: &ModelConfig,
    settings: &SamplerSettings,
    progress: &mut dyn ProgressSink,
) -> Result<ChainTrace> {
    settings.validate()?;
    cfg.validate()?;
    let mut rng = RngStream::new(settings.seed, settings.stream_id);
    let mut state = match &settings.init {
        ChainInit::FromData => GibbsState::init_from_data(obs, cfg)?,
        ChainInit::State(s) => (**s).clone(),
    };
    if state.dict.m() != obs.m() || state.src.t_len() != obs.t_len() || state.dict.n() != cfg.n {
        return Err(Error::dimension("initial state does not match data/config"));
    }

    let retained = settings.n_mc - settings.n_bi;
    let mut trace = ChainTrace {
        samples: Vec::with_capacity(retained),
        log_map_values: Vec::with_capacity(retained),
        scalars: Vec::with_capacity(settings.n_mc),
        n_mc: settings.n_mc,
        n_bi: settings.n_bi,
    };

    for iter in 1..=settings.n_mc {
        gibbs_iteration(obs, &mut state, cfg, &mut rng)?;
        let log_mp = log_marginal_posterior(&state.src, &state.dict, obs, cfg)?;
        trace.scalars.push(IterationScalars {
            iteration: iter,
            sigma2: state.hyp.sigma2,
            lambda: state.hyp.lambda.iter().copied().collect(),
            a2: state.hyp.a2.iter().copied().collect(),
            log_marginal: log_mp,
        });
        if iter > settings.n_bi {
            trace.samples.push(state.clone());
            trace.log_map_values.push(log_mp);
        }
        progress.on_iteration(iter, settings.n_mc, log_mp);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_uniform_stiefel, StiefelMethod};

    fn small_state(seed: u64, m: usize, n: usize, t: usize) -> (ObservationSet, GibbsState) {
        let mut rng = RngStream::new(seed, 0);
        let psi = sample_uniform_stiefel(m, n, &mut rng, StiefelMethod::Direct).unwrap();
        let dict = Dictionary::new(psi).unwrap();
        let mut src = SourceState::zeros(n, t);
        for nn in 0..n {
            for tt in 0..t {
                if rng.uniform_01() < 0.4 {
                    src.set_active(nn, tt, 2.0 * rng.standard_normal());
                }
            }
        }
        let hyp = HyperState::new(
            0.5,
            DVector::from_fn(n, |_, _| 0.2 + 0.6 * rng.uniform_01()),
            DVector::from_fn(n, |_, _| 0.5 + 4.0 * rng.uniform_01()),
        )
        .unwrap();
        let x = DMatrix::from_fn(m, t, |_, _| rng.standard_normal());
        let obs = ObservationSet::new(x).unwrap();
        (
            obs,
            GibbsState {
                src,
                dict,
                hyp,
                iteration: 0,
            },
        )
    }

    #[test]
    fn indicator_logodds_matches_two_hypothesis_closed_form() {
        // Single source: the activity posterior is the evidence ratio
        // between N(0, σ²I + a²ψψᵀ) and N(0, σ²I) times the prior odds.
        let (obs, state) = small_state(3, 5, 1, 4);
        for t in 0..obs.t_len() {
            let work = IndicatorWork::compute(&obs, &state, t, 0);
            let y = obs.column(t);
            let psi = state.dict.column(0);
            let (s2, a2) = (state.hyp.sigma2, state.hyp.a2[0]);
            let lambda = state.hyp.lambda[0];
            let yy = y.norm_squared();
            let yp = y.dot(&psi);
            let ll1 = -0.5
                * ((obs.m() as f64 - 1.0) * s2.ln()
                    + (s2 + a2).ln()
                    + (yy - yp * yp * a2 / (a2 + s2)) / s2);
            let ll0 = -0.5 * ((obs.m() as f64) * s2.ln() + yy / s2);
            let want = (lambda / (1.0 - lambda)).ln() + ll1 - ll0;
            assert!(
                (work.log_odds_active() - want).abs() < 1e-9,
                "t={t}: {} vs {want}",
                work.log_odds_active()
            );
        }
    }

    #[test]
    fn indicator_work_agrees_with_oracle() {
        for seed in 0..20 {
            let (obs, state) = small_state(100 + seed, 6, 3, 5);
            for t in 0..obs.t_len() {
                for n in 0..3 {
                    let work = IndicatorWork::compute(&obs, &state, t, n);
                    let oracle = indicator_logodds_oracle(&obs, &state, t, n).unwrap();
                    assert!(
                        (work.log_odds_active() - oracle).abs() < 1e-8,
                        "seed={seed} t={t} n={n}: {} vs {oracle}",
                        work.log_odds_active()
                    );
                }
            }
        }
    }

    #[test]
    fn spike_dominated_lambda_keeps_entry_inactive() {
        let (obs, mut state) = small_state(7, 5, 2, 3);
        state.hyp.lambda[0] = 0.0;
        state.src.set_inactive(0, 1);
        let work = IndicatorWork::compute(&obs, &state, 1, 0);
        assert!(work.log_odds_active() < -20.0);
        assert!(work.flip_probability() < 1e-8);
    }

    #[test]
    fn amplitudes_zero_column_stays_zero() {
        let (obs, mut state) = small_state(9, 5, 2, 3);
        let mut rng = RngStream::new(1, 0);
        for n in 0..2 {
            state.src.set_inactive(n, 0);
        }
        sample_amplitudes_column(&obs, &mut state, 0, &mut rng).unwrap();
        assert_eq!(state.src.amplitude(0, 0), 0.0);
        assert_eq!(state.src.amplitude(1, 0), 0.0);
        assert!(!state.src.is_active(0, 0));
    }

    #[test]
    fn amplitude_noiseless_limit_projects() {
        let (obs, mut state) = small_state(13, 6, 2, 4);
        state.hyp.sigma2 = 1e-14;
        state.src.set_active(0, 2, 1.0);
        state.src.set_inactive(1, 2);
        let psi_dot = state.dict.column(0).dot(&obs.column(2));
        let mut rng = RngStream::new(5, 0);
        sample_amplitudes_column(&obs, &mut state, 2, &mut rng).unwrap();
        assert!((state.src.amplitude(0, 2) - psi_dot).abs() < 1e-5);
    }

    #[test]
    fn dictionary_update_keeps_manifold() {
        let (obs, mut state) = small_state(17, 6, 3, 8);
        let mut rng = RngStream::new(2, 0);
        for n in 0..3 {
            sample_dictionary_column(&obs, &mut state, n, &mut rng).unwrap();
        }
        assert!(state.dict.orthonormality_deviation() < 1e-9);
    }

    #[test]
    fn dictionary_update_inactive_source_stays_in_complement() {
        let (obs, mut state) = small_state(19, 6, 3, 8);
        for t in 0..8 {
            state.src.set_inactive(1, t);
        }
        let others: Vec<DVector<f64>> = [0, 2]
            .iter()
            .map(|&i| state.dict.column(i).clone_owned())
            .collect();
        let mut rng = RngStream::new(3, 0);
        sample_dictionary_column(&obs, &mut state, 1, &mut rng).unwrap();
        let new_col = state.dict.column(1);
        for other in &others {
            assert!(other.dot(&new_col).abs() < 1e-10);
        }
        assert!((new_col.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noise_posterior_shape_counts_observations() {
        let (obs, state) = small_state(23, 50, 2, 100);
        let (shape, _) = noise_variance_posterior(&obs, &state.dict, &state.src);
        assert_eq!(shape, 2500.0);
    }

    #[test]
    fn noise_scale_doubles_with_residual() {
        let (obs, state) = small_state(29, 4, 2, 5);
        let (_, scale) = noise_variance_posterior(&obs, &state.dict, &state.src);
        let x2 = ObservationSet::new(obs.matrix() * 2.0).unwrap();
        let mut src2 = state.src.clone();
        for n in 0..src2.n() {
            for t in src2.active_times(n) {
                let amp = src2.amplitude(n, t);
                src2.set_active(n, t, amp * 2.0);
            }
        }
        let (_, scale2) = noise_variance_posterior(&x2, &state.dict, &src2);
        assert!((scale2 / scale - 4.0).abs() < 1e-9);
    }

    #[test]
    fn lambda_posterior_counts() {
        let mut src = SourceState::zeros(1, 100);
        assert_eq!(lambda_posterior(&src, 0), (1.0, 101.0));
        for t in 0..100 {
            src.set_active(0, t, 1.0);
        }
        assert_eq!(lambda_posterior(&src, 0), (101.0, 1.0));
        let mut src = SourceState::zeros(1, 100);
        for t in 0..12 {
            src.set_active(0, t, 1.0);
        }
        assert_eq!(lambda_posterior(&src, 0), (13.0, 89.0));
    }

    #[test]
    fn active_variance_posterior_params() {
        let cfg = ModelConfig::new(10, 1, 5).unwrap();
        let mut src = SourceState::zeros(1, 5);
        // Empty row reduces to the prior.
        assert_eq!(active_variance_posterior(&src, 0, &cfg), (2.0, 1.0));
        for t in 0..5 {
            src.set_active(0, t, 10.0);
        }
        let (shape, scale) = active_variance_posterior(&src, 0, &cfg);
        assert_eq!(shape, 4.5);
        assert_eq!(scale, 251.0);
        // Conditional mean scale/(shape-1) = 251/3.5.
        assert!((scale / (shape - 1.0) - 251.0 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn run_chain_single_retained_sample() {
        let (obs, _) = small_state(31, 6, 2, 5);
        let cfg = ModelConfig::new(6, 2, 5).unwrap();
        let settings = SamplerSettings::new(4, 3, 7);
        let trace = run_chain(&obs, &cfg, &settings, &mut NullProgress).unwrap();
        assert_eq!(trace.retained_len(), 1);
        assert_eq!(trace.scalars.len(), 4);
        assert_eq!(trace.log_map_values.len(), 1);
    }

    #[test]
    fn run_chain_rejects_bad_settings() {
        let (obs, _) = small_state(37, 6, 2, 5);
        let cfg = ModelConfig::new(6, 2, 5).unwrap();
        let settings = SamplerSettings::new(5, 5, 7);
        assert!(run_chain(&obs, &cfg, &settings, &mut NullProgress).is_err());
    }

    #[test]
    fn run_chain_is_deterministic() {
        let (obs, _) = small_state(41, 6, 2, 6);
        let cfg = ModelConfig::new(6, 2, 6).unwrap();
        let settings = SamplerSettings::new(12, 4, 99);
        let a = run_chain(&obs, &cfg, &settings, &mut NullProgress).unwrap();
        let b = run_chain(&obs, &cfg, &settings, &mut NullProgress).unwrap();
        assert_eq!(a.log_map_values, b.log_map_values);
        for (sa, sb) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(sa.src.amplitudes(), sb.src.amplitudes());
            assert_eq!(sa.dict.matrix(), sb.dict.matrix());
            assert_eq!(sa.hyp.sigma2, sb.hyp.sigma2);
        }
    }
}
