//! Joint-distribution sampler-correctness harness.
//!
//! Two ways of sampling the joint distribution of (parameters, data) must
//! agree: (a) forward simulation from the priors and the likelihood, and
//! (b) a chain that alternates the Gibbs parameter updates with data
//! regeneration from the likelihood. Any discrepancy in the moments of
//! monitored statistics exposes a wrong conditional.
//!
//! The harness needs proper priors on σ² and a² so the forward side exists;
//! the production σ² update is recovered by setting its prior parameters to
//! zero, which the chain side here never does.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::model::{Dictionary, HyperState, ModelConfig, ObservationSet};
use crate::rng::{
    sample_beta, sample_inverse_gamma, sample_uniform_stiefel, RngStream,
    StiefelMethod,
};
use crate::sampler::{
    lambda_posterior, sample_amplitudes_column, sample_dictionary_column, sample_lambda,
    sample_noise_variance_with_prior, sweep_indicators_column, GibbsState,
};
use crate::synthdata::generate_bg_sources;

/// Deliberate corruption of one conditional, used to confirm the harness
/// actually detects broken updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InjectedFault {
    #[default]
    None,
    /// Swap the Beta shape parameters of the λ update.
    SwappedLambdaShapes,
    /// Drop the 1/2 on the row energy in the a² update scale.
    UnhalvedActiveVarianceScale,
}

/// Harness configuration. The σ² and a² priors must be proper with finite
/// second moments for the z-scores to make sense, so the defaults use
/// comfortable shapes.
#[derive(Clone, Debug)]
pub struct JointCheckConfig {
    pub m: usize,
    pub n: usize,
    pub t: usize,
    /// a² prior IG(alpha0, alpha1).
    pub alpha0: f64,
    pub alpha1: f64,
    /// σ² prior IG(shape, scale).
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    pub rounds: usize,
    pub seed: u64,
    pub fault: InjectedFault,
}

impl Default for JointCheckConfig {
    fn default() -> Self {
        JointCheckConfig {
            m: 6,
            n: 2,
            t: 12,
            alpha0: 5.0,
            alpha1: 4.0,
            sigma2_shape: 5.0,
            sigma2_scale: 1.0,
            rounds: 10_000,
            seed: 0,
            fault: InjectedFault::None,
        }
    }
}

/// One monitored statistic with its two estimates and the discrepancy
/// z-score.
#[derive(Clone, Debug, Serialize)]
pub struct StatReport {
    pub name: String,
    pub forward_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

/// Full harness output.
#[derive(Clone, Debug, Serialize)]
pub struct JointCheckReport {
    pub stats: Vec<StatReport>,
    pub max_abs_z: f64,
    pub rounds: usize,
}

impl JointCheckReport {
    pub fn all_below(&self, bound: f64) -> bool {
        self.stats.iter().all(|s| s.z.abs() < bound)
    }

    pub fn any_above(&self, bound: f64) -> bool {
        self.stats.iter().any(|s| s.z.abs() > bound)
    }
}

fn stat_names(n: usize) -> Vec<String> {
    let mut names = vec![
        "sigma2".to_string(),
        "sigma2_sq".to_string(),
        "mean_x_sq".to_string(),
        "mean_s_sq".to_string(),
    ];
    for i in 0..n {
        names.push(format!("lambda_{i}"));
        names.push(format!("lambda_sq_{i}"));
        names.push(format!("a2_{i}"));
        names.push(format!("act_rate_{i}"));
        names.push(format!("lambda_x_act_{i}"));
    }
    names
}

fn collect_stats(state: &GibbsState, obs: &ObservationSet) -> Vec<f64> {
    let n = state.src.n();
    let t = state.src.t_len() as f64;
    let mt = (obs.m() * obs.t_len()) as f64;
    let mut stats = vec![
        state.hyp.sigma2,
        state.hyp.sigma2 * state.hyp.sigma2,
        obs.energy() / mt,
        state
            .src
            .amplitudes()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            / (n as f64 * t),
    ];
    for i in 0..n {
        let lambda = state.hyp.lambda[i];
        let rate = state.src.count_active(i) as f64 / t;
        stats.push(lambda);
        stats.push(lambda * lambda);
        stats.push(state.hyp.a2[i]);
        stats.push(rate);
        stats.push(lambda * rate);
    }
    stats
}

fn draw_joint_from_prior(
    cfg: &JointCheckConfig,
    rng: &mut RngStream,
) -> Result<(GibbsState, ObservationSet)> {
    let lambda = DVector::from_fn(cfg.n, |_, _| rng.uniform_01());
    let mut a2 = DVector::zeros(cfg.n);
    for i in 0..cfg.n {
        a2[i] = sample_inverse_gamma(cfg.alpha0, cfg.alpha1, rng)?;
    }
    let sigma2 = sample_inverse_gamma(cfg.sigma2_shape, cfg.sigma2_scale, rng)?;
    let hyp = HyperState::new(sigma2, lambda, a2)?;
    let lambda_slice: Vec<f64> = hyp.lambda.iter().copied().collect();
    let a2_slice: Vec<f64> = hyp.a2.iter().copied().collect();
    let src = generate_bg_sources(cfg.n, cfg.t, &lambda_slice, &a2_slice, rng)?;
    let psi = sample_uniform_stiefel(cfg.m, cfg.n, rng, StiefelMethod::Direct)?;
    let dict = Dictionary::new(psi)?;
    let state = GibbsState {
        src,
        dict,
        hyp,
        iteration: 0,
    };
    let obs = regenerate_data(&state, rng)?;
    Ok((state, obs))
}

fn regenerate_data(state: &GibbsState, rng: &mut RngStream) -> Result<ObservationSet> {
    let clean = state.dict.matrix() * state.src.amplitudes();
    let sd = state.hyp.sigma2.sqrt();
    let noisy = DMatrix::from_fn(clean.nrows(), clean.ncols(), |r, c| {
        clean[(r, c)] + sd * rng.standard_normal()
    });
    ObservationSet::new(noisy)
}

fn chain_round(
    cfg: &JointCheckConfig,
    model_cfg: &ModelConfig,
    state: &mut GibbsState,
    obs: &mut ObservationSet,
    rng: &mut RngStream,
) -> Result<()> {
    for t in 0..cfg.t {
        sweep_indicators_column(obs, state, t, rng);
        sample_amplitudes_column(obs, state, t, rng)?;
    }
    for n in 0..cfg.n {
        sample_dictionary_column(obs, state, n, rng)?;
    }
    sample_noise_variance_with_prior(obs, state, cfg.sigma2_shape, cfg.sigma2_scale, rng)?;
    for n in 0..cfg.n {
        match cfg.fault {
            InjectedFault::SwappedLambdaShapes => {
                let (a, b) = lambda_posterior(&state.src, n);
                state.hyp.lambda[n] = sample_beta(b, a, rng)?;
            }
            _ => {
                sample_lambda(state, n, rng)?;
            }
        }
    }
    for n in 0..cfg.n {
        match cfg.fault {
            InjectedFault::UnhalvedActiveVarianceScale => {
                let m1 = state.src.count_active(n) as f64;
                let shape = 0.5 * m1 + model_cfg.alpha0;
                let scale = state.src.row_norm_sq(n) + model_cfg.alpha1;
                state.hyp.a2[n] = sample_inverse_gamma(shape, scale, rng)?;
            }
            _ => {
                crate::sampler::sample_active_variance(state, n, model_cfg, rng)?;
            }
        }
    }
    *obs = regenerate_data(state, rng)?;
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean of an autocorrelated series via batch means.
fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.min(xs.len()).max(1);
    let len = xs.len() / b;
    if len == 0 {
        return 0.0;
    }
    let means: Vec<f64> = (0..b)
        .map(|i| mean(&xs[i * len..(i + 1) * len]))
        .collect();
    let grand = mean(&means);
    (variance(&means, grand) / b as f64).sqrt()
}

/// Run the harness: `rounds` forward draws against `rounds` chain rounds,
/// reporting a z-score per monitored statistic.
pub fn joint_distribution_check(cfg: &JointCheckConfig) -> Result<JointCheckReport> {
    let model_cfg = ModelConfig::new(cfg.m, cfg.n, cfg.t)?.with_alphas(cfg.alpha0, cfg.alpha1)?;
    let names = stat_names(cfg.n);
    let n_stats = names.len();

    let mut fwd_rng = RngStream::new(cfg.seed, 1);
    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.rounds); n_stats];
    for _ in 0..cfg.rounds {
        let (state, obs) = draw_joint_from_prior(cfg, &mut fwd_rng)?;
        for (k, v) in collect_stats(&state, &obs).into_iter().enumerate() {
            forward[k].push(v);
        }
    }

    let mut chain_rng = RngStream::new(cfg.seed, 2);
    let (mut state, mut obs) = draw_joint_from_prior(cfg, &mut chain_rng)?;
    let mut chain: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.rounds); n_stats];
    for _ in 0..cfg.rounds {
        chain_round(cfg, &model_cfg, &mut state, &mut obs, &mut chain_rng)?;
        for (k, v) in collect_stats(&state, &obs).into_iter().enumerate() {
            chain[k].push(v);
        }
    }

    let mut stats = Vec::with_capacity(n_stats);
    let mut max_abs_z: f64 = 0.0;
    for k in 0..n_stats {
        let mf = mean(&forward[k]);
        let mc = mean(&chain[k]);
        let se_f = (variance(&forward[k], mf) / cfg.rounds as f64).sqrt();
        let se_c = batch_se(&chain[k], 100);
        let denom = (se_f * se_f + se_c * se_c).sqrt();
        let z = if denom > 0.0 {
            (mf - mc) / denom
        } else if mf == mc {
            0.0
        } else {
            f64::INFINITY
        };
        max_abs_z = max_abs_z.max(z.abs());
        stats.push(StatReport {
            name: names[k].clone(),
            forward_mean: mf,
            chain_mean: mc,
            z,
        });
    }
    Ok(JointCheckReport {
        stats,
        max_abs_z,
        rounds: cfg.rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_instance_runs_and_is_finite() {
        let cfg = JointCheckConfig {
            m: 2,
            n: 1,
            t: 1,
            rounds: 500,
            seed: 3,
            ..JointCheckConfig::default()
        };
        let report = joint_distribution_check(&cfg).unwrap();
        assert!(report.stats.iter().all(|s| s.z.is_finite()));
    }

    #[test]
    fn short_correct_run_has_moderate_z() {
        // A fast sanity run; the acceptance suite runs the full 10^4 rounds.
        let cfg = JointCheckConfig {
            rounds: 2_000,
            seed: 11,
            ..JointCheckConfig::default()
        };
        let report = joint_distribution_check(&cfg).unwrap();
        assert!(
            report.max_abs_z < 5.0,
            "unexpectedly large z: {:#?}",
            report.stats
        );
    }
}
