//! Point estimates and posterior summaries from a chain trace: entrywise
//! MMSE averages, the joint MAP pair under the marginalized posterior,
//! activation probabilities, and active-count histograms.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{log_marginal_posterior, Dictionary, ModelConfig, ObservationSet, SourceState};
use crate::rng::polar_orthonormal_factor;
use crate::sampler::ChainTrace;

/// Posterior summary assembled from the retained samples.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    /// Entrywise mean of the source amplitudes.
    pub s_mmse: DMatrix<f64>,
    /// Entrywise mean of the dictionary samples; generally off-manifold.
    pub psi_mmse: DMatrix<f64>,
    /// Nearest on-manifold version of `psi_mmse` (polar projection).
    pub psi_mmse_projected: Dictionary,
    /// Mean of the indicators: posterior probability of activity per entry.
    pub q_prob: DMatrix<f64>,
    /// Joint MAP pair under the marginalized posterior.
    pub s_map: SourceState,
    pub psi_map: Dictionary,
    /// Marginal log-posterior at the MAP pair.
    pub log_map_value: f64,
    /// Retained-sample index of the MAP pair.
    pub map_index: usize,
    /// Per-source posterior pmf of the active count K_n, indexed 0..=T.
    pub k_histograms: Vec<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn from_trace(trace: &ChainTrace) -> Result<Self> {
        let (s_mmse, psi_mmse, q_prob) = mmse_estimates(trace)?;
        let psi_mmse_projected = Dictionary::new(polar_orthonormal_factor(&psi_mmse)?)?;
        let (s_map, psi_map, log_map_value, map_index) = map_estimate(trace)?;
        let n = s_mmse.nrows();
        let k_histograms = (0..n)
            .map(|row| active_count_histogram(trace, row))
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorSummary {
            s_mmse,
            psi_mmse,
            psi_mmse_projected,
            q_prob,
            s_map,
            psi_map,
            log_map_value,
            map_index,
            k_histograms,
        })
    }
}

/// Entrywise means of (S, Ψ, Q) over the retained samples. The mean of Q is
/// the posterior probability of each entry being active.
pub fn mmse_estimates(trace: &ChainTrace) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if trace.samples.is_empty() {
        return Err(Error::Degenerate("empty chain trace".into()));
    }
    let first = &trace.samples[0];
    let mut s_sum = DMatrix::zeros(first.src.n(), first.src.t_len());
    let mut psi_sum = DMatrix::zeros(first.dict.m(), first.dict.n());
    let mut q_sum = DMatrix::zeros(first.src.n(), first.src.t_len());
    for sample in &trace.samples {
        s_sum += sample.src.amplitudes();
        psi_sum += sample.dict.matrix();
        q_sum += sample.src.indicators().map(f64::from);
    }
    let count = trace.samples.len() as f64;
    Ok((s_sum / count, psi_sum / count, q_sum / count))
}

/// The retained (S, Ψ) pair maximizing the marginalized posterior, with its
/// stored log value and retained index. Ties break toward the earliest
/// iteration; −∞ values never win.
pub fn map_estimate(trace: &ChainTrace) -> Result<(SourceState, Dictionary, f64, usize)> {
    if trace.samples.is_empty() {
        return Err(Error::Degenerate("empty chain trace".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, &lp) in trace.log_map_values.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some((_, cur)) if lp <= cur => {}
            _ => best = Some((idx, lp)),
        }
    }
    let (idx, lp) = best.ok_or_else(|| {
        Error::Degenerate("all retained samples have -inf marginal posterior".into())
    })?;
    let sample = &trace.samples[idx];
    Ok((sample.src.clone(), sample.dict.clone(), lp, idx))
}

/// Recompute the marginal log-posterior of the stored MAP pair; bookkeeping
/// check that the tracked value matches the state it claims to describe.
pub fn recompute_map_value(
    summary: &PosteriorSummary,
    obs: &ObservationSet,
    cfg: &ModelConfig,
) -> Result<f64> {
    log_marginal_posterior(&summary.s_map, &summary.psi_map, obs, cfg)
}

/// Empirical posterior pmf of K_n = Σ_t q_n(t) for source row `n`,
/// indexed by k = 0..=T. Masses sum to one.
pub fn active_count_histogram(trace: &ChainTrace, n: usize) -> Result<Vec<f64>> {
    if trace.samples.is_empty() {
        return Err(Error::Degenerate("empty chain trace".into()));
    }
    let t = trace.samples[0].src.t_len();
    if n >= trace.samples[0].src.n() {
        return Err(Error::dimension(format!("source index {n} out of range")));
    }
    let mut counts = vec![0usize; t + 1];
    for sample in &trace.samples {
        counts[sample.src.count_active(n)] += 1;
    }
    let total = trace.samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Greedy alignment of an estimated dictionary to a reference: repeatedly
/// match the pair of columns with the largest |inner product|, never reusing
/// a column, and flip signs so matched inner products are nonnegative.
///
/// `permutation[j] = i` means estimate column i explains truth column j; the
/// aligned copy has column j equal to `signs[j] * estimate[:, i]`.
pub fn align_dictionary(
    estimate: &Dictionary,
    truth: &Dictionary,
) -> Result<(Vec<usize>, Vec<f64>, Dictionary)> {
    if estimate.m() != truth.m() || estimate.n() != truth.n() {
        return Err(Error::dimension("dictionaries must share dimensions"));
    }
    let n = truth.n();
    let cross = estimate.matrix().transpose() * truth.matrix();
    let mut est_used = vec![false; n];
    let mut truth_used = vec![false; n];
    let mut permutation = vec![0usize; n];
    let mut signs = vec![1.0f64; n];
    for _ in 0..n {
        let mut best = (0usize, 0usize, -1.0f64);
        for i in 0..n {
            if est_used[i] {
                continue;
            }
            for j in 0..n {
                if truth_used[j] {
                    continue;
                }
                let score = cross[(i, j)].abs();
                if score > best.2 {
                    best = (i, j, score);
                }
            }
        }
        let (i, j, _) = best;
        est_used[i] = true;
        truth_used[j] = true;
        permutation[j] = i;
        signs[j] = if cross[(i, j)] >= 0.0 { 1.0 } else { -1.0 };
    }
    let mut aligned = DMatrix::zeros(truth.m(), n);
    for j in 0..n {
        let col = estimate.column(permutation[j]) * signs[j];
        aligned.set_column(j, &col);
    }
    Ok((permutation, signs, Dictionary::new(aligned)?))
}

/// Apply a dictionary alignment to a source matrix: row j of the output is
/// `signs[j] * source_row(permutation[j])`.
pub fn apply_alignment_to_sources(
    src: &SourceState,
    permutation: &[usize],
    signs: &[f64],
) -> Result<SourceState> {
    if permutation.len() != src.n() || signs.len() != src.n() {
        return Err(Error::dimension("alignment length != source rows"));
    }
    let mut s = DMatrix::zeros(src.n(), src.t_len());
    let mut q = DMatrix::zeros(src.n(), src.t_len());
    for j in 0..src.n() {
        for t in 0..src.t_len() {
            s[(j, t)] = signs[j] * src.amplitude(permutation[j], t);
            q[(j, t)] = src.indicators()[(permutation[j], t)];
        }
    }
    SourceState::new(s, q)
}
