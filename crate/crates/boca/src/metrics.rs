//! Scalar evaluation metrics: reconstruction RMSE, sparsity score,
//! support-recovery F1, and the per-iteration reconstruction-error trace.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dictionary, ObservationSet, SourceState};
use crate::sampler::ChainTrace;

/// Evaluation summary of one fit against a known truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub sparsity_score: f64,
    pub support_f1: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub error_trace: Vec<f64>,
}

/// Root mean square error between the clean mixture and a reconstruction:
/// sqrt((1/MT)·Σ_t ‖x(t) − Ψ̂ ŝ(t)‖²). Depends only on the product Ψ̂Ŝ, so
/// it is invariant under simultaneous column permutations and sign flips.
pub fn rmse(truth_clean: &ObservationSet, est_dict: &Dictionary, est_src: &SourceState) -> Result<f64> {
    if est_dict.m() != truth_clean.m()
        || est_src.t_len() != truth_clean.t_len()
        || est_dict.n() != est_src.n()
    {
        return Err(Error::dimension("rmse inputs disagree in shape"));
    }
    let recon = est_dict.matrix() * est_src.amplitudes();
    let mt = (truth_clean.m() * truth_clean.t_len()) as f64;
    let sq: f64 = truth_clean
        .matrix()
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sq / mt).sqrt())
}

/// Sparsity score of an indicator matrix: 1 − (active entries)/(N·T).
/// 1 means all-zero, 0 means fully dense.
pub fn sparsity_score(q: &DMatrix<u8>) -> f64 {
    let total = (q.nrows() * q.ncols()) as f64;
    let active = q.iter().filter(|&&v| v == 1).count() as f64;
    1.0 - active / total
}

/// F1 score of active-entry detection against a reference support.
pub fn support_f1(q_est: &DMatrix<u8>, q_true: &DMatrix<u8>) -> Result<f64> {
    if q_est.shape() != q_true.shape() {
        return Err(Error::dimension("support matrices disagree in shape"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&e, &t) in q_est.iter().zip(q_true.iter()) {
        match (e == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64))
}

/// Reconstruction error e(h) = sqrt(Σ_t ‖y(t) − Ψ̄⁽ʰ⁾ S̄⁽ʰ⁾(t)‖²) where the
/// bars are cumulative means over the first h retained samples. Maintained
/// with running sums, one product per h.
pub fn reconstruction_error_trace(trace: &ChainTrace, obs: &ObservationSet) -> Result<Vec<f64>> {
    if trace.samples.is_empty() {
        return Err(Error::Degenerate("empty chain trace".into()));
    }
    let first = &trace.samples[0];
    if first.dict.m() != obs.m() || first.src.t_len() != obs.t_len() {
        return Err(Error::dimension("trace does not match observations"));
    }
    let mut s_sum = DMatrix::zeros(first.src.n(), first.src.t_len());
    let mut psi_sum = DMatrix::zeros(first.dict.m(), first.dict.n());
    let mut out = Vec::with_capacity(trace.samples.len());
    for (h, sample) in trace.samples.iter().enumerate() {
        s_sum += sample.src.amplitudes();
        psi_sum += sample.dict.matrix();
        let count = (h + 1) as f64;
        let recon = (&psi_sum / count) * (&s_sum / count);
        let sq: f64 = obs
            .matrix()
            .iter()
            .zip(recon.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        out.push(sq.sqrt());
    }
    Ok(out)
}
