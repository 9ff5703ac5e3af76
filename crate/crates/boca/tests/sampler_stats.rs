//! Statistical checks of the Gibbs moves: block amplitude draws against a
//! likelihood×prior quadrature oracle, dictionary-column draws against the
//! von Mises-Fisher resultant, and conjugate conditional means.

mod common;

use boca::model::*;
use boca::rng::{null_space_basis, sample_uniform_stiefel, RngStream, StiefelMethod};
use boca::sampler::*;
use common::*;
use nalgebra::{DMatrix, DVector};

fn fixed_state(seed: u64, m: usize, n: usize, t: usize) -> (ObservationSet, GibbsState) {
    let mut rng = RngStream::new(seed, 0);
    let psi = sample_uniform_stiefel(m, n, &mut rng, StiefelMethod::Direct).unwrap();
    let dict = Dictionary::new(psi).unwrap();
    let mut src = SourceState::zeros(n, t);
    for row in 0..n {
        for col in 0..t {
            if rng.uniform_01() < 0.5 {
                src.set_active(row, col, 2.0 * rng.standard_normal());
            }
        }
    }
    let hyp = HyperState::new(
        0.3,
        DVector::from_element(n, 0.4),
        DVector::from_fn(n, |_, _| 1.0 + 3.0 * rng.uniform_01()),
    )
    .unwrap();
    let clean = dict.matrix() * src.amplitudes();
    let sd = hyp.sigma2.sqrt();
    let x = DMatrix::from_fn(m, t, |r, c| clean[(r, c)] + sd * rng.standard_normal());
    (
        ObservationSet::new(x).unwrap(),
        GibbsState {
            src,
            dict,
            hyp,
            iteration: 0,
        },
    )
}

#[test]
fn amplitude_closed_form_matches_quadrature_oracle() {
    // One active source at one time index: posterior of its amplitude is
    // proportional to exp(-‖y-ψs‖²/(2σ²))·N(s; 0, a²). Quadrature of that
    // 1-D density must reproduce the implemented mean and variance.
    let (obs, mut state) = fixed_state(21, 6, 2, 4);
    let (n, t) = (0usize, 1usize);
    for row in 0..2 {
        state.src.set_inactive(row, t);
    }
    state.src.set_active(n, t, 1.0);

    let y = obs.column(t).clone_owned();
    let psi = state.dict.column(n).clone_owned();
    let (s2, a2) = (state.hyp.sigma2, state.hyp.a2[n]);

    let log_w = |s: f64| {
        let mut resid = 0.0;
        for i in 0..obs.m() {
            resid += (y[i] - psi[i] * s).powi(2);
        }
        -0.5 * resid / s2 - 0.5 * s * s / a2
    };
    let yp = psi.dot(&y);
    let mu = a2 / s2;
    let gain = mu / (1.0 + mu);
    let mean_impl = gain * yp;
    let var_impl = s2 * gain;

    let half_width = 14.0 * var_impl.sqrt();
    let (lo, hi) = (mean_impl - half_width, mean_impl + half_width);
    let z = simpson(|s| (log_w(s) - log_w(mean_impl)).exp(), lo, hi, 200_000);
    let m1 = simpson(|s| s * (log_w(s) - log_w(mean_impl)).exp(), lo, hi, 200_000) / z;
    let m2 = simpson(
        |s| (s - m1) * (s - m1) * (log_w(s) - log_w(mean_impl)).exp(),
        lo,
        hi,
        200_000,
    ) / z;
    assert!((mean_impl - m1).abs() < 1e-10, "mean {mean_impl} vs {m1}");
    assert!((var_impl - m2).abs() < 1e-10, "var {var_impl} vs {m2}");

    // And the sampler's draws reproduce those moments.
    let mut rng = RngStream::new(5, 0);
    let n_draws = 200_000usize;
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        sample_amplitudes_column(&obs, &mut state, t, &mut rng).unwrap();
        draws.push(state.src.amplitude(n, t));
    }
    let (mean_mc, var_mc) = mean_var(&draws);
    let se_mean = (var_impl / n_draws as f64).sqrt();
    let se_var = var_impl * (2.0 / n_draws as f64).sqrt();
    assert!((mean_mc - mean_impl).abs() < 3.0 * se_mean);
    assert!((var_mc - var_impl).abs() < 3.0 * se_var);
}

#[test]
fn dictionary_column_redraws_match_vmf_resultant() {
    let (obs, state) = fixed_state(33, 4, 2, 12);
    let n = 1usize;

    // The conditional's natural parameter, recomputed the same way the
    // sampler does.
    let mut moment = DVector::zeros(4);
    for t in state.src.active_times(n) {
        let s_nt = state.src.amplitude(n, t);
        let mut resid = obs.column(t).clone_owned();
        for i in 0..2 {
            if i != n {
                let s_it = state.src.amplitude(i, t);
                if s_it != 0.0 {
                    resid.axpy(-s_it, &state.dict.column(i).clone_owned(), 1.0);
                }
            }
        }
        moment.axpy(s_nt, &resid, 1.0);
    }
    let partial = state.dict.column(0).clone_owned();
    let basis = null_space_basis(&DMatrix::from_fn(4, 1, |r, _| partial[r])).unwrap();
    let c = basis.transpose() * &moment / state.hyp.sigma2;
    let kappa = c.norm();
    let mode_dir = &basis * (&c / kappa);

    let resultant_want = vmf_resultant_quadrature(kappa, 3);

    let mut rng = RngStream::new(6, 0);
    let n_draws = 100_000usize;
    let mut mean_vec = DVector::zeros(4);
    for _ in 0..n_draws {
        let mut scratch = state.clone();
        sample_dictionary_column(&obs, &mut scratch, n, &mut rng).unwrap();
        mean_vec += scratch.dict.column(n).clone_owned();
    }
    mean_vec /= n_draws as f64;

    let resultant_got = mean_vec.norm();
    assert!(
        (resultant_got - resultant_want).abs() < 0.01,
        "resultant {resultant_got} vs quadrature {resultant_want} (kappa {kappa})"
    );
    let align = (mean_vec / resultant_got).dot(&mode_dir);
    assert!(align > 0.999, "mean direction alignment {align}");
}

#[test]
fn dictionary_column_concentrates_as_noise_vanishes() {
    let (obs, mut state) = fixed_state(41, 5, 2, 10);
    state.hyp.sigma2 = 1e-12;
    let n = 0usize;

    let mut moment = DVector::zeros(5);
    for t in state.src.active_times(n) {
        let s_nt = state.src.amplitude(n, t);
        let mut resid = obs.column(t).clone_owned();
        let s_other = state.src.amplitude(1, t);
        if s_other != 0.0 {
            resid.axpy(-s_other, &state.dict.column(1).clone_owned(), 1.0);
        }
        moment.axpy(s_nt, &resid, 1.0);
    }
    let other = state.dict.column(1).clone_owned();
    let basis = null_space_basis(&DMatrix::from_fn(5, 1, |r, _| other[r])).unwrap();
    let c = basis.transpose() * &moment;
    let mode = &basis * (&c / c.norm());

    let mut rng = RngStream::new(7, 0);
    sample_dictionary_column(&obs, &mut state, n, &mut rng).unwrap();
    let drawn = state.dict.column(n).clone_owned();
    assert!(drawn.dot(&mode) > 1.0 - 1e-6, "dot {}", drawn.dot(&mode));
}

#[test]
fn noise_variance_conditional_mean() {
    let (obs, state) = fixed_state(55, 6, 2, 10);
    let (shape, scale) = noise_variance_posterior(&obs, &state.dict, &state.src);
    let want = scale / (shape - 1.0);
    let mut rng = RngStream::new(8, 0);
    let n_draws = 200_000usize;
    let mut draws = Vec::with_capacity(n_draws);
    let mut scratch = state.clone();
    for _ in 0..n_draws {
        draws.push(sample_noise_variance(&obs, &mut scratch, &mut rng).unwrap());
        scratch.hyp.sigma2 = state.hyp.sigma2;
    }
    let (mean, var) = mean_var(&draws);
    let tol = 3.0 * (var / n_draws as f64).sqrt();
    assert!((mean - want).abs() < tol, "mean {mean} vs {want}");
}

#[test]
fn running_map_maximum_is_monotone() {
    let (obs, _) = fixed_state(66, 6, 2, 8);
    let cfg = ModelConfig::new(6, 2, 8).unwrap();
    let settings = SamplerSettings::new(60, 10, 9);
    let trace = run_chain(&obs, &cfg, &settings, &mut NullProgress).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut maxima = Vec::new();
    for &lp in &trace.log_map_values {
        best = best.max(lp);
        maxima.push(best);
    }
    for pair in maxima.windows(2) {
        assert!(pair[1] >= pair[0]);
    }
}

#[test]
fn chain_keeps_state_invariants() {
    let (obs, _) = fixed_state(71, 8, 3, 12);
    let cfg = ModelConfig::new(8, 3, 12).unwrap();
    let settings = SamplerSettings::new(40, 5, 13);
    let trace = run_chain(&obs, &cfg, &settings, &mut NullProgress).unwrap();
    for sample in &trace.samples {
        assert!(sample.dict.orthonormality_deviation() < 1e-8);
        for n in 0..3 {
            for t in 0..12 {
                if !sample.src.is_active(n, t) {
                    assert_eq!(sample.src.amplitude(n, t), 0.0);
                }
            }
        }
        assert!(sample.hyp.sigma2 > 0.0);
        for n in 0..3 {
            assert!((0.0..=1.0).contains(&sample.hyp.lambda[n]));
            assert!(sample.hyp.a2[n] > 0.0);
        }
    }
}
