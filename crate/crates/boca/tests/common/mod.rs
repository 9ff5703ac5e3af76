//! Shared test oracles: quadrature references and moment-check helpers,
//! independent of the library's sampling code paths.

#![allow(dead_code)]

/// Composite Simpson integral of `f` over [lo, hi] with `n` panels
/// (n is rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// log(∫ exp(log_f)) over [lo, hi] by Simpson weights in log space.
pub fn simpson_log<F: Fn(f64) -> f64>(log_f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (hi - lo) / n as f64;
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let w: f64 = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        terms.push(log_f(lo + h * i as f64) + w.ln());
    }
    log_sum_exp(&terms) + (h / 3.0).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean resultant length E[μᵀv] of the von Mises-Fisher distribution with
/// concentration `kappa` in dimension `d`, by quadrature of the cosine
/// density t ↦ exp(κt)(1−t²)^{(d−3)/2} on [−1, 1]. The exp(κ(t−1)) scaling
/// keeps the integrand bounded at large κ.
pub fn vmf_resultant_quadrature(kappa: f64, d: usize) -> f64 {
    assert!(d >= 3, "cosine density integrable in closed Simpson form for d >= 3");
    let p = (d as f64 - 3.0) / 2.0;
    let lo = if kappa > 40.0 {
        (1.0 - 80.0 / kappa).max(-1.0)
    } else {
        -1.0
    };
    let w = |t: f64| (kappa * (t - 1.0)).exp() * (1.0 - t * t).powf(p);
    let num = simpson(|t| t * w(t), lo, 1.0, 400_000);
    let den = simpson(w, lo, 1.0, 400_000);
    num / den
}

/// P(μᵀv > c) under the same density.
pub fn vmf_tail_quadrature(kappa: f64, d: usize, c: f64) -> f64 {
    let p = (d as f64 - 3.0) / 2.0;
    let lo = if kappa > 40.0 {
        (1.0 - 80.0 / kappa).max(-1.0)
    } else {
        -1.0
    };
    let w = |t: f64| (kappa * (t - 1.0)).exp() * (1.0 - t * t).powf(p);
    let num = simpson(&w, c.max(lo), 1.0, 400_000);
    let den = simpson(&w, lo, 1.0, 400_000);
    num / den
}

/// Empirical mean and (n-1)-normalized variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Kolmogorov-Smirnov statistic against the U(0,1) CDF.
pub fn ks_statistic_uniform(draws: &mut [f64]) -> f64 {
    draws.sort_by(|a, b| a.total_cmp(b));
    let n = draws.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in draws.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - x;
        let lo = x - i as f64 / n;
        d = d.max(hi.max(lo));
    }
    d
}
