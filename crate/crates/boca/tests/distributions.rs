//! Statistical tests of the sampling primitives against analytic moments,
//! quadrature oracles, and distribution-level identities.

mod common;

use boca::rng::*;
use common::*;
use nalgebra::DVector;

#[test]
fn gaussian_million_draw_moments() {
    let mut rng = RngStream::new(101, 0);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| sample_gaussian(0.0, 1.0, &mut rng).unwrap())
        .collect();
    let (mean, var) = mean_var(&draws);
    // 3σ/√n bounds for the mean; matching slack for the variance.
    assert!(mean.abs() < 0.004, "mean {mean}");
    assert!((var - 1.0).abs() < 0.01, "var {var}");
}

#[test]
fn gaussian_matches_toy_active_variance() {
    // Source-2 amplitude prior of the toy setup: variance 10.
    let mut rng = RngStream::new(102, 0);
    let a2 = 10.0;
    let draws: Vec<f64> = (0..100_000)
        .map(|_| sample_gaussian(0.0, a2, &mut rng).unwrap())
        .collect();
    let (mean, var) = mean_var(&draws);
    let var_tol = 3.0 * a2 * (2.0f64 / draws.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * (a2 / draws.len() as f64).sqrt());
    assert!((var - a2).abs() < var_tol, "var {var}");
}

#[test]
fn inverse_gamma_mean_and_variance() {
    // IG(3, 2): mean = 2/(3-1) = 1, variance = 4/(4·1) = 1.
    let mut rng = RngStream::new(103, 0);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| sample_inverse_gamma(3.0, 2.0, &mut rng).unwrap())
        .collect();
    let (mean, var) = mean_var(&draws);
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn beta_uniform_passes_ks() {
    let mut rng = RngStream::new(104, 0);
    let n = 1_000_000usize;
    let mut draws: Vec<f64> = (0..n)
        .map(|_| sample_beta(1.0, 1.0, &mut rng).unwrap())
        .collect();
    let d = ks_statistic_uniform(&mut draws);
    // Critical value at level 1e-3: sqrt(ln(2/α)/(2n)).
    let crit = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
    assert!(d < crit, "KS statistic {d} >= {crit}");
}

#[test]
fn beta_posterior_count_shape_mean() {
    // Beta(96, 6): mean 96/102.
    let mut rng = RngStream::new(105, 0);
    let n = 1_000_000usize;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_beta(96.0, 6.0, &mut rng).unwrap())
        .collect();
    let (mean, var) = mean_var(&draws);
    let want = 96.0 / 102.0;
    let tol = 3.0 * (var / n as f64).sqrt();
    assert!((mean - want).abs() < tol, "mean {mean} vs {want}");
}

#[test]
fn beta_2_2_variance() {
    let mut rng = RngStream::new(106, 0);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| sample_beta(2.0, 2.0, &mut rng).unwrap())
        .collect();
    let (_, var) = mean_var(&draws);
    assert!((var - 0.05).abs() < 0.002, "var {var}");
}

#[test]
fn sphere_d3_coordinate_moments() {
    let mut rng = RngStream::new(107, 0);
    let n = 1_000_000usize;
    let mut sums = [0.0f64; 3];
    let mut sq_sums = [0.0f64; 3];
    for _ in 0..n {
        let v = sample_uniform_sphere(3, &mut rng).unwrap();
        for k in 0..3 {
            sums[k] += v[k];
            sq_sums[k] += v[k] * v[k];
        }
    }
    for k in 0..3 {
        let mean = sums[k] / n as f64;
        let var = sq_sums[k] / n as f64;
        assert!(mean.abs() < 0.002, "coord {k} mean {mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.002, "coord {k} second moment {var}");
    }
}

#[test]
fn vmf_zero_kappa_matches_uniform_moments() {
    let mut rng = RngStream::new(108, 0);
    let d = 4;
    let params = VmfParams::new(DVector::zeros(d)).unwrap();
    let n = 500_000usize;
    let mut sums = vec![0.0f64; d];
    let mut sq_sums = vec![0.0f64; d];
    for _ in 0..n {
        let v = sample_vmf(&params, &mut rng).unwrap();
        for k in 0..d {
            sums[k] += v[k];
            sq_sums[k] += v[k] * v[k];
        }
    }
    for k in 0..d {
        let mean = sums[k] / n as f64;
        let second = sq_sums[k] / n as f64;
        assert!(mean.abs() < 0.004, "coord {k} mean {mean}");
        assert!((second - 0.25).abs() < 0.004, "coord {k} second moment {second}");
    }
}

#[test]
fn vmf_resultant_matches_quadrature_spot() {
    let mut rng = RngStream::new(109, 0);
    let kappa = 10.0;
    let d = 3;
    let mu = DVector::from_vec(vec![0.0, kappa, 0.0]);
    let params = VmfParams::new(mu).unwrap();
    let n = 1_000_000usize;
    let mut acc = 0.0;
    for _ in 0..n {
        let v = sample_vmf(&params, &mut rng).unwrap();
        acc += params.mean_direction().dot(&v);
    }
    let got = acc / n as f64;
    let want = vmf_resultant_quadrature(kappa, d);
    assert!((got - want).abs() < 0.003, "{got} vs quadrature {want}");
}

#[test]
fn vmf_extreme_kappa_tail() {
    let mut rng = RngStream::new(110, 0);
    let kappa = 1e3;
    let params = VmfParams::new(DVector::from_vec(vec![kappa, 0.0, 0.0])).unwrap();
    // Quadrature says essentially all mass sits above cosine 0.99.
    let tail = vmf_tail_quadrature(kappa, 3, 0.99);
    assert!(tail > 0.99, "quadrature tail {tail}");
    let n = 100_000usize;
    let hits = (0..n)
        .filter(|_| {
            let v = sample_vmf(&params, &mut rng).unwrap();
            params.mean_direction().dot(&v) > 0.99
        })
        .count();
    let freq = hits as f64 / n as f64;
    assert!(freq >= 0.98, "tail frequency {freq}");
}

#[test]
fn stiefel_projector_mean_both_methods() {
    let (m, n) = (6usize, 3usize);
    let n_draws = 100_000usize;
    for method in [StiefelMethod::Direct, StiefelMethod::Sequential] {
        let mut rng = RngStream::new(111, 0);
        let mut acc = nalgebra::DMatrix::<f64>::zeros(m, m);
        for _ in 0..n_draws {
            let psi = sample_uniform_stiefel(m, n, &mut rng, method).unwrap();
            acc += psi.clone() * psi.transpose();
        }
        acc /= n_draws as f64;
        let target = n as f64 / m as f64;
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let want = if i == j { target } else { 0.0 };
                worst = worst.max((acc[(i, j)] - want).abs());
            }
        }
        assert!(worst < 0.01, "{method:?}: projector deviation {worst}");
    }
}

#[test]
fn stiefel_volume_product_identity() {
    // vol(S(2,3)) = vol(S²)·vol(S¹) = 4π · 2π = 8π².
    let want = (8.0 * std::f64::consts::PI * std::f64::consts::PI).ln();
    let got = log_stiefel_volume(3, 2).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    // Larger case against the explicit sphere-surface product.
    let direct: f64 = (0..4).map(|i| log_sphere_surface(9 - i)).sum();
    assert!((log_stiefel_volume(9, 4).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn samplers_reproduce_under_fixed_stream() {
    let draw = |seed: u64| {
        let mut rng = RngStream::new(seed, 5);
        let g = sample_gaussian(0.0, 2.0, &mut rng).unwrap();
        let ig = sample_inverse_gamma(3.0, 1.0, &mut rng).unwrap();
        let b = sample_beta(2.0, 5.0, &mut rng).unwrap();
        let v = sample_uniform_sphere(7, &mut rng).unwrap();
        let params = VmfParams::new(DVector::from_vec(vec![3.0, -1.0, 0.5])).unwrap();
        let w = sample_vmf(&params, &mut rng).unwrap();
        let psi = sample_uniform_stiefel(5, 2, &mut rng, StiefelMethod::Sequential).unwrap();
        (g, ig, b, v, w, psi)
    };
    let a = draw(314);
    let b = draw(314);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
    assert_eq!(a.4, b.4);
    assert_eq!(a.5, b.5);
}
