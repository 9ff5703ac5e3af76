//! Seedable random sampling primitives for the Gibbs sampler.
//!
//! All draws go through [`RngStream`], a counter-based generator keyed by
//! `(seed, stream_id)`: identical keys replay identical sequences, distinct
//! `stream_id`s give independent streams for parallel chains or Monte-Carlo
//! trials.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Orthonormality tolerance accepted on inputs (matrices further from the
/// manifold than this are rejected).
pub const ORTHO_INPUT_TOL: f64 = 1e-8;

/// Orthonormality achieved by the samplers and basis constructions here.
pub const ORTHO_OUTPUT_TOL: f64 = 1e-10;

/// Reproducible random stream: a counter-based generator addressed by
/// `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream with the same seed and a derived stream id; used to hand
    /// out independent streams to parallel workers.
    pub fn substream(&self, parts: &[u64]) -> RngStream {
        RngStream::new(self.seed, mix_stream_id(self.stream_id, parts))
    }

    pub fn uniform_01(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// SplitMix64-style mixing of identifiers into a stream id.
pub fn mix_stream_id(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(31);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// Parameters of a von Mises-Fisher distribution on the unit sphere, given by
/// an unnormalized natural parameter; the concentration is its norm and the
/// mean direction its normalization.
#[derive(Clone, Debug)]
pub struct VmfParams {
    natural_parameter: DVector<f64>,
    kappa: f64,
    mean_direction: DVector<f64>,
}

impl VmfParams {
    pub fn new(natural_parameter: DVector<f64>) -> Result<Self> {
        if natural_parameter.is_empty() {
            return Err(Error::domain("vMF natural parameter must be non-empty"));
        }
        if natural_parameter.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("vMF natural parameter must be finite"));
        }
        let kappa = natural_parameter.norm();
        let mean_direction = if kappa > 0.0 {
            &natural_parameter / kappa
        } else {
            // Direction is irrelevant at zero concentration.
            let mut e1 = DVector::zeros(natural_parameter.len());
            e1[0] = 1.0;
            e1
        };
        Ok(VmfParams {
            natural_parameter,
            kappa,
            mean_direction,
        })
    }

    pub fn dim(&self) -> usize {
        self.natural_parameter.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mean_direction(&self) -> &DVector<f64> {
        &self.mean_direction
    }

    pub fn natural_parameter(&self) -> &DVector<f64> {
        &self.natural_parameter
    }
}

/// Draw from N(mean, variance). Zero variance returns the mean exactly.
pub fn sample_gaussian(mean: f64, variance: f64, rng: &mut RngStream) -> Result<f64> {
    if !(variance >= 0.0) {
        return Err(Error::domain(format!(
            "gaussian variance must be >= 0, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(mean);
    }
    Ok(mean + variance.sqrt() * rng.standard_normal())
}

/// Draw from the inverse-gamma distribution with density
/// proportional to x^{-shape-1} exp(-scale/x).
pub fn sample_inverse_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) {
        return Err(Error::domain(format!(
            "inverse-gamma parameters must be positive, got shape={shape}, scale={scale}"
        )));
    }
    let gamma = GammaDist::new(shape, 1.0)
        .map_err(|e| Error::domain(format!("inverse-gamma shape rejected: {e}")))?;
    // A shape < 1 draw can underflow to zero; retry in that measure-zero case.
    loop {
        let g: f64 = gamma.sample(&mut rng.rng);
        if g > 0.0 {
            return Ok(scale / g);
        }
    }
}

/// Draw from Beta(a, b) with density proportional to x^{a-1}(1-x)^{b-1}.
pub fn sample_beta(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::domain(format!(
            "beta parameters must be positive, got a={a}, b={b}"
        )));
    }
    let beta = BetaDist::new(a, b)
        .map_err(|e| Error::domain(format!("beta parameters rejected: {e}")))?;
    Ok(beta.sample(&mut rng.rng))
}

/// Uniform draw on the unit sphere in dimension `d` (normal-deviate method).
pub fn sample_uniform_sphere(d: usize, rng: &mut RngStream) -> Result<DVector<f64>> {
    if d == 0 {
        return Err(Error::domain("sphere dimension must be >= 1"));
    }
    loop {
        let v = DVector::from_fn(d, |_, _| rng.standard_normal());
        let norm = v.norm();
        if norm > 1e-150 {
            let out = v / norm;
            debug_assert!((out.norm() - 1.0).abs() < ORTHO_OUTPUT_TOL);
            return Ok(out);
        }
    }
}

/// Draw from the von Mises-Fisher distribution with density proportional to
/// exp(natural_parameterᵀ v) on the unit sphere.
///
/// Rejection sampling of the cosine against a Beta envelope, a uniform
/// tangent direction, then a Householder reflection onto the mean direction.
pub fn sample_vmf(params: &VmfParams, rng: &mut RngStream) -> Result<DVector<f64>> {
    let d = params.dim();
    if d < 2 {
        return Err(Error::domain("vMF dimension must be >= 2"));
    }
    let kappa = params.kappa();
    if kappa == 0.0 {
        // Exact limiting distribution; also avoids the degenerate envelope.
        return sample_uniform_sphere(d, rng);
    }

    let dm1 = (d - 1) as f64;
    // Envelope parameter in the cancellation-free form
    // b = (d-1) / (2κ + sqrt(4κ² + (d-1)²)); the textbook
    // (-2κ + sqrt(...))/(d-1) arrangement loses all digits for large κ.
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();

    let beta = BetaDist::new(dm1 / 2.0, dm1 / 2.0).expect("valid symmetric beta");
    let w = loop {
        let z: f64 = beta.sample(&mut rng.rng);
        let u: f64 = rng.uniform_01();
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };

    // Cosine w along e1, uniform tangent component.
    let tangent = sample_uniform_sphere(d - 1, rng)?;
    let mut v = DVector::zeros(d);
    v[0] = w;
    let s = (1.0 - w * w).max(0.0).sqrt();
    for i in 1..d {
        v[i] = s * tangent[i - 1];
    }

    // Reflect e1 onto the mean direction: H = I - 2hhᵀ/‖h‖², h = e1 - μ.
    let mu = params.mean_direction();
    let mut h = -mu.clone();
    h[0] += 1.0;
    let h_norm2 = h.norm_squared();
    let out = if h_norm2 > 1e-28 {
        let proj = 2.0 * h.dot(&v) / h_norm2;
        v - h * proj
    } else {
        v
    };
    debug_assert!((out.norm() - 1.0).abs() < ORTHO_OUTPUT_TOL);
    Ok(out)
}

/// Which construction `sample_uniform_stiefel` uses; both give the uniform
/// distribution on the manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StiefelMethod {
    /// Orthonormalize an M×N standard-normal matrix: Ψ = V(VᵀV)^{-1/2}.
    Direct,
    /// Column-by-column: each new column is a uniform sphere draw mapped into
    /// the null space of the previous columns.
    Sequential,
}

/// Uniform draw of an M×N matrix with orthonormal columns.
pub fn sample_uniform_stiefel(
    m: usize,
    n: usize,
    rng: &mut RngStream,
    method: StiefelMethod,
) -> Result<DMatrix<f64>> {
    if n == 0 || m == 0 || n > m {
        return Err(Error::domain(format!(
            "Stiefel dimensions require 1 <= N <= M, got M={m}, N={n}"
        )));
    }
    let psi = match method {
        StiefelMethod::Direct => {
            let v = DMatrix::from_fn(m, n, |_, _| rng.standard_normal());
            polar_orthonormal_factor(&v)?
        }
        StiefelMethod::Sequential => {
            let mut psi = DMatrix::zeros(m, n);
            psi.set_column(0, &sample_uniform_sphere(m, rng)?);
            for k in 1..n {
                let partial = psi.columns(0, k).clone_owned();
                let basis = null_space_basis(&partial)?;
                let v = sample_uniform_sphere(m - k, rng)?;
                psi.set_column(k, &(&basis * v));
            }
            psi
        }
    };
    debug_assert!(max_orthonormality_deviation(&psi) < ORTHO_OUTPUT_TOL);
    Ok(psi)
}

/// Orthonormal polar factor V(VᵀV)^{-1/2} of a full-column-rank matrix,
/// computed as U·Wᵀ from the thin SVD V = UΣWᵀ so the output stays on the
/// manifold at machine precision even for ill-conditioned input.
pub fn polar_orthonormal_factor(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = v.clone().svd(true, true);
    if svd.singular_values.iter().any(|&s| s <= 1e-300) {
        return Err(Error::Degenerate(
            "polar factor of a rank-deficient matrix".into(),
        ));
    }
    let u = svd
        .u
        .ok_or_else(|| Error::Degenerate("SVD missing U factor".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD missing V factor".into()))?;
    Ok(u * v_t)
}

/// Max-norm deviation of ΨᵀΨ from the identity.
pub fn max_orthonormality_deviation(psi: &DMatrix<f64>) -> f64 {
    let gram = psi.transpose() * psi;
    let n = gram.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

/// Orthonormal basis of the orthogonal complement of the span of `partial`
/// (M×k with orthonormal columns, k < M), as an M×(M-k) matrix.
///
/// Built by a deterministic Householder completion, so the result is a pure
/// function of the input.
pub fn null_space_basis(partial: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, k) = partial.shape();
    if k >= m {
        return Err(Error::domain(format!(
            "null space basis requires k < M, got M={m}, k={k}"
        )));
    }
    let dev = max_orthonormality_deviation(partial);
    if dev > ORTHO_INPUT_TOL {
        return Err(Error::domain(format!(
            "input columns not orthonormal (deviation {dev:.3e})"
        )));
    }

    // Householder QR of the input; each reflector is I - 2vvᵀ/‖v‖².
    let mut r = partial.clone();
    let mut reflectors: Vec<(DVector<f64>, f64)> = Vec::with_capacity(k);
    for j in 0..k {
        let seg = r.view((j, j), (m - j, 1));
        let norm = seg.norm();
        if norm < 1e-12 {
            return Err(Error::domain("rank-deficient input to null space basis"));
        }
        let alpha = if seg[(0, 0)] >= 0.0 { -norm } else { norm };
        let mut v = DVector::zeros(m);
        for i in j..m {
            v[i] = r[(i, j)];
        }
        v[j] -= alpha;
        let v_norm2 = v.norm_squared();
        if v_norm2 > 0.0 {
            for col in j..k {
                let dot = (j..m).map(|i| v[i] * r[(i, col)]).sum::<f64>();
                let f = 2.0 * dot / v_norm2;
                for i in j..m {
                    r[(i, col)] -= f * v[i];
                }
            }
        }
        reflectors.push((v, v_norm2));
    }

    // Complement columns are H_1 ... H_k applied to the trailing canonical
    // basis vectors.
    let mut basis = DMatrix::zeros(m, m - k);
    for (idx, col) in (k..m).enumerate() {
        let mut e = DVector::zeros(m);
        e[col] = 1.0;
        for (v, v_norm2) in reflectors.iter().rev() {
            if *v_norm2 > 0.0 {
                let f = 2.0 * v.dot(&e) / v_norm2;
                e.axpy(-f, v, 1.0);
            }
        }
        basis.set_column(idx, &e);
    }
    debug_assert!(max_orthonormality_deviation(&basis) < ORTHO_OUTPUT_TOL);
    Ok(basis)
}

/// Natural log of the volume of the manifold of M×N matrices with
/// orthonormal columns, via the product of unit-sphere surface areas
/// vol = ∏_{i=0}^{N-1} vol(S^{M-1-i}).
pub fn log_stiefel_volume(m: usize, n: usize) -> Result<f64> {
    if n == 0 || m == 0 || n > m {
        return Err(Error::domain(format!(
            "Stiefel volume requires 1 <= N <= M, got M={m}, N={n}"
        )));
    }
    Ok((0..n).map(|i| log_sphere_surface(m - i)).sum())
}

/// Log surface area of the unit sphere S^{d-1} in R^d: log(2π^{d/2}/Γ(d/2)).
pub fn log_sphere_surface(d: usize) -> f64 {
    let d = d as f64;
    std::f64::consts::LN_2 + (d / 2.0) * std::f64::consts::PI.ln() - ln_gamma(d / 2.0)
}
