//! Image-patch sparse coding: tile a grayscale image into non-overlapping
//! square patches, treat each patch as one observation column in [0,1], fit
//! the model, and reassemble the MAP reconstruction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::PosteriorSummary;
use crate::io::GrayImage;
use crate::metrics::sparsity_score;
use crate::model::{ModelConfig, ObservationSet};
use crate::sampler::{run_chain, ChainTrace, ProgressSink, SamplerSettings};

pub const DEFAULT_PATCH_SIZE: usize = 16;

/// Geometry of a non-overlapping square tiling: patches of side `patch_size`
/// over an image whose dimensions it divides, patch t = (row-major grid
/// index), pixel order row-major within the patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub patch_size: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

impl PatchLayout {
    pub fn new(image_width: usize, image_height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::dimension("patch size must be positive"));
        }
        if image_width % patch_size != 0 || image_height % patch_size != 0 {
            return Err(Error::dimension(format!(
                "image {image_width}x{image_height} not divisible into {patch_size}x{patch_size} patches"
            )));
        }
        Ok(PatchLayout {
            patch_size,
            image_width,
            image_height,
            grid_cols: image_width / patch_size,
            grid_rows: image_height / patch_size,
        })
    }

    /// Observation dimension M = patch_size².
    pub fn m(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Number of patches T.
    pub fn t_len(&self) -> usize {
        self.grid_cols * self.grid_rows
    }
}

/// Extract patches as columns of an M×T matrix with pixel values scaled to
/// [0,1].
pub fn extract_patches(image: &GrayImage, layout: &PatchLayout) -> Result<DMatrix<f64>> {
    if image.width != layout.image_width || image.height != layout.image_height {
        return Err(Error::dimension("image does not match layout"));
    }
    let p = layout.patch_size;
    let mut out = DMatrix::zeros(layout.m(), layout.t_len());
    for gr in 0..layout.grid_rows {
        for gc in 0..layout.grid_cols {
            let t = gr * layout.grid_cols + gc;
            for pr in 0..p {
                for pc in 0..p {
                    let px = image.pixels[(gr * p + pr) * image.width + gc * p + pc];
                    out[(pr * p + pc, t)] = px as f64 / 255.0;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`extract_patches`]: clamp to [0,1], rescale to 0..255, round.
pub fn reassemble_patches(columns: &DMatrix<f64>, layout: &PatchLayout) -> Result<GrayImage> {
    if columns.nrows() != layout.m() || columns.ncols() != layout.t_len() {
        return Err(Error::dimension("patch matrix does not match layout"));
    }
    let p = layout.patch_size;
    let mut pixels = vec![0u8; layout.image_width * layout.image_height];
    for gr in 0..layout.grid_rows {
        for gc in 0..layout.grid_cols {
            let t = gr * layout.grid_cols + gc;
            for pr in 0..p {
                for pc in 0..p {
                    let v = columns[(pr * p + pc, t)].clamp(0.0, 1.0);
                    pixels[(gr * p + pr) * layout.image_width + gc * p + pc] =
                        (v * 255.0).round() as u8;
                }
            }
        }
    }
    GrayImage::new(layout.image_width, layout.image_height, pixels)
}

/// Result of sparse-coding one image.
pub struct PatchCodingResult {
    pub layout: PatchLayout,
    pub reconstructed: GrayImage,
    /// RMSE between the observed patch columns and the MAP reconstruction,
    /// in [0,1] pixel units.
    pub rmse: f64,
    /// Sparsity score of the MAP source supports.
    pub sparsity: f64,
    pub summary: PosteriorSummary,
    pub trace: ChainTrace,
}

/// Fit the model to an image's patches and reconstruct it from the MAP
/// estimates. `center` subtracts each patch mean before fitting and restores
/// it afterwards.
pub fn sparse_code_image(
    image: &GrayImage,
    n_atoms: usize,
    settings: &SamplerSettings,
    center: bool,
    progress: &mut dyn ProgressSink,
) -> Result<PatchCodingResult> {
    let layout = PatchLayout::new(image.width, image.height, DEFAULT_PATCH_SIZE)?;
    let mut columns = extract_patches(image, &layout)?;
    if n_atoms >= layout.m() {
        return Err(Error::Config(format!(
            "under-complete coding requires N < M = {}, got N = {n_atoms}",
            layout.m()
        )));
    }

    let mut means = vec![0.0f64; layout.t_len()];
    if center {
        for t in 0..layout.t_len() {
            let mean = columns.column(t).sum() / layout.m() as f64;
            means[t] = mean;
            for r in 0..layout.m() {
                columns[(r, t)] -= mean;
            }
        }
    }

    let obs = ObservationSet::new(columns)?;
    let cfg = ModelConfig::new(layout.m(), n_atoms, layout.t_len())?;
    let trace = run_chain(&obs, &cfg, settings, progress)?;
    let summary = PosteriorSummary::from_trace(&trace)?;

    let mut recon = summary.psi_map.matrix() * summary.s_map.amplitudes();
    let mt = (layout.m() * layout.t_len()) as f64;
    let sq: f64 = obs
        .matrix()
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let rmse = (sq / mt).sqrt();
    if center {
        for t in 0..layout.t_len() {
            for r in 0..layout.m() {
                recon[(r, t)] += means[t];
            }
        }
    }
    let reconstructed = reassemble_patches(&recon, &layout)?;
    let sparsity = sparsity_score(summary.s_map.indicators());

    Ok(PatchCodingResult {
        layout,
        reconstructed,
        rmse,
        sparsity,
        summary,
        trace,
    })
}

/// Tile dictionary atoms (columns of length patch_size²) into one image,
/// each atom min-max normalized, with 1-pixel separators.
pub fn atom_atlas(psi: &DMatrix<f64>, patch_size: usize) -> Result<GrayImage> {
    if psi.nrows() != patch_size * patch_size {
        return Err(Error::dimension("atom length != patch_size^2"));
    }
    let n = psi.ncols();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let w = cols * (patch_size + 1) + 1;
    let h = rows * (patch_size + 1) + 1;
    let mut pixels = vec![0u8; w * h];
    for (idx, col) in psi.column_iter().enumerate() {
        let (tile_r, tile_c) = (idx / cols, idx % cols);
        let lo = col.min();
        let hi = col.max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        for pr in 0..patch_size {
            for pc in 0..patch_size {
                let v = (col[pr * patch_size + pc] - lo) / span;
                let y = tile_r * (patch_size + 1) + 1 + pr;
                let x = tile_c * (patch_size + 1) + 1 + pc;
                pixels[y * w + x] = (v * 255.0).round() as u8;
            }
        }
    }
    GrayImage::new(w, h, pixels)
}

/// Deterministic textured grayscale test image: oriented gratings, two
/// frequency chirps, a radial ramp, and a hash-based dither. The chirps
/// sweep their local frequency across the image, so patch content spans
/// many distinct components rather than a handful of global waves.
pub fn textured_test_image(size: usize) -> GrayImage {
    let mut pixels = vec![0u8; size * size];
    let tau = 2.0 * std::f64::consts::PI;
    for y in 0..size {
        for x in 0..size {
            let xf = x as f64 / size as f64;
            let yf = y as f64 / size as f64;
            let mut v = 0.0;
            v += 0.22 * (tau * 6.0 * xf).sin();
            v += 0.16 * (tau * 11.0 * (0.6 * xf + 0.8 * yf)).sin();
            v += 0.14 * (tau * 23.0 * (0.9 * yf - 0.45 * xf)).cos();
            // Chirps: local frequency grows across the field.
            v += 0.22 * (tau * (4.0 * xf + 26.0 * xf * xf)).cos();
            v += 0.20 * (tau * (3.0 * yf + 22.0 * yf * yf + 9.0 * xf * yf)).sin();
            let (cx, cy) = (xf - 0.5, yf - 0.5);
            v += 0.45 * (1.0 - (cx * cx + cy * cy).sqrt() * 1.6);
            v += 0.10 * (tau * 41.0 * xf).sin() * (tau * 37.0 * yf).sin();
            // Deterministic dither from an integer hash.
            let mut hsh = (x as u64)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((y as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
            hsh ^= hsh >> 31;
            hsh = hsh.wrapping_mul(0x94d0_49bb_1331_11eb);
            hsh ^= hsh >> 29;
            v += 0.04 * ((hsh % 1000) as f64 / 1000.0 - 0.5);
            let scaled = ((v * 0.5 + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8;
            pixels[y * size + x] = scaled;
        }
    }
    GrayImage::new(size, size, pixels).expect("sized buffer")
}
