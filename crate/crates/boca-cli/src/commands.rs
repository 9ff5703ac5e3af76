//! Implementations of the CLI subcommands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use boca::nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use boca::estimators::{
    align_dictionary, apply_alignment_to_sources, recompute_map_value, PosteriorSummary,
};
use boca::io;
use boca::metrics::{reconstruction_error_trace, rmse, sparsity_score, support_f1, EvalReport};
use boca::model::{Dictionary, ObservationSet, SourceState};
use boca::patches::{atom_atlas, sparse_code_image, PatchLayout, DEFAULT_PATCH_SIZE};
use boca::rng::{mix_stream_id, RngStream};
use boca::sampler::{run_chain, ChainTrace, ProgressSink, SamplerSettings};
use boca::synthdata::{
    generate_bench_dataset, generate_toy_dataset, BenchConfig, GeneratedDataset, ToyConfig,
};
use boca::validate::{run_full_suite, run_quick_suite, CheckResult};

use crate::config::RunConfig;

/// Error wrapper carrying a specific process exit code.
#[derive(Clone, Copy, Debug)]
pub struct ExitWith(pub u8);

impl fmt::Display for ExitWith {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exiting with code {}", self.0)
    }
}

impl std::error::Error for ExitWith {}

pub struct Context {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Context {
    fn run_config(&self) -> Result<RunConfig> {
        RunConfig::load(self.config_path.as_deref())
    }

    fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.or(cfg.seed).unwrap_or(0)
    }

    fn ensure_out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }
}

/// Progress reporting to stderr, roughly twenty updates per run.
struct StderrProgress {
    every: usize,
}

impl StderrProgress {
    fn for_total(n_mc: usize) -> Self {
        StderrProgress {
            every: (n_mc / 20).max(1),
        }
    }
}

impl ProgressSink for StderrProgress {
    fn on_iteration(&mut self, iteration: usize, n_mc: usize, log_marginal: f64) {
        if iteration % self.every == 0 || iteration == n_mc {
            eprintln!("iteration {iteration}/{n_mc}, marginal log-posterior {log_marginal:.3}");
        }
    }
}

fn write_dataset(dir: &Path, data: &GeneratedDataset) -> Result<()> {
    io::write_matrix_csv(&dir.join("X.csv"), data.noisy.matrix())?;
    io::write_matrix_csv(&dir.join("S_true.csv"), data.src.amplitudes())?;
    io::write_matrix_csv(
        &dir.join("Q_true.csv"),
        &data.src.indicators().map(f64::from),
    )?;
    io::write_matrix_csv(&dir.join("Psi_true.csv"), data.dict.matrix())?;
    Ok(())
}

pub fn generate(
    ctx: &Context,
    toy: bool,
    bench: bool,
    n: Option<usize>,
    snr: Option<f64>,
) -> Result<()> {
    if toy == bench {
        bail!(boca::Error::Config(
            "choose exactly one of --toy or --bench".into()
        ));
    }
    let run_cfg = ctx.run_config()?;
    let seed = ctx.seed(&run_cfg);
    let dir = ctx.ensure_out_dir()?;
    let mut rng = RngStream::new(seed, 0);

    let (data, kind, config_json) = if toy {
        let mut cfg = ToyConfig::default();
        if let Some(s) = snr {
            cfg.snr_db = s;
        }
        let data = generate_toy_dataset(&cfg, &mut rng)?;
        (data, "toy", serde_json::to_value(&cfg)?)
    } else {
        let cfg = BenchConfig::new(n.unwrap_or(8), snr.unwrap_or(10.0));
        let data = generate_bench_dataset(&cfg, &mut rng)?;
        (data, "bench", serde_json::to_value(&cfg)?)
    };

    write_dataset(dir, &data)?;
    let counts: Vec<usize> = (0..data.src.n()).map(|r| data.src.count_active(r)).collect();
    io::write_json(
        &dir.join("manifest.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": "generate",
            "kind": kind,
            "seed": seed,
            "config": config_json,
            "sigma2": data.sigma2,
            "snr_db": data.snr_db,
            "true_active_counts": counts,
            "files": ["X.csv", "S_true.csv", "Q_true.csv", "Psi_true.csv"],
        }),
    )?;
    println!(
        "wrote {} dataset to {} (sigma2 {:.6e}, snr {:.2} dB)",
        kind,
        dir.display(),
        data.sigma2,
        data.snr_db
    );
    Ok(())
}

fn write_fit_outputs(
    dir: &Path,
    trace: &ChainTrace,
    summary: &PosteriorSummary,
    obs: &ObservationSet,
) -> Result<()> {
    // Scalar trace over every iteration, burn-in included:
    // iteration, sigma2, lambda_0.., a2_0.., log_marginal.
    let n = summary.s_mmse.nrows();
    let cols = 2 + 2 * n + 1;
    let mut scalars = DMatrix::zeros(trace.scalars.len(), cols);
    for (row, rec) in trace.scalars.iter().enumerate() {
        scalars[(row, 0)] = rec.iteration as f64;
        scalars[(row, 1)] = rec.sigma2;
        for k in 0..n {
            scalars[(row, 2 + k)] = rec.lambda[k];
            scalars[(row, 2 + n + k)] = rec.a2[k];
        }
        scalars[(row, 2 + 2 * n)] = rec.log_marginal;
    }
    io::write_matrix_csv(&dir.join("trace.csv"), &scalars)?;

    io::write_matrix_csv(&dir.join("s_map.csv"), summary.s_map.amplitudes())?;
    io::write_matrix_csv(&dir.join("psi_map.csv"), summary.psi_map.matrix())?;
    io::write_matrix_csv(&dir.join("s_mmse.csv"), &summary.s_mmse)?;
    io::write_matrix_csv(&dir.join("psi_mmse.csv"), &summary.psi_mmse)?;
    io::write_matrix_csv(&dir.join("q_prob.csv"), &summary.q_prob)?;
    for (k, hist) in summary.k_histograms.iter().enumerate() {
        let mut m = DMatrix::zeros(hist.len(), 2);
        for (row, &p) in hist.iter().enumerate() {
            m[(row, 0)] = row as f64;
            m[(row, 1)] = p;
        }
        io::write_matrix_csv(&dir.join(format!("k_hist_{k}.csv")), &m)?;
    }
    let errors = reconstruction_error_trace(trace, obs)?;
    let mut em = DMatrix::zeros(errors.len(), 2);
    for (row, &e) in errors.iter().enumerate() {
        em[(row, 0)] = (row + 1) as f64;
        em[(row, 1)] = e;
    }
    io::write_matrix_csv(&dir.join("error_trace.csv"), &em)?;
    Ok(())
}

/// Recompute the MAP marginal from its stored pair; a mismatch means the
/// argmax bookkeeping is broken and the command must not exit cleanly.
fn check_map_bookkeeping(
    summary: &PosteriorSummary,
    obs: &ObservationSet,
    cfg: &boca::model::ModelConfig,
) -> Result<f64> {
    let recomputed = recompute_map_value(summary, obs, cfg)?;
    if (recomputed - summary.log_map_value).abs() > 1e-10 {
        bail!(
            "MAP bookkeeping mismatch: stored {} vs recomputed {recomputed}",
            summary.log_map_value
        );
    }
    Ok(recomputed)
}

pub fn fit(
    ctx: &Context,
    input: &Path,
    n: Option<usize>,
    n_mc: Option<usize>,
    n_bi: Option<usize>,
) -> Result<()> {
    let run_cfg = ctx.run_config()?;
    let seed = ctx.seed(&run_cfg);
    let dir = ctx.ensure_out_dir()?;

    let x = io::read_matrix_csv(input)?;
    let obs = ObservationSet::new(x)?;
    let n = n
        .or(run_cfg.n)
        .ok_or_else(|| anyhow!(boca::Error::Config("number of sources required (--n)".into())))?;
    let cfg = run_cfg.model_config(obs.m(), n, obs.t_len())?;
    let settings = SamplerSettings::new(
        n_mc.or(run_cfg.n_mc).unwrap_or(1000),
        n_bi.or(run_cfg.n_bi).unwrap_or(100),
        seed,
    );
    settings.validate().map_err(anyhow::Error::from)?;

    let started = Instant::now();
    let trace = run_chain(
        &obs,
        &cfg,
        &settings,
        &mut StderrProgress::for_total(settings.n_mc),
    )?;
    let wall = started.elapsed().as_secs_f64();

    let summary = PosteriorSummary::from_trace(&trace)?;
    let map_value = check_map_bookkeeping(&summary, &obs, &cfg)?;
    write_fit_outputs(dir, &trace, &summary, &obs)?;

    let residual_rmse = rmse(&obs, &summary.psi_map, &summary.s_map)?;
    io::write_json(
        &dir.join("fit_report.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": "fit",
            "input": input.display().to_string(),
            "config": cfg,
            "n_mc": settings.n_mc,
            "n_bi": settings.n_bi,
            "seed": seed,
            "wall_clock_seconds": wall,
            "map_log_value": map_value,
            "map_retained_index": summary.map_index,
            "map_residual_rmse": residual_rmse,
            "map_sparsity": sparsity_score(summary.s_map.indicators()),
        }),
    )?;
    println!(
        "fit complete in {wall:.1} s: MAP marginal log-posterior {map_value:.3}, residual rmse {residual_rmse:.4e}"
    );
    Ok(())
}

pub fn evaluate(ctx: &Context, estimates: &Path, truth: &Path) -> Result<()> {
    let dir = ctx.ensure_out_dir()?;

    let s_map = io::read_matrix_csv(&estimates.join("s_map.csv"))?;
    let psi_map = io::read_matrix_csv(&estimates.join("psi_map.csv"))?;
    let est_src = SourceState::from_amplitudes(s_map)?;
    let est_dict = Dictionary::new(psi_map)?;

    let s_true = io::read_matrix_csv(&truth.join("S_true.csv"))?;
    let q_true = io::read_indicator_csv(&truth.join("Q_true.csv"))?;
    let psi_true = Dictionary::new(io::read_matrix_csv(&truth.join("Psi_true.csv"))?)?;
    let src_true = SourceState::new(s_true, q_true)?;
    let clean = ObservationSet::new(psi_true.matrix() * src_true.amplitudes())?;

    let (perm, signs, aligned_dict) = align_dictionary(&est_dict, &psi_true)?;
    let aligned_src = apply_alignment_to_sources(&est_src, &perm, &signs)?;

    let report = EvalReport {
        rmse: rmse(&clean, &aligned_dict, &aligned_src)?,
        sparsity_score: sparsity_score(aligned_src.indicators()),
        support_f1: support_f1(aligned_src.indicators(), src_true.indicators())?,
        error_trace: Vec::new(),
    };
    io::write_json(&dir.join("eval_report.json"), &report)?;
    println!(
        "rmse {:.6e}, sparsity {:.4}, support F1 {:.4}",
        report.rmse, report.sparsity_score, report.support_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct ValidationReport {
    version: &'static str,
    level: &'static str,
    seed: u64,
    all_passed: bool,
    checks: Vec<CheckResult>,
}

pub fn validate(ctx: &Context, full: bool) -> Result<()> {
    let run_cfg = ctx.run_config()?;
    let seed = ctx.seed(&run_cfg);
    let dir = ctx.ensure_out_dir()?;

    let checks = if full {
        run_full_suite(seed)
    } else {
        run_quick_suite(seed)
    };
    let all_passed = checks.iter().all(|c| c.pass);
    for check in &checks {
        println!(
            "{} {}: {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.details
        );
    }
    io::write_json(
        &dir.join("validation_report.json"),
        &ValidationReport {
            version: env!("CARGO_PKG_VERSION"),
            level: if full { "full" } else { "quick" },
            seed,
            all_passed,
            checks,
        },
    )?;
    if !all_passed {
        return Err(anyhow!(ExitWith(crate::EXIT_VALIDATION)).context("validation checks failed"));
    }
    println!("all validation checks passed");
    Ok(())
}

struct BenchRow {
    n: usize,
    snr_db: f64,
    trial: usize,
    rmse: f64,
    sparsity: f64,
    f1: f64,
}

pub fn bench(
    ctx: &Context,
    n_list: &[usize],
    snr_list: &[f64],
    trials: usize,
    n_mc: Option<usize>,
    n_bi: Option<usize>,
) -> Result<()> {
    if n_list.is_empty() || snr_list.is_empty() || trials == 0 {
        bail!(boca::Error::Config("empty benchmark grid".into()));
    }
    let run_cfg = ctx.run_config()?;
    let seed = ctx.seed(&run_cfg);
    let dir = ctx.ensure_out_dir()?;
    let n_mc = n_mc.or(run_cfg.n_mc).unwrap_or(300);
    let n_bi = n_bi.or(run_cfg.n_bi).unwrap_or(50);

    let mut cells = Vec::new();
    for (ni, &n) in n_list.iter().enumerate() {
        for (si, &snr) in snr_list.iter().enumerate() {
            for trial in 0..trials {
                cells.push((ni, n, si, snr, trial));
            }
        }
    }

    let rows: Result<Vec<BenchRow>> = cells
        .par_iter()
        .map(|&(ni, n, si, snr, trial)| {
            bench_trial(seed, ni, n, si, snr, trial, n_mc, n_bi).map_err(anyhow::Error::from)
        })
        .collect();
    let mut rows = rows?;
    rows.sort_by(|a, b| {
        (a.n, a.trial)
            .cmp(&(b.n, b.trial))
            .then(a.snr_db.total_cmp(&b.snr_db))
    });

    let mut table = DMatrix::zeros(rows.len(), 6);
    for (r, row) in rows.iter().enumerate() {
        table[(r, 0)] = row.n as f64;
        table[(r, 1)] = row.snr_db;
        table[(r, 2)] = row.trial as f64;
        table[(r, 3)] = row.rmse;
        table[(r, 4)] = row.sparsity;
        table[(r, 5)] = row.f1;
    }
    io::write_matrix_csv(&dir.join("bench_results.csv"), &table)?;

    // Aggregate means with the standard error of the RMSE mean.
    let mut agg = Vec::new();
    for &n in n_list {
        for &snr in snr_list {
            let cell: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.n == n && r.snr_db == snr)
                .collect();
            let count = cell.len() as f64;
            let mean_rmse = cell.iter().map(|r| r.rmse).sum::<f64>() / count;
            let var_rmse = cell
                .iter()
                .map(|r| (r.rmse - mean_rmse).powi(2))
                .sum::<f64>()
                / (count - 1.0).max(1.0);
            agg.push([
                n as f64,
                snr,
                count,
                mean_rmse,
                (var_rmse / count).sqrt(),
                cell.iter().map(|r| r.sparsity).sum::<f64>() / count,
                cell.iter().map(|r| r.f1).sum::<f64>() / count,
            ]);
        }
    }
    let mut agg_table = DMatrix::zeros(agg.len(), 7);
    for (r, row) in agg.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            agg_table[(r, c)] = v;
        }
    }
    io::write_matrix_csv(&dir.join("bench_aggregate.csv"), &agg_table)?;

    // Per-N monotonicity summary: mean RMSE non-increasing in SNR, with one
    // combined MC standard error of slack between neighbours.
    let mut monotone = serde_json::Map::new();
    let snr_sorted = {
        let mut s = snr_list.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    for &n in n_list {
        let series: Vec<(f64, f64)> = snr_sorted
            .iter()
            .map(|&snr| {
                let row = agg
                    .iter()
                    .find(|r| r[0] == n as f64 && r[1] == snr)
                    .expect("aggregate row exists");
                (row[3], row[4])
            })
            .collect();
        let ok = series.windows(2).all(|w| {
            let slack = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
            w[1].0 <= w[0].0 + slack
        });
        monotone.insert(format!("N={n}"), serde_json::Value::Bool(ok));
    }

    io::write_json(
        &dir.join("manifest.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": "bench",
            "seed": seed,
            "n_list": n_list,
            "snr_list": snr_list,
            "trials": trials,
            "n_mc": n_mc,
            "n_bi": n_bi,
            "rmse_non_increasing_in_snr": monotone,
            "files": ["bench_results.csv", "bench_aggregate.csv"],
        }),
    )?;
    println!(
        "bench grid complete: {} rows to {}",
        rows.len(),
        dir.display()
    );
    Ok(())
}

fn bench_trial(
    seed: u64,
    ni: usize,
    n: usize,
    si: usize,
    snr: f64,
    trial: usize,
    n_mc: usize,
    n_bi: usize,
) -> boca::Result<BenchRow> {
    let cfg = BenchConfig::new(n, snr);
    let stream = mix_stream_id(0, &[ni as u64, si as u64, trial as u64]);
    let mut rng = RngStream::new(seed, stream);
    let data = generate_bench_dataset(&cfg, &mut rng)?;

    let model_cfg = boca::model::ModelConfig::new(cfg.m, cfg.n, cfg.t)?;
    let mut settings = SamplerSettings::new(n_mc, n_bi, seed);
    settings.stream_id = mix_stream_id(1, &[ni as u64, si as u64, trial as u64]);
    let trace = run_chain(
        &data.noisy,
        &model_cfg,
        &settings,
        &mut boca::sampler::NullProgress,
    )?;
    let summary = PosteriorSummary::from_trace(&trace)?;

    let (perm, signs, aligned_dict) = align_dictionary(&summary.psi_map, &data.dict)?;
    let aligned_src = apply_alignment_to_sources(&summary.s_map, &perm, &signs)?;
    Ok(BenchRow {
        n,
        snr_db: snr,
        trial,
        rmse: rmse(&data.clean, &aligned_dict, &aligned_src)?,
        sparsity: sparsity_score(aligned_src.indicators()),
        f1: support_f1(aligned_src.indicators(), data.src.indicators())?,
    })
}

pub fn patches(
    ctx: &Context,
    image_path: &Path,
    n_atoms: usize,
    n_mc: Option<usize>,
    n_bi: Option<usize>,
    center: bool,
) -> Result<()> {
    let run_cfg = ctx.run_config()?;
    let seed = ctx.seed(&run_cfg);
    let dir = ctx.ensure_out_dir()?;

    let image = io::read_pgm(image_path)?;
    let settings = SamplerSettings::new(
        n_mc.or(run_cfg.n_mc).unwrap_or(200),
        n_bi.or(run_cfg.n_bi).unwrap_or(40),
        seed,
    );
    settings.validate().map_err(anyhow::Error::from)?;

    let started = Instant::now();
    let result = sparse_code_image(
        &image,
        n_atoms,
        &settings,
        center,
        &mut StderrProgress::for_total(settings.n_mc),
    )?;
    let wall = started.elapsed().as_secs_f64();

    io::write_pgm(&dir.join("reconstructed.pgm"), &result.reconstructed)?;
    let atlas = atom_atlas(result.summary.psi_map.matrix(), DEFAULT_PATCH_SIZE)?;
    io::write_pgm(&dir.join("atoms.pgm"), &atlas)?;

    io::write_json(
        &dir.join("patches_report.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": "patches",
            "image": image_path.display().to_string(),
            "patch_size": DEFAULT_PATCH_SIZE,
            "n_atoms": n_atoms,
            "n_mc": settings.n_mc,
            "n_bi": settings.n_bi,
            "seed": seed,
            "center_patches": center,
            "rmse": result.rmse,
            "sparsity": result.sparsity,
            "wall_clock_seconds": wall,
        }),
    )?;
    println!(
        "patch coding complete in {wall:.1} s: rmse {:.5}, sparsity {:.4}",
        result.rmse, result.sparsity
    );
    let _ = PatchLayout::new(image.width, image.height, DEFAULT_PATCH_SIZE)?;
    Ok(())
}
