use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use valleyscope::chimera::{sweep_scale, ScaleSweep, Unit};
use valleyscope::datasets::PatternRecord;
use valleyscope::gibbs::{gibbs_chain, relax_t0, ClampMask, DEFAULT_RELAX_SWEEPS};
use valleyscope::rng::{derive_seed, stream_rng};
use valleyscope::{Error, RbmParams, Result, Spin, SpinState};

use super::{read_label, tags, take, LabelStatus, Layout, ANNEALER_PATH, MCMC_PATH};
use crate::backend::{LogicalRead, Sampler};
use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRow {
    pub index: usize,
    pub class: usize,
    pub predicted: Option<usize>,
    pub status: LabelStatus,
    pub fallback_used: bool,
    pub correct: bool,
    /// Energy of the chosen state as the path reports it.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// `annealer` or `mcmc`.
    pub path: String,
    /// Backend id for the annealer path, `gibbs+relax` for MCMC.
    pub backend: String,
    pub total: usize,
    pub errors: usize,
    /// Readouts without exactly one +1 label, before any fallback.
    pub invalid: usize,
    pub error_rate: f64,
    pub rows: Vec<ClassifyRow>,
}

fn summarize(path: &str, backend: String, rows: Vec<ClassifyRow>) -> PathResult {
    let errors = rows.iter().filter(|r| !r.correct).count();
    let invalid = rows
        .iter()
        .filter(|r| r.status != LabelStatus::Unique)
        .count();
    let total = rows.len();
    PathResult {
        path: path.into(),
        backend,
        total,
        errors,
        invalid,
        error_rate: if total == 0 {
            0.0
        } else {
            errors as f64 / total as f64
        },
        rows,
    }
}

fn pixel_clamps(layout: &Layout, v: &[Spin]) -> Vec<(Unit, Spin)> {
    layout
        .pixels
        .iter()
        .map(|&j| (Unit::Visible(j), v[j]))
        .collect()
}

fn lowest(reads: Vec<LogicalRead>) -> Result<LogicalRead> {
    reads
        .into_iter()
        .next()
        .ok_or_else(|| Error::Protocol("backend returned no reads".into()))
}

fn classify_row(
    params: &RbmParams,
    layout: &Layout,
    index: usize,
    pattern: &PatternRecord,
    state: &SpinState,
    energy: f64,
    fallback: bool,
) -> Result<ClassifyRow> {
    let readout = read_label(params, layout, &state.v, fallback)?;
    let class = usize::from(pattern.class);
    Ok(ClassifyRow {
        index,
        class,
        predicted: readout.predicted,
        status: readout.status,
        fallback_used: readout.fallback_used,
        correct: readout.predicted == Some(class),
        energy,
    })
}

/// Clamps every pixel, keeps the lowest-energy read and reads its label.
pub fn classify_annealer(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
) -> Result<PathResult> {
    let layout = Layout::of(params);
    layout.require_labels()?;
    let sampler = Sampler::new(params, cfg)?;
    classify_with(cfg, params, &layout, &sampler, tests)
}

fn classify_with(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    layout: &Layout,
    sampler: &Sampler,
    tests: &[PatternRecord],
) -> Result<PathResult> {
    let seed = derive_seed(cfg.seed, tags::CLASSIFY_ANNEALER);
    let rows = tests
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let best = lowest(sampler.sample(
                &pixel_clamps(layout, &p.visible),
                cfg.task_reads,
                derive_seed(seed, k as u64),
            )?)?;
            classify_row(
                params,
                layout,
                k,
                p,
                &best.state,
                best.energy,
                cfg.classify.free_energy_fallback,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(ANNEALER_PATH, sampler.id(), rows))
}

/// Gibbs chain at T = 1 from `v0` with `clamped` visible units fixed, then
/// T = 0 relaxation. Runs on the logical model only.
fn mcmc_complete(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    v0: &[Spin],
    clamped: &[usize],
    seed: u64,
) -> Result<SpinState> {
    let mask = ClampMask::visible_units(params.n_v, params.n_h, clamped.iter().copied());
    let mut rng = stream_rng(seed, 0);
    let chain = gibbs_chain(params, v0, cfg.mcmc.sweeps, 1.0, &mut rng, Some(&mask))?;
    relax_t0(params, &chain, DEFAULT_RELAX_SWEEPS, &mut rng, Some(&mask))
}

/// Starts every label unit at -1 with the pixels clamped.
pub fn classify_mcmc(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
) -> Result<PathResult> {
    let layout = Layout::of(params);
    layout.require_labels()?;
    let seed = derive_seed(cfg.seed, tags::CLASSIFY_MCMC);
    let rows = tests
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut v0 = p.visible.clone();
            for &j in &layout.labels {
                v0[j] = -1;
            }
            let state = mcmc_complete(
                cfg,
                params,
                &v0,
                &layout.pixels,
                derive_seed(seed, k as u64),
            )?;
            let energy = params.energy(&state)?;
            classify_row(
                params,
                &layout,
                k,
                p,
                &state,
                energy,
                cfg.classify.free_energy_fallback,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(MCMC_PATH, "gibbs+relax".into(), rows))
}

/// Both paths over the first `classify.limit` test patterns.
pub fn classify(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
) -> Result<Vec<PathResult>> {
    let tests = take(tests, cfg.classify.limit);
    Ok(vec![
        classify_annealer(cfg, params, tests)?,
        classify_mcmc(cfg, params, tests)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructRow {
    pub index: usize,
    pub wrong: usize,
    pub error: f64,
    pub visible: Vec<Spin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructResult {
    pub path: String,
    pub backend: String,
    pub mask: Vec<usize>,
    /// Mean over images of the fraction of masked units reconstructed wrongly.
    pub pixel_error: f64,
    pub rows: Vec<ReconstructRow>,
}

/// Configured mask, or the second half of the pixel units.
pub fn resolve_mask(cfg: &ExperimentConfig, params: &RbmParams) -> Result<Vec<usize>> {
    let layout = Layout::of(params);
    let mask = match &cfg.reconstruct.mask {
        Some(m) => m.clone(),
        None => layout.pixels[layout.pixels.len() / 2..].to_vec(),
    };
    if let Some(&bad) = mask.iter().find(|&&j| j >= params.n_v) {
        return Err(Error::Lookup(format!(
            "mask index {bad} is not a visible unit"
        )));
    }
    let mut sorted = mask.clone();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted)
}

fn reconstruct_row(index: usize, truth: &[Spin], got: &[Spin], mask: &[usize]) -> ReconstructRow {
    let wrong = mask.iter().filter(|&&j| truth[j] != got[j]).count();
    ReconstructRow {
        index,
        wrong,
        error: if mask.is_empty() {
            0.0
        } else {
            wrong as f64 / mask.len() as f64
        },
        visible: got.to_vec(),
    }
}

fn reconstruct_summary(
    path: &str,
    backend: String,
    mask: Vec<usize>,
    rows: Vec<ReconstructRow>,
) -> ReconstructResult {
    let pixel_error = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.error).sum::<f64>() / rows.len() as f64
    };
    ReconstructResult {
        path: path.into(),
        backend,
        mask,
        pixel_error,
        rows,
    }
}

/// Pixels outside the mask are clamped; masked pixels and labels are free.
fn clamped_pixels(params: &RbmParams, mask: &[usize]) -> Vec<usize> {
    Layout::of(params)
        .pixels
        .into_iter()
        .filter(|j| !mask.contains(j))
        .collect()
}

pub fn reconstruct_annealer(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
    mask: &[usize],
) -> Result<ReconstructResult> {
    let sampler = Sampler::new(params, cfg)?;
    reconstruct_with(cfg, params, &sampler, tests, mask)
}

fn reconstruct_with(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    sampler: &Sampler,
    tests: &[PatternRecord],
    mask: &[usize],
) -> Result<ReconstructResult> {
    let clamped = clamped_pixels(params, mask);
    let seed = derive_seed(cfg.seed, tags::RECONSTRUCT_ANNEALER);
    let rows = tests
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let clamps: Vec<(Unit, Spin)> = clamped
                .iter()
                .map(|&j| (Unit::Visible(j), p.visible[j]))
                .collect();
            let best =
                lowest(sampler.sample(&clamps, cfg.task_reads, derive_seed(seed, k as u64))?)?;
            Ok(reconstruct_row(k, &p.visible, &best.state.v, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reconstruct_summary(
        ANNEALER_PATH,
        sampler.id(),
        mask.to_vec(),
        rows,
    ))
}

/// Free units start at -1.
pub fn reconstruct_mcmc(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
    mask: &[usize],
) -> Result<ReconstructResult> {
    let clamped = clamped_pixels(params, mask);
    let seed = derive_seed(cfg.seed, tags::RECONSTRUCT_MCMC);
    let rows = tests
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let v0: Vec<Spin> = (0..params.n_v)
                .map(|j| {
                    if clamped.contains(&j) {
                        p.visible[j]
                    } else {
                        -1
                    }
                })
                .collect();
            let state = mcmc_complete(cfg, params, &v0, &clamped, derive_seed(seed, k as u64))?;
            Ok(reconstruct_row(k, &p.visible, &state.v, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reconstruct_summary(
        MCMC_PATH,
        "gibbs+relax".into(),
        mask.to_vec(),
        rows,
    ))
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
) -> Result<Vec<ReconstructResult>> {
    let tests = take(tests, cfg.reconstruct.limit);
    let mask = resolve_mask(cfg, params)?;
    Ok(vec![
        reconstruct_annealer(cfg, params, tests, &mask)?,
        reconstruct_mcmc(cfg, params, tests, &mask)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub class: usize,
    pub rank: usize,
    /// Energy reported by the backend for the read.
    pub energy: f64,
    /// RBM energy of the decoded state.
    pub rbm_energy: f64,
    pub visible: Vec<Spin>,
}

/// For each class: clamp its one-hot label, then keep the `k` lowest-energy
/// reads with distinct pixel images, ascending energy.
pub fn generate(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    classes: &[usize],
    k: usize,
) -> Result<Vec<GeneratedImage>> {
    let layout = Layout::of(params);
    layout.require_labels()?;
    if let Some(&bad) = classes.iter().find(|&&c| c >= layout.labels.len()) {
        return Err(Error::Range(format!("class {bad} has no label unit")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let sampler = Sampler::new(params, cfg)?;
    let seed = derive_seed(cfg.seed, tags::GENERATE);
    let mut out = Vec::new();
    for &class in classes {
        let clamps: Vec<(Unit, Spin)> = layout
            .labels
            .iter()
            .enumerate()
            .map(|(pos, &j)| (Unit::Visible(j), if pos == class { 1 } else { -1 }))
            .collect();
        let reads = sampler.sample(&clamps, cfg.task_reads, derive_seed(seed, class as u64))?;
        let mut seen: Vec<Vec<Spin>> = Vec::new();
        for read in reads {
            let pixels: Vec<Spin> = layout.pixels.iter().map(|&j| read.state.v[j]).collect();
            if seen.contains(&pixels) {
                continue;
            }
            seen.push(pixels);
            out.push(GeneratedImage {
                class,
                rank: seen.len() - 1,
                energy: read.energy,
                rbm_energy: params.energy(&read.state)?,
                visible: read.state.v,
            });
            if seen.len() == k {
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTableRow {
    pub scale: f64,
    pub classification_error: f64,
    pub reconstruction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    pub rows: Vec<ScaleTableRow>,
    /// Scale with the lowest classification error; earliest on ties.
    pub best_scale: f64,
}

/// Annealer classification and reconstruction error at every configured
/// scale, over the first `classify.limit` test patterns.
pub fn sweep_scale_table(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    tests: &[PatternRecord],
) -> Result<ScaleTable> {
    let layout = Layout::of(params);
    layout.require_labels()?;
    let tests = take(tests, cfg.classify.limit);
    let mask = resolve_mask(cfg, params)?;
    let mut reconstruction = Vec::new();
    let ScaleSweep { rows, best_scale } = sweep_scale(
        params,
        &cfg.embedding.graph()?,
        &cfg.embedding.scales,
        &cfg.embedding.options(),
        |problem, embedding, scale| {
            let mut sub = cfg.clone();
            sub.seed = derive_seed(cfg.seed, tags::SWEEP);
            sub.embedding.scale = scale;
            let sampler = Sampler::from_embedded(
                params,
                &sub,
                problem.clone(),
                embedding.clone(),
                Default::default(),
            )?;
            let class = classify_with(&sub, params, &layout, &sampler, tests)?;
            let recon = reconstruct_with(&sub, params, &sampler, tests, &mask)?;
            reconstruction.push(recon.pixel_error);
            Ok(class.error_rate)
        },
    )?;
    let rows = rows
        .into_iter()
        .zip(reconstruction)
        .map(|(r, recon)| ScaleTableRow {
            scale: r.scale,
            classification_error: r.metric,
            reconstruction_error: recon,
        })
        .collect();
    Ok(ScaleTable { rows, best_scale })
}
