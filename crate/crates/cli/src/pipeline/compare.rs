use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use valleyscope::rng::derive_seed;
use valleyscope::valleys::{
    energy_histogram, escape_rate, fit_escapes, histogram, overlap_stats, registry_from_states,
    registry_from_weighted_states, width_from_warming, ArrheniusFit, EscapeEstimate, Histogram,
    OverlapStats, ValleyRegistry,
};
use valleyscope::{Error, RbmParams, Result, Spin, SpinState};

use super::{tags, Dataset};
use crate::backend::Sampler;
use crate::config::{ExperimentConfig, WidthDepth};

pub const TRAINING_TAG: &str = "training";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub backend: String,
    pub training_patterns: usize,
    pub sampling_reads: usize,
    /// Distinct decoded visible vectors in the sample.
    pub distinct_visible: usize,
    pub broken_chain_reads: u64,
    pub training_valleys: usize,
    pub sample_valleys: usize,
    /// Valley counts divided by the number of training patterns.
    pub training_valleys_normalized: f64,
    pub sample_valleys_normalized: f64,
    /// Registry A is the training side, B the sample side.
    pub overlap: OverlapStats,
    pub characterized: usize,
    pub fitted: usize,
    pub widths: usize,
}

/// One valley of either registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyRow {
    pub registry: String,
    pub state: String,
    pub energy: f64,
    pub hits: u64,
    /// Also present in the other registry.
    pub shared: bool,
    pub e_act: Option<f64>,
    pub ln_prefactor: Option<f64>,
    pub r_squared: Option<f64>,
    pub width: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub summary: CompareSummary,
    pub training: ValleyRegistry,
    pub sample: ValleyRegistry,
    /// Training valleys by minimum energy, shared with the sample or not.
    pub training_energy: Histogram,
    pub sample_energy: Histogram,
    /// Fitted activation energies of characterized sample valleys.
    pub e_act: Histogram,
    pub width: Histogram,
    pub rows: Vec<ValleyRow>,
    /// Escape estimates per characterized sample valley, in row order.
    pub escapes: Vec<(String, Vec<EscapeEstimate>)>,
}

fn empty_histogram() -> Histogram {
    Histogram { bins: Vec::new() }
}

fn histogram_or_empty(values: &[(f64, bool)], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        Ok(empty_histogram())
    } else {
        histogram(values, bins)
    }
}

/// Decoded visible vectors merged in first-seen order with their counts.
fn merge_visible(reads: impl IntoIterator<Item = (Vec<Spin>, u64)>) -> Vec<(Vec<Spin>, u64)> {
    let mut index: HashMap<Vec<Spin>, usize> = HashMap::new();
    let mut out: Vec<(Vec<Spin>, u64)> = Vec::new();
    for (v, n) in reads {
        match index.get(&v) {
            Some(&k) => out[k].1 += n,
            None => {
                index.insert(v.clone(), out.len());
                out.push((v, n));
            }
        }
    }
    out
}

/// Valleys of the sample ordered by decreasing hits, then by state.
fn by_hits(reg: &ValleyRegistry) -> Vec<SpinState> {
    let mut ids: Vec<(u64, SpinState)> = reg
        .records()
        .map(|r| (r.total_hits(), r.id.clone()))
        .collect();
    ids.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ids.into_iter().map(|(_, id)| id).collect()
}

fn depth(fit: &ArrheniusFit, mode: WidthDepth) -> f64 {
    match mode {
        WidthDepth::EAct => fit.e_act,
        WidthDepth::Intercept => fit.ln_prefactor.abs(),
    }
}

/// Registry A from the training patterns, registry B from an unclamped
/// backend sample, their overlap, and escape and width statistics for the
/// sample's valleys.
pub fn compare(
    cfg: &ExperimentConfig,
    params: &RbmParams,
    data: &Dataset,
) -> Result<CompareOutcome> {
    let cc = &cfg.compare;
    let training = registry_from_states(
        params,
        &data.train_vectors(),
        TRAINING_TAG,
        cc.pre_steps,
        derive_seed(cfg.seed, tags::TRAINING_VALLEYS),
    )?;

    let sampler = Sampler::new(params, cfg)?;
    let reads = sampler.sample(&[], cfg.sampling_reads, derive_seed(cfg.seed, tags::SAMPLE))?;
    let broken_chain_reads = reads
        .iter()
        .filter(|r| r.broken_chains > 0)
        .map(|r| r.num)
        .sum();
    let weighted = merge_visible(reads.into_iter().map(|r| (r.state.v, r.num)));
    let mut sample = registry_from_weighted_states(
        params,
        &weighted,
        &sampler.id(),
        cc.pre_steps,
        derive_seed(cfg.seed, tags::SAMPLE_VALLEYS),
    )?;

    let overlap = overlap_stats(&training, &sample)?;
    let training_energy = energy_histogram(&training, cc.histogram_bins, Some(&sample))?;
    let sample_energy = energy_histogram(&sample, cc.histogram_bins, Some(&training))?;

    let chosen: Vec<SpinState> = by_hits(&sample)
        .into_iter()
        .take(cc.max_characterized.unwrap_or(usize::MAX))
        .collect();
    let escape_seed = derive_seed(cfg.seed, tags::ESCAPE);
    let width_seed = derive_seed(cfg.seed, tags::WIDTH);
    let mut escapes = Vec::new();
    let (mut fitted, mut widths) = (0, 0);
    for (n, id) in chosen.iter().enumerate() {
        let valley_seed = derive_seed(escape_seed, n as u64);
        let estimates = cc
            .escape
            .temperatures
            .iter()
            .enumerate()
            .map(|(t_idx, &t)| {
                escape_rate(
                    params,
                    id,
                    t,
                    cc.escape.trials,
                    cc.escape.max_jumps,
                    derive_seed(valley_seed, t_idx as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fit = match fit_escapes(
            &estimates,
            cc.escape.low_t_count,
            cc.escape.max_censored_fraction,
        ) {
            Ok(fit) => Some(fit),
            Err(Error::InsufficientData(_)) => None,
            Err(e) => return Err(e),
        };
        let record = sample.get_mut(id).expect("chosen from the registry");
        if let Some(fit) = fit {
            fitted += 1;
            let d = depth(&fit, cc.width_depth);
            record.e_act = Some(fit.e_act);
            if d > 0.0 && d.is_finite() {
                record.width = Some(width_from_warming(
                    params,
                    id,
                    d,
                    &cc.warming,
                    cc.width_traces,
                    derive_seed(width_seed, n as u64),
                )?);
                widths += 1;
            }
            record.fit = Some(fit);
        }
        escapes.push((id.to_sign_string(), estimates));
    }

    let mut e_act_values = Vec::new();
    let mut width_values = Vec::new();
    for id in &chosen {
        let r = sample.get(id).expect("chosen from the registry");
        let shared = training.contains(id);
        if let Some(e) = r.e_act {
            e_act_values.push((e, shared));
        }
        if let Some(w) = r.width {
            width_values.push((w, shared));
        }
    }
    let e_act = histogram_or_empty(&e_act_values, cc.histogram_bins)?;
    let width = histogram_or_empty(&width_values, cc.histogram_bins)?;

    let mut rows = Vec::new();
    for (name, reg, other) in [
        (TRAINING_TAG, &training, &sample),
        ("sample", &sample, &training),
    ] {
        for r in reg.records() {
            rows.push(ValleyRow {
                registry: name.into(),
                state: r.id.to_sign_string(),
                energy: r.min_energy,
                hits: r.total_hits(),
                shared: other.contains(&r.id),
                e_act: r.e_act,
                ln_prefactor: r.fit.as_ref().map(|f| f.ln_prefactor),
                r_squared: r.fit.as_ref().map(|f| f.r_squared),
                width: r.width,
            });
        }
    }

    let n = data.train.len() as f64;
    let summary = CompareSummary {
        backend: sampler.id(),
        training_patterns: data.train.len(),
        sampling_reads: cfg.sampling_reads,
        distinct_visible: weighted.len(),
        broken_chain_reads,
        training_valleys: training.len(),
        sample_valleys: sample.len(),
        training_valleys_normalized: training.len() as f64 / n,
        sample_valleys_normalized: sample.len() as f64 / n,
        overlap,
        characterized: chosen.len(),
        fitted,
        widths,
    };
    Ok(CompareOutcome {
        summary,
        training,
        sample,
        training_energy,
        sample_energy,
        e_act,
        width,
        rows,
        escapes,
    })
}
