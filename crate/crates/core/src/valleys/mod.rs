//! Attribution of sampled states to local valleys of the RBM energy
//! landscape, valley registries and the statistics built on them.
//!
//! A valley is identified by its zero-temperature relaxation endpoint. When
//! relaxation can end on several states of a flat plateau, each endpoint is
//! its own valley.

mod escape;
pub mod landscape;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_chain, relax_t0, DEFAULT_RELAX_SWEEPS};
use crate::rbm::{check_spins, RbmParams, Spin, SpinState};
use crate::rng::stream_rng;

pub use escape::{
    arrhenius_fit, escape_rate, fit_escapes, width_from_warming, width_parameter, ArrheniusFit,
    EscapeConfig, EscapeEstimate,
};
pub use landscape::{exact_barrier, state_from_index, state_index, Landscape};

/// Gibbs sweeps at T = 1 before relaxation during attribution.
pub const DEFAULT_PRE_STEPS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyRecord {
    pub id: SpinState,
    pub min_energy: f64,
    pub hits: BTreeMap<String, u64>,
    pub e_act: Option<f64>,
    pub width: Option<f64>,
    pub fit: Option<ArrheniusFit>,
}

impl ValleyRecord {
    pub fn total_hits(&self) -> u64 {
        self.hits.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValleyRegistry {
    pub fingerprint: String,
    pub sources: Vec<String>,
    records: BTreeMap<SpinState, ValleyRecord>,
}

impl ValleyRegistry {
    pub fn new(params: &RbmParams) -> Self {
        Self {
            fingerprint: params.fingerprint(),
            sources: Vec::new(),
            records: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &SpinState) -> Option<&ValleyRecord> {
        self.records.get(id)
    }

    pub fn get_mut(&mut self, id: &SpinState) -> Option<&mut ValleyRecord> {
        self.records.get_mut(id)
    }

    pub fn contains(&self, id: &SpinState) -> bool {
        self.records.contains_key(id)
    }

    /// Records in ascending id order.
    pub fn records(&self) -> impl Iterator<Item = &ValleyRecord> {
        self.records.values()
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = &mut ValleyRecord> {
        self.records.values_mut()
    }

    /// Adds `count` hits under `tag`, creating the record if needed. `id`
    /// must be a local minimum of `params`.
    pub fn record_hit(
        &mut self,
        params: &RbmParams,
        id: SpinState,
        tag: &str,
        count: u64,
    ) -> Result<()> {
        if params.fingerprint() != self.fingerprint {
            return Err(Error::Incompatible(
                "registry belongs to a different model".into(),
            ));
        }
        let min_energy = params.energy(&id)?;
        if !params.is_local_minimum(&id) {
            return Err(Error::Domain(format!("{id} is not a local minimum")));
        }
        if !self.sources.iter().any(|s| s == tag) {
            self.sources.push(tag.to_string());
        }
        let record = self
            .records
            .entry(id.clone())
            .or_insert_with(|| ValleyRecord {
                id,
                min_energy,
                hits: BTreeMap::new(),
                e_act: None,
                width: None,
                fit: None,
            });
        *record.hits.entry(tag.to_string()).or_insert(0) += count;
        Ok(())
    }

    /// Valley count divided by the number of training patterns.
    pub fn normalized_count(&self, patterns: usize) -> f64 {
        self.len() as f64 / patterns as f64
    }

    /// One JSON object per line, in ascending id order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in self.records.values() {
            let line = JsonlRecord {
                state: r.id.to_sign_string(),
                n_v: r.id.v.len(),
                energy: r.min_energy,
                hits: r.hits.clone(),
                e_act: r.e_act,
                width: r.width,
                fit: r.fit.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(params: &RbmParams, input: R) -> Result<Self> {
        let mut reg = Self::new(params);
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlRecord = serde_json::from_str(&line)?;
            let id = SpinState::from_sign_string(&rec.state, rec.n_v)?;
            for (tag, &count) in &rec.hits {
                reg.record_hit(params, id.clone(), tag, count)?;
            }
            if let Some(r) = reg.records.get_mut(&id) {
                r.e_act = rec.e_act;
                r.width = rec.width;
                r.fit = rec.fit;
            }
        }
        Ok(reg)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    state: String,
    n_v: usize,
    energy: f64,
    hits: BTreeMap<String, u64>,
    e_act: Option<f64>,
    width: Option<f64>,
    fit: Option<ArrheniusFit>,
}

/// Sign of the hidden field, +1 on ties: the lowest-energy hidden layer for `v`.
fn best_hidden(params: &RbmParams, v: &[Spin]) -> Vec<Spin> {
    params
        .hidden_field(v)
        .into_iter()
        .map(|a| if a >= 0.0 { 1 } else { -1 })
        .collect()
}

/// Runs `pre_steps` Gibbs sweeps at T = 1 from `v` (with h drawn from v),
/// then relaxes at T = 0. With `pre_steps = 0` the hidden layer starts at its
/// lowest-energy response to `v` instead of a sample.
pub fn attribute<R: Rng + ?Sized>(
    params: &RbmParams,
    v: &[Spin],
    pre_steps: usize,
    rng: &mut R,
) -> Result<SpinState> {
    check_spins(v, params.n_v, "visible vector")?;
    let start = if pre_steps == 0 {
        SpinState::new(v.to_vec(), best_hidden(params, v))
    } else {
        gibbs_chain(params, v, pre_steps, 1.0, rng, None)?
    };
    relax_t0(params, &start, DEFAULT_RELAX_SWEEPS, rng, None)
}

/// Attributes each `(visible vector, count)` pair on its own RNG stream
/// (the pair's index) and aggregates hits under `tag`.
pub fn registry_from_weighted_states(
    params: &RbmParams,
    states: &[(Vec<Spin>, u64)],
    tag: &str,
    pre_steps: usize,
    seed: u64,
) -> Result<ValleyRegistry> {
    if states.is_empty() {
        return Err(Error::Domain("no states to attribute".into()));
    }
    let ids = states
        .par_iter()
        .enumerate()
        .map(|(k, (v, _))| attribute(params, v, pre_steps, &mut stream_rng(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut reg = ValleyRegistry::new(params);
    for (id, (_, count)) in ids.into_iter().zip(states) {
        reg.record_hit(params, id, tag, *count)?;
    }
    Ok(reg)
}

pub fn registry_from_states(
    params: &RbmParams,
    states: &[Vec<Spin>],
    tag: &str,
    pre_steps: usize,
    seed: u64,
) -> Result<ValleyRegistry> {
    let weighted: Vec<(Vec<Spin>, u64)> = states.iter().map(|v| (v.clone(), 1)).collect();
    registry_from_weighted_states(params, &weighted, tag, pre_steps, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub n_a: usize,
    pub n_b: usize,
    pub shared: usize,
    /// Fraction of A's valleys absent from B.
    pub missed_by_b_fraction: f64,
    /// Fraction of B's valleys absent from A.
    pub missed_by_a_fraction: f64,
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

pub fn overlap_stats(a: &ValleyRegistry, b: &ValleyRegistry) -> Result<OverlapStats> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::Incompatible(
            "registries come from different models".into(),
        ));
    }
    let shared = a.records.keys().filter(|id| b.contains(id)).count();
    Ok(OverlapStats {
        n_a: a.len(),
        n_b: b.len(),
        shared,
        missed_by_b_fraction: fraction(a.len() - shared, a.len()),
        missed_by_a_fraction: fraction(b.len() - shared, b.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    /// Entries whose valley also appears in the partition registry.
    pub shared: u64,
    pub only: u64,
}

impl HistogramBin {
    pub fn total(&self) -> u64 {
        self.shared + self.only
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(HistogramBin::total).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lo,hi,shared,only,total")?;
        for b in &self.bins {
            writeln!(
                out,
                "{},{},{},{},{}",
                b.lo,
                b.hi,
                b.shared,
                b.only,
                b.total()
            )?;
        }
        Ok(())
    }
}

/// Equal-width bins over `[lo, hi]`; the top edge belongs to the last bin.
/// Each value carries a shared flag.
pub fn histogram_in(values: &[(f64, bool)], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    if !(lo <= hi) {
        return Err(Error::Domain(format!("empty histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lo: lo + width * k as f64,
            hi: if k + 1 == bins {
                hi
            } else {
                lo + width * (k + 1) as f64
            },
            shared: 0,
            only: 0,
        })
        .collect();
    for &(x, shared) in values {
        if !(x >= lo && x <= hi) {
            return Err(Error::Range(format!("{x} outside [{lo}, {hi}]")));
        }
        let k = if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        if shared {
            out[k].shared += 1;
        } else {
            out[k].only += 1;
        }
    }
    Ok(Histogram { bins: out })
}

/// Histogram over the full range of `values`.
pub fn histogram(values: &[(f64, bool)], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Domain("nothing to histogram".into()));
    }
    let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    histogram_in(values, bins, lo, hi)
}

/// Histogram of valley minimum energies. With a partition registry, each
/// valley also found there counts as shared; without one, all are "only".
pub fn energy_histogram(
    registry: &ValleyRegistry,
    bins: usize,
    partition: Option<&ValleyRegistry>,
) -> Result<Histogram> {
    if registry.is_empty() {
        return Err(Error::Domain("registry is empty".into()));
    }
    if let Some(p) = partition {
        if p.fingerprint != registry.fingerprint {
            return Err(Error::Incompatible(
                "registries come from different models".into(),
            ));
        }
    }
    let values: Vec<(f64, bool)> = registry
        .records()
        .map(|r| (r.min_energy, partition.is_some_and(|p| p.contains(&r.id))))
        .collect();
    histogram(&values, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::spins_from_index;

    fn model() -> RbmParams {
        let mut rng = stream_rng(1, 0);
        RbmParams::random_normal(3, 2, 1.0, &mut rng)
    }

    #[test]
    fn minimum_with_no_pre_steps_is_fixed() {
        let p = model();
        let land = Landscape::enumerate(&p, 16).unwrap();
        let mut rng = stream_rng(2, 0);
        for &m in &land.minima {
            let s = land.state(m);
            let strict = (0..5).all(|k| land.energies[m ^ (1 << k)] > land.energies[m]);
            if strict {
                assert_eq!(attribute(&p, &s.v, 0, &mut rng).unwrap(), s);
            }
        }
    }

    #[test]
    fn attribution_ends_in_a_true_minimum() {
        let p = model();
        let land = Landscape::enumerate(&p, 16).unwrap();
        let mut rng = stream_rng(3, 0);
        for idx in 0..8 {
            let v = spins_from_index(idx, 3);
            for pre in [0, 1, 3] {
                let id = attribute(&p, &v, pre, &mut rng).unwrap();
                assert!(land.minima.contains(&state_index(&id)));
            }
        }
    }

    #[test]
    fn attribution_is_seeded() {
        let p = model();
        let v = vec![1, -1, 1];
        let a = attribute(&p, &v, 2, &mut stream_rng(9, 1)).unwrap();
        let b = attribute(&p, &v, 2, &mut stream_rng(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicates_collapse() {
        let p = model();
        let states = vec![vec![1, 1, 1]; 7];
        let reg = registry_from_states(&p, &states, "a", 0, 0).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.records().next().unwrap().hits["a"], 7);
        assert!(registry_from_states(&p, &[], "a", 0, 0).is_err());
    }

    fn fixture_registry(p: &RbmParams, ids: &[usize], land: &Landscape) -> ValleyRegistry {
        let mut reg = ValleyRegistry::new(p);
        for &k in ids {
            reg.record_hit(p, land.state(land.minima[k]), "x", 1)
                .unwrap();
        }
        reg
    }

    fn many_minima() -> (RbmParams, Landscape) {
        let mut rng = stream_rng(4, 0);
        loop {
            let p = RbmParams::random_normal(6, 6, 2.0, &mut rng);
            let land = Landscape::enumerate(&p, 16).unwrap();
            if land.minima.len() >= 14 {
                return (p, land);
            }
        }
    }

    #[test]
    fn overlap_cases() {
        let (p, land) = many_minima();
        let a = fixture_registry(&p, &(0..10).collect::<Vec<_>>(), &land);
        let same = overlap_stats(&a, &a).unwrap();
        assert_eq!(
            (same.missed_by_a_fraction, same.missed_by_b_fraction),
            (0.0, 0.0)
        );

        let b = fixture_registry(&p, &[0, 1, 2, 3, 10, 11, 12, 13], &land);
        let s = overlap_stats(&a, &b).unwrap();
        assert_eq!(s.shared, 4);
        assert_eq!(s.missed_by_b_fraction, 0.6);
        assert_eq!(s.missed_by_a_fraction, 0.5);
        let t = overlap_stats(&b, &a).unwrap();
        assert_eq!((t.missed_by_a_fraction, t.missed_by_b_fraction), (0.6, 0.5));

        let c = fixture_registry(&p, &[10, 11, 12], &land);
        let d = fixture_registry(&p, &[0, 1], &land);
        let disjoint = overlap_stats(&c, &d).unwrap();
        assert_eq!(
            (disjoint.missed_by_a_fraction, disjoint.missed_by_b_fraction),
            (1.0, 1.0)
        );

        let other = ValleyRegistry::new(&model());
        assert!(matches!(
            overlap_stats(&a, &other),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn histogram_cases() {
        let (p, land) = many_minima();
        let one = fixture_registry(&p, &[3], &land);
        let h = energy_histogram(&one, 5, None).unwrap();
        assert_eq!(h.bins.iter().filter(|b| b.total() > 0).count(), 1);

        let a = fixture_registry(&p, &(0..10).collect::<Vec<_>>(), &land);
        let selfpart = energy_histogram(&a, 4, Some(&a)).unwrap();
        assert!(selfpart.bins.iter().all(|b| b.only == 0));
        assert_eq!(selfpart.total(), 10);

        let values = [
            (0.0, true),
            (0.5, false),
            (1.0, false),
            (2.5, true),
            (3.9, false),
            (4.0, true),
        ];
        let h = histogram(&values, 4).unwrap();
        let counts: Vec<(u64, u64)> = h.bins.iter().map(|b| (b.shared, b.only)).collect();
        assert_eq!(counts, vec![(1, 1), (0, 1), (1, 0), (1, 1)]);
        assert!(energy_histogram(&ValleyRegistry::new(&p), 3, None).is_err());
        assert!(histogram(&values, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let (p, land) = many_minima();
        let mut reg = fixture_registry(&p, &[0, 4, 7], &land);
        reg.record_hit(&p, land.state(land.minima[4]), "y", 3)
            .unwrap();
        if let Some(r) = reg.records_mut().next() {
            r.e_act = Some(1.25);
            r.width = Some(4.0);
        }
        let mut buf = Vec::new();
        reg.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 3);
        let back = ValleyRegistry::read_jsonl(&p, buf.as_slice()).unwrap();
        assert_eq!(
            back.records().collect::<Vec<_>>(),
            reg.records().collect::<Vec<_>>()
        );
    }

    #[test]
    fn non_minimum_is_rejected() {
        let mut p = RbmParams::zeros(1, 1);
        p.w[0] = 1.0;
        let mut reg = ValleyRegistry::new(&p);
        let err = reg.record_hit(&p, SpinState::new(vec![1], vec![-1]), "x", 1);
        assert!(matches!(err, Err(Error::Domain(_))));
    }
}
