//! Annealer backends producing [`SampleSet`]s for an [`IsingProblem`].
//!
//! The local backend is single-flip Metropolis simulated annealing over a
//! geometric inverse-temperature ladder. Qubits that carry neither a bias nor
//! a coupler are not variables; they are reported as +1.

mod wire;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chimera::{embedded_energy, IsingProblem};
use crate::error::{Error, Result};
use crate::rbm::Spin;
use crate::rng::stream_rng;

pub use wire::{
    remote_solve, resolve_endpoint, MockConfig, MockService, RemoteAnnealer, WireRead, WireRequest,
    WireResponse, DEFAULT_MAX_QUBITS, ENDPOINT_ENV, RETRIES,
};

/// Tolerance for re-verifying a read's energy against its spins.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_TASK_READS: usize = 1000;
pub const DEFAULT_SAMPLING_READS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct AnnealSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub sweeps: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            beta_start: 0.1,
            beta_end: 10.0,
            sweeps: 1000,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::Domain(
                "anneal schedule needs at least one sweep".into(),
            ));
        }
        if !(self.beta_start > 0.0 && self.beta_end >= self.beta_start && self.beta_end.is_finite())
        {
            return Err(Error::Domain(format!(
                "inverse temperatures must satisfy 0 < {} <= {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    /// Geometric ladder with one inverse temperature per sweep.
    pub fn betas(&self) -> Vec<f64> {
        if self.sweeps == 1 {
            return vec![self.beta_end];
        }
        let ratio = (self.beta_end / self.beta_start).powf(1.0 / (self.sweeps - 1) as f64);
        (0..self.sweeps)
            .map(|k| self.beta_start * ratio.powi(k as i32))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealRead {
    /// One spin per qubit of the problem.
    pub spins: Vec<Spin>,
    pub energy: f64,
    pub num: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    /// Ascending energy; ties keep read order.
    pub reads: Vec<AnnealRead>,
    pub num_reads: usize,
    pub backend: String,
    pub seed: u64,
    pub schedule: AnnealSchedule,
}

impl SampleSet {
    pub fn total_multiplicity(&self) -> u64 {
        self.reads.iter().map(|r| r.num).sum()
    }

    pub fn lowest(&self) -> Option<&AnnealRead> {
        self.reads.first()
    }

    /// Re-derives every read's energy and the multiplicity total.
    pub fn verify(&self, problem: &IsingProblem) -> Result<()> {
        if self.total_multiplicity() != self.num_reads as u64 {
            return Err(Error::Protocol(format!(
                "multiplicities sum to {} for {} reads",
                self.total_multiplicity(),
                self.num_reads
            )));
        }
        for (k, read) in self.reads.iter().enumerate() {
            let e = embedded_energy(problem, &read.spins)?;
            if (e - read.energy).abs() > ENERGY_TOLERANCE {
                return Err(Error::Protocol(format!(
                    "read {k} reports energy {} but spins give {e}",
                    read.energy
                )));
            }
        }
        Ok(())
    }
}

/// A solver capability; callers only see problems in and sample sets out.
pub trait Annealer: Send + Sync {
    fn id(&self) -> String;
    fn solve(&self, problem: &IsingProblem, num_reads: usize, seed: u64) -> Result<SampleSet>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalSa {
    pub schedule: AnnealSchedule,
}

impl Annealer for LocalSa {
    fn id(&self) -> String {
        "local-sa".into()
    }

    fn solve(&self, problem: &IsingProblem, num_reads: usize, seed: u64) -> Result<SampleSet> {
        solve_sa(problem, num_reads, &self.schedule, seed)
    }
}

/// Problem restricted to its variables with a CSR neighbour list.
pub(crate) struct Compiled {
    pub vars: Vec<usize>,
    h: Vec<f64>,
    start: Vec<usize>,
    nbr: Vec<usize>,
    coupling: Vec<f64>,
}

impl Compiled {
    pub fn new(problem: &IsingProblem) -> Self {
        let vars = problem.variables();
        let pos: HashMap<usize, usize> = vars.iter().enumerate().map(|(k, &q)| (q, k)).collect();
        let n = vars.len();
        let mut h = vec![0.0; n];
        for (q, v) in &problem.h {
            h[pos[q]] = *v;
        }
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(a, b), &j) in &problem.j {
            let (ia, ib) = (pos[&a], pos[&b]);
            lists[ia].push((ib, j));
            lists[ib].push((ia, j));
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut nbr = Vec::new();
        let mut coupling = Vec::new();
        start.push(0);
        for list in lists {
            for (k, j) in list {
                nbr.push(k);
                coupling.push(j);
            }
            start.push(nbr.len());
        }
        Self {
            vars,
            h,
            start,
            nbr,
            coupling,
        }
    }

    fn field(&self, k: usize, s: &[Spin]) -> f64 {
        let mut f = self.h[k];
        for e in self.start[k]..self.start[k + 1] {
            f += self.coupling[e] * f64::from(s[self.nbr[e]]);
        }
        f
    }

    fn anneal<R: Rng + ?Sized>(&self, betas: &[f64], rng: &mut R) -> Vec<Spin> {
        let n = self.vars.len();
        let mut s: Vec<Spin> = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
            .collect();
        for &beta in betas {
            for k in 0..n {
                let delta = 2.0 * f64::from(s[k]) * self.field(k, &s);
                if delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp() {
                    s[k] = -s[k];
                }
            }
        }
        s
    }

    pub fn expand(&self, num_qubits: usize, s: &[Spin]) -> Vec<Spin> {
        let mut dense = vec![1; num_qubits];
        for (&q, &v) in self.vars.iter().zip(s) {
            dense[q] = v;
        }
        dense
    }
}

/// Runs `num_reads` independent anneals; read `r` draws from stream `r` of
/// `seed`, so the result does not depend on the thread count.
pub fn solve_sa(
    problem: &IsingProblem,
    num_reads: usize,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<SampleSet> {
    if num_reads == 0 {
        return Err(Error::Domain("num_reads must be at least 1".into()));
    }
    if problem.is_empty() {
        return Err(Error::Domain("problem has no biases or couplings".into()));
    }
    schedule.validate()?;
    problem.validate(None)?;
    let compiled = Compiled::new(problem);
    let betas = schedule.betas();
    let mut reads = (0..num_reads)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let spins = compiled.expand(problem.num_qubits, &compiled.anneal(&betas, &mut rng));
            let energy = embedded_energy(problem, &spins)?;
            Ok(AnnealRead {
                spins,
                energy,
                num: 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reads.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(SampleSet {
        reads,
        num_reads,
        backend: "local-sa".into(),
        seed,
        schedule: *schedule,
    })
}

/// Distinct spin vectors with summed multiplicities, ascending energy; ties
/// keep first-occurrence order.
pub fn dedupe(sample: &SampleSet) -> Vec<AnnealRead> {
    let mut index: HashMap<&[Spin], usize> = HashMap::new();
    let mut out: Vec<AnnealRead> = Vec::new();
    for read in &sample.reads {
        match index.get(read.spins.as_slice()) {
            Some(&k) => out[k].num += read.num,
            None => {
                index.insert(&read.spins, out.len());
                out.push(read.clone());
            }
        }
    }
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{decode, embed_rbm, ChimeraGraph};
    use crate::rbm::{spins_from_index, RbmParams};

    fn single_qubit(h: f64) -> IsingProblem {
        let mut p = IsingProblem::new(1);
        p.h.insert(0, h);
        p
    }

    fn read(spins: Vec<Spin>, energy: f64) -> AnnealRead {
        AnnealRead {
            spins,
            energy,
            num: 1,
        }
    }

    fn set_of(reads: Vec<AnnealRead>) -> SampleSet {
        SampleSet {
            num_reads: reads.len(),
            reads,
            backend: "test".into(),
            seed: 0,
            schedule: AnnealSchedule::default(),
        }
    }

    #[test]
    fn ladder_is_geometric() {
        let betas = AnnealSchedule::default().betas();
        assert_eq!(betas.len(), 1000);
        assert!((betas[0] - 0.1).abs() < 1e-15);
        assert!((betas[999] - 10.0).abs() < 1e-9);
        let r = betas[1] / betas[0];
        assert!(betas.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
    }

    #[test]
    fn single_qubit_ground_state() {
        let s = solve_sa(&single_qubit(2.0), 1000, &AnnealSchedule::default(), 1).unwrap();
        assert_eq!(s.reads.len(), 1000);
        assert!(s
            .reads
            .iter()
            .all(|r| r.spins == vec![1] && r.energy == -2.0));
        s.verify(&single_qubit(2.0)).unwrap();
    }

    #[test]
    fn weak_single_qubit_still_reaches_ground_state() {
        let p = single_qubit(0.5);
        let s = solve_sa(&p, 4000, &AnnealSchedule::default(), 2).unwrap();
        let good = s.reads.iter().filter(|r| r.spins[0] == 1).count();
        assert!(good as f64 / 4000.0 >= 0.999);
    }

    #[test]
    fn deterministic_and_sorted() {
        let g = ChimeraGraph::new(1, 1, 4).unwrap();
        let mut rng = stream_rng(3, 0);
        let params = RbmParams::random_uniform(4, 4, 0.5, &mut rng);
        let (problem, _) = embed_rbm(&params, &g, 1.0).unwrap();
        let sched = AnnealSchedule {
            sweeps: 50,
            ..AnnealSchedule::default()
        };
        let a = solve_sa(&problem, 64, &sched, 9).unwrap();
        let b = solve_sa(&problem, 64, &sched, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.reads.windows(2).all(|w| w[0].energy <= w[1].energy));
        assert_eq!(a.total_multiplicity(), 64);
        a.verify(&problem).unwrap();
    }

    #[test]
    fn non_variable_qubits_are_up() {
        let mut p = IsingProblem::new(5);
        p.set_coupling(1, 3, -1.0);
        let s = solve_sa(&p, 10, &AnnealSchedule::default(), 4).unwrap();
        for r in &s.reads {
            assert_eq!((r.spins[0], r.spins[2], r.spins[4]), (1, 1, 1));
            assert_eq!(r.spins[1], -r.spins[3]);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let sched = AnnealSchedule::default();
        assert!(solve_sa(&IsingProblem::new(4), 1, &sched, 0).is_err());
        assert!(solve_sa(&single_qubit(1.0), 0, &sched, 0).is_err());
        let bad = AnnealSchedule { sweeps: 0, ..sched };
        assert!(solve_sa(&single_qubit(1.0), 1, &bad, 0).is_err());
    }

    #[test]
    fn embedded_ground_state_found() {
        let g = ChimeraGraph::new(1, 1, 4).unwrap();
        let mut rng = stream_rng(5, 0);
        let params = RbmParams::random_uniform(4, 4, 0.5, &mut rng);
        let mut best = (f64::INFINITY, 0);
        for idx in 0..256 {
            let s = spins_from_index(idx, 8);
            let state = crate::SpinState::new(s[..4].to_vec(), s[4..].to_vec());
            let e = params.energy(&state).unwrap();
            if e < best.0 {
                best = (e, idx);
            }
        }
        let (problem, emb) = embed_rbm(&params, &g, 1.0).unwrap();
        let s = solve_sa(&problem, 100, &AnnealSchedule::default(), 6).unwrap();
        let (state, _) = decode(&emb, &s.reads[0].spins, &mut rng).unwrap();
        assert!((params.energy(&state).unwrap() - best.0).abs() < 1e-12);
    }

    #[test]
    fn dedupe_cases() {
        let same = set_of(vec![read(vec![1, -1], -1.0); 5]);
        let d = dedupe(&same);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].num, 5);

        let distinct = set_of(vec![
            read(vec![1, 1], -2.0),
            read(vec![1, -1], 0.0),
            read(vec![-1, 1], 0.0),
        ]);
        assert_eq!(dedupe(&distinct), distinct.reads);
    }

    #[test]
    fn dedupe_matches_counting_oracle() {
        let mut rng = stream_rng(7, 0);
        let mut reads = Vec::new();
        for _ in 0..300 {
            let idx = rng.random_range(0..8usize);
            let spins = spins_from_index(idx, 3);
            let energy = -f64::from(spins.iter().map(|&s| i32::from(s)).sum::<i32>());
            reads.push(read(spins, energy));
        }
        reads.sort_by(|a, b| a.energy.total_cmp(&b.energy));
        let set = set_of(reads.clone());
        let d = dedupe(&set);
        let mut oracle = std::collections::BTreeMap::new();
        for r in &reads {
            *oracle.entry(r.spins.clone()).or_insert(0u64) += 1;
        }
        assert_eq!(d.len(), oracle.len());
        for r in &d {
            assert_eq!(r.num, oracle[&r.spins]);
        }
        assert_eq!(d.iter().map(|r| r.num).sum::<u64>(), 300);
        assert!(d.windows(2).all(|w| w[0].energy <= w[1].energy));
    }

    #[test]
    fn sample_set_round_trips_through_json() {
        let g = ChimeraGraph::new(1, 1, 4).unwrap();
        let mut rng = stream_rng(8, 0);
        let params = RbmParams::random_uniform(4, 4, 0.5, &mut rng);
        let (problem, _) = embed_rbm(&params, &g, 3.0).unwrap();
        let s = solve_sa(
            &problem,
            8,
            &AnnealSchedule {
                sweeps: 20,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let back: SampleSet = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
