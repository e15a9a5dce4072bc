//! Chimera lattice, the clone-chain embedding of a complete bipartite RBM,
//! clamping, and majority-vote decoding.
//!
//! Qubit numbering: `((row * cols + col) * 2c) + side * c + offset`, where
//! side 0 is the left (vertically coupled) half of a unit cell and side 1 the
//! right (horizontally coupled) half.
//!
//! Energies follow `E(s) = -sum J_ij s_i s_j - sum h_j s_j`, so a positive
//! coupling is ferromagnetic.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{RbmParams, Spin, SpinState};

pub const MAX_BIAS: f64 = 2.0;
pub const MAX_COUPLING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left = 0,
    Right = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChimeraGraph {
    rows: usize,
    cols: usize,
    half: usize,
    couplers: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl ChimeraGraph {
    /// Builds an `rows x cols` grid of `K_{half,half}` unit cells with no
    /// missing qubits or couplers.
    pub fn new(rows: usize, cols: usize, half: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || half == 0 {
            return Err(Error::Domain("Chimera dimensions must be positive".into()));
        }
        let mut g = Self {
            rows,
            cols,
            half,
            couplers: Vec::new(),
            adjacency: vec![Vec::new(); 2 * half * rows * cols],
        };
        let mut couplers = Vec::with_capacity(Self::coupler_count(rows, cols, half));
        for row in 0..rows {
            for col in 0..cols {
                for a in 0..half {
                    for b in 0..half {
                        couplers.push((
                            g.qubit(row, col, Side::Left, a),
                            g.qubit(row, col, Side::Right, b),
                        ));
                    }
                    if row + 1 < rows {
                        couplers.push((
                            g.qubit(row, col, Side::Left, a),
                            g.qubit(row + 1, col, Side::Left, a),
                        ));
                    }
                    if col + 1 < cols {
                        couplers.push((
                            g.qubit(row, col, Side::Right, a),
                            g.qubit(row, col + 1, Side::Right, a),
                        ));
                    }
                }
            }
        }
        for pair in &mut couplers {
            if pair.0 > pair.1 {
                *pair = (pair.1, pair.0);
            }
        }
        couplers.sort_unstable();
        for &(a, b) in &couplers {
            g.adjacency[a].push(b);
            g.adjacency[b].push(a);
        }
        g.adjacency.iter_mut().for_each(|n| n.sort_unstable());
        g.couplers = couplers;
        Ok(g)
    }

    /// Coupler count of a flawless lattice: c^2 MN + c(M-1)N + cM(N-1).
    pub fn coupler_count(rows: usize, cols: usize, half: usize) -> usize {
        half * half * rows * cols + half * (rows - 1) * cols + half * rows * (cols - 1)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn half(&self) -> usize {
        self.half
    }

    pub fn num_qubits(&self) -> usize {
        self.adjacency.len()
    }

    pub fn couplers(&self) -> &[(usize, usize)] {
        &self.couplers
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.adjacency[q]
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn qubit(&self, row: usize, col: usize, side: Side, offset: usize) -> usize {
        (row * self.cols + col) * 2 * self.half + side as usize * self.half + offset
    }

    pub fn has_coupler(&self, a: usize, b: usize) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.couplers.binary_search(&key).is_ok()
    }
}

/// A logical RBM unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "layer", content = "index", rename_all = "lowercase")]
pub enum Unit {
    Visible(usize),
    Hidden(usize),
}

/// Logical-unit to qubit-chain map for the clone embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub visible_chains: Vec<Vec<usize>>,
    pub hidden_chains: Vec<Vec<usize>>,
    /// `crossings[i * n_v + j]` is the coupler (visible qubit, hidden qubit)
    /// carrying `w_ij`.
    pub crossings: Vec<(usize, usize)>,
    pub chain_couplers: Vec<(usize, usize)>,
    pub num_qubits: usize,
}

impl Embedding {
    pub fn n_v(&self) -> usize {
        self.visible_chains.len()
    }

    pub fn n_h(&self) -> usize {
        self.hidden_chains.len()
    }

    pub fn chain(&self, unit: Unit) -> Result<&[usize]> {
        let chain = match unit {
            Unit::Visible(j) => self.visible_chains.get(j),
            Unit::Hidden(i) => self.hidden_chains.get(i),
        };
        chain
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("{unit:?} is not embedded")))
    }

    pub fn units(&self) -> impl Iterator<Item = Unit> + '_ {
        (0..self.n_v())
            .map(Unit::Visible)
            .chain((0..self.n_h()).map(Unit::Hidden))
    }

    /// Embedded energy minus this offset equals the logical energy over the
    /// scale, for chain-consistent states: `-chain_strength * sum (L - 1)`.
    pub fn chain_offset(&self, chain_strength: f64) -> f64 {
        -chain_strength * self.chain_couplers.len() as f64
    }

    /// Chain-consistent qubit assignment for a logical state. Qubits outside
    /// every chain are set to +1.
    pub fn encode(&self, state: &SpinState) -> Result<Vec<Spin>> {
        if state.v.len() != self.n_v() || state.h.len() != self.n_h() {
            return Err(Error::Shape("state does not match the embedding".into()));
        }
        let mut qubits = vec![1; self.num_qubits];
        for (chain, &s) in self
            .visible_chains
            .iter()
            .zip(&state.v)
            .chain(self.hidden_chains.iter().zip(&state.h))
        {
            for &q in chain {
                qubits[q] = s;
            }
        }
        Ok(qubits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub rows: usize,
    pub cols: usize,
    pub half: usize,
    pub scale: f64,
    pub chain_strength: f64,
}

impl Default for ProblemMeta {
    fn default() -> Self {
        Self {
            rows: 0,
            cols: 0,
            half: 0,
            scale: 1.0,
            chain_strength: MAX_COUPLING,
        }
    }
}

/// Ising instance on physical qubits in the internal sign convention.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingProblem {
    pub num_qubits: usize,
    pub h: BTreeMap<usize, f64>,
    /// Keys satisfy `a < b`.
    pub j: BTreeMap<(usize, usize), f64>,
    pub meta: ProblemMeta,
}

impl IsingProblem {
    pub fn new(num_qubits: usize) -> Self {
        Self {
            num_qubits,
            h: BTreeMap::new(),
            j: BTreeMap::new(),
            meta: ProblemMeta::default(),
        }
    }

    pub fn set_coupling(&mut self, a: usize, b: usize, value: f64) {
        let key = if a < b { (a, b) } else { (b, a) };
        self.j.insert(key, value);
    }

    /// Qubits that carry a bias or touch a coupler, ascending.
    pub fn variables(&self) -> Vec<usize> {
        let mut vars: Vec<usize> = self
            .h
            .keys()
            .copied()
            .chain(self.j.keys().flat_map(|&(a, b)| [a, b]))
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty() && self.j.is_empty()
    }

    /// Checks bias/coupling ranges, index bounds and (optionally) that every
    /// coupling sits on a lattice coupler.
    pub fn validate(&self, graph: Option<&ChimeraGraph>) -> Result<()> {
        for (&q, &v) in &self.h {
            if q >= self.num_qubits {
                return Err(Error::Range(format!(
                    "bias on qubit {q} outside the lattice"
                )));
            }
            if !(v.abs() <= MAX_BIAS) {
                return Err(Error::Range(format!(
                    "bias {v} on qubit {q} outside [-2, 2]"
                )));
            }
        }
        for (&(a, b), &v) in &self.j {
            if a >= b || b >= self.num_qubits {
                return Err(Error::Range(format!("invalid coupler ({a}, {b})")));
            }
            if !(v.abs() <= MAX_COUPLING) {
                return Err(Error::Range(format!(
                    "coupling {v} on ({a}, {b}) outside [-1, 1]"
                )));
            }
            if let Some(g) = graph {
                if !g.has_coupler(a, b) {
                    return Err(Error::Range(format!("({a}, {b}) is not a lattice coupler")));
                }
            }
        }
        Ok(())
    }

    /// JSON dump `{"h": {q: v}, "J": {"a,b": v}, "meta": {...}}`.
    pub fn to_json(&self) -> Result<String> {
        let doc = ProblemDump {
            h: self.h.iter().map(|(q, v)| (q.to_string(), *v)).collect(),
            j: self
                .j
                .iter()
                .map(|((a, b), v)| (format!("{a},{b}"), *v))
                .collect(),
            meta: DumpMeta {
                m: self.meta.rows,
                n: self.meta.cols,
                c: self.meta.half,
                s: self.meta.scale,
                chain_strength: self.meta.chain_strength,
                num_qubits: self.num_qubits,
                convention: "E = -sum J s s - sum h s".into(),
            },
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemDump = serde_json::from_str(text)?;
        let mut problem = Self::new(doc.meta.num_qubits);
        for (k, v) in doc.h {
            let q = k
                .parse()
                .map_err(|_| Error::Domain(format!("bad qubit index {k:?}")))?;
            problem.h.insert(q, v);
        }
        for (k, v) in doc.j {
            let (a, b) = parse_pair(&k)?;
            problem.set_coupling(a, b, v);
        }
        problem.meta = ProblemMeta {
            rows: doc.meta.m,
            cols: doc.meta.n,
            half: doc.meta.c,
            scale: doc.meta.s,
            chain_strength: doc.meta.chain_strength,
        };
        problem.validate(None)?;
        Ok(problem)
    }
}

pub(crate) fn parse_pair(key: &str) -> Result<(usize, usize)> {
    let bad = || Error::Domain(format!("bad coupler key {key:?}"));
    let (a, b) = key.split_once(',').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == b {
        return Err(bad());
    }
    Ok((a, b))
}

#[derive(Serialize, Deserialize)]
struct DumpMeta {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    c: usize,
    s: f64,
    chain_strength: f64,
    num_qubits: usize,
    convention: String,
}

#[derive(Serialize, Deserialize)]
struct ProblemDump {
    h: BTreeMap<String, f64>,
    #[serde(rename = "J")]
    j: BTreeMap<String, f64>,
    meta: DumpMeta,
}

/// Knobs of [`embed_rbm_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct EmbedOptions {
    pub scale: f64,
    pub chain_strength: f64,
    /// Crossing couplings with magnitude below this are reported.
    pub j_floor: f64,
    /// Zero sub-floor couplings instead of only reporting them.
    pub zero_below_floor: bool,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            chain_strength: MAX_COUPLING,
            j_floor: 1e-4,
            zero_below_floor: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedDiagnostics {
    pub below_floor: usize,
    pub max_abs_crossing: f64,
    pub max_abs_bias: f64,
}

/// Embeds `params` with the default chain strength at scale `scale`.
pub fn embed_rbm(
    params: &RbmParams,
    graph: &ChimeraGraph,
    scale: f64,
) -> Result<(IsingProblem, Embedding)> {
    let opts = EmbedOptions {
        scale,
        ..EmbedOptions::default()
    };
    embed_rbm_with(params, graph, &opts).map(|(p, e, _)| (p, e))
}

/// Visible unit `u` uses the left qubits at offset `u mod c` down cell column
/// `u / c`; hidden unit `u` uses the right qubits at offset `u mod c` along
/// cell row `u / c`. Each (visible, hidden) pair meets in exactly one cell.
pub fn embed_rbm_with(
    params: &RbmParams,
    graph: &ChimeraGraph,
    opts: &EmbedOptions,
) -> Result<(IsingProblem, Embedding, EmbedDiagnostics)> {
    params.validate()?;
    if !(opts.scale >= 1.0) || !opts.scale.is_finite() {
        return Err(Error::Domain(format!(
            "scale factor must be >= 1, got {}",
            opts.scale
        )));
    }
    if !(opts.chain_strength > 0.0 && opts.chain_strength <= MAX_COUPLING) {
        return Err(Error::Domain("chain strength must lie in (0, 1]".into()));
    }
    let c = graph.half();
    let visible_capacity = c * graph.cols();
    let hidden_capacity = c * graph.rows();
    if params.n_v > visible_capacity || params.n_h > hidden_capacity {
        return Err(Error::Capacity(format!(
            "{}x{} RBM does not fit a {}x{} lattice (capacity {visible_capacity} visible, {hidden_capacity} hidden)",
            params.n_v,
            params.n_h,
            graph.rows(),
            graph.cols()
        )));
    }

    let visible_chains: Vec<Vec<usize>> = (0..params.n_v)
        .map(|u| {
            (0..graph.rows())
                .map(|row| graph.qubit(row, u / c, Side::Left, u % c))
                .collect()
        })
        .collect();
    let hidden_chains: Vec<Vec<usize>> = (0..params.n_h)
        .map(|u| {
            (0..graph.cols())
                .map(|col| graph.qubit(u / c, col, Side::Right, u % c))
                .collect()
        })
        .collect();

    let mut problem = IsingProblem::new(graph.num_qubits());
    problem.meta = ProblemMeta {
        rows: graph.rows(),
        cols: graph.cols(),
        half: c,
        scale: opts.scale,
        chain_strength: opts.chain_strength,
    };
    let mut chain_couplers = Vec::new();
    for chain in visible_chains.iter().chain(&hidden_chains) {
        for pair in chain.windows(2) {
            problem.set_coupling(pair[0], pair[1], opts.chain_strength);
            chain_couplers.push((pair[0].min(pair[1]), pair[0].max(pair[1])));
        }
    }

    let mut diag = EmbedDiagnostics::default();
    let mut crossings = Vec::with_capacity(params.n_v * params.n_h);
    for i in 0..params.n_h {
        for j in 0..params.n_v {
            let qv = graph.qubit(i / c, j / c, Side::Left, j % c);
            let qh = graph.qubit(i / c, j / c, Side::Right, i % c);
            debug_assert!(graph.has_coupler(qv, qh));
            let mut value = params.weight(i, j) / opts.scale;
            diag.max_abs_crossing = diag.max_abs_crossing.max(value.abs());
            if value.abs() < opts.j_floor {
                diag.below_floor += 1;
                if opts.zero_below_floor {
                    value = 0.0;
                }
            }
            problem.set_coupling(qv, qh, value);
            crossings.push((qv, qh));
        }
    }

    for (chain, bias) in visible_chains
        .iter()
        .zip(&params.b)
        .chain(hidden_chains.iter().zip(&params.c))
    {
        let per_qubit = bias / (opts.scale * chain.len() as f64);
        diag.max_abs_bias = diag.max_abs_bias.max(per_qubit.abs());
        for &q in chain {
            problem.h.insert(q, per_qubit);
        }
    }

    problem.validate(Some(graph))?;
    let embedding = Embedding {
        visible_chains,
        hidden_chains,
        crossings,
        chain_couplers,
        num_qubits: graph.num_qubits(),
    };
    Ok((problem, embedding, diag))
}

/// Saturates the bias of every qubit in each listed unit's chain to +-2.
pub fn clamp_units(
    problem: &IsingProblem,
    embedding: &Embedding,
    assignments: &[(Unit, Spin)],
) -> Result<IsingProblem> {
    let mut out = problem.clone();
    for &(unit, value) in assignments {
        if value != 1 && value != -1 {
            return Err(Error::Domain(format!("clamp value {value} is not a spin")));
        }
        for &q in embedding.chain(unit)? {
            out.h.insert(q, MAX_BIAS * f64::from(value));
        }
    }
    Ok(out)
}

/// `E(s) = -sum J_ab s_a s_b - sum h_q s_q` over a dense qubit assignment.
pub fn embedded_energy(problem: &IsingProblem, qubits: &[Spin]) -> Result<f64> {
    if qubits.len() < problem.num_qubits {
        return Err(Error::Coverage(format!(
            "assignment covers {} of {} qubits",
            qubits.len(),
            problem.num_qubits
        )));
    }
    let spin = |q: usize| -> Result<f64> {
        match qubits[q] {
            1 => Ok(1.0),
            -1 => Ok(-1.0),
            other => Err(Error::Coverage(format!(
                "qubit {q} has no spin value ({other})"
            ))),
        }
    };
    let mut e = 0.0;
    for (&(a, b), &j) in &problem.j {
        e -= j * spin(a)? * spin(b)?;
    }
    for (&q, &h) in &problem.h {
        e -= h * spin(q)?;
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStatus {
    pub unit: Unit,
    /// Fraction of the chain's qubits agreeing with the decoded value.
    pub agreement: f64,
    pub tie: bool,
}

impl ChainStatus {
    pub fn is_broken(&self) -> bool {
        self.agreement < 1.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub chains: Vec<ChainStatus>,
}

impl ChainReport {
    pub fn broken(&self) -> usize {
        self.chains.iter().filter(|c| c.is_broken()).count()
    }

    pub fn ties(&self) -> usize {
        self.chains.iter().filter(|c| c.tie).count()
    }
}

/// Majority vote per chain; exact ties are settled by a coin flip from `rng`
/// and flagged in the report.
pub fn decode<R: Rng + ?Sized>(
    embedding: &Embedding,
    qubits: &[Spin],
    rng: &mut R,
) -> Result<(SpinState, ChainReport)> {
    let mut report = ChainReport::default();
    let mut vote = |unit: Unit, chain: &[usize]| -> Result<Spin> {
        let mut sum = 0i64;
        for &q in chain {
            match qubits.get(q) {
                Some(&s) if s == 1 || s == -1 => sum += i64::from(s),
                _ => return Err(Error::Coverage(format!("qubit {q} missing from the read"))),
            }
        }
        let tie = sum == 0;
        let value: Spin = if sum > 0 {
            1
        } else if sum < 0 {
            -1
        } else if rng.random_bool(0.5) {
            1
        } else {
            -1
        };
        let agree = chain.iter().filter(|&&q| qubits[q] == value).count();
        report.chains.push(ChainStatus {
            unit,
            agreement: agree as f64 / chain.len() as f64,
            tie,
        });
        Ok(value)
    };
    let mut v = Vec::with_capacity(embedding.n_v());
    for (j, chain) in embedding.visible_chains.iter().enumerate() {
        v.push(vote(Unit::Visible(j), chain)?);
    }
    let mut h = Vec::with_capacity(embedding.n_h());
    for (i, chain) in embedding.hidden_chains.iter().enumerate() {
        h.push(vote(Unit::Hidden(i), chain)?);
    }
    Ok((SpinState::new(v, h), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSweep {
    pub rows: Vec<ScaleRow>,
    /// First scale attaining the smallest metric.
    pub best_scale: f64,
}

/// Embeds `params` at every scale and records `eval`'s metric.
pub fn sweep_scale<F>(
    params: &RbmParams,
    graph: &ChimeraGraph,
    scales: &[f64],
    opts: &EmbedOptions,
    mut eval: F,
) -> Result<ScaleSweep>
where
    F: FnMut(&IsingProblem, &Embedding, f64) -> Result<f64>,
{
    if scales.is_empty() {
        return Err(Error::Domain("scale sweep needs at least one scale".into()));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let (problem, embedding, _) = embed_rbm_with(
            params,
            graph,
            &EmbedOptions {
                scale,
                ..opts.clone()
            },
        )?;
        let metric = eval(&problem, &embedding, scale)?;
        rows.push(ScaleRow { scale, metric });
    }
    let mut best = 0;
    for (k, row) in rows.iter().enumerate() {
        let current = rows[best].metric;
        if row.metric < current || (current.is_nan() && !row.metric.is_nan()) {
            best = k;
        }
    }
    let best_scale = rows[best].scale;
    Ok(ScaleSweep { rows, best_scale })
}
