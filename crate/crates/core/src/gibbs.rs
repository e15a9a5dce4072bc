//! Markov-chain machinery on the logical RBM: tempered block-Gibbs sweeps,
//! zero-temperature relaxation to a local minimum, and simulated warming.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{check_spins, sample_spin, RbmParams, Spin, SpinState};

/// Units that sampling must leave untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClampMask {
    pub visible: Vec<bool>,
    pub hidden: Vec<bool>,
}

impl ClampMask {
    pub fn none(n_v: usize, n_h: usize) -> Self {
        Self {
            visible: vec![false; n_v],
            hidden: vec![false; n_h],
        }
    }

    pub fn all(n_v: usize, n_h: usize) -> Self {
        Self {
            visible: vec![true; n_v],
            hidden: vec![true; n_h],
        }
    }

    pub fn visible_units(n_v: usize, n_h: usize, units: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::none(n_v, n_h);
        for u in units {
            mask.visible[u] = true;
        }
        mask
    }

    /// Clamp status of unit `k` in concatenated (v, h) order.
    pub fn is_clamped(&self, k: usize) -> bool {
        if k < self.visible.len() {
            self.visible[k]
        } else {
            self.hidden[k - self.visible.len()]
        }
    }

    fn check(&self, params: &RbmParams) -> Result<()> {
        if self.visible.len() != params.n_v || self.hidden.len() != params.n_h {
            return Err(Error::Shape("clamp mask does not match the model".into()));
        }
        Ok(())
    }
}

fn check_state(params: &RbmParams, state: &SpinState) -> Result<()> {
    check_spins(&state.v, params.n_v, "visible state")?;
    check_spins(&state.h, params.n_h, "hidden state")
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "Gibbs sampling needs T > 0 (got {t}); use relax_t0 for T = 0"
        )))
    }
}

/// One block update: all hidden units from P(h | v), then all visible units
/// from P(v | h). Clamped units keep their values.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    params: &RbmParams,
    state: &SpinState,
    temperature: f64,
    rng: &mut R,
    mask: Option<&ClampMask>,
) -> Result<SpinState> {
    check_temperature(temperature)?;
    check_state(params, state)?;
    if let Some(m) = mask {
        m.check(params)?;
    }
    let mut next = state.clone();
    sweep_in_place(params, &mut next, temperature, rng, mask);
    Ok(next)
}

fn sweep_in_place<R: Rng + ?Sized>(
    params: &RbmParams,
    state: &mut SpinState,
    t: f64,
    rng: &mut R,
    mask: Option<&ClampMask>,
) {
    for (i, a) in params.hidden_field(&state.v).into_iter().enumerate() {
        let s = sample_spin(2.0 * a / t, rng);
        if !mask.is_some_and(|m| m.hidden[i]) {
            state.h[i] = s;
        }
    }
    for (j, a) in params.visible_field(&state.h).into_iter().enumerate() {
        let s = sample_spin(2.0 * a / t, rng);
        if !mask.is_some_and(|m| m.visible[j]) {
            state.v[j] = s;
        }
    }
}

/// Samples h from `v0`, then applies `steps` block sweeps.
pub fn gibbs_chain<R: Rng + ?Sized>(
    params: &RbmParams,
    v0: &[Spin],
    steps: usize,
    temperature: f64,
    rng: &mut R,
    mask: Option<&ClampMask>,
) -> Result<SpinState> {
    check_temperature(temperature)?;
    check_spins(v0, params.n_v, "initial visible state")?;
    if let Some(m) = mask {
        m.check(params)?;
    }
    let h = params.sample_hidden(v0, temperature, rng);
    let mut state = SpinState::new(v0.to_vec(), h);
    for _ in 0..steps {
        sweep_in_place(params, &mut state, temperature, rng, mask);
    }
    Ok(state)
}

/// A spin state with cached layer fields, for O(n) single-flip updates.
#[derive(Debug, Clone)]
pub struct FieldState<'a> {
    params: &'a RbmParams,
    state: SpinState,
    /// sum_j w_ij v_j + c_i
    hidden_field: Vec<f64>,
    /// sum_i w_ij h_i + b_j
    visible_field: Vec<f64>,
}

impl<'a> FieldState<'a> {
    pub fn new(params: &'a RbmParams, state: SpinState) -> Self {
        let hidden_field = params.hidden_field(&state.v);
        let visible_field = params.visible_field(&state.h);
        Self {
            params,
            state,
            hidden_field,
            visible_field,
        }
    }

    pub fn state(&self) -> &SpinState {
        &self.state
    }

    pub fn into_state(self) -> SpinState {
        self.state
    }

    pub fn n_units(&self) -> usize {
        self.state.len()
    }

    pub fn energy(&self) -> f64 {
        self.params.energy_unchecked(&self.state.v, &self.state.h)
    }

    /// Energy change from flipping unit `k`.
    #[inline]
    pub fn delta(&self, k: usize) -> f64 {
        let n_v = self.params.n_v;
        if k < n_v {
            2.0 * f64::from(self.state.v[k]) * self.visible_field[k]
        } else {
            2.0 * f64::from(self.state.h[k - n_v]) * self.hidden_field[k - n_v]
        }
    }

    pub fn flip(&mut self, k: usize) {
        let p = self.params;
        let n_v = p.n_v;
        if k < n_v {
            let old = f64::from(self.state.v[k]);
            self.state.v[k] = -self.state.v[k];
            for (i, f) in self.hidden_field.iter_mut().enumerate() {
                *f -= 2.0 * old * p.weight(i, k);
            }
        } else {
            let i = k - n_v;
            let old = f64::from(self.state.h[i]);
            self.state.h[i] = -self.state.h[i];
            for (f, w) in self.visible_field.iter_mut().zip(p.row(i)) {
                *f -= 2.0 * old * w;
            }
        }
    }

    fn has_descent(&self, mask: Option<&ClampMask>) -> bool {
        (0..self.n_units()).any(|k| !mask.is_some_and(|m| m.is_clamped(k)) && self.delta(k) < 0.0)
    }

    /// Zero-temperature single-flip descent; see [`relax_t0`].
    pub fn relax<R: Rng + ?Sized>(
        &mut self,
        max_sweeps: usize,
        rng: &mut R,
        mask: Option<&ClampMask>,
    ) {
        let mut order: Vec<usize> = (0..self.n_units())
            .filter(|&k| !mask.is_some_and(|m| m.is_clamped(k)))
            .collect();
        for _ in 0..max_sweeps {
            order.shuffle(rng);
            let mut descended = false;
            for &k in &order {
                let d = self.delta(k);
                if d < 0.0 {
                    self.flip(k);
                    descended = true;
                } else if d == 0.0 && rng.random_bool(0.5) {
                    self.flip(k);
                }
            }
            if !descended && !self.has_descent(mask) {
                return;
            }
        }
        // Sweep budget exhausted: finish with deterministic steepest descent,
        // which terminates because every flip strictly lowers the energy.
        loop {
            let best = order
                .iter()
                .map(|&k| (k, self.delta(k)))
                .filter(|&(_, d)| d < 0.0)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((k, _)) => self.flip(k),
                None => return,
            }
        }
    }
}

pub const DEFAULT_RELAX_SWEEPS: usize = 1000;

/// Relaxes `state` to a local minimum with single-site Metropolis at T = 0.
///
/// Sites are visited in a fresh random permutation each sweep. Flips with
/// negative energy change are always taken and zero-change flips with
/// probability 1/2. The run stops after a sweep with no strictly descending
/// flip once no descending flip remains. The returned state admits no
/// single-flip descent among the unclamped units.
pub fn relax_t0<R: Rng + ?Sized>(
    params: &RbmParams,
    state: &SpinState,
    max_sweeps: usize,
    rng: &mut R,
    mask: Option<&ClampMask>,
) -> Result<SpinState> {
    check_state(params, state)?;
    if let Some(m) = mask {
        m.check(params)?;
    }
    let mut fs = FieldState::new(params, state.clone());
    fs.relax(max_sweeps.max(1), rng, mask);
    Ok(fs.into_state())
}

/// Metropolis acceptance for an energy change `delta` at temperature `t`.
#[inline]
pub fn metropolis_accept<R: Rng + ?Sized>(delta: f64, t: f64, rng: &mut R) -> bool {
    if delta <= 0.0 {
        true
    } else if t <= 0.0 {
        false
    } else {
        rng.random::<f64>() < (-delta / t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "kebab-case")]
pub enum LadderMode {
    /// Temperatures must be non-decreasing.
    Warming,
    FixedT,
}

/// Temperature ladder for simulated warming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct WarmingSchedule {
    /// (temperature, sweeps) rungs, run in order.
    pub rungs: Vec<(f64, usize)>,
    pub mode: LadderMode,
}

impl Default for WarmingSchedule {
    fn default() -> Self {
        Self::warming((1..=12).map(|k| f64::from(k) / 10.0), 200)
    }
}

impl WarmingSchedule {
    pub fn warming(temperatures: impl IntoIterator<Item = f64>, sweeps: usize) -> Self {
        Self {
            rungs: temperatures.into_iter().map(|t| (t, sweeps)).collect(),
            mode: LadderMode::Warming,
        }
    }

    pub fn fixed(temperature: f64, sweeps: usize) -> Self {
        Self {
            rungs: vec![(temperature, sweeps)],
            mode: LadderMode::FixedT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rungs.is_empty() {
            return Err(Error::Domain("warming schedule has no rungs".into()));
        }
        if self
            .rungs
            .iter()
            .any(|&(t, n)| !(t >= 0.0) || !t.is_finite() || n == 0)
        {
            return Err(Error::Domain(
                "rungs need finite T >= 0 and at least one sweep".into(),
            ));
        }
        if self.mode == LadderMode::FixedT && self.rungs.windows(2).any(|w| w[0].0 != w[1].0) {
            return Err(Error::Domain(
                "fixed-T schedule with varying temperature".into(),
            ));
        }
        if self.mode == LadderMode::Warming && self.rungs.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Domain(
                "warming schedule must be non-decreasing in T".into(),
            ));
        }
        Ok(())
    }
}

/// State after an accepted single-flip jump during simulated warming.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmingStep {
    /// 1-based count of accepted jumps so far.
    pub jump_index: u64,
    pub temperature: f64,
    pub energy: f64,
    pub state: SpinState,
}

/// Runs single-site Metropolis through `schedule` starting from `start`,
/// invoking `visit` after every accepted jump.
pub fn simulated_warming_with<R, F>(
    params: &RbmParams,
    start: &SpinState,
    schedule: &WarmingSchedule,
    rng: &mut R,
    mut visit: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&WarmingStep),
{
    schedule.validate()?;
    check_state(params, start)?;
    let mut fs = FieldState::new(params, start.clone());
    let mut energy = fs.energy();
    let mut order: Vec<usize> = (0..fs.n_units()).collect();
    let mut jumps = 0u64;
    for &(t, sweeps) in &schedule.rungs {
        for _ in 0..sweeps {
            order.shuffle(rng);
            for &k in &order {
                let d = fs.delta(k);
                if metropolis_accept(d, t, rng) {
                    fs.flip(k);
                    energy += d;
                    jumps += 1;
                    visit(&WarmingStep {
                        jump_index: jumps,
                        temperature: t,
                        energy,
                        state: fs.state().clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Collecting form of [`simulated_warming_with`].
pub fn simulated_warming<R: Rng + ?Sized>(
    params: &RbmParams,
    start: &SpinState,
    schedule: &WarmingSchedule,
    rng: &mut R,
) -> Result<Vec<WarmingStep>> {
    let mut out = Vec::new();
    simulated_warming_with(params, start, schedule, rng, |s| out.push(s.clone()))?;
    Ok(out)
}

/// CSV dump: `jump_index,T,energy,state`.
pub fn write_trajectory_csv<W: Write>(mut out: W, steps: &[WarmingStep]) -> Result<()> {
    writeln!(out, "jump_index,T,energy,state")?;
    for s in steps {
        writeln!(
            out,
            "{},{},{},{}",
            s.jump_index,
            s.temperature,
            s.energy,
            s.state.to_sign_string()
        )?;
    }
    Ok(())
}
