//! Escape statistics from single-flip Metropolis dynamics, Arrhenius fits
//! and the valley width parameter.
//!
//! Escape time is counted in Metropolis proposals (attempted single-spin
//! flips). Membership is re-tested after every accepted jump by relaxing a
//! copy of the current state at T = 0; the walk itself is not disturbed.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{
    metropolis_accept, simulated_warming_with, FieldState, WarmingSchedule, DEFAULT_RELAX_SWEEPS,
};
use crate::rbm::{RbmParams, SpinState};
use crate::rng::{derive_seed, stream_rng};

const RELAX_STREAM_TAG: u64 = 0x0072_656c_6178;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct EscapeConfig {
    pub trials: usize,
    /// Proposal budget per trial; trials reaching it are censored.
    pub max_jumps: u64,
    pub temperatures: Vec<f64>,
    /// Number of lowest usable temperatures entering the fit.
    pub low_t_count: usize,
    /// Temperatures with a larger censored fraction are left out of the fit.
    pub max_censored_fraction: f64,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            max_jumps: 100_000,
            temperatures: (1..=12).map(|k| f64::from(k) / 10.0).collect(),
            low_t_count: 4,
            max_censored_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub temperature: f64,
    pub trials: usize,
    pub censored: usize,
    /// Mean proposals to escape, censored trials counting `max_jumps`.
    pub mean_jumps: f64,
    pub rate: f64,
    /// Mean energy of the last in-valley state over escaped trials.
    pub last_energy_mean: Option<f64>,
}

impl EscapeEstimate {
    /// Every trial hit the budget; the rate is only a bound.
    pub fn fully_censored(&self) -> bool {
        self.censored == self.trials
    }
}

struct Trial {
    jumps: u64,
    escaped: bool,
    last_energy: f64,
}

fn run_trial(
    params: &RbmParams,
    id: &SpinState,
    t: f64,
    max_jumps: u64,
    seed: u64,
    trial: u64,
) -> Trial {
    let mut rng = stream_rng(seed, trial);
    let mut relax_rng = stream_rng(derive_seed(seed, RELAX_STREAM_TAG), trial);
    let mut fs = FieldState::new(params, id.clone());
    let mut energy = fs.energy();
    let mut order: Vec<usize> = (0..fs.n_units()).collect();
    let mut member: HashMap<SpinState, bool> = HashMap::new();
    let mut jumps = 0u64;
    loop {
        order.shuffle(&mut rng);
        for &k in &order {
            if jumps == max_jumps {
                return Trial {
                    jumps,
                    escaped: false,
                    last_energy: energy,
                };
            }
            jumps += 1;
            let d = fs.delta(k);
            if !metropolis_accept(d, t, &mut rng) {
                continue;
            }
            let before = energy;
            fs.flip(k);
            energy += d;
            if fs.state() == id {
                continue;
            }
            let inside = match member.get(fs.state()) {
                Some(&m) => m,
                None => {
                    let mut copy = fs.clone();
                    copy.relax(DEFAULT_RELAX_SWEEPS, &mut relax_rng, None);
                    let m = copy.state() == id;
                    member.insert(fs.state().clone(), m);
                    m
                }
            };
            if !inside {
                return Trial {
                    jumps,
                    escaped: true,
                    last_energy: before,
                };
            }
        }
    }
}

/// Escape rate from valley `valley_id` at temperature `t`: the inverse of
/// the mean number of proposals before the walk first reaches a state that
/// relaxes elsewhere. Trial `k` uses stream `k` of `seed`.
pub fn escape_rate(
    params: &RbmParams,
    valley_id: &SpinState,
    t: f64,
    trials: usize,
    max_jumps: u64,
    seed: u64,
) -> Result<EscapeEstimate> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "escape temperature must be positive, got {t}"
        )));
    }
    if trials == 0 || max_jumps == 0 {
        return Err(Error::Domain(
            "escape needs at least one trial and one jump".into(),
        ));
    }
    params.energy(valley_id)?;
    if !params.is_local_minimum(valley_id) {
        return Err(Error::Domain(format!("{valley_id} is not a local minimum")));
    }
    let runs: Vec<Trial> = (0..trials as u64)
        .into_par_iter()
        .map(|k| run_trial(params, valley_id, t, max_jumps, seed, k))
        .collect();
    let censored = runs.iter().filter(|r| !r.escaped).count();
    let mean_jumps = runs.iter().map(|r| r.jumps as f64).sum::<f64>() / trials as f64;
    let escaped: Vec<f64> = runs
        .iter()
        .filter(|r| r.escaped)
        .map(|r| r.last_energy)
        .collect();
    Ok(EscapeEstimate {
        temperature: t,
        trials,
        censored,
        mean_jumps,
        rate: 1.0 / mean_jumps,
        last_energy_mean: (!escaped.is_empty())
            .then(|| escaped.iter().sum::<f64>() / escaped.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrheniusFit {
    pub e_act: f64,
    pub ln_prefactor: f64,
    /// Usable (T, rate) points, ascending T.
    pub points: Vec<(f64, f64)>,
    pub r_squared: f64,
    /// Indices into `points` used by the fit.
    pub low_t_subset: Vec<usize>,
}

/// Least squares of ln(rate) on 1/T over the `low_t_count` lowest-T usable
/// points (positive finite T and rate). `e_act` is minus the slope.
pub fn arrhenius_fit(points: &[(f64, f64)], low_t_count: usize) -> Result<ArrheniusFit> {
    if low_t_count < 3 {
        return Err(Error::Domain(
            "an Arrhenius fit needs at least 3 points".into(),
        ));
    }
    let mut usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, r)| t > 0.0 && t.is_finite() && r > 0.0 && r.is_finite())
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable Arrhenius points, need 3",
            usable.len()
        )));
    }
    usable.sort_by(|a, b| a.0.total_cmp(&b.0));
    let used = low_t_count.min(usable.len());
    let xs: Vec<f64> = usable[..used].iter().map(|p| 1.0 / p.0).collect();
    let ys: Vec<f64> = usable[..used].iter().map(|p| p.1.ln()).collect();
    let n = used as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "Arrhenius points share one temperature".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(ArrheniusFit {
        e_act: -slope,
        ln_prefactor: intercept,
        points: usable,
        r_squared,
        low_t_subset: (0..used).collect(),
    })
}

/// Fits the estimates whose censored fraction does not exceed
/// `max_censored_fraction`.
pub fn fit_escapes(
    estimates: &[EscapeEstimate],
    low_t_count: usize,
    max_censored_fraction: f64,
) -> Result<ArrheniusFit> {
    let points: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.censored as f64 <= max_censored_fraction * e.trials as f64)
        .map(|e| (e.temperature, e.rate))
        .collect();
    arrhenius_fit(&points, low_t_count)
}

/// Distinct `states` below `min_energy + e_act` that relax back to
/// `valley_id`, divided by `e_act`.
pub fn width_parameter<R: Rng + ?Sized>(
    params: &RbmParams,
    valley_id: &SpinState,
    e_act: f64,
    states: impl IntoIterator<Item = SpinState>,
    rng: &mut R,
) -> Result<f64> {
    if !(e_act > 0.0 && e_act.is_finite()) {
        return Err(Error::Domain(format!(
            "width needs a positive finite depth, got {e_act}"
        )));
    }
    let threshold = params.energy(valley_id)? + e_act;
    let mut distinct = BTreeSet::new();
    for s in states {
        if params.energy(&s)? < threshold {
            distinct.insert(s);
        }
    }
    let mut count = 0usize;
    for s in distinct {
        let mut fs = FieldState::new(params, s);
        fs.relax(DEFAULT_RELAX_SWEEPS, rng, None);
        if fs.state() == valley_id {
            count += 1;
        }
    }
    Ok(count as f64 / e_act)
}

/// [`width_parameter`] over the states visited by `traces` simulated-warming
/// runs started at `valley_id`, the start included.
pub fn width_from_warming(
    params: &RbmParams,
    valley_id: &SpinState,
    e_act: f64,
    schedule: &WarmingSchedule,
    traces: usize,
    seed: u64,
) -> Result<f64> {
    if !(e_act > 0.0 && e_act.is_finite()) {
        return Err(Error::Domain(format!(
            "width needs a positive finite depth, got {e_act}"
        )));
    }
    let threshold = params.energy(valley_id)? + e_act;
    let per_trace = (0..traces as u64)
        .into_par_iter()
        .map(|k| {
            let mut seen = BTreeSet::new();
            let mut rng = stream_rng(seed, k);
            simulated_warming_with(params, valley_id, schedule, &mut rng, |step| {
                if step.energy < threshold {
                    seen.insert(step.state.clone());
                }
            })?;
            Ok(seen)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all: BTreeSet<SpinState> = per_trace.into_iter().flatten().collect();
    all.insert(valley_id.clone());
    width_parameter(
        params,
        valley_id,
        e_act,
        all,
        &mut stream_rng(derive_seed(seed, RELAX_STREAM_TAG), 0),
    )
}
