//! Restricted Boltzmann Machines in Ising spin convention.
//!
//! Both layers take values in {-1, +1}. The joint energy is
//!
//! ```text
//! E(v, h) = -sum_ij w_ij h_i v_j - sum_j b_j v_j - sum_i c_i h_i
//! ```
//!
//! with `w` stored hidden-major (`w[i * n_v + j]` couples hidden `i` to
//! visible `j`).

mod exact;
mod train;

pub use exact::{
    exact_gradient, exact_kl, exact_log_likelihood, exact_log_partition, exact_partition,
    log_marginals, spins_from_index, EXACT_UNIT_LIMIT,
};
pub use train::{
    apply_weight_decay, cd_gradient, train, train_with, EpochMetrics, GradientMode, TrainConfig,
    TrainOutcome,
};

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A single Ising spin value; always exactly -1 or +1.
pub type Spin = i8;

/// Provenance stored alongside the parameters in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: usize,
    #[serde(rename = "dataset-id")]
    pub dataset_id: String,
    pub w_cap: f64,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 0,
            dataset_id: String::new(),
            w_cap: 0.5,
        }
    }
}

/// Weights and biases of an Ising-convention RBM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmParams {
    pub n_v: usize,
    pub n_h: usize,
    /// Row-major, hidden-major: `w[i * n_v + j]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub label_units: Vec<usize>,
    #[serde(default)]
    pub meta: ModelMeta,
}

/// Joint visible + hidden configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinState {
    pub v: Vec<Spin>,
    pub h: Vec<Spin>,
}

impl SpinState {
    pub fn new(v: Vec<Spin>, h: Vec<Spin>) -> Self {
        Self { v, h }
    }

    pub fn len(&self) -> usize {
        self.v.len() + self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spin `k` in the concatenated (v, h) ordering.
    pub fn get(&self, k: usize) -> Spin {
        if k < self.v.len() {
            self.v[k]
        } else {
            self.h[k - self.v.len()]
        }
    }

    pub fn flip(&mut self, k: usize) {
        if k < self.v.len() {
            self.v[k] = -self.v[k];
        } else {
            let n_v = self.v.len();
            self.h[k - n_v] = -self.h[k - n_v];
        }
    }

    /// Packs the state as a `+`/`-` string, visible units first.
    pub fn to_sign_string(&self) -> String {
        self.v
            .iter()
            .chain(self.h.iter())
            .map(|&s| if s > 0 { '+' } else { '-' })
            .collect()
    }

    pub fn from_sign_string(s: &str, n_v: usize) -> Result<Self> {
        let spins = s
            .chars()
            .map(|ch| match ch {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::Domain(format!("invalid spin character {other:?}"))),
            })
            .collect::<Result<Vec<Spin>>>()?;
        if spins.len() < n_v {
            return Err(Error::Shape(format!(
                "state string has {} spins, expected at least {n_v}",
                spins.len()
            )));
        }
        let h = spins[n_v..].to_vec();
        let mut v = spins;
        v.truncate(n_v);
        Ok(Self { v, h })
    }

    pub fn is_valid(&self) -> bool {
        self.v
            .iter()
            .chain(self.h.iter())
            .all(|&s| s == 1 || s == -1)
    }
}

impl fmt::Display for SpinState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sign_string())
    }
}

/// Log-likelihood gradient with respect to (w, b, c), shaped like the
/// parameters it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dc: Vec<f64>,
}

impl GradientEstimate {
    pub fn zeros(n_v: usize, n_h: usize) -> Self {
        Self {
            dw: vec![0.0; n_v * n_h],
            db: vec![0.0; n_v],
            dc: vec![0.0; n_h],
        }
    }

    pub fn components(&self) -> impl Iterator<Item = &f64> {
        self.dw.iter().chain(&self.db).chain(&self.dc)
    }

    pub fn norm(&self) -> f64 {
        self.components().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.components()
            .zip(other.components())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// ln(2 cosh x), computed without overflow.
pub fn ln_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Logistic function 1 / (1 + e^{-x}).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn sample_spin<R: Rng + ?Sized>(logit: f64, rng: &mut R) -> Spin {
    if rng.random::<f64>() < sigmoid(logit) {
        1
    } else {
        -1
    }
}

pub(crate) fn check_spins(spins: &[Spin], n: usize, what: &str) -> Result<()> {
    if spins.len() != n {
        return Err(Error::Shape(format!(
            "{what} has length {}, expected {n}",
            spins.len()
        )));
    }
    if spins.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::Domain(format!("{what} contains a non-spin value")));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "temperature must be positive, got {t}"
        )))
    }
}

impl RbmParams {
    pub fn zeros(n_v: usize, n_h: usize) -> Self {
        Self {
            n_v,
            n_h,
            w: vec![0.0; n_v * n_h],
            b: vec![0.0; n_v],
            c: vec![0.0; n_h],
            label_units: Vec::new(),
            meta: ModelMeta::default(),
        }
    }

    /// Weights drawn from N(0, std^2), zero biases.
    pub fn random_normal<R: Rng + ?Sized>(n_v: usize, n_h: usize, std: f64, rng: &mut R) -> Self {
        let mut params = Self::zeros(n_v, n_h);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite positive std");
            for w in &mut params.w {
                *w = normal.sample(rng);
            }
        }
        params
    }

    /// Weights and biases uniform in [-scale, scale].
    pub fn random_uniform<R: Rng + ?Sized>(
        n_v: usize,
        n_h: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros(n_v, n_h);
        for x in params
            .w
            .iter_mut()
            .chain(params.b.iter_mut())
            .chain(params.c.iter_mut())
        {
            *x = rng.random_range(-scale..=scale);
        }
        params
    }

    pub fn with_labels(mut self, label_units: Vec<usize>) -> Result<Self> {
        self.label_units = label_units;
        self.validate()?;
        Ok(self)
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n_v + j]
    }

    #[inline]
    pub fn weight_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.w[i * self.n_v + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n_v..(i + 1) * self.n_v]
    }

    pub fn n_units(&self) -> usize {
        self.n_v + self.n_h
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.w.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.n_v * self.n_h {
            return Err(Error::Shape(format!(
                "w has {} entries, expected {}x{}",
                self.w.len(),
                self.n_h,
                self.n_v
            )));
        }
        if self.b.len() != self.n_v || self.c.len() != self.n_h {
            return Err(Error::Shape("bias vector length mismatch".into()));
        }
        if self
            .w
            .iter()
            .chain(&self.b)
            .chain(&self.c)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        let mut seen = vec![false; self.n_v];
        for &u in &self.label_units {
            if u >= self.n_v || std::mem::replace(&mut seen[u], true) {
                return Err(Error::Domain(format!("invalid or repeated label unit {u}")));
            }
        }
        Ok(())
    }

    /// Pre-activation of every hidden unit: sum_j w_ij v_j + c_i.
    pub fn hidden_field(&self, v: &[Spin]) -> Vec<f64> {
        (0..self.n_h)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(w, &s)| w * f64::from(s))
                    .sum::<f64>()
                    + self.c[i]
            })
            .collect()
    }

    /// Pre-activation of every visible unit: sum_i w_ij h_i + b_j.
    pub fn visible_field(&self, h: &[Spin]) -> Vec<f64> {
        let mut field = self.b.clone();
        for (i, &hi) in h.iter().enumerate() {
            let hi = f64::from(hi);
            for (f, w) in field.iter_mut().zip(self.row(i)) {
                *f += w * hi;
            }
        }
        field
    }

    pub fn energy(&self, s: &SpinState) -> Result<f64> {
        check_spins(&s.v, self.n_v, "visible state")?;
        check_spins(&s.h, self.n_h, "hidden state")?;
        Ok(self.energy_unchecked(&s.v, &s.h))
    }

    pub(crate) fn energy_unchecked(&self, v: &[Spin], h: &[Spin]) -> f64 {
        let field = self.hidden_field(v);
        let coupling: f64 = field
            .iter()
            .zip(&self.c)
            .zip(h)
            .map(|((f, c), &hi)| (f - c) * f64::from(hi))
            .sum();
        let vb: f64 = self.b.iter().zip(v).map(|(b, &s)| b * f64::from(s)).sum();
        let hc: f64 = self.c.iter().zip(h).map(|(c, &s)| c * f64::from(s)).sum();
        -coupling - vb - hc
    }

    /// -ln sum_h exp(-E(v, h)) in closed form.
    pub fn free_energy(&self, v: &[Spin]) -> Result<f64> {
        check_spins(v, self.n_v, "visible state")?;
        Ok(self.free_energy_unchecked(v))
    }

    pub(crate) fn free_energy_unchecked(&self, v: &[Spin]) -> f64 {
        let vb: f64 = self.b.iter().zip(v).map(|(b, &s)| b * f64::from(s)).sum();
        let hidden: f64 = self.hidden_field(v).into_iter().map(ln_2cosh).sum();
        -vb - hidden
    }

    /// P(h_i = +1 | v) at temperature `t`.
    pub fn cond_prob_h(&self, v: &[Spin], t: f64) -> Result<Vec<f64>> {
        check_temperature(t)?;
        check_spins(v, self.n_v, "visible state")?;
        Ok(self
            .hidden_field(v)
            .into_iter()
            .map(|a| sigmoid(2.0 * a / t))
            .collect())
    }

    /// P(v_j = +1 | h) at temperature `t`.
    pub fn cond_prob_v(&self, h: &[Spin], t: f64) -> Result<Vec<f64>> {
        check_temperature(t)?;
        check_spins(h, self.n_h, "hidden state")?;
        Ok(self
            .visible_field(h)
            .into_iter()
            .map(|a| sigmoid(2.0 * a / t))
            .collect())
    }

    /// Draws h ~ P(h | v) at temperature `t` (assumed positive).
    pub fn sample_hidden<R: Rng + ?Sized>(&self, v: &[Spin], t: f64, rng: &mut R) -> Vec<Spin> {
        self.hidden_field(v)
            .into_iter()
            .map(|a| sample_spin(2.0 * a / t, rng))
            .collect()
    }

    /// Draws v ~ P(v | h) at temperature `t` (assumed positive).
    pub fn sample_visible<R: Rng + ?Sized>(&self, h: &[Spin], t: f64, rng: &mut R) -> Vec<Spin> {
        self.visible_field(h)
            .into_iter()
            .map(|a| sample_spin(2.0 * a / t, rng))
            .collect()
    }

    /// Energy change from flipping spin `k` of the concatenated (v, h) state.
    pub fn flip_delta(&self, s: &SpinState, k: usize) -> f64 {
        if k < self.n_v {
            let field: f64 = (0..self.n_h)
                .map(|i| self.weight(i, k) * f64::from(s.h[i]))
                .sum::<f64>()
                + self.b[k];
            2.0 * f64::from(s.v[k]) * field
        } else {
            let i = k - self.n_v;
            let field: f64 = self
                .row(i)
                .iter()
                .zip(&s.v)
                .map(|(w, &x)| w * f64::from(x))
                .sum::<f64>()
                + self.c[i];
            2.0 * f64::from(s.h[i]) * field
        }
    }

    /// True when no single-spin flip lowers the energy.
    pub fn is_local_minimum(&self, s: &SpinState) -> bool {
        (0..self.n_units()).all(|k| self.flip_delta(s, k) >= 0.0)
    }

    /// Stable content hash of the parameters (metadata excluded).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n_v as u64).to_le_bytes());
        hasher.update((self.n_h as u64).to_le_bytes());
        for x in self.w.iter().chain(&self.b).chain(&self.c) {
            hasher.update(x.to_bits().to_le_bytes());
        }
        for &u in &self.label_units {
            hasher.update((u as u64).to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
