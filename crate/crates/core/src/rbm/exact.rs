//! Exhaustive-enumeration quantities for desk-scale models.
//!
//! State index convention: bit `k` of the index set means spin `k` is +1.

use super::{check_spins, GradientEstimate, RbmParams, Spin};
use crate::error::{Error, Result};

/// Largest `n_v + n_h` accepted by the enumeration routines.
pub const EXACT_UNIT_LIMIT: usize = 24;

pub fn spins_from_index(index: usize, n: usize) -> Vec<Spin> {
    (0..n)
        .map(|k| if index >> k & 1 == 1 { 1 } else { -1 })
        .collect()
}

fn guard(params: &RbmParams) -> Result<()> {
    let units = params.n_units();
    if units > EXACT_UNIT_LIMIT {
        return Err(Error::Size {
            units,
            limit: EXACT_UNIT_LIMIT,
        });
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn neg_free_energies(params: &RbmParams) -> Vec<f64> {
    (0..1usize << params.n_v)
        .map(|idx| -params.free_energy_unchecked(&spins_from_index(idx, params.n_v)))
        .collect()
}

/// ln Z, summing exp(-F(v)) over all visible configurations.
pub fn exact_log_partition(params: &RbmParams) -> Result<f64> {
    guard(params)?;
    Ok(log_sum_exp(&neg_free_energies(params)))
}

pub fn exact_partition(params: &RbmParams) -> Result<f64> {
    exact_log_partition(params).map(f64::exp)
}

/// ln P_m(v) for every visible configuration, indexed by [`spins_from_index`].
pub fn log_marginals(params: &RbmParams) -> Result<Vec<f64>> {
    guard(params)?;
    let neg_f = neg_free_energies(params);
    let log_z = log_sum_exp(&neg_f);
    Ok(neg_f.into_iter().map(|x| x - log_z).collect())
}

/// Mean log marginal probability of `data` under the model.
pub fn exact_log_likelihood(params: &RbmParams, data: &[Vec<Spin>]) -> Result<f64> {
    guard(params)?;
    if data.is_empty() {
        return Err(Error::Domain("log-likelihood of an empty dataset".into()));
    }
    let log_z = exact_log_partition(params)?;
    let mut total = 0.0;
    for v in data {
        total -= params.free_energy(v)?;
    }
    Ok(total / data.len() as f64 - log_z)
}

/// KL(target || model) over visible configurations, with 0 ln 0 = 0.
pub fn exact_kl(params: &RbmParams, target: &[f64]) -> Result<f64> {
    guard(params)?;
    let n_states = 1usize << params.n_v;
    if target.len() != n_states {
        return Err(Error::Shape(format!(
            "target table has {} entries, expected {n_states}",
            target.len()
        )));
    }
    if target.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Domain(
            "target probabilities must lie in [0, 1]".into(),
        ));
    }
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("target sums to {total}, not 1")));
    }
    let log_pm = log_marginals(params)?;
    let kl = target
        .iter()
        .zip(&log_pm)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lq)| p * (p.ln() - lq))
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Adds tanh(a_i(v)) v_j, tanh(a_i(v)) and v_j, scaled by `weight`, into `grad`.
pub(crate) fn accumulate_expectation(
    params: &RbmParams,
    v: &[Spin],
    weight: f64,
    grad: &mut GradientEstimate,
) {
    let n_v = params.n_v;
    for (i, a) in params.hidden_field(v).into_iter().enumerate() {
        // tanh(a) = 2 P(h_i = +1 | v) - 1
        let m = weight * a.tanh();
        grad.dc[i] += m;
        for (g, &x) in grad.dw[i * n_v..(i + 1) * n_v].iter_mut().zip(v) {
            *g += m * f64::from(x);
        }
    }
    for (g, &x) in grad.db.iter_mut().zip(v) {
        *g += weight * f64::from(x);
    }
}

/// Exact gradient of [`exact_log_likelihood`] with respect to (w, b, c).
pub fn exact_gradient(params: &RbmParams, data: &[Vec<Spin>]) -> Result<GradientEstimate> {
    guard(params)?;
    if data.is_empty() {
        return Err(Error::Domain("gradient of an empty dataset".into()));
    }
    for v in data {
        check_spins(v, params.n_v, "data vector")?;
    }
    let mut positive = GradientEstimate::zeros(params.n_v, params.n_h);
    let inv_k = 1.0 / data.len() as f64;
    for v in data {
        accumulate_expectation(params, v, inv_k, &mut positive);
    }
    let mut negative = GradientEstimate::zeros(params.n_v, params.n_h);
    for (idx, lp) in log_marginals(params)?.into_iter().enumerate() {
        let v = spins_from_index(idx, params.n_v);
        accumulate_expectation(params, &v, lp.exp(), &mut negative);
    }
    for (p, n) in positive
        .dw
        .iter_mut()
        .chain(positive.db.iter_mut())
        .chain(positive.dc.iter_mut())
        .zip(negative.components())
    {
        *p -= n;
    }
    Ok(positive)
}
