//! Exhaustive landscape enumeration for desk-scale models: energies, local
//! minima, descent reach sets and exact escape barriers.
//!
//! Joint state index: bit `k` set means unit `k` is +1, visible units first.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rbm::{spins_from_index, RbmParams, SpinState};

/// Largest `n_v + n_h` accepted by [`exact_barrier`].
pub const BARRIER_UNIT_LIMIT: usize = 20;
/// Largest `n_v + n_h` accepted by [`Landscape::reach_sets`].
pub const REACH_UNIT_LIMIT: usize = 16;

pub fn state_from_index(index: usize, n_v: usize, n_h: usize) -> SpinState {
    let s = spins_from_index(index, n_v + n_h);
    SpinState::new(s[..n_v].to_vec(), s[n_v..].to_vec())
}

pub fn state_index(state: &SpinState) -> usize {
    state
        .v
        .iter()
        .chain(&state.h)
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(k, _)| 1usize << k)
        .sum()
}

/// Ferromagnetic double-well fixture: every weight is `coupling` times a
/// factor in `[1 - jitter, 1 + jitter]`, every bias lies in `[-tilt, tilt]`.
/// The all-up and all-down states are the two deepest minima whenever
/// `tilt` is small against the coupling.
pub fn double_well<R: Rng + ?Sized>(
    n_v: usize,
    n_h: usize,
    coupling: f64,
    tilt: f64,
    jitter: f64,
    rng: &mut R,
) -> RbmParams {
    let mut p = RbmParams::zeros(n_v, n_h);
    for w in &mut p.w {
        *w = coupling * (1.0 + jitter * rng.random_range(-1.0..=1.0));
    }
    for x in p.b.iter_mut().chain(p.c.iter_mut()) {
        *x = tilt * rng.random_range(-1.0..=1.0);
    }
    p
}

/// Double well with a small ferromagnetic core and strongly pinned
/// spectators. Core units are visible `0..core_v` and hidden `0..core_h`;
/// core-core weights are `coupling` times a factor in `[0.8, 1.2]` and core
/// biases lie in `[-tilt, tilt]`. Every other unit gets a bias of magnitude
/// `pin` (times a factor in `[0.8, 1.2]`) with a random sign, and every
/// weight touching a spectator lies in `[-spectator, spectator]`. With
/// `pin` well above the core energies the only minima are the two aligned
/// core states, and spectator excitations cost about `2 * pin`.
#[allow(clippy::too_many_arguments)]
pub fn pinned_double_well<R: Rng + ?Sized>(
    n_v: usize,
    n_h: usize,
    core_v: usize,
    core_h: usize,
    coupling: f64,
    tilt: f64,
    pin: f64,
    spectator: f64,
    rng: &mut R,
) -> RbmParams {
    let mut p = RbmParams::zeros(n_v, n_h);
    for i in 0..n_h {
        for j in 0..n_v {
            *p.weight_mut(i, j) = if i < core_h && j < core_v {
                coupling * rng.random_range(0.8..=1.2)
            } else {
                spectator * rng.random_range(-1.0..=1.0)
            };
        }
    }
    for (k, x) in p.b.iter_mut().enumerate() {
        *x = if k < core_v {
            tilt * rng.random_range(-1.0..=1.0)
        } else {
            pin * rng.random_range(0.8..=1.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        };
    }
    for (k, x) in p.c.iter_mut().enumerate() {
        *x = if k < core_h {
            tilt * rng.random_range(-1.0..=1.0)
        } else {
            pin * rng.random_range(0.8..=1.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        };
    }
    p
}

#[derive(Debug, Clone)]
pub struct Landscape {
    pub n_v: usize,
    pub n_h: usize,
    pub energies: Vec<f64>,
    /// States admitting no single flip with negative energy change.
    pub minima: Vec<usize>,
}

impl Landscape {
    pub fn enumerate(params: &RbmParams, limit: usize) -> Result<Self> {
        params.validate()?;
        let n = params.n_units();
        if n > limit {
            return Err(Error::Size { units: n, limit });
        }
        let energies: Vec<f64> = (0..1usize << n)
            .map(|idx| {
                let s = state_from_index(idx, params.n_v, params.n_h);
                params.energy_unchecked(&s.v, &s.h)
            })
            .collect();
        let minima = (0..energies.len())
            .filter(|&idx| (0..n).all(|k| energies[idx ^ (1 << k)] >= energies[idx]))
            .collect();
        Ok(Self {
            n_v: params.n_v,
            n_h: params.n_h,
            energies,
            minima,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_v + self.n_h
    }

    pub fn state(&self, index: usize) -> SpinState {
        state_from_index(index, self.n_v, self.n_h)
    }

    pub fn is_minimum(&self, index: usize) -> bool {
        (0..self.n_units()).all(|k| self.energies[index ^ (1 << k)] >= self.energies[index])
    }

    /// For every state, the sorted set of minima reachable by strictly
    /// descending single flips (a minimum reaches only itself).
    pub fn reach_sets(&self) -> Result<Vec<Vec<u32>>> {
        let n = self.n_units();
        if n > REACH_UNIT_LIMIT {
            return Err(Error::Size {
                units: n,
                limit: REACH_UNIT_LIMIT,
            });
        }
        let mut order: Vec<usize> = (0..self.energies.len()).collect();
        order.sort_by(|&a, &b| self.energies[a].total_cmp(&self.energies[b]));
        let mut reach: Vec<Vec<u32>> = vec![Vec::new(); self.energies.len()];
        for &idx in &order {
            let e = self.energies[idx];
            let mut set: Vec<u32> = Vec::new();
            for k in 0..n {
                let nb = idx ^ (1 << k);
                if self.energies[nb] < e {
                    set.extend_from_slice(&reach[nb]);
                }
            }
            if set.is_empty() {
                set.push(idx as u32);
            } else {
                set.sort_unstable();
                set.dedup();
            }
            reach[idx] = set;
        }
        Ok(reach)
    }
}

struct Components {
    parent: Vec<u32>,
    minima: Vec<u32>,
}

impl Components {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let p = self.parent[x] as usize;
            self.parent[x] = self.parent[p];
            x = p;
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb] = ra as u32;
            self.minima[ra] += self.minima[rb];
        }
    }
}

/// Lowest energy, above the valley bottom, from which the single-flip
/// connected set of states below it joins `valley_id` to another local
/// minimum. States are added in ascending energy with equal energies as one
/// batch. Returns `f64::INFINITY` when the valley is the only minimum.
pub fn exact_barrier(params: &RbmParams, valley_id: &SpinState) -> Result<f64> {
    if params.n_units() > BARRIER_UNIT_LIMIT {
        return Err(Error::Size {
            units: params.n_units(),
            limit: BARRIER_UNIT_LIMIT,
        });
    }
    if !params.is_local_minimum(valley_id) {
        return Err(Error::Domain(format!("{valley_id} is not a local minimum")));
    }
    let land = Landscape::enumerate(params, BARRIER_UNIT_LIMIT)?;
    Ok(barrier_on(&land, state_index(valley_id)))
}

pub(crate) fn barrier_on(land: &Landscape, target: usize) -> f64 {
    let n = land.n_units();
    let e = &land.energies;
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e[a].total_cmp(&e[b]));
    let mut comps = Components {
        parent: (0..e.len() as u32).collect(),
        minima: vec![0; e.len()],
    };
    for &m in &land.minima {
        comps.minima[m] = 1;
    }
    let mut added = vec![false; e.len()];
    let mut start = 0;
    while start < order.len() {
        let level = e[order[start]];
        let mut end = start;
        while end < order.len() && e[order[end]] == level {
            end += 1;
        }
        for &idx in &order[start..end] {
            added[idx] = true;
        }
        for &idx in &order[start..end] {
            for k in 0..n {
                let nb = idx ^ (1 << k);
                if added[nb] {
                    comps.union(idx, nb);
                }
            }
        }
        if added[target] {
            let root = comps.find(target);
            if comps.minima[root] >= 2 {
                return level - e[target];
            }
        }
        start = end;
    }
    f64::INFINITY
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // oracles index explicitly
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn index_round_trip() {
        for idx in [0usize, 1, 5, 31, 63] {
            assert_eq!(state_index(&state_from_index(idx, 4, 2)), idx);
        }
    }

    #[test]
    fn minima_match_flip_check() {
        let mut rng = stream_rng(1, 0);
        let p = RbmParams::random_normal(4, 3, 1.0, &mut rng);
        let land = Landscape::enumerate(&p, 16).unwrap();
        for idx in 0..land.energies.len() {
            let s = land.state(idx);
            assert_eq!(land.minima.contains(&idx), p.is_local_minimum(&s));
            assert!((land.energies[idx] - p.energy(&s).unwrap()).abs() < 1e-12);
        }
    }

    /// Two spins, one visible and one hidden, w = 1, c = 0.25, b = 0: minima
    /// at (+,+) with E = -1.25 and (-,-) with E = -0.75. Leaving either
    /// requires passing (-,+) at E = 0.75 or (+,-) at E = 1.25.
    #[test]
    fn hand_computed_two_spin_barrier() {
        let mut p = RbmParams::zeros(1, 1);
        p.w[0] = 1.0;
        p.c[0] = 0.25;
        let up = SpinState::new(vec![1], vec![1]);
        let down = SpinState::new(vec![-1], vec![-1]);
        assert!((exact_barrier(&p, &up).unwrap() - 2.0).abs() < 1e-12);
        assert!((exact_barrier(&p, &down).unwrap() - 1.5).abs() < 1e-12);
    }

    /// Chain v0 - h0 - v1 with w = 1 on both bonds and c = 0.5: minima
    /// (+++) at -2.5 and (---) at -1.5. The cheapest way out of (---) flips
    /// a visible end (E = 0.5), from which (+++) is downhill.
    #[test]
    fn hand_computed_three_spin_barrier() {
        let mut p = RbmParams::zeros(2, 1);
        p.w = vec![1.0, 1.0];
        p.c[0] = 0.5;
        let down = SpinState::new(vec![-1, -1], vec![-1]);
        let up = SpinState::new(vec![1, 1], vec![1]);
        assert!((exact_barrier(&p, &down).unwrap() - 2.0).abs() < 1e-12);
        assert!((exact_barrier(&p, &up).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_minimum_is_infinite() {
        let mut p = RbmParams::zeros(3, 2);
        p.b = vec![1.0, 0.5, 0.7];
        p.c = vec![0.3, 0.2];
        let gs = SpinState::new(vec![1; 3], vec![1; 2]);
        assert_eq!(exact_barrier(&p, &gs).unwrap(), f64::INFINITY);
    }

    #[test]
    fn barrier_is_nonnegative_and_guarded() {
        let mut rng = stream_rng(2, 0);
        for _ in 0..20 {
            let p = RbmParams::random_normal(4, 4, 1.0, &mut rng);
            let land = Landscape::enumerate(&p, 16).unwrap();
            for &m in &land.minima {
                assert!(exact_barrier(&p, &land.state(m)).unwrap() >= 0.0);
            }
        }
        let p = RbmParams::zeros(12, 9);
        let s = SpinState::new(vec![1; 12], vec![1; 9]);
        assert!(matches!(exact_barrier(&p, &s), Err(Error::Size { .. })));
        let mut p = RbmParams::zeros(1, 1);
        p.w[0] = 1.0;
        let bad = SpinState::new(vec![1], vec![-1]);
        assert!(matches!(exact_barrier(&p, &bad), Err(Error::Domain(_))));
    }

    /// Reach sets agree with a brute-force search over descending paths.
    #[test]
    fn reach_sets_match_path_search() {
        let mut rng = stream_rng(3, 0);
        let p = RbmParams::random_normal(3, 3, 1.0, &mut rng);
        let land = Landscape::enumerate(&p, 16).unwrap();
        let reach = land.reach_sets().unwrap();
        let n = land.n_units();
        for start in 0..land.energies.len() {
            let mut seen = vec![false; land.energies.len()];
            let mut stack = vec![start];
            let mut found = Vec::new();
            while let Some(x) = stack.pop() {
                if std::mem::replace(&mut seen[x], true) {
                    continue;
                }
                let lower: Vec<usize> = (0..n)
                    .map(|k| x ^ (1 << k))
                    .filter(|&y| land.energies[y] < land.energies[x])
                    .collect();
                if lower.is_empty() {
                    found.push(x as u32);
                }
                stack.extend(lower);
            }
            found.sort_unstable();
            assert_eq!(reach[start], found);
        }
    }
}
