//! Sampling backends seen through the logical model: every read comes back
//! as a decoded RBM state.

use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;
use valleyscope::annealer::{
    dedupe, resolve_endpoint, Annealer, LocalSa, RemoteAnnealer, ENDPOINT_ENV,
};
use valleyscope::chimera::{
    clamp_units, decode, embed_rbm_with, EmbedDiagnostics, EmbedOptions, Embedding, IsingProblem,
    Unit,
};
use valleyscope::gibbs::{gibbs_chain, gibbs_sweep, ClampMask};
use valleyscope::rng::{derive_seed, stream_rng};
use valleyscope::{Error, RbmParams, Result, Spin, SpinState};

use crate::config::{BackendConfig, ExperimentConfig};

const DECODE_TAG: u64 = 0x6465_636f_6465;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    LocalSa,
    /// Endpoint after the environment override.
    Remote(String),
    /// Independent Gibbs chains on the logical model, relabeled as reads.
    GibbsAsAnnealer,
}

impl BackendKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "local-sa" => Ok(Self::LocalSa),
            "gibbs-as-annealer" => Ok(Self::GibbsAsAnnealer),
            "remote" => match resolve_endpoint("") {
                url if url.is_empty() => Err(Error::Domain(format!("backend \"remote\" needs {ENDPOINT_ENV} to be set"))),
                url => Ok(Self::Remote(url)),
            },
            other => match other.strip_prefix("remote:") {
                Some(url) if !url.is_empty() => Ok(Self::Remote(resolve_endpoint(url))),
                _ => Err(Error::Domain(format!(
                    "unknown backend {other:?}; expected local-sa, remote:<url>, remote or gibbs-as-annealer"
                ))),
            },
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::LocalSa => "local-sa".into(),
            Self::Remote(url) => format!("remote:{url}"),
            Self::GibbsAsAnnealer => "gibbs-as-annealer".into(),
        }
    }
}

/// One decoded read.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalRead {
    pub state: SpinState,
    /// Energy as reported by the backend: embedded-problem energy for
    /// annealers, RBM energy for Gibbs chains.
    pub energy: f64,
    pub num: u64,
    pub broken_chains: usize,
}

// One engine per sampler; the size gap is irrelevant.
#[allow(clippy::large_enum_variant)]
enum Engine {
    Annealer {
        solver: Box<dyn Annealer>,
        problem: IsingProblem,
        embedding: Embedding,
        diagnostics: EmbedDiagnostics,
    },
    Gibbs {
        sweeps: usize,
    },
}

pub struct Sampler<'a> {
    params: &'a RbmParams,
    kind: BackendKind,
    engine: Engine,
}

impl<'a> Sampler<'a> {
    /// Embeds at the configured scale unless the backend is Gibbs.
    pub fn new(params: &'a RbmParams, cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_scale(params, cfg, cfg.embedding.scale)
    }

    pub fn with_scale(params: &'a RbmParams, cfg: &ExperimentConfig, scale: f64) -> Result<Self> {
        let kind = BackendKind::parse(&cfg.backend.name)?;
        if kind == BackendKind::GibbsAsAnnealer {
            return Ok(Self {
                params,
                kind,
                engine: Engine::Gibbs {
                    sweeps: cfg.backend.gibbs_sweeps,
                },
            });
        }
        let opts = EmbedOptions {
            scale,
            ..cfg.embedding.options()
        };
        let (problem, embedding, diagnostics) =
            embed_rbm_with(params, &cfg.embedding.graph()?, &opts)?;
        Self::from_embedded(params, cfg, problem, embedding, diagnostics)
    }

    /// An annealer-backed sampler over an existing embedding of `params`.
    pub fn from_embedded(
        params: &'a RbmParams,
        cfg: &ExperimentConfig,
        problem: IsingProblem,
        embedding: Embedding,
        diagnostics: EmbedDiagnostics,
    ) -> Result<Self> {
        let kind = BackendKind::parse(&cfg.backend.name)?;
        if kind == BackendKind::GibbsAsAnnealer {
            return Err(Error::Domain(
                "the gibbs-as-annealer backend does not use an embedding".into(),
            ));
        }
        Ok(Self {
            params,
            engine: Engine::Annealer {
                solver: annealer(&kind, &cfg.backend),
                problem,
                embedding,
                diagnostics,
            },
            kind,
        })
    }

    pub fn id(&self) -> String {
        self.kind.id()
    }

    pub fn diagnostics(&self) -> Option<&EmbedDiagnostics> {
        match &self.engine {
            Engine::Annealer { diagnostics, .. } => Some(diagnostics),
            Engine::Gibbs { .. } => None,
        }
    }

    /// `reads` decoded reads with `clamps` held fixed, ascending energy.
    /// Identical raw reads are merged before decoding.
    pub fn sample(
        &self,
        clamps: &[(Unit, Spin)],
        reads: usize,
        seed: u64,
    ) -> Result<Vec<LogicalRead>> {
        match &self.engine {
            Engine::Annealer {
                solver,
                problem,
                embedding,
                ..
            } => {
                let clamped;
                let target = if clamps.is_empty() {
                    problem
                } else {
                    clamped = clamp_units(problem, embedding, clamps)?;
                    &clamped
                };
                let set = solver.solve(target, reads, seed)?;
                let decode_seed = derive_seed(seed, DECODE_TAG);
                dedupe(&set)
                    .into_iter()
                    .enumerate()
                    .map(|(k, read)| {
                        let (state, report) = decode(
                            embedding,
                            &read.spins,
                            &mut stream_rng(decode_seed, k as u64),
                        )?;
                        Ok(LogicalRead {
                            state,
                            energy: read.energy,
                            num: read.num,
                            broken_chains: report.broken(),
                        })
                    })
                    .collect()
            }
            Engine::Gibbs { sweeps } => gibbs_reads(self.params, clamps, reads, *sweeps, seed),
        }
    }
}

fn annealer(kind: &BackendKind, cfg: &BackendConfig) -> Box<dyn Annealer> {
    match kind {
        BackendKind::Remote(url) => Box::new(RemoteAnnealer {
            endpoint: url.clone(),
            timeout: Duration::from_secs(cfg.timeout_secs),
            schedule: Some(cfg.schedule),
        }),
        _ => Box::new(LocalSa {
            schedule: cfg.schedule,
        }),
    }
}

/// Mask of the units named in `clamps`.
pub fn clamp_mask(params: &RbmParams, clamps: &[(Unit, Spin)]) -> Result<ClampMask> {
    let mut mask = ClampMask::none(params.n_v, params.n_h);
    for &(unit, _) in clamps {
        match unit {
            Unit::Visible(j) if j < params.n_v => mask.visible[j] = true,
            Unit::Hidden(i) if i < params.n_h => mask.hidden[i] = true,
            other => return Err(Error::Lookup(format!("{other:?} is outside the model"))),
        }
    }
    Ok(mask)
}

/// Read `k` is a chain on stream `k`: random visible start with the clamps
/// applied, `sweeps` block sweeps at T = 1.
fn gibbs_reads(
    params: &RbmParams,
    clamps: &[(Unit, Spin)],
    reads: usize,
    sweeps: usize,
    seed: u64,
) -> Result<Vec<LogicalRead>> {
    if reads == 0 {
        return Err(Error::Domain("num_reads must be at least 1".into()));
    }
    let mask = clamp_mask(params, clamps)?;
    let mut out = (0..reads as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let mut v: Vec<Spin> = (0..params.n_v)
                .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                .collect();
            let mut fixed_h = Vec::new();
            for &(unit, s) in clamps {
                match unit {
                    Unit::Visible(j) => v[j] = s,
                    Unit::Hidden(i) => fixed_h.push((i, s)),
                }
            }
            let mut state = gibbs_chain(params, &v, 0, 1.0, &mut rng, None)?;
            for &(i, spin) in &fixed_h {
                state.h[i] = spin;
            }
            for _ in 0..sweeps {
                state = gibbs_sweep(params, &state, 1.0, &mut rng, Some(&mask))?;
            }
            let energy = params.energy(&state)?;
            Ok(LogicalRead {
                state,
                energy,
                num: 1,
                broken_chains: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_backend_names() {
        assert_eq!(
            BackendKind::parse("local-sa").unwrap(),
            BackendKind::LocalSa
        );
        assert_eq!(
            BackendKind::parse("remote:http://h:1").unwrap(),
            BackendKind::Remote("http://h:1".into())
        );
        assert_eq!(
            BackendKind::parse("gibbs-as-annealer").unwrap(),
            BackendKind::GibbsAsAnnealer
        );
        assert!(BackendKind::parse("remote:").is_err());
        assert!(BackendKind::parse("dwave").is_err());
        for name in ["local-sa", "remote:http://h:1", "gibbs-as-annealer"] {
            assert_eq!(BackendKind::parse(name).unwrap().id(), name);
        }
    }

    fn small_config(backend: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.embedding.rows = 1;
        cfg.embedding.cols = 1;
        cfg.backend.name = backend.into();
        cfg.backend.schedule.sweeps = 200;
        cfg
    }

    #[test]
    fn clamped_units_hold_on_both_engines() {
        let params = RbmParams::random_uniform(4, 4, 0.5, &mut stream_rng(3, 0));
        let clamps = [
            (Unit::Visible(0), 1),
            (Unit::Visible(2), -1),
            (Unit::Hidden(1), -1),
        ];
        for backend in ["local-sa", "gibbs-as-annealer"] {
            let cfg = small_config(backend);
            let sampler = Sampler::new(&params, &cfg).unwrap();
            let reads = sampler.sample(&clamps, 50, 7).unwrap();
            assert_eq!(reads.iter().map(|r| r.num).sum::<u64>(), 50);
            for r in &reads {
                assert_eq!(
                    (r.state.v[0], r.state.v[2], r.state.h[1]),
                    (1, -1, -1),
                    "{backend}"
                );
            }
            assert!(reads.windows(2).all(|w| w[0].energy <= w[1].energy));
            assert_eq!(sampler.sample(&clamps, 50, 7).unwrap(), reads);
        }
    }

    #[test]
    fn gibbs_backend_has_no_embedding() {
        let params = RbmParams::zeros(2, 2);
        let cfg = small_config("gibbs-as-annealer");
        assert!(Sampler::new(&params, &cfg).unwrap().diagnostics().is_none());
        let local = small_config("local-sa");
        assert!(Sampler::new(&params, &local)
            .unwrap()
            .diagnostics()
            .is_some());
    }

    #[test]
    fn out_of_range_clamp_is_a_lookup_error() {
        let params = RbmParams::zeros(2, 2);
        assert!(matches!(
            clamp_mask(&params, &[(Unit::Visible(2), 1)]),
            Err(Error::Lookup(_))
        ));
    }
}
