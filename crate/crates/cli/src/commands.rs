//! Commands: load inputs named by the config, run a pipeline step, write
//! reports under `<out_dir>/<command>/` and refresh the manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use valleyscope::datasets::save_patterns;
use valleyscope::valleys::{EscapeEstimate, Histogram};
use valleyscope::{RbmParams, Result, Spin};

use crate::config::ExperimentConfig;
use crate::pipeline::{
    classify, compare, generate, load_dataset, reconstruct, sweep_scale_table, train_model,
    GeneratedImage, Layout, PathResult, ReconstructResult, ScaleTableRow,
};
use crate::plot::image_grid;
use crate::report::{num, opt_num, write_csv, write_json, write_manifest, ReportHeader};

/// `+`/`-` per spin.
pub fn signs(v: &[Spin]) -> String {
    v.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
}

pub fn default_model_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("train").join("model.json")
}

fn dir(cfg: &ExperimentConfig, command: &str) -> PathBuf {
    cfg.out_dir.join(command)
}

fn rel(cfg: &ExperimentConfig, path: &Path) -> String {
    let r = path.strip_prefix(&cfg.out_dir).unwrap_or(path);
    r.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, Serialize)]
struct Report<'a, T: Serialize> {
    #[serde(flatten)]
    header: &'a ReportHeader,
    #[serde(flatten)]
    body: T,
    files: Vec<String>,
}

fn finish<T: Serialize>(
    cfg: &ExperimentConfig,
    header: &ReportHeader,
    json: &Path,
    body: T,
    mut files: Vec<String>,
) -> Result<()> {
    files.push(rel(cfg, json));
    files.sort();
    write_json(
        json,
        &Report {
            header,
            body,
            files,
        },
    )?;
    write_manifest(&cfg.out_dir, cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub dataset_id: String,
    pub train_patterns: usize,
    pub test_patterns: usize,
    pub epochs: usize,
    pub final_reconstruction_error: Option<f64>,
    pub max_abs_weight: f64,
    pub model: String,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let data = load_dataset(&cfg.dataset)?;
    let run = train_model(cfg, &data)?;
    let out = dir(cfg, "train");
    let header = ReportHeader::new("train", cfg, Some(&run.model));
    let mut files = Vec::new();
    for (name, params) in [("init.json", &run.initial), ("model.json", &run.model)] {
        let path = out.join(name);
        std::fs::create_dir_all(&out)?;
        params.save(&path)?;
        files.push(rel(cfg, &path));
    }
    for (epoch, params) in &run.checkpoints {
        let path = out
            .join("checkpoints")
            .join(format!("model_epoch_{epoch:06}.json"));
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        params.save(&path)?;
        files.push(rel(cfg, &path));
    }
    let metrics = out.join("metrics.csv");
    let rows: Vec<String> = run
        .metrics
        .iter()
        .map(|m| {
            format!(
                "{},{},{},{}",
                m.epoch,
                num(m.reconstruction_error),
                opt_num(m.log_likelihood),
                num(m.max_abs_weight)
            )
        })
        .collect();
    write_csv(
        &metrics,
        &header,
        "epoch,reconstruction_error,log_likelihood,max_abs_weight",
        &rows,
    )?;
    files.push(rel(cfg, &metrics));
    let summary = TrainSummary {
        dataset_id: run.model.meta.dataset_id.clone(),
        train_patterns: data.train.len(),
        test_patterns: data.test.len(),
        epochs: run.metrics.len(),
        final_reconstruction_error: run.metrics.last().map(|m| m.reconstruction_error),
        max_abs_weight: run.model.max_abs_weight(),
        model: rel(cfg, &out.join("model.json")),
    };
    finish(cfg, &header, &out.join("train.json"), &summary, files)?;
    Ok(summary)
}

/// Writes the preprocessed patterns as pattern files.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<(usize, usize)> {
    let data = load_dataset(&cfg.dataset)?;
    let out = dir(cfg, "prepare");
    std::fs::create_dir_all(&out)?;
    save_patterns(out.join("train.txt"), &data.train)?;
    save_patterns(out.join("test.txt"), &data.test)?;
    let header = ReportHeader::new("prepare", cfg, None);
    #[derive(Serialize)]
    struct Body<'a> {
        dataset_id: &'a str,
        train_patterns: usize,
        test_patterns: usize,
    }
    let body = Body {
        dataset_id: &data.id,
        train_patterns: data.train.len(),
        test_patterns: data.test.len(),
    };
    let files = vec![
        rel(cfg, &out.join("train.txt")),
        rel(cfg, &out.join("test.txt")),
    ];
    finish(cfg, &header, &out.join("prepare.json"), body, files)?;
    Ok((data.train.len(), data.test.len()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub model_fingerprint: String,
    pub epochs: usize,
    pub paths: Vec<PathSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub path: String,
    pub backend: String,
    pub total: usize,
    pub errors: usize,
    pub invalid: usize,
    pub error_rate: f64,
}

impl From<&PathResult> for PathSummary {
    fn from(r: &PathResult) -> Self {
        Self {
            path: r.path.clone(),
            backend: r.backend.clone(),
            total: r.total,
            errors: r.errors,
            invalid: r.invalid,
            error_rate: r.error_rate,
        }
    }
}

/// Classification error of every model (e.g. successive checkpoints) on
/// both paths.
pub fn cmd_classify(cfg: &ExperimentConfig, models: &[PathBuf]) -> Result<Vec<ModelEvaluation>> {
    let data = load_dataset(&cfg.dataset)?;
    let out = dir(cfg, "classify");
    let header = ReportHeader::new("classify", cfg, None);
    let mut files = Vec::new();
    let mut evaluations = Vec::new();
    let mut summary_rows = Vec::new();
    for (m, model_path) in models.iter().enumerate() {
        let params = RbmParams::load(model_path)?;
        let results = classify(cfg, &params, &data.test)?;
        let model_header = ReportHeader::new("classify", cfg, Some(&params));
        for r in &results {
            let path = out.join(format!("images_m{m:03}_{}.csv", r.path));
            let rows: Vec<String> = r
                .rows
                .iter()
                .map(|row| {
                    format!(
                        "{},{},{},{},{},{},{}",
                        row.index,
                        row.class,
                        row.predicted.map(|p| p.to_string()).unwrap_or_default(),
                        row.status.as_str(),
                        row.fallback_used,
                        row.correct,
                        num(row.energy)
                    )
                })
                .collect();
            write_csv(
                &path,
                &model_header,
                "index,class,predicted,status,fallback_used,correct,energy",
                &rows,
            )?;
            files.push(rel(cfg, &path));
            summary_rows.push(format!(
                "{m},{},{},{},{},{},{},{}",
                params.meta.epochs,
                r.path,
                r.backend,
                r.total,
                r.errors,
                r.invalid,
                num(r.error_rate)
            ));
        }
        evaluations.push(ModelEvaluation {
            model: model_path.to_string_lossy().into_owned(),
            model_fingerprint: params.fingerprint(),
            epochs: params.meta.epochs,
            paths: results.iter().map(PathSummary::from).collect(),
        });
    }
    let summary = out.join("summary.csv");
    write_csv(
        &summary,
        &header,
        "model,epochs,path,backend,total,errors,invalid,error_rate",
        &summary_rows,
    )?;
    files.push(rel(cfg, &summary));
    #[derive(Serialize)]
    struct Body<'a> {
        evaluations: &'a [ModelEvaluation],
    }
    finish(
        cfg,
        &header,
        &out.join("classify.json"),
        Body {
            evaluations: &evaluations,
        },
        files,
    )?;
    Ok(evaluations)
}

fn pixel_images(
    params: &RbmParams,
    items: impl Iterator<Item = (String, Vec<Spin>)>,
) -> Vec<(String, Vec<Spin>)> {
    let layout = Layout::of(params);
    items
        .map(|(caption, v)| (caption, layout.pixels.iter().map(|&j| v[j]).collect()))
        .collect()
}

/// Image width for grids: 7 for the 56-pixel digit layout, else square.
fn image_cols(params: &RbmParams) -> usize {
    let n = Layout::of(params).pixels.len();
    if n == 56 {
        7
    } else {
        ((n as f64).sqrt().ceil() as usize).max(1)
    }
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig, model: &Path) -> Result<Vec<ReconstructResult>> {
    let data = load_dataset(&cfg.dataset)?;
    let params = RbmParams::load(model)?;
    let results = reconstruct(cfg, &params, &data.test)?;
    let out = dir(cfg, "reconstruct");
    let header = ReportHeader::new("reconstruct", cfg, Some(&params));
    let mut files = Vec::new();
    for r in &results {
        let path = out.join(format!("images_{}.csv", r.path));
        let rows: Vec<String> = r
            .rows
            .iter()
            .map(|row| {
                format!(
                    "{},{},{},{}",
                    row.index,
                    row.wrong,
                    num(row.error),
                    signs(&row.visible)
                )
            })
            .collect();
        write_csv(&path, &header, "index,wrong,error,visible", &rows)?;
        files.push(rel(cfg, &path));
        let svg = out.join(format!("images_{}.svg", r.path));
        let images = pixel_images(
            &params,
            r.rows
                .iter()
                .take(40)
                .map(|row| (row.index.to_string(), row.visible.clone())),
        );
        std::fs::write(&svg, image_grid(&images, image_cols(&params), 10))?;
        files.push(rel(cfg, &svg));
    }
    #[derive(Serialize)]
    struct PathError<'a> {
        path: &'a str,
        backend: &'a str,
        pixel_error: f64,
        images: usize,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        mask: &'a [usize],
        results: Vec<PathError<'a>>,
    }
    let body = Body {
        mask: results.first().map(|r| r.mask.as_slice()).unwrap_or(&[]),
        results: results
            .iter()
            .map(|r| PathError {
                path: &r.path,
                backend: &r.backend,
                pixel_error: r.pixel_error,
                images: r.rows.len(),
            })
            .collect(),
    };
    finish(cfg, &header, &out.join("reconstruct.json"), body, files)?;
    Ok(results)
}

pub fn cmd_generate(cfg: &ExperimentConfig, model: &Path) -> Result<Vec<GeneratedImage>> {
    let params = RbmParams::load(model)?;
    let classes: Vec<usize> = match &cfg.generate.classes {
        Some(c) => c.clone(),
        None => (0..params.label_units.len()).collect(),
    };
    let images = generate(cfg, &params, &classes, cfg.generate.k)?;
    let out = dir(cfg, "generate");
    let header = ReportHeader::new("generate", cfg, Some(&params));
    let csv = out.join("generated.csv");
    let rows: Vec<String> = images
        .iter()
        .map(|g| {
            format!(
                "{},{},{},{},{}",
                g.class,
                g.rank,
                num(g.energy),
                num(g.rbm_energy),
                signs(&g.visible)
            )
        })
        .collect();
    write_csv(&csv, &header, "class,rank,energy,rbm_energy,visible", &rows)?;
    let svg = out.join("generated.svg");
    let grid = pixel_images(
        &params,
        images
            .iter()
            .map(|g| (format!("{}#{}", g.class, g.rank), g.visible.clone())),
    );
    std::fs::write(
        &svg,
        image_grid(&grid, image_cols(&params), cfg.generate.k.max(1)),
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        classes: &'a [usize],
        k: usize,
        images: &'a [GeneratedImage],
    }
    let body = Body {
        classes: &classes,
        k: cfg.generate.k,
        images: &images,
    };
    finish(
        cfg,
        &header,
        &out.join("generate.json"),
        body,
        vec![rel(cfg, &csv), rel(cfg, &svg)],
    )?;
    Ok(images)
}

fn histogram_rows(h: &Histogram) -> Vec<String> {
    h.bins
        .iter()
        .map(|b| {
            format!(
                "{},{},{},{},{}",
                num(b.lo),
                num(b.hi),
                b.shared,
                b.only,
                b.total()
            )
        })
        .collect()
}

pub fn cmd_compare(
    cfg: &ExperimentConfig,
    model: &Path,
) -> Result<crate::pipeline::CompareSummary> {
    let data = load_dataset(&cfg.dataset)?;
    let params = RbmParams::load(model)?;
    let outcome = compare(cfg, &params, &data)?;
    let out = dir(cfg, "compare");
    std::fs::create_dir_all(&out)?;
    let header = ReportHeader::new("compare", cfg, Some(&params));
    let mut files = Vec::new();

    for (name, reg) in [
        ("training_valleys.jsonl", &outcome.training),
        ("sample_valleys.jsonl", &outcome.sample),
    ] {
        let path = out.join(name);
        let mut buf = Vec::new();
        reg.write_jsonl(&mut buf)?;
        std::fs::write(&path, buf)?;
        files.push(rel(cfg, &path));
    }
    let hist_header = "lo,hi,shared,only,total";
    for (name, h) in [
        ("energy_training.csv", &outcome.training_energy),
        ("energy_sample.csv", &outcome.sample_energy),
        ("e_act.csv", &outcome.e_act),
        ("width.csv", &outcome.width),
    ] {
        let path = out.join(name);
        write_csv(&path, &header, hist_header, &histogram_rows(h))?;
        files.push(rel(cfg, &path));
    }
    let valleys = out.join("valleys.csv");
    let rows: Vec<String> = outcome
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.registry,
                r.state,
                num(r.energy),
                r.hits,
                r.shared,
                opt_num(r.e_act),
                opt_num(r.ln_prefactor),
                opt_num(r.r_squared),
                opt_num(r.width)
            )
        })
        .collect();
    write_csv(
        &valleys,
        &header,
        "registry,state,energy,hits,shared,e_act,ln_prefactor,r_squared,width",
        &rows,
    )?;
    files.push(rel(cfg, &valleys));
    let escape = out.join("escape.csv");
    let rows: Vec<String> = outcome
        .escapes
        .iter()
        .flat_map(|(state, ests)| {
            ests.iter().map(move |e| {
                format!(
                    "{state},{},{},{},{},{},{}",
                    num(e.temperature),
                    e.trials,
                    e.censored,
                    num(e.mean_jumps),
                    num(e.rate),
                    opt_num(e.last_energy_mean)
                )
            })
        })
        .collect();
    write_csv(
        &escape,
        &header,
        "state,temperature,trials,censored,mean_jumps,rate,last_energy_mean",
        &rows,
    )?;
    files.push(rel(cfg, &escape));

    #[derive(Serialize)]
    struct Body<'a> {
        summary: &'a crate::pipeline::CompareSummary,
        training_energy: &'a Histogram,
        sample_energy: &'a Histogram,
        e_act: &'a Histogram,
        width: &'a Histogram,
        escapes: Vec<EscapeGroup<'a>>,
    }
    #[derive(Serialize)]
    struct EscapeGroup<'a> {
        state: &'a str,
        estimates: &'a [EscapeEstimate],
    }
    let body = Body {
        summary: &outcome.summary,
        training_energy: &outcome.training_energy,
        sample_energy: &outcome.sample_energy,
        e_act: &outcome.e_act,
        width: &outcome.width,
        escapes: outcome
            .escapes
            .iter()
            .map(|(s, e)| EscapeGroup {
                state: s,
                estimates: e,
            })
            .collect(),
    };
    finish(cfg, &header, &out.join("compare.json"), body, files)?;
    Ok(outcome.summary)
}

pub fn cmd_sweep_scale(
    cfg: &ExperimentConfig,
    model: &Path,
) -> Result<crate::pipeline::ScaleTable> {
    let data = load_dataset(&cfg.dataset)?;
    let params = RbmParams::load(model)?;
    let table = sweep_scale_table(cfg, &params, &data.test)?;
    let out = dir(cfg, "sweep-scale");
    let header = ReportHeader::new("sweep-scale", cfg, Some(&params));
    let csv = out.join("scale.csv");
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r: &ScaleTableRow| {
            format!(
                "{},{},{}",
                num(r.scale),
                num(r.classification_error),
                num(r.reconstruction_error)
            )
        })
        .collect();
    write_csv(
        &csv,
        &header,
        "scale,classification_error,reconstruction_error",
        &rows,
    )?;
    finish(
        cfg,
        &header,
        &out.join("sweep.json"),
        &table,
        vec![rel(cfg, &csv)],
    )?;
    Ok(table)
}
