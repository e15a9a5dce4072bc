use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use valleyscope::annealer::{MockConfig, MockService, DEFAULT_MAX_QUBITS};
use valleyscope_cli::commands::{
    cmd_classify, cmd_compare, cmd_generate, cmd_prepare, cmd_reconstruct, cmd_sweep_scale,
    cmd_train, default_model_path,
};
use valleyscope_cli::config::schema_json;
use valleyscope_cli::plot::{plot_csv, ChartKind};
use valleyscope_cli::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "valleyscope",
    version,
    about = "RBM training, annealer sampling and energy-valley comparison"
)]
struct Cli {
    /// Experiment config (JSON). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the backend: local-sa, remote:<url>, remote, gibbs-as-annealer.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Line,
    Bar,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes train/model.json and per-epoch metrics.
    Train,
    /// Write the preprocessed train and test pattern files.
    Prepare,
    /// Classification error on both paths, one row per model.
    Classify {
        /// Model files; defaults to the trained model under the output directory.
        #[arg(long)]
        model: Vec<PathBuf>,
    },
    /// Pixel reconstruction error on both paths.
    Reconstruct {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Lowest-energy images with the label clamped.
    Generate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Valley comparison between training patterns and a backend sample.
    Compare {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classification and reconstruction error across scale factors.
    SweepScale {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// SVG chart from a report CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        /// Comma-separated y columns.
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        #[arg(long, value_enum, default_value = "line")]
        kind: Kind,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the bundled annealer service until interrupted.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: String,
        #[arg(long, default_value_t = DEFAULT_MAX_QUBITS)]
        max_qubits: usize,
        /// Seed for requests that carry none.
        #[arg(long = "mock-seed", default_value_t = 0)]
        mock_seed: u64,
    },
    /// Print the JSON schema of the config file.
    Schema,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(b) = &cli.backend {
        cfg.backend.name = b.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Schema => {
            println!("{}", schema_json());
            return Ok(());
        }
        Command::Plot {
            csv,
            x,
            y,
            kind,
            title,
            output,
        } => {
            let text = std::fs::read_to_string(csv)
                .with_context(|| format!("reading {}", csv.display()))?;
            let kind = match kind {
                Kind::Line => ChartKind::Line,
                Kind::Bar => ChartKind::Bar,
            };
            let default_title = csv
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let svg = plot_csv(
                &text,
                x,
                y,
                kind,
                title.as_deref().unwrap_or(&default_title),
            )?;
            std::fs::write(output, svg)?;
            return Ok(());
        }
        Command::ServeMock {
            addr,
            max_qubits,
            mock_seed,
        } => {
            let service = MockService::start(
                addr,
                MockConfig {
                    seed: *mock_seed,
                    max_qubits: *max_qubits,
                },
            )?;
            eprintln!("mock annealer listening on {}", service.url());
            service.wait()?;
            return Ok(());
        }
        _ => {}
    }
    let cfg = load_config(&cli)?;
    let model = |m: &Option<PathBuf>| m.clone().unwrap_or_else(|| default_model_path(&cfg));
    match &cli.command {
        Command::Train => print_json(&cmd_train(&cfg)?),
        Command::Prepare => {
            let (train, test) = cmd_prepare(&cfg)?;
            println!("{train} training and {test} test patterns");
            Ok(())
        }
        Command::Classify { model: models } => {
            let models = if models.is_empty() {
                vec![default_model_path(&cfg)]
            } else {
                models.clone()
            };
            let evals = cmd_classify(&cfg, &models)?;
            for e in &evals {
                for p in &e.paths {
                    println!(
                        "{} epochs={} {}: error {:.4} ({} invalid)",
                        e.model, e.epochs, p.path, p.error_rate, p.invalid
                    );
                }
            }
            Ok(())
        }
        Command::Reconstruct { model: m } => {
            for r in cmd_reconstruct(&cfg, &model(m))? {
                println!("{}: pixel error {:.4}", r.path, r.pixel_error);
            }
            Ok(())
        }
        Command::Generate { model: m, class, k } => {
            let mut cfg = cfg.clone();
            if let Some(c) = class {
                cfg.generate.classes = Some(vec![*c]);
            }
            if let Some(k) = k {
                cfg.generate.k = *k;
            }
            let images = cmd_generate(&cfg, &model(m))?;
            println!("{} images written", images.len());
            Ok(())
        }
        Command::Compare { model: m } => print_json(&cmd_compare(&cfg, &model(m))?),
        Command::SweepScale { model: m } => print_json(&cmd_sweep_scale(&cfg, &model(m))?),
        Command::Plot { .. } | Command::ServeMock { .. } | Command::Schema => {
            bail!("handled above")
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
