use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybdet::bench::{self, BenchConfig, DatasetSource};
use hybdet::data::rng::derive_seed;
use hybdet::data::{generate_synthetic, load_dir, split_dataset, write_dir};
use hybdet::detector::{checkpoint, Model};
use hybdet::gradcheck::{self, GradCheckConfig};
use hybdet::io::write_atomic;
use hybdet::train::{evaluate, train};

/// Hybrid pre-block detector workbench.
#[derive(Parser, Debug)]
#[command(name = "hybdet", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON or `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic dataset (images/*.ppm + labels/*.txt).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes; defaults to the configured count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Trains one model on the training split and writes checkpoint + log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; defaults to the configured source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train the plain detector instead of the hybrid one.
        #[arg(long)]
        plain: bool,
    },
    /// Scores a checkpoint on a dataset directory; prints JSON metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Operating confidence threshold; defaults to the configured one.
        #[arg(long)]
        conf: Option<f64>,
    },
    /// Runs the hybrid vs plain comparison and writes reports.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the two legs concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Runs the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(common: &Common) -> hybdet::Result<BenchConfig> {
    let mut config = match &common.config {
        Some(path) => BenchConfig::from_text(&std::fs::read_to_string(path)?)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(epochs) = common.epochs {
        config.train.epochs = epochs;
    }
    Ok(config)
}

fn with_data(mut config: BenchConfig, data: Option<&Path>) -> BenchConfig {
    if let Some(path) = data {
        config.dataset = DatasetSource::Directory {
            path: path.to_path_buf(),
        };
    }
    config
}

fn run(command: Command) -> hybdet::Result<()> {
    match command {
        Command::GenData { common, out, samples } => {
            let config = load_config(&common)?;
            let (spec, default_n) = match &config.dataset {
                DatasetSource::Synthetic { spec, samples } => (spec.clone(), *samples),
                DatasetSource::Directory { .. } => (Default::default(), 200),
            };
            let data = generate_synthetic(derive_seed(config.seed, 0), samples.unwrap_or(default_n), &spec);
            write_dir(&out, &data)?;
            println!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Train { common, data, out, plain } => {
            let config = with_data(load_config(&common)?, data.as_deref());
            config.validate()?;
            let samples = bench::load_dataset(&config)?;
            let (train_set, _) = split_dataset(&samples, config.train_fraction, derive_seed(config.seed, 1))?;
            let det = hybdet::detector::DetectorConfig {
                with_hybrid: !plain,
                ..config.detector.clone()
            };
            let hybrid = (!plain).then(|| config.hybrid.clone());
            let mut model = Model::build(det, hybrid, derive_seed(config.seed, 2))?;
            let tc = hybdet::train::TrainConfig {
                seed: derive_seed(config.seed, 3),
                ..config.train.clone()
            };
            let log = train(&mut model, &train_set, &tc)?;
            checkpoint::save(&model, &out.join("checkpoint.bin"))?;
            write_atomic(&out.join("trainlog.csv"), log.to_csv().as_bytes())?;
            println!(
                "trained {} epochs in {:.1} s; final loss {:.6}",
                log.epoch_losses.len(),
                log.train_seconds,
                log.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval { common, checkpoint: path, data, conf } => {
            let config = load_config(&common)?;
            let model = checkpoint::load(&path)?;
            let samples = load_dir(&data, model.detector_config().input_size)?;
            let conf = conf.unwrap_or(config.train.conf_threshold);
            let e = evaluate(&model, &samples, conf, config.train.nms_iou)?;
            println!("{}", serde_json::to_string_pretty(&e.report)?);
            println!("inference {:.3} ms/image", e.infer_ms);
        }
        Command::Bench { common, data, out, parallel } => {
            let mut config = with_data(load_config(&common)?, data.as_deref());
            config.parallel |= parallel;
            if out.is_some() {
                config.output_dir = out;
            }
            let run = bench::run_benchmark(&config)?;
            print!("{}", bench::render_report(&run.report, bench::ReportFormat::Markdown));
            if let Some(dir) = &config.output_dir {
                for path in bench::write_outputs(&run, &config.formats, dir)? {
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Gradcheck { trials, seed } => {
            let mut cfg = GradCheckConfig {
                trials,
                ..GradCheckConfig::default()
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let reports = gradcheck::run_suite(&cfg)?;
            let mut ok = true;
            for r in &reports {
                println!(
                    "{} {:<24} trials={} max_rel_error={:.3e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.trials,
                    r.max_rel_error
                );
                ok &= r.passed;
            }
            if !ok {
                return Err(hybdet::Error::Autodiff("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
