use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use grading_detector::data_pipeline::{make_cv_splits, SplitPlan};
use grading_detector::dataset::read_manifest;
use grading_detector::detector::GradingHead;
use grading_detector::eval_metrics::{
    evaluate_scenes, pair_by_scene, read_jsonl, BinningScheme, DetectionRecord, GtRecord, EVAL_IOU,
};
use grading_detector::experiment::{self, ExperimentConfig, RunRecord, RUN_RECORD_FILE};
use grading_detector::toy_data::{generate_dataset, ToyConfig};
use grading_detector::{Error, Result};

#[derive(Parser)]
#[command(
    name = "grading-detector",
    version,
    about = "Detect and grade objects on an ordinal scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Regressor,
    Classifier,
}

impl From<Variant> for GradingHead {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Regressor => GradingHead::Regressor,
            Variant::Classifier => GradingHead::Classifier,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy cylinder dataset.
    GenerateToy {
        #[arg(long)]
        out: PathBuf,
        /// desk: 128x128 2D scenes; paper: 320x320x8 volumes.
        #[arg(long, value_enum, default_value = "desk")]
        profile: Profile,
        /// Toy configuration file; overrides the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenes in the trainval list.
        #[arg(long = "n-train", default_value_t = 400)]
        trainval: usize,
        #[arg(long = "n-test", default_value_t = 200)]
        test: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a cross-validation plan over a dataset's scenes.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Instead of folds: keep the dataset's test list and hold out this many validation scenes.
        #[arg(long)]
        holdout_val: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write an experiment configuration for a profile.
    InitConfig {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        profile: Profile,
        #[arg(long, value_enum, default_value = "regressor")]
        variant: Variant,
        #[arg(long, default_value_t = 2)]
        dimensionality: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train one run.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ensemble a run's checkpoints on its test scenes.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the run record in the configured output directory.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Score detections from any source against ground truth (JSON lines).
    Score {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Bin centers; taken from --dataset if given.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4.0, 8.0, 12.0, 16.0, 20.0])]
        bin_centers: Vec<f64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = EVAL_IOU)]
        iou: f64,
    },
    /// Tabulate evaluation directories and draw overlays.
    Report {
        #[arg(long = "eval", required = true)]
        evals: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        figures: usize,
    },
    /// Train and evaluate both variants with shared seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0usize])]
        folds: Vec<usize>,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateToy {
            out,
            profile,
            config,
            trainval,
            test,
            seed,
        } => {
            let mut cfg = match (config, profile) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                (None, Profile::Desk) => ToyConfig::desk_2d(),
                (None, Profile::Paper) => ToyConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            generate_dataset(&cfg, trainval, test, &out)?;
            println!("wrote {} scenes to {}", trainval + test, out.display());
        }
        Command::Split {
            dataset,
            out,
            folds,
            holdout_val,
            seed,
        } => {
            let manifest = read_manifest(&dataset)?;
            let plan = match holdout_val {
                Some(n) => {
                    let trainval = manifest
                        .splits
                        .get("trainval")
                        .ok_or_else(|| Error::Data("dataset has no trainval split".into()))?;
                    let test = manifest.splits.get("test").cloned().unwrap_or_default();
                    SplitPlan::holdout(trainval, &test, n, seed)?
                }
                None => make_cv_splits(&manifest.scenes, folds, seed)?,
            };
            plan.write(&out)?;
            println!("wrote {} fold(s) to {}", plan.folds.len(), out.display());
        }
        Command::InitConfig {
            dataset,
            output_dir,
            profile,
            variant,
            dimensionality,
            out,
        } => {
            let cfg = match profile {
                Profile::Desk => ExperimentConfig::desk(dataset, output_dir, variant.into()),
                Profile::Paper => ExperimentConfig::paper(dataset, output_dir, variant.into(), dimensionality),
            };
            cfg.validate()?;
            cfg.write(&out)?;
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::read(&config)?;
            let rec = experiment::train(&cfg)?;
            println!(
                "trained {} epochs in {:.0}s; kept {} checkpoint(s) in {}",
                rec.epochs.len(),
                rec.wall_seconds,
                rec.checkpoints.len(),
                cfg.output_dir.display()
            );
        }
        Command::Evaluate { config, record } => {
            let cfg = ExperimentConfig::read(&config)?;
            let path = record.unwrap_or_else(|| cfg.output_dir.join(RUN_RECORD_FILE));
            let rec = RunRecord::read(&path)?;
            let ev = experiment::evaluate(&cfg, &rec)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&ev.metrics).expect("metrics serialize")
            );
        }
        Command::Score {
            detections,
            gt,
            bin_centers,
            dataset,
            iou,
        } => {
            let scheme = match dataset {
                Some(d) => read_manifest(&d)?.binning,
                None => BinningScheme::new(bin_centers)?,
            };
            let dets: Vec<DetectionRecord> = read_jsonl(&detections)?;
            let gts: Vec<GtRecord> = read_jsonl(&gt)?;
            let scenes: Vec<_> = pair_by_scene(&dets, &gts).into_iter().map(|(_, d, g)| (d, g)).collect();
            let (metrics, _) = evaluate_scenes(&scenes, &scheme, iou)?;
            println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
        }
        Command::Report {
            evals,
            out,
            dataset,
            figures,
        } => {
            let table = experiment::report(&evals, dataset.as_deref(), &out, figures)?;
            print!("{}", table.to_text());
        }
        Command::Compare { config, seeds, folds } => {
            let cfg = ExperimentConfig::read(&config)?;
            let cmp = experiment::compare(&cfg, &folds, &seeds)?;
            print!("{}", cmp.table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
