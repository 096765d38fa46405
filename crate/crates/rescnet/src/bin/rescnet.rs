//! Command-line front end: fit, resume, eval, and export-metrics.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use rescnet::checkpoint;
use rescnet::config::{DatasetKind, TrainConfig};
use rescnet::dataset::{
    augment_hflip, load_cifar, load_folder_dataset, load_mnist, CifarVariant, ImageSet,
};
use rescnet::engine::{self, LayerProgress, ProgressSink, ResCNetModel};
use rescnet::lda::argmax_rows;
use rescnet::{Error, Result};

#[derive(Parser)]
#[command(name = "rescnet", version, about = "Forward-only residual compensation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file, checkpointing after every layer.
    Fit {
        /// Path to a TOML config file.
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the dataset files.
        #[arg(long)]
        data_dir: PathBuf,
        /// Checkpoint output path; metrics go to `<out>.metrics.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Override the seed stored in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue training from a checkpoint.
    Resume {
        /// Checkpoint to continue from.
        checkpoint: PathBuf,
        /// Layers to add; defaults to the remaining configured budget.
        #[arg(long)]
        layers: Option<usize>,
        /// Directory holding the dataset files.
        #[arg(long)]
        data_dir: PathBuf,
        /// Checkpoint output path; metrics go to `<out>.metrics.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint to evaluate.
        checkpoint: PathBuf,
        /// Directory holding the dataset files.
        #[arg(long)]
        data_dir: PathBuf,
        /// Print accuracy at every prefix depth instead of only the last.
        #[arg(long)]
        per_layer: bool,
        /// Dataset split to evaluate.
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Write a checkpoint's per-layer progress log as CSV.
    ExportMetrics {
        /// Checkpoint to read.
        checkpoint: PathBuf,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Split {
    Train,
    Test,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            config,
            data_dir,
            out,
            seed,
        } => cmd_fit(&config, &data_dir, &out, seed),
        Command::Resume {
            checkpoint,
            layers,
            data_dir,
            out,
        } => cmd_resume(&checkpoint, layers, &data_dir, &out),
        Command::Eval {
            checkpoint,
            data_dir,
            per_layer,
            split,
        } => cmd_eval(&checkpoint, &data_dir, per_layer, split),
        Command::ExportMetrics { checkpoint, out } => cmd_export_metrics(&checkpoint, &out),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

/// Config problems exit 2, unreadable checkpoints exit 4, every other
/// data or numeric failure exits 3.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Magic(_) | Error::Version(_) => 4,
        _ => 3,
    }
}

fn metrics_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".metrics.csv");
    PathBuf::from(name)
}

fn resolve(data_dir: &Path, configured: &str) -> PathBuf {
    let path = Path::new(configured);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_dir.join(path)
    }
}

/// Load one split using the dataset layout conventions documented in
/// the README, then apply the configured limit and augmentation.
fn load_split(config: &TrainConfig, data_dir: &Path, split: Split) -> Result<ImageSet> {
    let data = &config.data;
    let set = match data.dataset {
        DatasetKind::Mnist => {
            let (images, labels) = match split {
                Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            };
            load_mnist(&data_dir.join(images), &data_dir.join(labels))?
        }
        DatasetKind::Cifar10 => {
            let paths: Vec<PathBuf> = match split {
                Split::Train => (1..=5)
                    .map(|i| data_dir.join(format!("data_batch_{i}.bin")))
                    .collect(),
                Split::Test => vec![data_dir.join("test_batch.bin")],
            };
            load_cifar(&paths, CifarVariant::Cifar10)?
        }
        DatasetKind::Cifar100 => {
            let name = match split {
                Split::Train => "train.bin",
                Split::Test => "test.bin",
            };
            load_cifar(&[data_dir.join(name)], CifarVariant::Cifar100)?
        }
        DatasetKind::Folder => {
            let (root, manifest) = match split {
                Split::Train => (&data.train_root, &data.train_manifest),
                Split::Test => (&data.test_root, &data.test_manifest),
            };
            load_folder_dataset(&resolve(data_dir, root), &resolve(data_dir, manifest))?
        }
    };
    let limit = match split {
        Split::Train => data.train_limit,
        Split::Test => data.test_limit,
    };
    let set = if limit > 0 && limit < set.len() {
        set.take_prefix(limit)?
    } else {
        set
    };
    Ok(match split {
        Split::Train if data.augment_hflip => augment_hflip(&set),
        _ => set,
    })
}

/// Writes the checkpoint and metrics after every trained layer, so an
/// interrupted run can always resume from the last finished layer.
struct CheckpointSink {
    out: PathBuf,
    snapshot: String,
}

impl ProgressSink for CheckpointSink {
    fn on_layer(&mut self, progress: &LayerProgress, model: &ResCNetModel) -> Result<()> {
        checkpoint::save(model, &self.snapshot, &self.out)?;
        checkpoint::write_metrics(&model.progress, &metrics_path(&self.out))?;
        let val = match progress.val_accuracy {
            Some(v) => format!("  val_acc {v:.6}"),
            None => String::new(),
        };
        println!(
            "layer {:>4}  alpha {:.4}  n_p {:>6}  n_n {:>6}  train_acc {:.6}{val}",
            progress.layer, progress.alpha, progress.n_p, progress.n_n, progress.train_accuracy
        );
        Ok(())
    }
}

fn report_final(model: &ResCNetModel, config: &TrainConfig, data_dir: &Path) -> Result<()> {
    let last = model.progress.last().expect("trained model has progress");
    println!(
        "final depth {}  train_acc {:.6}",
        model.depth(),
        last.train_accuracy
    );
    match load_split(config, data_dir, Split::Test) {
        Ok(test_set) => {
            let accuracy = engine::evaluate(model, &test_set)?;
            println!("test_acc {accuracy:.6} on {} samples", test_set.len());
        }
        Err(_) => println!("test split unavailable; skipping evaluation"),
    }
    Ok(())
}

fn cmd_fit(config_path: &Path, data_dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut config = TrainConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    let snapshot = config.to_canonical_toml();
    let engine_config = config.engine_config()?;
    let train_set = load_split(&config, data_dir, Split::Train)?;
    println!(
        "training on {} samples ({} classes)",
        train_set.len(),
        train_set.class_count
    );
    let mut sink = CheckpointSink {
        out: out.to_path_buf(),
        snapshot: snapshot.clone(),
    };
    let model = engine::train(&train_set, &engine_config, &mut sink)?;
    checkpoint::save(&model, &snapshot, out)?;
    checkpoint::write_metrics(&model.progress, &metrics_path(out))?;
    report_final(&model, &config, data_dir)
}

fn cmd_resume(
    checkpoint_path: &Path,
    layers: Option<usize>,
    data_dir: &Path,
    out: &Path,
) -> Result<()> {
    let (model, snapshot) = checkpoint::load(checkpoint_path)?;
    let additional =
        layers.unwrap_or_else(|| model.config.max_layers.saturating_sub(model.depth()));
    if additional == 0 {
        // Nothing to add: the output must match the input byte for byte.
        let bytes = checkpoint::to_bytes(&model, &snapshot);
        std::fs::write(out, &bytes).map_err(|e| Error::io(out.display().to_string(), e))?;
        checkpoint::write_metrics(&model.progress, &metrics_path(out))?;
        println!("no layers to add; copied checkpoint to {}", out.display());
        return Ok(());
    }
    let mut config = TrainConfig::from_toml(&snapshot)?;
    config.train.max_layers = model.depth() + additional;
    let snapshot = config.to_canonical_toml();
    let train_set = load_split(&config, data_dir, Split::Train)?;
    println!(
        "resuming from depth {} toward {} layers on {} samples",
        model.depth(),
        config.train.max_layers,
        train_set.len()
    );
    let mut sink = CheckpointSink {
        out: out.to_path_buf(),
        snapshot: snapshot.clone(),
    };
    let model = engine::resume(model, &train_set, additional, &mut sink)?;
    checkpoint::save(&model, &snapshot, out)?;
    checkpoint::write_metrics(&model.progress, &metrics_path(out))?;
    report_final(&model, &config, data_dir)
}

fn cmd_eval(checkpoint_path: &Path, data_dir: &Path, per_layer: bool, split: Split) -> Result<()> {
    let (model, snapshot) = checkpoint::load(checkpoint_path)?;
    let config = TrainConfig::from_toml(&snapshot)?;
    let set = load_split(&config, data_dir, split)?;
    if per_layer {
        let mut rows = Vec::with_capacity(model.depth());
        engine::forward_posteriors(&model, &set.images, |depth, posteriors| {
            let pred = argmax_rows(posteriors);
            let correct = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
            rows.push((depth, correct as f64 / set.len() as f64));
        })?;
        println!("depth,accuracy");
        for (depth, accuracy) in rows {
            println!("{depth},{accuracy}");
        }
    } else {
        let accuracy = engine::evaluate(&model, &set)?;
        println!("accuracy {accuracy:.6} on {} samples", set.len());
    }
    Ok(())
}

fn cmd_export_metrics(checkpoint_path: &Path, out: &Path) -> Result<()> {
    let (model, _) = checkpoint::load(checkpoint_path)?;
    checkpoint::write_metrics(&model.progress, out)?;
    println!("wrote {} rows to {}", model.progress.len(), out.display());
    Ok(())
}
