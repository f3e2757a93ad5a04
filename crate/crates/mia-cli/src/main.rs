//! Command-line driver: training, evaluation, gradient checking, A/B
//! ablations, parameter audits, and attention-map export.
//!
//! Exit status: 0 on success, 1 on a domain error (one-line diagnostic on
//! stderr), 2 on usage errors (via the parser).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mia_core::backbone::{build_mini_cnn, build_mini_flows, build_mini_segnet, Model, Variant};
use mia_core::data::{
    load_cifar10, load_checkpoint, load_flows_csv, save_checkpoint, synth_blobs_noisy,
    synth_masks, Dataset, FlowsSchema, Split,
};
use mia_core::error::{Error, Result};
use mia_core::pgm::write_pgm;
use mia_core::train::{evaluate, train_loop, LossKind, TrainConfig};
use mia_core::verify;

#[derive(Parser)]
#[command(name = "mia", about = "Train and inspect tiny attention-recalibrated networks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Task {
    /// CIFAR-10 binary batches from --data-dir.
    Cifar,
    /// Synthetic class blobs (zero external data).
    SynthCls,
    /// Synthetic segmentation masks.
    SynthSeg,
    /// Flow records from a CSV file.
    Flows,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Mia,
    SeOnly,
    None,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Mia => Variant::Mia,
            VariantArg::SeOnly => Variant::SeOnly,
            VariantArg::None => Variant::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LossArg {
    /// Cross-entropy for classifiers, dice for the segmenter.
    Auto,
    CrossEntropy,
    Dice,
    DiceOnehot,
}

#[derive(Clone, Debug, clap::Args)]
struct DataOpts {
    /// Dataset to use.
    #[arg(long, value_enum, default_value_t = Task::SynthCls)]
    task: Task,
    /// Directory with CIFAR-10 binary batches (default: $MIA_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Keep at most this many records (cifar).
    #[arg(long)]
    limit: Option<usize>,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Synthetic class count.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Synthetic noise level sigma.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Synthetic mask image side length (even).
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Flow CSV path (required for --task flows).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Flow CSV label column.
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus an epoch log.
    Train {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, value_enum, default_value_t = VariantArg::Mia)]
        variant: VariantArg,
        /// Training epochs.
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        /// Initial learning rate (cosine-annealed to --lr-min).
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Final learning rate of the cosine schedule.
        #[arg(long, default_value_t = 0.0)]
        lr_min: f64,
        /// Mini-batch size.
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Attention bottleneck reduction ratio.
        #[arg(long, default_value_t = 16)]
        r: usize,
        /// Seed for init, shuffling, and synthetic data.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Loss to optimize.
        #[arg(long, value_enum, default_value_t = LossArg::Auto)]
        loss: LossArg,
        /// Pin the attention gate biases at zero (bias-free channel gate).
        #[arg(long)]
        no_gate_bias: bool,
        /// Checkpoint output path.
        #[arg(long, default_value = "mia.ckpt")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and print a metric report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the finite-difference gradient suite; exit 0 iff all pass.
    Gradcheck {
        /// Full sweep: 5 seeds per primitive, all attention shapes.
        #[arg(long)]
        full: bool,
    },
    /// Train all three variants on identical data and print a table.
    Ablate {
        #[command(flatten)]
        data: DataOpts,
        /// Number of seeds per variant.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        r: usize,
    },
    /// Print per-layer and total parameter counts, with attention audits.
    Params {
        #[arg(long, value_enum, default_value_t = VariantArg::Mia)]
        variant: VariantArg,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, default_value_t = 16)]
        r: usize,
    },
    /// Export attention maps of one sample: channel gate as text, spatial
    /// gate and fused-map slices as PGM images.
    ExportAttn {
        #[arg(long)]
        ckpt: PathBuf,
        /// Sample index into the task dataset.
        #[arg(long, default_value_t = 0)]
        input: usize,
        #[arg(long, default_value = "attn-out")]
        out: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn data_dir(opt: &Option<PathBuf>) -> PathBuf {
    opt.clone()
        .or_else(|| std::env::var_os("MIA_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_dataset(opts: &DataOpts, split: Split, seed: u64) -> Result<Dataset> {
    // synthetic held-out sets draw from a shifted seed stream
    let seed = match split {
        Split::Train => seed,
        Split::Test => seed + 1000,
    };
    match opts.task {
        Task::Cifar => load_cifar10(&data_dir(&opts.data_dir), split, opts.limit),
        Task::SynthCls => {
            let n = if split == Split::Test { opts.n.div_ceil(2) } else { opts.n };
            Ok(synth_blobs_noisy(n, opts.classes, seed, opts.noise)?.with_split(split))
        }
        Task::SynthSeg => {
            let n = if split == Split::Test { opts.n.div_ceil(2) } else { opts.n };
            Ok(synth_masks(n, opts.size, opts.size, seed)?.with_split(split))
        }
        Task::Flows => {
            let csv = opts.csv.as_ref().ok_or_else(|| Error::InvalidConfig {
                detail: "--task flows needs --csv <path>".into(),
            })?;
            let schema = FlowsSchema::with_label(&opts.label_column);
            Ok(load_flows_csv(csv, &schema)?.with_split(split))
        }
    }
}

fn build_model(opts: &DataOpts, variant: Variant, reduction: usize, seed: u64) -> Result<Model> {
    match opts.task {
        Task::Cifar => build_mini_cnn((3, 32, 32), 10, variant, reduction, seed),
        Task::SynthCls => build_mini_cnn((3, 16, 16), opts.classes, variant, reduction, seed),
        Task::SynthSeg => build_mini_segnet((1, opts.size, opts.size), variant, reduction, seed),
        Task::Flows => {
            let ds = load_dataset(opts, Split::Train, seed)?;
            let (_, _, features) = ds.sample_dims();
            build_mini_flows(features, 2, variant, reduction, seed)
        }
    }
}

fn pick_loss(loss: LossArg, task: Task) -> Result<LossKind> {
    let kind = match (loss, task) {
        (LossArg::Auto, Task::SynthSeg) => LossKind::Dice,
        (LossArg::Auto, _) => LossKind::CrossEntropy,
        (LossArg::CrossEntropy, _) => LossKind::CrossEntropy,
        (LossArg::Dice, Task::SynthSeg) => LossKind::Dice,
        (LossArg::Dice, _) => {
            return Err(Error::InvalidConfig {
                detail: "plain dice applies to --task synth-seg; use dice-onehot for classifiers".into(),
            })
        }
        (LossArg::DiceOnehot, _) => LossKind::DiceOnehot,
    };
    Ok(kind)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, variant, epochs, lr, lr_min, batch, r, seed, loss, no_gate_bias, out } => {
            let cfg = TrainConfig {
                lr_init: lr,
                batch_size: batch,
                epochs,
                lr_min,
                loss: pick_loss(loss, data.task)?,
                seed,
                freeze_gate_biases: no_gate_bias,
            };
            cfg.validate()?;
            let mut model = build_model(&data, variant.into(), r, seed)?;
            let dataset = load_dataset(&data, Split::Train, seed)?;
            println!(
                "training {} ({} params) on {} samples, loss {}",
                model.tag(),
                model.param_count(),
                dataset.len(),
                cfg.loss.as_str()
            );
            let log = train_loop(&mut model, &dataset, &cfg)?;
            let mut log_text = String::new();
            for record in &log {
                println!("{}", record.to_line());
                log_text.push_str(&record.to_line());
                log_text.push('\n');
            }
            save_checkpoint(&model, &out)?;
            let log_path = PathBuf::from(format!("{}.log", out.display()));
            std::fs::write(&log_path, log_text).map_err(|e| Error::io(&log_path, e))?;
            println!("checkpoint written to {}, epoch log to {}", out.display(), log_path.display());
            Ok(())
        }
        Command::Eval { ckpt, data, seed } => {
            let model = load_checkpoint(&ckpt)?;
            let dataset = load_dataset(&data, Split::Test, seed)?;
            let report = evaluate(&model, &dataset)?;
            print!("{}", report.to_kv_block());
            Ok(())
        }
        Command::Gradcheck { full } => {
            let entries = verify::fd_suite(full)?;
            let mut all_pass = true;
            for e in &entries {
                println!("{}", e.to_line());
                all_pass &= e.passed();
            }
            if all_pass {
                println!("gradcheck: all {} checks passed", entries.len());
                Ok(())
            } else {
                Err(Error::InvalidConfig { detail: "gradient check failed".into() })
            }
        }
        Command::Ablate { data, seeds, epochs, r } => {
            if seeds == 0 {
                return Err(Error::InvalidConfig { detail: "--seeds must be >= 1".into() });
            }
            let with_dice = data.task == Task::SynthSeg;
            println!("variant,seed,{}", mia_core::metrics::MetricReport::csv_header(with_dice));
            let mut medians = Vec::new();
            for variant in [Variant::Mia, Variant::SeOnly, Variant::None] {
                let mut scores = Vec::new();
                for seed in 0..seeds {
                    let cfg = TrainConfig {
                        epochs,
                        loss: pick_loss(LossArg::Auto, data.task)?,
                        seed: 400 + seed,
                        ..Default::default()
                    };
                    let mut model = build_model(&data, variant, r, 300 + seed)?;
                    let train = load_dataset(&data, Split::Train, 100 + seed)?;
                    let test = load_dataset(&data, Split::Test, 200 + seed)?;
                    train_loop(&mut model, &train, &cfg)?;
                    let report = evaluate(&model, &test)?;
                    println!("{},{},{}", variant, seed, report.to_csv_row());
                    scores.push(report.dice.unwrap_or(report.accuracy));
                }
                scores.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
                medians.push((variant, scores[scores.len() / 2]));
            }
            for (variant, median) in medians {
                println!("median,{variant},{median}");
            }
            Ok(())
        }
        Command::Params { variant, data, r } => {
            let model = build_model(&data, variant.into(), r, 0)?;
            println!("model {}", model.tag());
            println!("{:<40} params", "layer");
            for (label, count) in model.param_summary() {
                println!("{label:<40} {count}");
            }
            let total = model.param_count();
            let attn = model.mia_param_count();
            println!("{:<40} {total}", "total");
            if total > 0 {
                println!(
                    "{:<40} {attn} ({:.2}% of total)",
                    "attention total",
                    100.0 * attn as f64 / total as f64
                );
            }
            Ok(())
        }
        Command::ExportAttn { ckpt, input, out, data, seed } => {
            let model = load_checkpoint(&ckpt)?;
            if model.variant() == Variant::None {
                return Err(Error::InvalidConfig {
                    detail: "variant 'none' has no attention maps to export".into(),
                });
            }
            let dataset = load_dataset(&data, Split::Test, seed)?;
            let (x, _) = dataset.sample(input)?;
            let (_, maps) = model.predict_with_maps(&x)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (i, m) in maps.iter().enumerate() {
                let channels = m.wc.dims()[1];
                let (h, w) = (m.ws.dims()[1], m.ws.dims()[2]);
                let wc_path = out.join(format!("wc_layer{i}.txt"));
                let wc_text: String = m.wc.data().iter().map(|v| format!("{v}\n")).collect();
                std::fs::write(&wc_path, wc_text).map_err(|e| Error::io(&wc_path, e))?;
                write_pgm(&out.join(format!("ws_layer{i}.pgm")), h, w, m.ws.data())?;
                for c in 0..channels {
                    let plane = &m.a.data()[c * h * w..(c + 1) * h * w];
                    write_pgm(&out.join(format!("a_layer{i}_c{c:02}.pgm")), h, w, plane)?;
                }
            }
            println!("wrote attention maps for {} layer(s) to {}", maps.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
