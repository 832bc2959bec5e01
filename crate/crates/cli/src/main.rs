//! `lf-yolo`: operator-facing batch commands.
//!
//! Exit codes: 0 success, 1 validation/usage, 2 I/O, 3 internal.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lf_yolo_core::analyzer::{analyze_model, FlopsConvention};
use lf_yolo_core::error::Error;
use lf_yolo_core::eval::{map50, EvalRecord};
use lf_yolo_core::exec::{Executor, InferExec};
use lf_yolo_core::gradcheck::{run_suite, ALL_BLOCKS};
use lf_yolo_core::io::annot::load_manifest;
use lf_yolo_core::io::config::load_config;
use lf_yolo_core::io::image::load_image;
use lf_yolo_core::io::viz::{save_annotated_image, save_feature_grid};
use lf_yolo_core::io::weights::{check_compatible, load_weights, save_weights};
use lf_yolo_core::io::write_atomic;
use lf_yolo_core::model::{default_anchors, detect, Model, ModelConfig};
use lf_yolo_core::par;
use lf_yolo_core::train::{format_loss_log, train, TrainConfig};

#[derive(Parser)]
#[command(name = "lf-yolo", version, about = "Lightweight ghost-convolution detector toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlopsArg {
    /// One multiply-accumulate per weight per output position.
    Mac,
    /// Multiply and add counted separately (2x MAC).
    Madd,
}

impl From<FlopsArg> for FlopsConvention {
    fn from(v: FlopsArg) -> Self {
        match v {
            FlopsArg::Mac => FlopsConvention::Mac,
            FlopsArg::Madd => FlopsConvention::Madd,
        }
    }
}

#[derive(Args)]
struct ConfigArg {
    /// Model configuration file (`key = value`); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ModelConfig, Error> {
        match &self.config {
            Some(path) => load_config(path),
            None => Ok(ModelConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter and MAC table for the configured network.
    Analyze {
        #[command(flatten)]
        config: ConfigArg,
        /// Square input resolution override (must be divisible by 32).
        #[arg(long)]
        input_size: Option<usize>,
        /// Also write the table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// How to label compute: multiply-accumulates or multiply-adds.
        #[arg(long, value_enum, default_value = "mac")]
        flops_convention: FlopsArg,
    },
    /// Detect objects in one image and print one line per detection.
    Infer {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Confidence threshold (strict >); overrides the config value.
        #[arg(long)]
        conf: Option<f64>,
        /// NMS IoU threshold; overrides the config value.
        #[arg(long)]
        nms_iou: Option<f64>,
        /// Write an annotated PNG here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a manifest of annotated images.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for weights and the loss log.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate mAP50 on a manifest.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Also write the per-class table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference verification of every block's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated block names (default: all).
        #[arg(long, value_delimiter = ',')]
        blocks: Option<Vec<String>>,
        /// Negative control: corrupt the analytic gradients and expect
        /// failures to be reported.
        #[arg(long, default_value_t = false)]
        corrupt: bool,
    },
    /// Dump one backbone stage's feature maps as a labeled channel grid.
    Features {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Stage name s1..s20.
        #[arg(long)]
        layer: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 2,
        Error::Contract(_) => 3,
        _ => 1,
    }
}

fn load_model_and_weights(cfg: ModelConfig, weights: &Path) -> Result<(Model, lf_yolo_core::params::ParamStore), Error> {
    let model = Model::new(cfg)?;
    let expected = model.init_params(0)?;
    let store = load_weights(weights)?;
    check_compatible(&expected, &store)?;
    Ok((model, store))
}

fn cmd_analyze(
    config: ConfigArg,
    input_size: Option<usize>,
    csv: Option<PathBuf>,
    convention: FlopsConvention,
) -> Result<(), Error> {
    let mut cfg = config.load()?;
    if let Some(hw) = input_size {
        cfg.input_size = (hw, hw);
        cfg.anchors = default_anchors(cfg.input_size);
    }
    let model = Model::new(cfg)?;
    let report = analyze_model(&model);
    print!("{}", report.render_text(convention));
    if let Some(path) = csv {
        write_atomic(&path, report.to_csv(convention).as_bytes())?;
    }
    Ok(())
}

fn cmd_infer(
    config: ConfigArg,
    weights: PathBuf,
    image: PathBuf,
    conf: Option<f64>,
    nms_iou: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), Error> {
    let mut cfg = config.load()?;
    if let Some(c) = conf {
        cfg.conf_threshold = c;
    }
    if let Some(n) = nms_iou {
        cfg.nms_iou = n;
    }
    cfg.validate()?;
    let (model, store) = load_model_and_weights(cfg, &weights)?;
    let tensor = load_image(&image, model.cfg.input_size)?;
    let dets = detect(&model, &store, &tensor, model.cfg.conf_threshold, model.cfg.nms_iou)?;
    for d in &dets {
        println!(
            "{} {:.6} {:.2} {:.2} {:.2} {:.2}",
            d.class_id, d.score, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max
        );
    }
    if let Some(path) = out {
        save_annotated_image(&tensor, &dets, &path)?;
    }
    Ok(())
}

fn cmd_train(
    config: ConfigArg,
    manifest: PathBuf,
    epochs: usize,
    lr: f64,
    seed: u64,
    out_dir: PathBuf,
) -> Result<(), Error> {
    let cfg = config.load()?;
    let model = Model::new(cfg)?;
    let samples = load_manifest(&manifest, model.cfg.num_classes)?;
    if samples.is_empty() {
        return Err(Error::Io {
            path: manifest,
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, "empty dataset"),
        });
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut store = model.init_params(seed)?;
    let tc = TrainConfig {
        epochs,
        lr,
        seed,
        ..TrainConfig::default()
    };
    let result = train(&model, &mut store, &samples, &tc)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&out_dir.join("loss_log.csv"), format_loss_log(&result.rows).as_bytes())?;
    save_weights(&store, &out_dir.join("final.lfyw"))?;
    save_weights(&result.best, &out_dir.join("best.lfyw"))?;
    let last = result.rows.last().expect("at least one step");
    println!(
        "trained {} steps over {} epochs ({} samples, {} skipped); final loss {:.6}, best epoch {}",
        result.rows.len(),
        epochs,
        samples.len() - result.skipped_samples,
        result.skipped_samples,
        last.l_total,
        result.best_epoch
    );
    Ok(())
}

/// Decode threshold for evaluation: low enough to sweep the full
/// precision/recall range (AP depends on ranks, not on a cutoff).
const EVAL_CONF: f64 = 0.001;

fn cmd_eval(
    config: ConfigArg,
    manifest: PathBuf,
    weights: PathBuf,
    csv: Option<PathBuf>,
) -> Result<(), Error> {
    let cfg = config.load()?;
    let (model, store) = load_model_and_weights(cfg, &weights)?;
    let samples = load_manifest(&manifest, model.cfg.num_classes)?;
    let mut records = Vec::new();
    for s in &samples {
        let tensor = load_image(&s.image, model.cfg.input_size)?;
        let dets = detect(&model, &store, &tensor, EVAL_CONF, model.cfg.nms_iou)?;
        records.push(EvalRecord {
            detections: dets,
            ground_truths: s
                .boxes
                .iter()
                .map(|b| (b.class_id, b.to_pixels(model.cfg.input_size)))
                .collect(),
        });
    }
    let report = map50(&records, model.cfg.num_classes)?;
    print!("{}", report.render_text());
    if let Some(path) = csv {
        write_atomic(&path, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, blocks: Option<Vec<String>>, corrupt: bool) -> Result<bool, Error> {
    let bias = if corrupt { 1e-2 } else { 0.0 };
    let checks = run_suite(seed, blocks.as_deref(), bias)?;
    let mut all_pass = true;
    for c in &checks {
        println!(
            "{:<20} max rel err {:>10.3e}  threshold {:>7.0e}  {}",
            c.name,
            c.max_rel_err,
            c.threshold,
            if c.passed() { "PASS" } else { "FAIL" }
        );
        all_pass &= c.passed();
    }
    let _ = ALL_BLOCKS;
    Ok(all_pass)
}

fn cmd_features(
    config: ConfigArg,
    weights: PathBuf,
    image: PathBuf,
    layer: String,
    out: PathBuf,
) -> Result<(), Error> {
    let cfg = config.load()?;
    let (model, store) = load_model_and_weights(cfg, &weights)?;
    let names = model.stage_names();
    if !names.contains(&layer) {
        return Err(Error::Validation(format!(
            "unknown layer {layer:?}; valid names: {}",
            names.join(", ")
        )));
    }
    let tensor = load_image(&image, model.cfg.input_size)?;
    let mut ex = InferExec::new(&store);
    let img = ex.input(tensor);
    let mut captured = None;
    model.forward_with(&mut ex, &img, |name, val| {
        if name == layer {
            captured = Some((**val).clone());
        }
    })?;
    let features = captured.expect("validated stage name is always tapped");
    save_feature_grid(&features, &out)?;
    println!("wrote {} ({} channels)", out.display(), features.dims().1);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Analyze { config, input_size, csv, flops_convention } => {
            cmd_analyze(config, input_size, csv, flops_convention.into())?;
            Ok(true)
        }
        Command::Infer { config, weights, image, conf, nms_iou, out } => {
            cmd_infer(config, weights, image, conf, nms_iou, out)?;
            Ok(true)
        }
        Command::Train { config, manifest, epochs, lr, seed, out_dir } => {
            cmd_train(config, manifest, epochs, lr, seed, out_dir)?;
            Ok(true)
        }
        Command::Eval { config, manifest, weights, csv } => {
            cmd_eval(config, manifest, weights, csv)?;
            Ok(true)
        }
        Command::Gradcheck { seed, blocks, corrupt } => cmd_gradcheck(seed, blocks, corrupt),
        Command::Features { config, weights, image, layer, out } => {
            cmd_features(config, weights, image, layer, out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("LF_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => par::configure_threads(n),
            _ => {
                eprintln!("error: LF_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own usage text; --help/--version land here too
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
