//! The `hnm-pgd` command line: `train`, `attack`, `verify` and `salience`.
//!
//! Every subcommand accepts `--config FILE`, a flat `name=value` file whose
//! names are long flag names. Values from the file are applied first, so any
//! flag given on the command line wins.
//!
//! Exit statuses: 0 success, 1 operational failure, 2 usage or input error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::attack::{
    hnm_pgd, AttackConfig, HnmPgdOutcome, LossKind, LossSpec, Preset, YOLO_CONVENTION,
};
use crate::error::Error;
use crate::imagetensor::{
    load_mask_png, load_png, save_delta_png, save_mask_png, save_png, save_salience_png,
    save_salience_raw, Image, Mask,
};
use crate::kv::KvRecord;
use crate::maskgen::{check_constraints, MaskSearchConfig};
use crate::microdetect::{
    generate_scene, generate_suite, load_checkpoint, objectness_accuracy, save_checkpoint, train,
    DetectorModel, TrainConfig, DEFAULT_CLASSES, DEFAULT_GRID, DEFAULT_SIDE,
};
use crate::salience::{smoothgrad, SalienceConfig};

/// Offset between the training and held-out scene seeds of `train`.
pub const HOLDOUT_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Parser)]
#[command(
    name = "hnm-pgd",
    version,
    about = "Half-Neighbor masked PGD attacks on a grid detector"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the detector on synthetic scenes and write a checkpoint.
    Train(TrainArgs),
    /// Run the full attack on images or a seeded synthetic suite.
    Attack(AttackArgs),
    /// Check a perturbation or mask against the pixel and region budgets.
    Verify(VerifyArgs),
    /// Export a SmoothGrad salience map.
    Salience(SalienceArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Flat `name=value` file of flag defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub train_scenes: usize,
    #[arg(long, default_value_t = 200)]
    pub holdout_scenes: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_SIDE)]
    pub side: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    pub classes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    #[arg(long, default_value_t = LossKind::Combined)]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0.3)]
    pub conf_threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    pub cls_threshold: f64,
}

impl LossArgs {
    fn spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            conf_threshold: self.conf_threshold,
            cls_threshold: self.cls_threshold,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    #[arg(long, default_value_t = 1.0)]
    pub phi0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub phi_step: f64,
    #[arg(long, default_value_t = 9)]
    pub k0: usize,
    #[arg(long, default_value_t = 2)]
    pub shrink: usize,
    #[arg(long, default_value_t = 50)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 0.02)]
    pub budget_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub max_regions: usize,
    #[arg(long, default_value_t = 8)]
    pub min_pixels: usize,
}

impl MaskArgs {
    fn config(&self) -> MaskSearchConfig {
        MaskSearchConfig {
            phi0: self.phi0,
            phi_step: self.phi_step,
            k0: self.k0,
            shrink: self.shrink,
            max_attempts: self.max_attempts,
            pixel_budget_fraction: self.budget_fraction,
            max_regions: self.max_regions,
            min_pixels: self.min_pixels,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "suite_seed"])))]
#[command(args_override_self = true)]
pub struct AttackArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Detector checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Input PNGs, attacked in the order given.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub input: Vec<PathBuf>,
    /// Seed of a synthetic suite to attack instead of files.
    #[arg(long)]
    pub suite_seed: Option<u64>,
    /// Number of synthetic scenes.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Output directory for artifacts and `summary.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; image `i` uses `seed + i`.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = Preset::Fast)]
    pub preset: Preset,
    /// Overrides the preset's step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the preset's step size.
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, default_value_t = 16.0 / 255.0)]
    pub init_magnitude: f64,
    /// Average each step's gradient with that of the mirrored image.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub flip: bool,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub mask: MaskArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("other").required(true).args(["adversarial", "mask"])))]
#[command(args_override_self = true)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clean image.
    #[arg(long)]
    pub image: PathBuf,
    /// Perturbed image; the mask is every pixel where any channel differs.
    #[arg(long)]
    pub adversarial: Option<PathBuf>,
    /// `{0,255}` mask PNG.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub budget_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub max_regions: usize,
    #[arg(long, default_value_t = 0)]
    pub min_pixels: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "scene_seed"])))]
#[command(args_override_self = true)]
pub struct SalienceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed of a single synthetic scene to use instead of a file.
    #[arg(long)]
    pub scene_seed: Option<u64>,
    /// Output prefix; writes `PREFIX.f32` and `PREFIX.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[command(flatten)]
    pub loss: LossArgs,
}

/// A failed command: diagnostic text plus exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn operational(e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

/// Bad arguments and unreadable inputs are usage errors; everything else
/// that goes wrong while working is operational.
fn input_error(e: Error) -> Failure {
    Failure::usage(e)
}

fn work_error(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(_) => Failure::usage(e),
        other => Failure::operational(other),
    }
}

/// Expands `--config FILE` into `--name=value` arguments placed right after
/// the subcommand, ahead of the user's own flags.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            match it.next() {
                Some(p) => path = Some(PathBuf::from(p)),
                None => return Err(Failure::usage("--config needs a file path")),
            }
        } else if let Some(p) = text.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::usage(Error::io(&path, e)))?;
    let record =
        KvRecord::parse(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    // argv[0], then the subcommand, then the config values.
    let at = rest.len().min(2);
    let injected = record
        .entries()
        .map(|(k, v)| OsString::from(format!("--{}={v}", k.replace('_', "-"))));
    rest.splice(at..at, injected);
    Ok(rest)
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Attack(a) => cmd_attack(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Salience(a) => cmd_salience(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32, Failure> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let init = DetectorModel::init(a.side, a.grid, a.classes, a.seed).map_err(work_error)?;
    let scenes =
        generate_suite(a.seed, a.train_scenes, a.side, a.grid, a.classes).map_err(work_error)?;
    let holdout = generate_suite(
        a.seed.wrapping_add(HOLDOUT_SEED_OFFSET),
        a.holdout_scenes,
        a.side,
        a.grid,
        a.classes,
    )
    .map_err(work_error)?;
    let outcome = train(&init, &scenes, &cfg).map_err(work_error)?;
    save_checkpoint(&outcome.model, &a.out).map_err(work_error)?;

    let mut report = KvRecord::new();
    report
        .push("epochs", a.epochs)
        .push(
            "final_train_loss",
            outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        )
        .push(
            "train_accuracy",
            objectness_accuracy(&outcome.model, &scenes).map_err(work_error)?,
        );
    if !holdout.is_empty() {
        report.push(
            "holdout_accuracy",
            objectness_accuracy(&outcome.model, &holdout).map_err(work_error)?,
        );
    }
    print!("{report}");
    Ok(0)
}

/// One attacked image's outcome, as listed in the summary.
enum Row {
    Done(Box<HnmPgdOutcome>),
    Failed(String),
}

fn attack_header(
    a: &AttackArgs,
    attack: &AttackConfig,
    mask: &MaskSearchConfig,
    spec: &LossSpec,
) -> KvRecord {
    let mut h = KvRecord::new();
    h.push("model", a.model.display());
    if let Some(seed) = a.suite_seed {
        h.push("suite_seed", seed).push("count", a.count);
    } else {
        let list: Vec<String> = a.input.iter().map(|p| p.display().to_string()).collect();
        h.push("input", list.join(","));
    }
    h.push("seed", a.seed)
        .push("preset", a.preset)
        .push("steps", attack.steps)
        .push("step_size", attack.step_size)
        .push("init_magnitude", attack.init_magnitude)
        .push("flip", attack.use_flip_transform)
        .push("loss", spec.kind)
        .push("yolo_convention", YOLO_CONVENTION)
        .push("conf_threshold", spec.conf_threshold)
        .push("cls_threshold", spec.cls_threshold)
        .push("samples", a.samples)
        .push("sigma", a.sigma)
        .push("phi0", mask.phi0)
        .push("phi_step", mask.phi_step)
        .push("k0", mask.k0)
        .push("shrink", mask.shrink)
        .push("max_attempts", mask.max_attempts)
        .push("budget_fraction", mask.pixel_budget_fraction)
        .push("max_regions", mask.max_regions)
        .push("min_pixels", mask.min_pixels);
    h
}

fn image_report(outcome: &HnmPgdOutcome, spec: &LossSpec) -> KvRecord {
    let r = &outcome.result;
    let mut kv = KvRecord::new();
    kv.push("status", "ok")
        .push("loss", spec.kind)
        .push("yolo_convention", YOLO_CONVENTION)
        .push("clean_detections", r.clean_detections)
        .push("adv_detections", r.adv_detections)
        .push("phi", outcome.phi)
        .push("attempts", outcome.attempts);
    for (k, v) in outcome.report.to_kv().entries() {
        kv.push(k, v);
    }
    let trace: Vec<String> = r.loss_trace.iter().map(f64::to_string).collect();
    kv.push("final_loss", r.final_loss())
        .push("loss_trace", trace.join(","));
    kv
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::operational(Error::io(path, e)))
}

pub fn cmd_attack(a: &AttackArgs) -> Result<i32, Failure> {
    let spec = a.loss.spec();
    spec.validate().map_err(input_error)?;
    let mask_cfg = a.mask.config();
    mask_cfg.validate().map_err(input_error)?;
    let mut base = AttackConfig::preset(a.preset);
    base.steps = a.steps.unwrap_or(base.steps);
    base.step_size = a.step_size.unwrap_or(base.step_size);
    base.init_magnitude = a.init_magnitude;
    base.use_flip_transform = a.flip;
    base.pixel_budget_fraction = mask_cfg.pixel_budget_fraction;
    base.max_regions = mask_cfg.max_regions;
    base.validate().map_err(input_error)?;
    let sal_base = SalienceConfig {
        samples: a.samples,
        sigma: a.sigma,
        seed: a.seed,
    };
    sal_base.validate().map_err(input_error)?;

    let model = load_checkpoint(&a.model).map_err(input_error)?;
    let images: Vec<Image> = match a.suite_seed {
        Some(seed) => generate_suite(seed, a.count, model.side(), model.grid(), model.classes())
            .map_err(input_error)?
            .into_iter()
            .map(|s| s.image)
            .collect(),
        None => a
            .input
            .iter()
            .map(load_png)
            .collect::<Result<_, _>>()
            .map_err(input_error)?,
    };
    fs::create_dir_all(&a.out).map_err(|e| Failure::operational(Error::io(&a.out, e)))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(Failure::operational)?;
    let rows: Vec<Row> = pool.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let seed = a.seed.wrapping_add(i as u64);
                let cfg = AttackConfig { seed, ..base };
                let sal = SalienceConfig { seed, ..sal_base };
                match hnm_pgd(&model, x, &mask_cfg, &spec, &cfg, &sal) {
                    Ok(o) => Row::Done(Box::new(o)),
                    Err(e) => Row::Failed(e.to_string()),
                }
            })
            .collect()
    });

    let mut table = String::new();
    writeln!(
        table,
        "index\tstatus\tclean\tadv\tpixels\tbudget\tregions\tphi\tfinal_loss"
    )
    .unwrap();
    let mut failures = 0;
    for (i, (row, x)) in rows.iter().zip(&images).enumerate() {
        let artifact = |suffix: &str| a.out.join(format!("{i:04}_{suffix}"));
        match row {
            Row::Done(o) => {
                let r = &o.result;
                save_png(x, artifact("clean.png")).map_err(work_error)?;
                save_png(&r.adversarial, artifact("adv.png")).map_err(work_error)?;
                save_delta_png(&r.delta, artifact("delta.png")).map_err(work_error)?;
                save_mask_png(&r.mask, artifact("mask.png")).map_err(work_error)?;
                write_text(&artifact("report.txt"), &image_report(o, &spec).to_string())?;
                writeln!(
                    table,
                    "{i}\tok\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.clean_detections,
                    r.adv_detections,
                    o.report.pixel_count,
                    o.report.pixel_budget,
                    o.report.region_count,
                    o.phi,
                    r.final_loss()
                )
                .unwrap();
            }
            Row::Failed(msg) => {
                failures += 1;
                save_png(x, artifact("clean.png")).map_err(work_error)?;
                let mut kv = KvRecord::new();
                kv.push("status", "failed").push("error", msg);
                write_text(&artifact("report.txt"), &kv.to_string())?;
                writeln!(table, "{i}\tfailed\t-\t-\t-\t-\t-\t-\t-").unwrap();
            }
        }
    }

    let mut summary = String::new();
    for (k, v) in attack_header(a, &base, &mask_cfg, &spec).entries() {
        writeln!(summary, "# {k}={v}").unwrap();
    }
    summary.push_str(&table);
    write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{table}");

    if !rows.is_empty() && failures == rows.len() {
        eprintln!("error: every image failed");
        return Ok(1);
    }
    Ok(0)
}

/// Pixels where any channel of the two images differs.
pub fn difference_mask(clean: &Image, other: &Image) -> Result<Mask, Error> {
    if clean.as_tensor().shape() != other.as_tensor().shape() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {:?} vs {:?}",
            clean.as_tensor().shape(),
            other.as_tensor().shape()
        )));
    }
    let c = clean.channels();
    Ok(Mask::from_fn(clean.height(), clean.width(), |r, col| {
        (0..c).any(|ch| clean.get(r, col, ch) != other.get(r, col, ch))
    }))
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32, Failure> {
    let clean = load_png(&a.image).map_err(input_error)?;
    let mask = match (&a.adversarial, &a.mask) {
        (Some(adv), _) => {
            let adv = load_png(adv).map_err(input_error)?;
            difference_mask(&clean, &adv).map_err(input_error)?
        }
        (None, Some(m)) => {
            let m = load_mask_png(m).map_err(input_error)?;
            if (m.height(), m.width()) != (clean.height(), clean.width()) {
                return Err(Failure::usage(format!(
                    "dimension mismatch: image {}x{}, mask {}x{}",
                    clean.height(),
                    clean.width(),
                    m.height(),
                    m.width()
                )));
            }
            m
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let cfg = MaskSearchConfig {
        pixel_budget_fraction: a.budget_fraction,
        max_regions: a.max_regions,
        min_pixels: a.min_pixels,
        ..MaskSearchConfig::default()
    };
    cfg.validate().map_err(input_error)?;
    let report = check_constraints(&mask, &cfg);
    print!("{}", report.to_kv());
    Ok(if report.passed { 0 } else { 1 })
}

pub fn cmd_salience(a: &SalienceArgs) -> Result<i32, Failure> {
    let spec = a.loss.spec();
    spec.validate().map_err(input_error)?;
    let cfg = SalienceConfig {
        samples: a.samples,
        sigma: a.sigma,
        seed: a.seed,
    };
    cfg.validate().map_err(input_error)?;
    let model = load_checkpoint(&a.model).map_err(input_error)?;
    let x = match (&a.input, a.scene_seed) {
        (Some(p), _) => load_png(p).map_err(input_error)?,
        (None, Some(seed)) => {
            generate_scene(seed, model.side(), model.grid(), model.classes())
                .map_err(input_error)?
                .image
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let map = smoothgrad(&model, &x, &spec, &cfg).map_err(work_error)?;
    let raw = with_suffix(&a.out, "f32");
    let png = with_suffix(&a.out, "png");
    save_salience_raw(&map, &raw).map_err(work_error)?;
    save_salience_png(&map, &png).map_err(work_error)?;
    println!("raw={}", raw.display());
    println!("png={}", png.display());
    Ok(0)
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
