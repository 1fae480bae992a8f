//! The `resdistill` command line.
//!
//! Every subcommand starts from the same [`RunConfig`]: defaults, then the
//! `--config` JSON file, then explicit flags. The resolved config is written
//! next to the command's outputs, and passing it back through `--config`
//! replays the command.
//!
//! Run directory layout (under `--output-dir`):
//!
//! ```text
//! teacher/            train-teacher at the teacher magnification
//! baseline_<mag>/     train-teacher --mag <mag>
//! kd_<pool>_<mag>/    distill
//! kd_<pool>_<mag>_ft/ finetune
//! ablation/           ablate
//! eval/               eval (one MetricsReport per model)
//! report/             report
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use resdistill::config::RunConfig;
use resdistill::data::{level_side, Dataset, MagTag, Split};
use resdistill::distill::{
    accuracy, distill_student, fine_tune, predict_view, run_ablation, train_supervised, AblationRow, PhaseResult,
};
use resdistill::eval::{emit_report, MetricsReport, ABLATION_FILE, EVAL_DIR, REPORT_DIR};
use resdistill::model::{count_flops, read_checkpoint_dtype, Model};
use resdistill::resize::ResizeMode;
use resdistill::tensor::DType;
use resdistill::{seed, Error, Scalar};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Describes the model stored in a run subdirectory.
pub const ARTIFACT_FILE: &str = "artifact.json";

#[derive(Debug, Parser)]
#[command(
    name = "resdistill",
    version,
    about = "Train low-resolution students from a high-resolution teacher"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run config; explicit flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; every component seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Parallel ablation cells.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl From<Precision> for DType {
    fn from(p: Precision) -> DType {
        match p {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into --data-dir.
    GenData {
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        base_size: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Supervised training: the teacher, or a baseline with --mag.
    TrainTeacher {
        #[arg(long)]
        mag: Option<MagTag>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Distil a student from the trained teacher on an unlabeled pool.
    Distill {
        #[arg(long)]
        pool: Option<Split>,
        #[arg(long)]
        mode: Option<ResizeMode>,
        /// Student magnification.
        #[arg(long)]
        mag: Option<MagTag>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Start the student from the teacher's weights.
        #[arg(long)]
        warm_start: bool,
    },
    /// Retrain only the head of a distilled student on the labeled split.
    Finetune {
        #[arg(long)]
        pool: Option<Split>,
        #[arg(long)]
        mag: Option<MagTag>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate every trained model on the test split.
    Eval,
    /// Distil one student per (magnification, mode, seed).
    Ablate {
        #[arg(long, value_delimiter = ',')]
        mags: Option<Vec<MagTag>>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<ResizeMode>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Forward-pass FLOPs at a magnification and the reduction versus 1.0.
    Flops {
        #[arg(long, default_value = "0.125")]
        mag: MagTag,
        #[arg(long)]
        base_size: Option<usize>,
    },
    /// Collect evaluation results into report.json, CSV and SVG.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainTeacher { .. } => "train-teacher",
            Command::Distill { .. } => "distill",
            Command::Finetune { .. } => "finetune",
            Command::Eval => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Flops { .. } => "flops",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Model family and magnification of a trained checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub family: String,
    pub magnification: MagTag,
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(global: &GlobalArgs, command: &Command) -> CliResult<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Usage(format!("cannot read config: {e}")))?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(d) = &global.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &global.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(j) = global.jobs {
        cfg.jobs = j;
    }
    if let Some(p) = global.precision {
        cfg.precision = p.into();
    }
    match command {
        Command::GenData {
            patients,
            base_size,
            classes,
        } => {
            if let Some(n) = patients {
                cfg.dataset.synth.num_patients = *n;
            }
            if let Some(s) = base_size {
                cfg.dataset.synth.base_size = *s;
            }
            if let Some(k) = classes {
                cfg.dataset.synth.classes = *k;
                cfg.model.num_classes = *k;
            }
        }
        Command::TrainTeacher { mag, epochs } => {
            if mag.is_some() {
                cfg.train_mag = *mag;
            }
            if let Some(e) = epochs {
                cfg.teacher.epochs = *e;
            }
        }
        Command::Distill {
            pool,
            mode,
            mag,
            temperature,
            epochs,
            warm_start,
        } => {
            if let Some(p) = pool {
                cfg.distill.pool = *p;
            }
            if let Some(m) = mode {
                cfg.distill.resize_mode = *m;
            }
            if let Some(m) = mag {
                cfg.distill.student_mag = *m;
            }
            if let Some(t) = temperature {
                cfg.distill.temperature = *t;
            }
            if let Some(e) = epochs {
                cfg.distill.epochs = *e;
            }
            if *warm_start {
                cfg.distill.warm_start = true;
            }
        }
        Command::Finetune { pool, mag, epochs } => {
            if let Some(p) = pool {
                cfg.distill.pool = *p;
            }
            if let Some(m) = mag {
                cfg.distill.student_mag = *m;
            }
            if let Some(e) = epochs {
                cfg.finetune.epochs = *e;
            }
        }
        Command::Ablate { mags, modes, seeds } => {
            if let Some(m) = mags {
                cfg.ablation.magnifications = m.clone();
            }
            if let Some(m) = modes {
                cfg.ablation.modes = m.clone();
            }
            if let Some(s) = seeds {
                cfg.ablation.seeds = s.clone();
            }
        }
        Command::Flops { base_size, .. } => {
            if let Some(s) = base_size {
                cfg.dataset.synth.base_size = *s;
            }
        }
        Command::Eval | Command::Report => {}
    }
    cfg.resolve().map_err(|e| CliError::Usage(e.to_string()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor usage, run `resdistill --help`.");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    let ctx = Ctx {
        cfg,
        quiet: cli.global.quiet,
    };
    match &cli.command {
        Command::GenData { .. } => ctx.gen_data(),
        Command::TrainTeacher { .. } => by_precision!(ctx, train),
        Command::Distill { .. } => by_precision!(ctx, distill),
        Command::Finetune { .. } => by_precision!(ctx, finetune),
        Command::Eval => ctx.eval(),
        Command::Ablate { .. } => by_precision!(ctx, ablate),
        Command::Flops { mag, .. } => ctx.flops(*mag),
        Command::Report => ctx.report(),
    }
}

macro_rules! by_precision {
    ($ctx:expr, $method:ident) => {
        match $ctx.cfg.precision {
            DType::F32 => $ctx.$method::<f32>(),
            DType::F64 => $ctx.$method::<f64>(),
        }
    };
}
use by_precision;

struct Ctx {
    cfg: RunConfig,
    quiet: bool,
}

pub fn teacher_dir(out: &Path) -> PathBuf {
    out.join("teacher")
}

pub fn baseline_dir(out: &Path, mag: MagTag) -> PathBuf {
    out.join(format!("baseline_{mag}"))
}

pub fn kd_dir(out: &Path, pool: Split, mag: MagTag) -> PathBuf {
    out.join(format!("kd_{pool}_{mag}"))
}

pub fn finetune_dir(out: &Path, pool: Split, mag: MagTag) -> PathBuf {
    out.join(format!("kd_{pool}_{mag}_ft"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    std::fs::write(path, text).map_err(|e| CliError::Runtime(io_err(path, e)))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn load_model<S: Scalar>(path: &Path) -> CliResult<Model<S>> {
    if !path.is_file() {
        return Err(Error::MissingArtifacts(vec![path.to_path_buf()]).into());
    }
    Ok(Model::load(path)?)
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    fn dataset(&self) -> CliResult<Dataset> {
        Ok(Dataset::load(&self.cfg.data_dir)?)
    }

    /// Persists a trained model with its trace, config and artifact record.
    fn save_phase<S: Scalar>(
        &self,
        dir: &Path,
        model: &Model<S>,
        result: &PhaseResult,
        artifact: Artifact,
    ) -> CliResult<()> {
        result.write(dir, model)?;
        write_json(&dir.join(ARTIFACT_FILE), &artifact)?;
        self.cfg.save(dir)?;
        self.cfg.save(self.out())?;
        let best = result.best();
        self.note(format!(
            "{}: best epoch {} of {}, selection accuracy {:.2}% -> {}",
            result.phase,
            result.best_epoch,
            result.trace.len(),
            best.dev_accuracy,
            dir.display()
        ));
        Ok(())
    }

    fn gen_data(&self) -> CliResult<()> {
        let root = &self.cfg.data_dir;
        let ds = Dataset::create(root, &self.cfg.dataset)?;
        self.cfg.save(root)?;
        let m = &ds.manifest;
        self.note(format!(
            "{} images from {} patients -> {} (train {}, validation {}, test {}, aux_v1 {}, aux_v2 {}, development {})",
            ds.records.len(),
            self.cfg.dataset.synth.num_patients,
            root.display(),
            m.train.len(),
            m.validation.len(),
            m.test.len(),
            m.aux_v1.len(),
            m.aux_v2.len(),
            m.development.len()
        ));
        Ok(())
    }

    fn train<S: Scalar>(&self) -> CliResult<()> {
        let ds = self.dataset()?;
        let teacher_mag = self.cfg.distill.teacher_mag;
        let mag = self.cfg.train_mag.unwrap_or(teacher_mag);
        let (phase, dir) = if mag == teacher_mag {
            ("teacher", teacher_dir(self.out()))
        } else {
            ("baseline", baseline_dir(self.out(), mag))
        };
        self.note(format!("training {phase} at magnification {mag}"));
        let (model, result) = train_supervised::<S>(
            phase,
            &self.cfg.model,
            &ds.labeled(Split::Train, mag)?,
            &ds.labeled(Split::Validation, mag)?,
            &self.cfg.teacher,
            &self.cfg.augment,
        )?;
        let artifact = Artifact {
            family: "baseline".into(),
            magnification: mag,
        };
        self.save_phase(&dir, &model, &result, artifact)
    }

    fn distill<S: Scalar>(&self) -> CliResult<()> {
        let d = &self.cfg.distill;
        let teacher = load_model::<S>(&teacher_dir(self.out()).join("model.ckpt"))?;
        let ds = self.dataset()?;
        let pool = ds.unlabeled(d.pool, d.teacher_mag, d.student_mag)?;
        let dev = ds.labeled(Split::Development, d.student_mag)?;
        self.note(format!(
            "distilling {} -> {} on {} ({} images, mode {})",
            d.teacher_mag,
            d.student_mag,
            d.pool,
            pool.len(),
            d.resize_mode.label()
        ));
        let (student, result) = distill_student(&teacher, &pool, &dev, d, &self.cfg.augment)?;
        let artifact = Artifact {
            family: format!("kd_{}", d.pool),
            magnification: d.student_mag,
        };
        self.save_phase(&kd_dir(self.out(), d.pool, d.student_mag), &student, &result, artifact)
    }

    fn finetune<S: Scalar>(&self) -> CliResult<()> {
        let d = &self.cfg.distill;
        if d.skip_finetune {
            self.note("fine-tuning skipped (distill.skip_finetune)");
            return Ok(());
        }
        let student = load_model::<S>(&kd_dir(self.out(), d.pool, d.student_mag).join("model.ckpt"))?;
        let ds = self.dataset()?;
        let (model, result) = fine_tune(
            student,
            &ds.labeled(Split::Train, d.student_mag)?,
            &ds.labeled(Split::Validation, d.student_mag)?,
            &self.cfg.finetune,
            &self.cfg.augment,
        )?;
        let artifact = Artifact {
            family: format!("kd_{}_ft", d.pool),
            magnification: d.student_mag,
        };
        self.save_phase(
            &finetune_dir(self.out(), d.pool, d.student_mag),
            &model,
            &result,
            artifact,
        )
    }

    /// Model directories of the run that carry an artifact record, sorted.
    fn artifacts(&self) -> CliResult<Vec<(PathBuf, Artifact)>> {
        let out = self.out();
        let entries = std::fs::read_dir(out).map_err(|e| io_err(out, e))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(ARTIFACT_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.into_iter()
            .map(|d| {
                let path = d.join(ARTIFACT_FILE);
                let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                let a: Artifact = serde_json::from_str(&text).map_err(Error::from)?;
                Ok((d, a))
            })
            .collect()
    }

    fn eval(&self) -> CliResult<()> {
        let ds = self.dataset()?;
        let found = self.artifacts()?;
        if found.is_empty() {
            return Err(Error::MissingArtifacts(vec![teacher_dir(self.out()).join("model.ckpt")]).into());
        }
        for (dir, artifact) in found {
            let ckpt = dir.join("model.ckpt");
            let rel = ckpt.strip_prefix(self.out()).unwrap_or(&ckpt).to_path_buf();
            let report = match read_checkpoint_dtype(&ckpt)? {
                DType::F32 => self.eval_one::<f32>(&ds, &ckpt, rel, &artifact)?,
                DType::F64 => self.eval_one::<f64>(&ds, &ckpt, rel, &artifact)?,
            };
            let path = report.save(self.out())?;
            self.note(format!(
                "{} @ {}: accuracy {:.2}% [{:.2}, {:.2}], macro F1 {:.2}% -> {}",
                report.model,
                report.magnification,
                report.accuracy.value,
                report.accuracy.ci_lower,
                report.accuracy.ci_upper,
                report.macro_f1.value,
                path.display()
            ));
        }
        self.cfg.save(&self.out().join(EVAL_DIR))?;
        self.cfg.save(self.out())?;
        Ok(())
    }

    fn eval_one<S: Scalar>(&self, ds: &Dataset, ckpt: &Path, rel: PathBuf, a: &Artifact) -> CliResult<MetricsReport> {
        let model = load_model::<S>(ckpt)?;
        let view = ds.labeled(Split::Test, a.magnification)?;
        let preds = predict_view(&model, &view)?;
        let side = level_side(self.cfg.dataset.synth.base_size, a.magnification);
        Ok(MetricsReport::build(
            &a.family,
            a.magnification,
            side,
            rel,
            model.config(),
            &preds,
            &view.labels,
            self.cfg.eval.bootstrap_iterations,
            self.cfg.eval.alpha,
            seed::derive(self.cfg.seed, &format!("eval/{}/{}", a.family, a.magnification)),
        )?)
    }

    fn ablate<S: Scalar>(&self) -> CliResult<()> {
        let teacher = load_model::<S>(&teacher_dir(self.out()).join("model.ckpt"))?;
        let ds = self.dataset()?;
        let ab = &self.cfg.ablation;
        self.note(format!(
            "ablation: {} magnifications x {} modes x {} seeds on {} jobs",
            ab.magnifications.len(),
            ab.modes.len(),
            ab.seeds.len(),
            self.cfg.jobs
        ));
        let rows = run_ablation(
            &ds,
            &teacher,
            &self.cfg.distill,
            &self.cfg.augment,
            &ab.magnifications,
            &ab.modes,
            &ab.seeds,
            self.cfg.jobs,
        )?;
        let path = self.out().join(ABLATION_FILE);
        let dir = path.parent().expect("ablation file has a directory");
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_json(&path, &rows)?;
        let csv = dir.join("ablation.csv");
        std::fs::write(&csv, AblationRow::csv(&rows)).map_err(|e| io_err(&csv, e))?;
        self.cfg.save(dir)?;
        self.cfg.save(self.out())?;
        for r in &rows {
            self.note(format!(
                "{:>10} @ {:<5} seed {}: {:.2}%",
                r.mode.label(),
                r.magnification.to_string(),
                r.seed,
                r.dev_accuracy
            ));
        }
        Ok(())
    }

    fn flops(&self, mag: MagTag) -> CliResult<()> {
        let base = self.cfg.dataset.synth.base_size;
        let side = level_side(base, mag);
        let full = count_flops(&self.cfg.model, base, base)?;
        let at = count_flops(&self.cfg.model, side, side)?;
        println!(
            "magnification 1 ({base}x{base}): {full} FLOPs ({:.4} GFLOPs)",
            full as f64 / 1e9
        );
        println!(
            "magnification {mag} ({side}x{side}): {at} FLOPs ({:.4} GFLOPs)",
            at as f64 / 1e9
        );
        println!("reduction factor: {:.2}", full as f64 / at as f64);
        Ok(())
    }

    fn report(&self) -> CliResult<()> {
        for p in emit_report(self.out())? {
            self.note(format!("wrote {}", p.display()));
        }
        self.cfg.save(&self.out().join(REPORT_DIR))?;
        Ok(())
    }
}

/// Test-set accuracy of a stored checkpoint, for scripts and tests.
pub fn checkpoint_accuracy<S: Scalar>(ckpt: &Path, ds: &Dataset, split: Split, mag: MagTag) -> resdistill::Result<f64> {
    let model = Model::<S>::load(ckpt)?;
    let view = ds.labeled(split, mag)?;
    Ok(accuracy(&predict_view(&model, &view)?, &view.labels))
}
