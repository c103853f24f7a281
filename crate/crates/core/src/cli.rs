//! Command-line front end: `train`, `eval`, `sweep` and `lda`.

use std::f64::consts::PI;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    decoherence_sweep, pipeline_lda, shape_for_tau, train_for_tau, write_lda_points, write_sweep_csv, SweepGrid,
    SweepTable,
};
use crate::data::{cap_per_class, filter_classes, load_split, Sample, Split};
use crate::error::Error;
use crate::hilbert::{CouplingModel, DeviceModel};
use crate::model::{init_model, EndToEndModel, ModelConfig};
use crate::par;
use crate::pulses::PulseShape;
use crate::readout::{load_confusion_csv, validate_confusion};
use crate::training::{adam_train_with, evaluate, smooth, EvalOptions, TrainerConfig};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

const MHZ: f64 = 2.0 * PI * 1e6;
const US: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "pulse-e2e", version, about = "Pulse-level end-to-end quantum classifier for MNIST digits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint.json, metrics.csv, timing.csv and summary.json.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the test split; writes eval.json and confusion_counts.csv.
    Eval(CommonArgs),
    /// Retrain per pulse length and tabulate accuracy under T1 and T_phi.
    Sweep(CommonArgs),
    /// Project the four pipeline stages of a two-class checkpoint with LDA.
    Lda(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated digits, e.g. `0,2` or `0,2,7,9`.
    #[arg(long, value_delimiter = ',')]
    pub task: Option<Vec<u8>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Finite-shot estimation (training gradients for `train`, readout otherwise).
    #[arg(long)]
    pub shots: Option<usize>,
    /// Header-free row-major CSV confusion matrix applied at readout.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Apply the inverse confusion matrix after readout.
    #[arg(long)]
    pub bayesian: bool,
    /// Propagate with the Lindblad equation using the device coherence times.
    #[arg(long)]
    pub open_system: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model checkpoint (required by eval and lda).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cap on test samples per class.
    #[arg(long)]
    pub per_class: Option<usize>,
}

/// Device overrides in lab units; anything omitted comes from the calibrated defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub levels: Option<usize>,
    pub coupling_model: Option<CouplingModel>,
    /// `E_C / 2 pi` per qubit, MHz.
    pub anharmonicity_mhz: Option<Vec<f64>>,
    /// `J / 2 pi`, MHz, full symmetric matrix.
    pub coupling_mhz: Option<Vec<Vec<f64>>>,
    /// Microseconds; `inf` disables the channel.
    pub t1_us: Option<Vec<f64>>,
    pub t_phi_us: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoding_layers: usize,
    pub inference_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoding_layers: 2,
            inference_layers: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub sigma_ns: f64,
    pub dt_ns: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        let s = PulseShape::default();
        Self {
            sigma_ns: s.sigma * 1e9,
            dt_ns: s.dt * 1e9,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub open_system: bool,
    pub shots: Option<usize>,
    pub confusion: Option<PathBuf>,
    pub bayesian: bool,
    pub per_class: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub taus_us: Vec<f64>,
    pub t1_us: Vec<f64>,
    pub t_phi_us: Vec<f64>,
    pub per_class: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            taus_us: vec![0.08, 0.16, 0.32, 0.64, 1.28],
            t1_us: vec![20.0, 10.0, 5.0, 2.5, 1.25, 0.625, 0.3125, 0.1563, 0.0781, 0.0391, 0.0195],
            t_phi_us: vec![
                f64::INFINITY,
                20.0,
                10.0,
                5.0,
                2.5,
                1.25,
                0.625,
                0.3125,
                0.1563,
                0.0781,
                0.0391,
                0.0195,
                0.0020,
            ],
            per_class: 200,
        }
    }
}

/// Everything a command needs; every default reproduces the two-digit setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Vec<u8>,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub model: ModelSection,
    pub pulse: PulseSection,
    pub device: DeviceSection,
    pub trainer: TrainerConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: vec![0, 2],
            data_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("out"),
            threads: None,
            model: ModelSection::default(),
            pulse: PulseSection::default(),
            device: DeviceSection::default(),
            trainer: TrainerConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Flags win over the file.
    pub fn apply(&mut self, args: &CommonArgs, train: bool) {
        if let Some(t) = &args.task {
            self.task = t.clone();
        }
        if let Some(s) = args.seed {
            self.trainer.seed = s;
            self.eval.seed = s;
        }
        if let Some(n) = args.iterations {
            self.trainer.iterations = n;
        }
        if let Some(s) = args.shots {
            if train {
                self.trainer.shots = Some(s);
            } else {
                self.eval.shots = Some(s);
            }
        }
        if let Some(c) = &args.confusion {
            self.eval.confusion = Some(c.clone());
        }
        self.eval.bayesian |= args.bayesian;
        self.eval.open_system |= args.open_system;
        if let Some(t) = args.threads {
            self.threads = Some(t);
        }
        if let Some(o) = &args.out {
            self.out = o.clone();
        }
        if let Some(d) = &args.data {
            self.data_dir = d.clone();
        }
        if let Some(p) = args.per_class {
            self.eval.per_class = Some(p);
            self.sweep.per_class = p;
        }
    }

    pub fn shape(&self) -> PulseShape {
        PulseShape {
            sigma: self.pulse.sigma_ns * 1e-9,
            dt: self.pulse.dt_ns * 1e-9,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig, Error> {
        let mut cfg = ModelConfig::for_task(self.task.clone());
        cfg.encoding_layers = self.model.encoding_layers;
        cfg.inference_layers = self.model.inference_layers;
        cfg.shape = self.shape();
        cfg.device = self.device(cfg.device)?;
        Ok(cfg)
    }

    fn device(&self, base: DeviceModel) -> Result<DeviceModel, Error> {
        let d = &self.device;
        let m = base.num_qubits;
        let mut dev = match d.levels {
            Some(l) => base.with_levels(l),
            None => base,
        };
        let check_len = |name: &str, len: usize| {
            if len == m {
                Ok(())
            } else {
                Err(Error::Config(format!("device.{name} has {len} entries for {m} qubits")))
            }
        };
        if let Some(c) = d.coupling_model {
            dev.coupling_model = c;
        }
        if let Some(a) = &d.anharmonicity_mhz {
            check_len("anharmonicity_mhz", a.len())?;
            dev.anharmonicity = a.iter().map(|x| x * MHZ).collect();
        }
        if let Some(j) = &d.coupling_mhz {
            check_len("coupling_mhz", j.len())?;
            dev.coupling = j.iter().map(|r| r.iter().map(|x| x * MHZ).collect()).collect();
        }
        if let Some(t) = &d.t1_us {
            check_len("t1_us", t.len())?;
            dev.t1 = t.iter().map(|x| x * US).collect();
        }
        if let Some(t) = &d.t_phi_us {
            check_len("t_phi_us", t.len())?;
            dev.t_phi = t.iter().map(|x| x * US).collect();
        }
        dev.validate()?;
        Ok(dev)
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<(), Error> {
        if self.task.len() < 2 {
            return Err(Error::Config("task needs at least two digits".into()));
        }
        if self.task.iter().any(|&d| d > 9) {
            return Err(Error::Config(format!("task digits must be 0-9, got {:?}", self.task)));
        }
        let mut sorted = self.task.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.task.len() {
            return Err(Error::Config(format!("task has repeated digits: {:?}", self.task)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.trainer.validate()?;
        self.shape().validate()?;
        self.model_config()?;
        if let Some(p) = &self.eval.confusion {
            if !p.is_file() {
                return Err(Error::Config(format!("confusion matrix {} does not exist", p.display())));
            }
        }
        if self.eval.bayesian && self.eval.confusion.is_none() {
            return Err(Error::Config("--bayesian needs --confusion".into()));
        }
        if self.eval.shots == Some(0) {
            return Err(Error::Config("shots must be positive".into()));
        }
        let s = &self.sweep;
        if s.taus_us.iter().chain(&s.t1_us).chain(&s.t_phi_us).any(|&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Config("sweep times must be positive".into()));
        }
        Ok(())
    }
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_DATA,
            error: error.into(),
        }
    }
}

/// Maps library errors raised outside data loading.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::NonFinite(_) | Error::NonHermitian(_) | Error::SingularConfusion | Error::DegenerateProjector(_) => {
            EXIT_NUMERICAL
        }
        Error::Idx { .. } | Error::CountMismatch { .. } | Error::EmptyClasses(_) => EXIT_DATA,
        _ => EXIT_CONFIG,
    };
    Failure {
        code,
        error: e.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        classify(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn load_samples(cfg: &RunConfig, split: Split) -> Outcome<Vec<Sample>> {
    let ds = load_split(&cfg.data_dir, split)
        .with_context(|| format!("loading MNIST {split:?} split from {}", cfg.data_dir.display()))
        .map_err(Failure::data)?;
    filter_classes(&ds, &cfg.task).map_err(Failure::data)
}

fn prepare_out(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(Failure::config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

fn load_checkpoint(args: &CommonArgs, cfg: &RunConfig) -> Outcome<EndToEndModel> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Failure::config(anyhow::anyhow!("--checkpoint is required")))?;
    let model = EndToEndModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()));
    let model = model.map_err(Failure::config)?;
    if args.task.is_some() && model.class_labels != cfg.task {
        return Err(Failure::config(anyhow::anyhow!(
            "checkpoint was trained on {:?} but --task asks for {:?}",
            model.class_labels,
            cfg.task
        )));
    }
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: Vec<u8>,
    pub seed: u64,
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub final_smoothed_loss: Option<f64>,
    /// Mean of the smoothed loss over the last 50 iterations.
    pub tail_smoothed_loss: Option<f64>,
    pub wall_time_s: f64,
}

/// `iteration,loss,smoothed_loss` with the 4-point neighbour average.
pub fn write_metrics(path: &Path, losses: &[f64]) -> Result<(), Error> {
    let smoothed = smooth(losses, 4);
    let mut text = String::from("iteration,loss,smoothed_loss\n");
    for (k, (l, s)) in losses.iter().zip(&smoothed).enumerate() {
        text.push_str(&format!("{},{l},{s}\n", k + 1));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads `metrics.csv` back as `(loss, smoothed_loss)` pairs.
pub fn read_metrics(path: &Path) -> Result<Vec<(f64, f64)>, Error> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    r.deserialize::<(usize, f64, f64)>()
        .map(|row| {
            row.map(|(_, l, s)| (l, s)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

fn cmd_train(cfg: &RunConfig) -> Outcome<()> {
    let train = load_samples(cfg, Split::Train)?;
    prepare_out(&cfg.out)?;
    let model = init_model(&cfg.model_config()?)?;
    let outcome = adam_train_with(&model, &train, &cfg.trainer, |r| {
        if r.iteration % 50 == 0 {
            eprintln!("iter {:>5}  loss {:.4}  {:.1}s", r.iteration, r.loss, r.wall_time);
        }
    })?;
    let out = &cfg.out;
    outcome.model.save(out.join("checkpoint.json"))?;
    let losses = outcome.losses();
    write_metrics(&out.join("metrics.csv"), &losses)?;
    let mut timing = String::from("iteration,wall_time_s\n");
    for r in &outcome.history {
        timing.push_str(&format!("{},{}\n", r.iteration, r.wall_time));
    }
    let tpath = out.join("timing.csv");
    std::fs::write(&tpath, timing).map_err(|e| Error::io(&tpath, e))?;
    let smoothed = smooth(&losses, 4);
    let tail = &smoothed[smoothed.len().saturating_sub(50)..];
    let summary = TrainSummary {
        task: cfg.task.clone(),
        seed: cfg.trainer.seed,
        iterations: losses.len(),
        final_loss: losses.last().copied(),
        final_smoothed_loss: smoothed.last().copied(),
        tail_smoothed_loss: (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
        wall_time_s: outcome.history.last().map_or(0.0, |r| r.wall_time),
    };
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!(
        "trained {} iterations; smoothed loss (last 50) {:.4}",
        summary.iterations,
        summary.tail_smoothed_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Vec<u8>,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub loss: f64,
    pub open_system: bool,
    pub shots: Option<usize>,
    pub confusion: Option<PathBuf>,
    pub bayesian: bool,
    /// `counts[true][predicted]` by position in `task`.
    pub counts: Vec<Vec<usize>>,
}

fn eval_options(cfg: &RunConfig) -> Outcome<EvalOptions> {
    let confusion = match &cfg.eval.confusion {
        Some(p) => {
            let m = load_confusion_csv(p)?;
            validate_confusion(&m)?;
            Some(m)
        }
        None => None,
    };
    Ok(EvalOptions {
        open_system: cfg.eval.open_system,
        shots: cfg.eval.shots,
        confusion,
        bayesian_correction: cfg.eval.bayesian,
        seed: cfg.eval.seed,
    })
}

fn test_subset(cfg: &RunConfig, classes: usize, cap: Option<usize>) -> Outcome<Vec<Sample>> {
    let test = load_samples(cfg, Split::Test)?;
    Ok(match cap {
        Some(c) => cap_per_class(&test, classes, c),
        None => test,
    })
}

fn cmd_eval(args: &CommonArgs, cfg: &mut RunConfig) -> Outcome<()> {
    let model = load_checkpoint(args, cfg)?;
    cfg.task = model.class_labels.clone();
    let test = test_subset(cfg, model.classes(), cfg.eval.per_class)?;
    prepare_out(&cfg.out)?;
    let opts = eval_options(cfg)?;
    let ev = evaluate(&model, &test, &opts)?;
    let report = EvalReport {
        task: model.class_labels.clone(),
        samples: ev.total,
        accuracy: ev.accuracy,
        mean_confidence: ev.mean_confidence,
        loss: 1.0 - ev.mean_confidence,
        open_system: opts.open_system,
        shots: opts.shots,
        confusion: cfg.eval.confusion.clone(),
        bayesian: opts.bayesian_correction,
        counts: ev.counts.clone(),
    };
    write_json(&cfg.out.join("eval.json"), &report)?;
    let mut text = String::from("true\\predicted");
    for d in &model.class_labels {
        text.push_str(&format!(",{d}"));
    }
    text.push('\n');
    for (d, row) in model.class_labels.iter().zip(&ev.counts) {
        text.push_str(&d.to_string());
        for c in row {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    let p = cfg.out.join("confusion_counts.csv");
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    eprintln!("accuracy {:.4} on {} samples", ev.accuracy, ev.total);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub t1_table: SweepGrid,
    pub t_phi_table: SweepGrid,
}

fn cmd_sweep(args: &CommonArgs, cfg: &RunConfig) -> Outcome<()> {
    let model_cfg = cfg.model_config()?;
    let layers = model_cfg.encoding_layers + model_cfg.inference_layers;
    let taus: Vec<f64> = cfg.sweep.taus_us.iter().map(|t| t * US).collect();
    let reuse = match &args.checkpoint {
        Some(_) => Some(load_checkpoint(args, cfg)?),
        None => None,
    };
    let train = load_samples(cfg, Split::Train)?;
    let test = test_subset(cfg, cfg.task.len(), Some(cfg.sweep.per_class))?;
    prepare_out(&cfg.out)?;
    let mut models = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let shape = shape_for_tau(tau, layers, model_cfg.shape.dt)?;
        match &reuse {
            Some(m) if (m.shape.sigma - shape.sigma).abs() <= 1e-6 * shape.sigma => models.push(m.clone()),
            _ => {
                eprintln!("training at tau = {:.3} us", tau / US);
                models.push(train_for_tau(&model_cfg, tau, &train, &cfg.trainer)?);
            }
        }
    }
    let inf = f64::INFINITY;
    let t1: Vec<f64> = cfg.sweep.t1_us.iter().map(|t| t * US).collect();
    let tphi: Vec<f64> = cfg.sweep.t_phi_us.iter().map(|t| t * US).collect();
    let t1_table = decoherence_sweep(&models, &t1, &vec![inf; t1.len()], &taus, &test)?;
    let t_phi_table = decoherence_sweep(&models, &vec![inf; tphi.len()], &tphi, &taus, &test)?;
    let out = &cfg.out;
    write_sweep_csv(out.join("sweep_t1.csv"), &t1_table, SweepTable::Accuracy)?;
    write_sweep_csv(out.join("sweep_t_phi.csv"), &t_phi_table, SweepTable::Accuracy)?;
    write_sweep_csv(out.join("sweep_t1_confidence.csv"), &t1_table, SweepTable::Confidence)?;
    write_sweep_csv(out.join("sweep_t_phi_confidence.csv"), &t_phi_table, SweepTable::Confidence)?;
    write_json(&out.join("sweep.json"), &SweepReport { t1_table, t_phi_table })?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LdaStageStats {
    pub stage: usize,
    pub name: String,
    pub dim: usize,
    pub pooled_std: f64,
    pub stds: [f64; 2],
    pub centers: [f64; 2],
    pub pseudo_inverse: bool,
    pub points_file: String,
}

fn cmd_lda(args: &CommonArgs, cfg: &mut RunConfig) -> Outcome<()> {
    let model = load_checkpoint(args, cfg)?;
    if model.classes() != 2 {
        return Err(classify(Error::UnsupportedTask(format!(
            "lda needs a two-class checkpoint, got digits {:?}",
            model.class_labels
        ))));
    }
    cfg.task = model.class_labels.clone();
    let test = test_subset(cfg, 2, cfg.eval.per_class)?;
    prepare_out(&cfg.out)?;
    let stages = pipeline_lda(&model, &test)?;
    let mut stats = Vec::new();
    for s in &stages {
        let file = format!("lda_stage{}_{}.csv", s.stage.number(), s.stage.name());
        write_lda_points(cfg.out.join(&file), &s.result)?;
        stats.push(LdaStageStats {
            stage: s.stage.number(),
            name: s.stage.name().into(),
            dim: s.dim,
            pooled_std: s.result.pooled_std,
            stds: s.result.stds,
            centers: s.result.means,
            pseudo_inverse: s.result.pseudo_inverse,
            points_file: file,
        });
        eprintln!("stage {} ({}): std {:.4}", s.stage.number(), s.stage.name(), s.result.pooled_std);
    }
    write_json(&cfg.out.join("lda_stats.json"), &stats)
}

fn execute(command: Command) -> Outcome<()> {
    let (args, train) = match &command {
        Command::Train(a) => (a, true),
        Command::Eval(a) | Command::Sweep(a) | Command::Lda(a) => (a, false),
    };
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    cfg.apply(args, train);
    cfg.validate().map_err(Failure::config)?;
    if let Some(t) = cfg.threads {
        // a second call in the same process is harmless
        let _ = par::set_threads(t);
    }
    match command {
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(a) => cmd_eval(&a, &mut cfg),
        Command::Sweep(a) => cmd_sweep(&a, &cfg),
        Command::Lda(a) => cmd_lda(&a, &mut cfg),
    }
}

/// Parses `argv` and runs the command, reporting failures on stderr.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
