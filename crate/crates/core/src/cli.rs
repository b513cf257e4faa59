//! Command-line front end: `synth`, `pretrain`, `eval`, `sweep`,
//! `augment-preview` and `report`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{Augmentation, ResamplingConfig, DEFAULT_JITTER_SIGMA, DEFAULT_MASK_RATIO, DEFAULT_RESIZE_RANGE};
use crate::data::{load_dataset, save_dataset, Dataset, RngStream, SplitTag, purpose};
use crate::error::{bail, Error, Result};
use crate::eval::{self, extract_features, finetune, label_efficiency_sweep, raw_features, FinetuneConfig, LinearProbe, ProbeConfig, SweepConfig, SweepMethod};
use crate::nn::{load_checkpoint, Checkpoint, EncoderConfig, NetworkConfig};
use crate::ssl::SslConfig;
use crate::synth::{generate, SynthConfig};
use crate::train::{checkpoint_hash, pretrain, PretrainSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory holding `unlabeled.tscl`, `train.tscl`, `val.tscl`, `test.tscl`.
    pub dir: PathBuf,
    pub unlabeled: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("data"), unlabeled: None, train: None, val: None, test: None }
    }
}

impl DataSection {
    pub fn path(&self, split: SplitTag) -> PathBuf {
        let explicit = match split {
            SplitTag::Unlabeled => &self.unlabeled,
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        };
        explicit.clone().unwrap_or_else(|| self.dir.join(split_file(split)))
    }

    pub fn load(&self, split: SplitTag) -> Result<Dataset> {
        let ds = load_dataset(self.path(split))?;
        if split == SplitTag::Unlabeled {
            return Ok(ds);
        }
        ds.with_split(split)
    }
}

pub fn split_file(split: SplitTag) -> String {
    format!("{}.tscl", split.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub block_filters: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    /// Defaults to the embedding width.
    pub projection_hidden: Option<usize>,
    pub projection_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let std = EncoderConfig::standard(1);
        Self { block_filters: std.block_filters, kernel_sizes: std.kernel_sizes, projection_hidden: None, projection_dim: 128 }
    }
}

impl ModelSection {
    pub fn network(&self, in_channels: usize) -> NetworkConfig {
        let encoder = EncoderConfig { in_channels, block_filters: self.block_filters.clone(), kernel_sizes: self.kernel_sizes.clone() };
        let mut net = NetworkConfig::with_encoder(encoder);
        if let Some(h) = self.projection_hidden {
            net.projection_hidden = h;
        }
        net.projection_dim = self.projection_dim;
        net
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub strategy: String,
    pub jitter_sigma: f64,
    pub resize_scale: (f64, f64),
    pub mask_ratio: f64,
    /// Resampling sizes; derived from the series length when absent.
    pub t_up: Option<usize>,
    pub t_int: Option<[usize; 2]>,
    /// Draw resampling indices per series instead of per sample.
    pub per_series: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            strategy: "resampling".into(),
            jitter_sigma: DEFAULT_JITTER_SIGMA,
            resize_scale: DEFAULT_RESIZE_RANGE,
            mask_ratio: DEFAULT_MASK_RATIO,
            t_up: None,
            t_int: None,
            per_series: false,
        }
    }
}

impl AugmentSection {
    pub fn build(&self, strategy: &str) -> Result<Augmentation> {
        Ok(match Augmentation::from_name(strategy)? {
            Augmentation::Jitter { .. } => Augmentation::Jitter { sigma: self.jitter_sigma },
            Augmentation::Resize { .. } => Augmentation::Resize { scale_range: self.resize_scale },
            Augmentation::Mask { .. } => Augmentation::Mask { ratio: self.mask_ratio },
            Augmentation::Resampling { .. } => {
                let config = match (self.t_up, self.t_int) {
                    (Some(t_up), Some(t_int)) => Some(ResamplingConfig { t_up, t_int }),
                    (None, None) => None,
                    _ => bail!(Config, "augment.t_up and augment.t_int must be given together"),
                };
                if let Some(c) = &config {
                    c.validate()?;
                }
                Augmentation::Resampling { config, per_series: self.per_series }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
    pub sweep: SweepConfig,
    /// Pretrained checkpoint per augmentation strategy, for `sweep`.
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { probe: ProbeConfig::default(), finetune: FinetuneConfig::default(), sweep: SweepConfig::default(), checkpoints: BTreeMap::new() }
    }
}

/// Everything a command needs, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub augment: AugmentSection,
    pub ssl: SslConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            synth: SynthConfig::default(),
            model: ModelSection::default(),
            augment: AugmentSection::default(),
            ssl: SslConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self.eval.finetune.seed = seed;
        self.eval.sweep.seed = seed;
    }

    /// Fully resolved config, as stored in run directories.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn pretrain_spec(&self, in_channels: usize) -> Result<PretrainSpec> {
        let spec = PretrainSpec {
            network: self.model.network(in_channels),
            ssl: self.ssl.clone(),
            augmentation: self.augment.build(&self.augment.strategy)?,
            train: self.train.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Parser)]
#[command(name = "tscl", version, about = "Contrastive pretraining and evaluation for multichannel time series")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory (command-specific).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Allow overwriting existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Linear,
    Finetune,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/val/test/unlabeled splits.
    Synth,
    /// Self-supervised pretraining into a run directory.
    Pretrain,
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "linear")]
        mode: EvalMode,
    },
    /// Label-efficiency sweep over the configured checkpoints.
    Sweep,
    /// Write one sample and its two augmented views as CSV.
    AugmentPreview {
        /// Dataset to read; defaults to the configured train split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Strategy; defaults to the configured one.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Summarize a pretraining run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(Argument, "{} already exists (use --force to overwrite)", path.display());
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn out_or(global: &GlobalArgs, default: &str) -> PathBuf {
    global.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn cmd_synth(cfg: &RunConfig, global: &GlobalArgs) -> Result<String> {
    let dir = global.out.clone().unwrap_or_else(|| cfg.data.dir.clone());
    let splits = [SplitTag::Unlabeled, SplitTag::Train, SplitTag::Val, SplitTag::Test];
    let paths: Vec<PathBuf> = splits.iter().map(|&s| dir.join(split_file(s))).collect();
    for p in &paths {
        guard(p, global.force)?;
    }
    let data = generate(&cfg.synth)?;
    let mut lines = Vec::new();
    for (ds, path) in [&data.unlabeled, &data.train, &data.val, &data.test].into_iter().zip(&paths) {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_dataset(ds, path)?;
        lines.push(format!("{}: {}", path.display(), ds.shape()));
    }
    Ok(lines.join("\n"))
}

fn cmd_pretrain(cfg: &RunConfig, global: &GlobalArgs) -> Result<String> {
    let run = out_or(global, "run");
    guard(&run.join("best.ckpt"), global.force)?;
    let unlabeled = cfg.data.load(SplitTag::Unlabeled)?;
    let val_path = cfg.data.path(SplitTag::Val);
    let val = if val_path.exists() { Some(cfg.data.load(SplitTag::Val)?) } else { None };
    let spec = cfg.pretrain_spec(unlabeled.shape().channels)?;
    fs::create_dir_all(&run).map_err(|e| Error::io(&run, e))?;
    write(&run.join("config.toml"), cfg.to_toml())?;
    let out = pretrain(&spec, &unlabeled, val.as_ref(), &cfg.eval.probe, Some(&run))?;
    let last = out.history.last().expect("at least one evaluation");
    let summary = format!(
        "steps {} final loss {:.4} best step {} score {} sha256 {}",
        out.losses.len(),
        out.losses.last().copied().unwrap_or(f64::NAN),
        out.best_step,
        last.score.map_or("n/a".into(), |s| format!("{s:.4}")),
        out.best_hash
    );
    if out.collapsed {
        bail!(
            Numerical,
            "representation collapse: mean per-dimension std of H {:.3e}, of Z {:.3e} (threshold {:.0e}); {summary}",
            last.spread.h.mean_std,
            last.spread.z.mean_std,
            crate::ssl::COLLAPSE_STD
        );
    }
    Ok(summary)
}

fn load_ckpt_for(path: &Path, ds: &Dataset) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let want = ckpt.config.encoder.in_channels;
    let shape = ds.shape();
    if want != shape.channels {
        bail!(
            Validation,
            "checkpoint {} expects series with {want} channels but dataset has shape {shape}",
            path.display()
        );
    }
    Ok(ckpt)
}

fn cmd_eval(cfg: &RunConfig, global: &GlobalArgs, checkpoint: &Path, mode: EvalMode) -> Result<String> {
    let train = cfg.data.load(SplitTag::Train)?;
    let test = cfg.data.load(SplitTag::Test)?;
    let ckpt = load_ckpt_for(checkpoint, &test)?;
    let net = ckpt.to_network::<f32>()?;
    let (evaluation, extra) = match mode {
        EvalMode::Linear => {
            let probe = LinearProbe::fit(&extract_features(&train, &net.encoder)?, &train.labels()?, train.n_classes(), &cfg.eval.probe)?;
            let ev = probe.evaluate(&extract_features(&test, &net.encoder)?, &test.labels()?)?;
            (ev, serde_json::json!({ "iterations": probe.model.iterations, "converged": probe.model.converged }))
        }
        EvalMode::Finetune => {
            let val = cfg.data.load(SplitTag::Val)?;
            let (model, log) = finetune(&train, &val, net.encoder.clone(), &cfg.eval.finetune)?;
            (model.evaluate(&test)?, serde_json::to_value(&log).expect("json"))
        }
    };
    let report = serde_json::json!({
        "mode": format!("{mode:?}").to_lowercase(),
        "oa": evaluation.metrics.oa,
        "kappa": evaluation.metrics.kappa,
        "macro_f1": evaluation.metrics.macro_f1,
        "config_hash": cfg.hash(),
        "checkpoint_sha256": checkpoint_hash(&ckpt),
        "confusion": evaluation.confusion,
        "log": extra,
    });
    let text = serde_json::to_string_pretty(&report).expect("json");
    let out = out_or(global, "metrics.json");
    guard(&out, global.force)?;
    write(&out, &text)?;
    Ok(format!("OA {:.4} kappa {:.4} macro-F1 {:.4} -> {}", evaluation.metrics.oa, evaluation.metrics.kappa, evaluation.metrics.macro_f1, out.display()))
}

fn cmd_sweep(cfg: &RunConfig, global: &GlobalArgs) -> Result<String> {
    let pool = cfg.data.load(SplitTag::Train)?;
    let test = cfg.data.load(SplitTag::Test)?;
    let mut strategies = cfg
        .eval
        .checkpoints
        .iter()
        .map(|(name, path)| Ok((Augmentation::from_name(name)?, path)))
        .collect::<Result<Vec<_>>>()?;
    strategies.sort_by_key(|(a, _)| a.table_rank());
    let mut methods = vec![SweepMethod { name: "raw".into(), pool: raw_features(&pool), test: raw_features(&test) }];
    for (aug, path) in strategies {
        if !path.exists() {
            bail!(Argument, "no checkpoint for strategy '{}' at {}", aug.name(), path.display());
        }
        let net = load_ckpt_for(path, &test)?.to_network::<f32>()?;
        methods.push(SweepMethod { name: aug.name().into(), pool: extract_features(&pool, &net.encoder)?, test: extract_features(&test, &net.encoder)? });
    }
    let result = label_efficiency_sweep(&methods, &pool.labels()?, &test.labels()?, pool.n_classes(), &cfg.eval.sweep)?;
    let dir = out_or(global, "sweep");
    let csv = dir.join("sweep.csv");
    guard(&csv, global.force)?;
    write(&csv, eval::sweep_csv(&result))?;
    let summary = serde_json::json!({ "config_hash": cfg.hash(), "summary": result.summary });
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    let mut lines = vec![format!("{:<12} {:>4} {:>8} {:>6}", "method", "k", "OA", "std")];
    for s in &result.summary {
        lines.push(format!("{:<12} {:>4} {:>8.2} {:>6.2}{}", s.method, s.k, s.oa_mean, s.oa_std, if s.flagged { " *" } else { "" }));
    }
    Ok(lines.join("\n"))
}

fn cmd_preview(cfg: &RunConfig, global: &GlobalArgs, dataset: Option<&Path>, index: usize, strategy: Option<&str>) -> Result<String> {
    let ds = match dataset {
        Some(p) => load_dataset(p)?,
        None => cfg.data.load(SplitTag::Train)?,
    };
    let Some(sample) = ds.samples().get(index) else {
        bail!(Argument, "sample index {index} out of range for {} samples", ds.len());
    };
    let aug = cfg.augment.build(strategy.unwrap_or(&cfg.augment.strategy))?;
    let group: Vec<_> = sample.series.iter().collect();
    let (v1, v2) = aug.views(&group, &mut RngStream::derive(cfg.seed, purpose::AUGMENT, &[0, index as u64]))?;
    let c = sample.series[0].channels();
    let mut csv = String::from("series,view,t");
    for ch in 0..c {
        csv.push_str(&format!(",c{ch}"));
    }
    csv.push('\n');
    for (j, orig) in sample.series.iter().enumerate() {
        for (name, s) in [("original", orig), ("view1", &v1[j]), ("view2", &v2[j])] {
            for t in 0..s.len() {
                csv.push_str(&format!("{j},{name},{t}"));
                for ch in 0..c {
                    csv.push_str(&format!(",{}", s.at(t, ch)));
                }
                csv.push('\n');
            }
        }
    }
    let out = out_or(global, "preview.csv");
    guard(&out, global.force)?;
    write(&out, csv)?;
    Ok(format!("{} views of sample {index} -> {}", aug.name(), out.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn cmd_report(run: &Path) -> Result<String> {
    let losses = read(&run.join("loss.csv"))?;
    let rows: Vec<Vec<f64>> = losses
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad loss row '{l}'")))).collect())
        .collect::<Result<_>>()?;
    let best: serde_json::Value = serde_json::from_str(&read(&run.join("best.json"))?).map_err(|e| Error::Format(e.to_string()))?;
    let history = read(&run.join("history.csv"))?;
    let mean = |xs: &[Vec<f64>]| xs.iter().map(|r| r[1]).sum::<f64>() / xs.len().max(1) as f64;
    let tail = &rows[rows.len().saturating_sub(50)..];
    let report = serde_json::json!({
        "steps": rows.len(),
        "first_loss": rows.first().map(|r| r[1]),
        "final_loss_mean_last_50": mean(tail),
        "best": best,
        "evaluations": history.lines().count().saturating_sub(1),
    });
    Ok(serde_json::to_string_pretty(&report).expect("json"))
}

/// Caps the worker pool at `TSCL_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TSCL_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("TSCL_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            bail!(Config, "TSCL_THREADS must be positive");
        }
        // a second initialization (e.g. in tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<String> {
    init_threads()?;
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.set_seed(seed);
    }
    let g = &cli.global;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, g),
        Command::Pretrain => cmd_pretrain(&cfg, g),
        Command::Eval { checkpoint, mode } => cmd_eval(&cfg, g, checkpoint, *mode),
        Command::Sweep => cmd_sweep(&cfg, g),
        Command::AugmentPreview { dataset, index, strategy } => cmd_preview(&cfg, g, dataset.as_deref(), *index, strategy.as_deref()),
        Command::Report { run } => cmd_report(run),
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 usage/config, 2 I/O/format, 3 numerical failure.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("[train]\nsteps = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn seed_propagates() {
        let cfg = RunConfig::parse("seed = 7\n[train]\ntotal_steps = 10\n").unwrap();
        assert_eq!((cfg.train.seed, cfg.synth.seed, cfg.eval.sweep.seed), (7, 7, 7));
        assert_eq!(cfg.train.total_steps, 10);
    }

    #[test]
    fn resampling_sizes_come_in_pairs() {
        let a = AugmentSection { t_up: Some(119), ..AugmentSection::default() };
        assert!(a.build("resampling").is_err());
        let b = AugmentSection { t_up: Some(119), t_int: Some([30, 30]), ..AugmentSection::default() };
        assert!(b.build("resampling").is_ok());
    }

    #[test]
    fn bad_mode_is_a_usage_error() {
        assert_eq!(main_with_args(["tscl", "eval", "--checkpoint", "x", "--mode", "bogus"]), 1);
    }

    fn tiny_config(dir: &Path, channels: usize) -> PathBuf {
        let text = format!(
            r#"seed = 5
[data]
dir = {data:?}
[synth]
n_classes = 3
len = 16
channels = {channels}
n_series = 2
unlabeled = 48
train_per_class = 6
val_per_class = 4
test_per_class = 4
[model]
block_filters = [4, 4]
kernel_sizes = [5, 3, 3]
projection_dim = 8
[train]
total_steps = 12
batch_size = 16
group_size = 2
eval_every = 6
[eval.finetune]
frozen_epochs = 1
full_epochs = 1
[eval.sweep]
samples_per_class = [2, 3]
repeats = 2
[eval.checkpoints]
jitter = {ckpt:?}
resample = {ckpt:?}
"#,
            data = dir.join(format!("data{channels}")).display().to_string(),
            ckpt = dir.join("run/best.ckpt").display().to_string(),
        );
        let path = dir.join(format!("tiny{channels}.toml"));
        fs::write(&path, text).unwrap();
        path
    }

    fn exec(args: &[&str]) -> Result<String> {
        run(&Cli::try_parse_from(std::iter::once("tscl").chain(args.iter().copied())).unwrap())
    }

    #[test]
    fn commands_end_to_end() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let config = tiny_config(dir, 2);
        let cfg = RunConfig::load(&config).unwrap();
        let c = config.to_str().unwrap();

        exec(&["synth", "--config", c]).unwrap();
        let files: Vec<Vec<u8>> = [SplitTag::Unlabeled, SplitTag::Train, SplitTag::Val, SplitTag::Test].iter().map(|&s| fs::read(cfg.data.path(s)).unwrap()).collect();
        let sizes: Vec<usize> = [SplitTag::Unlabeled, SplitTag::Train, SplitTag::Val, SplitTag::Test].iter().map(|&s| cfg.data.load(s).unwrap().len()).collect();
        assert_eq!(sizes, vec![48, 18, 12, 12]);
        // outputs are guarded; a forced rerun reproduces the files
        assert!(matches!(exec(&["synth", "--config", c]), Err(Error::Argument(_))));
        exec(&["synth", "--config", c, "--force"]).unwrap();
        for (s, bytes) in [SplitTag::Unlabeled, SplitTag::Train, SplitTag::Val, SplitTag::Test].iter().zip(&files) {
            assert_eq!(&fs::read(cfg.data.path(*s)).unwrap(), bytes);
        }

        let run_dir = dir.join("run");
        let r = run_dir.to_str().unwrap();
        exec(&["pretrain", "--config", c, "--out", r]).unwrap();
        let losses = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
        assert_eq!(losses.lines().count(), 1 + 12);
        assert_eq!(RunConfig::load(&run_dir.join("config.toml")).unwrap(), cfg);
        assert!(matches!(exec(&["pretrain", "--config", c, "--out", r]), Err(Error::Argument(_))));

        let ckpt = run_dir.join("best.ckpt");
        let k = ckpt.to_str().unwrap();
        for mode in ["linear", "finetune"] {
            let out = dir.join(format!("{mode}.json"));
            exec(&["eval", "--config", c, "--checkpoint", k, "--mode", mode, "--out", out.to_str().unwrap()]).unwrap();
            let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
            assert!((0.0..=1.0).contains(&json["oa"].as_f64().unwrap()));
            assert!((0.0..=1.0).contains(&json["macro_f1"].as_f64().unwrap()));
            assert!((-1.0..=1.0).contains(&json["kappa"].as_f64().unwrap()));
            assert_eq!(json["config_hash"], cfg.hash());
        }

        let sweep = dir.join("sweep");
        exec(&["sweep", "--config", c, "--out", sweep.to_str().unwrap()]).unwrap();
        let csv = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
        // raw + two strategies, two values of k, two repeats
        assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
        let order: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(order.iter().step_by(4).copied().collect::<Vec<_>>(), ["raw", "jittering", "resampling"]);

        let report: serde_json::Value = serde_json::from_str(&exec(&["report", "--run", r]).unwrap()).unwrap();
        assert_eq!(report["steps"], 12);

        let preview = dir.join("preview.csv");
        exec(&["augment-preview", "--config", c, "--out", preview.to_str().unwrap()]).unwrap();
        // header + (original, view1, view2) x 2 series x 16 steps
        assert_eq!(fs::read_to_string(preview).unwrap().lines().count(), 1 + 3 * 2 * 16);

        // a checkpoint trained on 2 channels cannot read 3-channel data
        let other = tiny_config(dir, 3);
        let o = other.to_str().unwrap();
        exec(&["synth", "--config", o]).unwrap();
        match exec(&["eval", "--config", o, "--checkpoint", k, "--out", dir.join("x.json").to_str().unwrap()]) {
            Err(e @ Error::Validation(_)) => {
                let msg = e.to_string();
                assert!(msg.contains("2 channels") && msg.contains("C=3"), "{msg}");
                assert_eq!(e.exit_code(), 1);
            }
            other => panic!("expected a validation error, got {other:?}"),
        }

        fs::remove_file(&ckpt).unwrap();
        let err = exec(&["sweep", "--config", c, "--out", dir.join("sweep2").to_str().unwrap()]).unwrap_err();
        assert!(err.to_string().contains("jittering"), "{err}");
    }
}
