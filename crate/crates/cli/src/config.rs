//! Run configuration: a fixed registry of `key = value` settings.
//!
//! Resolution order, later wins: built-in defaults, `EVANON_SEED` (seed
//! only), the `--config` file, `--set key=value` flags in order, then the
//! dedicated flags such as `--seed` or `--epochs`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use evanon::baselines::EncryptionKey;
use evanon::harness::{Augment, TrainConfig};
use evanon::metrics::SsimConfig;
use evanon::models::ModelConfig;
use evanon::simulator::CorpusConfig;

pub const SEED_ENV: &str = "EVANON_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelPreset {
    Toy,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncryptMode {
    Scramble,
    Descramble,
    Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: ModelPreset,
    pub num_ids: usize,
    pub test_ids: usize,
    pub cameras: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub frame_interval_us: u64,
    pub train: TrainConfig,
    pub reid_pretrain_epochs: usize,
    pub ssim: SsimConfig,
    pub mode: EncryptMode,
    pub ratio: f64,
    pub key: EncryptionKey,
    pub gradcheck_seeds: usize,
    pub gradcheck_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        Self {
            seed: 7,
            corpus: PathBuf::from("corpus"),
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
            input: None,
            output: None,
            model: ModelPreset::Toy,
            num_ids: corpus.num_ids,
            test_ids: corpus.num_test_ids.unwrap_or(corpus.num_ids / 2),
            cameras: corpus.cameras,
            frames: corpus.frames_per_seq,
            height: corpus.height,
            width: corpus.width,
            frame_interval_us: corpus.frame_interval_us,
            train: TrainConfig::default(),
            reid_pretrain_epochs: 0,
            ssim: SsimConfig::default(),
            mode: EncryptMode::Scramble,
            ratio: 0.75,
            key: EncryptionKey::default(),
            gradcheck_seeds: 20,
            gradcheck_samples: 6,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "corpus",
    "checkpoints",
    "reports",
    "input",
    "output",
    "model",
    "num_ids",
    "test_ids",
    "cameras",
    "frames",
    "height",
    "width",
    "frame_interval_us",
    "contrast",
    "window_us",
    "bins",
    "alpha",
    "beta",
    "gamma",
    "lr",
    "momentum",
    "weight_decay",
    "clip_norm",
    "epochs",
    "ids_per_batch",
    "samples_per_id",
    "margin",
    "augment",
    "reid_pretrain_epochs",
    "ssim_window",
    "ssim_sigma",
    "mode",
    "ratio",
    "key_x0",
    "key_r",
    "key_seed",
    "gradcheck_seeds",
    "gradcheck_samples",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, value)?,
            "corpus" => self.corpus = PathBuf::from(value),
            "checkpoints" => self.checkpoints = PathBuf::from(value),
            "reports" => self.reports = PathBuf::from(value),
            "input" => self.input = path(value),
            "output" => self.output = path(value),
            "model" => {
                self.model = match value {
                    "toy" => ModelPreset::Toy,
                    "paper" => ModelPreset::Paper,
                    _ => return Err(format!("`model` must be toy or paper, got `{value}`")),
                }
            }
            "num_ids" => self.num_ids = num(key, value)?,
            "test_ids" => self.test_ids = num(key, value)?,
            "cameras" => self.cameras = num(key, value)?,
            "frames" => self.frames = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "frame_interval_us" => self.frame_interval_us = num(key, value)?,
            "contrast" => t.contrast = num(key, value)?,
            "window_us" => t.window_us = num(key, value)?,
            "bins" => t.bins = num(key, value)?,
            "alpha" => t.alpha = num(key, value)?,
            "beta" => t.beta = num(key, value)?,
            "gamma" => t.gamma = num(key, value)?,
            "lr" => t.optim.learning_rate = num(key, value)?,
            "momentum" => t.optim.momentum = num(key, value)?,
            "weight_decay" => t.optim.weight_decay = num(key, value)?,
            "clip_norm" => t.optim.clip_norm = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "ids_per_batch" => t.ids_per_batch = num(key, value)?,
            "samples_per_id" => t.samples_per_id = num(key, value)?,
            "margin" => t.margin = num(key, value)?,
            "augment" => {
                t.augment = match value {
                    "off" => Augment::Off,
                    "mirror" => Augment::Mirror,
                    "mirror-reverse" => Augment::MirrorReverse,
                    _ => {
                        return Err(format!(
                            "`augment` must be off, mirror or mirror-reverse, got `{value}`"
                        ))
                    }
                }
            }
            "reid_pretrain_epochs" => self.reid_pretrain_epochs = num(key, value)?,
            "ssim_window" => self.ssim.window = num(key, value)?,
            "ssim_sigma" => self.ssim.sigma = num(key, value)?,
            "mode" => {
                self.mode = match value {
                    "scramble" => EncryptMode::Scramble,
                    "descramble" => EncryptMode::Descramble,
                    "discard" => EncryptMode::Discard,
                    _ => {
                        return Err(format!(
                            "`mode` must be scramble, descramble or discard, got `{value}`"
                        ))
                    }
                }
            }
            "ratio" => self.ratio = num(key, value)?,
            "key_x0" => self.key.x0 = num(key, value)?,
            "key_r" => self.key.r = num(key, value)?,
            "key_seed" => self.key.selection_seed = num(key, value)?,
            "gradcheck_seeds" => self.gradcheck_seeds = num(key, value)?,
            "gradcheck_samples" => self.gradcheck_samples = num(key, value)?,
            _ => return Err(format!("unknown config key `{key}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "seed" => self.seed.to_string(),
            "corpus" => self.corpus.display().to_string(),
            "checkpoints" => self.checkpoints.display().to_string(),
            "reports" => self.reports.display().to_string(),
            "input" => show_path(&self.input),
            "output" => show_path(&self.output),
            "model" => match self.model {
                ModelPreset::Toy => "toy",
                ModelPreset::Paper => "paper",
            }
            .into(),
            "num_ids" => self.num_ids.to_string(),
            "test_ids" => self.test_ids.to_string(),
            "cameras" => self.cameras.to_string(),
            "frames" => self.frames.to_string(),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "frame_interval_us" => self.frame_interval_us.to_string(),
            "contrast" => t.contrast.to_string(),
            "window_us" => t.window_us.to_string(),
            "bins" => t.bins.to_string(),
            "alpha" => t.alpha.to_string(),
            "beta" => t.beta.to_string(),
            "gamma" => t.gamma.to_string(),
            "lr" => t.optim.learning_rate.to_string(),
            "momentum" => t.optim.momentum.to_string(),
            "weight_decay" => t.optim.weight_decay.to_string(),
            "clip_norm" => t.optim.clip_norm.to_string(),
            "epochs" => t.epochs.to_string(),
            "ids_per_batch" => t.ids_per_batch.to_string(),
            "samples_per_id" => t.samples_per_id.to_string(),
            "margin" => t.margin.to_string(),
            "augment" => match t.augment {
                Augment::Off => "off",
                Augment::Mirror => "mirror",
                Augment::MirrorReverse => "mirror-reverse",
            }
            .into(),
            "reid_pretrain_epochs" => self.reid_pretrain_epochs.to_string(),
            "ssim_window" => self.ssim.window.to_string(),
            "ssim_sigma" => self.ssim.sigma.to_string(),
            "mode" => match self.mode {
                EncryptMode::Scramble => "scramble",
                EncryptMode::Descramble => "descramble",
                EncryptMode::Discard => "discard",
            }
            .into(),
            "ratio" => self.ratio.to_string(),
            "key_x0" => self.key.x0.to_string(),
            "key_r" => self.key.r.to_string(),
            "key_seed" => self.key.selection_seed.to_string(),
            "gradcheck_seeds" => self.gradcheck_seeds.to_string(),
            "gradcheck_samples" => self.gradcheck_samples.to_string(),
            _ => unreachable!("unregistered key {key}"),
        }
    }

    /// Apply a config file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| format!("{}:{}: {msg}", path.display(), i + 1);
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            if seen.contains(&k) {
                return Err(at(format!("duplicate key `{k}`")));
            }
            seen.push(k);
            self.set(k, v).map_err(at)?;
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), String> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| format!("expected KEY=VALUE, got `{assignment}`"))?;
        self.set(k.trim(), v.trim())
    }

    /// Value-level checks shared by every command.
    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        self.key.validate().map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(format!("ratio must lie in [0, 1], got {}", self.ratio));
        }
        if self.ssim.window % 2 == 0 || !(self.ssim.sigma > 0.0) {
            return Err("ssim_window must be odd and ssim_sigma positive".into());
        }
        if self.gradcheck_seeds == 0 || self.gradcheck_samples == 0 {
            return Err("gradcheck_seeds and gradcheck_samples must be positive".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = match self.model {
            ModelPreset::Toy => ModelConfig::toy(),
            ModelPreset::Paper => ModelConfig::default(),
        };
        ModelConfig {
            bins: self.train.bins,
            ..base
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            num_ids: self.num_ids,
            num_test_ids: Some(self.test_ids),
            cameras: self.cameras,
            frames_per_seq: self.frames,
            height: self.height,
            width: self.width,
            frame_interval_us: self.frame_interval_us,
            seed: self.seed,
        }
    }

    /// Training configuration with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// `key = value` echo of every setting, loadable with `--config`.
    pub fn echo(&self, command: &str) -> String {
        let mut out = format!("# evanon {command} resolved configuration\n");
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }
}
