//! Flat `key = value` experiment configs: one assignment per line, `#`
//! starts a comment, unknown keys are errors. Everything an experiment
//! needs lives in one diffable file; the CLI flags `--seed` and `--out`
//! override the corresponding fields after parsing.

use crate::training::TrainConfig;
use std::path::{Path, PathBuf};

/// Configuration or input error; carries the exact key or path so the
/// message is actionable.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    SeqMnist,
    PermMnist,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    LaesLinear,
    LaesSvm,
    LaesFf,
    Rnn,
    Lmn,
    Lstm,
    LinearRnn,
}

impl ModelChoice {
    /// Closed-form autoencoder pipelines (no backpropagation).
    pub fn is_laes_pipeline(self) -> bool {
        matches!(self, ModelChoice::LaesLinear | ModelChoice::LaesSvm | ModelChoice::LaesFf)
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelChoice::LaesLinear => "laes_linear",
            ModelChoice::LaesSvm => "laes_svm",
            ModelChoice::LaesFf => "laes_ff",
            ModelChoice::Rnn => "rnn",
            ModelChoice::Lmn => "lmn",
            ModelChoice::Lstm => "lstm",
            ModelChoice::LinearRnn => "linear_rnn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitChoice {
    Ortho,
    Laes,
}

impl InitChoice {
    pub fn tag(self) -> &'static str {
        match self {
            InitChoice::Ortho => "ortho",
            InitChoice::Laes => "laes",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleChoice {
    Unit,
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Classification,
    Reconstruction,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelChoice,
    pub init: InitChoice,
    pub objective: Objective,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    // dataset shaping
    pub downsample: usize,
    pub scale: ScaleChoice,
    pub permutation_seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    // synthetic task
    pub synth_n: usize,
    pub synth_t: usize,
    pub synth_d: usize,
    // autoencoder fit
    pub p: usize,
    pub laes_stride: usize,
    pub laes_max_prefixes: usize,
    pub laes_fit_sequences: usize,
    pub laes_center: bool,
    // backpropagation
    pub train: TrainConfig,
    // heads
    pub hidden: usize,
    pub svm_c_reg: f64,
    pub svm_epochs: usize,
    // probes
    pub probe_lags: Vec<usize>,
    pub grad_len: usize,
    pub grad_batch: usize,
    pub grad_stride: usize,
    pub recon_sample: usize,
}

impl ExperimentConfig {
    /// `"<model>-<init>"` for trained networks, `"<model>"` for the
    /// closed-form pipelines; labels CSV rows and reports.
    pub fn model_tag(&self) -> String {
        if self.model.is_laes_pipeline() {
            self.model.tag().to_string()
        } else {
            format!("{}-{}", self.model.tag(), self.init.tag())
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut task = None;
        let mut model = None;
        let mut init = InitChoice::Ortho;
        let mut objective = Objective::Classification;
        let mut data_dir: Option<PathBuf> = None;
        let mut output_dir = PathBuf::from(".");
        let mut seed = 0u64;
        let mut downsample = 1usize;
        let mut scale = ScaleChoice::Unit;
        let mut permutation_seed = 2020u64;
        let (mut train_count, mut val_count, mut test_count) = (0usize, 0usize, 0usize);
        let (mut synth_n, mut synth_t, mut synth_d) = (256usize, 10usize, 2usize);
        let mut p = 128usize;
        let mut laes_stride = 1usize;
        let mut laes_max_prefixes = 1_000_000usize;
        let mut laes_fit_sequences = 0usize;
        let mut laes_center = false;
        let mut train = TrainConfig::default();
        let mut hidden = 256usize;
        let mut svm_c_reg = 1.0f64;
        let mut svm_epochs = 20usize;
        let mut probe_lags: Vec<usize> = crate::diagnostics::DEFAULT_PROBE_LAGS.to_vec();
        let mut grad_len = 784usize;
        let mut grad_batch = 8usize;
        let mut grad_stride = 1usize;
        let mut recon_sample = 0usize;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", lineno + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return err(format!("key `{key}`: empty value"));
            }

            fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
                value.parse().map_err(|_| {
                    ConfigError(format!(
                        "key `{key}`: cannot parse `{value}` as {}",
                        std::any::type_name::<T>()
                    ))
                })
            }
            let parse_bool = |value: &str| match value {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                other => err(format!("key `{key}`: expected true/false, got `{other}`")),
            };

            match key {
                "task" => {
                    task = Some(match value {
                        "seq_mnist" => Task::SeqMnist,
                        "perm_mnist" => Task::PermMnist,
                        "synthetic" => Task::Synthetic,
                        other => {
                            return err(format!(
                                "key `task`: `{other}` is not one of seq_mnist, perm_mnist, synthetic"
                            ))
                        }
                    })
                }
                "model" => {
                    model = Some(match value {
                        "laes_linear" => ModelChoice::LaesLinear,
                        "laes_svm" => ModelChoice::LaesSvm,
                        "laes_ff" => ModelChoice::LaesFf,
                        "rnn" => ModelChoice::Rnn,
                        "lmn" => ModelChoice::Lmn,
                        "lstm" => ModelChoice::Lstm,
                        "linear_rnn" => ModelChoice::LinearRnn,
                        other => {
                            return err(format!(
                                "key `model`: `{other}` is not one of laes_linear, laes_svm, \
                                 laes_ff, rnn, lmn, lstm, linear_rnn"
                            ))
                        }
                    })
                }
                "init" => {
                    init = match value {
                        "ortho" => InitChoice::Ortho,
                        "laes" => InitChoice::Laes,
                        other => {
                            return err(format!(
                                "key `init`: `{other}` is not one of ortho, laes"
                            ))
                        }
                    }
                }
                "objective" => {
                    objective = match value {
                        "classification" => Objective::Classification,
                        "reconstruction" => Objective::Reconstruction,
                        other => {
                            return err(format!(
                                "key `objective`: `{other}` is not one of classification, \
                                 reconstruction"
                            ))
                        }
                    }
                }
                "data_dir" => data_dir = Some(PathBuf::from(value)),
                "output_dir" => output_dir = PathBuf::from(value),
                "seed" => seed = parse(key, value)?,
                "downsample" => downsample = parse(key, value)?,
                "scale" => {
                    scale = match value {
                        "unit" => ScaleChoice::Unit,
                        "centered" => ScaleChoice::Centered,
                        other => {
                            return err(format!(
                                "key `scale`: `{other}` is not one of unit, centered"
                            ))
                        }
                    }
                }
                "permutation_seed" => permutation_seed = parse(key, value)?,
                "train_count" => train_count = parse(key, value)?,
                "val_count" => val_count = parse(key, value)?,
                "test_count" => test_count = parse(key, value)?,
                "synth_n" => synth_n = parse(key, value)?,
                "synth_t" => synth_t = parse(key, value)?,
                "synth_d" => synth_d = parse(key, value)?,
                "p" => p = parse(key, value)?,
                "laes_stride" => laes_stride = parse(key, value)?,
                "laes_max_prefixes" => laes_max_prefixes = parse(key, value)?,
                "laes_fit_sequences" => laes_fit_sequences = parse(key, value)?,
                "laes_center" => laes_center = parse_bool(value)?,
                "lr" => train.lr = parse(key, value)?,
                "epochs" => train.epochs = parse(key, value)?,
                "batch_size" => train.batch_size = parse(key, value)?,
                "lambda_ortho" => train.lambda_ortho = parse(key, value)?,
                "alpha_act" => train.alpha_act = parse(key, value)?,
                "trunc_p" => train.trunc_p = parse(key, value)?,
                "ridge" => train.ridge = parse(key, value)?,
                "beta1" => train.adam_beta1 = parse(key, value)?,
                "beta2" => train.adam_beta2 = parse(key, value)?,
                "eps" => train.adam_eps = parse(key, value)?,
                "hidden" => hidden = parse(key, value)?,
                "svm_c_reg" => svm_c_reg = parse(key, value)?,
                "svm_epochs" => svm_epochs = parse(key, value)?,
                "probe_lags" => {
                    let lags: Result<Vec<usize>, _> =
                        value.split(',').map(|v| parse(key, v.trim())).collect();
                    probe_lags = lags?;
                    if probe_lags.is_empty() {
                        return err("key `probe_lags`: needs at least one lag");
                    }
                }
                "grad_len" => grad_len = parse(key, value)?,
                "grad_batch" => grad_batch = parse(key, value)?,
                "grad_stride" => grad_stride = parse(key, value)?,
                "recon_sample" => recon_sample = parse(key, value)?,
                other => return err(format!("unknown key `{other}`")),
            }
        }

        let Some(task) = task else { return err("missing required key `task`") };
        let Some(model) = model else { return err("missing required key `model`") };
        if data_dir.is_none() {
            if let Ok(dir) = std::env::var("SEQMEM_DATA_DIR") {
                data_dir = Some(PathBuf::from(dir));
            }
        }
        train.seed = seed;
        Ok(Self {
            task,
            model,
            init,
            objective,
            data_dir,
            output_dir,
            seed,
            downsample,
            scale,
            permutation_seed,
            train_count,
            val_count,
            test_count,
            synth_n,
            synth_t,
            synth_d,
            p,
            laes_stride,
            laes_max_prefixes,
            laes_fit_sequences,
            laes_center,
            train,
            hidden,
            svm_c_reg,
            svm_epochs,
            probe_lags,
            grad_len,
            grad_batch,
            grad_stride,
            recon_sample,
        })
    }

    /// Overrides applied by the command line after parsing.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    /// Semantic validation, including that every referenced path exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p == 0 {
            return err("key `p`: state size must be at least 1");
        }
        if self.downsample == 0 {
            return err("key `downsample`: factor must be at least 1");
        }
        if self.train.batch_size == 0 {
            return err("key `batch_size`: must be at least 1");
        }
        if self.laes_stride == 0 {
            return err("key `laes_stride`: must be at least 1");
        }
        if self.laes_max_prefixes == 0 {
            return err("key `laes_max_prefixes`: must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.train.trunc_p) {
            return err(format!(
                "key `trunc_p`: {} is outside [0, 1]",
                self.train.trunc_p
            ));
        }
        if self.grad_len == 0 || self.grad_batch == 0 {
            return err("keys `grad_len`/`grad_batch`: must be at least 1");
        }
        if self.grad_stride == 0 {
            return err("key `grad_stride`: must be at least 1");
        }
        match self.task {
            Task::Synthetic => {
                if self.synth_n == 0 || self.synth_t == 0 || self.synth_d == 0 {
                    return err("keys `synth_n`/`synth_t`/`synth_d`: must be at least 1");
                }
            }
            Task::SeqMnist | Task::PermMnist => {
                self.mnist_paths()?;
            }
        }
        match self.objective {
            Objective::Classification => {
                if self.model == ModelChoice::Lstm && self.init == InitChoice::Laes {
                    return err(
                        "key `init`: the LSTM has no autoencoder transplant; use init = ortho",
                    );
                }
            }
            Objective::Reconstruction => {
                if !matches!(self.model, ModelChoice::Rnn | ModelChoice::Lstm) {
                    return err(format!(
                        "key `objective`: reconstruction supports model = rnn or lstm, got `{}`",
                        self.model.tag()
                    ));
                }
                if self.init == InitChoice::Laes {
                    return err(
                        "key `init`: reconstruction training starts from init = ortho only",
                    );
                }
            }
        }
        Ok(())
    }

    /// The four dataset files, each accepted gzipped or raw.
    pub fn mnist_paths(&self) -> Result<[PathBuf; 4], ConfigError> {
        let Some(dir) = &self.data_dir else {
            return err(
                "key `data_dir`: not set and SEQMEM_DATA_DIR is empty; point it at the MNIST \
                 directory",
            );
        };
        const BASES: [&str; 4] = [
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        ];
        let mut out = Vec::with_capacity(4);
        for base in BASES {
            let gz = dir.join(format!("{base}.gz"));
            let raw = dir.join(base);
            if gz.is_file() {
                out.push(gz);
            } else if raw.is_file() {
                out.push(raw);
            } else {
                return err(format!(
                    "key `data_dir`: missing dataset file {} (also tried without .gz)",
                    gz.display()
                ));
            }
        }
        Ok(out.try_into().expect("four names pushed"))
    }
}
