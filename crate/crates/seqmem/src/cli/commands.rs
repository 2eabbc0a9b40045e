//! Command implementations behind the `seqmem` binary, exposed as
//! library functions so integration tests can drive them in-process.
//!
//! Every command is deterministic given (config, seed): dataset carving,
//! fitting, training, and probing all draw from streams derived from the
//! config seed, and output files are formatted identically across runs.

use super::checkpoint::{self, Checkpoint, CheckpointError, HeadParams};
use super::config::{
    ConfigError, ExperimentConfig, InitChoice, ModelChoice, Objective, ScaleChoice, Task,
};
use crate::data::{self, DataError, LabeledSequences, ScaleMode};
use crate::diagnostics::{self, DiagnosticsError};
use crate::init::{self, InitError};
use crate::laes::{self, LaesError, LaesFitReport, LaesModel, SequenceBatch};
use crate::models::{steps_from_batch, steps_from_seq, ForwardTrace, LinearRnnParams, ModelError};
use crate::numerics::{Matrix, SplitMix64};
use crate::training::{self, ModelParams, TrainError};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Laes(#[from] LaesError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Exit-code contract: 0 success, 2 configuration/input problems,
    /// 3 numerical divergence during training.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Train(TrainError::Diverged { .. })
            | CliError::Diagnostics(DiagnosticsError::Train(TrainError::Diverged { .. })) => 3,
            _ => 2,
        }
    }
}

/// A task's three splits plus what a model needs to know about them.
pub struct TaskData {
    pub train: LabeledSequences,
    pub val: LabeledSequences,
    pub test: LabeledSequences,
    pub classes: usize,
    /// Image side length after downsampling; 0 for non-image tasks.
    pub side: usize,
}

/// Loads and carves the dataset a config names. MNIST tasks share one
/// pixel permutation and one set of scaling statistics (computed on the
/// training images) across their splits; carving is stratified.
pub fn load_task(cfg: &ExperimentConfig) -> Result<TaskData, CliError> {
    match cfg.task {
        Task::Synthetic => {
            let train =
                data::synthetic_copy_task(cfg.synth_n, cfg.synth_t, cfg.synth_d, cfg.seed);
            let val = if cfg.val_count > 0 {
                data::synthetic_copy_task(
                    cfg.val_count,
                    cfg.synth_t,
                    cfg.synth_d,
                    cfg.seed.wrapping_add(1),
                )
            } else {
                LabeledSequences {
                    batch: SequenceBatch::empty(cfg.synth_d),
                    labels: Vec::new(),
                }
            };
            let test_n = if cfg.test_count > 0 { cfg.test_count } else { cfg.synth_n };
            let test =
                data::synthetic_copy_task(test_n, cfg.synth_t, cfg.synth_d, cfg.seed.wrapping_add(2));
            Ok(TaskData { train, val, test, classes: 2, side: 0 })
        }
        Task::SeqMnist | Task::PermMnist => {
            let [train_images_path, train_labels_path, test_images_path, test_labels_path] =
                cfg.mnist_paths()?;
            let (train_images, train_labels) = data::load_idx(&train_images_path, &train_labels_path)?;
            let (test_images, test_labels) = data::load_idx(&test_images_path, &test_labels_path)?;
            let scale = match cfg.scale {
                ScaleChoice::Unit => ScaleMode::Unit,
                ScaleChoice::Centered => {
                    let (mean, std) = data::pixel_stats(&train_images, cfg.downsample)?;
                    ScaleMode::Centered { mean, std }
                }
            };
            let side = train_images.rows / cfg.downsample;
            let perm = match cfg.task {
                Task::PermMnist => {
                    Some(data::fixed_permutation(side * side, cfg.permutation_seed))
                }
                _ => None,
            };
            let full_train =
                data::make_sequences(&train_images, &train_labels, perm.as_deref(), scale, cfg.downsample)?;
            let full_test =
                data::make_sequences(&test_images, &test_labels, perm.as_deref(), scale, cfg.downsample)?;

            let (train, val) = if cfg.train_count > 0 && cfg.train_count < full_train.len() {
                let (rest, carved_train) = data::split(&full_train, cfg.train_count, cfg.seed)?;
                let (_, carved_val) = data::split(&rest, cfg.val_count, cfg.seed)?;
                (carved_train, carved_val)
            } else {
                data::split(&full_train, cfg.val_count, cfg.seed)?
            };
            let test = if cfg.test_count > 0 && cfg.test_count < full_test.len() {
                data::split(&full_test, cfg.test_count, cfg.seed)?.1
            } else {
                full_test
            };
            Ok(TaskData { train, val, test, classes: 10, side })
        }
    }
}

fn fit_laes_for(
    cfg: &ExperimentConfig,
    train: &LabeledSequences,
) -> Result<(LaesModel, LaesFitReport), CliError> {
    let batch = if cfg.laes_fit_sequences > 0 && cfg.laes_fit_sequences < train.len() {
        data::split(train, cfg.laes_fit_sequences, cfg.seed.wrapping_add(7))?.1.batch
    } else {
        train.batch.clone()
    };
    Ok(laes::fit_laes_with_report(
        &batch,
        cfg.p,
        cfg.laes_stride,
        cfg.laes_max_prefixes,
        cfg.seed,
        cfg.laes_center,
    )?)
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| CliError::Io {
        path: cfg.output_dir.display().to_string(),
        source,
    })?;
    Ok(cfg.output_dir.clone())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// Accuracy of any head kind over precomputed final states.
pub fn head_accuracy_on(head: &HeadParams, states: &Matrix, labels: &[usize]) -> f64 {
    match head {
        HeadParams::Linear(w) | HeadParams::Svm(w) => init::head_accuracy(w, states, labels),
        HeadParams::Ff(p) => training::ff_accuracy(p, states, labels),
    }
}

/// Fits the autoencoder, writes `laes.ckpt` and `fit_report.txt`, and
/// prints the report (rank used, Eckart-Young tail energy, mean
/// short-term-memory error over the first training sequences).
pub fn cmd_fit_laes(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let task = load_task(cfg)?;
    let (model, report) = fit_laes_for(cfg, &task.train)?;
    let out = ensure_out_dir(cfg)?;
    let mut ckpt = Checkpoint::new();
    checkpoint::encode_laes(&model, &mut ckpt);
    ckpt.write(&out.join("laes.ckpt"))?;

    let probe_n = task.train.len().min(8);
    let mut stm = 0.0;
    for i in 0..probe_n {
        stm += laes::stm_error(&model, task.train.batch.sequence(i))?;
    }
    stm /= probe_n.max(1) as f64;
    let text = format!(
        "rank_used={}\ntail_energy={:.9e}\nstm_error_sample={:.9e}\n",
        report.rank_used,
        report.tail_energy(),
        stm
    );
    write_bytes(&out.join("fit_report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn laes_init_params(
    cfg: &ExperimentConfig,
    task: &TaskData,
    laes_model: &LaesModel,
) -> Result<ModelParams, CliError> {
    let states = laes::laes_encode_final(laes_model, &task.train.batch)?;
    let readout =
        init::fit_linear_head(&states, &task.train.labels, task.classes, cfg.train.ridge)?;
    Ok(match cfg.model {
        ModelChoice::Rnn => ModelParams::Rnn(init::init_rnn_from_laes(laes_model, &readout)?),
        ModelChoice::Lmn => ModelParams::Lmn(init::init_lmn_from_laes(laes_model, &readout)?),
        ModelChoice::LinearRnn => ModelParams::LinearRnn(LinearRnnParams {
            a: laes_model.a.clone(),
            b: laes_model.b.clone(),
            w_o: readout,
        }),
        _ => {
            return Err(CliError::Usage(
                "init = laes supports model = rnn, lmn, linear_rnn".into(),
            ))
        }
    })
}

fn build_init(
    cfg: &ExperimentConfig,
    task: &TaskData,
    init_from: Option<&Path>,
) -> Result<ModelParams, CliError> {
    if let Some(path) = init_from {
        let ckpt = Checkpoint::read(path)?;
        // a network checkpoint resumes training from those weights
        if let Ok(params) = checkpoint::decode_model(&ckpt) {
            return Ok(params);
        }
        if cfg.init == InitChoice::Laes {
            let laes_model = checkpoint::decode_laes(&ckpt)?;
            return laes_init_params(cfg, task, &laes_model);
        }
        return Err(CliError::Usage(format!(
            "--init-from {}: not a network checkpoint, and init = ortho does not take an \
             autoencoder checkpoint",
            path.display()
        )));
    }
    let d = task.train.batch.dim();
    match cfg.init {
        InitChoice::Ortho => Ok(match cfg.model {
            ModelChoice::Rnn => {
                ModelParams::Rnn(init::init_orthogonal_rnn(cfg.p, d, task.classes, cfg.seed))
            }
            ModelChoice::Lmn => ModelParams::Lmn(init::init_orthogonal_lmn(
                cfg.p,
                cfg.p,
                d,
                task.classes,
                cfg.seed,
            )),
            ModelChoice::Lstm => {
                ModelParams::Lstm(init::init_lstm(cfg.p, d, task.classes, cfg.seed))
            }
            ModelChoice::LinearRnn => ModelParams::LinearRnn(init::init_orthogonal_linear_rnn(
                cfg.p,
                d,
                task.classes,
                cfg.seed,
            )),
            _ => unreachable!("laes pipelines never reach network init"),
        }),
        InitChoice::Laes => {
            let (laes_model, _) = fit_laes_for(cfg, &task.train)?;
            laes_init_params(cfg, task, &laes_model)
        }
    }
}

/// Trains per the config and writes `model.ckpt` plus `history.csv`.
/// Prints `test_acc=<float>` (classification) or `recon_mse=<float>`
/// (reconstruction) as the machine-readable result line.
pub fn cmd_train(cfg: &ExperimentConfig, init_from: Option<&Path>) -> Result<(), CliError> {
    let task = load_task(cfg)?;
    let out = ensure_out_dir(cfg)?;
    match cfg.objective {
        Objective::Reconstruction => train_reconstruction(cfg, &task, &out),
        Objective::Classification if cfg.model.is_laes_pipeline() => {
            train_laes_pipeline(cfg, &task, &out, init_from)
        }
        Objective::Classification => train_network(cfg, &task, &out, init_from),
    }
}

fn train_laes_pipeline(
    cfg: &ExperimentConfig,
    task: &TaskData,
    out: &Path,
    init_from: Option<&Path>,
) -> Result<(), CliError> {
    let laes_model = match init_from {
        Some(path) => checkpoint::decode_laes(&Checkpoint::read(path)?)?,
        None => fit_laes_for(cfg, &task.train)?.0,
    };
    let states = laes::laes_encode_final(&laes_model, &task.train.batch)?;
    let head = match cfg.model {
        ModelChoice::LaesLinear => HeadParams::Linear(init::fit_linear_head(
            &states,
            &task.train.labels,
            task.classes,
            cfg.train.ridge,
        )?),
        ModelChoice::LaesSvm => HeadParams::Svm(training::fit_svm_head(
            &states,
            &task.train.labels,
            cfg.svm_c_reg,
            cfg.svm_epochs,
            cfg.seed,
        )?),
        ModelChoice::LaesFf => HeadParams::Ff(training::fit_ff_head(
            &states,
            &task.train.labels,
            cfg.hidden,
            &cfg.train,
        )?),
        _ => unreachable!("caller matched a laes pipeline"),
    };
    let test_states = laes::laes_encode_final(&laes_model, &task.test.batch)?;
    let acc = head_accuracy_on(&head, &test_states, &task.test.labels);

    let mut ckpt = Checkpoint::new();
    checkpoint::encode_laes(&laes_model, &mut ckpt);
    checkpoint::encode_head(&head, &mut ckpt);
    ckpt.write(&out.join("model.ckpt"))?;
    // closed-form pipelines have no epochs; the history is an empty table
    write_bytes(&out.join("history.csv"), b"epoch,train_loss,val_acc\n")?;
    println!("test_acc={acc:.9e}");
    Ok(())
}

fn train_network(
    cfg: &ExperimentConfig,
    task: &TaskData,
    out: &Path,
    init_from: Option<&Path>,
) -> Result<(), CliError> {
    let init_params = build_init(cfg, task, init_from)?;
    let (params, history) = training::train_model(
        init_params,
        (&task.train.batch, &task.train.labels),
        (&task.val.batch, &task.val.labels),
        task.classes,
        &cfg.train,
    )?;
    let acc = training::evaluate_accuracy(&params, &task.test.batch, &task.test.labels)?;
    let mut ckpt = Checkpoint::new();
    checkpoint::encode_model(&params, &mut ckpt);
    ckpt.write(&out.join("model.ckpt"))?;
    write_bytes(&out.join("history.csv"), history.to_csv().as_bytes())?;
    println!("test_acc={acc:.9e}");
    Ok(())
}

/// Per-element reconstruction MSE over a batch, evaluated in chunks so
/// the 2T-step unrolls stay within memory.
fn reconstruction_mse(
    model: &diagnostics::ReconstructionModel,
    batch: &SequenceBatch,
) -> Result<f64, CliError> {
    const CHUNK: usize = 64;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let mut weighted = 0.0;
    for chunk in indices.chunks(CHUNK) {
        let seqs: Vec<&Matrix> = chunk.iter().map(|&i| batch.sequence(i)).collect();
        let steps = steps_from_batch(&seqs)?;
        weighted += diagnostics::reconstruction_loss(model, &steps) * chunk.len() as f64;
    }
    Ok(weighted / batch.len().max(1) as f64)
}

fn train_reconstruction(
    cfg: &ExperimentConfig,
    task: &TaskData,
    out: &Path,
) -> Result<(), CliError> {
    let d = task.train.batch.dim();
    let init_model = match cfg.model {
        ModelChoice::Rnn => diagnostics::init_reconstruction_rnn(cfg.p, d, cfg.seed, true),
        ModelChoice::Lstm => diagnostics::init_reconstruction_lstm(cfg.p, d, cfg.seed),
        _ => unreachable!("validated: reconstruction is rnn or lstm"),
    };
    let (model, losses) =
        diagnostics::reconstruction_trainer(init_model, &task.train.batch, &cfg.train)?;
    let mut ckpt = Checkpoint::new();
    checkpoint::encode_recon(&model, &mut ckpt);
    ckpt.write(&out.join("model.ckpt"))?;
    let mut csv = String::from("epoch,train_loss\n");
    for (i, loss) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{:.9e}\n", i + 1, loss));
    }
    write_bytes(&out.join("history.csv"), csv.as_bytes())?;
    let mse = reconstruction_mse(&model, &task.test.batch)?;
    println!("recon_mse={mse:.9e}");
    Ok(())
}

fn input_dim_of(params: &ModelParams) -> usize {
    match params {
        ModelParams::LinearRnn(p) => p.a.cols(),
        ModelParams::Rnn(p) => p.v.cols(),
        ModelParams::Lmn(p) => p.w_xh.cols(),
        ModelParams::Lstm(p) => p.w_i.cols() - p.b_i.cols(),
    }
}

/// Probes gradient propagation through a trained network on a batch of
/// Gaussian sequences and writes `grad_curve.csv` (rows from t = T down
/// to 0, thinned by `grad_stride`).
pub fn cmd_probe_grad(cfg: &ExperimentConfig, ckpt_path: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint::read(ckpt_path)?;
    let params = checkpoint::decode_model(&ckpt).map_err(|_| {
        CliError::Usage(
            "gradient probe needs a trained-network checkpoint (model.ckpt from `train`)".into(),
        )
    })?;
    let d = input_dim_of(&params);
    let mut rng = SplitMix64::derive(cfg.seed, 3);
    let seqs: Vec<Matrix> = (0..cfg.grad_batch)
        .map(|_| Matrix::from_fn(cfg.grad_len, d, |_, _| rng.next_normal()))
        .collect();
    let batch = SequenceBatch::new(seqs)?;
    let curve = diagnostics::gradient_through_time(&params, &batch, cfg.train.trunc_p, cfg.seed)?;
    let out = ensure_out_dir(cfg)?;
    write_bytes(&out.join("grad_curve.csv"), curve.to_csv(cfg.grad_stride).as_bytes())?;
    Ok(())
}

/// State trajectory (T x p) of the probed state for one sequence: the
/// memory for linear RNN and LMN, the hidden state for RNN and LSTM —
/// the same states the gradient diagnostics track.
fn state_trajectory(params: &ModelParams, seq: &Matrix) -> Result<Matrix, CliError> {
    let steps = steps_from_seq(seq);
    let trace = params.forward(&steps)?;
    let states: &[Matrix] = match &trace {
        ForwardTrace::LinearRnn(t) => &t.states,
        ForwardTrace::Rnn(t) => &t.hidden,
        ForwardTrace::Lmn(t) => &t.memory,
        ForwardTrace::Lstm(t) => &t.hidden,
    };
    let p = states[0].cols();
    let mut out = Matrix::zeros(states.len(), p);
    for (t, s) in states.iter().enumerate() {
        out.row_mut(t).copy_from_slice(s.row(0));
    }
    Ok(out)
}

/// Ridge-regresses past inputs from present states at each configured
/// lag, over the test split, and writes `lag_probe.csv`.
pub fn cmd_probe_reco(cfg: &ExperimentConfig, ckpt_path: &Path) -> Result<(), CliError> {
    let task = load_task(cfg)?;
    let ckpt = Checkpoint::read(ckpt_path)?;
    let inputs: Vec<Matrix> = task.test.batch.iter().cloned().collect();
    let (states, tag) = if ckpt.contains("laes.a") {
        let m = checkpoint::decode_laes(&ckpt)?;
        let states: Result<Vec<Matrix>, LaesError> =
            task.test.batch.iter().map(|s| laes::laes_encode(&m, s)).collect();
        (states?, "laes".to_string())
    } else {
        let params = checkpoint::decode_model(&ckpt)?;
        let mut states = Vec::with_capacity(task.test.len());
        for s in task.test.batch.iter() {
            states.push(state_trajectory(&params, s)?);
        }
        (states, cfg.model_tag())
    };
    let results =
        diagnostics::lag_reconstruction_probe(&states, &inputs, &cfg.probe_lags, cfg.train.ridge)?;
    let out = ensure_out_dir(cfg)?;
    write_bytes(
        &out.join("lag_probe.csv"),
        diagnostics::lag_probe_csv(&results, &tag).as_bytes(),
    )?;
    Ok(())
}

/// Reconstructs test image `recon_sample` from a checkpoint (closed-form
/// autoencoder or trained reconstruction network), writes
/// `original.pgm` / `reconstruction.pgm`, and prints the per-pixel MAE.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, ckpt_path: &Path) -> Result<(), CliError> {
    if cfg.task != Task::SeqMnist {
        return Err(CliError::Usage(
            "reconstruct draws images, so it needs task = seq_mnist".into(),
        ));
    }
    let task = load_task(cfg)?;
    if cfg.recon_sample >= task.test.len() {
        return Err(CliError::Usage(format!(
            "key `recon_sample`: index {} out of range, test split has {} sequences",
            cfg.recon_sample,
            task.test.len()
        )));
    }
    let seq = task.test.batch.sequence(cfg.recon_sample);
    let side = task.side;
    let ckpt = Checkpoint::read(ckpt_path)?;
    let recon = if ckpt.contains("laes.a") {
        diagnostics::image_reconstruction_laes(&checkpoint::decode_laes(&ckpt)?, seq, side)?
    } else {
        diagnostics::image_reconstruction_trained(&checkpoint::decode_recon(&ckpt)?, seq, side)?
    };
    let original = Matrix::from_fn(side, side, |r, c| seq.at(r * side + c, 0));
    let out = ensure_out_dir(cfg)?;
    for (name, image) in [("original.pgm", &original), ("reconstruction.pgm", &recon)] {
        let path = out.join(name);
        diagnostics::write_pgm(&path, image)
            .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    }
    println!("recon_mae={:.9e}", diagnostics::per_pixel_mae(&original, &recon));
    Ok(())
}

/// Prints the test accuracy of a checkpoint: a trained network directly,
/// or an autoencoder checkpoint through its bundled head.
pub fn cmd_eval(cfg: &ExperimentConfig, ckpt_path: &Path) -> Result<(), CliError> {
    let task = load_task(cfg)?;
    let ckpt = Checkpoint::read(ckpt_path)?;
    let acc = if ckpt.contains("laes.a") {
        let m = checkpoint::decode_laes(&ckpt)?;
        let head = checkpoint::decode_head(&ckpt)?;
        let states = laes::laes_encode_final(&m, &task.test.batch)?;
        head_accuracy_on(&head, &states, &task.test.labels)
    } else {
        let params = checkpoint::decode_model(&ckpt)?;
        training::evaluate_accuracy(&params, &task.test.batch, &task.test.labels)?
    };
    println!("test_acc={acc:.9e}");
    Ok(())
}
