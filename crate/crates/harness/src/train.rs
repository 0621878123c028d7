//! Mini-batch training with Adam, per-epoch validation and resumable state.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use gres_core::encoders::Vocabulary;
use gres_core::metrics::EvalReport;
use gres_core::model::GresModel;
use gres_core::numcore::{checkpoint, ParamSet, Tape, Tensor};
use gres_core::objective::{compute_loss, LossWeights};
use gres_core::GresError;
use gres_synth::Split;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::data::{encode_examples, load_split, Encoded};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate_model, MODEL_FILE, VOCAB_FILE};

pub const CHECKPOINT_FILE: &str = "checkpoint.grela";
pub const STATE_FILE: &str = "state.grela";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train.log";

/// Adaptive moment estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    /// First and second moments, in parameter registration order.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, p)| vec![0.0; p.tensor.numel()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&p.grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Mean loss terms over one epoch plus validation results.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_mask: f64,
    pub l_minimap: f64,
    pub l_nt: f64,
    pub total: f64,
    pub val_giou: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch {} l_mask={:.6} l_minimap={:.6} l_nt={:.6} total={:.6} val_giou={:.4}",
            self.epoch, self.l_mask, self.l_minimap, self.l_nt, self.total, self.val_giou
        )
    }
}

/// Named parameter values, detached from a [`ParamSet`].
pub type Snapshot = Vec<(String, Tensor)>;

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub model: GresModel,
    pub adam: Adam,
    /// Epoch, validation gIoU and parameters of the best epoch so far.
    pub best: Option<(usize, f64, Snapshot)>,
    pub history: Vec<EpochLog>,
}

fn snapshot(params: &ParamSet) -> Vec<(String, Tensor)> {
    params
        .sorted()
        .map(|p| (p.name.clone(), p.tensor.clone()))
        .collect()
}

impl TrainState {
    pub fn new(model: GresModel, lr: f64) -> Self {
        let adam = Adam::new(&model.params, lr);
        TrainState {
            epoch: 0,
            step: 0,
            model,
            adam,
            best: None,
            history: Vec::new(),
        }
    }

    /// Parameters of the best epoch so far, or the current ones before any epoch.
    pub fn best_params(&self) -> Vec<(String, Tensor)> {
        match &self.best {
            Some((_, _, p)) => p.clone(),
            None => snapshot(&self.model.params),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        for (((_, p), m), v) in self.model.params.iter().zip(&self.adam.m).zip(&self.adam.v) {
            let shape = p.tensor.shape().to_vec();
            entries.push((format!("param/{}", p.name), p.tensor.clone()));
            entries.push((
                format!("adam_m/{}", p.name),
                Tensor::new(shape.clone(), m.clone()).unwrap(),
            ));
            entries.push((
                format!("adam_v/{}", p.name),
                Tensor::new(shape, v.clone()).unwrap(),
            ));
        }
        let (best_epoch, best_giou) = match &self.best {
            Some((e, g, params)) => {
                for (name, t) in params {
                    entries.push((format!("best/{name}"), t.clone()));
                }
                (*e as f64, *g)
            }
            None => (-1.0, f64::NAN),
        };
        let counters = vec![
            self.epoch as f64,
            self.step as f64,
            self.adam.t as f64,
            best_epoch,
            best_giou,
        ];
        entries.push((
            "state/counters".into(),
            Tensor::new(vec![5], counters).unwrap(),
        ));
        let hist: Vec<f64> = self
            .history
            .iter()
            .flat_map(|h| {
                [
                    h.epoch as f64,
                    h.l_mask,
                    h.l_minimap,
                    h.l_nt,
                    h.total,
                    h.val_giou,
                ]
            })
            .collect();
        if !self.history.is_empty() {
            entries.push((
                "state/history".into(),
                Tensor::new(vec![self.history.len(), 6], hist).unwrap(),
            ));
        }
        checkpoint::encode(entries.iter().map(|(n, t)| (n.as_str(), t)))
    }

    /// Restores a state written by [`TrainState::to_bytes`] into a freshly built model.
    pub fn from_bytes(mut model: GresModel, lr: f64, bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| GresError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let entries = checkpoint::decode(bytes, path)?;
        let get = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let mut params = Vec::new();
        let mut best = Vec::new();
        for (n, t) in &entries {
            if let Some(rest) = n.strip_prefix("param/") {
                params.push((rest.to_string(), t.clone()));
            } else if let Some(rest) = n.strip_prefix("best/") {
                best.push((rest.to_string(), t.clone()));
            }
        }
        model.params.assign(params)?;
        let mut adam = Adam::new(&model.params, lr);
        for (i, (_, p)) in model.params.iter().enumerate() {
            let m =
                get(&format!("adam_m/{}", p.name)).ok_or_else(|| bad("missing first moment"))?;
            let v =
                get(&format!("adam_v/{}", p.name)).ok_or_else(|| bad("missing second moment"))?;
            if m.numel() != adam.m[i].len() || v.numel() != adam.v[i].len() {
                return Err(bad("optimizer moment has the wrong size").into());
            }
            adam.m[i] = m.data().to_vec();
            adam.v[i] = v.data().to_vec();
        }
        let c = get("state/counters")
            .ok_or_else(|| bad("missing counters"))?
            .data()
            .to_vec();
        if c.len() != 5 {
            return Err(bad("malformed counters").into());
        }
        adam.t = c[2] as u64;
        let best = if c[3] >= 0.0 {
            Some((c[3] as usize, c[4], best))
        } else {
            None
        };
        let history: Vec<EpochLog> = match get("state/history") {
            Some(h) => h.data().chunks(6),
            None if c[0] == 0.0 => [].chunks(6),
            None => return Err(bad("missing history").into()),
        }
        .map(|r| EpochLog {
            epoch: r[0] as usize,
            l_mask: r[1],
            l_minimap: r[2],
            l_nt: r[3],
            total: r[4],
            val_giou: r[5],
        })
        .collect();
        if history.len() != c[0] as usize {
            return Err(bad("history length disagrees with the epoch counter").into());
        }
        Ok(TrainState {
            epoch: c[0] as usize,
            step: c[1] as u64,
            model,
            adam,
            best,
            history,
        })
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

/// Runs one epoch of shuffled mini-batch Adam. Loss terms are checked for
/// finiteness on every sample; the first non-finite one aborts training.
pub fn run_epoch(
    state: &mut TrainState,
    train: &[Encoded],
    weights: &LossWeights,
    batch_size: usize,
    seed: u64,
) -> Result<[f64; 4]> {
    let epoch = state.epoch + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    let mut sums = [0.0; 4];
    for batch in order.chunks(batch_size) {
        state.model.params.zero_grad();
        for &i in batch {
            let s = &train[i];
            let mut tape = Tape::new();
            let vars = state.model.forward(&mut tape, &s.image, &s.ids)?;
            let (loss, br) = compute_loss(&mut tape, &vars, &s.targets, weights)?;
            for (name, v) in [
                ("l_mask", br.l_mask),
                ("l_minimap", br.l_minimap),
                ("l_nt", br.l_nt),
            ] {
                if !v.is_finite() {
                    return Err(HarnessError::Numerical(format!(
                        "{name} = {v} at epoch {epoch}, step {}, sample {i}",
                        state.step + 1
                    )));
                }
            }
            for (acc, v) in sums
                .iter_mut()
                .zip([br.l_mask, br.l_minimap, br.l_nt, br.total])
            {
                *acc += v;
            }
            tape.backward(loss)?
                .accumulate_into(&mut state.model.params);
        }
        let inv = 1.0 / batch.len() as f64;
        for p in state.model.params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= inv);
        }
        state.adam.step(&mut state.model.params);
        state.step += 1;
    }
    state.epoch = epoch;
    let n = train.len().max(1) as f64;
    Ok(sums.map(|s| s / n))
}

/// Trains until `cfg.epochs`, validating after every epoch and keeping the
/// parameters with the best validation gIoU (earliest wins ties).
pub fn fit(
    state: &mut TrainState,
    cfg: &Config,
    train: &[Encoded],
    val: &[Encoded],
    mut on_epoch: impl FnMut(&TrainState, &EpochLog) -> Result<()>,
) -> Result<()> {
    let weights = cfg.loss_weights();
    let predict_cfg = cfg.predict_config();
    while state.epoch < cfg.epochs {
        let [l_mask, l_minimap, l_nt, total] =
            run_epoch(state, train, &weights, cfg.batch_size, cfg.seed)?;
        let val_giou = if val.is_empty() {
            0.0
        } else {
            evaluate_model(&state.model, val, &predict_cfg)?.giou
        };
        let log = EpochLog {
            epoch: state.epoch,
            l_mask,
            l_minimap,
            l_nt,
            total,
            val_giou,
        };
        if state.best.as_ref().is_none_or(|(_, g, _)| val_giou > *g) {
            state.best = Some((state.epoch, val_giou, snapshot(&state.model.params)));
        }
        state.history.push(log);
        on_epoch(state, &log)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub best_epoch: Option<usize>,
    pub best_val_giou: Option<f64>,
    pub history: Vec<EpochLog>,
    pub val_report: Option<EvalReport>,
}

/// The settings a resumed run must share with the saved one: everything but
/// the epoch budget and the paths.
fn resume_key(cfg: &Config) -> String {
    let mut c = cfg.clone();
    c.epochs = 0;
    c.data_dir = None;
    c.out_dir = None;
    c.to_string()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| GresError::io(path, e).into())
}

/// The full `train` command: load data, build or resume state, train, write artifacts.
pub fn train(
    cfg: &Config,
    data_dir: &Path,
    out_dir: &Path,
    resume: bool,
    mut log: impl FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ex = load_split(data_dir, Split::Train)?;
    let val_ex = load_split(data_dir, Split::Val)?;
    let vocab = Vocabulary::build(train_ex.iter().map(|e| e.expression.as_str()));
    let model_cfg = cfg.model_config(vocab.len());
    let model = GresModel::new(model_cfg, cfg.seed)?;
    let train_set = encode_examples(&train_ex, &vocab, &model_cfg)?;
    let val_set = encode_examples(&val_ex, &vocab, &model_cfg)?;

    fs::create_dir_all(out_dir).map_err(|e| GresError::io(out_dir, e))?;
    let state_path = out_dir.join(STATE_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let mut state = if resume {
        let saved_path = out_dir.join(CONFIG_FILE);
        let saved = Config::load(&saved_path)?;
        if resume_key(&saved) != resume_key(cfg) {
            return Err(HarnessError::Config(
                "resume config differs from the saved run in more than epochs and paths".into(),
            ));
        }
        let bytes = fs::read(&state_path).map_err(|e| GresError::io(&state_path, e))?;
        TrainState::from_bytes(model, cfg.learning_rate, &bytes, &state_path)?
    } else {
        write(&log_path, b"")?;
        TrainState::new(model, cfg.learning_rate)
    };
    write(&out_dir.join(CONFIG_FILE), cfg.to_string().as_bytes())?;
    write(
        &out_dir.join(MODEL_FILE),
        model_cfg.to_key_values().as_bytes(),
    )?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;
    log(&format!(
        "training on {} samples ({} val), {} parameters, vocabulary {}",
        train_set.len(),
        val_set.len(),
        state.model.params.num_scalars(),
        vocab.len()
    ));

    fit(&mut state, cfg, &train_set, &val_set, |state, entry| {
        let line = entry.line();
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| GresError::io(&log_path, e))?;
        writeln!(f, "{line}").map_err(|e| GresError::io(&log_path, e))?;
        write(&state_path, &state.to_bytes())?;
        log(&line);
        Ok(())
    })?;
    if state.epoch == 0 && !state_path.exists() {
        write(&state_path, &state.to_bytes())?;
    }

    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let best = state.best_params();
    write(
        &ckpt,
        &checkpoint::encode(best.iter().map(|(n, t)| (n.as_str(), t))),
    )?;
    let val_report = if val_set.is_empty() {
        None
    } else {
        let mut best_model = state.model.clone();
        best_model.params.assign(best)?;
        Some(evaluate_model(
            &best_model,
            &val_set,
            &cfg.predict_config(),
        )?)
    };
    Ok(TrainOutcome {
        out_dir: out_dir.to_path_buf(),
        checkpoint: ckpt,
        best_epoch: state.best.as_ref().map(|b| b.0),
        best_val_giou: state.best.as_ref().map(|b| b.1),
        history: state.history,
        val_report,
    })
}
