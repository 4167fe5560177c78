//! Optimization loop, evaluation and ablation sweeps.

mod ablation;
mod eval;
mod optim;

pub use ablation::{run_ablation, AblationRow, AblationSpec, AblationTable, OccludedSet, SeedResult};
pub use eval::{evaluate, evaluate_predictions, EvalReport, SequenceMetrics};
pub use optim::{lr_at, AdamW};

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::blob::{self, ArrayEntry};
use crate::error::{invalid, Error, Result};
use crate::handkin::{forward_graph, HandModel, HandTemplate};
use crate::losses::{close_indices, total_loss_graph, LossBreakdown, LossWeights};
use crate::net::{decode_row, load_model, save_model, ForwardOptions, Model, NetConfig, Variant};
use crate::synthdata::{DataConfig, SequenceSample, CHANNELS};

pub const TRAINER_STATE: &str = "trainer.json";
pub const OPTIMIZER_BLOB: &str = "optimizer.bin";
pub const MODEL_DIR: &str = "model";
const STATE_FORMAT: &str = "ratsir-trainer-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Network size preset; ignored when `net` is given.
    pub profile: String,
    pub net: Option<NetConfig>,
    pub lr0: f64,
    pub steps: usize,
    /// Sequences per optimizer step.
    pub batch: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::CrossSSeq,
            profile: "desk".into(),
            net: None,
            lr0: 1e-3,
            steps: 500,
            batch: 4,
            seed: 0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            weights: LossWeights::default(),
            tau: crate::geom::DEFAULT_TAU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(invalid("steps and batch must be at least 1"));
        }
        if !(self.clip_norm > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("clip_norm must be positive and weight_decay nonnegative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(invalid("Adam betas must lie in [0, 1) and eps be positive"));
        }
        self.weights.validate()?;
        self.net_config()?.validate()
    }

    /// Network configuration with this run's `tau`.
    pub fn net_config(&self) -> Result<NetConfig> {
        let mut net = match &self.net {
            Some(n) => n.clone(),
            None => NetConfig::profile(&self.profile)?,
        };
        net.tau = self.tau;
        Ok(net)
    }

    pub fn lr(&self, step: usize) -> f64 {
        lr_at(self.lr0, step, self.steps)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Norm before clipping.
    pub grad_norm: f64,
}

/// Everything needed to build loss graphs for one dataset.
pub struct LossContext {
    pub right: Arc<HandTemplate>,
    pub left: Arc<HandTemplate>,
    pub weights: LossWeights,
    pub close_subset: Vec<usize>,
}

impl LossContext {
    pub fn new(hands: &HandModel, weights: LossWeights, seed: u64) -> Self {
        let close_subset = close_indices(hands.n_vertices(), weights.close_vertices, seed);
        Self {
            right: Arc::new(hands.right.clone()),
            left: Arc::new(hands.left.clone()),
            weights,
            close_subset,
        }
    }

    /// Frame-averaged loss of one sequence on a fresh tape.
    pub fn sequence_loss(&self, model: &Model, sample: &SequenceSample, opts: &ForwardOptions) -> Result<(Graph, Var, LossBreakdown)> {
        let mut g = Graph::new();
        let inputs = sample.inputs();
        let rows = model.forward_sequence(&mut g, &inputs, opts)?;
        let holistic = model.variant.holistic();
        let mut totals = Vec::with_capacity(rows.len());
        let mut breakdown = LossBreakdown::default();
        let inv_t = 1.0 / rows.len() as f64;
        for (row, frame) in rows.into_iter().zip(&sample.frames) {
            let pv = decode_row(&mut g, row);
            let right = forward_graph(&mut g, &self.right, pv.theta_r, pv.beta_r);
            let left = forward_graph(&mut g, &self.left, pv.theta_l, pv.beta_l);
            let target = frame.targets(holistic);
            let lv = total_loss_graph(&mut g, &pv, right, left, &target, &self.weights, Some(&self.close_subset));
            breakdown.add_scaled(&lv.breakdown(&g), inv_t);
            totals.push(lv.total);
        }
        let stacked = g.concat_cols(&totals);
        let sum = g.sum(stacked);
        let loss = g.scale(sum, inv_t);
        Ok((g, loss, breakdown))
    }
}

/// Checks that samples fit the network input.
pub fn check_compatible(net: &NetConfig, data: &DataConfig, variant: Variant) -> Result<()> {
    if net.crop_h != data.crop_h || net.crop_w != data.crop_w {
        return Err(invalid(format!(
            "network expects {}x{} crops, dataset has {}x{}",
            net.crop_h, net.crop_w, data.crop_h, data.crop_w
        )));
    }
    if net.in_channels != CHANNELS {
        return Err(invalid(format!("network expects {} channels, renderer emits {CHANNELS}", net.in_channels)));
    }
    if variant.holistic() && !data.render_union {
        return Err(invalid("the holistic variant needs a dataset rendered with union crops"));
    }
    if variant.uses_temporal() && data.seq_len > net.seq_len {
        return Err(invalid(format!("sequences of {} frames exceed the temporal window {}", data.seq_len, net.seq_len)));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainerState {
    format: String,
    step: usize,
    config: TrainConfig,
    moments: Vec<ArrayEntry>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamW,
    /// Optimizer steps taken so far.
    pub step: usize,
    ctx: LossContext,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &DataConfig) -> Result<Self> {
        config.validate()?;
        let net = config.net_config()?;
        check_compatible(&net, data, config.variant)?;
        let mut model = Model::new(net, config.variant, config.seed)?;
        // Weights live at storage precision so checkpoints resume exactly.
        model.store.values_mut().iter_mut().for_each(|m| m.mapv_inplace(blob::round_f32));
        let optimizer = AdamW::new(&model.store);
        let ctx = LossContext::new(&data.hand_model()?, config.weights.clone(), config.seed);
        Ok(Self {
            config,
            model,
            optimizer,
            step: 0,
            ctx,
        })
    }

    pub fn loss_context(&self) -> &LossContext {
        &self.ctx
    }

    /// Sample indices used at `step`: a fresh shuffle every epoch.
    pub fn batch_indices(&self, step: usize, n: usize) -> Vec<usize> {
        let b = self.config.batch;
        (0..b)
            .map(|k| {
                let flat = step * b + k;
                let (epoch, pos) = (flat / n, flat % n);
                let mut order: Vec<usize> = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
                order.shuffle(&mut rng);
                order[pos]
            })
            .collect()
    }

    /// Mean loss and parameter gradients over `samples`.
    pub fn gradients(&self, samples: &[&SequenceSample]) -> Result<(LossBreakdown, Vec<Mat>)> {
        let mut breakdown = LossBreakdown::default();
        let mut acc: Vec<Mat> = self.model.store.values().iter().map(|m| Mat::zeros(m.dim())).collect();
        let inv_b = 1.0 / samples.len() as f64;
        for s in samples {
            let (g, loss, b) = self.ctx.sequence_loss(&self.model, s, &ForwardOptions::default())?;
            breakdown.add_scaled(&b, inv_b);
            let grads = g.backward(loss);
            for (a, d) in acc.iter_mut().zip(g.param_grads(&grads, &self.model.store)) {
                a.scaled_add(inv_b, &d);
            }
        }
        Ok((breakdown, acc))
    }

    /// One optimizer step on the scheduled batch.
    pub fn train_step(&mut self, dataset: &[SequenceSample]) -> Result<StepLog> {
        if dataset.is_empty() {
            return Err(invalid("training needs a nonempty dataset"));
        }
        let step = self.step;
        let batch: Vec<&SequenceSample> = self.batch_indices(step, dataset.len()).into_iter().map(|i| &dataset[i]).collect();
        let (loss, grads) = self.gradients(&batch)?;
        let grad_norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        if !loss.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {:?}, gradient norm {grad_norm}", loss),
            });
        }
        let lr = self.config.lr(step);
        let clip = if grad_norm > self.config.clip_norm { self.config.clip_norm / grad_norm } else { 1.0 };
        self.optimizer.update(&mut self.model.store, &grads, clip, lr, &self.config, step);
        self.step += 1;
        Ok(StepLog { step, lr, loss, grad_norm })
    }

    /// Steps until `config.steps`, reporting every log line.
    pub fn run(&mut self, dataset: &[SequenceSample], mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        while self.step < self.config.steps {
            let log = self.train_step(dataset)?;
            on_step(&log);
        }
        Ok(())
    }

    /// Writes the model, optimizer moments and step counter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_model(&self.model, &dir.join(MODEL_DIR))?;
        let names: Vec<(String, &Mat)> = self
            .model
            .store
            .names()
            .iter()
            .zip(self.optimizer.m.iter().zip(&self.optimizer.v))
            .flat_map(|(n, (m, v))| [(format!("m/{n}"), m), (format!("v/{n}"), v)])
            .collect();
        let (moments, data) = blob::encode(names.iter().map(|(n, m)| (n.as_str(), *m)));
        let state = TrainerState {
            format: STATE_FORMAT.into(),
            step: self.step,
            config: self.config.clone(),
            moments,
        };
        fs::write(dir.join(TRAINER_STATE), serde_json::to_string_pretty(&state)?)?;
        fs::write(dir.join(OPTIMIZER_BLOB), data)?;
        Ok(())
    }

    /// Resumes from a checkpoint written by [`Trainer::save`]. `steps`
    /// replaces the stored target step count when given.
    pub fn resume(dir: &Path, data: &DataConfig, steps: Option<usize>) -> Result<Self> {
        let state: TrainerState = serde_json::from_str(&fs::read_to_string(dir.join(TRAINER_STATE))?)?;
        if state.format != STATE_FORMAT {
            return Err(Error::DataIntegrity(format!("unknown trainer state format {:?}", state.format)));
        }
        let mut config = state.config;
        if let Some(s) = steps {
            config.steps = s;
        }
        config.validate()?;
        let model = load_model(&dir.join(MODEL_DIR))?;
        check_compatible(&model.config, data, model.variant)?;
        let arrays = blob::decode(&state.moments, &fs::read(dir.join(OPTIMIZER_BLOB))?)?;
        let mut optimizer = AdamW::new(&model.store);
        if arrays.len() != 2 * model.store.len() {
            return Err(Error::DataIntegrity("optimizer state does not match the model".into()));
        }
        for (i, pair) in arrays.chunks_exact(2).enumerate() {
            let name = &model.store.names()[i];
            let ok = pair[0].0 == format!("m/{name}") && pair[1].0 == format!("v/{name}") && pair[0].1.dim() == optimizer.m[i].dim();
            if !ok {
                return Err(Error::DataIntegrity(format!("optimizer state for {name} is missing or misshapen")));
            }
            optimizer.m[i] = pair[0].1.clone();
            optimizer.v[i] = pair[1].1.clone();
        }
        let ctx = LossContext::new(&data.hand_model()?, config.weights.clone(), config.seed);
        Ok(Self {
            config,
            model,
            optimizer,
            step: state.step,
            ctx,
        })
    }
}

/// Trains a fresh model on `dataset` and returns it with its log.
pub fn train(config: &TrainConfig, data: &DataConfig, dataset: &[SequenceSample]) -> Result<(Model, Vec<StepLog>)> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    let mut logs = Vec::with_capacity(config.steps);
    trainer.run(dataset, |l| logs.push(l.clone()))?;
    Ok((trainer.model, logs))
}
