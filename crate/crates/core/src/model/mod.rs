//! Pseudo-value regression: a feedforward network (msPseudo) and its
//! zero-hidden-layer special case (LinearPseudo).
//!
//! Inputs are standardized covariates, followed for landmark tasks by a
//! one-hot encoding of the state observed at `s`. Outputs are independent
//! sigmoid heads, one per `(target, grid point)`, trained on masked mean
//! squared error against the pseudo values.

mod cv;
mod network;

use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultiStateDataset;
use crate::estimators::TimeGrid;
use crate::pseudo::{PseudoError, PseudoValueTable, Target, Task};

pub use cv::{
    cross_validate, fold_assignments, Candidate, CandidateSummary, CvSettings, CvSummary, FoldOutcome, ModelKind,
};
pub use network::{Activation, Dense, Mlp, NetworkSpec};
use network::Adam;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("loss became non-finite at epoch {epoch} (learning rate {learning_rate})")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("fold {fold} has {size} subjects, at least {needed} required")]
    FoldTooSmall { fold: usize, size: usize, needed: usize },
    #[error("no training rows in scope")]
    NoTrainingRows,
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 10_000,
            patience: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidSpec(
                "max_epochs, patience and batch_size must be at least 1".into(),
            ));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(ModelError::InvalidSpec(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Hidden architecture; input and output widths follow from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            activation: Activation::Relu,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl Architecture {
    /// The LinearPseudo architecture: sigmoid of an affine map.
    pub fn linear(seed: u64) -> Self {
        Self {
            hidden_layers: Vec::new(),
            activation: Activation::Relu,
            dropout_rate: 0.0,
            seed,
        }
    }

    pub fn network_spec(&self, input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_layers: self.hidden_layers.clone(),
            activation: self.activation,
            dropout_rate: self.dropout_rate,
            output_dim,
            seed: self.seed,
        }
    }
}

/// Column-wise affine standardization; constant columns keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let scale = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    pub fn apply_row(&self, row: ArrayView1<f64>, out: &mut [f64]) {
        for (j, v) in row.iter().enumerate() {
            out[j] = (v - self.mean[j]) / self.scale[j];
        }
    }
}

/// Maps covariates (and the landmark state) to network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub standardizer: Standardizer,
    /// Number of states for the one-hot landmark encoding (landmark tasks).
    pub landmark_states: Option<usize>,
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len() + self.landmark_states.unwrap_or(0)
    }

    pub fn features(&self, covariates: ArrayView2<f64>, states: &[Option<usize>]) -> Result<Array2<f64>, ModelError> {
        let p = self.standardizer.mean.len();
        if covariates.ncols() != p {
            return Err(ModelError::ShapeMismatch(format!(
                "{} covariates, model expects {p}",
                covariates.ncols()
            )));
        }
        if self.landmark_states.is_some() && states.len() != covariates.nrows() {
            return Err(ModelError::ShapeMismatch("landmark states do not align with covariate rows".into()));
        }
        let mut out = Array2::zeros((covariates.nrows(), self.input_dim()));
        for (i, row) in covariates.axis_iter(Axis(0)).enumerate() {
            let mut o = out.row_mut(i);
            let o = o.as_slice_mut().expect("row-major");
            self.standardizer.apply_row(row, &mut o[..p]);
            if let (Some(k), Some(Some(j))) = (self.landmark_states, states.get(i)) {
                if (1..=k).contains(j) {
                    o[p + j - 1] = 1.0;
                }
            }
        }
        Ok(out)
    }
}

/// Per-epoch losses; `best_epoch` is the epoch whose weights were kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub best_epoch: usize,
}

/// Partition of subject indices for early stopping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    pub fn all(rows: &[usize]) -> Self {
        Self {
            train: rows.to_vec(),
            validation: Vec::new(),
        }
    }
}

/// Holds out `fraction` of `rows` within each final-observed-state stratum.
pub fn stratified_split(dataset: &MultiStateDataset, rows: &[usize], fraction: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_states() + 1];
    for &i in rows {
        strata[dataset.subject(i).final_state()].push(i);
    }
    let mut split = Split::default();
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        let v = (stratum.len() as f64 * fraction).round() as usize;
        split.validation.extend_from_slice(&stratum[..v]);
        split.train.extend_from_slice(&stratum[v..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split
}

/// Minibatch Adam on masked MSE with early stopping on the validation loss
/// (the training loss when `validation` is empty). The best weights are
/// restored at the end.
pub fn train_network(
    mut net: Mlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    train: &[usize],
    validation: &[usize],
    cfg: &TrainConfig,
) -> Result<(Mlp, LossHistory), ModelError> {
    cfg.check()?;
    if x.ncols() != net.spec.input_dim || y.ncols() != net.spec.output_dim || x.nrows() != y.nrows() {
        return Err(ModelError::ShapeMismatch(format!(
            "inputs {:?} and targets {:?} do not fit network {} -> {}",
            x.dim(),
            y.dim(),
            net.spec.input_dim,
            net.spec.output_dim
        )));
    }
    if train.is_empty() {
        return Err(ModelError::NoTrainingRows);
    }
    let xt = x.select(Axis(0), train);
    let yt = y.select(Axis(0), train);
    let xv = x.select(Axis(0), validation);
    let yv = y.select(Axis(0), validation);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&net, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam);
    let mut history = LossHistory::default();
    let mut best = (f64::INFINITY, net.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0usize;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bx = xt.select(Axis(0), batch);
            let by = yt.select(Axis(0), batch);
            let (loss, grads) = net.loss_and_gradients(bx.view(), by.view(), Some(&mut rng));
            if !loss.is_finite() || grads.iter().any(|(w, b)| !w.iter().chain(b).all(|v| v.is_finite())) {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            adam.step(&mut net, &grads);
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / train.len() as f64;
        history.train.push(train_loss);
        let monitored = if validation.is_empty() {
            train_loss
        } else {
            let v = net.loss(xv.view(), yv.view())?;
            history.validation.push(v);
            v
        };
        if !monitored.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        if monitored < best.0 {
            best = (monitored, net.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}

/// A trained pseudo-value regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoModel {
    pub task: Task,
    pub grid: TimeGrid,
    pub conditioning_time: f64,
    pub targets: Vec<Target>,
    pub num_states: usize,
    pub features: FeatureMap,
    pub network: Mlp,
}

/// Trains msPseudo on the in-scope subjects of `pseudo`. `covariates` rows
/// align with the pseudo-value rows; `split` holds subject row indices.
pub fn train_mspseudo(
    covariates: ArrayView2<f64>,
    pseudo: &PseudoValueTable,
    num_states: usize,
    architecture: &Architecture,
    cfg: &TrainConfig,
    split: &Split,
) -> Result<(PseudoModel, LossHistory), ModelError> {
    if covariates.nrows() != pseudo.num_subjects() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} covariate rows for {} pseudo-value rows",
            covariates.nrows(),
            pseudo.num_subjects()
        )));
    }
    let mut scope = vec![false; pseudo.num_subjects()];
    for i in pseudo.in_scope() {
        scope[i] = true;
    }
    let train: Vec<usize> = split.train.iter().copied().filter(|&i| scope[i]).collect();
    let validation: Vec<usize> = split.validation.iter().copied().filter(|&i| scope[i]).collect();
    if train.is_empty() {
        return Err(ModelError::NoTrainingRows);
    }
    let features = FeatureMap {
        standardizer: Standardizer::fit(covariates.select(Axis(0), &train).view()),
        landmark_states: pseudo.task.is_landmark().then_some(num_states),
    };
    let x = features.features(covariates, &pseudo.landmark_states)?;
    let spec = architecture.network_spec(features.input_dim(), pseudo.values.ncols());
    let net = Mlp::new(spec)?;
    let (network, history) = train_network(net, x.view(), pseudo.values.view(), &train, &validation, cfg)?;
    let model = PseudoModel {
        task: pseudo.task,
        grid: pseudo.grid.clone(),
        conditioning_time: pseudo.conditioning_time,
        targets: pseudo.targets.clone(),
        num_states,
        features,
        network,
    };
    Ok((model, history))
}

/// LinearPseudo: [`train_mspseudo`] with no hidden layer.
pub fn train_linear_pseudo(
    covariates: ArrayView2<f64>,
    pseudo: &PseudoValueTable,
    num_states: usize,
    cfg: &TrainConfig,
    split: &Split,
) -> Result<(PseudoModel, LossHistory), ModelError> {
    train_mspseudo(covariates, pseudo, num_states, &Architecture::linear(cfg.seed), cfg, split)
}

/// Predicted quantities per subject and `(target, grid point)`. Cells of
/// subjects outside a target's scope are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub task: Task,
    pub grid: TimeGrid,
    pub conditioning_time: f64,
    pub targets: Vec<Target>,
    pub subject_ids: Vec<String>,
    /// `n x (targets * M)`.
    pub values: Array2<f64>,
    /// `n x targets`.
    pub scope: Array2<bool>,
}

impl PredictionMatrix {
    pub fn num_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn value(&self, subject: usize, target: usize, m: usize) -> f64 {
        self.values[[subject, target * self.grid.len() + m]]
    }

    /// Rescales state predictions to sum to one at each grid point (SOP
    /// tasks only; off unless requested).
    pub fn renormalize(&mut self) {
        if self.task == Task::Tp {
            return;
        }
        let m = self.grid.len();
        let t = self.targets.len();
        for i in 0..self.num_subjects() {
            for g in 0..m {
                let total: f64 = (0..t).map(|k| self.values[[i, k * m + g]]).filter(|v| v.is_finite()).sum();
                if total > 0.0 {
                    for k in 0..t {
                        self.values[[i, k * m + g]] /= total;
                    }
                }
            }
        }
    }
}

/// Scope of subject `state_at_s` for `target`.
pub(crate) fn target_in_scope(task: Task, target: Target, state_at_s: Option<usize>) -> bool {
    match (task, target) {
        (Task::Sop, _) => true,
        (Task::DynamicSop, _) => state_at_s.is_some(),
        (Task::Tp, Target::Transition(j, _)) => state_at_s == Some(j),
        (Task::Tp, Target::State(_)) => false,
    }
}

/// Deterministic forward pass. `states` are the states observed at the
/// conditioning time (ignored for the SOP).
pub fn predict(
    model: &PseudoModel,
    covariates: ArrayView2<f64>,
    states: &[Option<usize>],
    subject_ids: Vec<String>,
) -> Result<PredictionMatrix, ModelError> {
    let n = covariates.nrows();
    if subject_ids.len() != n {
        return Err(ModelError::ShapeMismatch("subject ids do not align with covariate rows".into()));
    }
    let none = vec![None; n];
    let states = if model.task.is_landmark() { states } else { &none };
    let x = model.features.features(covariates, states)?;
    let mut values = model.network.forward(x.view())?;
    let scope = scope_matrix(model.task, &model.targets, states);
    mask(&mut values, &scope, model.grid.len());
    Ok(PredictionMatrix {
        task: model.task,
        grid: model.grid.clone(),
        conditioning_time: model.conditioning_time,
        targets: model.targets.clone(),
        subject_ids,
        values,
        scope,
    })
}

/// [`predict`] for the subjects of a dataset, reading their state at the
/// conditioning time from the data.
pub fn predict_dataset(model: &PseudoModel, dataset: &MultiStateDataset) -> Result<PredictionMatrix, ModelError> {
    let states: Vec<Option<usize>> = (0..dataset.len())
        .map(|i| dataset.state_at_index(i, model.conditioning_time))
        .collect();
    let ids = dataset.subjects().iter().map(|p| p.id.clone()).collect();
    predict(model, dataset.covariates().view(), &states, ids)
}

pub(crate) fn scope_matrix(task: Task, targets: &[Target], states: &[Option<usize>]) -> Array2<bool> {
    Array2::from_shape_fn((states.len(), targets.len()), |(i, t)| {
        target_in_scope(task, targets[t], states[i])
    })
}

pub(crate) fn mask(values: &mut Array2<f64>, scope: &Array2<bool>, m: usize) {
    for ((i, t), &inside) in scope.indexed_iter() {
        if !inside {
            values.slice_mut(s![i, t * m..(t + 1) * m]).fill(f64::NAN);
        }
    }
}

/// Current checkpoint schema version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: PseudoModel,
}

/// Writes a JSON checkpoint: `{"format_version": 1, "model": {...}}`.
pub fn save_checkpoint<W: Write>(model: &PseudoModel, writer: W) -> Result<(), ModelError> {
    let ck = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    serde_json::to_writer_pretty(writer, &ck).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<R: Read>(reader: R) -> Result<PseudoModel, ModelError> {
    let ck: Checkpoint = serde_json::from_reader(reader).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {}",
            ck.format_version
        )));
    }
    ck.model.network.spec.check()?;
    Ok(ck.model)
}
