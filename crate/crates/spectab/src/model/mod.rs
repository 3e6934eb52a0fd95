//! Feature-tokenized transformer with optional positional-encoding columns.
//!
//! Each feature becomes one token `[x_i * w_i + b_i ; pe_i]` of total width
//! `d_token`; a learnable CLS token (zero PE block) is prepended and the
//! prediction head reads the final CLS row of the residual stream. The PE
//! block is filled according to [`PeMode`]: zeros, a fixed matrix (spectral
//! or random, already alpha-scaled), or a trainable table.
//!
//! Training uses AdamW with decoupled weight decay, early stopping on a
//! validation metric, and best-epoch weight restoration. All randomness is
//! seeded; a fixed seed reproduces weights bit-for-bit.

pub mod params;
mod net;

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use net::single_head_attention;
pub use params::{load_checkpoint, save_checkpoint, AdamW, Param, ParamSet};

/// How the PE block of each feature token is populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// Zero PE block (baseline with identical parameter count to `Fixed`).
    None,
    /// Fixed precomputed rows (spectral encodings, already alpha-scaled).
    Fixed,
    /// Fixed random rows (set via [`FtTransformer::set_fixed_pe`]).
    Random,
    /// Trainable PE table, normal(0, 0.02) init.
    Learnable,
}

impl std::str::FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PeMode::None),
            "fixed" => Ok(PeMode::Fixed),
            "random" => Ok(PeMode::Random),
            "learnable" => Ok(PeMode::Learnable),
            other => Err(Error::InvalidArgument(format!(
                "unknown pe mode '{other}' (expected none|fixed|random|learnable)"
            ))),
        }
    }
}

impl std::fmt::Display for PeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PeMode::None => "none",
            PeMode::Fixed => "fixed",
            PeMode::Random => "random",
            PeMode::Learnable => "learnable",
        };
        f.write_str(s)
    }
}

/// Prediction task; fixes the head width and the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    /// Number of classes (>= 2).
    Classification(usize),
}

impl Task {
    pub fn n_outputs(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification(c) => *c,
        }
    }
}

/// Architecture and initialization configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_features: usize,
    /// Total token width (content + PE block).
    pub d_token: usize,
    /// Width of the PE block; 0 disables it entirely.
    pub d_pe: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Dropout rate on post-softmax attention probabilities.
    pub attn_dropout: f64,
    /// Dropout rate on the ReGLU product before the second FFN linear.
    pub ffn_dropout: f64,
    pub pe_mode: PeMode,
    pub task: Task,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelSpec {
    /// One pre-norm layer, one head, no dropout, fixed-PE mode.
    pub fn new(n_features: usize, d_token: usize, d_pe: usize, task: Task) -> Self {
        ModelSpec {
            n_features,
            d_token,
            d_pe,
            n_layers: 1,
            n_heads: 1,
            attn_dropout: 0.0,
            ffn_dropout: 0.0,
            pe_mode: PeMode::Fixed,
            task,
            seed: 0,
        }
    }

    /// FFN hidden width: round(d_token * 4/3).
    pub fn d_ff(&self) -> usize {
        (self.d_token as f64 * 4.0 / 3.0).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(Error::InvalidArgument("n_features must be positive".into()));
        }
        if self.d_pe >= self.d_token {
            return Err(Error::InvalidArgument(format!(
                "d_pe ({}) must leave room for content (d_token {})",
                self.d_pe, self.d_token
            )));
        }
        if self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::InvalidArgument("need at least one layer and head".into()));
        }
        if self.d_token % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_token ({}) not divisible by n_heads ({})",
                self.d_token, self.n_heads
            )));
        }
        for (name, p) in [("attn_dropout", self.attn_dropout), ("ffn_dropout", self.ffn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1)")));
            }
        }
        if let Task::Classification(c) = self.task {
            if c < 2 {
                return Err(Error::InvalidArgument("classification needs >= 2 classes".into()));
            }
        }
        Ok(())
    }

    fn dims(&self) -> net::Dims {
        net::Dims {
            n_features: self.n_features,
            d_token: self.d_token,
            d_pe: self.d_pe,
            d_content: self.d_token - self.d_pe,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_head: self.d_token / self.n_heads,
            d_ff: self.d_ff(),
            attn_dropout: self.attn_dropout,
            ffn_dropout: self.ffn_dropout,
            learnable_pe: self.pe_mode == PeMode::Learnable,
        }
    }
}

/// Targets aligned with the data matrix rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TargetData {
    Regression(Vec<f64>),
    Classification(Vec<usize>),
}

impl TargetData {
    pub fn len(&self) -> usize {
        match self {
            TargetData::Regression(v) => v.len(),
            TargetData::Classification(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Targets for a single forward/backward batch.
pub enum BatchTargets<'a> {
    Regression(&'a [f64]),
    Classification { labels: &'a [usize], weights: &'a [f64] },
}

/// Row-index partitions; must be pairwise disjoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// The transformer; owns its parameters and (for fixed/random modes) the
/// PE rows to concatenate.
pub struct FtTransformer {
    pub spec: ModelSpec,
    pub params: ParamSet,
    fixed_pe: Array2<f64>,
    dims: net::Dims,
    layout: net::Layout,
}

impl FtTransformer {
    /// Builds and initializes a model; deterministic in `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims();
        let layout = net::Layout::new(&dims);
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let (f, d, dc, ff) = (spec.n_features, spec.d_token, dims.d_content, dims.d_ff);

        let mut p = ParamSet::default();
        p.push_uniform("tokenizer.weight", f, dc, 1.0, &mut rng);
        p.push_constant("tokenizer.bias", f, dc, 0.0);
        p.push_uniform("cls.content", 1, dc, 1.0, &mut rng);
        if dims.learnable_pe {
            p.push_normal("pe.table", f, spec.d_pe, 0.02, &mut rng);
        }
        let lin_bound = 1.0 / (d as f64).sqrt();
        let ffn2_bound = 1.0 / (ff as f64).sqrt();
        for l in 0..spec.n_layers {
            p.push_uniform(&format!("layer{l}.wq"), d, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.bq"), 1, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.wk"), d, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.bk"), 1, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.wv"), d, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.bv"), 1, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.wo"), d, d, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.bo"), 1, d, lin_bound, &mut rng);
            p.push_constant(&format!("layer{l}.ln1.gamma"), 1, d, 1.0);
            p.push_constant(&format!("layer{l}.ln1.beta"), 1, d, 0.0);
            p.push_constant(&format!("layer{l}.ln2.gamma"), 1, d, 1.0);
            p.push_constant(&format!("layer{l}.ln2.beta"), 1, d, 0.0);
            p.push_uniform(&format!("layer{l}.ffn.w1"), d, 2 * ff, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.ffn.b1"), 1, 2 * ff, lin_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.ffn.w2"), ff, d, ffn2_bound, &mut rng);
            p.push_uniform(&format!("layer{l}.ffn.b2"), 1, d, ffn2_bound, &mut rng);
        }
        p.push_uniform("head.weight", d, spec.task.n_outputs(), lin_bound, &mut rng);
        p.push_uniform("head.bias", 1, spec.task.n_outputs(), lin_bound, &mut rng);

        Ok(FtTransformer {
            fixed_pe: Array2::zeros((f, spec.d_pe)),
            spec,
            params: p,
            dims,
            layout,
        })
    }

    /// Installs the PE rows used by `Fixed` and `Random` modes. The matrix
    /// is expected to be already alpha-scaled.
    pub fn set_fixed_pe(&mut self, pe: &Array2<f64>) -> Result<()> {
        match self.spec.pe_mode {
            PeMode::Fixed | PeMode::Random => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "pe mode {other} does not take an external PE matrix"
                )))
            }
        }
        if pe.nrows() != self.spec.n_features || pe.ncols() != self.spec.d_pe {
            return Err(Error::DimensionMismatch(format!(
                "PE matrix is {}x{}, model expects {}x{}",
                pe.nrows(),
                pe.ncols(),
                self.spec.n_features,
                self.spec.d_pe
            )));
        }
        self.fixed_pe = pe.clone();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.spec.n_features {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.spec.n_features
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        Ok(())
    }

    /// Initial token embeddings as (batch, n_features + 1, d_token).
    pub fn tokens(&self, x: &Array2<f64>) -> Result<Array3<f64>> {
        self.check_input(x)?;
        let flat = net::build_tokens(&self.dims, &self.layout, &self.params, x, &self.fixed_pe);
        let (b, s, d) = (x.nrows(), self.dims.seq_len(), self.spec.d_token);
        Ok(flat
            .into_shape_with_order((b, s, d))
            .expect("row count equals batch * seq"))
    }

    /// Head outputs: (batch, 1) regression value or (batch, C) logits.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let (out, _) = net::forward(&self.dims, &self.layout, &self.params, x, &self.fixed_pe, None);
        Ok(out)
    }

    /// Argmax class per row (ties -> smaller class index).
    pub fn predict_labels(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let logits = self.predict(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Pre-head CLS rows of the final residual stream, (batch, d_token).
    pub fn cls_embeddings(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let (_, cache) =
            net::forward(&self.dims, &self.layout, &self.params, x, &self.fixed_pe, None);
        Ok(cache.cls_emb)
    }

    /// The prediction head alone; `predict` is `apply_head(cls_embeddings)`.
    pub fn apply_head(&self, cls: &Array2<f64>) -> Array2<f64> {
        let w = self.params.params[self.layout.head_w].view().to_owned();
        let b = &self.params.params[self.layout.head_b].data;
        let mut out = cls.dot(&w);
        for mut row in out.rows_mut() {
            for (v, bi) in row.iter_mut().zip(b.iter()) {
                *v += bi;
            }
        }
        out
    }

    fn check_targets(&self, n_rows: usize, targets: &BatchTargets<'_>) -> Result<()> {
        let (len, ok) = match targets {
            BatchTargets::Regression(t) => (t.len(), matches!(self.spec.task, Task::Regression)),
            BatchTargets::Classification { labels, weights } => {
                if let Task::Classification(c) = self.spec.task {
                    if weights.len() != c {
                        return Err(Error::DimensionMismatch(format!(
                            "{} class weights for {c} classes",
                            weights.len()
                        )));
                    }
                    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                        return Err(Error::InvalidArgument(format!(
                            "label {bad} out of range for {c} classes"
                        )));
                    }
                    (labels.len(), true)
                } else {
                    (labels.len(), false)
                }
            }
        };
        if !ok {
            return Err(Error::InvalidArgument("targets do not match model task".into()));
        }
        if len != n_rows {
            return Err(Error::DimensionMismatch(format!(
                "{len} targets for {n_rows} rows"
            )));
        }
        Ok(())
    }

    fn loss_with(&self, params: &ParamSet, x: &Array2<f64>, targets: &BatchTargets<'_>) -> f64 {
        let (out, _) = net::forward(&self.dims, &self.layout, params, x, &self.fixed_pe, None);
        match targets {
            BatchTargets::Regression(t) => net::mse_loss(&out, t).0,
            BatchTargets::Classification { labels, weights } => {
                net::weighted_ce_loss(&out, labels, weights).0
            }
        }
    }

    /// Evaluation-mode loss and analytic gradients (no dropout).
    pub fn loss_and_grads(
        &self,
        x: &Array2<f64>,
        targets: &BatchTargets<'_>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        self.check_targets(x.nrows(), targets)?;
        Ok(self.loss_and_grads_inner(x, targets, None))
    }

    fn loss_and_grads_inner(
        &self,
        x: &Array2<f64>,
        targets: &BatchTargets<'_>,
        rng: Option<&mut ChaCha12Rng>,
    ) -> (f64, Vec<Vec<f64>>) {
        let (out, cache) =
            net::forward(&self.dims, &self.layout, &self.params, x, &self.fixed_pe, rng);
        let (loss, dout) = match targets {
            BatchTargets::Regression(t) => net::mse_loss(&out, t),
            BatchTargets::Classification { labels, weights } => {
                net::weighted_ce_loss(&out, labels, weights)
            }
        };
        let grads = net::backward(&self.dims, &self.layout, &self.params, x, &cache, &dout);
        (loss, grads)
    }

    /// Writes parameters + spec + PE rows; `user_extra` rides along in the
    /// manifest (target statistics, run metadata, ...).
    pub fn save(&self, path: &Path, user_extra: serde_json::Value) -> Result<()> {
        let extra = serde_json::json!({
            "spec": self.spec,
            "fixed_pe": self.fixed_pe.iter().copied().collect::<Vec<f64>>(),
            "user": user_extra,
        });
        params::save_checkpoint(&self.params, extra, path)
    }

    /// Restores a model written by [`FtTransformer::save`].
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (stored, extra) = params::load_checkpoint(path)?;
        let spec: ModelSpec = serde_json::from_value(extra["spec"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad model spec in manifest: {e}")))?;
        let mut model = FtTransformer::new(spec)?;
        if stored.params.len() != model.params.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, spec implies {}",
                stored.params.len(),
                model.params.params.len()
            )));
        }
        for (have, want) in stored.params.iter().zip(model.params.params.iter()) {
            if have.name != want.name || have.rows != want.rows || have.cols != want.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: stored {} {}x{}, expected {} {}x{}",
                    have.name, have.rows, have.cols, want.name, want.rows, want.cols
                )));
            }
        }
        model.params = stored;
        let flat: Vec<f64> = serde_json::from_value(extra["fixed_pe"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad fixed_pe in manifest: {e}")))?;
        model.fixed_pe =
            Array2::from_shape_vec((model.spec.n_features, model.spec.d_pe), flat)
                .map_err(|e| Error::Checkpoint(format!("fixed_pe shape: {e}")))?;
        Ok((model, extra["user"].clone()))
    }
}

/// Class weights w_c = N / (C * n_c); zero-count class is an error.
pub fn balanced_ce_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("class counts".into()));
    }
    let n: usize = counts.iter().sum();
    let c = counts.len();
    counts
        .iter()
        .enumerate()
        .map(|(label, &nc)| {
            if nc == 0 {
                Err(Error::InvalidArgument(format!("class {label} has zero count")))
            } else {
                Ok(n as f64 / (c as f64 * nc as f64))
            }
        })
        .collect()
}

/// Balanced cross entropy −(1/B) Σ w_{y_i} log p_{i,y_i} with weights from
/// `counts` (must cover all classes present in `labels`).
pub fn balanced_ce_loss(logits: &Array2<f64>, labels: &[usize], counts: &[usize]) -> Result<f64> {
    if labels.len() != logits.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.nrows()
        )));
    }
    if counts.len() != logits.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} class counts for {} logit columns",
            counts.len(),
            logits.ncols()
        )));
    }
    let weights = balanced_ce_weights(counts)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= counts.len()) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    Ok(net::weighted_ce_loss(logits, labels, &weights).0)
}

/// Mean per-class recall, evaluated in the weighted-sum form
/// (Σ_c correct_c / n_c) · (1/C) over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut weighted_sum = 0.0;
    for &cl in &classes {
        let mut n_c = 0usize;
        let mut correct_c = 0usize;
        for (&p, &y) in preds.iter().zip(labels.iter()) {
            if y == cl {
                n_c += 1;
                correct_c += usize::from(p == y);
            }
        }
        weighted_sum += correct_c as f64 / n_c as f64;
    }
    Ok(weighted_sum / classes.len() as f64)
}

/// Root mean squared error.
pub fn rmse(preds: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(preds.len(), targets.len(), "rmse length mismatch");
    let n = preds.len() as f64;
    (preds
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Early-stopped AdamW training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub patience: usize,
    /// Required improvement of the validation metric.
    pub min_delta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Seed for batch shuffling and dropout (independent of model init).
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            min_epochs: 10,
            patience: 20,
            min_delta: 1e-6,
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 128,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Raw-scale RMSE (regression, lower better) or balanced accuracy
    /// (classification, higher better) on the validation split.
    pub val_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Metric of the restored best model on the test split, if provided.
    pub test_metric: Option<f64>,
    /// Train-split target statistics (regression; 0/1 for classification).
    pub y_mean: f64,
    pub y_std: f64,
    pub stopped_early: bool,
}

fn check_disjoint(splits: &Splits) -> Result<()> {
    let mut seen = HashSet::new();
    for (name, part) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        for &i in part {
            if !seen.insert(i) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} appears in more than one split (last seen in {name})"
                )));
            }
        }
    }
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::EmptyInput("train and val splits must be nonempty".into()));
    }
    Ok(())
}

fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Trains in place: AdamW, early stopping on the validation metric, best
/// weights restored at the end. Deterministic given model seed and
/// `cfg.shuffle_seed`.
pub fn train(
    model: &mut FtTransformer,
    x: &Array2<f64>,
    targets: &TargetData,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    model.check_input(x)?;
    if targets.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            targets.len(),
            x.nrows()
        )));
    }
    check_disjoint(splits)?;
    if let Some(&bad) = splits
        .train
        .iter()
        .chain(&splits.val)
        .chain(&splits.test)
        .find(|&&i| i >= x.nrows())
    {
        return Err(Error::InvalidArgument(format!("split row {bad} out of range")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }

    // Regression targets are standardized on the train split; validation and
    // test RMSE are reported on the raw scale.
    let (y_mean, y_std, y_standardized, class_weights) = match targets {
        TargetData::Regression(y) => {
            let n = splits.train.len() as f64;
            let mean = splits.train.iter().map(|&i| y[i]).sum::<f64>() / n;
            let var = splits.train.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum::<f64>() / n;
            let std = var.sqrt().max(1e-12);
            let ys: Vec<f64> = y.iter().map(|v| (v - mean) / std).collect();
            if !matches!(model.spec.task, Task::Regression) {
                return Err(Error::InvalidArgument("regression targets for a classifier".into()));
            }
            (mean, std, ys, Vec::new())
        }
        TargetData::Classification(labels) => {
            let c = match model.spec.task {
                Task::Classification(c) => c,
                Task::Regression => {
                    return Err(Error::InvalidArgument(
                        "classification targets for a regressor".into(),
                    ))
                }
            };
            let mut counts = vec![0usize; c];
            for &i in &splits.train {
                if labels[i] >= c {
                    return Err(Error::InvalidArgument(format!(
                        "label {} out of range for {c} classes",
                        labels[i]
                    )));
                }
                counts[labels[i]] += 1;
            }
            let weights = balanced_ce_weights(&counts)?;
            (0.0, 1.0, Vec::new(), weights)
        }
    };

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.shuffle_seed);
    let mut opt = AdamW::new(&model.params, cfg.lr, cfg.weight_decay);
    let higher_better = matches!(model.spec.task, Task::Classification(_));
    let mut best_val = if higher_better { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut best_epoch = 0usize;
    let mut best_weights = model.params.snapshot();
    let mut epochs_since_best = 0usize;
    let mut history = Vec::new();
    let mut stopped_early = false;

    let evaluate = |model: &FtTransformer, rows: &[usize]| -> Result<f64> {
        let xb = gather_rows(x, rows);
        match targets {
            TargetData::Regression(y) => {
                let out = model.predict(&xb)?;
                let preds: Vec<f64> = out.column(0).iter().map(|v| v * y_std + y_mean).collect();
                let truth: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                Ok(rmse(&preds, &truth))
            }
            TargetData::Classification(labels) => {
                let preds = model.predict_labels(&xb)?;
                let truth: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
                balanced_accuracy(&preds, &truth)
            }
        }
    };

    let mut order = splits.train.clone();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(x, chunk);
            let (loss, grads) = match targets {
                TargetData::Regression(_) => {
                    let yb: Vec<f64> = chunk.iter().map(|&i| y_standardized[i]).collect();
                    model.loss_and_grads_inner(&xb, &BatchTargets::Regression(&yb), Some(&mut rng))
                }
                TargetData::Classification(labels) => {
                    let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    model.loss_and_grads_inner(
                        &xb,
                        &BatchTargets::Classification { labels: &yb, weights: &class_weights },
                        Some(&mut rng),
                    )
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite training loss {loss}"),
                });
            }
            opt.step(&mut model.params, &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / splits.train.len() as f64;
        let val_metric = evaluate(model, &splits.val)?;
        if !val_metric.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite validation metric {val_metric}"),
            });
        }
        history.push(EpochStats { epoch, train_loss, val_metric });

        let improved = if higher_better {
            val_metric > best_val + cfg.min_delta
        } else {
            val_metric < best_val - cfg.min_delta
        };
        if improved {
            best_val = val_metric;
            best_epoch = epoch;
            best_weights = model.params.snapshot();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        if epochs_since_best >= cfg.patience && epoch + 1 >= cfg.min_epochs {
            stopped_early = true;
            break;
        }
    }

    model.params.restore(&best_weights);
    let test_metric = if splits.test.is_empty() {
        None
    } else {
        Some(evaluate(model, &splits.test)?)
    };
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_metric: best_val,
        test_metric,
        y_mean,
        y_std,
        stopped_early,
    })
}

/// Default alpha grid: 9 values spanning [0.05, 10].
pub const ALPHA_GRID: [f64; 9] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0];

/// Evaluates `score` (higher is better) for every grid value and returns
/// (best alpha, per-alpha scores in call order). Ties pick the smaller alpha.
pub fn alpha_select<F>(grid: &[f64], mut score: F) -> Result<(f64, Vec<(f64, f64)>)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::EmptyInput("alpha grid".into()));
    }
    let mut results = Vec::with_capacity(grid.len());
    for &alpha in grid {
        results.push((alpha, score(alpha)?));
    }
    let mut best = results[0];
    for &(alpha, s) in &results[1..] {
        if s > best.1 || (s == best.1 && alpha < best.0) {
            best = (alpha, s);
        }
    }
    Ok((best.0, results))
}

/// Central finite-difference check; returns per-tensor relative L2 errors
/// between analytic and numeric gradients. Dropout must be disabled.
pub fn gradient_check(
    model: &FtTransformer,
    x: &Array2<f64>,
    targets: &BatchTargets<'_>,
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let (_, analytic) = model.loss_and_grads(x, targets)?;
    let mut work = model.params.clone();
    let mut report = Vec::with_capacity(analytic.len());
    for (idx, grad) in analytic.iter().enumerate() {
        let mut num = vec![0.0; grad.len()];
        for j in 0..grad.len() {
            let orig = work.params[idx].data[j];
            work.params[idx].data[j] = orig + step;
            let up = model.loss_with(&work, x, targets);
            work.params[idx].data[j] = orig - step;
            let down = model.loss_with(&work, x, targets);
            work.params[idx].data[j] = orig;
            num[j] = (up - down) / (2.0 * step);
        }
        let diff: f64 = grad
            .iter()
            .zip(num.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let analytic_norm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let numeric_norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A tensor whose true gradient is zero (e.g. the key bias, which
        // shifts every softmax row uniformly) yields pure finite-difference
        // noise; when both norms sit below the noise floor the gradients
        // agree to FD resolution.
        let denom = analytic_norm.max(numeric_norm);
        let rel = if denom < 1e-8 { 0.0 } else { diff / denom };
        report.push((model.params.params[idx].name.clone(), rel));
    }
    Ok(report)
}
