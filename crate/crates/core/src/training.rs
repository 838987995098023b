//! Cross-entropy training with Adam and decoupled weight decay.
//!
//! Instances in a batch may carry label sets of different sizes, so each one
//! is run separately and the gradients are averaged over the batch.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassificationInstance, LexiconEntry, Vocabulary};
use crate::embedding::EmbeddingProvider;
use crate::error::{Result, SceError};
use crate::model::{forward_scores, loss, loss_and_grad, one_hot, SceParams};
use crate::tensor::{finite_diff_grad, finite_diff_grad_fourth_order, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub synonym_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            synonym_prob: 1.0,
        }
    }
}

pub const TRAIN_CONFIG_KEYS: [&str; 9] = [
    "learning_rate",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "epochs",
    "batch_size",
    "seed",
    "synonym_prob",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SceError::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be a finite value >= 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be a finite value >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.synonym_prob) {
            return bad(format!("synonym_prob must lie in [0, 1], got {}", self.synonym_prob));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| SceError::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "synonym_prob" => self.synonym_prob = num(key, value)?,
            other => {
                return Err(SceError::Config(format!(
                    "unknown key `{other}` (expected one of: {})",
                    TRAIN_CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Flat `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SceError::Format {
                line: i + 1,
                msg: format!("expected `key=value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| SceError::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// First and second moment estimates, one pair per trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &SceParams) -> Self {
        let zeros: Vec<Tensor> = params.trainable().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    fn update(&mut self, params: &mut SceParams, grads: &[&Tensor], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate;
        let arrays = params.trainable_mut().into_iter().zip(grads).zip(self.first.iter_mut().zip(&mut self.second));
        for ((p, g), (m, v)) in arrays {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &g), (m, v)) in it {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= lr * (m_hat / (v_hat.sqrt() + cfg.adam_eps) + cfg.weight_decay * *w);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    Substituted,
    Unchanged,
    /// Every synonym collided with another candidate label.
    Skipped,
}

/// With probability `prob`, replaces the gold label (same index) by a
/// synonym drawn uniformly from those not already among the candidates.
pub fn augment_synonym<R: Rng + ?Sized>(
    inst: &ClassificationInstance,
    prob: f64,
    rng: &mut R,
) -> (ClassificationInstance, Augmentation) {
    let preset = inst.gold_synonyms();
    if preset.is_empty() || !rng.random_bool(prob) {
        return (inst.clone(), Augmentation::Unchanged);
    }
    let free: Vec<&String> = preset.iter().filter(|s| !inst.labels.contains(s)).collect();
    let Some(choice) = free.choose(rng) else {
        return (inst.clone(), Augmentation::Skipped);
    };
    let mut out = inst.clone();
    out.labels[inst.gold] = (*choice).clone();
    (out, Augmentation::Substituted)
}

/// An instance with its precomputed text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub query: Vec<f64>,
    pub instance: ClassificationInstance,
}

pub fn embed_dataset(instances: &[ClassificationInstance], provider: &EmbeddingProvider) -> Result<Vec<Example>> {
    instances
        .iter()
        .map(|inst| {
            Ok(Example {
                query: provider.embed(&inst.text)?,
                instance: inst.clone(),
            })
        })
        .collect()
}

/// Vocabulary over every label, synonym and extra token (for example
/// lexicon entries), all of which must be single tokens.
pub fn label_vocabulary(instances: &[ClassificationInstance], extra: &[LexiconEntry]) -> Result<Vocabulary> {
    let mut labels = BTreeSet::new();
    for inst in instances {
        labels.extend(inst.labels.iter().cloned());
        if let Some(map) = &inst.synonyms {
            labels.extend(map.values().flatten().cloned());
        }
    }
    labels.extend(extra.iter().map(|e| e.token.clone()));
    let labels: Vec<String> = labels.into_iter().collect();
    Vocabulary::build::<&str, _>(&[], &labels)
}

fn describe(inst: &ClassificationInstance) -> String {
    let excerpt: String = inst.text.chars().take(40).collect();
    format!("\"{excerpt}\" with labels {:?}", inst.labels)
}

/// Mean cross-entropy over `batch` followed by one AdamW update.
///
/// Nothing is modified when any loss or gradient is non-finite; the error
/// names the offending instance.
pub fn train_step(batch: &[Example], params: &mut SceParams, opt: &mut AdamState, cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(SceError::Domain("empty batch".into()));
    }
    let mut total = params.zero_grads();
    let mut loss_sum = 0.0;
    for ex in batch {
        let inst = &ex.instance;
        let target = one_hot(inst.labels.len(), inst.gold);
        let (l, _, g) = loss_and_grad(&ex.query, &inst.labels, &target, params).map_err(|e| match e {
            SceError::NonFinite(what) => SceError::NonFinite(format!("{what} for instance {}", describe(inst))),
            other => other,
        })?;
        if !l.is_finite() || !g.is_finite() {
            return Err(SceError::NonFinite(format!("loss or gradient for instance {}", describe(inst))));
        }
        loss_sum += l;
        total.accumulate(&g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    opt.update(params, &total.tensors(), cfg);
    Ok(loss_sum / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's (augmented) instances.
    pub loss: f64,
    /// Accuracy on the unaugmented training set after the epoch.
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub synonym_skips: usize,
}

/// Fraction of examples whose argmax label is the gold label.
pub fn evaluate(examples: &[Example], params: &SceParams) -> Result<f64> {
    if examples.is_empty() {
        return Err(SceError::Domain("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for ex in examples {
        let dist = forward_scores(&ex.query, &ex.instance.labels, params)?;
        if dist.argmax_index == ex.instance.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

pub fn train(dataset: &[Example], params: &mut SceParams, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(dataset, params, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F: FnMut(&EpochStats)>(
    dataset: &[Example],
    params: &mut SceParams,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(SceError::Domain("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport {
        history: Vec::with_capacity(cfg.epochs),
        synonym_skips: 0,
    };
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| {
                    let (instance, how) = augment_synonym(&dataset[i].instance, cfg.synonym_prob, &mut rng);
                    if how == Augmentation::Skipped {
                        report.synonym_skips += 1;
                    }
                    Example {
                        query: dataset[i].query.clone(),
                        instance,
                    }
                })
                .collect();
            loss_sum += train_step(&batch, params, &mut opt, cfg)? * batch.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            acc: evaluate(dataset, params)?,
        };
        on_epoch(&stats);
        report.history.push(stats);
    }
    Ok(report)
}

/// Largest trainable size accepted by [`grad_check_model`].
pub const GRAD_CHECK_MAX_PARAMS: usize = 5000;
/// Step used by the gradient check unless one is given; suited to
/// [`Stencil::FourthOrder`] on the toy model sizes this check accepts.
pub const DEFAULT_GRAD_CHECK_STEP: f64 = 3e-4;
/// Relative errors above this are reported as degraded.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries where both gradients
/// are ~0 compare on absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central-difference scheme used as the numeric reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    TwoPoint,
    /// Four evaluations, error of order `h⁴`.
    FourthOrder,
}

impl FromStr for Stencil {
    type Err = SceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-point" => Ok(Self::TwoPoint),
            "fourth-order" => Ok(Self::FourthOrder),
            other => Err(SceError::Config(format!("unknown stencil `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrayCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub stencil: Stencil,
    pub arrays: Vec<ArrayCheck>,
    pub max_rel_error: f64,
    /// Set when any array exceeds [`GRAD_CHECK_TOLERANCE`].
    pub degraded: bool,
}

/// Compares analytic gradients of one instance's loss with central
/// differences of step `h` for every trainable array.
pub fn grad_check_model(
    query: &[f64],
    inst: &ClassificationInstance,
    params: &SceParams,
    h: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let count = params.trainable_count();
    if count > GRAD_CHECK_MAX_PARAMS {
        return Err(SceError::Config(format!(
            "gradient check needs at most {GRAD_CHECK_MAX_PARAMS} trainable values, model has {count}"
        )));
    }
    let target = one_hot(inst.labels.len(), inst.gold);
    let (_, _, grads) = loss_and_grad(query, &inst.labels, &target, params)?;
    let mut arrays = Vec::new();
    let names = params.trainable_names();
    for (a, (name, analytic)) in names.into_iter().zip(grads.tensors()).enumerate() {
        let f = |x: &Tensor| {
            let mut p = params.clone();
            p.trainable_mut()[a].data_mut().copy_from_slice(x.data());
            loss(query, &inst.labels, &target, &p).unwrap_or(f64::NAN)
        };
        let at = params.trainable()[a];
        let numeric = match stencil {
            Stencil::TwoPoint => finite_diff_grad(f, at, h)?,
            Stencil::FourthOrder => finite_diff_grad_fourth_order(f, at, h)?,
        };
        let mut check = ArrayCheck {
            name,
            len: analytic.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_grad: 0.0,
        };
        for (&x, &y) in analytic.data().iter().zip(numeric.data()) {
            check.max_rel_error = check.max_rel_error.max(relative_error(x, y));
            check.max_abs_error = check.max_abs_error.max((x - y).abs());
            check.max_abs_grad = check.max_abs_grad.max(x.abs());
        }
        arrays.push(check);
    }
    let max_rel_error = arrays.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step: h,
        stencil,
        arrays,
        max_rel_error,
        degraded: !(max_rel_error <= GRAD_CHECK_TOLERANCE),
    })
}
