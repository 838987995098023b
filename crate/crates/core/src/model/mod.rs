//! The soft contextualized encoder.
//!
//! A text embedding `q` is mapped to the encoder width by an affine adaptor
//! and prepended, as a soft prompt, to one embedding per candidate label.
//! The encoder contextualizes the whole set jointly; each label is scored by
//! the dot product of its output row with the prompt's output row, and the
//! scores are softmaxed over the candidate set.

mod checkpoint;

use std::collections::HashSet;

use rand::Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};

use crate::data::{LexiconEntry, Vocabulary};
use crate::embedding::EmbeddingProvider;
use crate::encoder::{encode_backward, encode_with_cache, EncoderConfig, EncoderParams, INIT_STD};
use crate::error::{Result, SceError};
use crate::tensor::{
    cross_entropy, dot, matmul, softmax_cross_entropy_backward, softmax_values,
    Tensor,
};

/// Token embedding dictionary `E`, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddingTable {
    pub vocab: Vocabulary,
    pub embeddings: Tensor,
    /// When set (the default), training never touches `embeddings`.
    pub frozen: bool,
}

impl LabelEmbeddingTable {
    pub fn new(vocab: Vocabulary, embeddings: Tensor) -> Result<Self> {
        if embeddings.shape() != [vocab.len(), embeddings.cols()] {
            return Err(SceError::dim(
                "LabelEmbeddingTable",
                format!("{} tokens but table shape {:?}", vocab.len(), embeddings.shape()),
            ));
        }
        Ok(Self {
            vocab,
            embeddings,
            frozen: true,
        })
    }

    pub fn random<R: Rng + ?Sized>(vocab: Vocabulary, d: usize, rng: &mut R) -> Result<Self> {
        let e = Tensor::random_normal(&[vocab.len(), d], INIT_STD, rng);
        Self::new(vocab, e)
    }

    /// Stand-in for a pretrained dictionary: rows of tokens that have a
    /// lexicon gloss are set to the embedding of that gloss (projected to
    /// width `d` by a fixed random map when `d` differs from the provider
    /// width); all other rows are random.
    pub fn from_lexicon<R: Rng + ?Sized>(
        vocab: Vocabulary,
        d: usize,
        lexicon: &[LexiconEntry],
        provider: &EmbeddingProvider,
        rng: &mut R,
    ) -> Result<Self> {
        let mut table = Self::random(vocab, d, rng)?;
        let dq = provider.dim();
        let projection = (dq != d).then(|| Tensor::random_normal(&[dq, d], 1.0 / (d as f64).sqrt(), rng));
        for entry in lexicon {
            let Some(id) = table.vocab.id(&entry.token) else {
                continue;
            };
            let g = provider.embed(&entry.gloss)?;
            let row = match &projection {
                None => g,
                Some(p) => matmul(&Tensor::matrix(1, dq, g)?, p)?.into_data(),
            };
            table.embeddings.row_mut(id).copy_from_slice(&row);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Token ids of a label; unknown tokens are errors.
    pub fn label_ids(&self, label: &str) -> Result<Vec<usize>> {
        self.vocab.encode_label(label)
    }

    fn pooled(&self, ids: &[usize]) -> Vec<f64> {
        if let [id] = ids {
            return self.embeddings.row(*id).to_vec();
        }
        let mut acc = vec![0.0; self.dim()];
        for &id in ids {
            for (a, x) in acc.iter_mut().zip(self.embeddings.row(id)) {
                *a += x;
            }
        }
        let n = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Mean of the token embeddings of a label.
pub fn embed_label(tokens: &[&str], table: &LabelEmbeddingTable) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(SceError::Domain("label has no tokens".into()));
    }
    let ids = tokens
        .iter()
        .map(|t| table.vocab.id(t).ok_or_else(|| SceError::UnknownToken(t.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok(table.pooled(&ids))
}

/// Affine map `q' = W q + b` from the text-embedding width to the encoder width.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAdaptor {
    /// `d × d_q`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl QueryAdaptor {
    pub fn random<R: Rng + ?Sized>(d: usize, d_q: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::random_normal(&[d, d_q], INIT_STD, rng),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

pub fn adapt_query(q: &[f64], adaptor: &QueryAdaptor) -> Result<Vec<f64>> {
    if q.len() != adaptor.in_dim() {
        return Err(SceError::dim(
            "adapt_query",
            format!("query has {} values, adaptor expects {}", q.len(), adaptor.in_dim()),
        ));
    }
    Ok((0..adaptor.out_dim())
        .map(|i| dot(adaptor.weight.row(i), q) + adaptor.bias.data()[i])
        .collect())
}

/// Architecture of a full model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceConfig {
    pub encoder: EncoderConfig,
    pub query_dim: usize,
}

impl SceConfig {
    pub fn new(layers: usize, d_model: usize, heads: usize, d_ff: usize, query_dim: usize) -> Result<Self> {
        if query_dim == 0 {
            return Err(SceError::Config("query dimension must be positive".into()));
        }
        Ok(Self {
            encoder: EncoderConfig::new(layers, d_model, heads, d_ff)?,
            query_dim,
        })
    }
}

/// Everything the classifier needs: `E`, `(W, b)` and the encoder `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceParams {
    pub table: LabelEmbeddingTable,
    pub adaptor: QueryAdaptor,
    pub encoder: EncoderParams,
}

/// Gradients for the trainable parts of [`SceParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceGrads {
    pub adaptor: QueryAdaptor,
    pub encoder: EncoderParams,
    /// Present only when the table is unfrozen.
    pub table: Option<Tensor>,
}

impl SceGrads {
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        if let Some(t) = &self.table {
            v.push(t);
        }
        v.push(&self.adaptor.weight);
        v.push(&self.adaptor.bias);
        v.extend(self.encoder.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        if let Some(t) = &mut self.table {
            v.push(t);
        }
        v.push(&mut self.adaptor.weight);
        v.push(&mut self.adaptor.bias);
        v.extend(self.encoder.tensors_mut());
        v
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn accumulate(&mut self, other: &SceGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

impl SceParams {
    /// Randomly initialised model over `vocab`.
    pub fn random<R: Rng + ?Sized>(config: SceConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self> {
        let d = config.encoder.d_model;
        let table = LabelEmbeddingTable::random(vocab, d, rng)?;
        Self::with_table(config, table, rng)
    }

    /// Random adaptor and encoder around an existing table.
    pub fn with_table<R: Rng + ?Sized>(config: SceConfig, table: LabelEmbeddingTable, rng: &mut R) -> Result<Self> {
        let d = config.encoder.d_model;
        if table.dim() != d {
            return Err(SceError::Config(format!(
                "table width {} differs from encoder width {d}",
                table.dim()
            )));
        }
        let adaptor = QueryAdaptor::random(d, config.query_dim, rng);
        let encoder = EncoderParams::random(config.encoder, rng)?;
        Ok(Self {
            table,
            adaptor,
            encoder,
        })
    }

    pub fn config(&self) -> SceConfig {
        SceConfig {
            encoder: self.encoder.config,
            query_dim: self.adaptor.in_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.check_shapes()?;
        let d = self.encoder.config.d_model;
        if self.adaptor.out_dim() != d || self.adaptor.bias.shape() != [d] || self.table.dim() != d {
            return Err(SceError::Config(format!(
                "encoder width {d}, adaptor {:?}/{:?}, table width {}",
                self.adaptor.weight.shape(),
                self.adaptor.bias.shape(),
                self.table.dim()
            )));
        }
        Ok(())
    }

    /// Names of the arrays returned by [`Self::trainable`], in order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if !self.table.frozen {
            names.push("table.embeddings".to_string());
        }
        names.push("adaptor.weight".to_string());
        names.push("adaptor.bias".to_string());
        names.extend(self.encoder.tensor_names());
        names
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        if !self.table.frozen {
            v.push(&self.table.embeddings);
        }
        v.push(&self.adaptor.weight);
        v.push(&self.adaptor.bias);
        v.extend(self.encoder.tensors());
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        if !self.table.frozen {
            v.push(&mut self.table.embeddings);
        }
        v.push(&mut self.adaptor.weight);
        v.push(&mut self.adaptor.bias);
        v.extend(self.encoder.tensors_mut());
        v
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> SceGrads {
        SceGrads {
            adaptor: self.adaptor.zeros_like(),
            encoder: self.encoder.zeros_like(),
            table: (!self.table.frozen).then(|| Tensor::zeros(self.table.embeddings.shape())),
        }
    }

    /// Token ids per label, rejecting empty sets and duplicates.
    pub fn resolve_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<Vec<usize>>> {
        if labels.is_empty() {
            return Err(SceError::Domain("candidate label set is empty".into()));
        }
        let mut seen = HashSet::new();
        labels
            .iter()
            .map(|l| {
                let ids = self.table.label_ids(l.as_ref())?;
                if !seen.insert(ids.clone()) {
                    return Err(SceError::DuplicateLabel(l.as_ref().to_string()));
                }
                Ok(ids)
            })
            .collect()
    }
}

/// Per-label probabilities aligned to the submitted order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    pub probs: Vec<f64>,
    /// Index of the largest probability; ties go to the lowest index.
    pub argmax_index: usize,
    /// Pre-softmax scores.
    pub scores: Vec<f64>,
}

impl PredictionDistribution {
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        let probs = softmax_values(&scores)?;
        let argmax_index = argmax(&probs);
        Ok(Self {
            probs,
            argmax_index,
            scores,
        })
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct ForwardState {
    out: Tensor,
    cache: crate::encoder::EncoderCache,
    dist: PredictionDistribution,
}

fn forward_ids(q: &[f64], labels: &[Vec<usize>], params: &SceParams) -> Result<ForwardState> {
    let q_adapted = adapt_query(q, &params.adaptor)?;
    let mut rows = Vec::with_capacity(labels.len() + 1);
    rows.push(q_adapted);
    for ids in labels {
        rows.push(params.table.pooled(ids));
    }
    let seq = Tensor::from_rows(&rows)?;
    let (out, cache) = encode_with_cache(&seq, &params.encoder)?;
    let prompt = out.row(0);
    let scores: Vec<f64> = (1..out.rows()).map(|k| dot(prompt, out.row(k))).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SceError::NonFinite("label scores".into()));
    }
    let dist = PredictionDistribution::from_scores(scores)?;
    Ok(ForwardState { out, cache, dist })
}

/// Scores every candidate label against the query embedding `q`.
pub fn forward_scores<S: AsRef<str>>(q: &[f64], labels: &[S], params: &SceParams) -> Result<PredictionDistribution> {
    let ids = params.resolve_labels(labels)?;
    Ok(forward_ids(q, &ids, params)?.dist)
}

/// Embeds `text` with `provider` and returns the winning label.
pub fn predict<'a, S: AsRef<str>>(
    text: &str,
    labels: &'a [S],
    params: &SceParams,
    provider: &EmbeddingProvider,
) -> Result<&'a str> {
    let q = provider.embed(text)?;
    let dist = forward_scores(&q, labels, params)?;
    Ok(labels[dist.argmax_index].as_ref())
}

/// Cross-entropy of the prediction against a target distribution.
pub fn loss<S: AsRef<str>>(q: &[f64], labels: &[S], target: &[f64], params: &SceParams) -> Result<f64> {
    let dist = forward_scores(q, labels, params)?;
    Ok(cross_entropy(&dist.probs, target)?.loss)
}

/// One-hot target of length `k`.
pub fn one_hot(k: usize, gold: usize) -> Vec<f64> {
    let mut t = vec![0.0; k];
    t[gold] = 1.0;
    t
}

/// Loss, prediction and analytic gradients for one example.
pub fn loss_and_grad<S: AsRef<str>>(
    q: &[f64],
    labels: &[S],
    target: &[f64],
    params: &SceParams,
) -> Result<(f64, PredictionDistribution, SceGrads)> {
    let ids = params.resolve_labels(labels)?;
    if target.len() != ids.len() {
        return Err(SceError::dim(
            "loss_and_grad",
            format!("{} labels, {} target entries", ids.len(), target.len()),
        ));
    }
    let state = forward_ids(q, &ids, params)?;
    let ce = cross_entropy(&state.dist.probs, target)?;
    let g_scores = softmax_cross_entropy_backward(&state.dist.probs, target);

    // s_k = e_0 · e_k
    let mut g_out = Tensor::zeros(state.out.shape());
    let e0 = state.out.row(0).to_vec();
    for (k, &g) in g_scores.iter().enumerate() {
        let ek = state.out.row(k + 1).to_vec();
        for (a, x) in g_out.row_mut(0).iter_mut().zip(&ek) {
            *a += g * x;
        }
        for (a, x) in g_out.row_mut(k + 1).iter_mut().zip(&e0) {
            *a += g * x;
        }
    }
    let (g_encoder, g_seq) = encode_backward(&params.encoder, &state.cache, &g_out)?;

    // q' = W q + b: dW = g ⊗ q, db = g
    let g_prompt = g_seq.row(0);
    let mut g_weight = Tensor::zeros(params.adaptor.weight.shape());
    for (i, &g) in g_prompt.iter().enumerate() {
        for (w, &x) in g_weight.row_mut(i).iter_mut().zip(q) {
            *w = g * x;
        }
    }
    let adaptor = QueryAdaptor {
        weight: g_weight,
        bias: Tensor::vector(g_prompt.to_vec())?,
    };

    let table = (!params.table.frozen).then(|| {
        let mut g = Tensor::zeros(params.table.embeddings.shape());
        for (k, ids) in ids.iter().enumerate() {
            let share = 1.0 / ids.len() as f64;
            for &id in ids {
                for (a, x) in g.row_mut(id).iter_mut().zip(g_seq.row(k + 1)) {
                    *a += share * x;
                }
            }
        }
        g
    });
    Ok((
        ce.loss,
        state.dist,
        SceGrads {
            adaptor,
            encoder: g_encoder,
            table,
        },
    ))
}
