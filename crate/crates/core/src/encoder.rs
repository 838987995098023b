//! Post-norm transformer encoder with no positional information.
//!
//! Rows of the input are treated as an unordered set: nothing in the
//! parameters or the computation looks at a row's index, so permuting input
//! rows permutes output rows identically.

use rand::Rng;

use crate::error::{Result, SceError};
use crate::tensor::{
    gelu, gelu_backward, layer_norm_backward, layer_norm_forward, matmul, matmul_backward,
    softmax_backward, softmax_rows, LayerNormCache, Tensor,
};

/// Standard deviation of the random weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub eps: f64,
}

impl EncoderConfig {
    /// Validated config; `head_dim` is derived as `d_model / heads`.
    pub fn new(layers: usize, d_model: usize, heads: usize, d_ff: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(SceError::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let cfg = Self {
            layers,
            d_model,
            heads,
            head_dim: d_model / heads,
            d_ff,
            eps: 1e-5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.head_dim == 0 || self.d_ff == 0 {
            return Err(SceError::Config(format!("all encoder dimensions must be >= 1: {self:?}")));
        }
        if self.d_model != self.heads * self.head_dim {
            return Err(SceError::Config(format!(
                "d_model {} != heads {} * head_dim {}",
                self.d_model, self.heads, self.head_dim
            )));
        }
        if !(self.eps > 0.0) {
            return Err(SceError::Config(format!("layer-norm eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Weights of one encoder block. Also used to hold their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w_up: Tensor,
    pub b_up: Tensor,
    pub w_down: Tensor,
    pub b_down: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// Field names in canonical (checkpoint and optimizer) order.
pub const LAYER_TENSOR_NAMES: [&str; 12] = [
    "wq", "wk", "wv", "wo", "w_up", "b_up", "w_down", "b_down", "ln1_gain", "ln1_bias",
    "ln2_gain", "ln2_bias",
];

impl LayerParams {
    pub fn random<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        Self {
            wq: Tensor::random_normal(&[d, d], INIT_STD, rng),
            wk: Tensor::random_normal(&[d, d], INIT_STD, rng),
            wv: Tensor::random_normal(&[d, d], INIT_STD, rng),
            wo: Tensor::random_normal(&[d, d], INIT_STD, rng),
            w_up: Tensor::random_normal(&[d, f], INIT_STD, rng),
            b_up: Tensor::zeros(&[f]),
            w_down: Tensor::random_normal(&[f, d], INIT_STD, rng),
            b_down: Tensor::zeros(&[d]),
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
            w_up: z(&self.w_up),
            b_up: z(&self.b_up),
            w_down: z(&self.w_down),
            b_down: z(&self.b_down),
            ln1_gain: z(&self.ln1_gain),
            ln1_bias: z(&self.ln1_bias),
            ln2_gain: z(&self.ln2_gain),
            ln2_bias: z(&self.ln2_bias),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.wq, &self.wk, &self.wv, &self.wo, &self.w_up, &self.b_up, &self.w_down,
            &self.b_down, &self.ln1_gain, &self.ln1_bias, &self.ln2_gain, &self.ln2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.w_up,
            &mut self.b_up,
            &mut self.w_down,
            &mut self.b_down,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }

    /// Expected shape of each tensor for `cfg`, in canonical order.
    pub fn expected_shapes(cfg: &EncoderConfig) -> [Vec<usize>; 12] {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        [
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d],
            vec![d],
        ]
    }
}

/// Encoder weights: one [`LayerParams`] per block, nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn random<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers).map(|_| LayerParams::random(&config, rng)).collect();
        Ok(Self { config, layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    /// `encoder.<layer>.<field>` names matching [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| LAYER_TENSOR_NAMES.iter().map(move |n| format!("encoder.{i}.{n}")))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.layers {
            return Err(SceError::Config(format!(
                "config says {} layers, found {}",
                self.config.layers,
                self.layers.len()
            )));
        }
        let expected = LayerParams::expected_shapes(&self.config);
        for (i, layer) in self.layers.iter().enumerate() {
            for ((t, shape), name) in layer.tensors().iter().zip(&expected).zip(LAYER_TENSOR_NAMES) {
                if t.shape() != shape.as_slice() {
                    return Err(SceError::dim(
                        "EncoderParams",
                        format!("encoder.{i}.{name} has shape {:?}, expected {shape:?}", t.shape()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    context: Tensor,
}

fn attention_forward(x: &Tensor, p: &LayerParams, cfg: &EncoderConfig) -> Result<(Tensor, AttentionCache)> {
    let q = matmul(x, &p.wq)?;
    let k = matmul(x, &p.wk)?;
    let v = matmul(x, &p.wv)?;
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut context = Tensor::zeros(x.shape());
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let start = h * cfg.head_dim;
        let qh = q.column_block(start, cfg.head_dim);
        let kh = k.column_block(start, cfg.head_dim);
        let vh = v.column_block(start, cfg.head_dim);
        let mut scores = matmul(&qh, &kh.transpose())?;
        scores.scale(scale);
        let a = softmax_rows(&scores);
        context.set_column_block(start, &matmul(&a, &vh)?);
        probs.push(a);
    }
    let out = matmul(&context, &p.wo)?;
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            context,
        },
    ))
}

/// Returns the input gradient and accumulates weight gradients into `grads`.
fn attention_backward(
    cache: &AttentionCache,
    p: &LayerParams,
    cfg: &EncoderConfig,
    grad_out: &Tensor,
    grads: &mut LayerParams,
) -> Result<Tensor> {
    let (g_context, g_wo) = matmul_backward(&cache.context, &p.wo, grad_out)?;
    grads.wo.add_assign(&g_wo);
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut gq = Tensor::zeros(cache.q.shape());
    let mut gk = Tensor::zeros(cache.k.shape());
    let mut gv = Tensor::zeros(cache.v.shape());
    for h in 0..cfg.heads {
        let start = h * cfg.head_dim;
        let qh = cache.q.column_block(start, cfg.head_dim);
        let kh = cache.k.column_block(start, cfg.head_dim);
        let vh = cache.v.column_block(start, cfg.head_dim);
        let a = &cache.probs[h];
        let g_ctx_h = g_context.column_block(start, cfg.head_dim);
        let (g_a, g_vh) = matmul_backward(a, &vh, &g_ctx_h)?;
        let mut g_scores = softmax_backward(a, &g_a);
        g_scores.scale(scale);
        let g_qh = matmul(&g_scores, &kh)?;
        let g_kh = matmul(&g_scores.transpose(), &qh)?;
        gq.set_column_block(start, &g_qh);
        gk.set_column_block(start, &g_kh);
        gv.set_column_block(start, &g_vh);
    }
    let mut gx = Tensor::zeros(cache.x.shape());
    for (g, w, gw) in [(&gq, &p.wq, &mut grads.wq), (&gk, &p.wk, &mut grads.wk), (&gv, &p.wv, &mut grads.wv)] {
        let (g_in, g_w) = matmul_backward(&cache.x, w, g)?;
        gx.add_assign(&g_in);
        gw.add_assign(&g_w);
    }
    Ok(gx)
}

/// Multi-head scaled dot-product self-attention over all rows, followed by
/// the output projection. No mask, no positional terms.
pub fn self_attention(x: &Tensor, layer: &LayerParams, cfg: &EncoderConfig) -> Result<Tensor> {
    check_input(x, cfg, 1)?;
    Ok(attention_forward(x, layer, cfg)?.0)
}

#[derive(Debug, Clone)]
struct FfnCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

fn ffn_forward(x: &Tensor, p: &LayerParams) -> Result<(Tensor, FfnCache)> {
    let mut pre = matmul(x, &p.w_up)?;
    pre.add_row_bias(&p.b_up);
    let act = gelu(&pre);
    let mut out = matmul(&act, &p.w_down)?;
    out.add_row_bias(&p.b_down);
    Ok((
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
        },
    ))
}

fn ffn_backward(cache: &FfnCache, p: &LayerParams, grad_out: &Tensor, grads: &mut LayerParams) -> Result<Tensor> {
    grads.b_down.add_assign(&grad_out.sum_rows());
    let (g_act, g_wdown) = matmul_backward(&cache.act, &p.w_down, grad_out)?;
    grads.w_down.add_assign(&g_wdown);
    let g_pre = gelu_backward(&cache.pre, &g_act);
    grads.b_up.add_assign(&g_pre.sum_rows());
    let (gx, g_wup) = matmul_backward(&cache.x, &p.w_up, &g_pre)?;
    grads.w_up.add_assign(&g_wup);
    Ok(gx)
}

/// Row-wise `contraction(gelu(expansion(x)))`.
pub fn ffn_block(x: &Tensor, layer: &LayerParams) -> Result<Tensor> {
    Ok(ffn_forward(x, layer)?.0)
}

#[derive(Debug, Clone)]
struct BlockCache {
    attn: AttentionCache,
    ln1: LayerNormCache,
    ffn: FfnCache,
    ln2: LayerNormCache,
}

/// Activations saved by [`encode_with_cache`] for [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncoderCache {
    blocks: Vec<BlockCache>,
}

fn check_input(seq: &Tensor, cfg: &EncoderConfig, min_rows: usize) -> Result<()> {
    if seq.shape().len() != 2 || seq.cols() != cfg.d_model {
        return Err(SceError::dim(
            "encode",
            format!("expected rows of width {}, got shape {:?}", cfg.d_model, seq.shape()),
        ));
    }
    if seq.rows() < min_rows {
        return Err(SceError::Domain(format!(
            "sequence has {} rows, need at least {min_rows}",
            seq.rows()
        )));
    }
    Ok(())
}

/// Runs every block: `y = LN(x + Attn(x))`, `z = LN(y + FFN(y))`.
pub fn encode(seq: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    Ok(encode_with_cache(seq, params)?.0)
}

pub fn encode_with_cache(seq: &Tensor, params: &EncoderParams) -> Result<(Tensor, EncoderCache)> {
    let cfg = &params.config;
    // position 0 is the soft prompt, the rest are labels
    check_input(seq, cfg, 2)?;
    let mut x = seq.clone();
    let mut blocks = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (attn_out, attn) = attention_forward(&x, layer, cfg)?;
        let (y, ln1) = layer_norm_forward(&x.add(&attn_out)?, &layer.ln1_gain, &layer.ln1_bias, cfg.eps)?;
        let (ffn_out, ffn) = ffn_forward(&y, layer)?;
        let (z, ln2) = layer_norm_forward(&y.add(&ffn_out)?, &layer.ln2_gain, &layer.ln2_bias, cfg.eps)?;
        blocks.push(BlockCache { attn, ln1, ffn, ln2 });
        x = z;
    }
    Ok((x, EncoderCache { blocks }))
}

/// Gradients of the encoder parameters and of the input sequence.
pub fn encode_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_out: &Tensor,
) -> Result<(EncoderParams, Tensor)> {
    let cfg = &params.config;
    let mut grads = params.zeros_like();
    let mut g = grad_out.clone();
    for ((layer, block), lg) in params
        .layers
        .iter()
        .zip(&cache.blocks)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        let (g_res2, g_gain2, g_bias2) = layer_norm_backward(&block.ln2, &layer.ln2_gain, &g);
        lg.ln2_gain.add_assign(&g_gain2);
        lg.ln2_bias.add_assign(&g_bias2);
        let mut g_y = ffn_backward(&block.ffn, layer, &g_res2, lg)?;
        g_y.add_assign(&g_res2);

        let (g_res1, g_gain1, g_bias1) = layer_norm_backward(&block.ln1, &layer.ln1_gain, &g_y);
        lg.ln1_gain.add_assign(&g_gain1);
        lg.ln1_bias.add_assign(&g_bias1);
        let mut g_x = attention_backward(&block.attn, layer, cfg, &g_res1, lg)?;
        g_x.add_assign(&g_res1);
        g = g_x;
    }
    Ok((grads, g))
}
