//! Closed-form FLOP counts for transformer blocks and whole models.
//!
//! One FLOP here is one multiply plus one add, so a `(m × k)·(k × n)` product
//! costs `m·k·n`. This is half the count produced by the `2·MAC` convention.
//! Softmax, layer norm and bias additions are not counted.
//!
//! Per-block costs are quadratic polynomials in the sequence length `m`.
//! They are built as [`CostPolynomial`]s from named line items so the
//! coefficients can be inspected, and evaluated with 128-bit integers.
//! Epoch totals accept a fractional `m` (an average token count) and are
//! evaluated exactly as rationals.

use std::fmt;

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Result, SceError};

/// `quadratic·m² + linear·m + constant`, in FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CostPolynomial {
    pub quadratic: u128,
    pub linear: u128,
    pub constant: u128,
}

impl CostPolynomial {
    pub const fn new(quadratic: u128, linear: u128, constant: u128) -> Self {
        Self {
            quadratic,
            linear,
            constant,
        }
    }

    pub fn eval(&self, m: u128) -> u128 {
        self.quadratic * m * m + self.linear * m + self.constant
    }

    pub fn eval_ratio(&self, m: Ratio<u128>) -> Ratio<u128> {
        m * m * self.quadratic + m * self.linear + Ratio::from_integer(self.constant)
    }

    pub fn times(&self, k: u128) -> Self {
        Self::new(self.quadratic * k, self.linear * k, self.constant * k)
    }
}

impl std::ops::Add for CostPolynomial {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(
            self.quadratic + o.quadratic,
            self.linear + o.linear,
            self.constant + o.constant,
        )
    }
}

impl std::iter::Sum for CostPolynomial {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl fmt::Display for CostPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        if self.linear != 0 {
            terms.push(format!("{}·m", group_digits(&self.linear.to_string())));
        }
        if self.quadratic != 0 {
            terms.push(format!("{}·m²", group_digits(&self.quadratic.to_string())));
        }
        if self.constant != 0 || terms.is_empty() {
            terms.push(group_digits(&self.constant.to_string()));
        }
        f.write_str(&terms.join(" + "))
    }
}

/// Transformer shape used by the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArchSpec {
    pub layers: u128,
    pub d_model: u128,
    pub d_ff: u128,
    pub heads: u128,
    pub head_dim: u128,
    /// Feed-forward layers mapping `d → d_ff` (2 for gated MLPs).
    pub ffn_expand: u128,
    /// Feed-forward layers mapping `d_ff → d`.
    pub ffn_contract: u128,
    pub lora_rank: Option<u128>,
    /// Width of an external embedding fed through a `d × d_ext` adaptor.
    pub external_dim: Option<u128>,
}

pub const PRESET_NAMES: [&str; 5] = [
    "roberta-base",
    "roberta-sce",
    "jina-v3",
    "llama-3.2-1b-lora-r180",
    "qwen3-1.7b",
];

impl ArchSpec {
    pub fn new(layers: u128, d_model: u128, d_ff: u128, heads: u128) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(SceError::Validation(format!(
                "d_model {d_model} is not a multiple of {heads} heads"
            )));
        }
        let spec = Self {
            layers,
            d_model,
            d_ff,
            heads,
            head_dim: d_model / heads,
            ffn_expand: 1,
            ffn_contract: 1,
            lora_rank: None,
            external_dim: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_ffn_layers(mut self, expand: u128, contract: u128) -> Result<Self> {
        self.ffn_expand = expand;
        self.ffn_contract = contract;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lora_rank(mut self, rank: u128) -> Result<Self> {
        self.lora_rank = Some(rank);
        self.validate()?;
        Ok(self)
    }

    pub fn with_external_dim(mut self, dim: u128) -> Result<Self> {
        self.external_dim = Some(dim);
        self.validate()?;
        Ok(self)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let spec = match name {
            "roberta-base" => Self::new(12, 768, 3072, 12)?,
            "roberta-sce" => Self::new(12, 768, 3072, 12)?.with_external_dim(1024)?,
            "jina-v3" => Self::new(24, 1024, 4096, 16)?,
            "llama-3.2-1b-lora-r180" => Self::new(16, 2048, 8192, 32)?
                .with_ffn_layers(2, 1)?
                .with_lora_rank(180)?,
            "qwen3-1.7b" => Self::new(28, 2048, 6144, 16)?.with_ffn_layers(2, 1)?,
            other => {
                return Err(SceError::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("ffn_expand", self.ffn_expand),
            ("ffn_contract", self.ffn_contract),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(SceError::Validation(format!("{name} must be at least 1")));
            }
        }
        if self.d_model != self.heads * self.head_dim {
            return Err(SceError::Validation(format!(
                "d_model {} != heads {} × head_dim {}",
                self.d_model, self.heads, self.head_dim
            )));
        }
        if self.lora_rank == Some(0) {
            return Err(SceError::Validation("LoRA rank must be at least 1".into()));
        }
        if self.external_dim == Some(0) {
            return Err(SceError::Validation("external embedding dim must be at least 1".into()));
        }
        Ok(())
    }

    fn rank(&self) -> Result<u128> {
        self.lora_rank.ok_or(SceError::MissingRank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Every weight is trained.
    Standard,
    /// Base weights frozen, rank-`r` adapters on every linear layer.
    Lora,
}

impl std::str::FromStr for CostMode {
    type Err = SceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" | "standard" => Ok(Self::Standard),
            "lora" => Ok(Self::Lora),
            other => Err(SceError::Config(format!("unknown cost mode `{other}`"))),
        }
    }
}

/// One named row of a per-block cost table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineItem {
    pub name: &'static str,
    pub cost: CostPolynomial,
}

fn item(name: &'static str, quadratic: u128, linear: u128) -> LineItem {
    LineItem {
        name,
        cost: CostPolynomial::new(quadratic, linear, 0),
    }
}

pub fn fwd_items_std(spec: &ArchSpec) -> Vec<LineItem> {
    let d = spec.d_model;
    vec![
        item("q/k/v/o projections", 0, 4 * d * d),
        item("attention scores", d, 0),
        item("attention values", d, 0),
        item("ffn expansion", 0, d * spec.d_ff * spec.ffn_expand),
        item("ffn contraction", 0, d * spec.d_ff * spec.ffn_contract),
    ]
}

/// Every standard row doubles: one product for the input gradient, one for
/// the weight gradient.
pub fn bwd_items_std(spec: &ArchSpec) -> Vec<LineItem> {
    fwd_items_std(spec)
        .into_iter()
        .map(|it| LineItem {
            name: it.name,
            cost: it.cost.times(2),
        })
        .collect()
}

/// Forward rows with a rank-`rank` adapter beside every linear layer.
/// `rank = 0` is allowed here so the formal limit can be evaluated.
pub fn fwd_items_lora(spec: &ArchSpec, rank: u128) -> Vec<LineItem> {
    let (d, f, r) = (spec.d_model, spec.d_ff, rank);
    let ffn = d * f + d * r + f * r;
    vec![
        item("q/k/v/o projections", 0, 4 * (d * d + 2 * d * r)),
        item("attention scores", d, 0),
        item("attention values", d, 0),
        item("ffn expansion", 0, ffn * spec.ffn_expand),
        item("ffn contraction", 0, ffn * spec.ffn_contract),
    ]
}

/// Backward rows with frozen base weights: the base matrix only propagates
/// the input gradient, while both adapter factors get input and weight
/// gradients.
pub fn bwd_items_lora(spec: &ArchSpec, rank: u128) -> Vec<LineItem> {
    let (d, f, r) = (spec.d_model, spec.d_ff, rank);
    let ffn = d * f + 2 * d * r + 2 * f * r;
    vec![
        item("q/k/v/o projections", 0, 4 * (d * d + 4 * d * r)),
        item("attention scores", 2 * d, 0),
        item("attention values", 2 * d, 0),
        item("ffn expansion", 0, ffn * spec.ffn_expand),
        item("ffn contraction", 0, ffn * spec.ffn_contract),
    ]
}

fn total(items: &[LineItem]) -> CostPolynomial {
    items.iter().map(|it| it.cost).sum()
}

fn check_m(m: u128) -> Result<()> {
    if m == 0 {
        return Err(SceError::Domain("sequence length m must be at least 1".into()));
    }
    Ok(())
}

pub fn fwd_block_std_poly(spec: &ArchSpec) -> Result<CostPolynomial> {
    spec.validate()?;
    Ok(total(&fwd_items_std(spec)))
}

pub fn bwd_block_std_poly(spec: &ArchSpec) -> Result<CostPolynomial> {
    spec.validate()?;
    Ok(total(&bwd_items_std(spec)))
}

pub fn fwd_block_lora_poly(spec: &ArchSpec) -> Result<CostPolynomial> {
    spec.validate()?;
    Ok(total(&fwd_items_lora(spec, spec.rank()?)))
}

pub fn bwd_block_lora_poly(spec: &ArchSpec) -> Result<CostPolynomial> {
    spec.validate()?;
    Ok(total(&bwd_items_lora(spec, spec.rank()?)))
}

/// `4md² + 2m²d + m·d·d_ff·(n_f1+n_f2)`
pub fn fwd_block_std(spec: &ArchSpec, m: u128) -> Result<u128> {
    check_m(m)?;
    Ok(fwd_block_std_poly(spec)?.eval(m))
}

pub fn bwd_block_std(spec: &ArchSpec, m: u128) -> Result<u128> {
    check_m(m)?;
    Ok(bwd_block_std_poly(spec)?.eval(m))
}

pub fn fwd_block_lora(spec: &ArchSpec, m: u128) -> Result<u128> {
    check_m(m)?;
    Ok(fwd_block_lora_poly(spec)?.eval(m))
}

pub fn bwd_block_lora(spec: &ArchSpec, m: u128) -> Result<u128> {
    check_m(m)?;
    Ok(bwd_block_lora_poly(spec)?.eval(m))
}

/// Backward cost of a single adapted linear layer `d_in → d_out` for one
/// token: input gradient through the frozen weight plus input and weight
/// gradients of both adapter factors.
pub fn lora_linear_bwd(d_in: u128, d_out: u128, rank: u128) -> u128 {
    d_in * d_out + 2 * d_in * rank + 2 * rank * d_out
}

/// One-off cost per sample of the `d × d_ext` adaptor (forward plus both
/// backward products).
pub fn adaptor_cost(spec: &ArchSpec) -> u128 {
    spec.external_dim.map_or(0, |e| 3 * spec.d_model * e)
}

/// Forward plus backward for the whole model, per sample.
pub fn train_model_poly(spec: &ArchSpec, mode: CostMode) -> Result<CostPolynomial> {
    let block = match mode {
        CostMode::Standard => fwd_block_std_poly(spec)? + bwd_block_std_poly(spec)?,
        CostMode::Lora => fwd_block_lora_poly(spec)? + bwd_block_lora_poly(spec)?,
    };
    Ok(block.times(spec.layers) + CostPolynomial::new(0, 0, adaptor_cost(spec)))
}

pub fn infer_model_poly(spec: &ArchSpec) -> Result<CostPolynomial> {
    Ok(fwd_block_std_poly(spec)?.times(spec.layers))
}

pub fn train_flops_model(spec: &ArchSpec, m: u128, mode: CostMode) -> Result<u128> {
    check_m(m)?;
    Ok(train_model_poly(spec, mode)?.eval(m))
}

pub fn infer_flops_model(spec: &ArchSpec, m: u128) -> Result<u128> {
    check_m(m)?;
    Ok(infer_model_poly(spec)?.eval(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochKind {
    Train(CostMode),
    Infer,
}

/// `N · FLOPs_model(m)`, exact for fractional `m`.
pub fn epoch_cost(spec: &ArchSpec, m: Ratio<u128>, samples: u128, kind: EpochKind) -> Result<Ratio<u128>> {
    if m == Ratio::from_integer(0) {
        return Err(SceError::Domain("sequence length m must be positive".into()));
    }
    if samples == 0 {
        return Err(SceError::Domain("sample count N must be at least 1".into()));
    }
    let poly = match kind {
        EpochKind::Train(mode) => train_model_poly(spec, mode)?,
        EpochKind::Infer => infer_model_poly(spec)?,
    };
    Ok(poly.eval_ratio(m) * samples)
}

/// Parses a nonnegative decimal such as `225` or `84.17` exactly.
pub fn parse_decimal(s: &str) -> Result<Ratio<u128>> {
    let bad = || SceError::Config(format!("`{s}` is not a nonnegative decimal number"));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 30 {
        return Err(bad());
    }
    let digits: u128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    Ok(Ratio::new(digits, 10u128.pow(frac.len() as u32)))
}

/// Renders a rational exactly: an integer, a terminating decimal, or `p/q`.
pub fn format_exact(r: &Ratio<u128>) -> String {
    if r.is_integer() {
        return r.to_integer().to_string();
    }
    let mut den = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let places = twos.max(fives);
    let scaled = r.numer() * (10u128.pow(places) / r.denom());
    let s = format!("{scaled:0>width$}", width = places as usize + 1);
    let (int, frac) = s.split_at(s.len() - places as usize);
    format!("{int}.{frac}")
}

pub fn to_f64(r: &Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Four significant digits in `e` notation, e.g. `9.355e15`.
pub fn format_sci(r: &Ratio<u128>) -> String {
    format!("{:.3e}", to_f64(r))
}

fn group_digits(s: &str) -> String {
    let (int, rest) = s.split_once('.').map_or((s, None), |(a, b)| (a, Some(b)));
    let mut out = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    if let Some(rest) = rest {
        out.push('.');
        out.push_str(rest);
    }
    out
}

/// Integer or decimal with thousands separators.
pub fn format_grouped(r: &Ratio<u128>) -> String {
    group_digits(&format_exact(r))
}

/// Cost summary for one architecture: per-block table, model polynomial and
/// the value at the requested `m` and `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub spec: ArchSpec,
    pub kind: EpochKind,
    pub forward_items: Vec<LineItem>,
    pub backward_items: Vec<LineItem>,
    pub block: CostPolynomial,
    pub model: CostPolynomial,
    pub m: Ratio<u128>,
    pub samples: Option<u128>,
    pub value: Ratio<u128>,
}

impl CostReport {
    /// `samples = None` reports one sample through the model.
    pub fn build(spec: &ArchSpec, kind: EpochKind, m: Ratio<u128>, samples: Option<u128>) -> Result<Self> {
        spec.validate()?;
        let (forward_items, backward_items, model) = match kind {
            EpochKind::Infer => (fwd_items_std(spec), Vec::new(), infer_model_poly(spec)?),
            EpochKind::Train(CostMode::Standard) => (
                fwd_items_std(spec),
                bwd_items_std(spec),
                train_model_poly(spec, CostMode::Standard)?,
            ),
            EpochKind::Train(CostMode::Lora) => {
                let r = spec.rank()?;
                (
                    fwd_items_lora(spec, r),
                    bwd_items_lora(spec, r),
                    train_model_poly(spec, CostMode::Lora)?,
                )
            }
        };
        let block = total(&forward_items) + total(&backward_items);
        let value = epoch_cost(spec, m, samples.unwrap_or(1), kind)?;
        Ok(Self {
            spec: *spec,
            kind,
            forward_items,
            backward_items,
            block,
            model,
            m,
            samples,
            value,
        })
    }

    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        for it in &self.forward_items {
            rows.push((format!("forward  {}", it.name), it.cost.to_string()));
        }
        for it in &self.backward_items {
            rows.push((format!("backward {}", it.name), it.cost.to_string()));
        }
        rows.push(("per block".into(), self.block.to_string()));
        rows.push((format!("model (L={})", self.spec.layers), self.model.to_string()));
        rows.push(("m".into(), format_exact(&self.m)));
        let label = match self.samples {
            Some(n) => {
                rows.push(("N".into(), n.to_string()));
                "total"
            }
            None => "per sample",
        };
        rows.push((label.into(), format_grouped(&self.value)));
        rows.push(("".into(), format_sci(&self.value)));
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }

    /// JSON with every count as an exact decimal string.
    pub fn to_json(&self) -> serde_json::Value {
        let poly = |p: &CostPolynomial| {
            serde_json::json!({
                "quadratic": p.quadratic.to_string(),
                "linear": p.linear.to_string(),
                "constant": p.constant.to_string(),
            })
        };
        let items = |xs: &[LineItem]| {
            xs.iter()
                .map(|it| serde_json::json!({"name": it.name, "cost": poly(&it.cost)}))
                .collect::<Vec<_>>()
        };
        let kind = match self.kind {
            EpochKind::Infer => "infer",
            EpochKind::Train(CostMode::Standard) => "train-standard",
            EpochKind::Train(CostMode::Lora) => "train-lora",
        };
        serde_json::json!({
            "kind": kind,
            "layers": self.spec.layers.to_string(),
            "forward_items": items(&self.forward_items),
            "backward_items": items(&self.backward_items),
            "block": poly(&self.block),
            "model": poly(&self.model),
            "m": format_exact(&self.m),
            "n": self.samples.map(|n| n.to_string()),
            "value": format_exact(&self.value),
            "value_sci": format_sci(&self.value),
        })
    }
}

/// Training cost of the encoder relative to a reference model, with the
/// encoder's one-off embedding pass spread over `epochs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmortizationReport {
    pub per_epoch_ratio: f64,
    pub epochs: u64,
    pub cumulative_ratio: f64,
}

pub fn cumulative_ratio(
    encoder_epoch: &Ratio<u128>,
    embed_oneoff: &Ratio<u128>,
    reference_epoch: &Ratio<u128>,
    epochs: u64,
) -> f64 {
    let e = Ratio::from_integer(u128::from(epochs));
    to_f64(&((encoder_epoch * e + embed_oneoff) / (reference_epoch * e)))
}

pub fn amortization_report(
    encoder_epoch: &Ratio<u128>,
    embed_oneoff: &Ratio<u128>,
    reference_epoch: &Ratio<u128>,
    epochs: u64,
) -> Result<AmortizationReport> {
    let zero = Ratio::from_integer(0);
    if *encoder_epoch == zero || *embed_oneoff == zero || *reference_epoch == zero || epochs == 0 {
        return Err(SceError::Domain("amortization inputs must be positive".into()));
    }
    Ok(AmortizationReport {
        per_epoch_ratio: to_f64(&(encoder_epoch / reference_epoch)),
        epochs,
        cumulative_ratio: cumulative_ratio(encoder_epoch, embed_oneoff, reference_epoch, epochs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> ArchSpec {
        ArchSpec::new(1, 2, 4, 1).unwrap()
    }

    fn int(x: u128) -> Ratio<u128> {
        Ratio::from_integer(x)
    }

    // Hand-written sums of the per-row table entries, kept apart from the
    // line-item code.
    fn oracle_fwd_std(d: u128, f: u128, n: u128, m: u128) -> u128 {
        4 * m * d * d + 2 * m * m * d + m * d * f * n
    }

    fn oracle_fwd_lora(d: u128, f: u128, n: u128, r: u128, m: u128) -> u128 {
        4 * m * (d * d + 2 * d * r) + 2 * m * m * d + m * (d * f + d * r + f * r) * n
    }

    fn oracle_bwd_lora(d: u128, f: u128, n: u128, r: u128, m: u128) -> u128 {
        4 * m * (d * d + 4 * d * r) + 4 * m * m * d + m * (d * f + 2 * d * r + 2 * f * r) * n
    }

    #[test]
    fn small_block_examples() {
        assert_eq!(fwd_block_std(&toy(), 1).unwrap(), 36);
        assert_eq!(bwd_block_std(&toy(), 1).unwrap(), 72);
        let lora = toy().with_lora_rank(1).unwrap();
        assert_eq!(fwd_block_lora(&lora, 1).unwrap(), 64);
        assert!(matches!(fwd_block_std(&toy(), 0), Err(SceError::Domain(_))));
        assert!(matches!(fwd_block_lora(&toy(), 1), Err(SceError::MissingRank)));
    }

    #[test]
    fn roberta_block_at_m11() {
        let s = ArchSpec::preset("roberta-base").unwrap();
        assert_eq!(fwd_block_std(&s, 11).unwrap(), oracle_fwd_std(768, 3072, 2, 11));
        assert_eq!(fwd_block_std(&s, 11).unwrap(), 78_042_624);
        assert_eq!(bwd_block_std(&s, 11).unwrap(), 156_085_248);
    }

    #[test]
    fn llama_lora_block() {
        let s = ArchSpec::preset("llama-3.2-1b-lora-r180").unwrap();
        let fwd = fwd_block_lora(&s, 1).unwrap();
        let bwd = bwd_block_lora(&s, 1).unwrap();
        assert_eq!(fwd, oracle_fwd_lora(2048, 8192, 3, 180, 1));
        assert_eq!(bwd, oracle_bwd_lora(2048, 8192, 3, 180, 1));
        assert_eq!(fwd, 75_591_680);
        assert_eq!(bwd, 84_074_496);
        assert_eq!(fwd + bwd, 159_653_888 + 12_288);
        let block = fwd_block_lora_poly(&s).unwrap() + bwd_block_lora_poly(&s).unwrap();
        assert_eq!(block, CostPolynomial::new(12_288, 159_653_888, 0));
    }

    #[test]
    fn model_polynomials() {
        let llama = ArchSpec::preset("llama-3.2-1b-lora-r180").unwrap();
        assert_eq!(
            train_model_poly(&llama, CostMode::Lora).unwrap(),
            CostPolynomial::new(196_608, 2_554_462_208, 0)
        );
        let sce = ArchSpec::preset("roberta-sce").unwrap();
        assert_eq!(
            train_model_poly(&sce, CostMode::Standard).unwrap(),
            CostPolynomial::new(55_296, 254_803_968, 2_359_296)
        );
        let jina = ArchSpec::preset("jina-v3").unwrap();
        assert_eq!(infer_model_poly(&jina).unwrap(), CostPolynomial::new(49_152, 301_989_888, 0));
        assert_eq!(infer_flops_model(&jina, 1).unwrap(), 302_039_040);
        let one = ArchSpec::new(1, 64, 256, 4).unwrap();
        assert_eq!(infer_flops_model(&one, 7).unwrap(), fwd_block_std(&one, 7).unwrap());
    }

    #[test]
    fn epoch_totals() {
        let llama = ArchSpec::preset("llama-3.2-1b-lora-r180").unwrap();
        let e = epoch_cost(&llama, int(225), 16_000, EpochKind::Train(CostMode::Lora)).unwrap();
        assert_eq!(e, int(16_000 * (2_554_462_208 * 225 + 196_608 * 225 * 225)));
        assert_eq!(e, int(9_355_316_428_800_000));
        assert_eq!(format_sci(&e), "9.355e15");

        let sce = ArchSpec::preset("roberta-sce").unwrap();
        let e = epoch_cost(&sce, int(11), 16_000, EpochKind::Train(CostMode::Standard)).unwrap();
        assert_eq!(e, int(44_990_300_160_000));

        let jina = ArchSpec::preset("jina-v3").unwrap();
        let m = parse_decimal("84.17").unwrap();
        let e = epoch_cost(&jina, m, 16_000, EpochKind::Infer).unwrap();
        assert_eq!(e, Ratio::new(2_061_336_846_925_824, 5));
        assert_eq!(format_exact(&e), "412267369385164.8");
    }

    #[test]
    fn amortization() {
        let llama = int(9_355_316_428_800_000);
        let sce = int(44_990_300_160_000);
        let embed = Ratio::new(2_061_336_846_925_824, 5);
        let r = amortization_report(&sce, &embed, &llama, 1).unwrap();
        assert!((r.per_epoch_ratio - 0.004809).abs() < 1e-6);
        assert_eq!(format!("{:.3}", r.per_epoch_ratio), "0.005");
        assert!((r.cumulative_ratio - 0.048877).abs() < 1e-6);
        let far = amortization_report(&sce, &embed, &llama, 1_000_000_000).unwrap();
        assert!((far.cumulative_ratio - far.per_epoch_ratio).abs() < 1e-9);
        assert!(amortization_report(&sce, &int(0), &llama, 1).is_err());
    }

    #[test]
    fn lora_linear_layer_backward() {
        for d in 1..20u128 {
            for r in 1..8u128 {
                assert_eq!(lora_linear_bwd(d, d, r), d * d + 2 * d * r + 2 * r * d);
            }
        }
        // one projection row of the block table is m·(d² + 4dr)
        assert_eq!(lora_linear_bwd(2048, 2048, 180), 2048 * 2048 + 4 * 2048 * 180);
    }

    #[test]
    fn spec_validation() {
        assert!(ArchSpec::new(1, 10, 4, 3).is_err());
        assert!(ArchSpec::new(0, 8, 4, 2).is_err());
        assert!(toy().with_lora_rank(0).is_err());
        assert!(toy().with_ffn_layers(0, 1).is_err());
        assert!(ArchSpec::preset("gpt-9").is_err());
        for name in PRESET_NAMES {
            ArchSpec::preset(name).unwrap();
        }
        let mut bad = toy();
        bad.head_dim = 3;
        assert!(matches!(fwd_block_std(&bad, 1), Err(SceError::Validation(_))));
    }

    #[test]
    fn decimal_parsing_and_formatting() {
        assert_eq!(parse_decimal("84.17").unwrap(), Ratio::new(8417, 100));
        assert_eq!(parse_decimal("225").unwrap(), int(225));
        assert_eq!(parse_decimal(".5").unwrap(), Ratio::new(1, 2));
        for bad in ["", ".", "-1", "1e3", "1.2.3", "abc"] {
            assert!(parse_decimal(bad).is_err(), "{bad}");
        }
        assert_eq!(format_exact(&Ratio::new(1, 8)), "0.125");
        assert_eq!(format_exact(&Ratio::new(1, 3)), "1/3");
        assert_eq!(format_grouped(&int(9_355_316_428_800_000)), "9,355,316,428,800,000");
        assert_eq!(format_grouped(&Ratio::new(2_061_336_846_925_824, 5)), "412,267,369,385,164.8");
    }

    #[test]
    fn report_renders_and_serializes() {
        let llama = ArchSpec::preset("llama-3.2-1b-lora-r180").unwrap();
        let r = CostReport::build(&llama, EpochKind::Train(CostMode::Lora), int(225), Some(16_000)).unwrap();
        let table = r.render_table();
        assert!(table.contains("9,355,316,428,800,000"));
        assert!(table.contains("9.355e15"));
        let json = r.to_json();
        assert_eq!(json["value"], "9355316428800000");
        assert_eq!(json["model"]["linear"], "2554462208");
        let roberta = ArchSpec::preset("roberta-base").unwrap();
        assert!(CostReport::build(&roberta, EpochKind::Train(CostMode::Lora), int(1), None).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = ArchSpec> {
        (1u128..40, 1u128..16, 1u128..64, 1u128..5000, 1u128..4, 1u128..4).prop_map(|(l, h, dh, f, n1, n2)| {
            ArchSpec::new(l, h * dh, f, h)
                .unwrap()
                .with_ffn_layers(n1, n2)
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn standard_backward_doubles_forward(s in arb_spec(), m in 1u128..4096) {
            prop_assert_eq!(bwd_block_std(&s, m).unwrap(), 2 * fwd_block_std(&s, m).unwrap());
            prop_assert_eq!(
                train_flops_model(&s, m, CostMode::Standard).unwrap(),
                s.layers * (fwd_block_std(&s, m).unwrap() + bwd_block_std(&s, m).unwrap())
            );
        }

        #[test]
        fn lora_forward_at_rank_zero_is_standard(s in arb_spec()) {
            prop_assert_eq!(total(&fwd_items_lora(&s, 0)), fwd_block_std_poly(&s).unwrap());
        }

        #[test]
        fn lora_backward_at_rank_zero_skips_frozen_weight_grads(s in arb_spec()) {
            // only the input-gradient products of the frozen layers remain
            let std = bwd_block_std_poly(&s).unwrap();
            let frozen = CostPolynomial::new(0, 4 * s.d_model * s.d_model + s.d_model * s.d_ff * (s.ffn_expand + s.ffn_contract), 0);
            prop_assert_eq!(total(&bwd_items_lora(&s, 0)) + frozen, std);
        }

        #[test]
        fn lora_matches_table_oracle(s in arb_spec(), r in 1u128..300, m in 1u128..512) {
            let s = s.with_lora_rank(r).unwrap();
            let n = s.ffn_expand + s.ffn_contract;
            prop_assert_eq!(fwd_block_lora(&s, m).unwrap(), oracle_fwd_lora(s.d_model, s.d_ff, n, r, m));
            prop_assert_eq!(bwd_block_lora(&s, m).unwrap(), oracle_bwd_lora(s.d_model, s.d_ff, n, r, m));
        }

        #[test]
        fn costs_increase_in_every_dimension(s in arb_spec(), r in 1u128..300, m in 1u128..512) {
            let s = s.with_lora_rank(r).unwrap();
            let cost = |s: &ArchSpec, m| (
                train_flops_model(s, m, CostMode::Standard).unwrap(),
                train_flops_model(s, m, CostMode::Lora).unwrap(),
                infer_flops_model(s, m).unwrap(),
            );
            let base = cost(&s, m);
            let bigger = [
                cost(&s, m + 1),
                cost(&ArchSpec { layers: s.layers + 1, ..s }, m),
                cost(&ArchSpec { d_ff: s.d_ff + 1, ..s }, m),
                cost(&ArchSpec { d_model: s.d_model + s.heads, head_dim: s.head_dim + 1, ..s }, m),
            ];
            for b in bigger {
                prop_assert!(b.0 > base.0 && b.1 > base.1 && b.2 > base.2);
            }
            let more_rank = ArchSpec { lora_rank: Some(r + 1), ..s };
            prop_assert!(train_flops_model(&more_rank, m, CostMode::Lora).unwrap() > base.1);
        }
    }
}
