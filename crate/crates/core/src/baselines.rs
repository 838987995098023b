//! Reference classifiers: embedding similarity and subset softmax over
//! next-token logits of a language model. No language model runs here; the
//! prompt template is shipped so logits can be produced elsewhere.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, SceError};
use crate::model::PredictionDistribution;
use crate::tensor::dot;

/// Prompt with `{text_excerpt}` and `{categories}` placeholders.
pub const LLM_PROMPT_TEMPLATE: &str = include_str!("../assets/llm_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMode {
    /// Raw inner product `zᵀl`.
    Dot,
    /// Inner product of the unit-normalised vectors.
    Cosine,
}

impl FromStr for SimilarityMode {
    type Err = SceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "cosine" => Ok(Self::Cosine),
            other => Err(SceError::Config(format!("unknown similarity mode `{other}`"))),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scores each label vector against `z`, softmaxes, and picks the argmax
/// (lowest index on ties).
///
/// In cosine mode a zero vector yields [`SceError::DegenerateVector`] carrying
/// the offending position: 0 for `z`, `k + 1` for label `k`.
pub fn cosine_classify<L: AsRef<[f64]>>(z: &[f64], labels: &[L], mode: SimilarityMode) -> Result<PredictionDistribution> {
    if labels.is_empty() {
        return Err(SceError::Domain("at least one label vector is required".into()));
    }
    for l in labels {
        if l.as_ref().len() != z.len() {
            return Err(SceError::dim(
                "cosine_classify",
                format!("label vector of length {} vs text vector of length {}", l.as_ref().len(), z.len()),
            ));
        }
    }
    let scores = match mode {
        SimilarityMode::Dot => labels.iter().map(|l| dot(z, l.as_ref())).collect(),
        SimilarityMode::Cosine => {
            let zn = norm(z);
            if zn == 0.0 {
                return Err(SceError::DegenerateVector(0));
            }
            labels
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    let ln = norm(l.as_ref());
                    if ln == 0.0 {
                        Err(SceError::DegenerateVector(k + 1))
                    } else {
                        Ok(dot(z, l.as_ref()) / (zn * ln))
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    PredictionDistribution::from_scores(scores)
}

/// Next-token logits plus the vocabulary ids of the K candidate labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsView {
    pub logits: Vec<f64>,
    pub label_token_ids: Vec<usize>,
}

impl LogitsView {
    pub fn new(logits: Vec<f64>, label_token_ids: Vec<usize>) -> Result<Self> {
        let view = Self {
            logits,
            label_token_ids,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_token_ids.is_empty() {
            return Err(SceError::Domain("at least one label token id is required".into()));
        }
        let mut seen = HashSet::new();
        for &id in &self.label_token_ids {
            if id >= self.logits.len() {
                return Err(SceError::Validation(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.logits.len()
                )));
            }
            if !seen.insert(id) {
                return Err(SceError::Validation(format!("token id {id} listed twice")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// `vocab=<|V|>`, then one line of |V| logits, then one line of K ids.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| SceError::Format {
                line: 0,
                msg: format!("missing {what} line"),
            })
        };
        let (i, header) = next("header")?;
        let vocab: usize = header
            .trim()
            .strip_prefix("vocab=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SceError::Format {
                line: i + 1,
                msg: format!("expected `vocab=<size>`, got `{header}`"),
            })?;
        let (i, logit_line) = next("logits")?;
        let logits = logit_line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|e| SceError::Format {
                    line: i + 1,
                    msg: format!("bad logit `{v}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if logits.len() != vocab {
            return Err(SceError::Format {
                line: i + 1,
                msg: format!("expected {vocab} logits, found {}", logits.len()),
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(SceError::Format {
                line: i + 1,
                msg: "logits must be finite".into(),
            });
        }
        let (i, id_line) = next("label id")?;
        let ids = id_line
            .split_whitespace()
            .map(|v| {
                v.parse::<usize>().map_err(|e| SceError::Format {
                    line: i + 1,
                    msg: format!("bad token id `{v}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((j, _)) = lines.next() {
            return Err(SceError::Format {
                line: j + 1,
                msg: "unexpected trailing content".into(),
            });
        }
        Self::new(logits, ids)
    }
}

/// Softmax over the selected logits only.
pub fn llm_subset_softmax(view: &LogitsView) -> Result<PredictionDistribution> {
    view.validate()?;
    let scores = view.label_token_ids.iter().map(|&id| view.logits[id]).collect();
    PredictionDistribution::from_scores(scores)
}

/// Fills the prompt template. Categories are joined with `", "`.
pub fn render_prompt<S: AsRef<str>>(text: &str, categories: &[S]) -> String {
    let joined = categories.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ");
    LLM_PROMPT_TEMPLATE
        .replace("{categories}", &joined)
        .replace("{text_excerpt}", text)
}
