//! Frozen text-embedding functions `q = g(x)`.
//!
//! Two kinds exist: a seeded hashed bag of words that needs no model, and a
//! store of precomputed vectors read from disk (for plugging in embeddings
//! produced elsewhere). Neither has trainable state.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::tokenize;
use crate::error::{Result, SceError};

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingProvider {
    Hashed { dim: usize, seed: u64 },
    Precomputed { dim: usize, store: HashMap<String, Vec<f64>> },
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed pseudo-random unit vector for a word.
pub fn word_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(fnv1a(word.as_bytes()) ^ splitmix64(seed)));
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl EmbeddingProvider {
    pub fn hashed(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(SceError::Config("embedding dimension must be positive".into()));
        }
        Ok(Self::Hashed { dim, seed })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Hashed { dim, .. } | Self::Precomputed { dim, .. } => *dim,
        }
    }

    /// Embeds a text (hashed kind) or looks up a text id (precomputed kind).
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        match self {
            Self::Hashed { dim, seed } => embed_text_hashed(text, *dim, *seed),
            Self::Precomputed { store, .. } => store
                .get(text)
                .cloned()
                .ok_or_else(|| SceError::MissingEmbedding(text.to_string())),
        }
    }

    /// Reads `dim=<d>` then one `id<TAB>v1 v2 ...` record per line.
    pub fn load_precomputed(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        Self::parse_precomputed(&fs::read_to_string(path)?, dim)
    }

    pub fn parse_precomputed(text: &str, dim: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
        let declared: usize = header
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| SceError::Format {
                line: 1,
                msg: format!("expected header `dim=<d>`, got `{header}`"),
            })?;
        if declared != dim {
            return Err(SceError::Format {
                line: 1,
                msg: format!("file declares dim={declared}, expected {dim}"),
            });
        }
        let mut store = HashMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| SceError::Format { line: i + 1, msg };
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `id<TAB>values`".into()))?;
            let vec = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| err(format!("bad value `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vec.len() != dim {
                return Err(err(format!("id `{id}` has {} values, expected {dim}", vec.len())));
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(err(format!("id `{id}` has a non-finite value")));
            }
            if store.insert(id.to_string(), vec).is_some() {
                return Err(err(format!("id `{id}` appears twice")));
            }
        }
        Ok(Self::Precomputed { dim, store })
    }
}

/// Mean of per-word hash vectors, then L2-normalised.
pub fn embed_text_hashed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    let words = tokenize(text);
    if words.is_empty() {
        return Err(SceError::EmptyText);
    }
    let mut acc = vec![0.0; dim];
    for w in &words {
        for (a, x) in acc.iter_mut().zip(word_vector(w, dim, seed)) {
            *a += x;
        }
    }
    let n = words.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    normalize(&mut acc);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn hashed_examples() {
        let p = EmbeddingProvider::hashed(16, 7).unwrap();
        let a = p.embed("The match ended").unwrap();
        let b = p.embed("The match ended").unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(p.embed("alpha alpha").unwrap(), p.embed("alpha").unwrap());
        for text in ["x", "a b c d e f", "Storm, rain; FLOOD!"] {
            assert!((norm(&p.embed(text).unwrap()) - 1.0).abs() < 1e-12);
        }
        assert!(matches!(p.embed("   \t "), Err(SceError::EmptyText)));
    }

    #[test]
    fn seed_changes_the_vectors() {
        let a = embed_text_hashed("alpha", 8, 0).unwrap();
        let b = embed_text_hashed("alpha", 8, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn word_vectors_are_pinned() {
        // guards against silent changes of the hash or the generator
        let v = word_vector("sports", 4, 0);
        let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        assert_eq!(
            bits,
            vec![0x3fb258bcf810904b, 0xbfc6a193f720e8ae, 0x3fe420862a911548, 0xbfe81df6de7ec51a]
        );
        assert!((norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precomputed_examples() {
        let p = EmbeddingProvider::parse_precomputed("dim=3\na\t0 0 0\n", 3).unwrap();
        assert_eq!(p.embed("a").unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(matches!(p.embed("b"), Err(SceError::MissingEmbedding(id)) if id == "b"));

        let bad = EmbeddingProvider::parse_precomputed("dim=3\na\t0 0 0\nb\t1 2\n", 3);
        assert!(matches!(bad, Err(SceError::Format { line: 3, .. })));
        let bad = EmbeddingProvider::parse_precomputed("dim=4\na\t0 0 0\n", 3);
        assert!(matches!(bad, Err(SceError::Format { line: 1, .. })));
    }

    #[test]
    fn load_precomputed_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        std::fs::write(&path, "dim=2\ndoc-1\t0.5 -0.25\n").unwrap();
        let p = EmbeddingProvider::load_precomputed(&path, 2).unwrap();
        assert_eq!(p.embed("doc-1").unwrap(), vec![0.5, -0.25]);
        assert_eq!(p.dim(), 2);
    }
}
