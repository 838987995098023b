use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LexiconEntry;
use crate::error::{Result, SceError};

/// One classification sample: a text, its candidate labels and the gold index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationInstance {
    pub text: String,
    pub labels: Vec<String>,
    pub gold: usize,
    /// Alternatives for the gold label, keyed by the gold label string.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synonyms: Option<BTreeMap<String, Vec<String>>>,
}

impl ClassificationInstance {
    pub fn new(text: impl Into<String>, labels: Vec<String>, gold: usize) -> Result<Self> {
        let inst = Self {
            text: text.into(),
            labels,
            gold,
            synonyms: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn gold_label(&self) -> &str {
        &self.labels[self.gold]
    }

    /// Synonym preset of the current gold label (empty if none).
    pub fn gold_synonyms(&self) -> &[String] {
        self.synonyms
            .as_ref()
            .and_then(|m| m.get(self.gold_label()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(SceError::Validation("instance has no candidate labels".into()));
        }
        if self.gold >= self.labels.len() {
            return Err(SceError::Validation(format!(
                "gold index {} out of range for {} labels",
                self.gold,
                self.labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &self.labels {
            if !seen.insert(l.as_str()) {
                return Err(SceError::DuplicateLabel(l.clone()));
            }
        }
        if let Some(map) = &self.synonyms {
            for (label, syns) in map {
                let mut own = HashSet::new();
                for s in syns {
                    if !own.insert(s.as_str()) {
                        return Err(SceError::Validation(format!(
                            "synonym `{s}` of `{label}` listed twice"
                        )));
                    }
                    if seen.contains(s.as_str()) {
                        return Err(SceError::Validation(format!(
                            "synonym `{s}` of `{label}` is already a candidate label"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads one instance per line, validating each.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<ClassificationInstance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ClassificationInstance = serde_json::from_str(&line).map_err(|e| SceError::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        inst.validate().map_err(|e| SceError::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

/// Reads one lexicon entry per line.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<LexiconEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LexiconEntry = serde_json::from_str(&line).map_err(|e| SceError::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Writes one JSON object per line, LF terminated.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_minimal_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"text\":\"t\",\"labels\":[\"a\",\"b\"],\"gold\":0}\n").unwrap();
        let got = load_jsonl(&p).unwrap();
        assert_eq!(got, vec![ClassificationInstance::new("t", labels(&["a", "b"]), 0).unwrap()]);
    }

    #[test]
    fn gold_out_of_range_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"text\":\"t\",\"labels\":[\"a\",\"b\"],\"gold\":0}\n{\"text\":\"t\",\"labels\":[\"a\",\"b\"],\"gold\":5}\n",
        )
        .unwrap();
        match load_jsonl(&p) {
            Err(SceError::Format { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("gold"));
            }
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "not json\n").unwrap();
        assert!(matches!(load_jsonl(&p), Err(SceError::Format { line: 1, .. })));
    }

    #[test]
    fn round_trip_preserves_instances() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let mut a = ClassificationInstance::new("héllo wörld", labels(&["x", "y", "z"]), 2).unwrap();
        a.synonyms = Some(BTreeMap::from([("z".to_string(), labels(&["zz", "zed"]))]));
        let b = ClassificationInstance::new("plain", labels(&["x"]), 0).unwrap();
        write_jsonl(&p, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), vec![a, b]);
    }

    #[test]
    fn validation_rules() {
        assert!(matches!(
            ClassificationInstance::new("t", labels(&["a", "a"]), 0),
            Err(SceError::DuplicateLabel(_))
        ));
        let mut inst = ClassificationInstance::new("t", labels(&["a", "b"]), 0).unwrap();
        inst.synonyms = Some(BTreeMap::from([("a".to_string(), labels(&["b"]))]));
        assert!(inst.validate().is_err());
        inst.synonyms = Some(BTreeMap::from([("a".to_string(), labels(&["c", "c"]))]));
        assert!(inst.validate().is_err());
        inst.synonyms = Some(BTreeMap::from([("a".to_string(), labels(&["c", "d"]))]));
        inst.validate().unwrap();
        assert_eq!(inst.gold_synonyms(), &labels(&["c", "d"])[..]);
    }

    #[test]
    fn lexicon_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lexicon.jsonl");
        let entries = vec![LexiconEntry {
            token: "sports".into(),
            gloss: "match goal".into(),
        }];
        write_jsonl(&p, &entries).unwrap();
        assert_eq!(load_lexicon(&p).unwrap(), entries);
        std::fs::write(&p, "{\"token\":\"a\",\"gloss\":\"b\"}\nnot json\n").unwrap();
        assert!(matches!(load_lexicon(&p), Err(SceError::Format { line: 2, .. })));
    }
}
