//! Seeded topic-keyword corpus generator with a held-out (unseen) label split.
//!
//! Each topic owns a keyword list. A text for a topic draws every word either
//! from that list (probability `keyword_rate`) or from a shared filler
//! vocabulary. A seeded subset of topics never appears in training and is
//! used only for the unseen split. A small lexicon gives every label and
//! synonym a short gloss built from its topic's keywords; it plays the role of
//! pretrained knowledge about label words.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instance::ClassificationInstance;
use super::vocab::{single_token, tokenize};
use crate::error::{Result, SceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub label: String,
    pub keywords: Vec<String>,
    pub synonyms: Vec<String>,
}

impl Topic {
    pub fn new(label: &str, keywords: &str, synonyms: &str) -> Self {
        Self {
            label: label.to_string(),
            keywords: keywords.split_whitespace().map(str::to_string).collect(),
            synonyms: synonyms.split_whitespace().map(str::to_string).collect(),
        }
    }
}

/// How candidate label sets are formed for each generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSetMode {
    /// `K` uniform in `[k_min, k_max]`, gold plus distractors without replacement.
    Sampled,
    /// Every label of the split's topic pool.
    Full,
}

impl FromStr for LabelSetMode {
    type Err = SceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "full" => Ok(Self::Full),
            other => Err(SceError::Config(format!("unknown label_set_mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub topics: Vec<Topic>,
    pub texts_per_topic: usize,
    pub words_per_text: usize,
    pub keyword_rate: f64,
    pub noise_vocab_size: usize,
    pub seed: u64,
    /// Topics held out of training entirely.
    pub unseen_topics: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Share of each seen topic's texts routed to the seen test split.
    pub test_fraction: f64,
    pub label_set_mode: LabelSetMode,
    /// Words per lexicon gloss.
    pub gloss_words: usize,
}

/// Twelve news-like topics with disjoint keyword lists.
pub fn default_topics() -> Vec<Topic> {
    vec![
        Topic::new("sports", "match team coach league goal season player stadium score tournament referee championship", "athletics games"),
        Topic::new("politics", "election senate vote parliament minister campaign policy party governor ballot legislation congress", "government civics"),
        Topic::new("technology", "software startup chip gadget internet app device code robot cloud smartphone algorithm", "tech computing"),
        Topic::new("health", "doctor hospital patient vaccine disease clinic nurse symptom therapy medicine diagnosis virus", "wellness medical"),
        Topic::new("travel", "flight hotel tourist beach passport airline resort cruise luggage destination itinerary vacation", "tourism trips"),
        Topic::new("food", "recipe chef restaurant dinner flavor kitchen bake dessert ingredient cuisine menu spice", "cooking dining"),
        Topic::new("music", "album concert singer guitar band song melody tour lyrics orchestra rapper chart", "songs tunes"),
        Topic::new("science", "research experiment laboratory physics molecule telescope scientist theory fossil genome particle discovery", "sciences inquiry"),
        Topic::new("finance", "stock market investor bank profit shares earnings dividend inflation loan currency trading", "economy money"),
        Topic::new("weather", "storm rain forecast temperature snow hurricane wind flood humidity thunder drought heatwave", "climate meteorology"),
        Topic::new("crime", "police arrest suspect murder court robbery detective prison theft investigation fraud jury", "justice lawbreaking"),
        Topic::new("education", "school student teacher university exam classroom curriculum tuition lecture campus degree homework", "learning schooling"),
    ]
}

/// `count` artificial topics `topic<i>` with keywords `t<i>w<j>` and two
/// aliases each. Used to widen the pool of seen labels.
pub fn procedural_topics(count: usize, keywords_per_topic: usize) -> Vec<Topic> {
    (0..count)
        .map(|i| {
            let keywords: Vec<String> = (0..keywords_per_topic).map(|j| format!("t{i}w{j}")).collect();
            Topic::new(&format!("topic{i}"), &keywords.join(" "), &format!("topic{i}a topic{i}b"))
        })
        .collect()
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            topics: default_topics(),
            texts_per_topic: 40,
            words_per_text: 20,
            keyword_rate: 0.3,
            noise_vocab_size: 200,
            seed: 0,
            unseen_topics: 4,
            k_min: 3,
            k_max: 6,
            test_fraction: 0.25,
            label_set_mode: LabelSetMode::Sampled,
            gloss_words: 12,
        }
    }
}

/// Gloss text attached to a label or synonym token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub token: String,
    pub gloss: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<ClassificationInstance>,
    pub seen_test: Vec<ClassificationInstance>,
    pub unseen_test: Vec<ClassificationInstance>,
    pub lexicon: Vec<LexiconEntry>,
    /// Labels of the held-out topics.
    pub unseen_labels: Vec<String>,
}

fn filler_word(i: usize) -> String {
    format!("filler{i}")
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SceError::Validation(m));
        if self.topics.len() < 4 {
            return bad(format!("need at least 4 topics, got {}", self.topics.len()));
        }
        if self.unseen_topics < 2 || self.topics.len() - self.unseen_topics.min(self.topics.len()) < 2 {
            return bad(format!(
                "unseen_topics {} must leave >= 2 topics on each side of {}",
                self.unseen_topics,
                self.topics.len()
            ));
        }
        if !(self.keyword_rate > 0.0 && self.keyword_rate <= 1.0) {
            return bad(format!("keyword_rate {} outside (0, 1]", self.keyword_rate));
        }
        if self.keyword_rate < 1.0 && self.noise_vocab_size == 0 {
            return bad("keyword_rate < 1 needs a filler vocabulary".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} outside [0, 1)", self.test_fraction));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad(format!("invalid K range [{}, {}]", self.k_min, self.k_max));
        }
        if self.texts_per_topic == 0 || self.words_per_text == 0 || self.gloss_words == 0 {
            return bad("texts_per_topic, words_per_text and gloss_words must be positive".into());
        }
        let mut names = HashSet::new();
        for t in &self.topics {
            for name in std::iter::once(&t.label).chain(&t.synonyms) {
                let tok = single_token(name)?;
                if tok != *name {
                    return bad(format!("label `{name}` must already be a lowercase token"));
                }
                if !names.insert(name.clone()) {
                    return bad(format!("label or synonym `{name}` appears twice"));
                }
            }
            if t.keywords.is_empty() {
                return bad(format!("topic `{}` has no keywords", t.label));
            }
        }
        let mut keywords = HashSet::new();
        for t in &self.topics {
            for k in &t.keywords {
                if tokenize(k) != [k.clone()] {
                    return bad(format!("keyword `{k}` must be a lowercase token"));
                }
                if !keywords.insert(k.clone()) {
                    return bad(format!("keyword `{k}` is shared between topics"));
                }
                if names.contains(k) {
                    return bad(format!("keyword `{k}` collides with a label or synonym"));
                }
            }
        }
        for i in 0..self.noise_vocab_size {
            let f = filler_word(i);
            if keywords.contains(&f) || names.contains(&f) {
                return bad(format!("filler word `{f}` collides with topic vocabulary"));
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines followed by an optional `[topics]` block of
    /// `label: keyword keyword ... | synonym synonym` lines. `#` starts a comment.
    /// `extra_topics=<n>` appends `n` [`procedural_topics`] of 12 keywords.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut topics = Vec::new();
        let mut in_topics = false;
        let mut extra = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SceError::Format { line: i + 1, msg };
            if line == "[topics]" {
                in_topics = true;
                continue;
            }
            if in_topics {
                let (label, rest) = line
                    .split_once(':')
                    .ok_or_else(|| err("topic line needs `label: keywords | synonyms`".into()))?;
                let (kw, syn) = rest.split_once('|').unwrap_or((rest, ""));
                topics.push(Topic::new(label.trim(), kw, syn));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            let value = value.trim();
            let num = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            let real = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
            match key.trim() {
                "texts_per_topic" => spec.texts_per_topic = num(value)?,
                "words_per_text" => spec.words_per_text = num(value)?,
                "keyword_rate" => spec.keyword_rate = real(value)?,
                "noise_vocab_size" => spec.noise_vocab_size = num(value)?,
                "seed" => spec.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
                "unseen_topics" => spec.unseen_topics = num(value)?,
                "k_min" => spec.k_min = num(value)?,
                "k_max" => spec.k_max = num(value)?,
                "test_fraction" => spec.test_fraction = real(value)?,
                "label_set_mode" => spec.label_set_mode = value.parse().map_err(|e: SceError| err(e.to_string()))?,
                "gloss_words" => spec.gloss_words = num(value)?,
                "extra_topics" => extra = num(value)?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        if !topics.is_empty() {
            spec.topics = topics;
        }
        spec.topics.extend(procedural_topics(extra, 12));
        spec.validate()?;
        Ok(spec)
    }
}

fn sample_text(topic: &Topic, spec: &SyntheticCorpusSpec, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<String> = (0..spec.words_per_text)
        .map(|_| {
            if spec.noise_vocab_size == 0 || rng.random_bool(spec.keyword_rate) {
                topic.keywords.choose(rng).unwrap().clone()
            } else {
                filler_word(rng.random_range(0..spec.noise_vocab_size))
            }
        })
        .collect();
    words.join(" ")
}

fn label_set(
    gold: usize,
    pool: &[usize],
    spec: &SyntheticCorpusSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut set = match spec.label_set_mode {
        LabelSetMode::Full => pool.to_vec(),
        LabelSetMode::Sampled => {
            let k_hi = spec.k_max.min(pool.len());
            let k_lo = spec.k_min.min(k_hi);
            let k = rng.random_range(k_lo..=k_hi);
            let others: Vec<usize> = pool.iter().copied().filter(|&t| t != gold).collect();
            let mut set: Vec<usize> = others.choose_multiple(rng, k - 1).copied().collect();
            set.push(gold);
            set
        }
    };
    set.shuffle(rng);
    set
}

fn make_instance(
    text: String,
    topic: usize,
    pool: &[usize],
    spec: &SyntheticCorpusSpec,
    with_synonyms: bool,
    rng: &mut ChaCha8Rng,
) -> ClassificationInstance {
    let set = label_set(topic, pool, spec, rng);
    let gold = set.iter().position(|&t| t == topic).unwrap();
    let labels = set.iter().map(|&t| spec.topics[t].label.clone()).collect();
    let t = &spec.topics[topic];
    let synonyms = (with_synonyms && !t.synonyms.is_empty())
        .then(|| BTreeMap::from([(t.label.clone(), t.synonyms.clone())]));
    ClassificationInstance {
        text,
        labels,
        gold,
        synonyms,
    }
}

/// Generates the train, seen-test and unseen-test splits plus the lexicon.
pub fn gen_synthetic(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..spec.topics.len()).collect();
    order.shuffle(&mut rng);
    let mut unseen: Vec<usize> = order[..spec.unseen_topics].to_vec();
    unseen.sort_unstable();
    let seen: Vec<usize> = (0..spec.topics.len()).filter(|t| !unseen.contains(t)).collect();
    let n_test = (spec.texts_per_topic as f64 * spec.test_fraction).round() as usize;

    let mut corpus = SyntheticCorpus {
        train: Vec::new(),
        seen_test: Vec::new(),
        unseen_test: Vec::new(),
        lexicon: Vec::new(),
        unseen_labels: unseen.iter().map(|&t| spec.topics[t].label.clone()).collect(),
    };
    for (t, topic) in spec.topics.iter().enumerate() {
        let is_unseen = unseen.contains(&t);
        for j in 0..spec.texts_per_topic {
            let text = sample_text(topic, spec, &mut rng);
            if is_unseen {
                let inst = make_instance(text, t, &unseen, spec, false, &mut rng);
                corpus.unseen_test.push(inst);
            } else if j < n_test {
                let inst = make_instance(text, t, &seen, spec, false, &mut rng);
                corpus.seen_test.push(inst);
            } else {
                let inst = make_instance(text, t, &seen, spec, true, &mut rng);
                corpus.train.push(inst);
            }
        }
    }
    for topic in &spec.topics {
        for token in std::iter::once(&topic.label).chain(&topic.synonyms) {
            let gloss: Vec<&str> = (0..spec.gloss_words)
                .map(|_| topic.keywords.choose(&mut rng).unwrap().as_str())
                .collect();
            corpus.lexicon.push(LexiconEntry {
                token: token.clone(),
                gloss: gloss.join(" "),
            });
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_jsonl;

    fn small_spec() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            texts_per_topic: 10,
            ..SyntheticCorpusSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        small_spec().validate().unwrap();
    }

    #[test]
    fn generation_is_byte_identical_for_a_seed() {
        let dir = tempfile::tempdir().unwrap();
        let a = gen_synthetic(&small_spec()).unwrap();
        let b = gen_synthetic(&small_spec()).unwrap();
        for (i, c) in [a, b].iter().enumerate() {
            write_jsonl(dir.path().join(format!("train{i}")), &c.train).unwrap();
            write_jsonl(dir.path().join(format!("unseen{i}")), &c.unseen_test).unwrap();
        }
        for name in ["train", "unseen"] {
            let x = std::fs::read(dir.path().join(format!("{name}0"))).unwrap();
            let y = std::fs::read(dir.path().join(format!("{name}1"))).unwrap();
            assert_eq!(x, y);
        }
        let other = gen_synthetic(&SyntheticCorpusSpec { seed: 1, ..small_spec() }).unwrap();
        assert_ne!(other.train, gen_synthetic(&small_spec()).unwrap().train);
    }

    #[test]
    fn unseen_labels_never_reach_training() {
        let c = gen_synthetic(&small_spec()).unwrap();
        let train_labels: HashSet<&str> = c
            .train
            .iter()
            .chain(&c.seen_test)
            .flat_map(|i| i.labels.iter().map(String::as_str))
            .collect();
        let unseen_labels: HashSet<&str> = c
            .unseen_test
            .iter()
            .flat_map(|i| i.labels.iter().map(String::as_str))
            .collect();
        assert!(!unseen_labels.is_empty());
        assert!(train_labels.is_disjoint(&unseen_labels));
        assert_eq!(c.unseen_labels.len(), 4);
        for inst in c.train.iter().chain(&c.seen_test).chain(&c.unseen_test) {
            inst.validate().unwrap();
            assert!((3..=6).contains(&inst.labels.len()));
        }
    }

    #[test]
    fn pure_keyword_texts_are_solved_by_keyword_counting() {
        let spec = SyntheticCorpusSpec {
            keyword_rate: 1.0,
            noise_vocab_size: 0,
            ..small_spec()
        };
        let c = gen_synthetic(&spec).unwrap();
        let owner: BTreeMap<&str, &Topic> = spec
            .topics
            .iter()
            .flat_map(|t| t.keywords.iter().map(move |k| (k.as_str(), t)))
            .collect();
        for inst in c.train.iter().chain(&c.seen_test).chain(&c.unseen_test) {
            let words = tokenize(&inst.text);
            assert!(words.iter().all(|w| owner.contains_key(w.as_str())));
            let counts: Vec<usize> = inst
                .labels
                .iter()
                .map(|l| words.iter().filter(|w| owner[w.as_str()].label == *l).count())
                .collect();
            let best = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
            assert_eq!(best, inst.gold);
        }
    }

    #[test]
    fn rejects_overlapping_keywords_and_too_few_topics() {
        let mut spec = small_spec();
        spec.topics[1].keywords.push("match".into());
        assert!(matches!(gen_synthetic(&spec), Err(SceError::Validation(_))));

        let mut spec = small_spec();
        spec.topics.truncate(3);
        assert!(gen_synthetic(&spec).is_err());
    }

    #[test]
    fn full_mode_uses_the_whole_pool() {
        let spec = SyntheticCorpusSpec {
            label_set_mode: LabelSetMode::Full,
            ..small_spec()
        };
        let c = gen_synthetic(&spec).unwrap();
        assert!(c.train.iter().all(|i| i.labels.len() == 8));
        assert!(c.unseen_test.iter().all(|i| i.labels.len() == 4));
    }

    #[test]
    fn parse_spec_file() {
        let text = "\
# generator
texts_per_topic = 5
keyword_rate=0.5
seed=9
unseen_topics=2
[topics]
a: k1 k2 | aa
b: k3 k4
c: k5 k6 | cc
d: k7 k8
";
        let spec = SyntheticCorpusSpec::parse(text).unwrap();
        assert_eq!(spec.texts_per_topic, 5);
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.topics.len(), 4);
        assert_eq!(spec.topics[0].synonyms, vec!["aa"]);
        let c = gen_synthetic(&spec).unwrap();
        assert_eq!(c.unseen_test.len(), 10);

        assert!(matches!(
            SyntheticCorpusSpec::parse("bogus=1"),
            Err(SceError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn procedural_topics_extend_the_pool() {
        let spec = SyntheticCorpusSpec::parse("extra_topics=3\ntexts_per_topic=2\n").unwrap();
        assert_eq!(spec.topics.len(), 15);
        assert_eq!(spec.topics[12].label, "topic0");
        assert_eq!(spec.topics[14].keywords[11], "t2w11");
        assert_eq!(spec.topics[13].synonyms, vec!["topic1a", "topic1b"]);
        let c = gen_synthetic(&spec).unwrap();
        assert_eq!(c.lexicon.len(), 45);
    }
}
