use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use sce_core::baselines::{cosine_classify, llm_subset_softmax, render_prompt, LogitsView, SimilarityMode};
use sce_core::data::{gen_synthetic, load_jsonl, load_lexicon, write_jsonl};
use sce_core::flops::{parse_decimal, ArchSpec, CostMode, CostReport, EpochKind};
use sce_core::model::{forward_scores, load_checkpoint, save_checkpoint};
use sce_core::training::{embed_dataset, evaluate, grad_check_model, label_vocabulary, train_with, Stencil, TrainConfig};
use sce_core::{
    ClassificationInstance, EmbeddingProvider, LabelEmbeddingTable, PredictionDistribution, Result, SceConfig,
    SceError, SceParams, SyntheticCorpusSpec,
};

use crate::{
    BaselineCommand, ClassifyArgs, Command, CostArg, EmbedArgs, EvalArgs, FlopsArgs, FlopsMode, GenDataArgs,
    GradCheckArgs, SimilarityArg, StencilArg, TrainArgs,
};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*).map_err(SceError::Io)
    };
}

/// Names the file in I/O errors.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        SceError::Io(io) => SceError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

pub fn exit_code(e: &SceError) -> u8 {
    match e {
        SceError::Io(_) => 2,
        _ => 1,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Flops(a) => flops_cmd(a),
        Command::Baseline(b) => baseline_cmd(b),
        Command::GenData(a) => gen_data_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

fn provider(args: &EmbedArgs, dim: usize) -> Result<EmbeddingProvider> {
    match &args.embeddings {
        Some(path) => at(path, EmbeddingProvider::load_precomputed(path, dim)),
        None => EmbeddingProvider::hashed(dim, args.embed_seed),
    }
}

fn split_labels(s: &str) -> Vec<String> {
    s.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
}

fn write_json(value: &serde_json::Value) -> Result<()> {
    out!("{}", serde_json::to_string_pretty(value).expect("json values always serialize"))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::parse(&at(path, fs::read_to_string(path).map_err(SceError::Io))?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let instances = at(&a.data, load_jsonl(&a.data))?;
    let lexicon = match &a.lexicon {
        Some(path) => at(path, load_lexicon(path))?,
        None => Vec::new(),
    };
    let provider = provider(&a.embed, a.embed_dim)?;
    let vocab = label_vocabulary(&instances, &lexicon)?;
    let config = SceConfig::new(a.layers, a.d_model, a.heads, a.d_ff, a.embed_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = if lexicon.is_empty() {
        SceParams::random(config, vocab, &mut rng)?
    } else {
        let table = LabelEmbeddingTable::from_lexicon(vocab, a.d_model, &lexicon, &provider, &mut rng)?;
        SceParams::with_table(config, table, &mut rng)?
    };
    params.table.frozen = !a.unfreeze_embeddings;
    let dataset = embed_dataset(&instances, &provider)?;

    let report = train_with(&dataset, &mut params, &cfg, |s| {
        let _ = out!("epoch {} loss {:.6} acc {:.4}", s.epoch, s.loss, s.acc);
    })?;
    at(&a.out, save_checkpoint(&a.out, &params))?;
    if let Some(path) = &a.history {
        at(path, write_jsonl(path, &report.history))?;
    }
    if report.synonym_skips > 0 {
        out!("synonym substitutions skipped: {}", report.synonym_skips)?;
    }
    out!("wrote {}", a.out.display())?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let params = at(&a.checkpoint, load_checkpoint(&a.checkpoint))?;
    let provider = provider(&a.embed, params.adaptor.in_dim())?;
    let dataset = embed_dataset(&at(&a.data, load_jsonl(&a.data))?, &provider)?;
    let acc = evaluate(&dataset, &params)?;
    let percent = format!("{:.2}", 100.0 * acc);
    if a.json {
        write_json(&json!({"accuracy": percent, "fraction": acc, "count": dataset.len()}))?;
    } else {
        out!("{percent}")?;
    }
    Ok(())
}

fn print_distribution(labels: &[String], dist: &PredictionDistribution, as_json: bool) -> Result<()> {
    if as_json {
        let probs: Vec<_> = labels
            .iter()
            .zip(&dist.probs)
            .map(|(l, p)| json!({"label": l, "prob": p}))
            .collect();
        write_json(&json!({"label": labels[dist.argmax_index], "probs": probs}))?;
    } else {
        out!("{}", labels[dist.argmax_index])?;
        for (l, p) in labels.iter().zip(&dist.probs) {
            out!("{l}\t{p:.6}")?;
        }
    }
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let params = at(&a.checkpoint, load_checkpoint(&a.checkpoint))?;
    let provider = provider(&a.embed, params.adaptor.in_dim())?;
    let labels = split_labels(&a.labels);
    // validates the candidate set (non-empty, distinct labels)
    ClassificationInstance::new(a.text.clone(), labels.clone(), 0)?;
    let q = provider.embed(&a.text)?;
    let dist = forward_scores(&q, &labels, &params)?;
    print_distribution(&labels, &dist, a.json)?;
    Ok(())
}

fn arch_spec(a: &FlopsArgs) -> Result<ArchSpec> {
    let mut spec = match &a.preset {
        Some(name) => ArchSpec::preset(name)?,
        None => {
            let need = |v: Option<u128>, flag: &str| {
                v.ok_or_else(|| SceError::Config(format!("--{flag} is required without --preset")))
            };
            ArchSpec::new(
                need(a.layers, "layers")?,
                need(a.d_model, "d-model")?,
                need(a.d_ff, "d-ff")?,
                need(a.heads, "heads")?,
            )?
            .with_ffn_layers(a.ffn_expand, a.ffn_contract)?
        }
    };
    if let Some(r) = a.lora_rank {
        spec = spec.with_lora_rank(r)?;
    }
    if let Some(d) = a.external_dim {
        spec = spec.with_external_dim(d)?;
    }
    Ok(spec)
}

fn flops_cmd(a: FlopsArgs) -> Result<()> {
    let spec = arch_spec(&a)?;
    let m = parse_decimal(&a.m)?;
    let cost = match a.cost {
        Some(CostArg::Standard) => CostMode::Standard,
        Some(CostArg::Lora) => CostMode::Lora,
        None if spec.lora_rank.is_some() => CostMode::Lora,
        None => CostMode::Standard,
    };
    let (kind, samples) = match a.mode {
        FlopsMode::Train => (EpochKind::Train(cost), None),
        FlopsMode::TrainEpoch => (EpochKind::Train(cost), Some(a.n)),
        FlopsMode::Infer => (EpochKind::Infer, None),
        FlopsMode::InferEpoch => (EpochKind::Infer, Some(a.n)),
    };
    if samples.is_none() && m.denom() != &1 {
        return Err(SceError::Domain("fractional m is only accepted for epoch modes".into()));
    }
    let report = CostReport::build(&spec, kind, m, samples)?;
    if a.json {
        write_json(&report.to_json())?;
    } else {
        write!(std::io::stdout(), "{}", report.render_table())?;
    }
    Ok(())
}

fn baseline_cmd(b: BaselineCommand) -> Result<()> {
    match b {
        BaselineCommand::Cosine {
            vectors,
            dim,
            text,
            labels,
            similarity,
            json,
        } => {
            let store = at(&vectors, EmbeddingProvider::load_precomputed(&vectors, dim))?;
            let labels = split_labels(&labels);
            let z = store.embed(&text)?;
            let rows = labels.iter().map(|l| store.embed(l)).collect::<Result<Vec<_>>>()?;
            let mode = match similarity {
                SimilarityArg::Cosine => SimilarityMode::Cosine,
                SimilarityArg::Dot => SimilarityMode::Dot,
            };
            let dist = cosine_classify(&z, &rows, mode)?;
            print_distribution(&labels, &dist, json)?;
        }
        BaselineCommand::SubsetSoftmax { logits, labels, json } => {
            let view = at(&logits, LogitsView::load(&logits))?;
            let names = match labels {
                Some(l) => split_labels(&l),
                None => view.label_token_ids.iter().map(|id| format!("token{id}")).collect(),
            };
            if names.len() != view.label_token_ids.len() {
                return Err(SceError::Validation(format!(
                    "{} label names for {} label tokens",
                    names.len(),
                    view.label_token_ids.len()
                )));
            }
            let dist = llm_subset_softmax(&view)?;
            print_distribution(&names, &dist, json)?;
        }
        BaselineCommand::Prompt { text, labels } => {
            write!(std::io::stdout(), "{}", render_prompt(&text, &split_labels(&labels)))?;
        }
    }
    Ok(())
}

fn gen_data_cmd(a: GenDataArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => SyntheticCorpusSpec::parse(&at(path, fs::read_to_string(path).map_err(SceError::Io))?)?,
        None => SyntheticCorpusSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = gen_synthetic(&spec)?;
    at(&a.out, fs::create_dir_all(&a.out).map_err(SceError::Io))?;
    let out: &Path = &a.out;
    let write = |name: &str, r: fn(&Path, &sce_core::SyntheticCorpus) -> Result<()>| {
        let path = out.join(name);
        at(&path, r(&path, &corpus))
    };
    write("train.jsonl", |p, c| write_jsonl(p, &c.train))?;
    write("seen_test.jsonl", |p, c| write_jsonl(p, &c.seen_test))?;
    write("unseen_test.jsonl", |p, c| write_jsonl(p, &c.unseen_test))?;
    write("lexicon.jsonl", |p, c| write_jsonl(p, &c.lexicon))?;
    out!(
        "train {} seen_test {} unseen_test {} lexicon {} (unseen labels: {})",
        corpus.train.len(),
        corpus.seen_test.len(),
        corpus.unseen_test.len(),
        corpus.lexicon.len(),
        corpus.unseen_labels.join(", ")
    )?;
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<()> {
    let inst = ClassificationInstance::new(a.text.clone(), split_labels(&a.labels), a.gold)?;
    let provider = EmbeddingProvider::hashed(a.embed_dim, a.seed)?;
    let q = provider.embed(&inst.text)?;
    let vocab = label_vocabulary(std::slice::from_ref(&inst), &[])?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let config = SceConfig::new(a.layers, a.d_model, a.heads, a.d_ff, a.embed_dim)?;
    let mut params = SceParams::random(config, vocab, &mut rng)?;
    params.table.frozen = !a.unfreeze_embeddings;
    let stencil = match a.stencil {
        StencilArg::TwoPoint => Stencil::TwoPoint,
        StencilArg::FourthOrder => Stencil::FourthOrder,
    };
    let report = grad_check_model(&q, &inst, &params, a.h, stencil)?;
    if a.json {
        write_json(&serde_json::to_value(&report).expect("report serializes"))?;
    } else {
        let width = report.arrays.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &report.arrays {
            out!(
                "{:<width$}  n={:<5} max_rel={:.3e} max_abs={:.3e} max_grad={:.3e}",
                c.name, c.len, c.max_rel_error, c.max_abs_error, c.max_abs_grad
            )?;
        }
        out!("max relative error {:.3e} (h={:e})", report.max_rel_error, report.step)?;
    }
    if report.degraded {
        return Err(SceError::Validation(format!(
            "gradient check degraded: max relative error {:.3e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
