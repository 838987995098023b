//! Acceptance suite: one test per criterion, each printing a single
//! `ACCEPTANCE <n> <name>: PASS|FAIL (...)` line to stderr (uncaptured, so
//! the lines show up in a plain `cargo test` run).

use std::io::Write;

use num_rational::Ratio;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sce_core::baselines::{cosine_classify, llm_subset_softmax, LogitsView, SimilarityMode};
use sce_core::data::{default_topics, gen_synthetic, procedural_topics, ClassificationInstance, SyntheticCorpusSpec};
use sce_core::flops::{
    amortization_report, bwd_block_lora_poly, bwd_block_std_poly, bwd_items_lora, epoch_cost, fwd_block_lora_poly,
    fwd_block_std_poly, fwd_items_lora, infer_model_poly, parse_decimal, to_f64, train_model_poly, ArchSpec,
    CostMode, CostPolynomial, EpochKind,
};
use sce_core::model::{forward_scores, write_checkpoint, LabelEmbeddingTable, SceConfig};
use sce_core::training::{
    embed_dataset, evaluate, grad_check_model, label_vocabulary, train, Stencil, TrainConfig, TrainReport,
    DEFAULT_GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE,
};
use sce_core::{EmbeddingProvider, SceParams, Vocabulary};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "ACCEPTANCE {n} {name}: {verdict} ({detail})");
    assert!(pass, "acceptance {n} {name} failed: {detail}");
}

fn int(v: u128) -> Ratio<u128> {
    Ratio::from_integer(v)
}

fn rel(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

#[test]
fn a1_flop_coefficients() {
    let llama = ArchSpec::preset("llama-3.2-1b-lora-r180").unwrap();
    let sce = ArchSpec::preset("roberta-sce").unwrap();
    let jina = ArchSpec::preset("jina-v3").unwrap();
    let checks = [
        (
            "llama block",
            fwd_block_lora_poly(&llama).unwrap() + bwd_block_lora_poly(&llama).unwrap(),
            CostPolynomial::new(12_288, 159_653_888, 0),
        ),
        (
            "llama model",
            train_model_poly(&llama, CostMode::Lora).unwrap(),
            CostPolynomial::new(196_608, 2_554_462_208, 0),
        ),
        (
            "sce model",
            train_model_poly(&sce, CostMode::Standard).unwrap(),
            CostPolynomial::new(55_296, 254_803_968, 2_359_296),
        ),
        ("jina model", infer_model_poly(&jina).unwrap(), CostPolynomial::new(49_152, 301_989_888, 0)),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: got {got}, want {want}"))
        .collect();
    report(1, "flop coefficients", bad.is_empty(), if bad.is_empty() { "4/4 exact".into() } else { bad.join("; ") });
}

#[test]
fn a2_epoch_totals() {
    let n = 16_000;
    let llama = epoch_cost(
        &ArchSpec::preset("llama-3.2-1b-lora-r180").unwrap(),
        int(225),
        n,
        EpochKind::Train(CostMode::Lora),
    )
    .unwrap();
    let sce = epoch_cost(&ArchSpec::preset("roberta-sce").unwrap(), int(11), n, EpochKind::Train(CostMode::Standard))
        .unwrap();
    let jina = epoch_cost(&ArchSpec::preset("jina-v3").unwrap(), parse_decimal("84.17").unwrap(), n, EpochKind::Infer)
        .unwrap();
    let ratio = amortization_report(&sce, &jina, &llama, 1).unwrap().per_epoch_ratio;

    let e = [
        rel(to_f64(&llama), 9.355e15),
        rel(to_f64(&sce), 4.5e13),
        rel(to_f64(&jina), 4.12e14),
    ];
    let pass = e[0] <= 1e-3 && e[1] <= 5e-3 && e[2] <= 5e-3 && format!("{ratio:.3}") == "0.005";
    report(
        2,
        "epoch totals",
        pass,
        format!(
            "llama rel err {:.2e} (tol 1e-3), sce {:.2e} (tol 5e-3), jina {:.2e} (tol 5e-3), ratio {ratio:.6}",
            e[0], e[1], e[2]
        ),
    );
}

#[test]
fn a3_permutation_invariance() {
    let tokens: Vec<String> = (0..24).map(|i| format!("label{i}")).collect();
    let vocab = Vocabulary::from_tokens(&tokens).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut argmax_mismatches = 0;
    let mut trials = 0;
    for _ in 0..20 {
        let cfg = SceConfig::new(2, 16, 4, 32, 8).unwrap();
        let params = SceParams::random(cfg, vocab.clone(), &mut rng).unwrap();
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..200 {
            let k = rng.random_range(1..=12);
            let mut labels: Vec<String> = tokens.choose_multiple(&mut rng, k).cloned().collect();
            // a few multi-token labels exercise mean pooling too
            if k >= 2 && rng.random_bool(0.3) {
                labels[0] = format!("{} {}", labels[0], tokens[23]);
            }
            let base = forward_scores(&q, &labels, &params).unwrap();
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<String> = perm.iter().map(|&i| labels[i].clone()).collect();
            let out = forward_scores(&q, &shuffled, &params).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                worst = worst.max((out.probs[j] - base.probs[i]).abs());
            }
            if shuffled[out.argmax_index] != labels[base.argmax_index] {
                argmax_mismatches += 1;
            }
            trials += 1;
        }
    }
    report(
        3,
        "permutation invariance",
        worst <= 1e-10 && argmax_mismatches == 0,
        format!("{trials} trials, max |dp| {worst:.2e} (tol 1e-10), argmax mismatches {argmax_mismatches}"),
    );
}

#[test]
fn a4_gradient_correctness() {
    let labels: Vec<String> = ["sports", "weather", "politics", "finance"].iter().map(|s| s.to_string()).collect();
    let inst = ClassificationInstance::new("the striker scored a late goal in the rain", labels, 0).unwrap();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for seed in 0..10u64 {
        for frozen in [true, false] {
            let provider = EmbeddingProvider::hashed(8, seed).unwrap();
            let q = provider.embed(&inst.text).unwrap();
            let vocab = label_vocabulary(std::slice::from_ref(&inst), &[]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = SceParams::random(SceConfig::new(2, 8, 2, 16, 8).unwrap(), vocab, &mut rng).unwrap();
            params.table.frozen = frozen;
            let r = grad_check_model(&q, &inst, &params, DEFAULT_GRAD_CHECK_STEP, Stencil::FourthOrder).unwrap();
            worst = worst.max(r.max_rel_error);
            checks += 1;
        }
    }
    report(
        4,
        "gradient correctness",
        worst < GRAD_CHECK_TOLERANCE,
        format!("{checks} checks over 10 seeds, max rel err {worst:.2e} (tol {GRAD_CHECK_TOLERANCE:e})"),
    );
}

fn overfit_run() -> TrainReport {
    let spec = SyntheticCorpusSpec {
        texts_per_topic: 4,
        test_fraction: 0.0,
        k_min: 3,
        k_max: 6,
        ..SyntheticCorpusSpec::default()
    };
    let corpus = gen_synthetic(&spec).unwrap();
    assert_eq!(corpus.train.len(), 32);
    let provider = EmbeddingProvider::hashed(32, 0).unwrap();
    let data = embed_dataset(&corpus.train, &provider).unwrap();
    let vocab = label_vocabulary(&corpus.train, &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = SceParams::random(SceConfig::new(2, 32, 4, 64, 32).unwrap(), vocab, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        seed: 0,
        synonym_prob: 0.0,
        ..TrainConfig::default()
    };
    train(&data, &mut params, &cfg).unwrap()
}

#[test]
fn a5_trainability() {
    let a = overfit_run();
    let b = overfit_run();
    let first = a.history.iter().find(|s| s.acc == 1.0).map(|s| s.epoch);
    let same = a == b;
    report(
        5,
        "trainability",
        first.is_some() && same,
        format!("first 100% epoch {first:?} of 500, repeat run identical {same}"),
    );
}

#[test]
fn a6_zero_shot() {
    let mut topics = default_topics();
    topics.extend(procedural_topics(120, 12));
    let spec = SyntheticCorpusSpec {
        topics,
        texts_per_topic: 20,
        words_per_text: 40,
        keyword_rate: 0.3,
        gloss_words: 48,
        unseen_topics: 4,
        k_min: 4,
        k_max: 4,
        ..SyntheticCorpusSpec::default()
    };
    let corpus = gen_synthetic(&spec).unwrap();
    let d = 64;
    let provider = EmbeddingProvider::hashed(d, 0).unwrap();
    let all: Vec<ClassificationInstance> = corpus.train.iter().chain(&corpus.unseen_test).cloned().collect();
    let vocab = label_vocabulary(&all, &corpus.lexicon).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = LabelEmbeddingTable::from_lexicon(vocab, d, &corpus.lexicon, &provider, &mut rng).unwrap();
    let mut params = SceParams::with_table(SceConfig::new(2, d, 4, 2 * d, d).unwrap(), table, &mut rng).unwrap();
    let train_set = embed_dataset(&corpus.train, &provider).unwrap();
    let unseen = embed_dataset(&corpus.unseen_test, &provider).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        seed: 0,
        synonym_prob: 0.0,
        ..TrainConfig::default()
    };
    train(&train_set, &mut params, &cfg).unwrap();
    let acc = evaluate(&unseen, &params).unwrap();
    report(
        6,
        "zero-shot generalization",
        acc >= 0.375,
        format!("unseen accuracy {:.1}% at K=4 over {} texts (bar 37.5%)", 100.0 * acc, unseen.len()),
    );
}

#[test]
fn a7_baseline_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let vocab = rng.random_range(2..200);
        let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-20.0..20.0)).collect();
        let k = rng.random_range(1..=vocab.min(12));
        let ids: Vec<usize> = rand::seq::index::sample(&mut rng, vocab, k).into_vec();
        let got = llm_subset_softmax(&LogitsView::new(logits.clone(), ids.clone()).unwrap()).unwrap();
        // softmax over the whole vocabulary, then renormalise the picked entries
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let full: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let mass: f64 = ids.iter().map(|&i| full[i]).sum();
        for (p, &i) in got.probs.iter().zip(&ids) {
            worst = worst.max((p - full[i] / mass).abs());
        }
    }

    let mut scale_worst = 0.0f64;
    for _ in 0..200 {
        let dim = rng.random_range(2..16);
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<Vec<f64>> =
            (0..5).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let scaled: Vec<Vec<f64>> = labels
            .iter()
            .map(|l| {
                let c = rng.random_range(0.1..10.0);
                l.iter().map(|x| c * x).collect()
            })
            .collect();
        let zc = rng.random_range(0.1..10.0);
        let z2: Vec<f64> = z.iter().map(|x| zc * x).collect();
        let a = cosine_classify(&z, &labels, SimilarityMode::Cosine).unwrap();
        let b = cosine_classify(&z2, &scaled, SimilarityMode::Cosine).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            scale_worst = scale_worst.max((x - y).abs());
        }
    }
    // dot scores follow vector length, so a long but less aligned label wins
    let z = [1.0, 0.0];
    let labels = [vec![1.0, 0.0], vec![3.0, 4.0]];
    let dot = cosine_classify(&z, &labels, SimilarityMode::Dot).unwrap();
    let cos = cosine_classify(&z, &labels, SimilarityMode::Cosine).unwrap();
    let variance = dot.argmax_index == 1 && cos.argmax_index == 0;

    report(
        7,
        "baseline oracles",
        worst <= 1e-12 && scale_worst <= 1e-12 && variance,
        format!(
            "subset softmax max err {worst:.2e} over 1000 cases (tol 1e-12), cosine scale drift {scale_worst:.2e}, dot/cosine differ {variance}"
        ),
    );
}

fn end_to_end(seed: u64) -> (Vec<u8>, String) {
    let spec = SyntheticCorpusSpec {
        texts_per_topic: 6,
        seed,
        ..SyntheticCorpusSpec::default()
    };
    let corpus = gen_synthetic(&spec).unwrap();
    let provider = EmbeddingProvider::hashed(16, seed).unwrap();
    let data = embed_dataset(&corpus.train, &provider).unwrap();
    let vocab = label_vocabulary(&corpus.train, &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SceParams::random(SceConfig::new(2, 16, 2, 32, 16).unwrap(), vocab, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let history = train(&data, &mut params, &cfg).unwrap().history;
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &params).unwrap();
    let lines: Vec<String> = history.iter().map(|s| serde_json::to_string(s).unwrap()).collect();
    (ckpt, lines.join("\n"))
}

#[test]
fn a8_determinism() {
    let (ca, ha) = end_to_end(0);
    let (cb, hb) = end_to_end(0);
    let (cc, _) = end_to_end(1);
    report(
        8,
        "determinism",
        ca == cb && ha == hb && ca != cc,
        format!(
            "checkpoints identical {} ({} bytes), histories identical {}, other seed differs {}",
            ca == cb,
            ca.len(),
            ha == hb,
            ca != cc
        ),
    );
}

#[test]
fn a9_lora_standard_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut fwd_ok, mut bwd_ok, mut double_ok) = (0, 0, 0);
    for _ in 0..100 {
        let heads = rng.random_range(1..=32u128);
        let spec = ArchSpec::new(
            rng.random_range(1..=48),
            heads * rng.random_range(1..=128u128),
            rng.random_range(1..=16_384),
            heads,
        )
        .unwrap()
        .with_ffn_layers(rng.random_range(1..=2), rng.random_range(1..=2))
        .unwrap();
        let total = |items: Vec<sce_core::flops::LineItem>| items.iter().map(|it| it.cost).sum::<CostPolynomial>();
        let fwd_std = fwd_block_std_poly(&spec).unwrap();
        let bwd_std = bwd_block_std_poly(&spec).unwrap();
        fwd_ok += usize::from(total(fwd_items_lora(&spec, 0)) == fwd_std);
        bwd_ok += usize::from(total(bwd_items_lora(&spec, 0)) == bwd_std);
        double_ok += usize::from(bwd_std == fwd_std.times(2));
    }
    report(
        9,
        "lora/standard consistency",
        fwd_ok == 100 && bwd_ok == 100 && double_ok == 100,
        format!("r=0 forward equal {fwd_ok}/100, r=0 backward equal {bwd_ok}/100, backward = 2x forward {double_ok}/100"),
    );
}
