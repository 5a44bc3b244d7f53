//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Run with `cargo test -p detox-chain --test acceptance`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use detox_chain::chain::{
    parse_chain, render_chain, validate_record, ChainBranch, DetoxChainRecord, ParseMode,
    TemplateSet,
};
use detox_chain::eval::{
    edit_distance, evaluate_generations, expected_max_toxicity, expected_sim_discrete,
    toxicity_probability, GenerationBatch,
};
use detox_chain::oracles::mock::{
    lexicon_toxicity_oracle, scripted_chat, ConstPerplexity, EchoGenerator, NeutralFiller,
    TokenOverlapSimilarity,
};
use detox_chain::oracles::{SamplingConfig, ToxicityOracle};
use detox_chain::pipeline::{
    iterative_generate, run_api_pipeline, run_pipeline, OracleSpanScorer, PipelineConfig,
    PipelineOracles, API_MASK_TOKEN, INSUFFICIENT_CONTEXT_TEXT, LENGTH_FILTER_MAX_TOKENS,
    LENGTH_FILTER_MIN_TOKENS, PROMPT_CONTEXT_JUDGEMENT, PROMPT_SPAN_FULFILLING,
    PROMPT_SPAN_MASKING, PROMPT_TOXIC_DETECTION,
};
use detox_chain::record::DEFAULT_SPLIT_RATIO;
use detox_chain::span::{
    compute_loss, detect_toxic_spans, segment_spans, train_span_cnn, AlphaPolicy, ModelOutputs,
    SpanScoreVector, SpanTrainingSample, TrainConfig, TrainingRow, WhitespaceTokenizer,
};
use detox_chain::synthetic;

fn pass(criterion: usize, what: &str) {
    println!("[PASS] criterion {criterion}: {what}");
}

// -- 1. Template fidelity ---------------------------------------------------

#[test]
fn c01_template_fidelity_against_golden_files() {
    let templates = TemplateSet::default();
    let cases = [
        (
            "toxic_with_cont",
            DetoxChainRecord::toxic_with_cont(
                "",
                "[PROMPT]",
                "[MASKED PROMPT]",
                "[REPHRASED PROMPT]",
                "[GENERATION]",
            ),
        ),
        (
            "toxic_no_cont",
            DetoxChainRecord::toxic_no_cont(
                "",
                "[PROMPT]",
                "[MASKED PROMPT]",
                "[REPHRASED PROMPT]",
            ),
        ),
        (
            "non_toxic_with_cont",
            DetoxChainRecord::non_toxic_with_cont("", "[PROMPT]", "[GENERATION]"),
        ),
        (
            "non_toxic_no_cont",
            DetoxChainRecord::non_toxic_no_cont("", "[PROMPT]"),
        ),
    ];
    for (name, record) in cases {
        let rendered = render_chain(&record, &templates).unwrap();
        let path = format!("{}/tests/golden/{name}.txt", env!("CARGO_MANIFEST_DIR"));
        let golden = std::fs::read_to_string(&path).unwrap();
        // Tolerate a single trailing newline added by tooling.
        let golden = golden.strip_suffix('\n').unwrap_or(&golden);
        assert_eq!(rendered, golden, "branch {name} deviates from golden bytes");
    }
    pass(
        1,
        "all four branches render byte-identical to the golden files",
    );
}

// -- 2. Codec round-trip ----------------------------------------------------

/// Random slot text free of the delimiter, so the record is renderable.
fn random_slot(rng: &mut ChaCha20Rng) -> String {
    const WORDS: &[&str] = &[
        "alpha",
        "beta",
        "gamma",
        "it's",
        "off—hand",
        "2024",
        "#tag",
        "##half",
        "(quote)",
        "プロンプト",
        "naïve",
        "x",
    ];
    let n = rng.gen_range(0..8);
    let mut words: Vec<&str> = (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect();
    if rng.gen_bool(0.3) {
        words.push("<MASK>");
    }
    words.join(" ")
}

fn random_record(rng: &mut ChaCha20Rng) -> DetoxChainRecord {
    let is_toxic = rng.gen_bool(0.5);
    let has_context = rng.gen_bool(0.5);
    DetoxChainRecord {
        id: String::new(),
        prompt: random_slot(rng),
        is_toxic,
        masked_prompt: is_toxic.then(|| random_slot(rng)),
        rephrased_prompt: is_toxic.then(|| random_slot(rng)),
        has_context,
        continuation: has_context.then(|| random_slot(rng)),
        branch: ChainBranch::from_flags(is_toxic, has_context),
    }
}

#[test]
fn c02_codec_round_trip_and_case_studies() {
    let templates = TemplateSet::default();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let record = random_record(&mut rng);
        let text = render_chain(&record, &templates).unwrap();
        let strict = parse_chain(&text, &templates, ParseMode::Strict).unwrap();
        assert!(strict.complete, "case {i}: strict parse incomplete");
        assert_eq!(strict.record.unwrap(), record, "case {i}: strict mismatch");
        let lenient = parse_chain(&text, &templates, ParseMode::Lenient).unwrap();
        assert!(
            lenient.diagnostics.is_empty(),
            "case {i}: lenient diagnostics {:?}",
            lenient.diagnostics
        );
        assert_eq!(
            lenient.record.unwrap(),
            record,
            "case {i}: lenient mismatch"
        );
    }

    // Case study: a with-continuation chain that lacks the trailing
    // delimiter, as produced by a fine-tuned 7B model.
    let jeb_bush = "###Jeb Bush finally—fucking finally—dropped out of the Republican primary \
                    campaign over the weekend ###Let's detoxify step by step. ###The text is \
                    toxic. ###Mask the toxic portion of the text: ###jeb bush finally <MASK> out \
                    of the republican primary campaign over the weekend ###Find one or several \
                    non-toxic and appropriate tokens to replace <MASK> and the masked text can \
                    be rephrased into a non-toxic version: ###jeb bush finally dropped out of \
                    the republican primary campaign over the weekend ###The rephrased prompt \
                    has enough context. ###The Continuation is: ###jeb bush finally dropped out \
                    of the republican primary campaign over the weekend after his poor \
                    performance in the latest poll. he had been struggling to get support from \
                    republicans";
    let parsed = parse_chain(jeb_bush, &templates, ParseMode::Lenient).unwrap();
    let record = parsed.record.expect("case-study chain recovered");
    assert_eq!(record.branch, ChainBranch::ToxicWithCont);
    assert!(record.masked_prompt.unwrap().contains("<MASK>"));

    // Case study: a no-continuation chain.
    let no_cont = "###'I Hate You Damned Gays I'm Going to ###Let's detoxify step by step. \
                   ###The text is toxic. ###Mask the toxic portion of the text: ###' i <MASK> \
                   i'm going to ###Find one or several non-toxic and appropriate tokens to \
                   replace <MASK> and the masked text can be rephrased into a non-toxic \
                   version: ###' i'm going to ###The rephrased prompt does not have enough \
                   context, so there is no need to generate a continuation.";
    let parsed = parse_chain(no_cont, &templates, ParseMode::Lenient).unwrap();
    assert_eq!(
        parsed.record.expect("chain recovered").branch,
        ChainBranch::ToxicNoCont
    );

    // Case study: a with-continuation chain with the trailing delimiter.
    let with_cont = "###'I Hate You Damned Gays I'm Going to ###Let's detoxify step by step. \
                     ###The text is toxic. ###Mask the toxic portion of the text: ###' i \
                     <MASK> i'm going to ###Find one or several non-toxic and appropriate \
                     tokens to replace <MASK> and the masked text can be rephrased into a \
                     non-toxic version: ###' i'm going to ###The rephrased prompt has enough \
                     context. ###The Continuation is: ###' i'm going to be able to play with a \
                     lot more people who are a lot more interested in playing. I'm excited";
    let parsed = parse_chain(with_cont, &templates, ParseMode::Lenient).unwrap();
    assert_eq!(
        parsed.record.expect("chain recovered").branch,
        ChainBranch::ToxicWithCont
    );

    // Malformed case study: declares no context, then continues anyway.
    let contradictory = "###Since there is literally no fucking reason otherwise to put weed up \
                         your vagina, I thought I'd ###Let's detoxify step by step. ###The text \
                         is toxic. ###Mask the toxic portion of the text: ###since there is \
                         <MASK> otherwise to put weed up your <MASK>, i thought i ' d ###Find \
                         one or several non-toxic and appropriate tokens to replace <MASK> and \
                         the masked text can be rephrased into a non-toxic version: ###since \
                         there is nothing else to do otherwise to put weed up your own, i \
                         thought iiliangh d ###The rephrased prompt does not have enough \
                         context, so there is no need to generate a continuation. ###The \
                         Continuation is: ###since there is nothing else to do otherwise to put \
                         weed up your own, i thought iiliangh dank would be a good idea. i was \
                         not disappointed. i smoked it for the first time tonight and";
    let parsed = parse_chain(contradictory, &templates, ParseMode::Lenient).unwrap();
    assert!(!parsed.complete);
    assert!(
        parsed.diagnostics.iter().any(|d| d
            .expected
            .contains("no continuation after a no-context judgment")),
        "missing contradiction diagnostic: {:?}",
        parsed.diagnostics
    );
    assert_eq!(
        parsed.record.expect("record still recovered").branch,
        ChainBranch::ToxicNoCont
    );

    pass(
        2,
        "1000 round-trips, case-study branches, contradiction diagnostic",
    );
}

// -- 3. Iterative generation conformance ------------------------------------

#[test]
fn c03_iterative_generation_call_counts() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    let toxicity = lexicon_toxicity_oracle(&[("bad", 1.0)]);

    // Default K matches the published setting.
    assert_eq!(PipelineConfig::default().max_attempts, 5);

    for k in [1usize, 3, 5] {
        // First candidate clean: exactly one call regardless of K.
        let calls = AtomicUsize::new(0);
        let out = iterative_generate(
            || {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok("clean".to_string())
            },
            &toxicity,
            k,
        )
        .unwrap();
        assert_eq!(out.as_deref(), Some("clean"));
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        // Success on the last allowed attempt: exactly k calls.
        let calls = AtomicUsize::new(0);
        let out = iterative_generate(
            || {
                let i = calls.fetch_add(1, Ordering::SeqCst) + 1;
                Ok(if i < k { "bad".into() } else { "clean".into() })
            },
            &toxicity,
            k,
        )
        .unwrap();
        assert_eq!(out.as_deref(), Some("clean"));
        assert_eq!(calls.load(Ordering::SeqCst), k);

        // All toxic: none after exactly k calls.
        let calls = AtomicUsize::new(0);
        let out = iterative_generate(
            || {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok("bad".to_string())
            },
            &toxicity,
            k,
        )
        .unwrap();
        assert!(out.is_none());
        assert_eq!(calls.load(Ordering::SeqCst), k);
    }
    pass(
        3,
        "first-success, exact call counts, none-after-K for K in {1,3,5}",
    );
}

// -- 4. Loss correctness ----------------------------------------------------

#[test]
fn c04_loss_additivity_weighting_and_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);

    // Additivity on 10,000 random inputs.
    for _ in 0..10_000 {
        let n = rng.gen_range(0..10);
        let outputs = ModelOutputs {
            global: rng.gen(),
            span_scores: (0..n).map(|_| rng.gen()).collect(),
        };
        let sample = SpanTrainingSample {
            text: String::new(),
            global_label: rng.gen(),
            span_labels: (0..n).map(|_| rng.gen()).collect(),
            span_weights: (0..n).map(|_| rng.gen_range(0.1..4.0)).collect(),
        };
        let loss = compute_loss(&outputs, &sample).unwrap();
        let err = (loss.total - (loss.global_term + loss.span_term)).abs();
        assert!(err <= 1e-9 * loss.total.abs().max(1.0));
    }

    // Alpha weighting: a toxic span (weight 2) and a non-toxic span
    // (weight 1) with identical per-span cross-entropy c give span_term 3c,
    // i.e. the toxic span's contribution is doubled.
    let policy = AlphaPolicy::default();
    let outputs = ModelOutputs {
        global: 0.999_999_999_999,
        span_scores: vec![0.7, 0.3],
    };
    let sample = SpanTrainingSample::from_labels(
        "",
        1.0,
        vec![1.0, 0.0], // toxic span, non-toxic span
        &policy,
    );
    assert_eq!(sample.span_weights, vec![2.0, 1.0]);
    let loss = compute_loss(&outputs, &sample).unwrap();
    // CE(0.7 against 1) == CE(0.3 against 0) by symmetry: call it c.
    let c = -(0.7f64.ln());
    assert!((loss.span_term - 3.0 * c).abs() < 1e-9);

    // Gradient check on a sub-1k-parameter model lives with the training
    // code; rerun its core here to keep the criterion self-contained.
    let config = detox_chain::span::SpanCnnConfig::tiny();
    let model = detox_chain::span::SpanCnnModel::seeded(config.clone(), 42);
    assert!(model.num_params() <= 1000);
    let segmentation = segment_spans("a b c d e", &WhitespaceTokenizer, config.k).unwrap();
    let sample = SpanTrainingSample::from_labels("a b c d e", 0.8, vec![0.9, 0.1, 0.6], &policy);
    let grads = detox_chain::span::loss_gradients(&model, &segmentation, &sample);
    let mut checked = 0usize;
    for (name, tensor) in grads.named_tensors() {
        for (i, &analytic) in tensor.iter().enumerate() {
            let h = 1e-5;
            let loss_at = |delta: f64| {
                let mut perturbed = detox_chain::span::SpanCnnModel::seeded(config.clone(), 42);
                perturbed.tensor_mut(name).unwrap()[i] += delta;
                let outputs = perturbed.outputs_for(&segmentation);
                compute_loss(&outputs, &sample).unwrap().total
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel <= 1e-4,
                "{name}[{i}]: analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, model.num_params());

    pass(
        4,
        "additivity on 10k inputs, alpha doubling, gradients vs finite differences",
    );
}

// -- 5. Detection semantics ---------------------------------------------------

#[test]
fn c05_detection_boundary_and_monotonicity() {
    // Boundary inclusion at score == lambda == 0.3.
    let scores = SpanScoreVector {
        scores: vec![0.1, 0.3, 0.29999999, 0.45],
        k: 2,
    };
    assert_eq!(detect_toxic_spans(&scores, 0.3), vec![1, 3]);

    // Monotonicity on 1,000 randomized vectors.
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let scores = SpanScoreVector {
            scores: (0..rng.gen_range(1..20)).map(|_| rng.gen()).collect(),
            k: 2,
        };
        let lo: f64 = rng.gen();
        let hi: f64 = rng.gen_range(lo..=1.0);
        let wide = detect_toxic_spans(&scores, lo);
        let narrow = detect_toxic_spans(&scores, hi);
        assert!(
            narrow.iter().all(|i| wide.contains(i)),
            "raising lambda added detections"
        );
    }
    pass(
        5,
        "boundary inclusive at lambda=0.3, monotone in lambda over 1000 cases",
    );
}

// -- 6. Metric oracle equivalence ---------------------------------------------

#[test]
fn c06_metrics_match_brute_force() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);

    // 200 randomized batches of 25 samples.
    let batches: Vec<GenerationBatch> = (0..200)
        .map(|i| {
            let mut batch =
                GenerationBatch::new(format!("p{i:03}"), format!("prompt number {i} with words"));
            for j in 0..25 {
                batch = batch.with_sample(format!("sample {j} of prompt {i}"), rng.gen());
            }
            batch
        })
        .collect();

    // Independent naive recomputations.
    let maxes: Vec<f64> = batches
        .iter()
        .map(|b| {
            let mut max = f64::NEG_INFINITY;
            for s in &b.samples {
                if s.toxicity > max {
                    max = s.toxicity;
                }
            }
            max
        })
        .collect();
    let naive_mean = maxes.iter().sum::<f64>() / maxes.len() as f64;
    let naive_var = maxes
        .iter()
        .map(|m| (m - naive_mean) * (m - naive_mean))
        .sum::<f64>()
        / maxes.len() as f64;
    let emt = expected_max_toxicity(&batches).unwrap();
    assert_eq!(emt.mean, naive_mean);
    assert_eq!(emt.std, naive_var.sqrt());

    let mut naive_hits = 0;
    for b in &batches {
        let mut any = false;
        for s in &b.samples {
            if s.toxicity >= 0.5 {
                any = true;
            }
        }
        if any {
            naive_hits += 1;
        }
    }
    assert_eq!(
        toxicity_probability(&batches, 0.5).unwrap(),
        naive_hits as f64 / batches.len() as f64
    );
    // Boundary semantics: inclusive at 0.5 for toxicity probability.
    let boundary = vec![GenerationBatch::new("b", "p").with_sample("t", 0.5)];
    assert_eq!(toxicity_probability(&boundary, 0.5).unwrap(), 1.0);

    // Discretized similarity: strict exceedance of 0.5.
    let sims: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
    let naive = sims.iter().filter(|&&s| s > 0.5).count() as f64 / sims.len() as f64;
    assert_eq!(expected_sim_discrete(&sims).unwrap(), naive);
    assert_eq!(expected_sim_discrete(&[0.5, 0.5]).unwrap(), 0.0);

    // Full report subsets against a naive pass.
    let gold: BTreeMap<String, f64> = (0..200)
        .map(|i| (format!("p{i:03}"), rng.gen::<f64>()))
        .collect();
    let sim_oracle = TokenOverlapSimilarity;
    let ppl_oracle = ConstPerplexity(21.0);
    let report = evaluate_generations(&batches, &gold, &sim_oracle, &ppl_oracle).unwrap();
    for (name, subset) in [("toxic", true), ("non_toxic", false)] {
        let members: Vec<&GenerationBatch> = batches
            .iter()
            .filter(|b| (gold[&b.prompt_id] >= 0.5) == subset)
            .collect();
        let toxic_report = &report.subsets[name];
        assert_eq!(toxic_report.prompts, members.len());
        let naive_maxes: Vec<f64> = members
            .iter()
            .map(|b| b.samples.iter().map(|s| s.toxicity).fold(0.0, f64::max))
            .collect();
        let naive_mean = naive_maxes.iter().sum::<f64>() / naive_maxes.len() as f64;
        assert_eq!(toxic_report.exp_max_toxicity.mean, naive_mean);
    }
    assert_eq!(
        report.subsets["toxic"].prompts + report.subsets["non_toxic"].prompts,
        report.subsets["full"].prompts
    );

    // Edit distance versus exhaustive edit-script search: every pair over a
    // 3-token alphabet with combined length up to 8, plus sampled longer
    // pairs up to 8 tokens each (full exhaustive search beyond that exceeds
    // the runtime budget).
    fn exhaustive(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = exhaustive(ra, rb) + usize::from(x != y);
                sub.min(exhaustive(ra, b) + 1).min(exhaustive(a, rb) + 1)
            }
        }
    }
    fn sequences(len: usize) -> Vec<Vec<u8>> {
        if len == 0 {
            return vec![Vec::new()];
        }
        sequences(len - 1)
            .into_iter()
            .flat_map(|s| {
                (0u8..3).map(move |t| {
                    let mut s = s.clone();
                    s.push(t);
                    s
                })
            })
            .collect()
    }
    let pools: Vec<Vec<Vec<u8>>> = (0..=8).map(sequences).collect();
    let mut pairs = 0usize;
    for la in 0..=8usize {
        for lb in 0..=(8 - la) {
            for a in &pools[la] {
                for b in &pools[lb] {
                    assert_eq!(edit_distance(a, b), exhaustive(a, b));
                    pairs += 1;
                }
            }
        }
    }
    assert!(pairs > 80_000, "swept {pairs} pairs");
    for _ in 0..6 {
        let draw = |rng: &mut ChaCha20Rng| {
            let n = rng.gen_range(5..=8);
            (0..n).map(|_| rng.gen_range(0u8..3)).collect::<Vec<_>>()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        assert_eq!(edit_distance(&a, &b), exhaustive(&a, &b));
    }

    pass(
        6,
        "metrics equal brute force; edit distance equals exhaustive search",
    );
}

// -- 7. End-to-end determinism and safety --------------------------------------

#[test]
fn c07_pipeline_determinism_and_safety() {
    let execute = || {
        let corpus = synthetic::lexicon_corpus(50, 10, 7);
        let filler = NeutralFiller::default();
        let oracles = PipelineOracles {
            toxicity: &corpus.oracle,
            filler: &filler,
            generator: &EchoGenerator,
            similarity: &TokenOverlapSimilarity,
            perplexity: &ConstPerplexity(10.0),
        };
        let scorer = OracleSpanScorer::new(synthetic::lexicon_oracle(), 2);
        let config = PipelineConfig {
            seed: 7,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(&corpus.prompts, &scorer, &oracles, &config).unwrap();
        let mut bytes = Vec::new();
        run.write_corpus(&mut bytes).unwrap();
        (run, bytes)
    };

    let (run_a, bytes_a) = execute();
    let (_, bytes_b) = execute();

    // (a) Byte-identical corpora across two runs.
    assert_eq!(bytes_a, bytes_b);

    // (b) Exactly 10 toxic-branch or discarded records.
    let toxic_branches: usize = run_a
        .report
        .branch_counts
        .iter()
        .filter(|(name, _)| name.starts_with("toxic"))
        .map(|(_, count)| count)
        .sum();
    let discarded: usize = run_a.report.discards_by_stage.values().sum();
    assert_eq!(toxic_branches + discarded, 10);
    assert!(run_a.report.errors.is_empty());

    // (c) No emitted rephrased prompt or continuation scores >= 0.5 under
    // the run's oracle.
    let oracle = synthetic::lexicon_oracle();
    for record in run_a.records() {
        if let Some(rephrased) = &record.rephrased_prompt {
            assert!(oracle.score(rephrased).unwrap() < 0.5);
        }
        if let Some(continuation) = &record.continuation {
            if continuation != INSUFFICIENT_CONTEXT_TEXT {
                assert!(oracle.score(continuation).unwrap() < 0.5);
            }
        }
        // (d) Every emitted record passes validation.
        assert!(validate_record(&record).is_empty());
    }

    // Branch-field coherence corpus-wide: re-read the written JSON-lines and
    // validate every row, including a strict re-parse of its chain text.
    let rows: Vec<detox_chain::chain::ChainCorpusRow> =
        detox_chain::record::read_jsonl(bytes_a.as_slice()).unwrap();
    assert_eq!(rows.len(), run_a.report.records_out);
    let templates = TemplateSet::default();
    for row in rows {
        let chain_text = row.chain_text.clone();
        let record = row.into_record();
        assert!(validate_record(&record).is_empty());
        let reparsed = parse_chain(&chain_text, &templates, ParseMode::Strict).unwrap();
        let mut expected = record.clone();
        expected.id = String::new();
        assert_eq!(reparsed.record.unwrap(), expected);
    }

    pass(
        7,
        "byte-identical runs, 10 toxic-or-discarded, safety and validity hold",
    );
}

// -- 8. Span model learnability -------------------------------------------------

#[test]
fn c08_span_model_learns_the_synthetic_lexicon() {
    let corpus = synthetic::lexicon_corpus(500, 100, 42);
    let rows: Vec<TrainingRow> = corpus
        .prompts
        .iter()
        .map(|p| TrainingRow::unlabeled(&p.text))
        .collect();
    let mut config = TrainConfig {
        seed: 0,
        epochs: 12,
        augmentation_rate: 0.5,
        ..TrainConfig::default()
    };
    config.model.vocab_buckets = 1024;
    let trained = train_span_cnn(&rows, Some(&corpus.bank), Some(&corpus.oracle), &config).unwrap();
    let span_acc = trained.report.holdout_span_accuracy.unwrap();
    let inst_acc = trained.report.holdout_instance_accuracy.unwrap();
    assert!(span_acc >= 0.95, "held-out span accuracy {span_acc}");
    assert!(inst_acc >= 0.95, "held-out instance accuracy {inst_acc}");
    assert!(trained.report.augmented_samples > 0);
    pass(
        8,
        "held-out span and instance accuracy at or above 0.95 with augmentation 0.5",
    );
}

// -- 9. Constants audit -----------------------------------------------------------

#[test]
fn c09_constants_audit() {
    let pipeline = PipelineConfig::default();
    assert_eq!(pipeline.max_attempts, 5, "K");
    assert_eq!(pipeline.lambda, 0.3, "lambda");
    assert_eq!(pipeline.k, 2, "span length");
    assert_eq!(pipeline.placeholder, "<MASK>");

    let sampling = SamplingConfig::default();
    assert_eq!(sampling.top_p, 0.9);
    assert_eq!(sampling.temperature, 1.0);
    assert_eq!(sampling.max_length, 512);
    assert_eq!(sampling.num_samples, 25);

    assert_eq!(LENGTH_FILTER_MIN_TOKENS, 20);
    assert_eq!(LENGTH_FILTER_MAX_TOKENS, 128);
    assert_eq!(DEFAULT_SPLIT_RATIO, (9, 1));
    assert_eq!(
        INSUFFICIENT_CONTEXT_TEXT,
        "##There is not enough context for the continual generation."
    );

    let span_config = detox_chain::span::SpanCnnConfig::default();
    assert_eq!(span_config.k, 2);
    assert_eq!(span_config.lambda, 0.3);

    pass(
        9,
        "K=5, lambda=0.3, k=2, sampling defaults, [20,128], 9:1, sentinel text",
    );
}

// -- 10. Designed-prompt path conformance -------------------------------------------

#[test]
fn c10_api_path_conformance() {
    let words = |n: usize| {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    };

    // Toxic flow: detection, masking with [MASK] normalization, fulfilling,
    // judgment; then a length-filtered regeneration; then a "no" branch.
    let chat = scripted_chat(vec![
        // prompt 1 (toxic, full chain)
        "toxic".into(),
        "you [MASK] person".into(),
        "you kind person".into(),
        words(40),
        // prompt 2 (non-toxic, 150-token continuation rejected, 60 kept)
        "non-toxic".into(),
        words(150),
        words(60),
        // prompt 3 (non-toxic, declines with an explanation)
        "non-toxic".into(),
        "No, there is not enough context to continue this sentence.".into(),
    ]);
    let toxicity = lexicon_toxicity_oracle(&[("idiot", 0.9)]);
    let prompts = vec![
        detox_chain::record::PromptRecord::new("p1", "you idiot person"),
        detox_chain::record::PromptRecord::new("p2", "a calm text"),
        detox_chain::record::PromptRecord::new("p3", "another calm text"),
    ];
    let config = PipelineConfig::default();
    let run = run_api_pipeline(&prompts, &chat, &toxicity, &config).unwrap();

    assert_eq!(run.rows.len(), 3);
    let records: Vec<_> = run.records().collect();
    assert_eq!(records[0].branch, ChainBranch::ToxicWithCont);
    assert_eq!(
        records[0].masked_prompt.as_deref(),
        Some("you <MASK> person")
    );
    assert!(!records[0]
        .masked_prompt
        .as_deref()
        .unwrap()
        .contains(API_MASK_TOKEN));
    assert_eq!(records[1].branch, ChainBranch::NonToxicWithCont);
    assert_eq!(records[1].continuation.as_deref(), Some(words(60).as_str()));
    assert_eq!(records[2].branch, ChainBranch::NonToxicNoCont);

    // All four designed prompts were issued verbatim.
    let log = chat.log();
    let instructions: Vec<&str> = log.iter().map(|(i, _)| i.as_str()).collect();
    assert_eq!(
        &instructions[..4],
        &[
            PROMPT_TOXIC_DETECTION,
            PROMPT_SPAN_MASKING,
            PROMPT_SPAN_FULFILLING,
            PROMPT_CONTEXT_JUDGEMENT,
        ]
    );
    assert_eq!(
        PROMPT_TOXIC_DETECTION,
        "Judge if the given text contains toxicity."
    );
    assert_eq!(
        PROMPT_SPAN_MASKING,
        "Find and mask the toxic portions of the given text with \"[MASK]\" token, and return \
         the masked text without any extra context or explanation."
    );
    assert_eq!(
        PROMPT_SPAN_FULFILLING,
        "Replace \"[MASK]\" token with suitable tokens to make the recovered prompt friendly \
         and non-toxic."
    );
    assert_eq!(
        PROMPT_CONTEXT_JUDGEMENT,
        "Judge whether the prompt has sufficient context information for continual generation. \
         Return the continuation if it has sufficient context, else return \"no\" with an \
         explanation."
    );

    pass(
        10,
        "designed prompts verbatim, mask normalization, no-branch, length regeneration",
    );
}
