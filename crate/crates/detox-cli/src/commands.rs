//! Command implementations tying the library modules into runnable jobs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use detox_chain::chain::{parse_chain, ChainCorpusRow, ParseMode, TemplateSet};
use detox_chain::eval::{
    evaluate_chain_steps, evaluate_generations, EvalReport, GenerationBatch, StepOracles,
};
use detox_chain::oracles::mock::{
    scripted_chat, ConstPerplexity, EchoGenerator, LexiconToxicity, NeutralFiller,
    TokenOverlapSimilarity,
};
use detox_chain::oracles::{
    cached, ChatCompleter, HttpTransport, RateLimiter, RemoteChatCompleter, RemoteToxicityClient,
    RetryPolicy, ToxicityOracle, ENV_LLM_API_KEY,
};
use detox_chain::pipeline::{
    run_api_pipeline, run_pipeline, OracleSpanScorer, PipelineError, PipelineOracles, PipelineRun,
    SpanScorer,
};
use detox_chain::record::{read_jsonl, write_jsonl, PromptRecord};
use detox_chain::span::{
    detect_toxic_spans, train_span_cnn, BankSpan, SpanBank, SpanCnnModel, TrainConfig, TrainingRow,
};

use crate::config::RunConfig;
use crate::ingest::{ingest, IngestStats, SourceFormat};

const DEFAULT_MOCK_PPL: f64 = 10.0;

pub fn tool_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

// ---------------------------------------------------------------------------
// Artifact writing
// ---------------------------------------------------------------------------

/// Writes through a `.partial` sibling that is renamed into place on
/// success, so an interrupted run leaves only the `.partial` file behind.
fn write_artifact(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let partial = partial_path(path);
    {
        let file = std::fs::File::create(&partial)
            .with_context(|| format!("creating {}", partial.display()))?;
        let mut writer = std::io::BufWriter::new(file);
        write(&mut writer)?;
        writer.flush()?;
    }
    std::fs::rename(&partial, path).with_context(|| format!("finalizing {}", path.display()))?;
    Ok(())
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".partial");
    PathBuf::from(name)
}

fn write_json_artifact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_artifact(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Wraps a report payload with the reproducibility envelope every artifact
/// carries: config snapshot, seed, and tool version.
fn envelope<T: Serialize>(config: &RunConfig, payload: T) -> serde_json::Value {
    json!({
        "tool_version": tool_version(),
        "seed": config.seed,
        "config": config,
        "report": payload,
    })
}

// ---------------------------------------------------------------------------
// Oracle assembly
// ---------------------------------------------------------------------------

fn load_lexicon(path: Option<&Path>) -> Result<LexiconToxicity> {
    let Some(path) = path else {
        return Ok(LexiconToxicity::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading lexicon {}", path.display()))?;
    let entries: BTreeMap<String, f64> =
        serde_json::from_str(&text).context("lexicon must be a JSON object of word: score")?;
    Ok(LexiconToxicity::new(entries))
}

fn build_toxicity(config: &RunConfig, lexicon: Option<&Path>) -> Result<Box<dyn ToxicityOracle>> {
    let base: Box<dyn ToxicityOracle> = match config.oracles.toxicity.as_str() {
        "mock" => Box::new(load_lexicon(lexicon.or(config.oracles.lexicon.as_deref()))?),
        "remote" => {
            let endpoint = config
                .oracles
                .endpoint
                .clone()
                .context("remote toxicity oracle requires oracles.endpoint in the config")?;
            let transport = HttpTransport::new(std::time::Duration::from_secs(30))?;
            let client = RemoteToxicityClient::from_env(
                transport,
                endpoint,
                RateLimiter::new(config.oracles.rate_limit.unwrap_or(1.0)),
                RetryPolicy {
                    max_attempts: config.oracles.retries.unwrap_or(3),
                    ..RetryPolicy::default()
                },
            )?;
            Box::new(client)
        }
        other => anyhow::bail!("unknown oracle kind `{other}`"),
    };
    Ok(match &config.paths.cache {
        Some(path) => Box::new(cached(base).with_disk(path)),
        None => Box::new(cached(base)),
    })
}

fn build_chat(config: &RunConfig, chat_script: Option<&Path>) -> Result<Box<dyn ChatCompleter>> {
    if let Some(script) = chat_script.or(config.oracles.chat_script.as_deref()) {
        let text = std::fs::read_to_string(script)
            .with_context(|| format!("reading chat script {}", script.display()))?;
        let answers: Vec<String> =
            serde_json::from_str(&text).context("chat script must be a JSON array of strings")?;
        return Ok(Box::new(scripted_chat(answers)));
    }
    let endpoint = config
        .oracles
        .llm_endpoint
        .clone()
        .context("remote chat requires oracles.llm_endpoint or --chat-script")?;
    let transport = HttpTransport::new(std::time::Duration::from_secs(60))?;
    let chat = RemoteChatCompleter::new(
        transport,
        endpoint,
        std::env::var(ENV_LLM_API_KEY).ok(),
        config
            .oracles
            .llm_model
            .clone()
            .unwrap_or_else(|| "text-davinci-003".to_string()),
        config.pipeline.sampling.clone(),
    )?;
    Ok(Box::new(chat))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_ingest(
    config: &RunConfig,
    input: &Path,
    format: SourceFormat,
    output: &Path,
) -> Result<()> {
    let (records, stats) = ingest(input, format, config.split_ratio, config.seed)?;
    write_artifact(output, |w| {
        write_jsonl(&mut *w, records.iter()).map_err(Into::into)
    })?;
    let report_path = sidecar(output, "report.json");
    write_json_artifact(&report_path, &envelope(config, &stats))?;
    print_ingest_summary(&stats, output);
    Ok(())
}

fn print_ingest_summary(stats: &IngestStats, output: &Path) {
    println!(
        "ingested {} of {} rows ({} malformed) -> {} ({} train / {} test)",
        stats.ingested,
        stats.rows,
        stats.malformed,
        output.display(),
        stats.train,
        stats.test,
    );
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn read_prompts(path: &Path) -> Result<Vec<PromptRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(std::io::BufReader::new(file))
        .with_context(|| format!("parsing prompts {}", path.display()))
}

/// Persists a finished or aborted run: the corpus (with a `.partial` suffix
/// when aborted) plus the report sidecar.
fn persist_run(config: &RunConfig, run: &PipelineRun, output: &Path, aborted: bool) -> Result<()> {
    if aborted {
        let partial = partial_path(output);
        let file = std::fs::File::create(&partial)?;
        let mut writer = std::io::BufWriter::new(file);
        run.write_corpus(&mut writer)?;
        writer.flush()?;
    } else {
        write_artifact(output, |w| run.write_corpus(&mut *w).map_err(Into::into))?;
    }
    let report_path = sidecar(output, "report.json");
    write_json_artifact(&report_path, &envelope(config, &run.report))?;
    Ok(())
}

pub fn cmd_build_chains(
    config: &RunConfig,
    input: &Path,
    output: &Path,
    lexicon: Option<&Path>,
) -> Result<()> {
    let prompts = read_prompts(input)?;
    let toxicity = build_toxicity(config, lexicon)?;
    let filler = NeutralFiller::new(
        config
            .oracles
            .filler_word
            .clone()
            .unwrap_or_else(|| "something".to_string()),
    );
    let oracles = PipelineOracles {
        toxicity: toxicity.as_ref(),
        filler: &filler,
        generator: &EchoGenerator,
        similarity: &TokenOverlapSimilarity,
        perplexity: &ConstPerplexity(DEFAULT_MOCK_PPL),
    };
    let scorer: Box<dyn SpanScorer> = match &config.paths.checkpoint {
        Some(path) => {
            let model = SpanCnnModel::load(path)?;
            model.ensure_k(config.pipeline.k)?;
            Box::new(model)
        }
        None => Box::new(OracleSpanScorer::new(
            load_lexicon(lexicon.or(config.oracles.lexicon.as_deref()))?,
            config.pipeline.k,
        )),
    };

    match run_pipeline(&prompts, scorer.as_ref(), &oracles, &config.pipeline) {
        Ok(run) => {
            persist_run(config, &run, output, false)?;
            println!(
                "built {} records from {} prompts -> {}",
                run.report.records_out,
                run.report.records_in,
                output.display()
            );
            Ok(())
        }
        Err(PipelineError::Aborted { partial, message }) => {
            persist_run(config, &partial, output, true)?;
            anyhow::bail!(
                "run aborted ({message}); partial corpus kept at {}",
                partial_path(output).display()
            );
        }
        Err(other) => Err(other.into()),
    }
}

pub fn cmd_build_chains_api(
    config: &RunConfig,
    input: &Path,
    output: &Path,
    chat_script: Option<&Path>,
    lexicon: Option<&Path>,
) -> Result<()> {
    let prompts = read_prompts(input)?;
    let chat = build_chat(config, chat_script)?;
    let toxicity = build_toxicity(config, lexicon)?;
    match run_api_pipeline(&prompts, chat.as_ref(), toxicity.as_ref(), &config.pipeline) {
        Ok(run) => {
            persist_run(config, &run, output, false)?;
            println!(
                "built {} records from {} prompts -> {}",
                run.report.records_out,
                run.report.records_in,
                output.display()
            );
            Ok(())
        }
        Err(PipelineError::Aborted { partial, message }) => {
            persist_run(config, &partial, output, true)?;
            anyhow::bail!(
                "run aborted ({message}); partial corpus kept at {}",
                partial_path(output).display()
            );
        }
        Err(other) => Err(other.into()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train_span(
    config: &RunConfig,
    input: &Path,
    output: &Path,
    epochs: Option<usize>,
    augment_rate: f64,
    span_bank: Option<&Path>,
    lexicon: Option<&Path>,
    binarize: bool,
) -> Result<()> {
    let file = std::fs::File::open(input)?;
    let rows: Vec<TrainingRow> = read_jsonl(std::io::BufReader::new(file))
        .with_context(|| format!("parsing training corpus {}", input.display()))?;

    let bank = match span_bank {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let entries: Vec<serde_json::Value> = serde_json::from_str(&text)
                .context("span bank must be a JSON array of {text, toxicity}")?;
            let spans = entries
                .iter()
                .map(|v| {
                    Ok(BankSpan::new(
                        v["text"].as_str().context("bank span text")?,
                        v["toxicity"].as_f64().context("bank span toxicity")?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(SpanBank::new(spans)?)
        }
        None => None,
    };

    // Labels may be absent when a lexicon oracle can fill them.
    let oracle = load_lexicon(lexicon.or(config.oracles.lexicon.as_deref()))?;
    let needs_oracle = rows
        .iter()
        .any(|r| r.global_label.is_none() || r.span_labels.is_none());

    let mut train_config = TrainConfig {
        seed: config.seed,
        augmentation_rate: augment_rate,
        binarize_labels: binarize,
        ..TrainConfig::default()
    };
    train_config.model.k = config.pipeline.k;
    train_config.model.lambda = config.pipeline.lambda;
    if let Some(epochs) = epochs {
        train_config.epochs = epochs;
    }

    let trained = train_span_cnn(
        &rows,
        bank.as_ref(),
        needs_oracle.then_some(&oracle as &dyn ToxicityOracle),
        &train_config,
    )?;

    write_artifact(output, |w| {
        trained.model.to_writer(&mut *w)?;
        Ok(())
    })?;
    let report_path = sidecar(output, "report.json");
    write_json_artifact(&report_path, &envelope(config, &trained.report))?;
    println!(
        "trained {} params for {} epochs; held-out span acc {:?}, instance acc {:?} -> {}",
        trained.report.num_params,
        trained.report.epochs,
        trained.report.holdout_span_accuracy,
        trained.report.holdout_instance_accuracy,
        output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectionRow {
    id: String,
    text: String,
    global: f64,
    truncated: bool,
    span_scores: Vec<f64>,
    toxic_spans: Vec<usize>,
    toxic_surfaces: Vec<String>,
}

pub fn cmd_detect(
    config: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
) -> Result<()> {
    let model = SpanCnnModel::load(checkpoint)?;
    model.ensure_k(config.pipeline.k)?;
    let prompts = read_prompts(input)?;
    let lambda = config.pipeline.lambda;

    let mut rows = Vec::with_capacity(prompts.len());
    for prompt in &prompts {
        let scored = model.score(&prompt.text)?;
        let toxic = detect_toxic_spans(&scored.spans, lambda);
        let surfaces = toxic
            .iter()
            .map(|&i| scored.segmentation.spans[i].text.clone())
            .collect();
        rows.push(DetectionRow {
            id: prompt.id.clone(),
            text: prompt.text.clone(),
            global: scored.global,
            truncated: scored.truncated,
            span_scores: scored.spans.scores.clone(),
            toxic_spans: toxic,
            toxic_surfaces: surfaces,
        });
    }

    match output {
        Some(path) => write_artifact(path, |w| {
            write_jsonl(&mut *w, rows.iter()).map_err(Into::into)
        })?,
        None => {
            let stdout = std::io::stdout();
            write_jsonl(stdout.lock(), rows.iter())?;
        }
    }
    Ok(())
}

pub fn cmd_evaluate(
    config: &RunConfig,
    generations: &Path,
    prompts: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let file = std::fs::File::open(generations)?;
    let batches: Vec<GenerationBatch> = read_jsonl(std::io::BufReader::new(file))
        .with_context(|| format!("parsing generations {}", generations.display()))?;
    let gold: BTreeMap<String, f64> = match prompts {
        Some(path) => read_prompts(path)?
            .into_iter()
            .filter_map(|p| p.toxicity.map(|t| (p.id, t)))
            .collect(),
        None => BTreeMap::new(),
    };

    let report = evaluate_generations(
        &batches,
        &gold,
        &TokenOverlapSimilarity,
        &ConstPerplexity(DEFAULT_MOCK_PPL),
    )?;
    print_eval_table(&report);
    if let Some(path) = output {
        write_json_artifact(path, &envelope(config, &report))?;
    }
    Ok(())
}

fn print_eval_table(report: &EvalReport) {
    println!(
        "{:<10} {:>14} {:>10} {:>7} {:>7} {:>8}",
        "subset", "Exp.Max.Tox.", "Tox.Prob.", "SIM", "Edit", "PPL"
    );
    for (name, subset) in &report.subsets {
        println!(
            "{:<10} {:>14} {:>9.2}% {:>7.2} {:>7.2} {:>8.2}",
            name,
            subset.exp_max_toxicity.to_string(),
            subset.toxicity_prob * 100.0,
            subset.sim,
            subset.edit,
            subset.ppl,
        );
    }
}

pub fn cmd_grade_chains(
    config: &RunConfig,
    outputs: &Path,
    gold: &Path,
    lexicon: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct OutputRow {
        id: String,
        chain_text: String,
    }

    let file = std::fs::File::open(outputs)?;
    let output_rows: Vec<OutputRow> = read_jsonl(std::io::BufReader::new(file))
        .with_context(|| format!("parsing outputs {}", outputs.display()))?;
    let file = std::fs::File::open(gold)?;
    let gold_rows: Vec<ChainCorpusRow> = read_jsonl(std::io::BufReader::new(file))
        .with_context(|| format!("parsing gold corpus {}", gold.display()))?;
    let gold_records: Vec<_> = gold_rows
        .into_iter()
        .map(ChainCorpusRow::into_record)
        .collect();

    let templates = TemplateSet::new("###", config.pipeline.placeholder.clone());
    let parsed: Vec<(String, detox_chain::chain::ChainParseResult)> = output_rows
        .iter()
        .map(|row| {
            let result = parse_chain(&row.chain_text, &templates, ParseMode::Lenient)
                .expect("lenient parsing never errors");
            (row.id.clone(), result)
        })
        .collect();

    let toxicity = load_lexicon(lexicon.or(config.oracles.lexicon.as_deref()))?;
    let report = evaluate_chain_steps(
        &parsed,
        &gold_records,
        &StepOracles {
            toxicity: &toxicity,
            similarity: &TokenOverlapSimilarity,
        },
    )?;

    let wrapped = envelope(config, &report);
    match output {
        Some(path) => write_json_artifact(path, &wrapped)?,
        None => println!("{}", serde_json::to_string_pretty(&wrapped)?),
    }
    Ok(())
}

pub fn cmd_parse_chain(
    config: &RunConfig,
    text: Option<String>,
    file: Option<&Path>,
    lenient: bool,
) -> Result<()> {
    let text = match (text, file) {
        (Some(text), None) => text,
        (None, Some(path)) => std::fs::read_to_string(path)?.trim_end().to_string(),
        _ => anyhow::bail!("pass exactly one of --text or --file"),
    };
    let templates = TemplateSet::new("###", config.pipeline.placeholder.clone());
    let mode = if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    };
    let result = parse_chain(&text, &templates, mode)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}
