//! Staged pipeline: each stage reads persisted inputs, writes its outputs and
//! a manifest sidecar, and never repeats an earlier stage's LM calls.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, LengthCdf, OverlapReport};
use crate::config::{stage, ConfigError, PipelineConfig};
use crate::dataset::{self, DatasetError, McqRecord, DEFAULT_QTYPE, NUM_OPTIONS};
use crate::extraction::{extract_intentions, CaptionRecord, ExtractionError, FilterConfig, ResponseRecord};
use crate::lm_backend::{embed_chunked, CompletionProvider, CompletionRequest, EmbeddingProvider, EmbeddingVector, LmError};
use crate::manifest::{manifest_path, sidecar, Manifest, RecordProvenance, ResponseEntry};
use crate::pooling::{assemble_options, cluster_responses, DistractorSampler, PoolAssignment, PoolError};
use crate::prompting::PromptSpec;
use crate::question_gen::{make_question_with_prefix, sample_prefix, GrammarCorrector, QuestionPrefix};
use crate::seeding::{derive_indexed_seed, rng_from_seed};
use crate::trainer::{self, EpochLog, LinearScorer, TrainError, TrainExample};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("provider failure: {0}")]
    Provider(#[from] LmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid data: {0}")]
    Validation(String),
}

impl PipelineError {
    /// 1 usage/config, 2 data validation, 3 provider failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 1,
            Self::Dataset(DatasetError::Io { .. }) => 1,
            Self::Dataset(DatasetError::InvalidConfig(_)) => 1,
            Self::Dataset(_) => 2,
            Self::Provider(_) => 3,
            Self::Pool(PoolError::InvalidConfig(_)) => 1,
            Self::Pool(_) => 2,
            Self::Train(TrainError::InvalidConfig(_) | TrainError::Io(_)) => 1,
            Self::Train(_) => 2,
            Self::Analytics(AnalyticsError::Io(_) | AnalyticsError::InvalidK) => 1,
            Self::Analytics(_) => 2,
            Self::Validation(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub video_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateOutcome {
    /// One entry per successfully processed caption, in input order.
    pub responses: Vec<ResponseRecord>,
    pub failures: Vec<CaptionFailure>,
    pub raw_choices: usize,
}

impl GenerateOutcome {
    pub fn candidates(&self) -> usize {
        self.responses.iter().map(|r| r.candidates.len()).sum()
    }

    pub fn filtered(&self) -> usize {
        self.raw_choices - self.candidates()
    }
}

fn extraction_to_pipeline(e: ExtractionError) -> PipelineError {
    match e {
        ExtractionError::Prompt(p) => PipelineError::Validation(p.to_string()),
        ExtractionError::Provider(l) => PipelineError::Provider(l),
    }
}

/// Extract intentions for every caption with at most `max_in_flight`
/// requests outstanding. Results keep input order. Caption `i` is queried
/// with seed `derive_indexed_seed(req_defaults.seed, i)` when a seed is set.
/// A failed caption is logged and skipped, or aborts the run when `strict`.
pub async fn run_extraction(
    captions: &[CaptionRecord],
    provider: &dyn CompletionProvider,
    spec: &PromptSpec,
    req_defaults: &CompletionRequest,
    filter: &FilterConfig,
    max_in_flight: usize,
    strict: bool,
) -> Result<GenerateOutcome, PipelineError> {
    if max_in_flight == 0 {
        return Err(ConfigError::Invalid("max_in_flight must be >= 1".into()).into());
    }
    let results: Vec<_> = stream::iter(captions.iter().enumerate())
        .map(|(i, record)| {
            let mut req = req_defaults.clone();
            req.seed = req.seed.map(|s| derive_indexed_seed(s, i as u64));
            async move {
                let res = extract_intentions(record, provider, spec, &req, filter).await;
                (record, res)
            }
        })
        .buffered(max_in_flight)
        .collect()
        .await;

    let mut out = GenerateOutcome {
        responses: Vec::with_capacity(captions.len()),
        failures: Vec::new(),
        raw_choices: 0,
    };
    for (record, res) in results {
        match res {
            Ok(ex) => {
                out.raw_choices += ex.raw_choices;
                out.responses
                    .push(ResponseRecord::from_candidates(record, &ex.candidates));
            }
            Err(e) => {
                if strict {
                    return Err(extraction_to_pipeline(e));
                }
                tracing::warn!(video_id = %record.video_id, error = %e, "caption skipped");
                out.failures.push(CaptionFailure {
                    video_id: record.video_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// `generate`: captions file → responses JSONL + manifest.
pub async fn cmd_generate(
    cfg: &PipelineConfig,
    captions_path: &Path,
    out_path: &Path,
    strict: bool,
) -> Result<GenerateOutcome, PipelineError> {
    cfg.validate()?;
    let captions = dataset::load_captions(captions_path)?;
    let provider = cfg.completion_provider()?;
    let spec = cfg.prompt_spec()?;
    let outcome = run_extraction(
        &captions,
        provider.as_ref(),
        &spec,
        &cfg.completion_defaults(),
        &cfg.filter,
        cfg.max_in_flight,
        strict,
    )
    .await?;
    dataset::write_jsonl(out_path, &outcome.responses)?;
    Manifest::new("generate", cfg)
        .provider("completion", provider.id())
        .input(captions_path)
        .map_err(io_err(captions_path))?
        .output(out_path)
        .count("captions_in", captions.len())
        .count("captions_failed", outcome.failures.len())
        .count("raw_choices", outcome.raw_choices)
        .count("responses_out", outcome.candidates())
        .count("filtered", outcome.filtered())
        .write(&manifest_path(out_path))
        .map_err(io_err(out_path))?;
    tracing::info!(
        captions = captions.len(),
        responses = outcome.candidates(),
        filtered = outcome.filtered(),
        failed = outcome.failures.len(),
        "generate done"
    );
    Ok(outcome)
}

// ------------------------------------------------------------------- build

/// Everything produced by a build, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildArtifacts {
    pub records: Vec<McqRecord>,
    pub responses: Vec<ResponseEntry>,
    pub provenance: Vec<RecordProvenance>,
    pub pools: PoolAssignment,
    pub corrector_fallbacks: usize,
}

/// Flatten response records into the indexed answer corpus.
pub fn flatten_responses(responses: &[ResponseRecord]) -> Result<Vec<ResponseEntry>, PipelineError> {
    let mut out = Vec::new();
    for r in responses {
        for (pos, text) in r.candidates.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(PipelineError::Validation(format!(
                    "empty candidate {pos} for video {}",
                    r.video_id
                )));
            }
            out.push(ResponseEntry {
                response_index: out.len(),
                video_id: r.video_id.clone(),
                choice_index: r.choice_index(pos),
                text: text.clone(),
                pool_id: 0,
            });
        }
    }
    Ok(out)
}

/// Embed `texts`, calling the provider once per distinct text.
pub async fn embed_dedup(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
    batch_size: usize,
) -> Result<Vec<EmbeddingVector>, PipelineError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut unique: Vec<String> = Vec::new();
    let slots: Vec<usize> = texts
        .iter()
        .map(|t| {
            *index.entry(t.as_str()).or_insert_with(|| {
                unique.push(t.clone());
                unique.len() - 1
            })
        })
        .collect();
    if unique.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = embed_chunked(provider, &unique, batch_size).await?;
    Ok(slots.into_iter().map(|s| vectors[s].clone()).collect())
}

/// Embed, cluster, question and distract every response.
pub async fn build_records(
    responses: &[ResponseRecord],
    cfg: &PipelineConfig,
    embedder: &dyn EmbeddingProvider,
    corrector: &dyn GrammarCorrector,
) -> Result<BuildArtifacts, PipelineError> {
    let mut entries = flatten_responses(responses)?;
    if entries.is_empty() {
        return Err(PipelineError::Validation("response file has no candidates".into()));
    }
    let texts: Vec<String> = entries.iter().map(|e| e.text.clone()).collect();
    let embeddings = embed_dedup(embedder, &texts, cfg.provider.embed_batch_size).await?;
    let pools = cluster_responses(&embeddings, &cfg.pool_config())?;
    for e in &mut entries {
        e.pool_id = pools.assignment[e.response_index];
    }
    let sampler = DistractorSampler::new(&texts, &pools, cfg.pool.num_distractors)?;

    // Prefixes are drawn up front in caption order; correction may then run
    // concurrently without touching the stream.
    let mut qrng = rng_from_seed(cfg.stage_seed(stage::QUESTION));
    let asked: Vec<(&ResponseRecord, QuestionPrefix)> = responses
        .iter()
        .filter(|r| !r.candidates.is_empty())
        .map(|r| (r, sample_prefix(&mut qrng)))
        .collect();
    let drafts: Vec<_> = stream::iter(asked.iter())
        .map(|(r, prefix)| make_question_with_prefix(&r.caption, *prefix, corrector))
        .buffered(cfg.max_in_flight.max(1))
        .collect()
        .await;
    let mut questions: HashMap<&str, String> = HashMap::new();
    let mut corrector_fallbacks = 0;
    for ((r, _), draft) in asked.iter().zip(drafts) {
        let draft = draft.map_err(|e| {
            PipelineError::Validation(format!("video {}: {e}", r.video_id))
        })?;
        corrector_fallbacks += usize::from(draft.corrector_fallback);
        if questions.insert(r.video_id.as_str(), draft.q).is_some() {
            return Err(PipelineError::Validation(format!(
                "video {} appears more than once in the response file",
                r.video_id
            )));
        }
    }

    let distractor_seed = cfg.stage_seed(stage::DISTRACTOR);
    let mut records = Vec::with_capacity(entries.len());
    let mut provenance = Vec::with_capacity(entries.len());
    for e in &entries {
        let mut rng = rng_from_seed(derive_indexed_seed(distractor_seed, e.response_index as u64));
        let picks = sampler.sample(e.response_index, &mut rng)?;
        let distractors: Vec<String> = picks.iter().map(|p| sampler.text(p).to_string()).collect();
        let (options, answer) = assemble_options(&e.text, &distractors, &mut rng)?;
        let options: [String; NUM_OPTIONS] = options.try_into().map_err(|o: Vec<String>| {
            PipelineError::Validation(format!("expected {NUM_OPTIONS} options, got {}", o.len()))
        })?;
        let qid = dataset::make_qid(&e.video_id, e.choice_index);
        let record = McqRecord {
            video_id: e.video_id.clone(),
            qid: qid.clone(),
            qtype: DEFAULT_QTYPE.to_string(),
            question: questions[e.video_id.as_str()].clone(),
            options,
            answer,
        };
        record.validate()?;
        records.push(record);
        provenance.push(RecordProvenance {
            qid,
            answer_response_index: e.response_index,
            answer_pool_id: e.pool_id,
            distractors: picks,
        });
    }
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.qid.as_str()) {
            return Err(PipelineError::Validation(format!("duplicate qid {}", r.qid)));
        }
    }
    Ok(BuildArtifacts {
        records,
        responses: entries,
        provenance,
        pools,
        corrector_fallbacks,
    })
}

#[derive(Serialize)]
struct PoolRow {
    response_index: usize,
    pool_id: usize,
}

fn write_centroids(path: &Path, centroids: &[Vec<f64>]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in centroids {
        let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()
}

/// `build`: responses JSONL → MCQ CSV, manifest, pool and centroid sidecars.
pub async fn cmd_build(
    cfg: &PipelineConfig,
    responses_path: &Path,
    out_csv: &Path,
) -> Result<BuildArtifacts, PipelineError> {
    cfg.validate()?;
    let responses: Vec<ResponseRecord> = dataset::read_jsonl(responses_path)?;
    let embedder = cfg.embedding_provider()?;
    let corrector = cfg.corrector()?;
    let art = build_records(&responses, cfg, embedder.as_ref(), corrector.as_ref()).await?;

    dataset::emit_csv(&art.records, out_csv)?;
    let pools_path = sidecar(out_csv, "pools.jsonl");
    let rows: Vec<PoolRow> = art
        .responses
        .iter()
        .map(|e| PoolRow {
            response_index: e.response_index,
            pool_id: e.pool_id,
        })
        .collect();
    dataset::write_jsonl(&pools_path, &rows)?;
    let centroids_path = sidecar(out_csv, "centroids.csv");
    write_centroids(&centroids_path, &art.pools.centroids).map_err(io_err(&centroids_path))?;

    let fallback_picks = art
        .provenance
        .iter()
        .flat_map(|p| &p.distractors)
        .filter(|d| d.fallback)
        .count();
    let mut manifest = Manifest::new("build", cfg)
        .provider("embedding", embedder.id())
        .provider("corrector", &format!("{:?}", cfg.corrector.kind).to_lowercase())
        .input(responses_path)
        .map_err(io_err(responses_path))?
        .output(out_csv)
        .output(&pools_path)
        .output(&centroids_path)
        .count("responses", art.responses.len())
        .count("records", art.records.len())
        .count("pools", art.pools.num_pools())
        .count("kmeans_iterations", art.pools.iterations)
        .count("fallback_distractors", fallback_picks)
        .count("corrector_fallbacks", art.corrector_fallbacks);
    manifest.responses = Some(art.responses.clone());
    manifest.provenance = Some(art.provenance.clone());
    manifest
        .write(&manifest_path(out_csv))
        .map_err(io_err(out_csv))?;
    tracing::info!(records = art.records.len(), pools = art.pools.num_pools(), "build done");
    Ok(art)
}

// ------------------------------------------------------------- train / eval

/// Embed every question and option once and build `[q;a]` feature rows.
pub async fn featurize_records(
    records: &[McqRecord],
    embedder: &dyn EmbeddingProvider,
    batch_size: usize,
) -> Result<Vec<TrainExample>, PipelineError> {
    let mut texts = Vec::with_capacity(records.len() * (NUM_OPTIONS + 1));
    for r in records {
        r.validate()?;
        texts.push(r.question.clone());
        texts.extend(r.options.iter().cloned());
    }
    let vectors = embed_dedup(embedder, &texts, batch_size).await?;
    let mut out = Vec::with_capacity(records.len());
    for (r, chunk) in records.iter().zip(vectors.chunks(NUM_OPTIONS + 1)) {
        let q = &chunk[0];
        let options = chunk[1..]
            .iter()
            .map(|a| trainer::featurize(q, a))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(TrainExample {
            options,
            correct: r.answer,
        });
    }
    Ok(out)
}

/// `train`: CSV → scorer file, `<scorer>.log.csv` and manifest.
pub async fn cmd_train(
    cfg: &PipelineConfig,
    csv_path: &Path,
    scorer_path: &Path,
) -> Result<(LinearScorer, Vec<EpochLog>), PipelineError> {
    cfg.validate()?;
    let records = dataset::load_csv(csv_path)?;
    let embedder = cfg.embedding_provider()?;
    let data = featurize_records(&records, embedder.as_ref(), cfg.provider.embed_batch_size).await?;
    let (scorer, log) = trainer::train(&data, &cfg.train_config())?;
    scorer.save(scorer_path, &cfg.hash())?;
    let log_path = sidecar(scorer_path, "log.csv");
    trainer::write_log_csv(&log, &log_path)?;
    let final_acc = log.last().map(|l| l.accuracy).unwrap_or(0.0);
    Manifest::new("train", cfg)
        .provider("embedding", embedder.id())
        .input(csv_path)
        .map_err(io_err(csv_path))?
        .output(scorer_path)
        .output(&log_path)
        .count("records", records.len())
        .count("epochs", log.len())
        .write(&manifest_path(scorer_path))
        .map_err(io_err(scorer_path))?;
    tracing::info!(epochs = log.len(), train_accuracy = final_acc, "train done");
    Ok((scorer, log))
}

/// `eval`: accuracy of a saved scorer, or of the zero scorer when none is given.
pub async fn cmd_eval(
    cfg: &PipelineConfig,
    csv_path: &Path,
    scorer_path: Option<&Path>,
) -> Result<f64, PipelineError> {
    cfg.validate()?;
    let records = dataset::load_csv(csv_path)?;
    if records.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }
    let embedder = cfg.embedding_provider()?;
    let data = featurize_records(&records, embedder.as_ref(), cfg.provider.embed_batch_size).await?;
    let feature_dim = data[0].options[0].len();
    let scorer = match scorer_path {
        Some(p) => {
            let (s, hash) = LinearScorer::load(p)?;
            if hash != cfg.hash() {
                tracing::warn!("scorer was trained under a different config");
            }
            s
        }
        None => LinearScorer::zeros(feature_dim),
    };
    if scorer.weights.len() != feature_dim {
        return Err(TrainError::DimMismatch(format!(
            "scorer has {} weights but features have {feature_dim}",
            scorer.weights.len()
        ))
        .into());
    }
    Ok(trainer::evaluate(&scorer, &data)?)
}

pub fn format_accuracy(acc: f64) -> String {
    format!("accuracy={acc:.4}")
}

// -------------------------------------------------------- split / distill

/// `split`: seeded split into `first_size` and the remainder.
pub fn cmd_split(
    cfg: &PipelineConfig,
    captions_path: &Path,
    first_size: usize,
    out_a: &Path,
    out_b: &Path,
) -> Result<(usize, usize), PipelineError> {
    let captions = dataset::load_captions(captions_path)?;
    let (a, b) = dataset::split_corpus(&captions, first_size, cfg.stage_seed(stage::SPLIT))?;
    dataset::write_captions(out_a, &a)?;
    dataset::write_captions(out_b, &b)?;
    for (path, n) in [(out_a, a.len()), (out_b, b.len())] {
        Manifest::new("split", cfg)
            .input(captions_path)
            .map_err(io_err(captions_path))?
            .output(path)
            .count("first_size", first_size)
            .count("records", n)
            .write(&manifest_path(path))
            .map_err(io_err(path))?;
    }
    Ok((a.len(), b.len()))
}

/// `distill-export`: responses JSONL → `{input, output}` pairs.
pub fn cmd_distill_export(
    cfg: &PipelineConfig,
    responses_path: &Path,
    out_path: &Path,
) -> Result<usize, PipelineError> {
    let responses: Vec<ResponseRecord> = dataset::read_jsonl(responses_path)?;
    let pairs = dataset::distill_pairs(&responses);
    let n = dataset::export_distill_corpus(&pairs, out_path)?;
    Manifest::new("distill-export", cfg)
        .input(responses_path)
        .map_err(io_err(responses_path))?
        .output(out_path)
        .count("pairs", n)
        .write(&manifest_path(out_path))
        .map_err(io_err(out_path))?;
    Ok(n)
}

// ----------------------------------------------------------------- analyze

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeReport {
    pub cdf: LengthCdf,
    pub overlap: Option<OverlapReport>,
    pub outputs: Vec<PathBuf>,
}

/// `analyze`: length CDF and, when captions are known, the word-overlap report.
/// A `.csv` input is read as an MCQ dataset (answers only); anything else as
/// a responses file, which also supplies the captions.
pub fn cmd_analyze(
    input: &Path,
    captions_path: Option<&Path>,
    out_dir: &Path,
    k_gen: usize,
    k_cap: usize,
) -> Result<AnalyzeReport, PipelineError> {
    let (answers, mut captions): (Vec<String>, Vec<String>) =
        if input.extension().is_some_and(|e| e == "csv") {
            let records = dataset::load_csv(input)?;
            (records.iter().map(|r| r.answer_text().to_string()).collect(), Vec::new())
        } else {
            let responses: Vec<ResponseRecord> = dataset::read_jsonl(input)?;
            (
                responses.iter().flat_map(|r| r.candidates.iter().cloned()).collect(),
                responses.iter().map(|r| r.caption.clone()).collect(),
            )
        };
    if let Some(p) = captions_path {
        captions = dataset::load_captions(p)?.into_iter().map(|c| c.caption).collect();
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let cdf = analytics::length_cdf(&answers)?;
    let cdf_path = out_dir.join("length_cdf.csv");
    cdf.write_csv(&cdf_path)?;
    let mut outputs = vec![cdf_path];
    let overlap = if captions.is_empty() {
        None
    } else {
        let report = analytics::overlap_report(
            &answers,
            &captions,
            k_gen,
            k_cap,
            &analytics::default_stopwords(),
        )?;
        let p = out_dir.join("top_words.csv");
        report.write_csv(&p)?;
        outputs.push(p);
        Some(report)
    };
    Ok(AnalyzeReport {
        cdf,
        overlap,
        outputs,
    })
}
