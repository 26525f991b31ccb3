//! Experiment orchestration: run configuration, bounded-parallel execution
//! over (method, item) pairs, JSON Lines persistence with resume, scoring,
//! cost aggregation, and report rendering.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{aggregate_costs, CallLog, CostError, CostReport, PriceTable};
use crate::agents::{MaskSymbolScheme, MomaSettings};
use crate::backend::{
    Backend, LiveBackend, LiveConfig, ModelProfile, RetryPolicy, ScriptedBackend, Session,
};
use crate::baselines::{answer, AbpPromptSet, MethodEnv};
use crate::datasets::{load_bbq, load_stereoset, sample_split, DataError, RejectedLine};
use crate::fixtures::{synthetic_bbq_corpus, OracleBackend};
use crate::metrics::{
    delta_percent, pareto_frontier, score_bbq, score_stereoset, stratum_counts, BbqScores,
    HeadlineAggregate, ObjectiveVector, StereoScores, StratumCounts,
};
use crate::prompts::PromptLibrary;
use crate::types::{AnswerRecord, MethodKind, QAItem, StereoTask};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("no scores.json in the run directory (run `moma score` first)")]
    MissingScores,
}

impl RunnerError {
    /// CLI exit code: 2 config, 3 data, 4 is reserved for partial runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::Data(_) => 3,
            _ => 1,
        }
    }
}

/// What the run consumes: a dataset, a backend, a method list, and knobs.
/// Every field has a documented default (`moma config --print-defaults`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One of `bbq`, `stereoset-intra`, `stereoset-inter`, `synthetic`.
    pub dataset: String,
    /// BBQ: directory of per-category jsonl files. StereoSet: dev.json path.
    pub data_path: Option<PathBuf>,
    /// BBQ category filter; everything when absent.
    pub categories: Option<Vec<String>>,
    pub methods: Vec<MethodKind>,
    /// Model profile: `gpt` or `llama`.
    pub model: String,
    /// `oracle`, `live`, or `scripted:<script.jsonl>`.
    pub backend: String,
    /// Stratified subsample size; the whole split when absent.
    pub sample_n: Option<usize>,
    pub seed: u64,
    /// Item count for the synthetic dataset.
    pub synthetic_n: usize,
    /// Mask token preset: `letter-pair`, `math-symbol`, or `emoji`.
    pub mask_scheme: String,
    /// Rewrite option texts through the mask map before the task prompt.
    pub mask_option_texts: bool,
    pub headline: HeadlineAggregate,
    pub concurrency: usize,
    pub out_dir: PathBuf,
    /// Overrides shipped prompt templates by file name.
    pub prompt_dir: Option<PathBuf>,
    /// Overrides the shipped anti-bias prompt set.
    pub abp_file: Option<PathBuf>,
    pub prices: PriceTable,
    pub sc_temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".to_string(),
            data_path: None,
            categories: None,
            methods: vec![MethodKind::Sp],
            model: "gpt".to_string(),
            backend: "oracle".to_string(),
            sample_n: None,
            seed: 0,
            synthetic_n: 20,
            mask_scheme: "letter-pair".to_string(),
            mask_option_texts: false,
            headline: HeadlineAggregate::default(),
            concurrency: 4,
            out_dir: PathBuf::from("runs/latest"),
            prompt_dir: None,
            abp_file: None,
            prices: PriceTable::default(),
            sc_temperature: 0.7,
            max_tokens: None,
        }
    }
}

/// Backend selector parsed out of the config string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Oracle,
    Live,
    Scripted(PathBuf),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))
    }

    pub fn backend_choice(&self) -> Result<BackendChoice, RunnerError> {
        match self.backend.as_str() {
            "oracle" => Ok(BackendChoice::Oracle),
            "live" => Ok(BackendChoice::Live),
            other => match other.strip_prefix("scripted:") {
                Some(path) if !path.is_empty() => Ok(BackendChoice::Scripted(path.into())),
                _ => Err(RunnerError::Config(format!(
                    "backend must be `oracle`, `live`, or `scripted:<path>`, got `{other}`"
                ))),
            },
        }
    }

    pub fn profile(&self) -> Result<ModelProfile, RunnerError> {
        ModelProfile::from_name(&self.model)
            .ok_or_else(|| RunnerError::Config(format!("unknown model profile `{}`", self.model)))
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.methods.is_empty() {
            return Err(RunnerError::Config("no methods configured".to_string()));
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            m.validate().map_err(RunnerError::Config)?;
            if !seen.insert(m.to_string()) {
                return Err(RunnerError::Config(format!("method `{m}` listed twice")));
            }
        }
        if self.concurrency == 0 {
            return Err(RunnerError::Config("concurrency must be >= 1".to_string()));
        }
        self.profile()?;
        self.backend_choice()?;
        MaskSymbolScheme::preset(&self.mask_scheme)
            .ok_or_else(|| {
                RunnerError::Config(format!("unknown mask scheme `{}`", self.mask_scheme))
            })?
            .validate()
            .map_err(RunnerError::Config)?;
        match self.dataset.as_str() {
            "synthetic" => {
                if self.synthetic_n == 0 {
                    return Err(RunnerError::Config("synthetic_n must be >= 1".to_string()));
                }
            }
            "bbq" | "stereoset-intra" | "stereoset-inter" => {
                if self.data_path.is_none() {
                    return Err(RunnerError::Config(format!(
                        "dataset `{}` requires data_path",
                        self.dataset
                    )));
                }
            }
            other => {
                return Err(RunnerError::Config(format!("unknown dataset `{other}`")));
            }
        }
        Ok(())
    }

    /// Whether the scored records form a BBQ-shaped run.
    pub fn is_bbq_like(&self) -> bool {
        matches!(self.dataset.as_str(), "bbq" | "synthetic")
    }
}

/// Loads the configured dataset; applies the stratified subsample if asked.
pub fn load_items(config: &RunConfig) -> Result<(Vec<QAItem>, Vec<RejectedLine>), RunnerError> {
    let (mut items, rejected) = match config.dataset.as_str() {
        "synthetic" => (synthetic_bbq_corpus(config.synthetic_n), Vec::new()),
        "bbq" => {
            let outcome = load_bbq(
                config.data_path.as_deref().expect("validated"),
                config.categories.as_deref(),
            )?;
            (outcome.items, outcome.rejected)
        }
        kind => {
            let task = if kind == "stereoset-intra" {
                StereoTask::Intrasentence
            } else {
                StereoTask::Intersentence
            };
            let outcome = load_stereoset(config.data_path.as_deref().expect("validated"), task)?;
            (outcome.items, outcome.rejected)
        }
    };
    if let Some(n) = config.sample_n {
        if config.dataset != "synthetic" {
            items = sample_split(&items, n, config.seed)?;
        }
    }
    if items.is_empty() {
        return Err(RunnerError::Data(DataError::NotEnoughItems { want: 1, have: 0 }));
    }
    Ok((items, rejected))
}

/// Builds the configured backend.
pub fn build_backend(config: &RunConfig) -> Result<Arc<dyn Backend>, RunnerError> {
    match config.backend_choice()? {
        BackendChoice::Oracle => Ok(Arc::new(OracleBackend::default())),
        BackendChoice::Scripted(path) => {
            Ok(Arc::new(ScriptedBackend::from_script_file(&path)?))
        }
        BackendChoice::Live => {
            let live = LiveConfig::from_env().map_err(RunnerError::Config)?;
            Ok(Arc::new(LiveBackend::new(live)))
        }
    }
}

fn build_env(config: &RunConfig) -> Result<MethodEnv, RunnerError> {
    let prompts = match &config.prompt_dir {
        Some(dir) => PromptLibrary::load_dir(dir)?,
        None => PromptLibrary::default(),
    };
    let abp = match &config.abp_file {
        Some(path) => AbpPromptSet::load(path)
            .map_err(|e| RunnerError::Config(format!("abp file: {e}")))?,
        None => AbpPromptSet::default(),
    };
    let mut params = config.profile()?.default_params();
    if let Some(max_tokens) = config.max_tokens {
        params.max_tokens = max_tokens;
    }
    Ok(MethodEnv {
        moma: MomaSettings {
            prompts,
            scheme: MaskSymbolScheme::preset(&config.mask_scheme).expect("validated"),
            lexicon: Default::default(),
            mask_option_texts: config.mask_option_texts,
        },
        abp,
        params,
        sc_temperature: config.sc_temperature,
    })
}

/// Written before the first model call, finalized after the last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub total_pairs: usize,
    pub completed_pairs: usize,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Fields that may differ between a run and its resume without changing the
/// result set (execution-only knobs).
fn comparable_config(config: &RunConfig) -> serde_json::Value {
    let mut value = serde_json::to_value(config).expect("config serializes");
    if let Some(map) = value.as_object_mut() {
        map.remove("concurrency");
        map.remove("out_dir");
    }
    value
}

fn read_records(path: &Path) -> Result<Vec<AnswerRecord>, RunnerError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnswerRecord = serde_json::from_str(&line).map_err(|e| {
            RunnerError::Config(format!("records.jsonl line {}: {e}", lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

fn write_records_canonical(path: &Path, records: &[AnswerRecord]) -> Result<(), RunnerError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Per-method aggregates stored in `scores.json`. Stratum counts are raw
/// material for per-category breakdowns and external analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodScores {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bbq: Option<BbqScores>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stereoset: Option<StereoScores>,
    pub strata: BTreeMap<String, StratumCounts>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresFile {
    pub dataset: String,
    pub headline: HeadlineAggregate,
    pub per_method: BTreeMap<String, MethodScores>,
}

/// Scores all records grouped by method.
pub fn compute_scores(
    config: &RunConfig,
    records: &[AnswerRecord],
    items: &[QAItem],
) -> ScoresFile {
    let mut by_method: BTreeMap<String, Vec<AnswerRecord>> = BTreeMap::new();
    for record in records {
        by_method.entry(record.method.to_string()).or_default().push(record.clone());
    }
    let per_method = by_method
        .into_iter()
        .map(|(method, records)| {
            let scores = MethodScores {
                bbq: config
                    .is_bbq_like()
                    .then(|| score_bbq(&records, items, config.headline)),
                stereoset: (!config.is_bbq_like()).then(|| score_stereoset(&records, items)),
                strata: stratum_counts(&records, items),
            };
            (method, scores)
        })
        .collect();
    ScoresFile {
        dataset: config.dataset.clone(),
        headline: config.headline,
        per_method,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub items: usize,
    pub total_pairs: usize,
    pub executed_pairs: usize,
    pub resumed_pairs: usize,
    pub unanswered: usize,
    pub rejected_lines: usize,
    pub logical_calls: usize,
}

impl RunSummary {
    /// 0 on success, 4 when some items ended unanswered.
    pub fn exit_code(&self) -> i32 {
        if self.unanswered > 0 {
            4
        } else {
            0
        }
    }
}

/// Runs the experiment: executes every (method, item) pair not already
/// persisted, appends records as they complete, then rewrites the records
/// file in canonical (method, item_id) order and computes scores and costs.
pub fn run_experiment(config: &RunConfig) -> Result<RunSummary, RunnerError> {
    config.validate()?;
    let out_dir = &config.out_dir;
    std::fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join("manifest.json");
    let records_path = out_dir.join("records.jsonl");

    // Resume or fresh start; never overwrite a different run silently.
    if manifest_path.is_file() {
        let prior: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
                .map_err(|e| RunnerError::Config(format!("manifest.json: {e}")))?;
        if comparable_config(&prior.config) != comparable_config(config) {
            return Err(RunnerError::Config(format!(
                "{} holds a run with a different configuration; pick another out_dir",
                out_dir.display()
            )));
        }
    } else if records_path.is_file() {
        return Err(RunnerError::Config(format!(
            "{} has records but no manifest; refusing to guess",
            out_dir.display()
        )));
    }

    let (items, rejected) = load_items(config)?;
    let backend = build_backend(config)?;
    let deterministic = backend.is_deterministic();
    let env = build_env(config)?;

    let existing = read_records(&records_path)?;
    let done: HashSet<(String, String)> = existing
        .iter()
        .map(|r| (r.method.to_string(), r.item_id.clone()))
        .collect();
    let pending: Vec<(MethodKind, &QAItem)> = config
        .methods
        .iter()
        .flat_map(|m| items.iter().map(move |item| (*m, item)))
        .filter(|(m, item)| !done.contains(&(m.to_string(), item.id.clone())))
        .collect();

    let total_pairs = config.methods.len() * items.len();
    let mut manifest = RunManifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: now_unix(),
        finished_unix: None,
        total_pairs,
        completed_pairs: existing.len(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    let policy = if deterministic { RetryPolicy::immediate(3) } else { RetryPolicy::default() };
    let session = Session::new(backend, Arc::new(CallLog::new()), policy);

    let appender = Mutex::new(std::io::BufWriter::new(
        std::fs::OpenOptions::new().create(true).append(true).open(&records_path)?,
    ));
    let new_records: Mutex<Vec<AnswerRecord>> = Mutex::new(Vec::with_capacity(pending.len()));
    let cursor = AtomicUsize::new(0);
    let workers = config.concurrency.min(pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                let Some((method, item)) = pending.get(i) else { break };
                let started = std::time::Instant::now();
                let mut record = answer(&session, item, *method, &env);
                // Wall time is noise under replay; zero it so identical
                // configurations produce identical bytes.
                record.wall_time_ms =
                    if deterministic { 0 } else { started.elapsed().as_millis() as u64 };
                {
                    let mut out = appender.lock().expect("records writer poisoned");
                    serde_json::to_writer(&mut *out, &record).expect("record serializes");
                    out.write_all(b"\n").expect("records write");
                    out.flush().expect("records flush");
                }
                new_records.lock().expect("new records poisoned").push(record);
            });
        }
    });
    drop(appender);

    let executed = new_records.into_inner().expect("new records poisoned");
    let executed_pairs = executed.len();
    let mut all_records = existing;
    all_records.extend(executed);
    // Canonical order makes parallel completion order immaterial.
    all_records.sort_by(|a, b| {
        (a.method.to_string(), &a.item_id).cmp(&(b.method.to_string(), &b.item_id))
    });
    write_records_canonical(&records_path, &all_records)?;

    let scores = compute_scores(config, &all_records, &items);
    std::fs::write(out_dir.join("scores.json"), canonical_json(&scores)?)?;

    let entries: Vec<_> = all_records.iter().flat_map(|r| r.calls.iter().cloned()).collect();
    let with_ratios = config.methods.contains(&MethodKind::Cot);
    let costs = aggregate_costs(&entries, &config.prices, with_ratios)?;
    std::fs::write(out_dir.join("costs.json"), serde_json::to_string_pretty(&costs)?)?;

    manifest.completed_pairs = all_records.len();
    manifest.finished_unix = Some(now_unix());
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    let unanswered = all_records.iter().filter(|r| r.is_unanswered()).count();
    let summary = RunSummary {
        out_dir: out_dir.clone(),
        items: items.len(),
        total_pairs,
        executed_pairs,
        resumed_pairs: total_pairs - executed_pairs,
        unanswered,
        rejected_lines: rejected.len(),
        logical_calls: entries.len(),
    };
    Ok(summary)
}

/// Pretty JSON with a trailing newline; scores.json must be byte-stable, so
/// everything underneath is BTreeMap-ordered.
fn canonical_json<T: Serialize>(value: &T) -> Result<String, RunnerError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

impl From<serde_json::Error> for RunnerError {
    fn from(e: serde_json::Error) -> Self {
        RunnerError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn fmt_opt(value: Option<f64>, decimals: usize) -> String {
    match value {
        Some(v) => format!("{v:.decimals$}"),
        None => "n/a".to_string(),
    }
}

fn fmt_delta(value: Option<f64>, reference: Option<f64>) -> String {
    match (value, reference) {
        (Some(v), Some(r)) if r != 0.0 => {
            let d = delta_percent(v, r).expect("nonzero reference");
            format!("{d:+.1}")
        }
        _ => "—".to_string(),
    }
}

/// Renders `report.md` and `pareto.csv` from the persisted scores. Delta
/// columns compare against `reference_method` and show an em dash when the
/// reference is absent.
pub fn render_report(run_dir: &Path, reference_method: &str) -> Result<(), RunnerError> {
    let scores_path = run_dir.join("scores.json");
    if !scores_path.is_file() {
        return Err(RunnerError::MissingScores);
    }
    let scores: ScoresFile = serde_json::from_str(&std::fs::read_to_string(&scores_path)?)?;
    let reference = scores.per_method.get(reference_method);

    let mut md = String::new();
    md.push_str(&format!("# Run report — {}\n\n", scores.dataset));
    let bbq_like = scores.per_method.values().any(|m| m.bbq.is_some());

    let mut pareto_points: Vec<(String, ObjectiveVector)> = Vec::new();
    if bbq_like {
        md.push_str(&format!(
            "Headline bias aggregation: `{}`. Deltas vs `{}`.\n\n",
            serde_json::to_value(scores.headline)?.as_str().unwrap_or("?"),
            reference_method
        ));
        md.push_str("| Method | Bias Score | Δ (%) | Acc | Δ (%) |\n");
        md.push_str("|---|---|---|---|---|\n");
        let ref_bias = reference.and_then(|r| r.bbq.as_ref()).and_then(|b| b.bias_headline);
        let ref_acc = reference.and_then(|r| r.bbq.as_ref()).and_then(|b| b.acc_disambig);
        for (method, ms) in &scores.per_method {
            let Some(bbq) = &ms.bbq else { continue };
            md.push_str(&format!(
                "| {method} | {} | {} | {} | {} |\n",
                fmt_opt(bbq.bias_headline, 3),
                fmt_delta(bbq.bias_headline, ref_bias),
                fmt_opt(bbq.acc_disambig, 3),
                fmt_delta(bbq.acc_disambig, ref_acc),
            ));
            if let (Some(acc), Some(bias)) = (bbq.acc_disambig, bbq.bias_headline) {
                pareto_points.push((method.clone(), ObjectiveVector::bbq(acc, bias)));
            }
        }
    } else {
        md.push_str(&format!("Deltas vs `{}`.\n\n", reference_method));
        md.push_str("| Method | ss | lms | icat | Δ icat (%) |\n");
        md.push_str("|---|---|---|---|---|\n");
        let ref_icat =
            reference.and_then(|r| r.stereoset.as_ref()).and_then(|s| s.icat());
        for (method, ms) in &scores.per_method {
            let Some(stereo) = &ms.stereoset else { continue };
            md.push_str(&format!(
                "| {method} | {} | {} | {} | {} |\n",
                fmt_opt(stereo.ss, 2),
                fmt_opt(stereo.lms, 2),
                fmt_opt(stereo.icat(), 2),
                fmt_delta(stereo.icat(), ref_icat),
            ));
            if let (Some(ss), Some(lms)) = (stereo.ss, stereo.lms) {
                pareto_points.push((method.clone(), ObjectiveVector::stereoset(ss, lms)));
            }
        }
    }

    let frontier: HashSet<String> = pareto_frontier(&pareto_points)
        .map_err(|e| RunnerError::Config(e.to_string()))?
        .into_iter()
        .collect();
    if !pareto_points.is_empty() {
        md.push_str("\n## Pareto frontier\n\n");
        for (method, _) in &pareto_points {
            if frontier.contains(method) {
                md.push_str(&format!("- {method}\n"));
            }
        }
    }

    md.push_str("\n## Per-stratum breakdown\n\n");
    for (method, ms) in &scores.per_method {
        md.push_str(&format!("### {method}\n\n"));
        md.push_str("| Stratum | Total | Parsed | Correct | Choices |\n");
        md.push_str("|---|---|---|---|---|\n");
        for (stratum, counts) in &ms.strata {
            let choices = counts
                .by_tag
                .iter()
                .map(|(tag, n)| format!("{tag}={n}"))
                .collect::<Vec<_>>()
                .join(", ");
            md.push_str(&format!(
                "| {stratum} | {} | {} | {} | {choices} |\n",
                counts.total, counts.parsed, counts.correct
            ));
        }
        md.push('\n');
    }
    std::fs::write(run_dir.join("report.md"), md)?;

    let mut csv = String::new();
    if bbq_like {
        csv.push_str("method,acc,bias_headline,frontier\n");
    } else {
        csv.push_str("method,lms,ss,frontier\n");
    }
    for (method, vec) in &pareto_points {
        let on = frontier.contains(method);
        csv.push_str(&format!(
            "{method},{},{},{on}\n",
            vec.0[0].value, vec.0[1].value
        ));
    }
    std::fs::write(run_dir.join("pareto.csv"), csv)?;
    Ok(())
}

/// Recomputes `scores.json` from the persisted records (`moma score`).
pub fn rescore(run_dir: &Path) -> Result<ScoresFile, RunnerError> {
    let manifest_path = run_dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(RunnerError::Config(format!(
            "{} has no manifest.json",
            run_dir.display()
        )));
    }
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let (items, _) = load_items(&manifest.config)?;
    let records = read_records(&run_dir.join("records.jsonl"))?;
    let scores = compute_scores(&manifest.config, &records, &items);
    std::fs::write(run_dir.join("scores.json"), canonical_json(&scores)?)?;
    Ok(scores)
}

/// Re-renders `costs.json` as a table (`moma costs`).
pub fn load_costs(run_dir: &Path) -> Result<CostReport, RunnerError> {
    let path = run_dir.join("costs.json");
    if !path.is_file() {
        return Err(RunnerError::Config(format!("{} has no costs.json", run_dir.display())));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BalancingStyle;
    use sha2::{Digest, Sha256};

    fn base_config(dir: &Path) -> RunConfig {
        RunConfig {
            dataset: "synthetic".to_string(),
            synthetic_n: 4,
            methods: vec![
                MethodKind::Sp,
                MethodKind::MomaBalancing(BalancingStyle::Balancing),
            ],
            out_dir: dir.to_path_buf(),
            concurrency: 2,
            ..RunConfig::default()
        }
    }

    fn hash_file(path: &Path) -> String {
        let bytes = std::fs::read(path).unwrap();
        hex::encode(Sha256::digest(bytes))
    }

    #[test]
    fn scripted_run_has_closed_form_counts() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(&dir.path().join("run"));
        let summary = run_experiment(&config).unwrap();
        assert_eq!(summary.total_pairs, 8);
        assert_eq!(summary.unanswered, 0, "{summary:?}");
        // 4 SP calls + 4 * 3 balancing calls.
        assert_eq!(summary.logical_calls, 16);
        let records = read_records(&config.out_dir.join("records.jsonl")).unwrap();
        assert_eq!(records.len(), 8);
        assert!(config.out_dir.join("scores.json").is_file());
        assert!(config.out_dir.join("costs.json").is_file());
    }

    #[test]
    fn identical_runs_are_byte_identical_across_concurrency() {
        let dir = tempfile::tempdir().unwrap();
        let mut hashes = Vec::new();
        for (i, concurrency) in [1usize, 4, 16].iter().enumerate() {
            let mut config = base_config(&dir.path().join(format!("run{i}")));
            config.concurrency = *concurrency;
            run_experiment(&config).unwrap();
            hashes.push((
                hash_file(&config.out_dir.join("records.jsonl")),
                hash_file(&config.out_dir.join("scores.json")),
            ));
        }
        assert_eq!(hashes[0], hashes[1]);
        assert_eq!(hashes[1], hashes[2]);
    }

    #[test]
    fn resume_executes_only_missing_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(&dir.path().join("run"));
        let first = run_experiment(&config).unwrap();
        assert_eq!(first.executed_pairs, 8);

        // Drop the last three records to simulate a crash mid-run.
        let records_path = config.out_dir.join("records.jsonl");
        let text = std::fs::read_to_string(&records_path).unwrap();
        let kept: Vec<&str> = text.lines().take(5).collect();
        std::fs::write(&records_path, format!("{}\n", kept.join("\n"))).unwrap();

        let second = run_experiment(&config).unwrap();
        assert_eq!(second.executed_pairs, 3);
        assert_eq!(second.resumed_pairs, 5);
        let records = read_records(&records_path).unwrap();
        assert_eq!(records.len(), 8);
    }

    #[test]
    fn different_config_in_same_dir_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(&dir.path().join("run"));
        run_experiment(&config).unwrap();
        let mut other = config.clone();
        other.methods = vec![MethodKind::Cot];
        let err = run_experiment(&other).unwrap_err();
        assert!(matches!(err, RunnerError::Config(_)), "{err}");
        // Execution-only knobs may change freely.
        let mut retuned = config.clone();
        retuned.concurrency = 16;
        assert!(run_experiment(&retuned).is_ok());
    }

    #[test]
    fn report_renders_tables_and_pareto_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(&dir.path().join("run"));
        config.methods = vec![MethodKind::Sp, MethodKind::Cot, MethodKind::MomaMasking];
        run_experiment(&config).unwrap();
        render_report(&config.out_dir, "sp").unwrap();
        let report = std::fs::read_to_string(config.out_dir.join("report.md")).unwrap();
        assert!(report.contains("| Method | Bias Score |"), "{report}");
        assert!(report.contains("| sp |"));
        assert!(report.contains("+0.0") || report.contains("| sp | n/a"), "{report}");
        let csv = std::fs::read_to_string(config.out_dir.join("pareto.csv")).unwrap();
        assert!(csv.starts_with("method,acc,bias_headline,frontier\n"), "{csv}");
    }

    #[test]
    fn rescore_matches_run_scores() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(&dir.path().join("run"));
        run_experiment(&config).unwrap();
        let before = std::fs::read_to_string(config.out_dir.join("scores.json")).unwrap();
        rescore(&config.out_dir).unwrap();
        let after = std::fs::read_to_string(config.out_dir.join("scores.json")).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn invalid_configs_are_rejected_before_any_call() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(&dir.path().join("run"));
        config.methods.clear();
        assert!(matches!(run_experiment(&config).unwrap_err(), RunnerError::Config(_)));
        let mut config = base_config(&dir.path().join("run2"));
        config.dataset = "bbq".to_string(); // no data_path
        assert!(matches!(run_experiment(&config).unwrap_err(), RunnerError::Config(_)));
        assert!(!dir.path().join("run2").join("records.jsonl").exists());
    }

    #[test]
    fn config_toml_round_trips() {
        let config = RunConfig::default();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }
}
