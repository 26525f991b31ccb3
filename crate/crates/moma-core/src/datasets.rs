//! Ingests BBQ and StereoSet releases, adapts them to the uniform
//! three-option QA format, and provides deterministic stratified sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::types::{
    ContextCondition, Dataset, DatasetMeta, OptionEntry, OptionTag, QAItem, QuestionPolarity,
    StereoTask,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: {msg}")]
    SchemaError { file: String, line: usize, msg: String },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("requested {want} items but only {have} are loaded")]
    NotEnoughItems { want: usize, have: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A raw line the loader refused, with its location and reason. Rejected
/// lines are reported, never silently dropped.
#[derive(Debug, Clone)]
pub struct RejectedLine {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub items: Vec<QAItem>,
    pub rejected: Vec<RejectedLine>,
}

// --- BBQ ---

/// One record of the public BBQ release schema.
#[derive(Debug, Clone, Deserialize)]
pub struct BbqRawRecord {
    pub example_id: u64,
    pub question_polarity: String,
    pub context_condition: String,
    pub category: String,
    pub answer_info: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub additional_metadata: BbqAdditionalMetadata,
    pub context: String,
    pub question: String,
    pub ans0: String,
    pub ans1: String,
    pub ans2: String,
    pub label: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct BbqAdditionalMetadata {
    #[serde(default)]
    pub stereotyped_groups: Vec<String>,
}

fn norm_group(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase()
}

fn group_matches(info: &[String], stereotyped: &[String]) -> bool {
    info.iter().any(|label| {
        let label = norm_group(label);
        stereotyped.iter().any(|g| {
            let g = norm_group(g);
            !g.is_empty() && (label == g || label.contains(&g) || g.contains(&label))
        })
    })
}

/// Adapts one raw BBQ record. Tags: `unknown` from answer_info; the option
/// naming the stereotyped group is the bias target when the question
/// polarity is negative, else the other non-unknown option is.
pub fn adapt_bbq(raw: &BbqRawRecord, id: String) -> Result<QAItem, String> {
    if raw.label > 2 {
        return Err(format!("label {} out of range", raw.label));
    }
    let texts = [&raw.ans0, &raw.ans1, &raw.ans2];
    let infos: Vec<&Vec<String>> = ["ans0", "ans1", "ans2"]
        .iter()
        .map(|k| raw.answer_info.get(*k).ok_or_else(|| format!("answer_info missing {k}")))
        .collect::<Result<_, _>>()?;

    let unknowns: Vec<usize> = (0..3)
        .filter(|&i| infos[i].iter().any(|s| norm_group(s) == "unknown"))
        .collect();
    let [unknown_idx] = unknowns.as_slice() else {
        return Err(format!("expected exactly one unknown option, found {}", unknowns.len()));
    };
    let unknown_idx = *unknown_idx;

    let named: Vec<usize> = (0..3).filter(|&i| i != unknown_idx).collect();
    let stereotyped: Vec<usize> = named
        .iter()
        .copied()
        .filter(|&i| group_matches(infos[i], &raw.additional_metadata.stereotyped_groups))
        .collect();
    let [stereotyped_idx] = stereotyped.as_slice() else {
        return Err(format!(
            "could not identify the stereotyped-group option (matched {})",
            stereotyped.len()
        ));
    };
    let other_idx = named.into_iter().find(|&i| i != *stereotyped_idx).expect("two named");

    let polarity = match raw.question_polarity.as_str() {
        "neg" => QuestionPolarity::Negative,
        "nonneg" => QuestionPolarity::Nonnegative,
        other => return Err(format!("unknown question_polarity `{other}`")),
    };
    let condition = match raw.context_condition.as_str() {
        "ambig" => ContextCondition::Ambiguous,
        "disambig" => ContextCondition::Disambiguated,
        other => return Err(format!("unknown context_condition `{other}`")),
    };

    // BBQ bias-target convention: under negative polarity the stereotyped
    // group is the target; under nonnegative polarity the other group is.
    let biased_idx = match polarity {
        QuestionPolarity::Negative => *stereotyped_idx,
        QuestionPolarity::Nonnegative => other_idx,
    };

    let options = (0..3)
        .map(|i| OptionEntry {
            index: i,
            text: texts[i].clone(),
            tag: if i == unknown_idx {
                OptionTag::Unknown
            } else if i == biased_idx {
                OptionTag::BiasedTarget
            } else {
                OptionTag::NonTarget
            },
        })
        .collect();

    Ok(QAItem {
        id,
        dataset: Dataset::Bbq,
        context: raw.context.clone(),
        question: raw.question.clone(),
        options,
        gold: Some(raw.label),
        meta: DatasetMeta::Bbq {
            context_condition: condition,
            question_polarity: polarity,
            category: raw.category.clone(),
        },
    })
}

/// Loads per-category BBQ JSON Lines files from a directory. `categories`,
/// when given, restricts loading and must name categories that exist.
pub fn load_bbq(dir: &Path, categories: Option<&[String]>) -> Result<LoadOutcome, DataError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();

    let mut outcome = LoadOutcome::default();
    let mut seen_categories: Vec<String> = Vec::new();
    for path in &files {
        let file_name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = lineno + 1;
            let raw: BbqRawRecord = match serde_json::from_str(line) {
                Ok(raw) => raw,
                Err(e) => {
                    outcome.rejected.push(RejectedLine {
                        file: file_name.clone(),
                        line: line_no,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            if !seen_categories.contains(&raw.category) {
                seen_categories.push(raw.category.clone());
            }
            if let Some(filter) = categories {
                if !filter.contains(&raw.category) {
                    continue;
                }
            }
            let id = format!("{}:{}", raw.category, raw.example_id);
            match adapt_bbq(&raw, id) {
                Ok(item) => outcome.items.push(item),
                Err(reason) => outcome.rejected.push(RejectedLine {
                    file: file_name.clone(),
                    line: line_no,
                    reason,
                }),
            }
        }
    }

    if let Some(filter) = categories {
        for wanted in filter {
            if !seen_categories.contains(wanted) {
                return Err(DataError::UnknownCategory(wanted.clone()));
            }
        }
    }
    check_unique_ids(&outcome.items)?;
    Ok(outcome)
}

// --- StereoSet ---

#[derive(Debug, Clone, Deserialize)]
pub struct StereoSetRawRecord {
    pub id: String,
    pub bias_type: String,
    pub context: String,
    pub sentences: Vec<StereoSentence>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StereoSentence {
    pub sentence: String,
    pub gold_label: String,
}

#[derive(Debug, Deserialize)]
struct StereoSetFile {
    data: StereoSetData,
}

#[derive(Debug, Deserialize)]
struct StereoSetData {
    #[serde(default)]
    intrasentence: Vec<StereoSetRawRecord>,
    #[serde(default)]
    intersentence: Vec<StereoSetRawRecord>,
}

fn stereo_tag(label: &str) -> Option<OptionTag> {
    match label {
        "stereotype" => Some(OptionTag::Stereotype),
        "anti-stereotype" => Some(OptionTag::AntiStereotype),
        "unrelated" => Some(OptionTag::Unrelated),
        _ => None,
    }
}

/// Adapts one StereoSet record: the three candidate sentences become the
/// options, tagged from their gold labels. Intrasentence candidates are the
/// context with its blank filled; intersentence candidates are
/// continuations.
pub fn adapt_stereoset(raw: &StereoSetRawRecord, task: StereoTask) -> Result<QAItem, String> {
    if raw.sentences.len() != 3 {
        return Err(format!("expected 3 sentences, found {}", raw.sentences.len()));
    }
    let mut tags = Vec::new();
    for s in &raw.sentences {
        let tag = stereo_tag(&s.gold_label)
            .ok_or_else(|| format!("unknown gold_label `{}`", s.gold_label))?;
        if tags.contains(&tag) {
            return Err(format!("duplicate gold_label `{}`", s.gold_label));
        }
        tags.push(tag);
    }
    if task == StereoTask::Intrasentence && !raw.context.contains("BLANK") {
        return Err("intrasentence context has no BLANK".to_string());
    }

    let question = match task {
        StereoTask::Intrasentence => {
            "Which word or phrase best fills the blank?".to_string()
        }
        StereoTask::Intersentence => "Which sentence most plausibly follows?".to_string(),
    };
    let options = raw
        .sentences
        .iter()
        .zip(&tags)
        .enumerate()
        .map(|(index, (s, tag))| OptionEntry { index, text: s.sentence.clone(), tag: *tag })
        .collect();

    Ok(QAItem {
        id: raw.id.clone(),
        dataset: match task {
            StereoTask::Intrasentence => Dataset::StereoSetIntra,
            StereoTask::Intersentence => Dataset::StereoSetInter,
        },
        context: raw.context.clone(),
        question,
        options,
        gold: None,
        meta: DatasetMeta::StereoSet { bias_type: raw.bias_type.clone(), task },
    })
}

/// Loads the StereoSet development JSON and adapts the requested task
/// family.
pub fn load_stereoset(path: &Path, task: StereoTask) -> Result<LoadOutcome, DataError> {
    let text = std::fs::read_to_string(path)?;
    let file: StereoSetFile = serde_json::from_str(&text).map_err(|e| DataError::SchemaError {
        file: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let records = match task {
        StereoTask::Intrasentence => &file.data.intrasentence,
        StereoTask::Intersentence => &file.data.intersentence,
    };
    let file_name = path.display().to_string();
    let mut outcome = LoadOutcome::default();
    for (i, raw) in records.iter().enumerate() {
        match adapt_stereoset(raw, task) {
            Ok(item) => outcome.items.push(item),
            Err(reason) => {
                outcome.rejected.push(RejectedLine { file: file_name.clone(), line: i + 1, reason })
            }
        }
    }
    check_unique_ids(&outcome.items)?;
    Ok(outcome)
}

fn check_unique_ids(items: &[QAItem]) -> Result<(), DataError> {
    let mut seen = std::collections::HashSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(DataError::SchemaError {
                file: "<loaded split>".to_string(),
                line: 0,
                msg: format!("duplicate item id `{}`", item.id),
            });
        }
    }
    Ok(())
}

/// Deterministic stratified subset: strata (BBQ category / StereoSet
/// bias_type) receive quotas by largest-remainder rounding; selection within
/// a stratum is a seeded draw; output keeps strata in name order and items
/// in load order.
pub fn sample_split(items: &[QAItem], n: usize, seed: u64) -> Result<Vec<QAItem>, DataError> {
    if n > items.len() {
        return Err(DataError::NotEnoughItems { want: n, have: items.len() });
    }
    if n == items.len() {
        return Ok(items.to_vec());
    }

    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        strata.entry(item.meta.stratum().to_string()).or_default().push(i);
    }

    // Largest-remainder quotas.
    let total = items.len() as f64;
    let mut quotas: Vec<(String, usize, f64)> = strata
        .iter()
        .map(|(name, members)| {
            let exact = n as f64 * members.len() as f64 / total;
            (name.clone(), exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|(_, q, _)| q).sum();
    let mut remainder = n - assigned;
    // Ties broken by stratum name order (quotas is already name-sorted).
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.partial_cmp(&quotas[a].2).unwrap().then(a.cmp(&b)));
    for idx in order {
        if remainder == 0 {
            break;
        }
        if quotas[idx].1 < strata[&quotas[idx].0].len() {
            quotas[idx].1 += 1;
            remainder -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::with_capacity(n);
    for (name, quota, _) in &quotas {
        let members = &strata[name];
        let mut picked = rand::seq::index::sample(&mut rng, members.len(), *quota).into_vec();
        picked.sort_unstable();
        selected.extend(picked.into_iter().map(|p| items[members[p]].clone()));
    }
    Ok(selected)
}
