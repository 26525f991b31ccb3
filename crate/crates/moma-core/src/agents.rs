//! The mask -> balance -> answer pipeline: masking assistant agent,
//! balancing assistant agent, task agent, and their hierarchical
//! composition. Assistant agents carry the human-values instruction;
//! the task agent answers in isolation from it.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::backend::{BackendError, Completion, GenParams, ItemCtx, Session, TokenUsage};
use crate::prompts::PromptLibrary;
use crate::types::{
    AnswerRecord, BalancingStyle, ChatMessage, MethodKind, OptionEntry, QAItem, TransformTrace,
};

/// Mask token inventory. Tokens must be pairwise distinct and must not occur
/// as substrings of one another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSymbolScheme {
    pub name: String,
    pub token_list: Vec<String>,
}

impl MaskSymbolScheme {
    /// "A_B", "C_D", ... — the default convention.
    pub fn letter_pair() -> Self {
        let token_list = (0..8)
            .map(|i| {
                let a = (b'A' + 2 * i) as char;
                let b = (b'A' + 2 * i + 1) as char;
                format!("{a}_{b}")
            })
            .collect();
        Self { name: "letter-pair".to_string(), token_list }
    }

    pub fn math_symbol() -> Self {
        Self {
            name: "math-symbol".to_string(),
            token_list: ["α", "β", "γ", "δ", "ε", "ζ", "η", "θ"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn emoji() -> Self {
        Self {
            name: "emoji".to_string(),
            token_list: ["🔵", "🟢", "🟣", "🟠", "🟡", "🟤", "🔴", "⚪"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "letter-pair" => Some(Self::letter_pair()),
            "math-symbol" => Some(Self::math_symbol()),
            "emoji" => Some(Self::emoji()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.token_list.is_empty() {
            return Err("empty token list".to_string());
        }
        for (i, a) in self.token_list.iter().enumerate() {
            for (j, b) in self.token_list.iter().enumerate() {
                if i != j && b.contains(a.as_str()) {
                    return Err(format!("token `{a}` occurs inside token `{b}`"));
                }
            }
        }
        Ok(())
    }
}

/// Forbidden-phrase list for the task-agent isolation lint.
#[derive(Debug, Clone)]
pub struct HLexicon {
    terms: Vec<String>,
    pattern: Regex,
}

impl Default for HLexicon {
    fn default() -> Self {
        Self::new(&[
            "bias",
            "biased",
            "unbiased",
            "stereotype",
            "stereotypes",
            "stereotyping",
            "fair",
            "fairly",
            "unfair",
            "fairness",
            "discrimination",
            "discriminate",
        ])
    }
}

impl HLexicon {
    pub fn new(terms: &[&str]) -> Self {
        let alternation = terms.iter().map(|t| regex::escape(t)).collect::<Vec<_>>().join("|");
        let pattern = Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).expect("lexicon pattern");
        Self { terms: terms.iter().map(|s| s.to_string()).collect(), pattern }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Distinct lexicon terms occurring in `text` as whole words.
    pub fn hits(&self, text: &str) -> Vec<String> {
        let mut found = Vec::new();
        for m in self.pattern.find_iter(text) {
            let hit = m.as_str().to_lowercase();
            if !found.contains(&hit) {
                found.push(hit);
            }
        }
        found
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("group identifier `{surface}` survived masking")]
    MaskLeak { surface: String },
    #[error("mask token `{token}` vanished during balancing")]
    MaskTokenDropped { token: String },
    #[error("expected 2 adjectives for `{token}`, got {count}")]
    AdjectiveCountMismatch { token: String, count: usize },
    #[error("balancing changed non-adjective text")]
    ContextAltered,
    #[error("agent reply does not match the expected format: {note}")]
    UnparseableAgentOutput { note: String },
    #[error("task prompt carries human-values terms: {terms:?}")]
    TaskPromptContaminated { terms: Vec<String> },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

// --- message construction (shared with the scripted-fixture generator) ---

pub fn masking_messages(
    lib: &PromptLibrary,
    scheme: &MaskSymbolScheme,
    passage: &str,
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(lib.masking_prompt(&scheme.token_list).render_system()),
        ChatMessage::user(lib.masking_user.replace("{passage}", passage)),
    ]
}

pub fn masking_corrective_messages(
    lib: &PromptLibrary,
    scheme: &MaskSymbolScheme,
    passage: &str,
    first_reply: &str,
    leaked: &str,
) -> Vec<ChatMessage> {
    let mut messages = masking_messages(lib, scheme, passage);
    messages.push(ChatMessage::assistant(first_reply));
    messages.push(ChatMessage::user(lib.masking_corrective.replace("{leaked}", leaked)));
    messages
}

pub fn balancing_messages(
    lib: &PromptLibrary,
    style: BalancingStyle,
    masked: &str,
    tokens: &[String],
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(lib.balancing_prompt(style).render_system()),
        ChatMessage::user(
            lib.balancing_user
                .replace("{masked}", masked)
                .replace("{tokens}", &tokens.join(", ")),
        ),
    ]
}

pub fn balancing_corrective_messages(
    lib: &PromptLibrary,
    style: BalancingStyle,
    masked: &str,
    tokens: &[String],
    first_reply: &str,
    dropped: &str,
) -> Vec<ChatMessage> {
    let mut messages = balancing_messages(lib, style, masked, tokens);
    messages.push(ChatMessage::assistant(first_reply));
    messages.push(ChatMessage::user(lib.balancing_corrective.replace("{dropped}", dropped)));
    messages
}

pub fn task_messages(
    lib: &PromptLibrary,
    passage: &str,
    options: &[OptionEntry],
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(lib.task_prompt().render_system()),
        ChatMessage::user(lib.render_task_user(passage, options)),
    ]
}

// --- agent reply parsing ---

fn strip_fences(reply: &str) -> String {
    reply
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn key_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\s*(MASKED|MAP|BALANCED|ADJ)\s*:\s*").expect("key line"))
}

/// Splits a structured agent reply into its keyed sections, tolerating minor
/// spacing variants and code fences.
fn split_sections(reply: &str) -> Vec<(String, String)> {
    let text = strip_fences(reply);
    let mut sections = Vec::new();
    let matches: Vec<_> = key_line().captures_iter(&text).collect();
    for (i, caps) in matches.iter().enumerate() {
        let whole = caps.get(0).unwrap();
        let key = caps.get(1).unwrap().as_str().to_uppercase();
        let start = whole.end();
        let end = matches
            .get(i + 1)
            .map(|next| next.get(0).unwrap().start())
            .unwrap_or(text.len());
        sections.push((key, text[start..end].trim().to_string()));
    }
    sections
}

fn section<'a>(sections: &'a [(String, String)], key: &str) -> Option<&'a str> {
    sections.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn parse_pair_list(value: &str) -> Vec<(String, String)> {
    value
        .split(';')
        .filter_map(|entry| {
            let (left, right) = entry.split_once('=')?;
            let left = left.trim();
            let right = right.trim();
            if left.is_empty() || right.is_empty() {
                None
            } else {
                Some((left.to_string(), right.to_string()))
            }
        })
        .collect()
}

/// Parses a `MASKED:` / `MAP:` reply into rewritten text and mask map.
pub fn parse_masking_reply(reply: &str) -> Result<(String, Vec<(String, String)>), AgentError> {
    let sections = split_sections(reply);
    let masked = section(&sections, "MASKED").ok_or_else(|| AgentError::UnparseableAgentOutput {
        note: "missing MASKED section".to_string(),
    })?;
    let map_raw = section(&sections, "MAP").ok_or_else(|| AgentError::UnparseableAgentOutput {
        note: "missing MAP section".to_string(),
    })?;
    let map = if map_raw.is_empty() || map_raw.eq_ignore_ascii_case("(none)") {
        Vec::new()
    } else {
        parse_pair_list(map_raw)
    };
    if masked.is_empty() {
        return Err(AgentError::UnparseableAgentOutput { note: "empty MASKED text".to_string() });
    }
    Ok((masked.to_string(), map))
}

/// Parses a `BALANCED:` / `ADJ:` reply into annotated text and per-token
/// adjective lists.
pub fn parse_balancing_reply(
    reply: &str,
) -> Result<(String, Vec<(String, Vec<String>)>), AgentError> {
    let sections = split_sections(reply);
    let balanced =
        section(&sections, "BALANCED").ok_or_else(|| AgentError::UnparseableAgentOutput {
            note: "missing BALANCED section".to_string(),
        })?;
    let adj_raw = section(&sections, "ADJ").ok_or_else(|| AgentError::UnparseableAgentOutput {
        note: "missing ADJ section".to_string(),
    })?;
    let adjectives = parse_pair_list(adj_raw)
        .into_iter()
        .map(|(token, list)| {
            let adjs = list
                .split(',')
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect::<Vec<_>>();
            (token, adjs)
        })
        .collect();
    if balanced.is_empty() {
        return Err(AgentError::UnparseableAgentOutput { note: "empty BALANCED text".to_string() });
    }
    Ok((balanced.to_string(), adjectives))
}

// --- validation ---

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// First surface form from the map that survives in the masked text, if any.
pub fn find_leak<'a>(masked: &str, mask_map: &'a [(String, String)]) -> Option<&'a str> {
    mask_map
        .iter()
        .map(|(surface, _)| surface.as_str())
        .find(|surface| contains_ci(masked, surface))
}

fn validate_masking(
    masked: &str,
    mask_map: &[(String, String)],
) -> Result<(), AgentError> {
    for (i, (_, a)) in mask_map.iter().enumerate() {
        for (_, b) in &mask_map[i + 1..] {
            if a == b {
                return Err(AgentError::UnparseableAgentOutput {
                    note: format!("mask token `{a}` used for two groups"),
                });
            }
        }
    }
    if let Some(surface) = find_leak(masked, mask_map) {
        return Err(AgentError::MaskLeak { surface: surface.to_string() });
    }
    for (_, token) in mask_map {
        if !masked.contains(token.as_str()) {
            return Err(AgentError::UnparseableAgentOutput {
                note: format!("mask token `{token}` missing from masked text"),
            });
        }
    }
    Ok(())
}

fn squash_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn validate_balancing(
    masked: &str,
    balanced: &str,
    mask_map: &[(String, String)],
    adjectives: &[(String, Vec<String>)],
) -> Result<(), AgentError> {
    for (_, token) in mask_map {
        if !balanced.contains(token.as_str()) {
            return Err(AgentError::MaskTokenDropped { token: token.clone() });
        }
    }
    for (_, token) in mask_map {
        let Some((_, adjs)) = adjectives.iter().find(|(t, _)| t == token) else {
            return Err(AgentError::AdjectiveCountMismatch { token: token.clone(), count: 0 });
        };
        if adjs.len() != 2 {
            return Err(AgentError::AdjectiveCountMismatch {
                token: token.clone(),
                count: adjs.len(),
            });
        }
    }
    // Token-preserving diff: removing the inserted adjective phrases must
    // recover the masked text.
    let mut stripped = balanced.to_string();
    for (token, adjs) in adjectives {
        let phrase = format!("{}, {} {token}", adjs[0], adjs[1]);
        stripped = stripped.replacen(&phrase, token, 1);
    }
    if squash_ws(&stripped) != squash_ws(masked) {
        return Err(AgentError::ContextAltered);
    }
    Ok(())
}

// --- pipeline stages ---

fn merge_usage(completions: &[&Completion]) -> (TokenUsage, u64) {
    let mut usage = TokenUsage::default();
    let mut latency = 0;
    for c in completions {
        usage.prompt_tokens += c.usage.prompt_tokens;
        usage.completion_tokens += c.usage.completion_tokens;
        latency += c.latency_ms;
    }
    (usage, latency)
}

/// Masking stage: one logical backend call (a mask-leak corrective re-ask
/// folds into the attempt count). Returns the rewritten passage and the
/// mask map, post-validated for leaks and token presence.
pub fn run_masking(
    ctx: &ItemCtx<'_>,
    passage: &str,
    scheme: &MaskSymbolScheme,
    lib: &PromptLibrary,
    params: &GenParams,
) -> Result<(String, Vec<(String, String)>, String), AgentError> {
    let messages = masking_messages(lib, scheme, passage);
    let (first, attempts1) = ctx.call_raw(&messages, params);
    let first = match first {
        Ok(c) => c,
        Err(e) => {
            ctx.log_call("mask", attempts1, TokenUsage::default(), 0);
            return Err(e.into());
        }
    };

    let outcome = parse_masking_reply(&first.text)
        .and_then(|(masked, map)| validate_masking(&masked, &map).map(|()| (masked, map)));
    match outcome {
        Ok((masked, map)) => {
            let (usage, latency) = merge_usage(&[&first]);
            ctx.log_call("mask", attempts1, usage, latency);
            Ok((masked, map, first.text))
        }
        Err(AgentError::MaskLeak { surface }) => {
            // One corrective re-ask, merged into the same logical call.
            let corrective =
                masking_corrective_messages(lib, scheme, passage, &first.text, &surface);
            let (second, attempts2) = ctx.call_raw(&corrective, params);
            let second = match second {
                Ok(c) => c,
                Err(e) => {
                    ctx.log_call("mask", attempts1 + attempts2, first.usage, first.latency_ms);
                    return Err(e.into());
                }
            };
            let (usage, latency) = merge_usage(&[&first, &second]);
            ctx.log_call("mask", attempts1 + attempts2, usage, latency);
            let (masked, map) = parse_masking_reply(&second.text)?;
            validate_masking(&masked, &map)?;
            Ok((masked, map, second.text))
        }
        Err(e) => {
            let (usage, latency) = merge_usage(&[&first]);
            ctx.log_call("mask", attempts1, usage, latency);
            Err(e)
        }
    }
}

/// Balancing stage: one logical backend call (a dropped-token corrective
/// re-ask folds into the attempt count). Requires a non-empty mask map.
pub fn run_balancing(
    ctx: &ItemCtx<'_>,
    masked: &str,
    mask_map: &[(String, String)],
    style: BalancingStyle,
    lib: &PromptLibrary,
    params: &GenParams,
) -> Result<(String, Vec<(String, Vec<String>)>, String), AgentError> {
    assert!(!mask_map.is_empty(), "balancing requires a non-empty mask map");
    let tokens: Vec<String> = mask_map.iter().map(|(_, t)| t.clone()).collect();
    let messages = balancing_messages(lib, style, masked, &tokens);
    let (first, attempts1) = ctx.call_raw(&messages, params);
    let first = match first {
        Ok(c) => c,
        Err(e) => {
            ctx.log_call("balance", attempts1, TokenUsage::default(), 0);
            return Err(e.into());
        }
    };

    let outcome = parse_balancing_reply(&first.text).and_then(|(balanced, adjectives)| {
        validate_balancing(masked, &balanced, mask_map, &adjectives)
            .map(|()| (balanced, adjectives))
    });
    match outcome {
        Ok((balanced, adjectives)) => {
            let (usage, latency) = merge_usage(&[&first]);
            ctx.log_call("balance", attempts1, usage, latency);
            Ok((balanced, adjectives, first.text))
        }
        Err(AgentError::MaskTokenDropped { token }) => {
            let corrective = balancing_corrective_messages(
                lib, style, masked, &tokens, &first.text, &token,
            );
            let (second, attempts2) = ctx.call_raw(&corrective, params);
            let second = match second {
                Ok(c) => c,
                Err(e) => {
                    ctx.log_call("balance", attempts1 + attempts2, first.usage, first.latency_ms);
                    return Err(e.into());
                }
            };
            let (usage, latency) = merge_usage(&[&first, &second]);
            ctx.log_call("balance", attempts1 + attempts2, usage, latency);
            let (balanced, adjectives) = parse_balancing_reply(&second.text)?;
            validate_balancing(masked, &balanced, mask_map, &adjectives)?;
            Ok((balanced, adjectives, second.text))
        }
        Err(e) => {
            let (usage, latency) = merge_usage(&[&first]);
            ctx.log_call("balance", attempts1, usage, latency);
            Err(e)
        }
    }
}

/// Task stage: one backend call under the given stage label. The rendered
/// system instruction must be free of human-values terms.
pub fn run_task(
    ctx: &ItemCtx<'_>,
    passage: &str,
    options: &[OptionEntry],
    lib: &PromptLibrary,
    lexicon: &HLexicon,
    params: &GenParams,
    stage: &str,
) -> Result<String, AgentError> {
    let messages = task_messages(lib, passage, options);
    let hits = lexicon.hits(&messages[0].content);
    if !hits.is_empty() {
        return Err(AgentError::TaskPromptContaminated { terms: hits });
    }
    let completion = ctx.call(stage, &messages, params)?;
    Ok(completion.text)
}

/// Rewrites option texts through the mask map (used when option masking is
/// enabled so group identifiers cannot leak through the candidates).
pub fn mask_options(options: &[OptionEntry], mask_map: &[(String, String)]) -> Vec<OptionEntry> {
    options
        .iter()
        .map(|o| {
            let mut text = o.text.clone();
            for (surface, token) in mask_map {
                // Case-insensitive replacement of every occurrence.
                let re = Regex::new(&format!(r"(?i){}", regex::escape(surface)))
                    .expect("surface pattern");
                text = re.replace_all(&text, token.as_str()).into_owned();
            }
            OptionEntry { index: o.index, text, tag: o.tag }
        })
        .collect()
}

/// Settings for the MOMA pipeline proper.
#[derive(Debug, Clone)]
pub struct MomaSettings {
    pub prompts: PromptLibrary,
    pub scheme: MaskSymbolScheme,
    pub lexicon: HLexicon,
    /// When set, option texts are rewritten through the mask map before the
    /// task prompt is rendered.
    pub mask_option_texts: bool,
}

impl Default for MomaSettings {
    fn default() -> Self {
        Self {
            prompts: PromptLibrary::default(),
            scheme: MaskSymbolScheme::letter_pair(),
            lexicon: HLexicon::default(),
            mask_option_texts: false,
        }
    }
}

/// Runs one MOMA variant end to end: masking then answering (2 calls), or
/// masking, balancing, then answering (3 calls). Stage failures yield an
/// unanswered record rather than an error.
pub fn moma_answer(
    session: &Session,
    item: &QAItem,
    method: MethodKind,
    settings: &MomaSettings,
    params: &GenParams,
) -> AnswerRecord {
    debug_assert!(method.is_moma(), "moma_answer dispatched for {method}");
    let ctx = session.for_item(method.to_string(), item.id.clone());
    let passage = item.passage();
    let mut trace = TransformTrace { original: passage.clone(), ..Default::default() };
    let mut raw_responses = Vec::new();

    let result = (|| -> Result<String, AgentError> {
        let (masked, mask_map, mask_reply) =
            run_masking(&ctx, &passage, &settings.scheme, &settings.prompts, params)?;
        raw_responses.push(mask_reply);
        trace.masked = Some(masked.clone());
        trace.mask_map = mask_map.clone();

        let final_passage = match method {
            MethodKind::MomaBalancing(style) if !mask_map.is_empty() => {
                let (balanced, adjectives, balance_reply) = run_balancing(
                    &ctx,
                    &masked,
                    &mask_map,
                    style,
                    &settings.prompts,
                    params,
                )?;
                raw_responses.push(balance_reply);
                trace.balanced = Some(balanced.clone());
                trace.adjectives = adjectives;
                trace.style = Some(style);
                balanced
            }
            // Nothing was masked, so there is nothing to balance; the task
            // runs on the (unchanged) masked passage.
            _ => masked,
        };

        let options = if settings.mask_option_texts {
            mask_options(&item.options, &mask_map)
        } else {
            item.options.clone()
        };
        let answer = run_task(
            &ctx,
            &final_passage,
            &options,
            &settings.prompts,
            &settings.lexicon,
            params,
            "task",
        )?;
        raw_responses.push(answer.clone());
        Ok(answer)
    })();

    let (parsed_choice, error) = match result {
        Ok(answer) => (crate::parse::parse_choice(&answer, &item.options).choice, None),
        Err(e) => (None, Some(e.to_string())),
    };

    AnswerRecord {
        item_id: item.id.clone(),
        method,
        raw_responses,
        parsed_choice,
        trace: Some(trace),
        calls: ctx.entries(),
        wall_time_ms: 0,
        error,
    }
}
