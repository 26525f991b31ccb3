//! Deterministic replay backend. Two modes: fingerprint-keyed (catches
//! prompt-template regressions) and ordered-queue (respond in sequence
//! regardless of content, for coarse tests).

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    fingerprint, Backend, BackendError, Completion, GenParams, RequestFingerprint, TokenUsage,
};
use crate::types::ChatMessage;

/// One canned outcome: a reply or a transient/terminal failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptReply {
    Text(String),
    RateLimited,
    Timeout,
    Http(u16),
    Malformed,
}

impl ScriptReply {
    fn code(&self) -> Option<String> {
        match self {
            ScriptReply::Text(_) => None,
            ScriptReply::RateLimited => Some("rate-limited".to_string()),
            ScriptReply::Timeout => Some("timeout".to_string()),
            ScriptReply::Http(status) => Some(format!("http-{status}")),
            ScriptReply::Malformed => Some("malformed".to_string()),
        }
    }

    fn from_code(code: &str) -> Option<Self> {
        match code {
            "rate-limited" => Some(ScriptReply::RateLimited),
            "timeout" => Some(ScriptReply::Timeout),
            "malformed" => Some(ScriptReply::Malformed),
            _ => code.strip_prefix("http-")?.parse().ok().map(ScriptReply::Http),
        }
    }
}

/// Serialized script line: keyed by fingerprint or by sequence position.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptLine {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    seq: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    note: Option<String>,
}

#[derive(Debug, Default)]
struct State {
    keyed: HashMap<String, VecDeque<ScriptReply>>,
    queue: VecDeque<ScriptReply>,
}

/// Replay backend. Usage is synthesized as ceil(chars/4) on both sides so
/// cost-ratio tests see order-of-magnitude-correct token counts.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<State>,
    ordered: bool,
}

fn synth_tokens(chars: usize) -> u64 {
    ((chars + 3) / 4) as u64
}

impl ScriptedBackend {
    /// Fingerprint-keyed mode.
    pub fn keyed() -> Self {
        Self { state: Mutex::default(), ordered: false }
    }

    /// Ordered-queue mode: replies are served in push order.
    pub fn ordered() -> Self {
        Self { state: Mutex::default(), ordered: true }
    }

    /// Registers a reply for the request built from `messages` + `params`.
    /// Multiple replies for one fingerprint are consumed in order; the last
    /// one is sticky and repeats forever, so identical requests keep getting
    /// identical completions once the failure prefix is drained.
    pub fn stub(&self, messages: &[ChatMessage], params: &GenParams, reply: ScriptReply) {
        self.stub_digest(&fingerprint(messages, params), reply);
    }

    pub fn stub_text(&self, messages: &[ChatMessage], params: &GenParams, text: &str) {
        self.stub(messages, params, ScriptReply::Text(text.to_string()));
    }

    pub fn stub_digest(&self, digest: &RequestFingerprint, reply: ScriptReply) {
        let mut state = self.state.lock().expect("script state poisoned");
        state.keyed.entry(digest.0.clone()).or_default().push_back(reply);
    }

    /// Ordered-mode push.
    pub fn push(&self, reply: ScriptReply) {
        let mut state = self.state.lock().expect("script state poisoned");
        state.queue.push_back(reply);
    }

    pub fn push_text(&self, text: &str) {
        self.push(ScriptReply::Text(text.to_string()));
    }

    /// Loads a JSON Lines script file. Lines with a `fingerprint` key load a
    /// keyed backend; lines with `seq` load an ordered one (sorted by seq).
    pub fn from_script_file(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut keyed_lines: Vec<(String, ScriptReply)> = Vec::new();
        let mut seq_lines: Vec<(u64, ScriptReply)> = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("script line {}: {e}", lineno + 1),
                )
            })?;
            let reply = match (&parsed.response, &parsed.error) {
                (Some(text), None) => ScriptReply::Text(text.clone()),
                (None, Some(code)) => ScriptReply::from_code(code).ok_or_else(|| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("script line {}: unknown error code `{code}`", lineno + 1),
                    )
                })?,
                _ => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("script line {}: need exactly one of response/error", lineno + 1),
                    ))
                }
            };
            match (parsed.fingerprint, parsed.seq) {
                (Some(fp), None) => keyed_lines.push((fp, reply)),
                (None, Some(seq)) => seq_lines.push((seq, reply)),
                _ => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("script line {}: need exactly one of fingerprint/seq", lineno + 1),
                    ))
                }
            }
        }
        if !keyed_lines.is_empty() && !seq_lines.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "script mixes fingerprint and seq lines",
            ));
        }
        if seq_lines.is_empty() {
            let backend = ScriptedBackend::keyed();
            for (fp, reply) in keyed_lines {
                backend.stub_digest(&RequestFingerprint(fp), reply);
            }
            Ok(backend)
        } else {
            seq_lines.sort_by_key(|(seq, _)| *seq);
            let backend = ScriptedBackend::ordered();
            for (_, reply) in seq_lines {
                backend.push(reply);
            }
            Ok(backend)
        }
    }

    /// Writes the keyed script to a JSON Lines file, one reply per line.
    pub fn write_script_file(&self, path: &Path) -> std::io::Result<()> {
        let state = self.state.lock().expect("script state poisoned");
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut digests: Vec<&String> = state.keyed.keys().collect();
        digests.sort();
        for digest in digests {
            for reply in &state.keyed[digest] {
                let line = ScriptLine {
                    fingerprint: Some(digest.clone()),
                    seq: None,
                    response: match reply {
                        ScriptReply::Text(t) => Some(t.clone()),
                        _ => None,
                    },
                    error: reply.code(),
                    note: None,
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    }

    fn serve(&self, reply: ScriptReply, prompt_chars: usize) -> Result<Completion, BackendError> {
        match reply {
            ScriptReply::Text(text) => {
                let usage = TokenUsage {
                    prompt_tokens: synth_tokens(prompt_chars),
                    completion_tokens: synth_tokens(text.chars().count()),
                };
                Ok(Completion { text, usage, latency_ms: 0 })
            }
            ScriptReply::RateLimited => Err(BackendError::RateLimited { retry_after_ms: None }),
            ScriptReply::Timeout => Err(BackendError::Timeout),
            ScriptReply::Http(status) => Err(BackendError::HttpError { status }),
            ScriptReply::Malformed => Err(BackendError::MalformedResponse("scripted".into())),
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> Result<Completion, BackendError> {
        let prompt_chars: usize = messages.iter().map(|m| m.content.chars().count()).sum();
        let reply = {
            let mut state = self.state.lock().expect("script state poisoned");
            if self.ordered {
                state
                    .queue
                    .pop_front()
                    .ok_or_else(|| BackendError::ScriptMiss("<queue exhausted>".to_string()))?
            } else {
                let digest = fingerprint(messages, params);
                let deque = state
                    .keyed
                    .get_mut(&digest.0)
                    .ok_or_else(|| BackendError::ScriptMiss(digest.0.clone()))?;
                if deque.len() > 1 {
                    deque.pop_front().expect("non-empty deque")
                } else {
                    deque.front().cloned().ok_or(BackendError::ScriptMiss(digest.0))?
                }
            }
        };
        self.serve(reply, prompt_chars)
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
