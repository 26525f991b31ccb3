//! Call and token bookkeeping: the shared call log sink and the cost report
//! splitting spend into generation and overall fees, with ratios against CoT.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One logical model call. Backend-level retries fold into `attempts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEntry {
    pub method: String,
    pub item_id: String,
    pub stage: String,
    pub attempts: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Append-only, totally ordered sink for call entries. The single
/// synchronized mutable structure shared across workers.
#[derive(Debug, Default)]
pub struct CallLog {
    entries: Mutex<Vec<CallEntry>>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its sequence number.
    pub fn append(&self, entry: CallEntry) -> u64 {
        let mut entries = self.entries.lock().expect("call log poisoned");
        entries.push(entry);
        (entries.len() - 1) as u64
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<CallEntry> {
        self.entries.lock().expect("call log poisoned").clone()
    }
}

/// Per-1k-token prices for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub prompt_price_per_1k: f64,
    pub completion_price_per_1k: f64,
}

impl Default for PriceTable {
    fn default() -> Self {
        // gpt-3.5-turbo-0125 list prices; override in config when they drift.
        Self { prompt_price_per_1k: 0.0005, completion_price_per_1k: 0.0015 }
    }
}

/// Aggregated spend for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCost {
    pub logical_calls: u64,
    pub attempts: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Completion-side spend only.
    pub generation_cost: f64,
    /// Prompt plus completion spend.
    pub overall_cost: f64,
}

/// Cost breakdown across methods, optionally with overall-cost ratios vs CoT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_method: BTreeMap<String, MethodCost>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratios_vs_cot: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("reference method `{0}` has no call entries")]
    MissingReferenceMethod(String),
    #[error("cost aggregation over an empty call log")]
    EmptyLog,
}

/// Aggregates a call log into per-method costs. When `with_ratios` is set,
/// overall costs are expressed relative to the `cot` method, which must be
/// present in the log.
pub fn aggregate_costs(
    entries: &[CallEntry],
    prices: &PriceTable,
    with_ratios: bool,
) -> Result<CostReport, CostError> {
    if entries.is_empty() {
        return Err(CostError::EmptyLog);
    }

    let mut per_method: BTreeMap<String, MethodCost> = BTreeMap::new();
    for e in entries {
        let slot = per_method.entry(e.method.clone()).or_insert(MethodCost {
            logical_calls: 0,
            attempts: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
            generation_cost: 0.0,
            overall_cost: 0.0,
        });
        slot.logical_calls += 1;
        slot.attempts += u64::from(e.attempts);
        slot.prompt_tokens += e.prompt_tokens;
        slot.completion_tokens += e.completion_tokens;
    }
    for cost in per_method.values_mut() {
        cost.generation_cost =
            cost.completion_tokens as f64 / 1000.0 * prices.completion_price_per_1k;
        cost.overall_cost =
            cost.generation_cost + cost.prompt_tokens as f64 / 1000.0 * prices.prompt_price_per_1k;
    }

    let ratios_vs_cot = if with_ratios {
        let reference = per_method
            .get("cot")
            .ok_or_else(|| CostError::MissingReferenceMethod("cot".to_string()))?
            .overall_cost;
        Some(
            per_method
                .iter()
                .map(|(name, cost)| (name.clone(), cost.overall_cost / reference))
                .collect(),
        )
    } else {
        None
    };

    Ok(CostReport { per_method, ratios_vs_cot })
}
