use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CompletionResult;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub calls: u64,
    pub cached_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Estimated cost of every call, cached ones included at their stored price.
    pub estimated_cost: f64,
    /// Cost actually incurred by this run; cached calls add nothing.
    pub marginal_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_model: BTreeMap<String, ModelCost>,
    pub total_marginal_cost: f64,
}

impl CostReport {
    pub fn is_empty(&self) -> bool {
        self.per_model.is_empty()
    }
}

pub fn cost_ledger<'a, I>(results: I) -> CostReport
where
    I: IntoIterator<Item = &'a CompletionResult>,
{
    let mut report = CostReport::default();
    for r in results {
        let entry = report.per_model.entry(r.model_id.clone()).or_default();
        entry.calls += 1;
        entry.input_tokens += r.token_usage.input;
        entry.output_tokens += r.token_usage.output;
        entry.estimated_cost += r.cost_estimate;
        if r.cached {
            entry.cached_calls += 1;
        } else {
            entry.marginal_cost += r.cost_estimate;
        }
    }
    report.total_marginal_cost = report.per_model.values().map(|m| m.marginal_cost).sum();
    report
}
