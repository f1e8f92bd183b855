use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{ModelRequest, StageTag, Usage};

/// Per-stage usage counters. Totals are exact integer sums.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub stages: BTreeMap<StageTag, Usage>,
}

impl UsageLedger {
    pub fn record(&mut self, stage: StageTag, usage: &Usage) {
        if usage.is_zero() {
            return;
        }
        *self.stages.entry(stage).or_default() += *usage;
    }

    pub fn total(&self) -> Usage {
        self.stages.values().fold(Usage::default(), |acc, u| acc + *u)
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (stage, usage) in &other.stages {
            self.record(*stage, usage);
        }
    }

    pub fn stage(&self, stage: StageTag) -> Usage {
        self.stages.get(&stage).copied().unwrap_or_default()
    }

    /// Human-readable table, one row per stage plus a total.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>7} {:>12} {:>12} {:>12}\n",
            "stage", "calls", "input", "output", "cost_usd"
        );
        let row = |name: &str, u: &Usage| {
            format!(
                "{:<20} {:>7} {:>12} {:>12} {:>12.6}\n",
                name,
                u.calls,
                u.input_units,
                u.output_units,
                u.cost_usd()
            )
        };
        for (stage, u) in &self.stages {
            out.push_str(&row(stage.as_str(), u));
        }
        out.push_str(&row("total", &self.total()));
        out
    }
}

/// Adds one response's usage to a ledger.
pub fn record_usage(stage: StageTag, usage: &Usage, mut ledger: UsageLedger) -> UsageLedger {
    ledger.record(stage, usage);
    ledger
}

/// USD per million input/output units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl PriceTable {
    /// Cost in nano-dollars; unknown models are free.
    pub fn cost_nanos(&self, model: &str, input_units: u64, output_units: u64) -> u64 {
        match self.0.get(model) {
            Some(p) => {
                // $/Mtok * tokens * 1e9 / 1e6 = nano-dollars
                let nanos = input_units as f64 * p.input_per_mtok * 1e3 + output_units as f64 * p.output_per_mtok * 1e3;
                nanos.round() as u64
            }
            None => 0,
        }
    }
}

/// Unit counts used when a backend does not report usage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UsageEstimate {
    pub chars_per_unit: u64,
    pub units_per_image: u64,
}

impl Default for UsageEstimate {
    fn default() -> Self {
        Self {
            chars_per_unit: 4,
            units_per_image: 258,
        }
    }
}

impl UsageEstimate {
    pub fn text_units(&self, chars: usize) -> u64 {
        (chars as u64).div_ceil(self.chars_per_unit.max(1))
    }

    pub fn input_units(&self, req: &ModelRequest) -> u64 {
        self.text_units(req.text_chars()) + req.image_count() as u64 * self.units_per_image
    }
}
