//! Accuracy, invocation proportions, per-slice accuracy and modeled cost
//! aggregated from routing traces.
//!
//! Invocations are counted at the backend that produced the final answer.
//! Cost is charged for every visited step, not only the final one. Time and
//! memory come from declared cost profiles, never from measurement.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::CostProfile;
use crate::dataset::{LabeledExample, Slice, SliceAssignment};
use crate::router::RoutingTrace;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("traces and dataset disagree: {0}")]
    TraceDatasetMismatch(String),
}

impl MetricsError {
    pub fn name(&self) -> &'static str {
        match self {
            MetricsError::TraceDatasetMismatch(_) => "TraceDatasetMismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendUsage {
    /// Examples whose final answer came from this backend.
    pub invocations: usize,
    /// Examples that visited this backend at all.
    pub visits: usize,
    /// `invocations / n`, in percent.
    pub proportion: f64,
    pub correct: usize,
    pub accuracy_when_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_latency_ms: f64,
    /// Largest memory footprint among visited backends.
    pub peak_memory_mb: f64,
    pub total_dollars: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    /// Accuracy when routing stops at the large model (augmented layer
    /// removed). Absent when no terminal backend was named.
    pub specific_layer_accuracy: Option<f64>,
    pub terminal: Option<String>,
    /// Backends in plan order.
    pub backend_order: Vec<String>,
    pub per_backend: BTreeMap<String, BackendUsage>,
    /// Slice name to accuracy; `None` for slices with no examples.
    pub per_slice: BTreeMap<String, Option<f64>>,
    pub cost: CostSummary,
    /// Profiles the cost figures were computed from.
    pub backend_costs: BTreeMap<String, CostProfile>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Share of examples answered by the terminal backend, in percent.
    pub fn terminal_proportion(&self) -> Option<f64> {
        let t = self.terminal.as_ref()?;
        Some(self.per_backend.get(t).map_or(0.0, |u| u.proportion))
    }

    /// Proportions rounded to two decimals, in backend order.
    pub fn rounded_proportions(&self) -> Vec<(String, f64)> {
        self.backend_order
            .iter()
            .map(|id| {
                let p = self.per_backend.get(id).map_or(0.0, |u| u.proportion);
                (id.clone(), round2(p))
            })
            .collect()
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Aggregates traces over `examples`. `costs` lists the plan's backends in
/// order; backends visited but not listed cost nothing.
pub fn compute_report(
    traces: &[RoutingTrace],
    examples: &[LabeledExample],
    slices: Option<&SliceAssignment>,
    costs: &[(String, CostProfile)],
    terminal: Option<&str>,
) -> Result<MetricsReport, MetricsError> {
    if traces.len() != examples.len() {
        return Err(MetricsError::TraceDatasetMismatch(format!(
            "{} traces for {} examples",
            traces.len(),
            examples.len()
        )));
    }
    let gold: HashMap<&str, &LabeledExample> =
        examples.iter().map(|ex| (ex.id.as_str(), ex)).collect();
    let mut seen = HashSet::new();

    let mut backend_order: Vec<String> = costs.iter().map(|(id, _)| id.clone()).collect();
    let cost_of: HashMap<&str, CostProfile> =
        costs.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    let mut per_backend: BTreeMap<String, BackendUsage> = BTreeMap::new();
    for id in &backend_order {
        per_backend.insert(id.clone(), empty_usage());
    }

    let mut slice_counts: BTreeMap<Slice, (usize, usize)> = BTreeMap::new();
    let mut cost = CostSummary::default();
    let mut correct = 0;
    let mut specific_correct = 0;

    for trace in traces {
        let ex = gold.get(trace.example_id.as_str()).ok_or_else(|| {
            MetricsError::TraceDatasetMismatch(format!(
                "trace for unknown example {:?}",
                trace.example_id
            ))
        })?;
        if !seen.insert(trace.example_id.as_str()) {
            return Err(MetricsError::TraceDatasetMismatch(format!(
                "two traces for example {:?}",
                trace.example_id
            )));
        }
        let hit = trace.final_label == ex.gold;
        correct += hit as usize;

        if let Some(t) = terminal {
            let label = trace.label_at(t).unwrap_or(trace.final_label);
            specific_correct += (label == ex.gold) as usize;
        }

        for step in &trace.steps {
            let usage = per_backend.entry(step.backend.clone()).or_insert_with(|| {
                backend_order.push(step.backend.clone());
                empty_usage()
            });
            usage.visits += 1;
            let profile = cost_of.get(step.backend.as_str()).copied().unwrap_or_default();
            cost.total_latency_ms += profile.latency_ms_per_call;
            cost.total_dollars += profile.dollars_per_1k_calls / 1000.0;
        }
        let usage = per_backend
            .get_mut(&trace.final_backend)
            .expect("final backend is a visited step");
        usage.invocations += 1;
        usage.correct += hit as usize;

        if let Some(slices) = slices {
            let entry = slice_counts.entry(slices.slice_of(ex.gold)).or_default();
            entry.0 += hit as usize;
            entry.1 += 1;
        }
    }

    let n = traces.len();
    for (id, usage) in per_backend.iter_mut() {
        usage.proportion = if n == 0 {
            0.0
        } else {
            100.0 * usage.invocations as f64 / n as f64
        };
        usage.accuracy_when_final =
            (usage.invocations > 0).then(|| usage.correct as f64 / usage.invocations as f64);
        if usage.visits > 0 {
            let mem = cost_of.get(id.as_str()).map_or(0.0, |c| c.memory_mb);
            cost.peak_memory_mb = cost.peak_memory_mb.max(mem);
        }
    }

    let per_slice = if slices.is_some() {
        Slice::ALL
            .iter()
            .map(|s| {
                let acc = slice_counts
                    .get(s)
                    .filter(|(_, total)| *total > 0)
                    .map(|(c, total)| *c as f64 / *total as f64);
                (s.as_str().to_string(), acc)
            })
            .collect()
    } else {
        BTreeMap::new()
    };

    let ratio = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(MetricsReport {
        n,
        correct,
        overall_accuracy: ratio(correct),
        specific_layer_accuracy: terminal.map(|_| ratio(specific_correct)),
        terminal: terminal.map(str::to_string),
        backend_order,
        per_backend,
        per_slice,
        cost,
        backend_costs: costs.iter().cloned().collect(),
        provenance: BTreeMap::new(),
    })
}

fn empty_usage() -> BackendUsage {
    BackendUsage {
        invocations: 0,
        visits: 0,
        proportion: 0.0,
        correct: 0,
        accuracy_when_final: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let value = serde_json::to_value(report).expect("report serialises");
            let mut out = canonical_json(&value);
            out.push('\n');
            out
        }
        ReportFormat::Markdown => render_markdown(report),
    }
}

/// JSON with sorted object keys, no whitespace and every non-integer
/// number printed with four decimals.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                let f = n.as_f64().expect("number is f64");
                let s = format!("{f:.4}");
                // avoid "-0.0000"
                out.push_str(if s == "-0.0000" { "0.0000" } else { &s });
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serialises")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key serialises"));
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// Milliseconds as `H:MM:SS`, rounded to the second.
pub fn format_duration_ms(ms: f64) -> String {
    let secs = (ms / 1000.0).round().max(0.0) as u64;
    format!("{}:{:02}:{:02}", secs / 3600, (secs / 60) % 60, secs % 60)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "## Routing report (n = {})", report.n).unwrap();
    out.push('\n');
    out.push_str("Time and memory are modeled from declared cost profiles.\n\n");
    out.push_str("| Method | Time (modeled) | Memory (modeled, MB) | Accuracy |\n");
    out.push_str("|---|---|---|---|\n");
    for id in &report.backend_order {
        let usage = &report.per_backend[id];
        writeln!(
            out,
            "| {id} | {} | {} | {} |",
            format_duration_ms(usage_latency(report, id)),
            format_mb(usage_memory(report, id)),
            usage.accuracy_when_final.map_or("—".to_string(), pct),
        )
        .unwrap();
    }
    writeln!(
        out,
        "| Overall | {} | {} | {} |",
        format_duration_ms(report.cost.total_latency_ms),
        format_mb(report.cost.peak_memory_mb),
        pct(report.overall_accuracy)
    )
    .unwrap();

    out.push_str("\n| Backend | Invocations | Proportion |\n|---|---|---|\n");
    let mut total = 0.0;
    for (id, p) in report.rounded_proportions() {
        total += p;
        writeln!(
            out,
            "| {id} | {} | {p:.2}% |",
            report.per_backend[&id].invocations
        )
        .unwrap();
    }
    writeln!(out, "| Total | {} | {:.2}% |", report.n, total).unwrap();

    if let Some(acc) = report.specific_layer_accuracy {
        writeln!(out, "\nSpecific-layer accuracy (routing stops at the large model): {}", pct(acc)).unwrap();
    }
    writeln!(out, "Modeled API cost: ${:.4}", report.cost.total_dollars).unwrap();

    if !report.per_slice.is_empty() {
        out.push_str("\n| Slice | Accuracy |\n|---|---|\n");
        for slice in Slice::ALL {
            if let Some(acc) = report.per_slice.get(slice.as_str()) {
                writeln!(
                    out,
                    "| {} | {} |",
                    slice.as_str(),
                    acc.map_or("—".to_string(), pct)
                )
                .unwrap();
            }
        }
    }
    out
}

fn format_mb(mb: f64) -> String {
    format!("{mb:.0}")
}

fn usage_latency(report: &MetricsReport, id: &str) -> f64 {
    report
        .backend_costs
        .get(id)
        .map_or(0.0, |c| c.latency_ms_per_call * report.per_backend[id].visits as f64)
}

fn usage_memory(report: &MetricsReport, id: &str) -> f64 {
    report.backend_costs.get(id).map_or(0.0, |c| c.memory_mb)
}
