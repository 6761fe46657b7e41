//! Accuracy evaluation on multiple-choice datasets and comparison reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ensure_unique_ids, McqItem};
use crate::error::{Error, Result};
use crate::policy::{featurize, greedy_action, render_response, PolicyParams};
use crate::rewards::{accuracy_reward, parse_response};

pub const UNCATEGORIZED: &str = "uncategorized";

/// Produces one response per item.
pub trait Answerer: Sync {
    fn answer(&self, item: &McqItem) -> Result<String>;
}

/// Greedy (argmax) answers from a policy.
pub struct PolicyAnswerer<'a> {
    params: &'a PolicyParams,
}

impl<'a> PolicyAnswerer<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        Self { params }
    }
}

impl Answerer for PolicyAnswerer<'_> {
    fn answer(&self, item: &McqItem) -> Result<String> {
        let features = featurize(item, self.params.feature_dim())?;
        Ok(render_response(
            greedy_action(self.params, &features)?,
            item,
        ))
    }
}

/// Previously collected responses keyed by item id.
pub struct RecordedAnswerer {
    responses: HashMap<String, String>,
}

impl RecordedAnswerer {
    pub fn new(responses: HashMap<String, String>) -> Self {
        Self { responses }
    }
}

impl Answerer for RecordedAnswerer {
    fn answer(&self, item: &McqItem) -> Result<String> {
        self.responses
            .get(&item.id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no recorded response for item {}", item.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub category: String,
    pub response: String,
    pub predicted: Option<String>,
    pub gold: String,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset_name: String,
    pub model_label: String,
    pub overall_accuracy: f64,
    #[serde(default)]
    pub per_category: BTreeMap<String, CategoryScore>,
    pub n_items: usize,
}

/// Scores every item; per-item work runs in parallel, aggregation is in input order.
pub fn evaluate<A: Answerer + ?Sized>(
    items: &[McqItem],
    answerer: &A,
    dataset_name: &str,
    model_label: &str,
) -> Result<(EvalResult, Vec<ItemOutcome>)> {
    if items.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty item list"));
    }
    ensure_unique_ids(items)?;
    let outcomes = items
        .par_iter()
        .map(|item| {
            let response = answerer.answer(item)?;
            let parsed = parse_response(&response);
            let correct = accuracy_reward(&parsed, &item.gold) == 1.0;
            Ok(ItemOutcome {
                item_id: item.id.clone(),
                category: item
                    .category
                    .clone()
                    .unwrap_or_else(|| UNCATEGORIZED.to_string()),
                response,
                predicted: parsed.answer_text,
                gold: item.gold.clone(),
                correct,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tallies: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut correct_total = 0usize;
    for o in &outcomes {
        let t = tallies.entry(o.category.clone()).or_default();
        t.1 += 1;
        if o.correct {
            t.0 += 1;
            correct_total += 1;
        }
    }
    let per_category = tallies
        .into_iter()
        .map(|(c, (k, n))| {
            (
                c,
                CategoryScore {
                    accuracy: k as f64 / n as f64,
                    n,
                },
            )
        })
        .collect();
    let result = EvalResult {
        dataset_name: dataset_name.to_string(),
        model_label: model_label.to_string(),
        overall_accuracy: correct_total as f64 / outcomes.len() as f64,
        per_category,
        n_items: outcomes.len(),
    };
    Ok((result, outcomes))
}

/// Model × dataset accuracy grid; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
    pub baseline_row: String,
}

impl ComparisonTable {
    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row][col]
    }

    /// Difference to the baseline row's cell in the same column.
    pub fn delta(&self, row: usize, col: usize) -> Option<f64> {
        Some(self.cells[row][col]? - self.cells[0][col]?)
    }
}

/// Rows: baseline first, then the other labels sorted. Columns: first-seen dataset order.
pub fn build_comparison(results: &[EvalResult], baseline: &str) -> Result<ComparisonTable> {
    if !results.iter().any(|r| r.model_label == baseline) {
        return Err(Error::invalid(format!(
            "baseline {baseline:?} not among the results"
        )));
    }
    let others: BTreeSet<&str> = results
        .iter()
        .map(|r| r.model_label.as_str())
        .filter(|l| *l != baseline)
        .collect();
    let rows: Vec<String> = std::iter::once(baseline)
        .chain(others)
        .map(str::to_string)
        .collect();
    let mut columns: Vec<String> = Vec::new();
    for r in results {
        if !columns.contains(&r.dataset_name) {
            columns.push(r.dataset_name.clone());
        }
    }
    let mut cells = vec![vec![None; columns.len()]; rows.len()];
    for r in results {
        if !(0.0..=1.0).contains(&r.overall_accuracy) {
            return Err(Error::invalid(format!(
                "accuracy {} for {}/{} is outside [0, 1]",
                r.overall_accuracy, r.model_label, r.dataset_name
            )));
        }
        let i = rows
            .iter()
            .position(|l| *l == r.model_label)
            .expect("row exists");
        let j = columns
            .iter()
            .position(|c| *c == r.dataset_name)
            .expect("column exists");
        if cells[i][j].replace(r.overall_accuracy).is_some() {
            return Err(Error::invalid(format!(
                "duplicate result for {} on {}",
                r.model_label, r.dataset_name
            )));
        }
    }
    Ok(ComparisonTable {
        rows,
        columns,
        cells,
        baseline_row: baseline.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

/// Serialized form of a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub table: ComparisonTable,
    pub results: Vec<EvalResult>,
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_delta(d: f64) -> String {
    let rounded = (d * 1e4).round() / 1e4;
    if rounded == 0.0 {
        "+0.0000".to_string()
    } else {
        format!("{rounded:+.4}")
    }
}

pub fn emit_report(
    table: &ComparisonTable,
    results: &[EvalResult],
    format: ReportFormat,
) -> Result<String> {
    match format {
        ReportFormat::Markdown => Ok(markdown(table, results)),
        ReportFormat::Csv => csv_report(table),
        ReportFormat::Json => {
            let doc = ReportDocument {
                table: table.clone(),
                results: results.to_vec(),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
    }
}

fn markdown(table: &ComparisonTable, results: &[EvalResult]) -> String {
    let mut out = String::new();
    out.push_str("# Evaluation report\n\n");
    let _ = writeln!(out, "Baseline: {}\n", table.baseline_row);
    let _ = writeln!(out, "| Model | {} |", table.columns.join(" | "));
    let _ = writeln!(out, "|:---|{}", "---:|".repeat(table.columns.len()));
    for (i, row) in table.rows.iter().enumerate() {
        let cells: Vec<String> = (0..table.columns.len())
            .map(|j| match (table.cell(i, j), i) {
                (None, _) => "-".to_string(),
                (Some(v), 0) => fmt_acc(v),
                (Some(v), _) => match table.delta(i, j) {
                    Some(d) => format!("{} ({})", fmt_acc(v), fmt_delta(d)),
                    None => fmt_acc(v),
                },
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", row, cells.join(" | "));
    }

    for dataset in &table.columns {
        let with_categories: Vec<&EvalResult> = table
            .rows
            .iter()
            .filter_map(|model| {
                results.iter().find(|r| {
                    &r.dataset_name == dataset
                        && &r.model_label == model
                        && !r.per_category.is_empty()
                })
            })
            .collect();
        if with_categories.is_empty() {
            continue;
        }
        let categories: BTreeSet<&String> = with_categories
            .iter()
            .flat_map(|r| r.per_category.keys())
            .collect();
        let _ = writeln!(out, "\n## {dataset} by category\n");
        let labels: Vec<&str> = with_categories
            .iter()
            .map(|r| r.model_label.as_str())
            .collect();
        let _ = writeln!(out, "| Category | {} |", labels.join(" | "));
        let _ = writeln!(out, "|:---|{}", "---:|".repeat(labels.len()));
        for category in categories {
            let cells: Vec<String> = with_categories
                .iter()
                .map(|r| match r.per_category.get(category) {
                    Some(s) => format!("{} (n={})", fmt_acc(s.accuracy), s.n),
                    None => "-".to_string(),
                })
                .collect();
            let _ = writeln!(out, "| {} | {} |", category, cells.join(" | "));
        }
    }
    out
}

fn csv_report(table: &ComparisonTable) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let header: Vec<&str> = std::iter::once("model")
        .chain(table.columns.iter().map(String::as_str))
        .collect();
    writer.write_record(&header).map_err(io)?;
    for (i, row) in table.rows.iter().enumerate() {
        let mut record = vec![row.clone()];
        record.extend(
            (0..table.columns.len()).map(|j| table.cell(i, j).map(fmt_acc).unwrap_or_default()),
        );
        writer.write_record(&record).map_err(io)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
