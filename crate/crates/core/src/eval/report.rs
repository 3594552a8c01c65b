use std::fmt::Write;

use super::{format_delta, relative_delta, EvalResult};
use crate::env::TaskId;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    /// Metric value with optional standard error.
    Value {
        value: f64,
        stderr: Option<f64>,
    },
    /// Relative change; `None` renders as `-`.
    Delta(Option<f64>),
    Empty,
}

/// A rectangular result table. In markdown, the largest value among the
/// columns of each `best_groups` entry is bolded per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub best_groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn plain(cell: &Cell, csv: bool) -> String {
    match cell {
        Cell::Text(s) => s.clone(),
        Cell::Value { value, stderr } => match (csv, stderr) {
            (true, _) => format!("{value:.4}"),
            (false, Some(se)) => format!("{value:.3} ± {se:.3}"),
            (false, None) => format!("{value:.3}"),
        },
        Cell::Delta(d) => format_delta(*d),
        Cell::Empty => String::new(),
    }
}

/// Render deterministically. CSV value cells carry four decimals, and a
/// `<column>_stderr` column follows each column that has any stderr.
pub fn report(table: &Table, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            let has_se: Vec<bool> = (0..table.columns.len())
                .map(|c| {
                    table.rows.iter().any(|r| {
                        matches!(
                            r.get(c),
                            Some(Cell::Value {
                                stderr: Some(_),
                                ..
                            })
                        )
                    })
                })
                .collect();
            let mut header = Vec::new();
            for (c, name) in table.columns.iter().enumerate() {
                header.push(csv_field(name));
                if has_se[c] {
                    header.push(csv_field(&format!("{name}_stderr")));
                }
            }
            out.push_str(&header.join(","));
            out.push('\n');
            for row in &table.rows {
                let mut fields = Vec::new();
                for (c, _) in table.columns.iter().enumerate() {
                    let cell = row.get(c).unwrap_or(&Cell::Empty);
                    fields.push(csv_field(&plain(cell, true)));
                    if has_se[c] {
                        fields.push(match cell {
                            Cell::Value {
                                stderr: Some(se), ..
                            } => format!("{se:.4}"),
                            _ => String::new(),
                        });
                    }
                }
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        Format::Markdown => {
            let _ = writeln!(out, "| {} |", table.columns.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(table.columns.len()));
            for row in &table.rows {
                let mut cells: Vec<String> = (0..table.columns.len())
                    .map(|c| plain(row.get(c).unwrap_or(&Cell::Empty), false))
                    .collect();
                for group in &table.best_groups {
                    let best = group
                        .iter()
                        .filter_map(|&c| match row.get(c) {
                            Some(Cell::Value { value, .. }) => Some(*value),
                            _ => None,
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    for &c in group {
                        if let Some(Cell::Value { value, .. }) = row.get(c) {
                            if *value == best {
                                cells[c] = format!("**{}**", cells[c]);
                            }
                        }
                    }
                }
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
        }
    }
    out
}

fn value(r: &EvalResult) -> Cell {
    Cell::Value {
        value: r.value,
        stderr: Some(r.stderr),
    }
}

/// One row per labeled result: method, task, variant, metric, value, n.
pub fn eval_table(rows: &[(String, EvalResult)]) -> Table {
    Table {
        columns: ["method", "task", "variant", "metric", "value", "n"]
            .map(String::from)
            .to_vec(),
        rows: rows
            .iter()
            .map(|(m, r)| {
                vec![
                    Cell::Text(m.clone()),
                    Cell::Text(r.task.to_string()),
                    Cell::Text(r.variant.kind.to_string()),
                    Cell::Text(r.metric.as_str().to_string()),
                    value(r),
                    Cell::Text(r.n_episodes.to_string()),
                ]
            })
            .collect(),
        best_groups: Vec::new(),
    }
}

/// Per task: base, tuned and relative change, for ID and OOD.
pub fn table2(rows: &[(TaskId, EvalResult, EvalResult, EvalResult, EvalResult)]) -> Table {
    Table {
        columns: [
            "task",
            "id_base",
            "id_tuned",
            "id_delta",
            "ood_base",
            "ood_tuned",
            "ood_delta",
        ]
        .map(String::from)
        .to_vec(),
        rows: rows
            .iter()
            .map(|(t, ib, it, ob, ot)| {
                vec![
                    Cell::Text(t.to_string()),
                    value(ib),
                    value(it),
                    Cell::Delta(relative_delta(ib.value, it.value)),
                    value(ob),
                    value(ot),
                    Cell::Delta(relative_delta(ob.value, ot.value)),
                ]
            })
            .collect(),
        best_groups: vec![vec![1, 2], vec![4, 5]],
    }
}
