//! Text, CSV and Vega-Lite renderings of analysis results.

use serde_json::{json, Value};

use super::{
    Correlation, CorrelationPoint, OverconfidenceProfile, ParallelReport, RankDelta, RankTable,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => fmt_score(*v),
            Cell::Int(i) => i.to_string(),
        }
    }

    fn raw(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => v.to_string(),
            Cell::Int(i) => i.to_string(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

/// Two significant digits in scientific notation below 0.01, four decimals
/// otherwise.
pub fn fmt_score(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    /// Space-aligned columns; the first column is left-aligned, the rest right.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Cell::text).collect())
            .collect();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                if i < widths.len() {
                    widths[i] = widths[i].max(c.chars().count());
                }
            }
        }
        let line = |row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let w = widths.get(i).copied().unwrap_or(0);
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    /// Full-precision CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::raw)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

pub fn rank_table(t: &RankTable) -> Table {
    let mut out = Table::new(&["model_id", "acc1", "acc5", "acc10", "rank"]);
    for r in &t.rows {
        out.push(vec![
            r.model_id.as_str().into(),
            r.acc1.into(),
            r.acc5.into(),
            r.acc10.into(),
            r.rank.into(),
        ]);
    }
    out
}

pub fn rank_delta_table(deltas: &[RankDelta]) -> Table {
    let mut out = Table::new(&["model_id", "rank_a", "rank_b", "delta"]);
    for d in deltas {
        out.push(vec![
            d.model_id.as_str().into(),
            d.rank_a.into(),
            d.rank_b.into(),
            d.delta.into(),
        ]);
    }
    out
}

pub fn parallel_table(rep: &ParallelReport) -> Table {
    let mut out = Table::new(&[
        "model_id", "tf_acc1", "tb_acc1", "d_acc1", "tf_acc5", "tb_acc5", "d_acc5", "tf_acc10",
        "tb_acc10", "d_acc10",
    ]);
    let mut row = |name: String, tf: &crate::domain::Accuracy, tb: &crate::domain::Accuracy, d: &crate::domain::Accuracy| {
        out.push(vec![
            name.into(),
            tf.acc1.into(),
            tb.acc1.into(),
            d.acc1.into(),
            tf.acc5.into(),
            tb.acc5.into(),
            d.acc5.into(),
            tf.acc10.into(),
            tb.acc10.into(),
            d.acc10.into(),
        ]);
    };
    for r in &rep.rows {
        let name = if rep.largest_drop.as_deref() == Some(r.model_id.as_str()) {
            format!("{} *", r.model_id)
        } else {
            r.model_id.clone()
        };
        row(name, &r.template_free, &r.template_based, &r.delta);
    }
    row(
        "Average".into(),
        &rep.average_template_free,
        &rep.average_template_based,
        &rep.average_delta,
    );
    out
}

pub fn overconfidence_table(p: &OverconfidenceProfile) -> Table {
    let mut out = Table::new(&["entity", "pct_of_prompts"]);
    for e in &p.top_entities {
        out.push(vec![e.entity.as_str().into(), e.pct_of_prompts.into()]);
    }
    out
}

pub fn correlation_table(points: &[CorrelationPoint]) -> Table {
    let mut out = Table::new(&["label", "mean_acc1", "mean_ppl"]);
    for p in points {
        out.push(vec![p.label.as_str().into(), p.mean_acc1.into(), p.mean_ppl.into()]);
    }
    out
}

/// Scatter of mean Acc@1 against mean perplexity.
pub fn scatter_spec(title: &str, points: &[CorrelationPoint], corr: Option<&Correlation>) -> Value {
    let subtitle = corr
        .map(|c| format!("Pearson r = {:.3}, p = {:.3}, n = {}", c.pearson_r, c.p_value, c.n))
        .unwrap_or_default();
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": {"text": title, "subtitle": subtitle},
        "data": {"values": points},
        "mark": {"type": "point", "tooltip": true},
        "encoding": {
            "x": {"field": "mean_ppl", "type": "quantitative", "title": "mean pseudo-perplexity"},
            "y": {"field": "mean_acc1", "type": "quantitative", "title": "mean Acc@1"},
            "text": {"field": "label"}
        }
    })
}

/// Bar chart of the most frequent top-10 entities.
pub fn overconfidence_spec(p: &OverconfidenceProfile) -> Value {
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": format!("{} on {}: top-10 entity frequency", p.model_id, p.dataset),
        "data": {"values": p.top_entities},
        "mark": "bar",
        "encoding": {
            "x": {"field": "entity", "type": "nominal", "sort": "-y"},
            "y": {"field": "pct_of_prompts", "type": "quantitative", "axis": {"format": "%"}}
        }
    })
}
