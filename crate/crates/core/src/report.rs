//! Layered rendering of scored hierarchies.
//!
//! Each merge is drawn as one layer showing only the newly created cluster
//! and its score; the bottom layer lists every word with its own score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{ClusterId, Hierarchy};

/// Marker drawn between non-adjacent members of a cluster.
pub const GAP_MARKER: &str = "...";

/// Intensity buckets per sign.
pub const BUCKETS: i8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Html,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(Format::Text),
            "html" => Ok(Format::Html),
            "json" => Ok(Format::Json),
            other => Err(Error::Contract(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    /// 0 for the word layer.
    pub step: usize,
    pub cluster: ClusterId,
    pub positions: Vec<usize>,
    /// Member tokens in index order, gaps marked with [`GAP_MARKER`].
    pub rendered: String,
    pub score: f64,
    /// Signed intensity in `-BUCKETS..=BUCKETS`; positive supports the
    /// predicted class.
    pub bucket: i8,
}

/// Signed intensity of `score` relative to `scale` (the largest magnitude).
pub fn bucket(score: f64, scale: f64) -> i8 {
    if score == 0.0 || scale <= 0.0 || !score.is_finite() {
        return 0;
    }
    let level = ((score.abs() / scale) * BUCKETS as f64).ceil().clamp(1.0, BUCKETS as f64) as i8;
    if score > 0.0 {
        level
    } else {
        -level
    }
}

/// One row per word (step 0, in index order) followed by one row per merge.
pub fn layer_rows(h: &Hierarchy) -> Result<Vec<LayerRow>> {
    if !h.is_scored() {
        return Err(Error::Contract("cannot render an unscored hierarchy".into()));
    }
    let scale = h.scores.values().fold(0.0_f64, |m, s| m.max(s.abs()));
    let tokens = h.sequence.tokens();
    let row = |step: usize, cluster: ClusterId| {
        let members = h.members(cluster).expect("cluster of a checked hierarchy");
        let positions: Vec<usize> = members.iter().collect();
        let mut rendered = String::new();
        for (k, &p) in positions.iter().enumerate() {
            if k > 0 {
                rendered.push(' ');
                if p != positions[k - 1] + 1 {
                    rendered.push_str(GAP_MARKER);
                    rendered.push(' ');
                }
            }
            rendered.push_str(&tokens[p]);
        }
        let score = h.scores[&cluster];
        LayerRow {
            step,
            cluster,
            positions,
            rendered,
            score,
            bucket: bucket(score, scale),
        }
    };
    Ok(h.leaves
        .iter()
        .map(|l| row(0, l.id))
        .chain(h.steps.iter().map(|s| row(s.step, s.merged)))
        .collect())
}

pub fn render(h: &Hierarchy, format: Format) -> Result<String> {
    match format {
        Format::Text => render_text(h),
        Format::Html => render_html(h),
        Format::Json => {
            if !h.is_scored() {
                return Err(Error::Contract("cannot render an unscored hierarchy".into()));
            }
            h.to_json()
        }
    }
}

fn score_label(s: f64) -> String {
    format!("{s:+.4}")
}

/// Columns are the words in index order. Merge layers run from the last
/// merge at the top down to the first, followed by the word layer and its
/// scores.
pub fn render_text(h: &Hierarchy) -> Result<String> {
    let rows = layer_rows(h)?;
    let words: Vec<&LayerRow> = rows.iter().filter(|r| r.step == 0).collect();
    let widths: Vec<usize> = words
        .iter()
        .map(|w| w.rendered.chars().count().max(score_label(w.score).len()).max(GAP_MARKER.len()))
        .collect();
    let col = |pos: usize| words.iter().position(|w| w.positions[0] == pos).unwrap();
    let label_width = format!("step {}", h.steps.len()).len().max("scores".len());

    let mut out = String::new();
    let line = |out: &mut String, label: &str, cells: Vec<String>, tail: &str| {
        let body: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", format!("{label:<label_width$} | {} | {tail}", body.join(" ")).trim_end());
    };
    for r in rows.iter().rev().filter(|r| r.step > 0) {
        let first = col(r.positions[0]);
        let last = col(*r.positions.last().unwrap());
        let cells = (0..words.len())
            .map(|c| {
                let pos = words[c].positions[0];
                if r.positions.contains(&pos) {
                    words[c].rendered.clone()
                } else if c > first && c < last {
                    GAP_MARKER.to_owned()
                } else {
                    String::new()
                }
            })
            .collect();
        line(&mut out, &format!("step {}", r.step), cells, &score_label(r.score));
    }
    line(&mut out, "words", words.iter().map(|w| w.rendered.clone()).collect(), "");
    line(&mut out, "scores", words.iter().map(|w| score_label(w.score)).collect(), "");
    Ok(out)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn color(bucket: i8) -> String {
    if bucket == 0 {
        return "transparent".into();
    }
    let alpha = f64::from(bucket.unsigned_abs()) / f64::from(BUCKETS) * 0.8;
    if bucket > 0 {
        format!("rgba(214,39,40,{alpha:.2})")
    } else {
        format!("rgba(31,119,180,{alpha:.2})")
    }
}

/// Standalone page with inline styles: red for positive scores, blue for
/// negative, five intensities each.
pub fn render_html(h: &Hierarchy) -> Result<String> {
    let rows = layer_rows(h)?;
    let words: Vec<&LayerRow> = rows.iter().filter(|r| r.step == 0).collect();
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>hierarchical explanation</title>\n\
         <style>\nbody{font-family:sans-serif}\ntable{border-collapse:collapse}\n\
         td{padding:2px 6px;border:1px solid #ddd;text-align:center;font-family:monospace}\n\
         td.label,td.score{border:none;text-align:right;color:#555}\ntd.gap{color:#999}\n</style>\n</head>\n<body>\n",
    );
    let _ = writeln!(
        out,
        "<p>model: {} | target class: {} | method: {}</p>",
        escape(&h.provenance.model),
        h.provenance.target,
        escape(h.provenance.build.method.name())
    );
    out.push_str("<table>\n");
    for r in rows.iter().rev().filter(|r| r.step > 0) {
        let first = words.iter().position(|w| w.positions[0] == r.positions[0]).unwrap();
        let last = words.iter().position(|w| w.positions[0] == *r.positions.last().unwrap()).unwrap();
        let _ = write!(out, "<tr><td class=\"label\">step {}</td>", r.step);
        for (c, w) in words.iter().enumerate() {
            if r.positions.contains(&w.positions[0]) {
                let _ = write!(
                    out,
                    "<td style=\"background:{}\" title=\"{:+.4}\">{}</td>",
                    color(r.bucket),
                    r.score,
                    escape(&w.rendered)
                );
            } else if c > first && c < last {
                let _ = write!(out, "<td class=\"gap\">{GAP_MARKER}</td>");
            } else {
                out.push_str("<td></td>");
            }
        }
        let _ = writeln!(out, "<td class=\"score\">{:+.4}</td></tr>", r.score);
    }
    out.push_str("<tr><td class=\"label\">words</td>");
    for w in &words {
        let _ = write!(
            out,
            "<td style=\"background:{}\" title=\"{:+.4}\">{}</td>",
            color(w.bucket),
            w.score,
            escape(&w.rendered)
        );
    }
    out.push_str("<td></td></tr>\n</table>\n</body>\n</html>\n");
    Ok(out)
}
