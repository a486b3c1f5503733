use std::fmt::Write as _;

use super::results::{Aggregate, AggregateEntry};

/// Column keys and headings of each report table, in display order.
pub const LAYOUTS: &[(&str, &str, &str, &[&str])] = &[
    ("experts", "Expert accuracy on own test set", "Dataset", &["accuracy"]),
    (
        "naive",
        "Naive concatenation",
        "Problem",
        &["argmax", "std", "ratio", "overall-ratio", "q3diff", "ideal-target"],
    ),
    ("augment", "Multi-pass augmentation", "Problem | Augmentation", &["mean", "vote"]),
    ("pan", "PAN attribution accuracy", "Problem | Positive dataset", &["logits", "finalfc", "stats"]),
    ("sc1", "SC1 coordinator accuracy", "Problem", &["logits", "finalfc", "stats"]),
    (
        "upan",
        "UPAN attribution / SC2 accuracy",
        "Trained on -> tested on",
        &["logits attribution", "logits sc2", "stats attribution", "stats sc2"],
    ),
    (
        "fpan",
        "Fast PAN routing",
        "Problem",
        &["agreement", "routing", "sc2 routing"],
    ),
];

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), |v| format!("{v:.4}"))
}

fn cell(e: Option<&AggregateEntry>) -> [String; 3] {
    let Some(e) = e else {
        return [String::new(), String::new(), String::new()];
    };
    let reference = if e.reference_not_applicable {
        "N/A".into()
    } else {
        e.reference.map(|r| format!("{r:.4}")).unwrap_or_default()
    };
    let delta = e.delta.map(|d| format!("{d:+.4}")).unwrap_or_default();
    [fmt_value(e.mean), reference, delta]
}

/// Markdown for one table: each column is followed by its reference value
/// and the difference (measured minus reference).
pub fn render_table(agg: &Aggregate, table: &str, heading: &str, row_header: &str, columns: &[&str]) -> Option<String> {
    let entries: Vec<&AggregateEntry> = agg.entries.iter().filter(|e| e.table == table).collect();
    if entries.is_empty() {
        return None;
    }
    let mut rows: Vec<&str> = Vec::new();
    for e in &entries {
        if !rows.contains(&e.row.as_str()) {
            rows.push(&e.row);
        }
    }
    let mut out = format!("## {heading}\n\n| {row_header} |");
    for c in columns {
        write!(out, " {c} | reference | delta |").unwrap();
    }
    // row keys such as `problem | preset` span several cells
    let key_cells = row_header.split('|').count();
    out.push_str("\n|");
    out.push_str(&"---|".repeat(key_cells));
    out.push_str(&"---:|".repeat(columns.len() * 3));
    out.push('\n');
    for r in rows {
        write!(out, "| {r} |").unwrap();
        for c in columns {
            let e = entries.iter().find(|e| e.row == r && e.column == *c).copied();
            for s in cell(e) {
                write!(out, " {s} |").unwrap();
            }
        }
        out.push('\n');
    }
    Some(out)
}

pub fn render_report(agg: &Aggregate) -> String {
    let seeds: Vec<String> = agg.seeds.iter().map(u64::to_string).collect();
    let mut out = format!(
        "# Gating results\n\nconfig hash: `{}`  \nbuild: `{}`  \nseeds: {}\n\n\
         Values are means over seeds. `reference` holds the published figure where one exists; \
         `delta` is measured minus reference. N/A marks combinations rejected because \
         feature widths differ.\n",
        agg.config_hash,
        agg.build,
        seeds.join(", ")
    );
    for (table, heading, row_header, columns) in LAYOUTS {
        if let Some(t) = render_table(agg, table, heading, row_header, columns) {
            out.push('\n');
            out.push_str(&t);
        }
    }
    out
}
