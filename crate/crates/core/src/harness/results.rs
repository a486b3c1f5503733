//! Per-seed result rows, their aggregation, and the published values they
//! are compared with.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// One measured value. `value` is `None` where the method does not apply
/// (feature widths differ between the UPAN and the experts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub table: String,
    pub row: String,
    pub column: String,
    pub seed: u64,
    pub value: Option<f64>,
}

impl ResultRow {
    pub fn new(table: &str, row: impl Into<String>, column: impl Into<String>, seed: u64, value: Option<f64>) -> Self {
        ResultRow {
            table: table.into(),
            row: row.into(),
            column: column.into(),
            seed,
            value,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    config_hash: String,
    build: String,
    seed: u64,
    table: String,
    row: String,
    column: String,
    value: String,
}

/// CSV text for one seed's rows; every line carries config hash and build.
pub fn rows_to_csv(rows: &[ResultRow], config_hash: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRecord {
            config_hash: config_hash.into(),
            build: BUILD_ID.into(),
            seed: r.seed,
            table: r.table.clone(),
            row: r.row.clone(),
            column: r.column.clone(),
            value: r.value.map_or_else(|| "N/A".to_string(), |v| format!("{v:.6}")),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Parses CSV written by [`rows_to_csv`]; returns the rows and config hash.
pub fn rows_from_csv(bytes: &[u8], path: &Path) -> Result<(Vec<ResultRow>, String)> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    let mut hash = String::new();
    for rec in r.deserialize::<CsvRecord>() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if hash.is_empty() {
            hash = rec.config_hash.clone();
        } else if hash != rec.config_hash {
            return Err(Error::format(path, "rows from different configs"));
        }
        let value = match rec.value.as_str() {
            "N/A" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::format(path, format!("bad value '{v}'")))?,
            ),
        };
        rows.push(ResultRow {
            table: rec.table,
            row: rec.row,
            column: rec.column,
            seed: rec.seed,
            value,
        });
    }
    Ok((rows, hash))
}

/// `reference[table].values[row][column]`; `None` inside marks a cell the
/// published table reports as not applicable.
#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceTable {
    pub source: String,
    pub values: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

pub type References = BTreeMap<String, ReferenceTable>;

pub fn references() -> References {
    serde_json::from_str(include_str!("reference.json")).expect("embedded reference values parse")
}

/// Published value for a cell: `None` if there is no such cell,
/// `Some(None)` if it is a not-applicable cell.
pub fn reference(refs: &References, table: &str, row: &str, column: &str) -> Option<Option<f64>> {
    refs.get(table)?.values.get(row)?.get(column).copied()
}

/// Mean over seeds of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub table: String,
    pub row: String,
    pub column: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Option<f64>>,
    /// `None` when any seed had no value.
    pub mean: Option<f64>,
    pub reference: Option<f64>,
    pub reference_not_applicable: bool,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config_hash: String,
    pub build: String,
    pub seeds: Vec<u64>,
    pub entries: Vec<AggregateEntry>,
}

/// Groups rows by cell (first-appearance order) and averages across seeds.
pub fn aggregate(rows: &[ResultRow], config_hash: &str) -> Aggregate {
    let refs = references();
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), Vec<(u64, Option<f64>)>> = BTreeMap::new();
    for r in rows {
        let key = (r.table.clone(), r.row.clone(), r.column.clone());
        let e = cells.entry(key.clone()).or_default();
        if e.is_empty() {
            order.push(key);
        }
        e.push((r.seed, r.value));
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let entries = order
        .into_iter()
        .map(|key| {
            let mut vals = cells.remove(&key).unwrap();
            vals.sort_by_key(|(s, _)| *s);
            let per_seed: Vec<Option<f64>> = vals.iter().map(|(_, v)| *v).collect();
            let mean = per_seed
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            let r = reference(&refs, &key.0, &key.1, &key.2);
            let reference = r.flatten();
            AggregateEntry {
                delta: mean.zip(reference).map(|(m, p)| m - p),
                reference,
                reference_not_applicable: r == Some(None),
                seeds: vals.iter().map(|(s, _)| *s).collect(),
                per_seed,
                mean,
                table: key.0,
                row: key.1,
                column: key.2,
            }
        })
        .collect();
    Aggregate {
        config_hash: config_hash.into(),
        build: BUILD_ID.into(),
        seeds,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_commas_and_na() {
        let rows = vec![
            ResultRow::new("augment", "p | 5 pass (0.1, 0.3)", "mean", 3, Some(0.25)),
            ResultRow::new("upan", "a -> b", "logits sc2", 3, None),
        ];
        let bytes = rows_to_csv(&rows, "abc").unwrap();
        let (back, hash) = rows_from_csv(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, rows);
        assert_eq!(hash, "abc");
    }

    #[test]
    fn aggregate_means_and_deltas() {
        let rows = vec![
            ResultRow::new("naive", "disjoint-mnist", "argmax", 1, Some(0.9)),
            ResultRow::new("naive", "disjoint-mnist", "argmax", 0, Some(0.95)),
            ResultRow::new("upan", "disjoint-mnist -> mnist+cifar10", "logits sc2", 0, None),
        ];
        let a = aggregate(&rows, "h");
        assert_eq!(a.seeds, vec![0, 1]);
        let e = &a.entries[0];
        assert_eq!(e.per_seed, vec![Some(0.95), Some(0.9)]);
        assert!((e.mean.unwrap() - 0.925).abs() < 1e-12);
        assert_eq!(e.reference, Some(0.9288));
        assert!((e.delta.unwrap() - (0.925 - 0.9288)).abs() < 1e-12);
        assert!(a.entries[1].reference_not_applicable);
        assert_eq!(a.entries[1].mean, None);
    }

    #[test]
    fn embedded_references_cover_every_table() {
        let r = references();
        for t in ["experts", "naive", "augment", "pan", "sc1", "upan"] {
            assert!(r.contains_key(t), "{t}");
        }
        assert_eq!(reference(&r, "upan", "mnist+cifar10 -> fashion+kmnist", "stats sc2"), Some(Some(0.8204)));
        assert_eq!(r["augment"].values.len(), 20);
    }
}
