use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::{ExperimentConfig, Method};
use super::report::render_report;
use super::results::{aggregate, rows_from_csv, rows_to_csv, Aggregate, ResultRow, BUILD_ID};
use super::session::Session;
use crate::data::{DataCatalog, DatasetRef};
use crate::error::{Error, Result};

pub fn catalog_for(config: &ExperimentConfig) -> DataCatalog {
    DataCatalog::new(config.data_dir.clone())
        .with_limit(config.limit)
        .with_synthetic_sizes(config.synthetic_sizes.0, config.synthetic_sizes.1)
}

/// Every dataset the configured methods will touch.
pub fn required_datasets(config: &ExperimentConfig) -> Vec<DatasetRef> {
    let mut out: Vec<DatasetRef> = Vec::new();
    let mut add = |r: &DatasetRef| {
        if !out.contains(r) {
            out.push(r.clone());
        }
    };
    for p in &config.problems {
        p.experts.iter().for_each(&mut add);
    }
    if config.methods.contains(&Method::Sc2) {
        for t in &config.transfers {
            for name in [&t.train, &t.test] {
                if let Ok(p) = config.problem(name) {
                    p.experts.iter().for_each(&mut add);
                }
            }
        }
    }
    out
}

fn na_or<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::IncompatibleFeatures(msg)) => {
            log::info!("{msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs every configured method for one seed.
pub fn run_seed(config: &ExperimentConfig, catalog: &DataCatalog, seed: u64) -> Result<Vec<ResultRow>> {
    let mut s = Session::new(config, catalog, seed);
    let mut rows = Vec::new();
    let has = |m| config.methods.contains(&m);

    let datasets = required_datasets(config);
    for r in &datasets {
        s.expert(r)?;
    }
    if has(Method::Experts) {
        for r in &datasets {
            let acc = s.expert_accuracy(r)?;
            log::info!("seed {seed}: expert {r} accuracy {acc:.4}");
            rows.push(ResultRow::new("experts", r.to_string(), "accuracy", seed, Some(acc)));
        }
    }
    for p in &config.problems {
        if has(Method::Naive) {
            for &stat in &config.statistics {
                let r = s.naive(p, stat)?;
                log::info!("seed {seed}: {} naive {stat} {:.4}", p.name, r.accuracy);
                rows.push(ResultRow::new("naive", &p.name, stat.name(), seed, Some(r.accuracy)));
            }
            let ideal = s.ideal_target(p)?;
            rows.push(ResultRow::new("naive", &p.name, "ideal-target", seed, Some(ideal)));
        }
        if has(Method::Augment) {
            for preset in &config.augmentations {
                let (mean, vote) = s.augment(p, preset)?;
                log::info!(
                    "seed {seed}: {} {} mean {:.4} vote {:.4}",
                    p.name,
                    preset.name,
                    mean.accuracy,
                    vote.accuracy
                );
                let row = format!("{} | {}", p.name, preset.name);
                rows.push(ResultRow::new("augment", &row, "mean", seed, Some(mean.accuracy)));
                rows.push(ResultRow::new("augment", &row, "vote", seed, Some(vote.accuracy)));
            }
        }
        if has(Method::Sc1) {
            for &kind in &config.pan_features {
                let out = s.sc1(p, kind)?;
                for (e, acc) in p.experts.iter().zip(&out.attribution) {
                    rows.push(ResultRow::new("pan", format!("{} | {e}", p.name), kind.name(), seed, Some(*acc)));
                }
                log::info!(
                    "seed {seed}: {} SC1 {kind} {:.4} ({} exclusive, {} fallback)",
                    p.name,
                    out.coordinator.gating.accuracy,
                    out.coordinator.exclusive,
                    out.coordinator.fallback
                );
                rows.push(ResultRow::new("sc1", &p.name, kind.name(), seed, Some(out.coordinator.gating.accuracy)));
            }
        }
    }
    if has(Method::Sc2) {
        for t in &config.transfers {
            let train = config.problem(&t.train)?;
            let test = config.problem(&t.test)?;
            let row = format!("{} -> {}", t.train, t.test);
            for &kind in &config.upan_features {
                let outcome = match na_or(s.upan(train, kind))? {
                    Some(u) => na_or(s.evaluate_upan(&u, test))?,
                    None => None,
                };
                let (attr, sc2) = match &outcome {
                    Some(o) => (Some(o.attribution), Some(o.sc2.gating.accuracy)),
                    None => (None, None),
                };
                let show = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"));
                log::info!("seed {seed}: UPAN {row} {kind} attribution {} SC2 {}", show(attr), show(sc2));
                rows.push(ResultRow::new("upan", &row, format!("{kind} attribution"), seed, attr));
                rows.push(ResultRow::new("upan", &row, format!("{kind} sc2"), seed, sc2));
            }
        }
    }
    if has(Method::Fpan) {
        for p in &config.problems {
            let o = s.fpan(p)?;
            log::info!(
                "seed {seed}: {} FPAN agreement {:.4} routing {:.4} (SC2 {:.4})",
                p.name,
                o.agreement,
                o.routing,
                o.sc2_routing
            );
            rows.push(ResultRow::new("fpan", &p.name, "agreement", seed, Some(o.agreement)));
            rows.push(ResultRow::new("fpan", &p.name, "routing", seed, Some(o.routing)));
            rows.push(ResultRow::new("fpan", &p.name, "sc2 routing", seed, Some(o.sc2_routing)));
        }
    }
    Ok(rows)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn seed_csv_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join("per-seed").join(format!("seed-{seed}.csv"))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    pub aggregate: Aggregate,
}

/// Trains, gates and reports for every seed, writing
/// `per-seed/seed-N.csv`, `aggregate.json`, `report.md` and `config.json`
/// under the output directory. Wall-clock times go to `metadata.json` so
/// the other files are identical across reruns of the same config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let started = unix_now();
    let catalog = catalog_for(config);
    let required = required_datasets(config);
    let tags: Vec<&str> = required.iter().map(|r| r.tag.as_str()).collect();
    catalog.check_available(&tags)?;
    let hash = config.hash();

    let mut per_seed: Vec<(u64, Result<Vec<ResultRow>>)> = Vec::new();
    for chunk in config.seeds.chunks(config.workers) {
        let results: Vec<(u64, Result<Vec<ResultRow>>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let catalog = &catalog;
                    (seed, scope.spawn(move || run_seed(config, catalog, seed)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(seed, h)| (seed, h.join().expect("seed worker panicked")))
                .collect()
        });
        per_seed.extend(results);
    }
    let mut rows = Vec::new();
    for (seed, r) in per_seed {
        let r = r?;
        write(&seed_csv_path(&config.out_dir, seed), &rows_to_csv(&r, &hash)?)?;
        rows.extend(r);
    }
    write(&config.out_dir.join("config.json"), &serde_json::to_vec_pretty(config)?)?;
    let aggregate = write_report(&config.out_dir)?;
    let metadata = serde_json::json!({
        "config_hash": hash,
        "build": BUILD_ID,
        "started_unix": started,
        "finished_unix": unix_now(),
    });
    write(&config.out_dir.join("metadata.json"), &serde_json::to_vec_pretty(&metadata)?)?;
    Ok(RunOutcome { rows, aggregate })
}

/// Rebuilds `aggregate.json` and `report.md` from the per-seed CSV files.
pub fn write_report(out_dir: &Path) -> Result<Aggregate> {
    let dir = out_dir.join("per-seed");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(&dir, "no per-seed result files"));
    }
    let mut rows = Vec::new();
    let mut hash: Option<String> = None;
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        let (r, h) = rows_from_csv(&bytes, f)?;
        match &hash {
            Some(prev) if !h.is_empty() && *prev != h => {
                return Err(Error::format(f, format!("config hash {h} differs from {prev}")));
            }
            None if !h.is_empty() => hash = Some(h),
            _ => {}
        }
        rows.extend(r);
    }
    let agg = aggregate(&rows, hash.as_deref().unwrap_or(""));
    write(&out_dir.join("aggregate.json"), &serde_json::to_vec_pretty(&agg)?)?;
    write(&out_dir.join("report.md"), render_report(&agg).as_bytes())?;
    Ok(agg)
}
