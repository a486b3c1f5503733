use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moe_gating::data::{DatasetRef, Split};
use moe_gating::error::{Error, Result};
use moe_gating::expert::ExpertModel;
use moe_gating::gating::augment::{evaluate_augmented, Aggregation, Augmentation};
use moe_gating::gating::Statistic;
use moe_gating::harness::run::catalog_for;
use moe_gating::harness::{derive_seed, run_experiment, write_report, ExperimentConfig, ProblemConfig, Session};
use moe_gating::pan::upan::FpanModel;
use moe_gating::pan::{build_attribution_dataset, train_pan, FeatureKind, PanModel};
use moe_gating::pan::upan::train_fpan;

#[derive(Parser)]
#[command(name = "moe-gating", version, about = "Data-free gating for mixtures of pre-trained CNN experts")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Dataset root (mnist/, fashion/, kmnist/, cifar10/ below it).
    #[arg(long, global = true, env = "MOE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Output directory for results.
    #[arg(long, global = true, env = "MOE_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
    /// Expert checkpoint directory [default: <out-dir>/models].
    #[arg(long, global = true)]
    model_dir: Option<PathBuf>,
    /// Base settings: `reproduction` or `synthetic`.
    #[arg(long, global = true, default_value = "reproduction")]
    preset: String,
    /// JSON experiment config; replaces the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on images per loaded split.
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Override the number of expert training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or reuse) the expert for one dataset and report its test accuracy.
    TrainExpert {
        #[arg(long)]
        dataset: String,
        /// Class subset such as `0-4`; labels are remapped in this order.
        #[arg(long)]
        classes: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Test accuracy of an expert checkpoint.
    Eval {
        #[arg(long)]
        expert: PathBuf,
        /// Dataset to test on [default: the expert's own].
        #[arg(long)]
        dataset: Option<DatasetRef>,
    },
    /// Naive concatenation gating on a mixture such as `mnist:0-4,mnist:5-9`.
    GateNaive {
        #[arg(long)]
        mixture: String,
        #[arg(long, default_value = "argmax")]
        stat: Statistic,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Multi-pass augmentation gating.
    GateAugment {
        #[arg(long)]
        mixture: String,
        /// `sharpen:A`, `gaussian:S`, `poisson:S`, `hflip`, `vflip`, `crop[:P]`; repeatable.
        #[arg(long = "aug")]
        augs: Vec<Augmentation>,
        #[arg(long, default_value = "mean")]
        agg: Aggregation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a PAN for one expert against negative datasets.
    TrainPan {
        #[arg(long)]
        expert: PathBuf,
        #[arg(long, default_value = "finalfc")]
        feature: FeatureKind,
        /// Negative datasets; repeatable.
        #[arg(long = "negative")]
        negatives: Vec<DatasetRef>,
        #[arg(long, default_value_t = 0)]
        expert_id: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// PAN checkpoint path [default: <out-dir>/pan-<dataset>-<feature>.ckpt].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the training attribution dataset here.
        #[arg(long)]
        attribution_out: Option<PathBuf>,
    },
    /// SC1: one PAN per expert, argmax fallback.
    RunSc1 {
        #[arg(long)]
        mixture: String,
        #[arg(long, default_value = "finalfc")]
        feature: FeatureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a universal PAN on the merged attribution rows of mixtures.
    TrainUpan {
        #[arg(long = "mixtures", num_args = 1.., required = true)]
        mixtures: Vec<String>,
        #[arg(long, default_value = "stats")]
        feature: FeatureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SC2: a trained UPAN shared by every expert of a mixture.
    RunSc2 {
        #[arg(long)]
        upan: PathBuf,
        #[arg(long)]
        mixture: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Distill UPAN/SC2 routing into an image-to-expert network.
    TrainFpan {
        #[arg(long)]
        upan: PathBuf,
        #[arg(long)]
        mixture: String,
        /// Datasets whose training images form the pool [default: the mixture's].
        #[arg(long = "pool")]
        pool: Vec<DatasetRef>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild aggregate.json and report.md from per-seed CSV files.
    Report,
    /// Run every configured method for every seed.
    ReproduceAll {
        /// Number of seeds (0..n).
        #[arg(long)]
        seeds: Option<u64>,
        /// Concurrent seed pipelines.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn base_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&c.preset)?,
    };
    if c.data_dir.is_some() {
        cfg.data_dir.clone_from(&c.data_dir);
    }
    cfg.out_dir.clone_from(&c.out_dir);
    if c.model_dir.is_some() {
        cfg.model_dir.clone_from(&c.model_dir);
    }
    if c.limit.is_some() {
        cfg.limit = c.limit;
    }
    if let Some(e) = c.epochs {
        cfg.expert_training.epochs = e;
    }
    Ok(cfg)
}

fn parse_mixture(spec: &str) -> Result<ProblemConfig> {
    let experts = spec
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<DatasetRef>>>()?;
    if experts.len() < 2 {
        return Err(Error::Config(format!("mixture '{spec}' needs at least 2 datasets")));
    }
    Ok(ProblemConfig {
        name: spec.to_string(),
        experts,
    })
}

fn print_rows(rows: &[(u64, &str, &str, String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["seed", "mixture", "method", "variant", "accuracy"])
        .map_err(|e| Error::Config(e.to_string()))?;
    for (seed, mixture, method, variant, acc) in rows {
        w.write_record([seed.to_string(), mixture.to_string(), method.to_string(), variant.clone(), format!("{acc:.6}")])
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<stdout>", e))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli.common)?;
    match cli.command {
        Command::ReproduceAll { seeds, workers } => {
            if let Some(n) = seeds {
                cfg.seeds = (0..n).collect();
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out = run_experiment(&cfg)?;
            println!("{}", cfg.out_dir.join("report.md").display());
            log::info!("{} result rows", out.rows.len());
        }
        Command::Report => {
            write_report(&cfg.out_dir)?;
            println!("{}", cfg.out_dir.join("report.md").display());
        }
        cmd => run_single(&cfg, cmd)?,
    }
    Ok(())
}

fn run_single(cfg: &ExperimentConfig, cmd: Command) -> Result<()> {
    cfg.validate()?;
    let catalog = catalog_for(cfg);
    match cmd {
        Command::TrainExpert { dataset, classes, seed } => {
            let spec = match classes {
                Some(c) => format!("{dataset}:{c}"),
                None => dataset,
            };
            let r: DatasetRef = spec.parse()?;
            catalog.check_available(&[r.tag.as_str()])?;
            let mut s = Session::new(cfg, &catalog, seed);
            let acc = s.expert_accuracy(&r)?;
            println!("{}\t{acc:.6}", s.expert_path(&r).display());
        }
        Command::Eval { expert, dataset } => {
            let m = ExpertModel::load(&expert)?;
            let r = dataset.unwrap_or_else(|| m.dataset.clone());
            let test = catalog.load_ref(&r, Split::Test)?;
            println!("{:.6}", m.evaluate(&test)?);
        }
        Command::GateNaive { mixture, stat, seed } => {
            let p = parse_mixture(&mixture)?;
            let mut s = Session::new(cfg, &catalog, seed);
            let r = s.naive(&p, stat)?;
            print_rows(&[(seed, &mixture, "naive", stat.to_string(), r.accuracy)])?;
        }
        Command::GateAugment { mixture, augs, agg, seed } => {
            let p = parse_mixture(&mixture)?;
            let mut s = Session::new(cfg, &catalog, seed);
            let mix = s.mixture(&p)?;
            let (mixed, _) = s.mixed(&p)?;
            let (mean, vote) = evaluate_augmented(&mix, &mixed, &augs, derive_seed(seed, "augment/cli"))?;
            let r = match agg {
                Aggregation::Mean => mean,
                Aggregation::Vote => vote,
            };
            let names: Vec<String> = augs.iter().map(ToString::to_string).collect();
            print_rows(&[(seed, &mixture, "augment", format!("{agg} {}", names.join(" ")), r.accuracy)])?;
        }
        Command::TrainPan {
            expert,
            feature,
            negatives,
            expert_id,
            seed,
            out,
            attribution_out,
        } => {
            let m = ExpertModel::load(&expert)?;
            let own = catalog.load_ref(&m.dataset, Split::Train)?;
            let negs = negatives
                .iter()
                .map(|r| catalog.load_ref(r, Split::Train))
                .collect::<Result<Vec<_>>>()?;
            let neg_refs: Vec<_> = negs.iter().map(|d| d.as_ref()).collect();
            let train = build_attribution_dataset(&m, expert_id, &own, &neg_refs, feature)?;
            if let Some(p) = &attribution_out {
                create_parent(p)?;
                train.save(p)?;
            }
            let tcfg = moe_gating::nn::TrainConfig {
                seed: derive_seed(seed, &format!("pan/cli/{}/{feature}", m.dataset)),
                ..cfg.pan_training.clone()
            };
            let pan = train_pan(&train, Some(expert_id), &tcfg, |e| log::info!("epoch {} loss {:.4}", e.epoch, e.mean_loss))?;
            let own_test = catalog.load_ref(&m.dataset, Split::Test)?;
            let negs_test = negatives
                .iter()
                .map(|r| catalog.load_ref(r, Split::Test))
                .collect::<Result<Vec<_>>>()?;
            let neg_test_refs: Vec<_> = negs_test.iter().map(|d| d.as_ref()).collect();
            let test = build_attribution_dataset(&m, expert_id, &own_test, &neg_test_refs, feature)?;
            let path = out.unwrap_or_else(|| cfg.out_dir.join(format!("pan-{}-{feature}.ckpt", m.dataset.slug())));
            create_parent(&path)?;
            pan.save(&path)?;
            println!("{}\t{:.6}", path.display(), pan.evaluate(&test)?);
        }
        Command::RunSc1 { mixture, feature, seed } => {
            let p = parse_mixture(&mixture)?;
            let mut s = Session::new(cfg, &catalog, seed);
            let o = s.sc1(&p, feature)?;
            print_rows(&[(seed, &mixture, "sc1", feature.to_string(), o.coordinator.gating.accuracy)])?;
        }
        Command::TrainUpan {
            mixtures,
            feature,
            seed,
            out,
        } => {
            let mut s = Session::new(cfg, &catalog, seed);
            let mut merged: Option<moe_gating::pan::AttributionDataset> = None;
            for m in &mixtures {
                let ds = s.upan_dataset(&parse_mixture(m)?, feature, Split::Train)?;
                match merged.as_mut() {
                    Some(all) => all.merge(&ds)?,
                    None => merged = Some(ds),
                }
            }
            let ds = merged.expect("at least one mixture");
            let tcfg = moe_gating::nn::TrainConfig {
                seed: derive_seed(seed, &format!("upan/cli/{}/{feature}", mixtures.join(";"))),
                ..cfg.pan_training.clone()
            };
            let upan = train_pan(&ds, None, &tcfg, |e| log::info!("epoch {} loss {:.4}", e.epoch, e.mean_loss))?;
            let path = out.unwrap_or_else(|| cfg.out_dir.join(format!("upan-{feature}.ckpt")));
            create_parent(&path)?;
            upan.save(&path)?;
            println!("{}", path.display());
        }
        Command::RunSc2 { upan, mixture, seed } => {
            let u = PanModel::load(&upan)?;
            let p = parse_mixture(&mixture)?;
            let mut s = Session::new(cfg, &catalog, seed);
            let o = s.evaluate_upan(&u, &p)?;
            print_rows(&[
                (seed, &mixture, "upan", format!("{} attribution", u.kind), o.attribution),
                (seed, &mixture, "sc2", u.kind.to_string(), o.sc2.gating.accuracy),
            ])?;
        }
        Command::TrainFpan {
            upan,
            mixture,
            pool,
            seed,
            out,
        } => {
            let u = PanModel::load(&upan)?;
            let p = parse_mixture(&mixture)?;
            let mut s = Session::new(cfg, &catalog, seed);
            let mix = s.mixture(&p)?;
            let refs = if pool.is_empty() { p.experts.clone() } else { pool };
            let sets = refs
                .iter()
                .map(|r| {
                    catalog.load_ref(r, Split::Train).map(|d| {
                        let mut d = (*d).clone();
                        d.truncate(cfg.fpan_pool);
                        d
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let set_refs: Vec<_> = sets.iter().collect();
            let tcfg = moe_gating::nn::TrainConfig {
                seed: derive_seed(seed, &format!("fpan/cli/{mixture}")),
                ..cfg.fpan_training.clone()
            };
            let f: FpanModel = train_fpan(&u, &mix, &set_refs, &tcfg, |e| log::info!("epoch {} loss {:.4}", e.epoch, e.mean_loss))?;
            let path = out.unwrap_or_else(|| cfg.out_dir.join("fpan.ckpt"));
            create_parent(&path)?;
            f.save(&path)?;
            println!("{}", path.display());
        }
        Command::Report | Command::ReproduceAll { .. } => unreachable!("handled by run"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
