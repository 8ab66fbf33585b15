use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cradle_core::data::{
    library_sizes, load_dataset, read_split, split_ood_combinations, split_random, write_dataset, write_split,
    Dataset, PerturbationSet, Split, COUNTS_CSV, COUNTS_MTX, DOUBLETS_FILE, GENES_FILE, PERTS_FILE, SPLIT_FILE,
};
use cradle_core::eval::{evaluate as run_eval, EvalReport, TruthSource};
use cradle_core::model::{encode, generate as run_generate, GenerateOptions, LibraryPolicy, Sampling, Variant};
use cradle_core::qc::{median, qc_evaluate, qc_pass_rate, write_qc_report, CRITERIA};
use cradle_core::synth::{synth_generate, synth_qc_consistency, write_synth, SynthTruth, TRUTH_FILE};
use cradle_core::train::{
    load_checkpoint, save_checkpoint, write_timings, Checkpoint, TrainHistory, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{RunConfig, SplitMethod};
use crate::run::{read_manifest, Run, RunStatus};
use crate::{Common, Failure, TrainFlags};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const QC_REPORT_FILE: &str = "qc_report.csv";
pub const LATENTS_FILE: &str = "latents.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn resolve(common: &Common, base: RunConfig) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(&base, p)?,
        None => base,
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Files of a dataset directory that exist, for input digests.
fn dataset_inputs(dir: &Path) -> Vec<PathBuf> {
    [COUNTS_CSV, COUNTS_MTX, GENES_FILE, PERTS_FILE, DOUBLETS_FILE, SPLIT_FILE, TRUTH_FILE]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect()
}

fn with_config(mut inputs: Vec<PathBuf>, common: &Common) -> Vec<PathBuf> {
    inputs.extend(common.config.iter().cloned());
    inputs
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

pub fn synth(common: &Common) -> Result<(), Failure> {
    let cfg = resolve(common, RunConfig::preset(common.preset))?;
    cfg.synth.validate()?;
    let run = Run::open("synth", common.out.as_deref(), cfg.synth.seed, config_json(&cfg), &with_config(vec![], common))?;
    let (data, truth) = synth_generate(&cfg.synth)?;
    write_synth(&run.dir, &data, &truth)?;
    let confusion = synth_qc_consistency(&data, &truth, &cfg.qc)?;
    let summary = json!({
        "n_cells": data.n_cells(),
        "n_genes": data.expr.n_genes(),
        "n_treatments": data.perts.n_treatments(),
        "qc_recall": confusion.recall(),
        "qc_false_positive_rate": confusion.false_positive_rate(),
    });
    let dir = run.dir.clone();
    run.finalize(summary)?;
    println!("{}", dir.display());
    Ok(())
}

pub fn qc(common: &Common, data_dir: &Path, n_mads: Option<f64>) -> Result<(), Failure> {
    let mut cfg = resolve(common, RunConfig::preset(common.preset))?;
    if let Some(n) = n_mads {
        cfg.qc.n_mads = n;
    }
    cfg.qc.validate()?;
    let seed = cfg.seed.unwrap_or(0);
    let run = Run::open("qc", common.out.as_deref(), seed, config_json(&cfg), &with_config(dataset_inputs(data_dir), common))?;
    let data = load_dataset(data_dir)?;
    let report = qc_evaluate(&data.expr, &data.doublets, &cfg.qc)?;
    write_qc_report(&run.path(QC_REPORT_FILE), &report, &data.expr.cell_ids)?;
    let qcpr = qc_pass_rate(&report.labels)?;
    let failures: serde_json::Map<String, serde_json::Value> = CRITERIA
        .iter()
        .enumerate()
        .map(|(k, c)| ((*c).to_string(), json!(report.pass.iter().filter(|p| !p[k]).count())))
        .collect();
    let summary = json!({
        "n_mads": cfg.qc.n_mads,
        "n_cells": report.n_cells(),
        "n_pass": report.labels.iter().filter(|&&a| a == 0).count(),
        "qcpr": qcpr,
        "failures": failures,
    });
    let dir = run.dir.clone();
    run.finalize(summary)?;
    println!("{}\tqcpr {qcpr:.4}", dir.display());
    Ok(())
}

fn make_split(data: &Dataset, cfg: &RunConfig) -> Result<Split, Failure> {
    let [a, b, c] = cfg.split.fractions;
    Ok(match cfg.split.method {
        SplitMethod::Random => split_random(data.n_cells(), (a, b, c), cfg.train.seed)?,
        SplitMethod::Ood => split_ood_combinations(&data.perts, cfg.split.ood_fraction, cfg.train.seed)?,
    })
}

fn median_library(data: &Dataset, cells: &[usize]) -> Result<f64, Failure> {
    let libs = library_sizes(&data.expr)?;
    let v: Vec<f64> = cells.iter().map(|&i| libs[i] as f64).collect();
    Ok(median(&v)?)
}

fn apply_train_flags(cfg: &mut RunConfig, flags: &TrainFlags) -> Result<(), Failure> {
    if let Some(v) = flags.variant {
        cfg.model.variant = v;
    }
    if let Some(a) = flags.alpha {
        cfg.train.alpha = a;
    }
    if let Some(p) = flags.precision {
        cfg.train.precision = p;
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()
}

/// Directory of the run that wrote `ckpt`: the nearest ancestor holding a
/// run manifest.
fn owning_run(ckpt: &Path) -> Result<PathBuf, Failure> {
    ckpt.ancestors()
        .skip(1)
        .find(|d| d.join(crate::run::MANIFEST_FILE).exists())
        .map(Path::to_path_buf)
        .ok_or_else(|| Failure::data(format!("{} is not inside a run directory", ckpt.display())))
}

fn load_run_config(run_dir: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(&RunConfig::default(), &run_dir.join(CONFIG_FILE))
}

/// Per-cell posterior means of the three latent blocks.
fn write_latents(trainer: &Trainer, data: &Dataset, split: &Split, labels: &[u8], path: &Path) -> Result<(), Failure> {
    let n = data.n_cells();
    let d = trainer.params.d_z();
    let mut part = vec!["unused"; n];
    for (name, cells) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for &i in cells {
            part[i] = name;
        }
    }
    let mut out = String::from("cell_id,split,treatment,artifact");
    for block in ["zb", "zp", "za"] {
        for k in 0..d {
            let _ = write!(out, ",{block}_{k}");
        }
    }
    out.push('\n');
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(trainer.config.seed);
    for chunk in all.chunks(1024) {
        let batch = trainer.data.batch(chunk);
        let lat = encode(&trainer.params, &batch, Sampling::Mean, &mut rng)?;
        for (r, &i) in chunk.iter().enumerate() {
            let _ = write!(out, "{},{},{},{}", data.expr.cell_ids[i], part[i], data.perts.pattern_key(i), labels[i]);
            for m in [&lat.basal.mean, &lat.z_p, &lat.z_a] {
                for v in m.row(r) {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

pub fn train(common: &Common, flags: &TrainFlags, data_dir: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let (base, prior_run) = match resume {
        Some(ckpt) => {
            let dir = owning_run(ckpt)?;
            (load_run_config(&dir)?, Some(dir))
        }
        None => (RunConfig::preset(common.preset), None),
    };
    let mut cfg = resolve(common, base)?;
    apply_train_flags(&mut cfg, flags)?;

    let mut inputs = with_config(dataset_inputs(data_dir), common);
    inputs.extend(resume.map(Path::to_path_buf));
    let run = Run::open("train", common.out.as_deref(), cfg.train.seed, config_json(&cfg), &inputs)?;
    let data = load_dataset(data_dir)?;
    let report = qc_evaluate(&data.expr, &data.doublets, &cfg.qc)?;
    let labels = report.labels.clone();
    let split = match &prior_run {
        Some(dir) => read_split(&dir.join(SPLIT_FILE))?,
        None if data_dir.join(SPLIT_FILE).exists() => read_split(&data_dir.join(SPLIT_FILE))?,
        None => make_split(&data, &cfg)?,
    };
    write_text(&run.path(CONFIG_FILE), &cfg.to_toml())?;
    write_split(&run.path(SPLIT_FILE), &split)?;
    write_qc_report(&run.path(QC_REPORT_FILE), &report, &data.expr.cell_ids)?;

    let mut trainer = match (resume, &prior_run) {
        (Some(ckpt_path), Some(dir)) => {
            let ckpt = load_checkpoint(ckpt_path)?;
            if ckpt.params.config != cfg.model {
                return Err(Failure::config("checkpoint model settings differ from the resolved [model] section"));
            }
            let mut history = TrainHistory::read_csv(&dir.join(HISTORY_FILE))?;
            if history.len() < ckpt.epoch {
                return Err(Failure::data(format!(
                    "{} has {} epochs, checkpoint is at epoch {}",
                    HISTORY_FILE,
                    history.len(),
                    ckpt.epoch
                )));
            }
            history.records.truncate(ckpt.epoch);
            Trainer::resume(&data, &split, &labels, ckpt, history, cfg.train.clone())?
        }
        _ => Trainer::new(&data, &split, &labels, cfg.model.clone(), cfg.train.clone())?,
    };
    let start_epoch = trainer.epoch;

    let ckpt_dir = run.path(CHECKPOINT_DIR);
    let history_path = run.path(HISTORY_FILE);
    let every = cfg.train.checkpoint_every;
    trainer.run(|t| {
        let r = t.history.records.last().expect("epoch record");
        if r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == t.config.epochs {
            eprintln!("epoch {:5}  j1 {:12.4}  j2 {:10.4}  val_j1 {:12.4}", r.epoch, r.j1, r.j2, r.val_j1);
        }
        if every > 0 && t.epoch % every == 0 {
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| cradle_core::Error::Checkpoint(e.to_string()))?;
            save_checkpoint(&ckpt_dir.join(format!("epoch-{:05}.ckpt", t.epoch)), &t.checkpoint())?;
            t.history.write_csv(&history_path)?;
        }
        Ok(())
    })?;

    save_checkpoint(&run.path(MODEL_FILE), &trainer.checkpoint())?;
    trainer.history.write_csv(&history_path)?;
    write_timings(&run.path(TIMINGS_FILE), &trainer.timings)?;
    write_latents(&trainer, &data, &split, &labels, &run.path(LATENTS_FILE))?;

    let last = trainer.history.records.last();
    let summary = json!({
        "epochs": trainer.epoch,
        "resumed_from_epoch": resume.map(|_| start_epoch),
        "final_j1": last.map(|r| r.j1),
        "final_val_j1": last.map(|r| r.val_j1),
        "median_library": median_library(&data, &split.train)?,
        "n_train": split.train.len(),
        "n_val": split.val.len(),
        "n_test": split.test.len(),
        "variant": cfg.model.variant.to_string(),
    });
    let dir = run.dir.clone();
    run.finalize(summary)?;
    println!("{}", dir.display());
    Ok(())
}

/// A finished train run: its manifest, resolved config and final checkpoint.
fn open_train_run(dir: &Path) -> Result<(crate::run::RunManifest, RunConfig, Checkpoint), Failure> {
    let manifest = read_manifest(dir)?;
    if manifest.command != "train" || manifest.status != RunStatus::Finalized {
        return Err(Failure::data(format!("{} is not a finished train run", dir.display())));
    }
    let cfg = load_run_config(dir)?;
    let ckpt = load_checkpoint(&dir.join(MODEL_FILE))?;
    Ok((manifest, cfg, ckpt))
}

pub struct GenerateArgs {
    pub run: PathBuf,
    pub treatments: Vec<String>,
    pub n: usize,
    pub artifact_flag: u8,
    pub library: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    if args.artifact_flag > 1 {
        return Err(Failure::config("--artifact-flag must be 0 or 1"));
    }
    if args.n == 0 {
        return Err(Failure::config("--n must be positive"));
    }
    let (manifest, _, ckpt) = open_train_run(&args.run)?;
    let params = ckpt.params;
    let mut patterns = Vec::with_capacity(args.n * args.treatments.len());
    for key in &args.treatments {
        let p = params.parse_pattern(key)?;
        patterns.extend(std::iter::repeat_n(p, args.n));
    }
    let library = match args.library {
        Some(l) => l,
        None => manifest.summary["median_library"]
            .as_f64()
            .ok_or_else(|| Failure::data("train run manifest lacks median_library"))?,
    };
    let config = json!({
        "run": args.run.display().to_string(),
        "treatments": args.treatments,
        "n": args.n,
        "artifact_flag": args.artifact_flag,
        "library": library,
        "seed": args.seed,
    });
    let model_path = args.run.join(MODEL_FILE);
    let out = Run::open("generate", args.out.as_deref(), args.seed, config, &[model_path])?;
    let opts = GenerateOptions {
        artifact: args.artifact_flag,
        ..GenerateOptions::new(LibraryPolicy::Fixed(library))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut expr = run_generate(&params, &patterns, &opts, &mut rng)?;
    expr.cell_ids = (0..patterns.len()).map(|i| format!("gen{i}")).collect();
    let perts = PerturbationSet::from_patterns(&patterns, params.treatment_names.clone())?;
    let n_cells = patterns.len();
    let data = Dataset::new(expr, perts, vec![false; n_cells])?;
    write_dataset(&out.dir, &data)?;
    let dir = out.dir.clone();
    out.finalize(json!({ "n_cells": n_cells }))?;
    println!("{}", dir.display());
    Ok(())
}

fn report_summary(report: &EvalReport) -> serde_json::Value {
    json!({
        "ate_pearson": report.mean.ate_pearson,
        "ate_r2": report.mean.ate_r2,
        "jaccard": report.mean.jaccard,
        "jaccard_k": report.jaccard_k,
        "n_scored": report.treatments.len(),
        "n_skipped": report.skipped.len(),
        "qcpr": report.qcpr,
    })
}

fn truth_for(data_dir: &Path) -> Result<Option<SynthTruth>, Failure> {
    let p = data_dir.join(TRUTH_FILE);
    Ok(if p.exists() { Some(SynthTruth::read(&p)?) } else { None })
}

fn eval_with(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    data: &Dataset,
    split: &Split,
    truth: Option<&SynthTruth>,
) -> Result<EvalReport, Failure> {
    let labels;
    let source = match truth {
        Some(t) => TruthSource::Synthetic(t),
        None => {
            labels = qc_evaluate(&data.expr, &data.doublets, &cfg.qc)?.labels;
            TruthSource::Observed { labels: &labels }
        }
    };
    Ok(run_eval(&ckpt.params, data, split, source, &cfg.qc, &cfg.eval)?)
}

pub fn evaluate(
    run_dir: &Path,
    data_dir: &Path,
    n_mads: &[f64],
    n_generated: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (_, mut cfg, ckpt) = open_train_run(run_dir)?;
    if !n_mads.is_empty() {
        cfg.eval.n_mads = n_mads.to_vec();
    }
    if let Some(n) = n_generated {
        cfg.eval.n_generated = n;
    }
    if let Some(s) = seed {
        cfg.eval.seed = s;
    }
    let mut inputs = dataset_inputs(data_dir);
    inputs.push(run_dir.join(MODEL_FILE));
    let run = Run::open("evaluate", out, cfg.eval.seed, config_json(&cfg), &inputs)?;
    let data = load_dataset(data_dir)?;
    let split = read_split(&run_dir.join(SPLIT_FILE))?;
    let truth = truth_for(data_dir)?;
    let report = eval_with(&cfg, &ckpt, &data, &split, truth.as_ref())?;
    report.write_json(&run.path("eval_report.json"))?;
    report.write_summary_csv(&run.path("eval_summary.csv"))?;
    println!(
        "ate_pearson {:.4}  ate_r2 {:.4}  jaccard@{} {:.4}",
        report.mean.ate_pearson, report.mean.ate_r2, report.jaccard_k, report.mean.jaccard
    );
    for q in &report.qcpr {
        println!("qcpr n_mads {}  clean {:.4}  artifact {:.4}", q.n_mads, q.clean, q.artifact);
    }
    let summary = report_summary(&report);
    let dir = run.dir.clone();
    run.finalize(summary)?;
    println!("{}", dir.display());
    Ok(())
}

pub fn ablate(
    common: &Common,
    data_dir: &Path,
    seeds: &[u64],
    variants: &[Variant],
    epochs: Option<usize>,
) -> Result<(), Failure> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Failure::config("ablate needs at least one seed and one variant"));
    }
    let mut cfg = resolve(common, RunConfig::preset(common.preset))?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let run = Run::open(
        "ablate",
        common.out.as_deref(),
        seeds[0],
        config_json(&cfg),
        &with_config(dataset_inputs(data_dir), common),
    )?;
    let data = load_dataset(data_dir)?;
    let labels = qc_evaluate(&data.expr, &data.doublets, &cfg.qc)?.labels;
    let truth = truth_for(data_dir)?;

    let mut header = String::from("variant,seed,ate_pearson,ate_r2,jaccard");
    for n in &cfg.eval.n_mads {
        let _ = write!(header, ",qcpr_clean_{n},qcpr_artifact_{n}");
    }
    let _ = writeln!(header, ",qcpr_clean_mean");
    let mut rows = header;
    let mut means = serde_json::Map::new();
    for &variant in variants {
        let mut qcpr_means = Vec::new();
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = Some(seed);
            c.apply_seed();
            c.model.variant = variant;
            let split = make_split(&data, &c)?;
            let mut trainer = Trainer::new(&data, &split, &labels, c.model.clone(), c.train.clone())?;
            trainer.run(|_| Ok(()))?;
            let sub = run.path(&format!("{variant}-seed{seed}"));
            std::fs::create_dir_all(&sub).map_err(|e| Failure::data(e.to_string()))?;
            trainer.history.write_csv(&sub.join(HISTORY_FILE))?;
            let ckpt = trainer.checkpoint();
            let report = eval_with(&c, &ckpt, &data, &split, truth.as_ref())?;
            report.write_json(&sub.join("eval_report.json"))?;
            let qm = report.qcpr.iter().map(|q| q.clean).sum::<f64>() / report.qcpr.len() as f64;
            qcpr_means.push(qm);
            let _ = write!(
                rows,
                "{variant},{seed},{},{},{}",
                report.mean.ate_pearson, report.mean.ate_r2, report.mean.jaccard
            );
            for q in &report.qcpr {
                let _ = write!(rows, ",{},{}", q.clean, q.artifact);
            }
            let _ = writeln!(rows, ",{qm}");
            eprintln!("{variant} seed {seed}: rho {:.4} qcpr {qm:.4}", report.mean.ate_pearson);
        }
        let m = qcpr_means.iter().sum::<f64>() / qcpr_means.len() as f64;
        means.insert(variant.to_string(), json!(m));
        println!("{variant}\tmean qcpr {m:.4}");
    }
    write_text(&run.path("ablation.csv"), &rows)?;
    let dir = run.dir.clone();
    run.finalize(json!({ "mean_qcpr_clean": means }))?;
    println!("{}", dir.display());
    Ok(())
}

