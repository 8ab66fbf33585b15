use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use cradle_core::data::load_dataset;

const SMALL: &str = "[synth]\nn_cells = 300\ntruth_cells = 400\n\n[train]\nepochs = 2\nparticles = 1\nbatch_size = 64\n\n[eval]\nn_generated = 64\n";

fn cradle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cradle"))
        .args(args)
        .env_remove("CRADLE_OUT_ROOT")
        .output()
        .expect("spawn cradle")
}

fn ok(args: &[&str]) -> String {
    let out = cradle(args);
    assert!(
        out.status.success(),
        "cradle {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

struct Env {
    tmp: tempfile::TempDir,
    config: PathBuf,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("small.toml");
        std::fs::write(&config, SMALL).unwrap();
        Self { tmp, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn synth(&self, name: &str, seed: &str) -> PathBuf {
        let out = self.path(name);
        ok(&["synth", "--preset", "benchmark", "--config", s(&self.config), "--seed", seed, "--out", s(&out)]);
        out
    }

    fn train(&self, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args = vec!["train", "--preset", "benchmark", "--config", s(&self.config), "--data", s(data), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

#[test]
fn synth_writes_dataset_and_is_reproducible() {
    let env = Env::new();
    let a = env.synth("a", "3");
    let b = env.synth("b", "3");
    let data = load_dataset(&a).unwrap();
    assert_eq!(data.n_cells(), 300);
    assert!(a.join("truth.json").exists());
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["status"], "finalized");
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["output_hash"], mb["output_hash"]);
    let c = env.synth("c", "4");
    assert_ne!(manifest(&c)["output_hash"], ma["output_hash"]);
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let env = Env::new();
    let bad = env.path("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = cradle(&["synth", "--config", s(&bad), "--out", s(&env.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn missing_data_exits_3() {
    let env = Env::new();
    let out = cradle(&["qc", "--data", s(&env.path("nowhere")), "--out", s(&env.path("q"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn finalized_run_directory_is_refused() {
    let env = Env::new();
    let a = env.synth("a", "0");
    let out = cradle(&["synth", "--preset", "benchmark", "--config", s(&env.config), "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_from_environment() {
    let env = Env::new();
    let root = env.path("root");
    let out = Command::new(env!("CARGO_BIN_EXE_cradle"))
        .args(["synth", "--preset", "benchmark", "--config", s(&env.config), "--seed", "5"])
        .env("CRADLE_OUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    let dirs: Vec<_> = std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(dirs.len(), 1);
    let name = dirs[0].to_string_lossy().to_string();
    assert!(name.starts_with("synth-") && name.ends_with("-seed5"), "{name}");
}

fn qc_run(env: &Env, data: &Path, n: &str) -> (PathBuf, serde_json::Value) {
    let out = env.path(&format!("qc{n}"));
    ok(&["qc", "--data", s(data), "--n-mads", n, "--out", s(&out)]);
    let m = manifest(&out);
    (out, m)
}

#[test]
fn qc_report_is_consistent_and_monotone() {
    let env = Env::new();
    let data = env.synth("d", "1");
    let (dir3, m3) = qc_run(&env, &data, "3");
    let (_, m5) = qc_run(&env, &data, "5");
    let text = std::fs::read_to_string(dir3.join("qc_report.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("cell_id")).collect();
    assert_eq!(rows.len(), 300);
    let pass = rows.iter().filter(|r| r.ends_with(",0")).count();
    assert_eq!(m3["summary"]["n_pass"].as_u64().unwrap() as usize, pass);
    assert!((m3["summary"]["qcpr"].as_f64().unwrap() - pass as f64 / 300.0).abs() < 1e-12);
    assert!(m5["summary"]["n_pass"].as_u64() >= m3["summary"]["n_pass"].as_u64());
}

#[test]
fn train_variants_and_outputs() {
    let env = Env::new();
    let data = env.synth("d", "2");
    for v in ["full", "no_cf", "no_causal"] {
        let run = env.train(&data, &format!("t-{v}"), &["--variant", v, "--epochs", "1"]);
        for f in ["model.ckpt", "model.ckpt.json", "history.csv", "timings.csv", "latents.csv", "split.json", "config.toml"] {
            assert!(run.join(f).exists(), "{v}: missing {f}");
        }
        let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
        assert!(cfg.contains(&format!("variant = \"{v}\"")));
    }
    let hist = std::fs::read_to_string(env.path("t-no_cf").join("history.csv")).unwrap();
    let j2: f64 = hist.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(j2, 0.0);
    let latents = std::fs::read_to_string(env.path("t-full").join("latents.csv")).unwrap();
    assert_eq!(latents.lines().count(), 301);
    assert_eq!(latents.lines().next().unwrap().split(',').count(), 4 + 3 * 8);
}

#[test]
fn one_epoch_on_full_benchmark_is_quick() {
    let env = Env::new();
    let data = env.path("bench");
    ok(&["synth", "--preset", "benchmark", "--out", s(&data)]);
    assert_eq!(load_dataset(&data).unwrap().n_cells(), 2000);
    let t = Instant::now();
    ok(&["train", "--preset", "benchmark", "--data", s(&data), "--epochs", "1", "--out", s(&env.path("t"))]);
    assert!(t.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let env = Env::new();
    let data = env.synth("d", "6");
    let full = env.train(&data, "full", &["--epochs", "4"]);
    let cfg = env.path("ck.toml");
    std::fs::write(&cfg, SMALL.replace("[train]\n", "[train]\ncheckpoint_every = 2\n")).unwrap();
    let out = env.path("part");
    ok(&["train", "--preset", "benchmark", "--config", s(&cfg), "--data", s(&data), "--epochs", "4", "--out", s(&out)]);
    let ckpt = out.join("checkpoints").join("epoch-00002.ckpt");
    assert!(ckpt.exists());
    let resumed = env.path("resumed");
    ok(&["train", "--data", s(&data), "--resume", s(&ckpt), "--epochs", "4", "--out", s(&resumed)]);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&full, "history.csv"), read(&resumed, "history.csv"));
    // Tensor archives match; the manifests differ only in checkpoint cadence.
    assert_eq!(read(&full, "model.ckpt"), read(&resumed, "model.ckpt"));
}

#[test]
fn generate_and_evaluate() {
    let env = Env::new();
    let data = env.synth("d", "7");
    let run = env.train(&data, "t", &[]);

    let bad = cradle(&["generate", "--run", s(&run), "--treatments", "NOPE", "--out", s(&env.path("g0"))]);
    assert!(!bad.status.success());

    let g = env.path("g");
    ok(&["generate", "--run", s(&run), "--treatments", "GENE1,GENE1+GENE2", "--n", "20", "--out", s(&g)]);
    let m = manifest(&g);
    assert_eq!(m["config"]["artifact_flag"], 0);
    let gen = load_dataset(&g).unwrap();
    assert_eq!(gen.n_cells(), 40);
    assert_eq!(gen.perts.pattern_key(0), "GENE1");
    assert_eq!(gen.perts.pattern_key(39), "GENE1+GENE2");

    let e1 = env.path("e1");
    let e2 = env.path("e2");
    for e in [&e1, &e2] {
        ok(&["evaluate", "--run", s(&run), "--data", s(&data), "--n-mads", "3,4,5", "--seed", "1", "--out", s(e)]);
    }
    let r1 = std::fs::read_to_string(e1.join("eval_report.json")).unwrap();
    assert_eq!(r1, std::fs::read_to_string(e2.join("eval_report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_str(&r1).unwrap();
    for key in ["ate_pearson", "ate_r2", "jaccard"] {
        assert!(report["mean"][key].is_number(), "{key}");
    }
    let qcpr = report["qcpr"].as_array().unwrap();
    let levels: Vec<f64> = qcpr.iter().map(|q| q["n_mads"].as_f64().unwrap()).collect();
    assert_eq!(levels, vec![3.0, 4.0, 5.0]);
    assert!(e1.join("eval_summary.csv").exists());
}

#[test]
fn ablate_reports_variants_side_by_side() {
    let env = Env::new();
    let data = env.synth("d", "8");
    let out = env.path("ab");
    ok(&[
        "ablate", "--preset", "benchmark", "--config", s(&env.config), "--data", s(&data),
        "--seeds", "0", "--variants", "full,no_cf", "--epochs", "1", "--out", s(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("full,0,") && rows[1].starts_with("no_cf,0,"));
}
