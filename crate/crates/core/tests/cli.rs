use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psep::checkpoint::Checkpoint;
use psep::signal::SourceKind;
use tempfile::TempDir;

const TINY: &str = "\
[data]
n_train = 8
n_test = 2
frame_len = 64
[flow]
blocks = 2
flows = 2
layers = 2
width = 8
[ar]
blocks = 1
layers = 3
width = 8
[train]
batch_size = 2
total_steps = 12
finetune_steps = 6
";

struct Work {
    _tmp: TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Work {
    fn new(extra: &str) -> Work {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("work");
        fs::create_dir(&root).unwrap();
        let config = tmp.path().join("run.toml");
        fs::write(&config, format!("{TINY}{extra}")).unwrap();
        Work { _tmp: tmp, root, config }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--workdir", self.root.to_str().unwrap(), "--config", self.config.to_str().unwrap()];
        full.extend_from_slice(args);
        Command::new(env!("CARGO_BIN_EXE_psep")).args(&full).env("PSEP_THREADS", "1").output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.run(args).status.code().unwrap()
    }

    fn files(&self, sub: &str) -> Vec<String> {
        let dir = self.root.join(sub);
        if !dir.exists() {
            return Vec::new();
        }
        let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        v.sort();
        v
    }

    fn trained(extra: &str) -> Work {
        let w = Work::new(extra);
        w.ok(&["gen-data"]);
        w.ok(&["train", "--family", "flow", "--all"]);
        w
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_deterministic_and_refuses_to_overwrite() {
    let a = Work::new("");
    let b = Work::new("");
    a.ok(&["gen-data"]);
    b.ok(&["gen-data"]);
    let ta = tree(&a.root.join("data"));
    assert_eq!(ta.len(), 8 + 2 + 1);
    assert_eq!(ta, tree(&b.root.join("data")));
    assert_eq!(a.code(&["gen-data"]), 2);
    assert_eq!(tree(&a.root.join("data")), ta);
}

#[test]
fn training_is_deterministic_and_writes_telemetry() {
    let a = Work::trained("");
    let b = Work::trained("");
    let cks = a.files("checkpoints");
    assert_eq!(cks, b.files("checkpoints"));
    assert_eq!(cks.iter().filter(|f| f.ends_with(".ck")).count(), 4);
    for f in cks.iter().filter(|f| f.ends_with(".ck")) {
        assert!(f.starts_with("flow-") && f.contains("-sigma0-"), "{f}");
        assert_eq!(fs::read(a.root.join("checkpoints").join(f)).unwrap(), fs::read(b.root.join("checkpoints").join(f)).unwrap());
        let stem = f.trim_end_matches(".ck");
        let tel = fs::read_to_string(a.root.join("telemetry").join(format!("{stem}.csv"))).unwrap();
        assert_eq!(tel.lines().count(), 1 + 12);
        assert!(cks.contains(&format!("{stem}.toml")));
    }
    assert!(a.files("telemetry").iter().all(|f| !f.starts_with('.')));
}

#[test]
fn finetune_records_its_base_and_needs_a_standard_sigma() {
    let w = Work::trained("");
    assert_eq!(w.code(&["finetune", "--family", "flow", "--source", "saw", "--sigma", "0.05"]), 2);
    w.ok(&["finetune", "--family", "flow", "--source", "saw", "--sigma", "0.077"]);
    let dir = w.root.join("checkpoints");
    let base = w.files("checkpoints").into_iter().find(|f| f.starts_with("flow-saw-sigma0-") && f.ends_with(".ck")).unwrap();
    let tuned = w.files("checkpoints").into_iter().find(|f| f.starts_with("flow-saw-sigma0.077-") && f.ends_with(".ck")).unwrap();
    let base_ck = Checkpoint::read(&dir.join(&base)).unwrap();
    let tuned_ck = Checkpoint::read(&dir.join(&tuned)).unwrap();
    assert_eq!(tuned_ck.source, SourceKind::Sawtooth);
    assert_eq!(tuned_ck.sigma, 0.077);
    assert_eq!(tuned_ck.base_hash.as_deref(), Some(base_ck.hash().as_str()));
    w.ok(&["finetune", "--family", "flow", "--source", "saw", "--sigma", "0.05", "--any-sigma"]);
}

#[test]
fn missing_artifacts_and_bad_config() {
    let w = Work::new("");
    assert_eq!(w.code(&["train", "--family", "flow", "--all"]), 3);
    w.ok(&["gen-data"]);
    let out = w.run(&["eval-matrix"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sine") && err.contains("triangle"), "{err}");
    assert_eq!(w.code(&["finetune", "--family", "flow", "--all", "--sigma", "0.359"]), 3);
    assert!(w.files("checkpoints").is_empty());

    let bad = Work::new("[train]\nlearnig_rate = 0.1\n");
    assert_eq!(bad.code(&["gen-data"]), 2);
    assert!(bad.files("data").is_empty());
    assert_eq!(w.code(&["no-such-command"]), 2);
}

#[test]
fn failed_training_leaves_nothing_behind() {
    let w = Work::new("");
    w.ok(&["gen-data"]);
    fs::write(&w.config, TINY.replace("batch_size = 2", "batch_size = 2\nlearning_rate = 1e12")).unwrap();
    let code = w.code(&["train", "--family", "flow", "--source", "sine"]);
    assert_ne!(code, 0);
    assert!(w.files("checkpoints").is_empty(), "{:?}", w.files("checkpoints"));
    assert!(w.files("telemetry").is_empty(), "{:?}", w.files("telemetry"));
}

#[test]
fn evaluation_reports() {
    let w = Work::trained("");
    w.ok(&["eval-matrix"]);
    let reports = w.files("reports");
    for ext in ["csv", "txt", "json", "config.toml"] {
        assert!(reports.contains(&format!("xll_flow_sigma0_cond0.{ext}")), "{reports:?}");
    }
    let csv = fs::read_to_string(w.root.join("reports/xll_flow_sigma0_cond0.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "source,sine,saw,square,triangle");
    assert_eq!(csv.lines().count(), 5);

    // noise-conditioned priors are needed for the σ_c = 0.359 column
    assert_eq!(w.code(&["eval-matrix", "--cond", "0.359"]), 3);
    w.ok(&["finetune", "--family", "flow", "--all", "--sigma", "0.359"]);
    w.ok(&["eval-matrix", "--data-noise", "0,0.359", "--cond", "0.359"]);
    let reports = w.files("reports");
    assert!(reports.contains(&"xll_flow_sigma0_cond0.359.csv".to_string()), "{reports:?}");
    assert!(reports.contains(&"xll_flow_sigma0.359_cond0.359.csv".to_string()), "{reports:?}");

    w.ok(&["eval-degenerate"]);
    let deg = fs::read_to_string(w.root.join("reports/degenerate_flow.csv")).unwrap();
    let lines: Vec<&str> = deg.lines().collect();
    assert_eq!(lines[0], "input,sigma,sine,saw,square,triangle");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("\"constant-0\",0,") && lines[4].starts_with("\"noise-N(0,0.5)\",0.359,"), "{deg}");
}

#[test]
fn oracle_gaussian_separation() {
    let w = Work::new("[sgld]\nsteps = 4000\nstep_size = 0.005\ngamma = 0.1\n");
    w.ok(&["gen-data"]);
    w.ok(&["separate", "--oracle-gaussian", "--out", "g"]);
    let dir = w.root.join("separations/g");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("result.json")).unwrap()).unwrap();
    let errs = json["oracle"]["mean_rel_error"].as_array().unwrap();
    assert_eq!(errs.len(), 4);
    assert!(errs.iter().all(|e| e.as_f64().unwrap().is_finite()), "{errs:?}");
    for name in ["sample_sine.wav", "mean_triangle.wav", "posterior_mean.bin", "sample.bin", "diagnostics.csv", "config.toml"] {
        assert!(dir.join(name).exists(), "{name}");
    }
    let wav = hound::WavReader::open(dir.join("mean_saw.wav")).unwrap();
    assert_eq!(wav.spec().channels, 1);
    assert_eq!(wav.len(), 64);
}

#[test]
fn annealed_separation_and_differentiability() {
    let w = Work::trained("[separate]\nanneal_steps = 5\n[[sgld.schedule]]\nsigma = 0.0\nsteps = 7\n");
    w.ok(&["separate", "--anneal", "--out", "a"]);
    let diag = fs::read_to_string(w.root.join("separations/a/diagnostics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = diag.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r[1] == "0" && r[2] == "0"));
    assert_eq!(rows.last().unwrap()[0], "6");

    // default schedule: every standard level, σ descending
    let w2 = Work::trained("[separate]\nanneal_steps = 5\n");
    assert_eq!(w2.code(&["separate", "--anneal", "--out", "b"]), 3);
    w2.ok(&["finetune", "--family", "flow", "--all", "--sigma", "0.359"]);
    for s in ["0.01", "0.027", "0.077", "0.129"] {
        w2.ok(&["finetune", "--family", "flow", "--all", "--sigma", s]);
    }
    w2.ok(&["separate", "--anneal", "--out", "b"]);
    let diag = fs::read_to_string(w2.root.join("separations/b/diagnostics.csv")).unwrap();
    let mut stages: Vec<(String, String)> = Vec::new();
    for l in diag.lines().skip(1) {
        let r: Vec<&str> = l.split(',').collect();
        let key = (r[1].to_string(), r[2].to_string());
        if stages.last() != Some(&key) {
            stages.push(key);
        }
    }
    let sigmas: Vec<&str> = stages.iter().map(|(_, s)| s.as_str()).collect();
    assert_eq!(sigmas, ["0.359", "0.129", "0.077", "0.027", "0.01", "0"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w2.root.join("separations/b/result.json")).unwrap()).unwrap();
    assert_eq!(json["steps"], 30);
    assert_eq!(json["checkpoints"].as_array().unwrap().len(), 24);

    w.ok(&["train", "--family", "ar", "--source", "sine"]);
    assert_eq!(w.code(&["separate", "--family", "ar"]), 2);
    assert!(!w.root.join("separations/ar-mix0-seed0").exists());
}

#[test]
fn sampling_writes_frames() {
    let w = Work::trained("");
    w.ok(&["sample", "--family", "flow", "--source", "square", "-n", "2", "--seed", "5"]);
    let dirs = w.files("samples");
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].starts_with("flow-square-sigma0-") && dirs[0].ends_with("-seed5"), "{dirs:?}");
    let dir = w.root.join("samples").join(&dirs[0]);
    for i in 0..2 {
        let wav = hound::WavReader::open(dir.join(format!("frame_{i:03}.wav"))).unwrap();
        assert_eq!(wav.len(), 64);
        assert_eq!(fs::metadata(dir.join(format!("frame_{i:03}.f64"))).unwrap().len(), 64 * 8);
    }
    let first = fs::read(dir.join("frame_000.f64")).unwrap();
    w.ok(&["sample", "--family", "flow", "--source", "square", "-n", "2", "--seed", "5"]);
    assert_eq!(fs::read(dir.join("frame_000.f64")).unwrap(), first);
    assert_eq!(w.code(&["sample", "--family", "flow", "--source", "square", "--sigma", "0.359"]), 3);
}
