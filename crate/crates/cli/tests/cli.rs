use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "synth": {"channels": 2, "feature_dim": 2, "vocab": "abc", "char_frames": [2, 3], "delays": [0, 1],
            "noise": [0.1, 0.2], "utterances": 4, "transcript_len": [2, 3]},
  "model": {"encoder": {"input_dim": 4, "layers": 2, "cell": 6, "proj": 3, "init_scale": 0.5},
            "attention": {"scorer": "location", "dim": 4, "filters": 2, "taps": 3},
            "decoder_dim": 6, "init_scale": 0.5},
  "train": {"batch_size": 2, "max_updates": 5, "eval_interval": 0}
}"#;

fn arsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arsg")).args(args).env_remove("ARSG_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = arsg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_line(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    err.trim_end().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("cfg.json"), TINY).unwrap();
        Run { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        s(&self.root.join(name)).to_string()
    }

    /// synth, lm-train and train into the run directory.
    fn prepare(&self, seed: &str) {
        let cfg = self.p("cfg.json");
        ok(&["synth", "--config", &cfg, "--seed", seed, "--out", &self.p("data.jsonl")]);
        ok(&["lm-train", "--corpus", &self.p("data.jsonl"), "--n", "2", "--out", &self.p("lm.txt")]);
        ok(&["train", "--config", &cfg, "--seed", seed, "--data", &self.p("data.jsonl"), "--out", &self.p("model.ckpt")]);
    }

    fn decode(&self, out: &str, extra: &[&str]) -> String {
        let (cfg, ckpt, data, outp) = (self.p("cfg.json"), self.p("model.ckpt"), self.p("data.jsonl"), self.p(out));
        let mut args = vec!["decode", "--config", &cfg, "--ckpt", &ckpt, "--data", &data, "--out", &outp];
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read_to_string(self.root.join(out)).unwrap()
    }
}

#[test]
fn eval_of_identical_files_is_zero() {
    let run = Run::new();
    ok(&["synth", "--config", &run.p("cfg.json"), "--out", &run.p("data.jsonl")]);
    let out = ok(&["eval", "--ref", &run.p("data.jsonl"), "--hyp", &run.p("data.jsonl")]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0.0000\n");
}

#[test]
fn unit_beam_without_lm_matches_greedy() {
    let run = Run::new();
    run.prepare("3");
    let beam = run.decode("beam.jsonl", &["--beam", "1", "--beta", "0", "--lm", &run.p("lm.txt")]);
    let greedy = run.decode("greedy.jsonl", &["--strategy", "greedy"]);
    let hyps = |t: &str| -> Vec<(String, String, f64)> {
        t.lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                (v["id"].as_str().unwrap().into(), v["hyp"].as_str().unwrap().into(), v["am_logp"].as_f64().unwrap())
            })
            .collect()
    };
    assert_eq!(hyps(&beam).len(), 4);
    assert_eq!(hyps(&beam), hyps(&greedy));
}

#[test]
fn decode_output_fields() {
    let run = Run::new();
    run.prepare("4");
    let text = run.decode("hyp.jsonl", &["--lm", &run.p("lm.txt"), "--beta", "0.5", "--beam", "3"]);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["am_logp", "fused", "hyp", "id", "lm_logp"]);
        let (am, lm, fused) = (v["am_logp"].as_f64().unwrap(), v["lm_logp"].as_f64().unwrap(), v["fused"].as_f64().unwrap());
        assert!(am <= 0.0 && lm <= 0.0);
        assert!((fused - (am + 0.5 * lm)).abs() < 1e-9);
    }
    let cer = ok(&["eval", "--ref", &run.p("data.jsonl"), "--hyp", &run.p("hyp.jsonl")]);
    let cer: f64 = String::from_utf8(cer.stdout).unwrap().trim().parse().unwrap();
    assert!(cer >= 0.0);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (Run::new(), Run::new());
    for run in [&a, &b] {
        run.prepare("9");
        run.decode("hyp.jsonl", &["--lm", &run.p("lm.txt")]);
    }
    for f in ["data.jsonl", "lm.txt", "model.ckpt", "model.ckpt.log.csv", "hyp.jsonl"] {
        let (x, y) = (std::fs::read(a.root.join(f)).unwrap(), std::fs::read(b.root.join(f)).unwrap());
        assert!(!x.is_empty(), "{f}");
        assert!(x == y, "{f} differs");
    }
    let c = Run::new();
    ok(&["synth", "--config", &c.p("cfg.json"), "--seed", "10", "--out", &c.p("data.jsonl")]);
    assert_ne!(std::fs::read(a.root.join("data.jsonl")).unwrap(), std::fs::read(c.root.join("data.jsonl")).unwrap());
}

#[test]
fn training_log_is_csv() {
    let run = Run::new();
    run.prepare("5");
    let log = std::fs::read_to_string(run.root.join("model.ckpt.log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "update,loss,grad_norm");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("5,"));
}

#[test]
fn gradcheck_exit_status() {
    let run = Run::new();
    let out = ok(&["gradcheck", "--config", &run.p("cfg.json")]);
    let err: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(err <= 1e-4, "{err}");
    let out = arsg(&["gradcheck", "--config", &run.p("cfg.json"), "--tolerance", "0"]);
    assert!(error_line(&out).starts_with("ERROR numeric: "));
}

#[test]
fn errors_are_one_line_with_category() {
    let run = Run::new();
    let missing = run.p("nope.jsonl");
    let line = error_line(&arsg(&["eval", "--ref", &missing, "--hyp", &missing]));
    assert!(line.starts_with("ERROR config: ") && line.contains("nope.jsonl"), "{line}");

    let line = error_line(&arsg(&["decode", "--frobnicate"]));
    assert!(line.starts_with("ERROR usage: "), "{line}");

    std::fs::write(run.root.join("bad.json"), r#"{"trian": {}}"#).unwrap();
    let line = error_line(&arsg(&["synth", "--config", &run.p("bad.json"), "--out", &run.p("x.jsonl")]));
    assert!(line.starts_with("ERROR config: "), "{line}");

    std::fs::write(run.root.join("garbage.ckpt"), b"not a checkpoint").unwrap();
    ok(&["synth", "--config", &run.p("cfg.json"), "--out", &run.p("data.jsonl")]);
    let out = arsg(&["decode", "--ckpt", &run.p("garbage.ckpt"), "--data", &run.p("data.jsonl"), "--out", &run.p("h.jsonl")]);
    assert!(error_line(&out).starts_with("ERROR format: "));

    let out = Command::new(env!("CARGO_BIN_EXE_arsg"))
        .args(["train", "--config", &run.p("cfg.json"), "--data", &run.p("data.jsonl"), "--out", &run.p("m.ckpt")])
        .env("ARSG_THREADS", "zero")
        .output()
        .unwrap();
    assert!(error_line(&out).contains("ARSG_THREADS"));
}

#[test]
fn help_exits_zero() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["synth", "lm-train", "train", "decode", "eval", "gradcheck"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
