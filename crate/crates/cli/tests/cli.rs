use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 11

[synth]
n_speakers = 5
n_pos = 24
n_neg = 10
neg_duration_s = [1.0, 2.0]
noise_clips = 1

[prepare]
min_holdout = 2
train_cap = 8
eval_cap = 3

[train]
batch_size = 8
checkpoint_every = 3

[train.architecture]
input_dim = 40
layers = [{ nodes = 8, memory = 2 }]
"#;

/// Runs the binary in `dir` with a whitespace-separated argument line.
fn wakeword(dir: &Path, line: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wakeword"))
        .current_dir(dir)
        .args(line.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, line: &str) -> Output {
    let out = wakeword(dir, line);
    assert!(out.status.success(), "`{line}` failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Synthetic corpus, prepared train/eval manifests and a 50 % split.
fn prepared(dir: &Path) {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(dir, "--config tiny.toml synth --out corpus");
    ok(dir, "--config tiny.toml prepare --manifest corpus/manifest.jsonl --out prep");
    ok(dir, "--config tiny.toml split --manifest prep/train.jsonl --x 50 --out splits");
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn ids(path: &Path) -> HashSet<String> {
    jsonl(path).iter().map(|v| v["id"].as_str().unwrap().to_string()).collect()
}

#[test]
fn split_views_nest_as_x_grows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(dir, "--config tiny.toml split --manifest prep/train.jsonl --x 20 --out splits");
    let a20 = ids(&dir.join("splits/A20.jsonl"));
    let a50 = ids(&dir.join("splits/A50.jsonl"));
    let b50 = ids(&dir.join("splits/B50.jsonl"));
    let pool = ids(&dir.join("prep/train.jsonl"));
    assert!(!a20.is_empty());
    assert!(a20.is_subset(&a50));
    assert!(a50.is_disjoint(&b50));
    assert_eq!(a50.union(&b50).cloned().collect::<HashSet<_>>(), pool);
    assert!(dir.join("splits/split-x20.config.toml").exists());
    assert!(dir.join("splits/split-x50.config.toml").exists());
}

#[test]
fn hybrid_log_switches_loss_at_epoch_90() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(
        dir,
        "--config tiny.toml train --regime hybrid --switch-epoch 90 --epochs 180 \
         --train-a splits/A50.jsonl --train-b splits/B50.jsonl --out run",
    );
    let log = jsonl(&dir.join("run/metrics.jsonl"));
    assert_eq!(log.len(), 180);
    for (e, m) in log.iter().enumerate() {
        assert_eq!(m["epoch"].as_u64().unwrap() as usize, e);
        let lr = m["lr"].as_f64().unwrap();
        if e < 90 {
            assert_eq!(m["regime_phase"], "ce", "epoch {e}");
            let expected = if e < 60 { 5e-3 } else { 5e-3 * 0.96f64.powi((e - 60 + 1) as i32) };
            assert!((lr - expected).abs() <= 1e-15, "epoch {e}: lr {lr}");
        } else {
            assert_eq!(m["regime_phase"], "ctc", "epoch {e}");
            assert_eq!(lr, 5e-4);
        }
    }
    assert!(dir.join("run/checkpoints/switch.wwd").exists());
    assert!(dir.join("run/checkpoints/epoch_0180.wwd").exists());
    assert!(dir.join("run/final.wwd").exists());
    let echo = fs::read_to_string(dir.join("run/train.config.toml")).unwrap();
    assert!(echo.contains("hybrid_switch_epoch = 90") && echo.contains("total_epochs = 180"));
}

#[test]
fn eval_without_negatives_fails_on_fah_denominator() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(dir, "--config tiny.toml train --regime ce --epochs 2 --train-a splits/A50.jsonl --out run");
    let positives: String = fs::read_to_string(dir.join("prep/eval.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["label"] == "positive")
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(!positives.is_empty());
    fs::write(dir.join("prep/eval_pos.jsonl"), positives).unwrap();
    ok(dir, "--config tiny.toml decode --checkpoint run/final.wwd --manifest prep/eval_pos.jsonl --out dec");
    let out = wakeword(dir, "eval --decoded dec --out ev");
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("FAh") && err.contains("denominator"), "{err}");
    assert!(!dir.join("ev/det.csv").exists());
}

#[test]
fn failures_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let missing = wakeword(dir, "split --manifest nope.jsonl --x 20 --out s");
    assert_eq!(missing.status.code(), Some(3));

    fs::write(dir.join("bad.toml"), "[train]\nepochs = 3\n").unwrap();
    let unknown = wakeword(dir, "--config bad.toml split --x 20 --out s");
    assert_eq!(unknown.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("epochs"));

    prepared(dir);
    ok(dir, "--config tiny.toml train --regime ce --epochs 1 --train-a splits/A50.jsonl --out run");
    fs::write(dir.join("narrow.toml"), "[train.architecture]\ninput_dim = 20\nlayers = [{ nodes = 8, memory = 2 }]\n")
        .unwrap();
    let mismatch =
        wakeword(dir, "--config narrow.toml decode --checkpoint run/final.wwd --manifest prep/eval.jsonl --out d");
    assert_eq!(mismatch.status.code(), Some(4), "{}", String::from_utf8_lossy(&mismatch.stderr));

    let bad_split = wakeword(dir, "split --manifest prep/train.jsonl --x 101 --out s");
    assert_eq!(bad_split.status.code(), Some(4));

    let usage = wakeword(dir, "train --regime sideways");
    assert_eq!(usage.status.code(), Some(2));
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn full_run(dir: &Path) {
    prepared(dir);
    for line in [
        "train --regime hybrid --epochs 4 --switch-epoch 2 --train-a splits/A50.jsonl --train-b splits/B50.jsonl --out run",
        "decode --checkpoint run/final.wwd --manifest prep/eval.jsonl --out dec",
        "eval --decoded dec --target-fah 1000 --out ev",
        "latency --ce dec --ctc dec --out lat",
        "plot det --input ev/det.csv --out plots/det.svg",
    ] {
        ok(dir, &format!("--config tiny.toml {line}"));
    }
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_run(t1.path());
    full_run(t2.path());
    let (s1, s2) = (snapshot(t1.path()), snapshot(t2.path()));
    assert_eq!(s1.keys().collect::<Vec<_>>(), s2.keys().collect::<Vec<_>>());
    for (name, bytes) in &s1 {
        assert!(bytes == &s2[name], "{name} differs between runs");
    }
    for must in [
        "corpus/manifest.jsonl",
        "run/final.wwd",
        "dec/streams.jsonl",
        "ev/det.csv",
        "lat/latency.csv",
        "plots/det.svg",
        "corpus/synth.config.toml",
        "prep/prepare.config.toml",
        "run/train.config.toml",
        "dec/decode.config.toml",
        "ev/eval.config.toml",
        "lat/latency.config.toml",
    ] {
        assert!(s1.contains_key(must), "{must} missing");
    }
}

#[test]
fn resolved_echo_reruns_the_same_decode() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(dir, "--config tiny.toml train --regime ce --epochs 2 --train-a splits/A50.jsonl --out run");
    ok(dir, "--config tiny.toml decode --checkpoint run/final.wwd --manifest prep/eval.jsonl --smooth 5 --out dec");
    fs::copy(dir.join("dec/decode.config.toml"), dir.join("echo.toml")).unwrap();
    ok(dir, "--config echo.toml decode --out dec2");
    assert_eq!(fs::read(dir.join("dec/streams.jsonl")).unwrap(), fs::read(dir.join("dec2/streams.jsonl")).unwrap());
    assert_eq!(fs::read(dir.join("dec/events.csv")).unwrap(), fs::read(dir.join("dec2/events.csv")).unwrap());
}
