use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn paclab(runs: &Path, cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paclab"))
        .args(args)
        .current_dir(cwd)
        .env("PACLAB_RUNS_DIR", runs)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// A 4-class, 16 px synthetic pair with its split, ready for training.
fn small_setup(tmp: &Path) -> PathBuf {
    let runs = tmp.join("runs");
    let o = paclab(&runs, tmp, &["synth", "--classes", "4", "--per-class", "10", "--size", "16", "--out", "d"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = paclab(&runs, tmp, &["split", "--synth-dir", "d", "--shots", "2", "--val-per-class", "2", "--out", "s.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    runs
}

#[test]
fn synth_writes_two_full_trees_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let args = ["synth", "--classes", "8", "--per-class", "200", "--seed", "0", "--out"];
    let o = paclab(&runs, tmp.path(), &[&args[..], &["a"]].concat());
    assert_eq!(code(&o), 0);
    let a_src = files_under(&tmp.path().join("a/source"));
    let a_tgt = files_under(&tmp.path().join("a/target"));
    assert_eq!(a_src.len(), 1600);
    assert_eq!(a_tgt.len(), 1600);
    let o = paclab(&runs, tmp.path(), &[&args[..], &["b"]].concat());
    assert_eq!(code(&o), 0);
    let b_all = files_under(&tmp.path().join("b/source"));
    for (x, y) in a_src.iter().zip(&b_all) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn missing_out_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = paclab(&tmp.path().join("runs"), tmp.path(), &["synth"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn train_writes_run_directory_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = small_setup(tmp.path());
    let o = paclab(
        &runs,
        tmp.path(),
        &[
            "train", "--method", "pac", "--pretrain", "rotation", "--split", "s.json", "--preset", "desk",
            "--steps", "6", "--pretrain-steps", "3", "--name", "first",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = runs.join("first");
    for f in ["manifest.json", "result.json", "metrics.jsonl", "metrics.csv", "best.ckpt"] {
        assert!(first.join(f).exists(), "{f}");
    }
    assert!(!first.join("INCOMPLETE").exists());

    let manifest = first.join("manifest.json");
    let o = paclab(&runs, tmp.path(), &["train", "--manifest", manifest.to_str().unwrap(), "--name", "second"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let read = |run: &str| std::fs::read(runs.join(run).join("metrics.jsonl")).unwrap();
    assert_eq!(read("first"), read("second"));

    let ck = first.join("best.ckpt");
    let o = paclab(&runs, tmp.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--split", "s.json"]);
    assert_eq!(code(&o), 0);
    let o = paclab(
        &runs,
        tmp.path(),
        &["analyze", "--checkpoint", ck.to_str().unwrap(), "--split", "s.json", "--embed-epochs", "50", "--classes", "0,1", "--name", "an"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let emb = std::fs::read_to_string(runs.join("an/embedding.csv")).unwrap();
    assert!(emb.starts_with("x,y,label,domain,is_labeled_target"));
    let o = paclab(
        &runs,
        tmp.path(),
        &["analyze", "--checkpoint", ck.to_str().unwrap(), "--split", "s.json", "--classes", "0,9"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn s_plus_t_with_cr_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = small_setup(tmp.path());
    let o = paclab(&runs, tmp.path(), &["train", "--method", "s_plus_t", "--cr", "--split", "s.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_failure_leaves_incomplete_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = small_setup(tmp.path());
    let o = paclab(
        &runs,
        tmp.path(),
        &["train", "--method", "s_plus_t", "--split", "s.json", "--steps", "20", "--lr-classifier", "1e30", "--name", "boom"],
    );
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(runs.join("boom/INCOMPLETE").exists());
}

#[test]
fn ablate_grid_has_four_cells_of_three_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = small_setup(tmp.path());
    let o = paclab(
        &runs,
        tmp.path(),
        &["ablate", "--split", "s.json", "--grid", "rot,cr", "--seeds", "3", "--steps", "3", "--pretrain-steps", "2", "--name", "ab"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(runs.join("ab/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for cell in ["none,false", "none,true", "rotation,false", "rotation,true"] {
        assert_eq!(rows.iter().filter(|r| r.contains(cell)).count(), 3, "{cell}");
    }
    let svg = tmp.path().join("ab.svg");
    let o = paclab(&runs, tmp.path(), &["plot", "--style", "ablation", "--input", runs.join("ab/ablation.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
}

#[test]
fn sweep_over_tau_feeds_threshold_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = small_setup(tmp.path());
    let o = paclab(
        &runs,
        tmp.path(),
        &["sweep", "--over", "tau", "--split", "s.json", "--methods", "pac", "--seeds", "1", "--steps", "2", "--name", "tau"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = runs.join("tau/sweep.csv");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);
    let svg = tmp.path().join("t.svg");
    let o = paclab(&runs, tmp.path(), &["plot", "--style", "threshold", "--input", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(svg).unwrap();
    assert_eq!(text.matches("<circle").count(), 6);
}

#[test]
fn embedding_plot_uses_three_marker_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("e.csv");
    std::fs::write(
        &csv,
        "x,y,label,domain,is_labeled_target\n0,0,0,source,0\n1,1,1,source,0\n2,0,0,target,0\n0,2,1,target,1\n",
    )
    .unwrap();
    let svg = tmp.path().join("e.svg");
    let o = paclab(&tmp.path().join("runs"), tmp.path(), &["plot", "--style", "embedding", "--input", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(svg).unwrap();
    // Hollow source circles, filled target circles, and crosses drawn as lines.
    assert!(text.contains("fill=\"none\""));
    assert_eq!(text.matches("<circle").count(), 3);
    assert!(text.matches("<polyline").count() + text.matches("<line").count() >= 2);
}

#[test]
fn plot_rejects_empty_and_malformed_input() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "tau,mean_accuracy\n").unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    for input in [&empty, &bad] {
        let o = paclab(&runs, tmp.path(), &["plot", "--style", "threshold", "--input", input.to_str().unwrap(), "--out", "x.svg"]);
        assert_eq!(code(&o), 2);
    }
}
