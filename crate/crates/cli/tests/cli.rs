use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vbrep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbrep")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = vbrep(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every regular file under `dir`, relative path to contents.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_workflow_on_a_small_image() {
    let tmp = tempfile::tempdir().unwrap();
    let (bundle, noisy, rec, eval, gt) = (tmp.path().join("b"), tmp.path().join("n"), tmp.path().join("r"), tmp.path().join("e"), tmp.path().join("g"));
    ok(&["synth", "--scene", "box", "--width", "160", "--height", "120", "--out", p(&bundle), "--seed", "4"]);
    for f in ["depth.vbrd", "clean_depth.vbrd", "instances.vbri", "labels.json", "camera.json", "truth.json"] {
        assert!(bundle.join(f).is_file(), "{f}");
    }
    ok(&["noise", "--input", p(&bundle), "--out", p(&noisy)]);
    assert_ne!(fs::read(bundle.join("depth.vbrd")).unwrap(), fs::read(noisy.join("depth.vbrd")).unwrap());
    assert_eq!(fs::read(bundle.join("clean_depth.vbrd")).unwrap(), fs::read(noisy.join("clean_depth.vbrd")).unwrap());

    ok(&["reconstruct", "--input", p(&noisy), "--out", p(&rec), "--dump-stages"]);
    let doc = read_json(&rec.join("vbrep.json"));
    assert_eq!(doc["faces"].as_array().unwrap().len(), 3);
    assert!(rec.join("edges.obj").is_file() && rec.join("stages/wireframe.json").is_file());

    ok(&["gt-vbrep", "--input", p(&bundle), "--out", p(&gt)]);
    assert!(gt.join("vbrep.json").is_file());

    ok(&["eval", "--input", p(&bundle), "--out", p(&eval)]);
    let report = read_json(&eval.join("report.json"));
    assert!(report["chamfer"].as_f64().unwrap() < 1e-3, "{report}");
    assert!(report.get("wall_time").is_none_or(|w| w.is_null()));

    let export = tmp.path().join("x");
    ok(&["export", "--vbrep", p(&rec.join("vbrep.json")), "--out", p(&export)]);
    let text = fs::read_to_string(export.join("scene.obj")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("f ")) && text.lines().any(|l| l.starts_with("l ")));
}

#[test]
fn missing_labels_exit_with_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("b");
    ok(&["synth", "--scene", "cylinder", "--width", "64", "--height", "48", "--out", p(&bundle)]);
    fs::remove_file(bundle.join("labels.json")).unwrap();
    let out = vbrep(&["reconstruct", "--input", p(&bundle), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels.json"));
}

#[test]
fn outputs_are_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("b");
    ok(&["synth", "--scene", "step", "--width", "160", "--height", "120", "--out", p(&bundle), "--seed", "2"]);
    let runs: Vec<_> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = tmp.path().join(format!("e{t}"));
            ok(&["eval", "--input", p(&bundle), "--out", p(&out), "--threads", t, "--seed", "5"]);
            tree(&out)
        })
        .collect();
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn suite_eval_writes_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    ok(&["eval", "--suite", "2", "--width", "120", "--height", "90", "--out", p(&out), "--fit-only"]);
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["ablation"], "fit-only");
    let scenes = s["scenes"].as_array().unwrap();
    assert_eq!(scenes.len(), 2);
    let mean = scenes.iter().map(|e| e["report"]["chamfer"].as_f64().unwrap()).sum::<f64>() / 2.0;
    assert!((s["mean_chamfer"].as_f64().unwrap() - mean).abs() < 1e-15);
    for e in scenes {
        assert!(out.join(e["scene"].as_str().unwrap()).join("report.json").is_file());
    }
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(!vbrep(&["eval", "--out", "x"]).status.success());
    assert!(!vbrep(&["synth", "--scene", "dodecahedron", "--out", "x"]).status.success());
}
