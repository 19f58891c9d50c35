use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdfedit::geometry::{chamfer, load_mesh};

const TINY: &str = r#"{
    "dataset": {"count": 4, "mesh_resolution": 24, "sampling": {"n_surface": 1500, "n_uniform": 300}},
    "sdf": {"epochs": 40, "points_per_shape": 256, "batch_size": 512,
            "decoder": {"latent_dim": 8, "hidden_width": 16, "num_layers": 4, "skip_layer": 2, "bands": 2}},
    "regressor": {"hidden": [8, 8, 4], "epochs": 20},
    "editor": {"steps": 20, "batch_size": 8, "mlp_hidden": 8, "kan_hidden": 4},
    "metrics": {"resolution": 16, "chamfer_points": 300, "probes": 2}
}"#;

fn sdfedit(work: &Path, args: &[&str]) -> Output {
    let cfg = work.join("run.json");
    if !cfg.exists() {
        std::fs::create_dir_all(work).unwrap();
        std::fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_sdfedit"))
        .arg("--config")
        .arg(&cfg)
        .arg("--work")
        .arg(work)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn tmp() -> (tempfile::TempDir, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let w = d.path().join("work");
    (d, w)
}

#[test]
fn gen_data_is_deterministic() {
    let (_a, wa) = tmp();
    let (_b, wb) = tmp();
    ok(sdfedit(&wa, &["gen-data"]));
    ok(sdfedit(&wb, &["gen-data"]));
    let read = |w: &Path| std::fs::read(w.join("data/manifest.json")).unwrap();
    assert_eq!(read(&wa), read(&wb));
}

#[test]
fn missing_regressor_exits_two() {
    let (_d, w) = tmp();
    let o = sdfedit(&w, &["train-editor"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("regressor.json") && err.contains("train-regressor"), "{err}");
}

#[test]
fn unknown_config_key_fails() {
    let (_d, w) = tmp();
    std::fs::create_dir_all(&w).unwrap();
    std::fs::write(w.join("run.json"), r#"{"sdf": {"epoch": 3}}"#).unwrap();
    let o = sdfedit(&w, &["gen-data"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pipeline_end_to_end() {
    let (_d, w) = tmp();
    ok(sdfedit(&w, &["gen-data"]));
    ok(sdfedit(&w, &["train-sdf"]));
    ok(sdfedit(&w, &["train-regressor"]));
    ok(sdfedit(&w, &["train-editor"]));
    ok(sdfedit(&w, &["train-editor", "--variant", "kan"]));

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(w.join("data/manifest.json")).unwrap()).unwrap();
    let id = manifest["shapes"][0]["id"].as_str().unwrap().to_string();
    let rec = w.join("rec.obj");
    let zero = w.join("zero.obj");
    ok(sdfedit(&w, &["reconstruct", "--shape", &id, "--res", "16", "--out", rec.to_str().unwrap()]));
    let o = ok(sdfedit(&w, &["edit", "--shape", &id, "--attr", "total_height=0", "--res", "16", "--out", zero.to_str().unwrap()]));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["before"], report["after"]);
    let (a, b) = (load_mesh(&rec).unwrap(), load_mesh(&zero).unwrap());
    assert_eq!(chamfer(&a, &b, 500, 0).unwrap(), 0.0);

    let bad = sdfedit(&w, &["edit", "--shape", &id, "--attr", "total_height=1.5", "--out", zero.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));

    ok(sdfedit(&w, &["metrics", "--limit", "2"]));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(w.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["reconstruction"]["total"], 2);
    assert!(m["editing"]["mlp"]["total_height"]["monotone_fraction"].is_number());
    assert!(m["editing"]["kan"].is_object());

    ok(sdfedit(&w, &["embed"]));
    let coords = std::fs::read_to_string(w.join("embed/coords.csv")).unwrap();
    assert_eq!(coords.lines().count(), 5);
}
