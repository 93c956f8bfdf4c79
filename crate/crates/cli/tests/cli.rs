use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gnt_cli::PALETTE;
use gnt_core::data::read_dataset;
use gnt_core::image::{read_pfm, read_ppm};

fn gnt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnt"))
        .args(args)
        .current_dir(cwd)
        .env("GNT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn dataset(dir: &Path, name: &str, n_views: usize) -> PathBuf {
    let n = n_views.to_string();
    ok(&gnt(&["make-dataset", "--seed", "3", "--n-views", &n, "--dims", "16x16", "--out", name], dir));
    dir.join(name)
}

fn trained(dir: &Path, data: &str, steps: usize, extra: &[&str]) -> PathBuf {
    let steps = steps.to_string();
    let mut args = vec![
        "train", "--data", data, "--out", "ck", "--model", "tiny", "--steps", &steps, "--rays", "16", "--samples", "6",
    ];
    args.extend_from_slice(extra);
    ok(&gnt(&args, dir));
    dir.join("ck")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn make_dataset_is_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(tmp.path(), "a", 4);
    let b = dataset(tmp.path(), "b", 4);
    assert_eq!(files(&a), files(&b));
    let names: Vec<String> = files(&a).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"scene.json".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".ppm")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".pfm")).count(), 4);
}

#[test]
fn make_dataset_summary_is_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&gnt(&["make-dataset", "--n-views", "3", "--dims", "16", "--out", "d"], tmp.path()));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n_views"], 3);
    assert_eq!(v["width"], 16);
    assert!(v["near"].as_f64().unwrap() < v["far"].as_f64().unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let one = gnt(&["make-dataset", "--n-views", "1", "--out", "d"], p);
    assert_eq!(code(&one), 2);
    assert!(String::from_utf8_lossy(&one.stderr).contains("--n-views"));
    assert_eq!(code(&gnt(&["train", "--out", "x"], p)), 2);
    assert_eq!(code(&gnt(&["train", "--data", "missing", "--out", "x"], p)), 2);
    assert_eq!(code(&gnt(&["render", "--bogus"], p)), 2);
    assert_eq!(code(&gnt(&["make-dataset", "--out", "d", "--shading", "glossy"], p)), 2);
    assert_eq!(code(&gnt(&[], p)), 2);
}

#[test]
fn train_writes_one_log_line_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "d", 4);
    let ck = trained(tmp.path(), "d", 10, &[]);
    let log = fs::read_to_string(ck.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }
    assert!(ck.join("manifest.json").exists() && ck.join("weights.bin").exists());
}

#[test]
fn renderer_flag_selects_the_head() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "d", 4);
    let ck = trained(tmp.path(), "d", 3, &["--renderer", "volumetric"]);
    let manifest = fs::read_to_string(ck.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"volumetric\""));
    assert!(manifest.contains("vol."));
    assert_eq!(code(&gnt(&["train", "--data", "d", "--out", "e", "--renderer", "nerf"], tmp.path())), 2);
}

#[test]
fn diverging_training_exits_3_with_dump() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "d", 4);
    let out = gnt(
        &[
            "train", "--data", "d", "--out", "ck", "--model", "tiny", "--steps", "5", "--rays", "16", "--samples", "6",
            "--lr-gnt", "1e30", "--lr-encoder", "1e30",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 3);
    assert!(fs::read_dir(tmp.path().join("ck"))
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().starts_with("nonfinite_step_")));
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "d", 4);
    fs::write(
        tmp.path().join("run.json"),
        r#"{"data": "d", "out": "ck", "model": "tiny", "steps": 4, "rays": 16, "samples": 6}"#,
    )
    .unwrap();
    ok(&gnt(&["--config-file", "run.json", "train", "--steps", "2"], tmp.path()));
    assert_eq!(fs::read_to_string(tmp.path().join("ck/log.jsonl")).unwrap().lines().count(), 2);
    fs::write(tmp.path().join("bad.json"), r#"{"stepz": 4}"#).unwrap();
    assert_eq!(code(&gnt(&["--config-file", "bad.json", "train"], tmp.path())), 2);
}

#[test]
fn render_matches_dataset_dims_and_fine_zero_is_default() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let ds = read_dataset(&dataset(p, "d", 4)).unwrap();
    trained(p, "d", 3, &[]);
    ok(&gnt(&["render", "--ckpt", "ck", "--data", "d", "--view", "2", "--out", "a.ppm", "--depth", "a.pfm"], p));
    ok(&gnt(&["render", "--ckpt", "ck", "--data", "d", "--view", "2", "--out", "b.ppm", "--fine", "0"], p));
    let a = read_ppm(&p.join("a.ppm")).unwrap();
    assert_eq!((a.width, a.height), (ds.width(), ds.height()));
    assert_eq!(fs::read(p.join("a.ppm")).unwrap(), fs::read(p.join("b.ppm")).unwrap());
    let depth = read_pfm(&p.join("a.pfm")).unwrap();
    assert_eq!((depth.width, depth.height), (ds.width(), ds.height()));
    ok(&gnt(&["render", "--ckpt", "ck", "--data", "d", "--view", "2", "--out", "c.ppm", "--fine", "4"], p));
    assert_eq!(code(&gnt(&["render", "--ckpt", "ck", "--data", "d", "--view", "4", "--out", "x.ppm"], p)), 2);
}

#[test]
fn eval_reports_sentinels_lpips_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    dataset(p, "d", 4);
    let gt: serde_json::Value =
        serde_json::from_str(&ok(&gnt(&["eval", "--data", "d", "--holdout", "1,3", "--gt-self"], p))).unwrap();
    assert_eq!(gt["mean"]["psnr"], "inf");
    assert_eq!(gt["mean"]["ssim"], 1.0);
    assert!(gt["mean"].get("avg").is_none());

    trained(p, "d", 3, &["--holdout", "3"]);
    let run = || ok(&gnt(&["eval", "--ckpt", "ck", "--data", "d", "--holdout", "3"], p));
    let first = run();
    assert_eq!(first, run());
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert!(v["views"][0]["psnr"].as_f64().unwrap().is_finite());
    assert!(v["mean"].get("avg").is_none());

    fs::write(p.join("lp.json"), r#"{"3": 0.2}"#).unwrap();
    let out = ok(&gnt(&["eval", "--ckpt", "ck", "--data", "d", "--holdout", "3", "--lpips-file", "lp.json"], p));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["mean"]["lpips"], 0.2);
    assert!(v["mean"]["avg"].as_f64().unwrap() > 0.0);
    fs::write(p.join("short.json"), "[]").unwrap();
    assert_eq!(
        code(&gnt(&["eval", "--ckpt", "ck", "--data", "d", "--holdout", "3", "--lpips-file", "short.json"], p)),
        2
    );
}

fn palette_index(px: &[f32]) -> Option<usize> {
    let rgb: Vec<u8> = px.iter().map(|v| (v * 255.0).round() as u8).collect();
    PALETTE.iter().position(|c| c[..] == rgb[..])
}

#[test]
fn attn_viz_uses_palette_and_bounded_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let ds = read_dataset(&dataset(p, "d", 4)).unwrap();
    trained(p, "d", 3, &[]);
    let out = ok(&gnt(&["attn-viz", "--ckpt", "ck", "--data", "d", "--view", "0", "--out-prefix", "v"], p));
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    let sources: Vec<usize> = summary["sources"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["view"].as_u64().unwrap() as usize)
        .collect();
    let map = read_ppm(&p.join("v_viewimportance.ppm")).unwrap();
    for px in map.data.chunks_exact(3) {
        let idx = palette_index(px).expect("pixel colored from the palette");
        assert!(sources.iter().any(|s| s % PALETTE.len() == idx));
    }
    let depth = read_pfm(&p.join("v_depth.pfm")).unwrap();
    for &d in &depth.data {
        let d = d as f64;
        assert!(d >= ds.near * (1.0 - 1e-6) && d <= ds.far * (1.0 + 1e-6), "{d}");
    }
}

#[test]
fn attn_viz_with_one_source_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    dataset(p, "d", 2);
    trained(p, "d", 1, &[]);
    ok(&gnt(&["attn-viz", "--ckpt", "ck", "--data", "d", "--view", "1", "--out-prefix", "v"], p));
    let map = read_ppm(&p.join("v_viewimportance.ppm")).unwrap();
    let first = map.data[..3].to_vec();
    assert_eq!(palette_index(&first), Some(0));
    assert!(map.data.chunks_exact(3).all(|px| px == &first[..]));
}

#[test]
fn gradcheck_tiny_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gnt(&["gradcheck", "--config", "tiny"], tmp.path());
    let stdout = ok(&out);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["groups"].as_array().unwrap().len(), 6);
    assert!(String::from_utf8_lossy(&out.stderr).contains("worst:"));
    assert_eq!(code(&gnt(&["gradcheck", "--config", "huge"], tmp.path())), 2);
}
