use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haze_core::io;
use haze_core::synthetic::{road_depth, road_intrinsics, textured_clear};
use serde_json::Value;
use tempfile::TempDir;

const H: usize = 24;
const W: usize = 72;

fn haze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haze"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(p: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(p)
}

/// Clear/depth directories with `n` scenes plus an intrinsics file.
fn inputs(root: &Path, n: usize) -> (PathBuf, PathBuf, PathBuf) {
    let clear = root.join("clear");
    let depth = root.join("depth");
    fs::create_dir_all(&clear).unwrap();
    fs::create_dir_all(&depth).unwrap();
    for k in 0..n {
        let seed = 100 + k as u64;
        io::save_raster_pfm(&clear.join(format!("scene{k}.pfm")), &textured_clear(H, W, seed)).unwrap();
        io::save_scalar_pfm(&depth.join(format!("scene{k}.pfm")), &road_depth(H, W, seed)).unwrap();
    }
    let intr = root.join("intrinsics.json");
    io::write_json(&intr, &road_intrinsics(H, W)).unwrap();
    (clear, depth, intr)
}

fn synthesize(root: &Path, n: usize, scales: &str) -> (Output, PathBuf) {
    let (clear, depth, intr) = inputs(root, n);
    let out = root.join("hazy");
    let o = haze(&[
        "synthesize",
        "--clear-dir",
        s(&clear),
        "--depth-dir",
        s(&depth),
        "--intrinsics",
        s(&intr),
        "--out",
        s(&out),
        "--scales",
        scales,
        "--seed",
        "7",
    ]);
    (o, out)
}

fn read(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synthesize_three_images_five_scales() {
    let dir = TempDir::new().unwrap();
    let (o, out) = synthesize(dir.path(), 3, "0.1,0.3,0.5,0.8,1");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read(&out.join("manifest.json"));
    assert_eq!(m["records"].as_array().unwrap().len(), 15);
    assert_eq!(m["schema"], "haze/v1");
    assert_eq!(stdout(&o).matches("3 image(s)").count(), 5);
}

#[test]
fn synthesize_missing_depth_is_input_error() {
    let dir = TempDir::new().unwrap();
    let (clear, depth, intr) = inputs(dir.path(), 3);
    fs::remove_file(depth.join("scene1.pfm")).unwrap();
    let o = haze(&[
        "synthesize",
        "--clear-dir",
        s(&clear),
        "--depth-dir",
        s(&depth),
        "--intrinsics",
        s(&intr),
        "--out",
        s(&dir.path().join("hazy")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scene1.pfm"), "{}", stderr(&o));
}

#[test]
fn full_visibility_scale_leaves_epsilon_at_reference_distance() {
    let dir = TempDir::new().unwrap();
    let (o, out) = synthesize(dir.path(), 1, "1.0");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read(&out.join("manifest.json"));
    let rec = &m["records"][0];
    let a: Vec<f64> = rec["A"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let hazy = io::load_raster(&out.join(rec["hazy"].as_str().unwrap())).unwrap();
    let clear = textured_clear(H, W, 100);
    let range = haze_core::geometry::depth_to_range(&road_depth(H, W, 100), &road_intrinsics(H, W)).unwrap();
    let far = range.values().iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
    let (i, j) = (far / W, far % W);
    for c in 0..3 {
        let (hz, cl) = (hazy.pixel(i, j)[c], clear.pixel(i, j)[c]);
        // farthest pixel sits exactly one visibility away
        let t = (hz - a[c]) / (cl - a[c]);
        assert!((t - 0.05).abs() < 1e-4, "T = {t}");
    }
    let moved = hazy
        .values()
        .iter()
        .zip(clear.values())
        .enumerate()
        .all(|(q, (h, c))| (h - a[q % 3]).abs() <= (c - a[q % 3]).abs() + 1e-6);
    assert!(moved);
}

fn decompose_batch(manifest: &Path, out: &Path, jobs: &str) -> Output {
    haze(&[
        "decompose",
        "--manifest",
        s(manifest),
        "--mode",
        "full",
        "--out",
        s(out),
        "--jobs",
        jobs,
    ])
}

#[test]
fn decompose_batch_recovers_visibility() {
    let dir = TempDir::new().unwrap();
    let (o, hazy) = synthesize(dir.path(), 5, "0.3,0.8");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("dec");
    let o = decompose_batch(&hazy.join("manifest.json"), &out, "2");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = read(&out.join("summary.json"));
    assert_eq!(summary["samples"], 10);
    assert_eq!(summary["failures"], 0);
    let mape = summary["mape_visibility"].as_f64().unwrap();
    assert!(mape <= 5.0, "MAPE(V) {mape}");
    assert!(stdout(&o).contains("MAPE(V)"));
    assert!(out.join("scene0_vrel0.300_range.pfm").exists());
    assert!(out.join("scene0_vrel0.300_mask.png").exists());
    assert_eq!(read(&out.join("scene0_vrel0.300_params.json"))["schema"], "haze/v1");
}

#[test]
fn decompose_batch_is_deterministic_across_job_counts() {
    let dir = TempDir::new().unwrap();
    let (_, hazy) = synthesize(dir.path(), 2, "0.5");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(decompose_batch(&hazy.join("manifest.json"), &a, "1").status.code(), Some(0));
    assert_eq!(decompose_batch(&hazy.join("manifest.json"), &b, "2").status.code(), Some(0));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn degenerate_pair_is_recorded_and_batch_continues() {
    let dir = TempDir::new().unwrap();
    let (_, hazy) = synthesize(dir.path(), 2, "0.5");
    // replace one hazy image by its clear source
    let clear = io::load_raster(&dir.path().join("clear/scene1.pfm")).unwrap();
    io::save_raster_pfm(&hazy.join("scene1_vrel0.500.pfm"), &clear).unwrap();
    let out = dir.path().join("dec");
    let o = decompose_batch(&hazy.join("manifest.json"), &out, "1");
    assert_eq!(o.status.code(), Some(3));
    let summary = read(&out.join("summary.json"));
    assert_eq!(summary["failures"], 1);
    let recs = summary["records"].as_array().unwrap();
    assert_eq!(recs[0]["ok"], true);
    assert_eq!(recs[1]["ok"], false);
    assert!(recs[1]["error"].as_str().unwrap().contains("coincide"));
    assert!(out.join("scene0_vrel0.500_range.pfm").exists());
}

#[test]
fn decompose_single_pair_with_known_params() {
    let dir = TempDir::new().unwrap();
    let (_, hazy) = synthesize(dir.path(), 1, "0.5");
    let m = read(&hazy.join("manifest.json"));
    let rec = &m["records"][0];
    let known = dir.path().join("known.json");
    fs::write(&known, format!(r#"{{"A": {}, "V": {}}}"#, rec["A"], rec["V_abs"])).unwrap();
    let out = dir.path().join("one");
    let o = haze(&[
        "decompose",
        "--hazy",
        s(&hazy.join(rec["hazy"].as_str().unwrap())),
        "--clear",
        s(&dir.path().join("clear/scene0.pfm")),
        "--known",
        s(&known),
        "--mode",
        "fix-av",
        "--id",
        "x",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("x  V="));
    assert!(out.join("x_range.pfm").exists());

    // modes that estimate visibility need anchors
    let o = haze(&[
        "decompose",
        "--hazy",
        s(&hazy.join(rec["hazy"].as_str().unwrap())),
        "--clear",
        s(&dir.path().join("clear/scene0.pfm")),
        "--known",
        s(&known),
        "--mode",
        "fix-a",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn decompose_single_degenerate_pair_exits_three() {
    let dir = TempDir::new().unwrap();
    let (clear, _, _) = inputs(dir.path(), 1);
    let img = clear.join("scene0.pfm");
    let known = dir.path().join("known.json");
    fs::write(&known, r#"{"A": [0.8, 0.8, 0.8], "V": 30.0}"#).unwrap();
    let o = haze(&[
        "decompose",
        "--hazy",
        s(&img),
        "--clear",
        s(&img),
        "--known",
        s(&known),
        "--mode",
        "fix-av",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn dehaze_with_true_parameters_restores_clear_image() {
    let dir = TempDir::new().unwrap();
    let (_, hazy) = synthesize(dir.path(), 1, "0.8");
    let m = read(&hazy.join("manifest.json"));
    let rec = &m["records"][0];
    let range = haze_core::geometry::depth_to_range(&road_depth(H, W, 100), &road_intrinsics(H, W)).unwrap();
    let range_path = dir.path().join("range.pfm");
    io::save_scalar_pfm(&range_path, &range).unwrap();
    let a = rec["A"].as_array().unwrap();
    let rgb = format!("{},{},{}", a[0], a[1], a[2]);
    let out = dir.path().join("dehazed.pfm");
    let o = haze(&[
        "dehaze",
        "--hazy",
        s(&hazy.join(rec["hazy"].as_str().unwrap())),
        "--range",
        s(&range_path),
        "--airlight",
        &rgb,
        "--visibility",
        &rec["V_abs"].to_string(),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let restored = io::load_raster(&out).unwrap();
    let clear = textured_clear(H, W, 100);
    let err = restored
        .values()
        .iter()
        .zip(clear.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // PFM stores f32
    assert!(err < 1e-4, "max error {err}");
}

#[test]
fn eval_depth_identical_maps_give_zero_error() {
    let dir = TempDir::new().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for k in 0..2 {
        let d = road_depth(H, W, k);
        io::save_scalar_pfm(&pred.join(format!("f{k}.pfm")), &d).unwrap();
        io::save_scalar_pfm(&gt.join(format!("f{k}.pfm")), &d).unwrap();
    }
    let report = dir.path().join("depth.json");
    let o = haze(&["eval-depth", "--pred", s(&pred), "--gt", s(&gt), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = read(&report);
    assert_eq!(r["schema"], "haze/v1");
    let all = &r["overall"];
    for k in ["abs_rel", "sq_rel", "rms", "rms_log"] {
        assert_eq!(all[k].as_f64().unwrap(), 0.0, "{k}");
    }
    for k in ["delta_1", "delta_2", "delta_3"] {
        assert_eq!(all[k].as_f64().unwrap(), 1.0, "{k}");
    }
    assert_eq!(all["valid_pixel_count"], 2 * H * W);
    let header = stdout(&o).lines().next().unwrap().to_owned();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["image", "AbsRel", "SqRel", "RMS", "RMSlog", "d1", "d2", "d3"]);
}

#[test]
fn eval_depth_unpaired_directories_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    io::save_scalar_pfm(&gt.join("f0.pfm"), &road_depth(H, W, 0)).unwrap();
    let o = haze(&["eval-depth", "--pred", s(&pred), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_scalar_hand_case() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("v.csv");
    fs::write(&csv, "pred,gt\n1,2\n3,2\n").unwrap();
    let report = dir.path().join("r.json");
    let o = haze(&["eval-scalar", "--csv", s(&csv), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = read(&report);
    assert!((r["mape"].as_f64().unwrap() - 50.0).abs() < 1e-12);
    assert!((r["mae"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    fs::write(&csv, "pred,gt\n1,0\n").unwrap();
    assert_eq!(haze(&["eval-scalar", "--csv", s(&csv)]).status.code(), Some(3));
}

#[test]
fn fit_and_predict_linear_fixture() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    let o = haze(&[
        "fit-pm25",
        "--csv",
        s(&fixture("pm25_linear.csv")),
        "--order",
        "1",
        "--out",
        s(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read(&model);
    let c: Vec<f64> = m["models"][0]["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((c[0] - 100.0).abs() < 1e-9 && (c[1] + 50.0).abs() < 1e-9, "{c:?}");

    let report = dir.path().join("p.json");
    let o = haze(&[
        "predict-pm25",
        "--model",
        s(&model),
        "--visibility",
        "0.5,1",
        "--report",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = read(&report);
    assert!((p["predictions"][0]["pm25"].as_f64().unwrap() - 75.0).abs() < 1e-9);
    assert!((p["predictions"][1]["pm25"].as_f64().unwrap() - 50.0).abs() < 1e-9);

    assert_eq!(
        haze(&["predict-pm25", "--model", s(&model), "--visibility", "1.5"]).status.code(),
        Some(3)
    );
    // two distinct visibilities cannot pin down a cubic
    let csv = dir.path().join("two.csv");
    fs::write(&csv, "visibility,pm25\n0.2,90\n0.4,80\n0.2,91\n0.4,79\n").unwrap();
    let o = haze(&["fit-pm25", "--csv", s(&csv), "--order", "3", "--out", s(&model)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn fit_pm25_humidity_bins() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("rh.csv");
    let mut text = String::from("visibility,pm25,relative_humidity\n");
    for i in 1..=10 {
        let v = i as f64 / 10.0;
        text += &format!("{v},{},0.3\n", 100.0 - 50.0 * v);
        text += &format!("{v},{},0.9\n", 80.0 - 20.0 * v);
    }
    fs::write(&csv, text).unwrap();
    let model = dir.path().join("m.json");
    let o = haze(&[
        "fit-pm25", "--csv", s(&csv), "--order", "1", "--rh-bins", "0,0.5,0.7,1", "--out", s(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let m = read(&model);
    assert_eq!(m["models"].as_array().unwrap().len(), 2);
    let o = haze(&["predict-pm25", "--model", s(&model), "--visibility", "0.5", "--rh", "1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("70.0000"));
    let o = haze(&["predict-pm25", "--model", s(&model), "--visibility", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_seed_zero_passes() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("g.json");
    let o = haze(&["gradcheck", "--seed", "0", "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS"));
    let r = read(&report);
    assert_eq!(r["passed"], true);
    assert_eq!(r["entries"].as_array().unwrap().len(), 36);

    let again = dir.path().join("g2.json");
    haze(&["gradcheck", "--seed", "0", "--report", s(&again)]);
    assert_eq!(fs::read(&report).unwrap(), fs::read(&again).unwrap());
}
