use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ise_core::experiments::{DatasetConfig, Mode};
use ise_core::fixtures::seeded_images;
use ise_core::image::save_raster;
use ise_core::template::{make_random_bank, Provenance};
use ise_core::{GroupSpec, Image, Signature, TemplateBank};
use sha2::{Digest, Sha256};

fn ise(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ise")).args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_json(dir: &Path, name: &str, v: serde_json::Value) {
    fs::write(dir.join(name), v.to_string()).unwrap();
}

// ---------------------------------------------------------------- exit codes

#[test]
fn default_invariance_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ise(&["check", "invariance", "--out", "r"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("r/check-invariance.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["assertions"].as_array().unwrap().len(), 6);
}

#[test]
fn failed_assertion_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    write_json(tmp.path(), "c.json", serde_json::json!({ "tolerance": -1.0, "images": 2 }));
    let out = ise(&["check", "invariance", "--config", "c.json"], tmp.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn over_budget_stability_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    write_json(
        tmp.path(),
        "c.json",
        serde_json::json!({ "stability": { "pooling": { "kind": "cdf_bins", "n": 16, "delta": 0.125, "s": 0.1 } } }),
    );
    let out = ise(&["check", "stability", "--config", "c.json"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Lipschitz budget exceeded"));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&ise(&["gen-data", "--config", "bad.json"], tmp.path())), 2);
    assert_eq!(code(&ise(&["gen-data"], tmp.path())), 2);
    assert_eq!(code(&ise(&["check", "nonsense"], tmp.path())), 2);
}

#[test]
fn missing_files_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&ise(&["gen-data", "--config", "absent.json"], tmp.path())), 3);
}

#[test]
fn unreadable_data_files_exit_four() {
    let tmp = tempfile::tempdir().unwrap();
    let bank = make_random_bank(&GroupSpec::Torus2D { w: 4, h: 4 }, 2, 1).unwrap();
    bank.save(tmp.path().join("bank.json")).unwrap();
    fs::write(tmp.path().join("img.pgm"), b"P6\n4 4\n255\n").unwrap();
    fs::write(tmp.path().join("img.png"), b"").unwrap();
    fs::write(tmp.path().join("img.json"), b"[1, 2").unwrap();
    for img in ["img.pgm", "img.png", "img.json"] {
        let out = ise(&["signature", "--image", img, "--bank", "bank.json", "--pooling", r#"{"kind":"max"}"#], tmp.path());
        assert_eq!(code(&out), 4, "{img}");
    }
}

// ---------------------------------------------------------------- gen-data

#[test]
fn gen_data_layout_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_json(root, "rect.json", serde_json::to_value(DatasetConfig::standard(Mode::Rectified)).unwrap());
    write_json(root, "unrect.json", serde_json::to_value(DatasetConfig::standard(Mode::Unrectified)).unwrap());
    assert_eq!(code(&ise(&["gen-data", "--config", "rect.json", "--seed", "5", "--out", "r"], root)), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(root.join("r/manifest.json")).unwrap()).unwrap();
    let samples = manifest["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 100);
    assert!(samples.iter().all(|s| s["element"] == 0));
    assert!(root.join("r/previews/0099.pgm").exists());

    for dir in ["u1", "u2"] {
        assert_eq!(code(&ise(&["gen-data", "--config", "unrect.json", "--seed", "5", "--out", dir], root)), 0);
    }
    let digest = |dir: &str| {
        let mut h = Sha256::new();
        let mut names: Vec<_> = fs::read_dir(root.join(dir).join("images")).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.push(root.join(dir).join("manifest.json"));
        for n in names {
            h.update(fs::read(n).unwrap());
        }
        hex::encode(h.finalize())
    };
    assert_eq!(digest("u1"), digest("u2"));
    assert_ne!(digest("u1"), digest("r"));
}

#[test]
fn sample_complexity_reads_generated_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = DatasetConfig { samples_per_class: 6, ..DatasetConfig::standard(Mode::Unrectified) };
    write_json(root, "data.json", serde_json::to_value(&cfg).unwrap());
    assert_eq!(code(&ise(&["gen-data", "--config", "data.json", "--seed", "1", "--out", "fixtures/d"], root)), 0);
    fs::create_dir(root.join("configs")).unwrap();
    write_json(
        &root.join("configs"),
        "sc.json",
        serde_json::json!({
            "datasets": [{ "dir": "d" }],
            "representations": [{ "kind": "raw" }],
            "m_grid": [1, 2],
            "splits": 4,
        }),
    );
    // relative dataset paths resolve against the fixture root when it is set
    let out = Command::new(env!("CARGO_BIN_EXE_ise"))
        .args(["sample-complexity", "--config", "configs/sc.json", "--seed", "1", "--out", "o"])
        .env("ISE_FIXTURE_DIR", root.join("fixtures"))
        .current_dir(root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(root.join("o/sample_complexity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "condition,x,y,stddev");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("raw/unrectified,1,"));
    assert!(!csv.contains('\r'));

    // without the override the path is taken relative to the config file
    let out = ise(&["sample-complexity", "--config", "configs/sc.json", "--out", "o"], root);
    assert_eq!(code(&out), 3);

    write_json(
        &root.join("configs"),
        "big.json",
        serde_json::json!({
            "datasets": [{ "generate": cfg }],
            "representations": [{ "kind": "raw" }],
            "m_grid": [6],
            "splits": 4,
        }),
    );
    assert_eq!(code(&ise(&["sample-complexity", "--config", "configs/big.json"], root)), 2);
}

// ---------------------------------------------------------------- signature

fn sign_image(w: usize, h: usize, pattern: &[i8]) -> Image {
    Image::new(w, h, pattern.iter().map(|&v| f64::from(v)).collect()).unwrap()
}

#[test]
fn signature_of_stored_template_reaches_one() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bank = make_random_bank(&GroupSpec::Torus2D { w: 6, h: 6 }, 3, 9).unwrap();
    bank.save(root.join("bank.json")).unwrap();
    save_raster(bank.template(1), root.join("t1.json")).unwrap();
    let out = ise(&["signature", "--image", "t1.json", "--bank", "bank.json", "--pooling", r#"{"kind":"max"}"#], root);
    assert_eq!(code(&out), 0);
    let sig: Signature = serde_json::from_slice(&out.stdout).unwrap();
    assert!((sig.values[1][0] - 1.0).abs() < 1e-12);
    assert!(sig.values[0][0] < 1.0 - 1e-6);
}

#[test]
fn shifted_image_prints_identical_signature() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let group = GroupSpec::Torus2D { w: 4, h: 4 };
    // balanced ±1 rasters normalize to ±1/4, so every dot product is exact
    let t = [1, -1, 1, 1, -1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1];
    let u = [1, 1, 1, -1, -1, 1, -1, -1, 1, -1, 1, 1, -1, -1, -1, 1];
    let bank =
        TemplateBank::from_templates(group.clone(), Provenance::Explicit, vec![sign_image(4, 4, &t), sign_image(4, 4, &u)])
            .unwrap();
    bank.save(root.join("bank.json")).unwrap();
    let img = sign_image(4, 4, &[-1, 1, 1, 1, -1, -1, 1, -1, 1, -1, -1, 1, 1, 1, -1, -1]);
    save_raster(&img, root.join("a.json")).unwrap();
    save_raster(&group.act(group.torus_element(1, 2).unwrap(), &img).unwrap(), root.join("b.json")).unwrap();
    let run = |img: &str, pooling: &str| ise(&["signature", "--image", img, "--bank", "bank.json", "--pooling", pooling], root).stdout;
    let max = r#"{"kind":"max"}"#;
    assert_eq!(run("a.json", max), run("b.json", max));

    let cdf = r#"{"kind":"cdf_bins","n":4,"delta":0.5,"s":0.1}"#;
    let a: Signature = serde_json::from_slice(&run("a.json", cdf)).unwrap();
    let b: Signature = serde_json::from_slice(&run("b.json", cdf)).unwrap();
    for (x, y) in a.flat().iter().zip(b.flat()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn signature_window_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bank = make_random_bank(&GroupSpec::Torus2D { w: 6, h: 6 }, 2, 9).unwrap();
    bank.save(root.join("bank.json")).unwrap();
    save_raster(&seeded_images(6, 6, 1, 1).unwrap()[0], root.join("i.json")).unwrap();
    let run = |window: &str| ise(&["signature", "--image", "i.json", "--bank", "bank.json", "--pooling", r#"{"kind":"max"}"#, "--window", window], root);
    assert_eq!(code(&run("full")), 0);
    let boxed: Signature = serde_json::from_slice(&run(r#"{"box":[1,1]}"#).stdout).unwrap();
    assert!(boxed.window.starts_with("pog-"));
    assert_eq!(code(&run(r#"{"members":[]}"#)), 2);
}

const SIGNATURE_GOLDEN: &str = "tests/fixtures/signature_stdout.sha256";

#[test]
fn signature_stdout_matches_golden_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let group = GroupSpec::Torus2D { w: 8, h: 8 };
    make_random_bank(&group, 4, 2024).unwrap().save(root.join("bank.json")).unwrap();
    save_raster(&seeded_images(8, 8, 1, 7).unwrap()[0], root.join("img.json")).unwrap();
    let out = ise(
        &["signature", "--image", "img.json", "--bank", "bank.json", "--pooling", r#"{"kind":"cdf_bins","n":8,"delta":0.25,"s":0.05}"#],
        root,
    );
    assert_eq!(code(&out), 0);
    let digest = hex::encode(Sha256::digest(&out.stdout));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join(SIGNATURE_GOLDEN);
    if std::env::var_os("ISE_REGEN_GOLDEN").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, format!("{digest}\n")).unwrap();
    }
    assert_eq!(digest, fs::read_to_string(golden).unwrap().trim());
}

// ---------------------------------------------------------------- gabor-bank

#[test]
fn single_gaussian_bank_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_json(
        root,
        "g.json",
        serde_json::json!({
            "group": { "kind": "Torus2D", "w": 8, "h": 8 },
            "params": [{ "sigma": 1.5, "omega0": 0.0, "orientation": 0.0, "center": [3.5, 3.5] }],
        }),
    );
    assert_eq!(code(&ise(&["gabor-bank", "--config", "g.json", "--out", "banks/gauss.json"], root)), 0);
    let text = fs::read_to_string(root.join("banks/gauss.json")).unwrap();
    let bank = TemplateBank::from_json(&text).unwrap();
    assert_eq!(bank.k(), 1);
    assert_eq!(bank.to_json(), text);
}

#[test]
fn out_of_band_gabor_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_json(
        tmp.path(),
        "g.json",
        serde_json::json!({ "group": { "kind": "Torus2D", "w": 8, "h": 8 }, "sigma": 2.0, "omega0": 0.1, "orientations": 2 }),
    );
    assert_eq!(code(&ise(&["gabor-bank", "--config", "g.json"], tmp.path())), 2);
}

fn rot90(img: &Image) -> Vec<f64> {
    let n = img.width;
    (0..n * n).map(|p| img.get(p / n, n - 1 - p % n)).collect()
}

#[test]
fn quarter_turn_orientations_are_raster_rotations() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_json(
        root,
        "g.json",
        serde_json::json!({ "group": { "kind": "Torus2D", "w": 16, "h": 16 }, "sigma": 2.0, "omega0": FRAC_PI_2, "orientations": 8 }),
    );
    assert_eq!(code(&ise(&["gabor-bank", "--config", "g.json", "--out", "out"], root)), 0);
    let bank = TemplateBank::load(root.join("out/gabor_bank.json")).unwrap();
    assert_eq!(bank.k(), 8);
    // orientations iπ/8: indices four apart differ by a quarter turn
    for i in 0..4 {
        let rotated = rot90(bank.template(i));
        let other = &bank.template(i + 4).data;
        let err = rotated.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "template {i}: {err:e}");
    }
}
