//! End-to-end acceptance run: one PASS/FAIL line per criterion, each with
//! its measured values and wall-clock budget.

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ise_cli::checks::{self, Suite};
use ise_cli::commands::{run_sample_complexity, SampleComplexityConfig};
use ise_core::experiments::DatasetConfig;
use ise_core::experiments::Mode;
use ise_core::fixtures::{face_proxy, layered_fixture, seeded_images, sprite, warped_faces, SpriteKind};
use ise_core::hierarchy::covariance_check;
use ise_core::hw::{invariance_error, pool, simple_responses, smooth_invariance_profile};
use ise_core::oracle::{distributions_equal, orbits_equal};
use ise_core::template::{make_gabor_bank, make_patch_bank, make_random_bank};
use ise_core::{
    normalize, window_shift, GaborParams, GroupSpec, Image, LayerBank, LayerConfig, PoolingSpec, PoolingWindow,
    SmoothWarp, TemplateBank,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

// 1 ------------------------------------------------------------------------

fn exact_invariance() -> Outcome {
    let specs = [PoolingSpec::cdf(16, 0.05), PoolingSpec::Moments { orders: vec![1, 2, 3] }, PoolingSpec::Max];
    let mut worst: f64 = 0.0;
    for group in [GroupSpec::Torus2D { w: 8, h: 8 }, GroupSpec::Rot4 { n: 8 }] {
        let images = seeded_images(8, 8, 20, 1).unwrap();
        let bank = make_random_bank(&group, 4, 2).unwrap();
        let full = PoolingWindow::full(&group);
        for spec in &specs {
            for img in &images {
                for g in 0..group.order() {
                    worst = worst.max(invariance_error(img, g, &bank, &full, spec).unwrap());
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max invariance error {worst:.3e} over 2 groups x 20 images x 3 poolings"))
}

// 2 ------------------------------------------------------------------------

fn orbit_distribution_equivalence() -> Outcome {
    let group = GroupSpec::Torus2D { w: 4, h: 4 };
    // ten seeded images and a transformed copy of each, so both verdicts occur
    let base = seeded_images(4, 4, 10, 3).unwrap();
    let mut images = base.clone();
    for (i, b) in base.iter().enumerate() {
        images.push(group.act((3 * i + 1) % 16, b).unwrap());
    }
    let templates: Vec<Image> = make_random_bank(&group, 8, 4).unwrap().templates().to_vec();
    let (mut pairs, mut agree, mut same) = (0, 0, 0);
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let o = orbits_equal(&images[i], &images[j], &group).unwrap();
            let d = distributions_equal(&images[i], &images[j], &group, &templates).unwrap();
            pairs += 1;
            agree += usize::from(o == d);
            same += usize::from(o);
        }
    }
    outcome(pairs == 190 && agree == pairs && same == 10, format!("{agree}/{pairs} pairs agree ({same} same-orbit pairs)"))
}

// 3 ------------------------------------------------------------------------

fn template_count_calibration() -> Outcome {
    let out = checks::run(Suite::Theorem4, None, 0).unwrap();
    let csv = &out.files[0].1;
    let c_fit: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    let c_min = c_fit.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = max_of(c_fit.iter().copied());
    let slope = out.report.assertions.iter().find(|a| a.name == "log fit slope a").unwrap().value;
    outcome(
        out.report.passed,
        format!("K non-increasing in epsilon, log fit slope a = {slope:.3}, c_fit in [{c_min:.1}, {c_max:.1}]"),
    )
}

// 4 ------------------------------------------------------------------------

fn stability() -> Outcome {
    let spec = PoolingSpec::cdf_auto(16, 0.1);
    let budget = spec.lipschitz_budget();
    let out = checks::run(Suite::Stability, None, 0).unwrap();
    let held = out.report.assertions[1].value;
    let margin = out.report.assertions[0].value;
    outcome(
        (budget - 1.0).abs() < 1e-12 && out.report.passed && held == 100.0,
        format!("N*L = {budget}, {held}/100 pairs within bound, max(d - hausdorff) = {margin:.3e}"),
    )
}

// 5 ------------------------------------------------------------------------

fn localization() -> Outcome {
    let out = checks::run(Suite::Localization, None, 0).unwrap();
    let a = &out.report.assertions;
    outcome(out.report.passed, format!("{}: {:.3e}; {}: {:.3e}", a[0].name, a[0].value, a[1].name, a[1].value))
}

// 6 ------------------------------------------------------------------------

/// Layer-1 map that pools over transformed images instead of transformed
/// templates: `η(<ḡI, t>)` for ḡ in gG₁, which is ν at ḡ⁻¹.
fn images_averaged_map(image: &Image, config: &LayerConfig) -> Vec<Vec<f64>> {
    let LayerBank::Image(bank) = &config.bank else { panic!("first layer uses image templates") };
    let group = &config.window.group;
    let rows: Vec<Vec<f64>> = (0..bank.k())
        .map(|k| {
            let nu = simple_responses(image, bank, k).unwrap();
            (0..group.order()).map(|h| nu[group.inverse(h)]).collect()
        })
        .collect();
    (0..group.order())
        .map(|g| {
            let w = window_shift(&config.window, g).unwrap();
            rows.iter().flat_map(|r| pool(r, &w, &config.pooling).unwrap()).collect()
        })
        .collect()
}

fn foil_violation(image: &Image, g_tilde: usize, config: &LayerConfig) -> f64 {
    let group = &config.window.group;
    let base = images_averaged_map(image, config);
    let moved = images_averaged_map(&group.act(g_tilde, image).unwrap(), config);
    let inv = group.inverse(g_tilde);
    max_of((0..group.order()).flat_map(|g| {
        let b = &base[group.compose(inv, g)];
        moved[g].iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
    }))
}

fn covariance() -> Outcome {
    let torus = GroupSpec::Torus2D { w: 8, h: 8 };
    let torus_layers = layered_fixture(
        8,
        3,
        1,
        1,
        &[Some(1), Some(2)],
        &[PoolingSpec::cdf(4, 0.1), PoolingSpec::Moments { orders: vec![1, 2] }],
        5,
    )
    .unwrap();
    let d8 = GroupSpec::Dihedral8 { n: 6 };
    let d8_layers = vec![LayerConfig {
        window: PoolingWindow::new(d8.clone(), vec![0, 1, 4]).unwrap(),
        bank: LayerBank::Image(make_random_bank(&d8, 3, 5).unwrap()),
        pooling: PoolingSpec::cdf(4, 0.1),
    }];
    let mut worst = [0.0f64; 2];
    let mut foil: Vec<(String, f64)> = Vec::new();
    for img in seeded_images(8, 8, 3, 6).unwrap() {
        for (sx, sy) in [(1, 0), (2, 3), (-3, 1)] {
            let g = torus.torus_element(sx, sy).unwrap();
            let v = covariance_check(&img, g, &torus_layers).unwrap();
            worst[0] = worst[0].max(v[0]);
            worst[1] = worst[1].max(v[1]);
        }
    }
    let img = seeded_images(8, 8, 1, 7).unwrap().remove(0);
    foil.push(("torus".into(), foil_violation(&img, torus.torus_element(1, 0).unwrap(), &torus_layers[0])));
    for img in seeded_images(6, 6, 2, 8).unwrap() {
        for gt in 0..8 {
            worst[0] = worst[0].max(covariance_check(&img, gt, &d8_layers).unwrap()[0]);
        }
    }
    let img = seeded_images(6, 6, 1, 9).unwrap().remove(0);
    foil.push(("dihedral8".into(), max_of((0..8).map(|gt| foil_violation(&img, gt, &d8_layers[0])))));
    let foil_fails = foil.iter().filter(|(_, v)| *v > 1e-3).count();
    let foil_text: Vec<String> = foil.iter().map(|(n, v)| format!("{n} {v:.3e}")).collect();
    outcome(
        worst[0] <= 1e-12 && worst[1] <= 1e-12 && foil_fails >= 1,
        format!(
            "layer-1 {:.3e}, layer-2 {:.3e}; images-averaged foil violation: {}",
            worst[0],
            worst[1],
            foil_text.join(", ")
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn whole_and_parts() -> Outcome {
    let out = checks::run(Suite::Parts, None, 0).unwrap();
    let a = &out.report.assertions;
    outcome(
        out.report.passed,
        format!("layer-1 {:.3e}, top {:.3e}, max rise {:.3e}", a[0].value, a[1].value, a[2].value),
    )
}

// 8 ------------------------------------------------------------------------

const RANGE_TOLERANCE: f64 = 0.05;
const POG_RADIUS: usize = 4;

/// Largest Chebyshev radius r such that every shift within r keeps the
/// windowed signature within `RANGE_TOLERANCE`.
fn invariance_range(image: &Image, bank: &TemplateBank, window: &PoolingWindow, spec: &PoolingSpec) -> usize {
    let group = &bank.group;
    let (w, _) = group.dims();
    let mut r = 0;
    while r + 1 < w / 2 {
        let ring = r as isize + 1;
        let ok = (-ring..=ring)
            .flat_map(|y| (-ring..=ring).map(move |x| (x, y)))
            .filter(|&(x, y)| x.abs() == ring || y.abs() == ring)
            .all(|(x, y)| {
                let g = group.torus_element(x, y).unwrap();
                invariance_error(image, g, bank, window, spec).unwrap() <= RANGE_TOLERANCE
            });
        if !ok {
            break;
        }
        r += 1;
    }
    r
}

fn mean_range(images: &[Image], bank: &TemplateBank, window: &PoolingWindow, spec: &PoolingSpec) -> f64 {
    images.iter().map(|i| invariance_range(i, bank, window, spec) as f64).sum::<f64>() / images.len() as f64
}

fn gabor_optimality() -> Outcome {
    let group = GroupSpec::Torus2D { w: 16, h: 16 };
    let spec = PoolingSpec::cdf(8, 0.05);
    let window = PoolingWindow::centered_box(&group, POG_RADIUS, POG_RADIUS).unwrap();
    let kinds = [SpriteKind::Blob, SpriteKind::BarComposite, SpriteKind::Ring];
    let images: Vec<Image> = (0..6).map(|i| normalize(&sprite(kinds[i % 3], 16, 16, i as u64)).unwrap()).collect();
    let params: Vec<GaborParams> = (0..8)
        .map(|i| GaborParams::centered(16, 16, 2.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI * i as f64 / 8.0))
        .collect();
    let gabor = mean_range(&images, &make_gabor_bank(&group, &params).unwrap(), &window, &spec);
    let mut random: Vec<f64> =
        (0..10).map(|s| mean_range(&images, &make_random_bank(&group, 8, s).unwrap(), &window, &spec)).collect();
    random.sort_by(f64::total_cmp);
    let median = (random[4] + random[5]) / 2.0;
    outcome(gabor >= median, format!("mean range: gabor {gabor:.3}, random median {median:.3} (10 seeds)"))
}

// 9 ------------------------------------------------------------------------

/// Pinned mean errors of the reference run, class bank then random bank.
const SMOOTH_PINNED: (f64, f64) = (0.00597, 0.00965);

fn smooth_approximate_invariance() -> Outcome {
    let n = 24;
    let group = GroupSpec::Torus2D { w: n, h: n };
    let window = PoolingWindow::full(&group);
    let spec = PoolingSpec::Max;
    let exemplars = warped_faces(n, n, 20, 3.0, 7).unwrap();
    let image = normalize(&face_proxy(n, n)).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.05).collect();
    let mean_err = |bank: &TemplateBank, w: &SmoothWarp| {
        let p = smooth_invariance_profile(&image, w, &grid, bank, &window, &spec).unwrap();
        p.iter().map(|x| x.1).sum::<f64>() / p.len() as f64
    };
    let (mut class, mut random, mut wins) = (0.0, 0.0, 0);
    let trials = 10;
    for ws in 0..trials {
        let w = SmoothWarp::value_noise(n, n, 100 + ws, 6.0, 0.5).unwrap();
        let c = mean_err(&make_patch_bank(&group, &exemplars, 8, (4, 4), 11 + ws, "faces").unwrap(), &w);
        let r = mean_err(&make_random_bank(&group, 8, 50 + ws).unwrap(), &w);
        class += c / trials as f64;
        random += r / trials as f64;
        wins += usize::from(c < r);
    }
    let pinned = (class - SMOOTH_PINNED.0).abs() < 5e-5 && (random - SMOOTH_PINNED.1).abs() < 5e-5;
    outcome(
        class < random && pinned,
        format!("mean error: class {class:.5}, random {random:.5}, margin {:.5}, class wins {wins}/{trials}", random - class),
    )
}

// 10 -----------------------------------------------------------------------

fn sample_complexity_gap() -> Outcome {
    let cfg: SampleComplexityConfig = serde_json::from_value(serde_json::json!({
        "datasets": [
            { "generate": DatasetConfig::standard(Mode::Rectified) },
            { "generate": DatasetConfig::standard(Mode::Unrectified) },
        ],
        "representations": [
            { "kind": "raw" },
            { "kind": "signature", "bank": { "random": { "k": 16, "seed": 5 } }, "pooling": PoolingSpec::cdf(16, 0.05) },
        ],
        "m_grid": [1, 2, 5, 10],
        "splits": 100,
    }))
    .unwrap();
    let report = run_sample_complexity(&cfg, Path::new("."), 42).unwrap();
    let acc = |cond: &str, m: f64| report.rows.iter().find(|r| r.condition == cond && r.x == m).unwrap().y;
    let (raw_u, raw_r, sig_u) = (acc("raw/unrectified", 1.0), acc("raw/rectified", 1.0), acc("signature/unrectified", 1.0));
    let ordered = [1.0, 2.0, 5.0, 10.0].iter().all(|&m| acc("signature/unrectified", m) >= acc("raw/unrectified", m));
    outcome(
        sig_u >= raw_u + 0.25 && raw_r >= raw_u + 0.2 && ordered,
        format!("m=1: signature/unrectified {sig_u:.3}, raw/rectified {raw_r:.3}, raw/unrectified {raw_u:.3}; ordering over m grid {ordered}"),
    )
}

// 11 -----------------------------------------------------------------------

fn ise(args: &[&str], cwd: &Path) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ise")).args(args).current_dir(cwd).output().unwrap();
    assert!(out.status.success(), "ise {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Every regular file under `dir`, relative path and bytes, sorted by path.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let write = |name: &str, v: serde_json::Value| std::fs::write(root.join(name), v.to_string()).unwrap();
    let small = DatasetConfig { samples_per_class: 10, ..DatasetConfig::standard(Mode::Unrectified) };
    write("data.json", serde_json::to_value(&small).unwrap());
    write(
        "sc.json",
        serde_json::json!({
            "datasets": [{ "dir": "data" }],
            "representations": [
                { "kind": "raw" },
                { "kind": "signature", "bank": { "random": { "k": 8 } }, "pooling": PoolingSpec::cdf(8, 0.05) },
            ],
            "m_grid": [1, 3],
            "splits": 20,
        }),
    );
    write("gabor.json", serde_json::json!({ "group": { "kind": "Torus2D", "w": 16, "h": 16 }, "sigma": 2.0, "omega0": std::f64::consts::FRAC_PI_2, "orientations": 4 }));

    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = format!("run-{threads}");
        let o = |sub: &str| format!("{out}/{sub}");
        ise(&["gen-data", "--config", "data.json", "--seed", "3", "--out", "data", "--threads", threads], root);
        ise(&["sample-complexity", "--config", "sc.json", "--seed", "3", "--out", &o("sc"), "--threads", threads], root);
        ise(&["check", "invariance", "--seed", "3", "--out", &o("check"), "--threads", threads], root);
        ise(&["check", "theorem4", "--seed", "3", "--out", &o("check"), "--threads", threads], root);
        ise(&["gabor-bank", "--config", "gabor.json", "--out", &o("bank"), "--threads", threads], root);
        let sig = ise(
            &[
                "signature",
                "--image",
                "data/images/0003.json",
                "--bank",
                &o("bank/gabor_bank.json"),
                "--pooling",
                r#"{"kind":"cdf_bins","n":8,"delta":0.25,"s":0.05}"#,
                "--threads",
                threads,
            ],
            root,
        );
        std::fs::write(root.join(o("signature.json")), sig.stdout).unwrap();
        let data = tree(&root.join("data"));
        runs.push((data, tree(&root.join(&out))));
        std::fs::remove_dir_all(root.join("data")).unwrap();
    }
    let files = runs[0].0.len() + runs[0].1.len();
    let same = runs[0] == runs[1];
    outcome(same && files > 0, format!("{files} output files byte-identical across --threads 1 and 4: {same}"))
}

// --------------------------------------------------------------------------

/// Name, runtime budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        ("exact invariance", 10, exact_invariance),
        ("orbit/distribution equivalence", 10, orbit_distribution_equivalence),
        ("template count calibration", 60, template_count_calibration),
        ("stability", 20, stability),
        ("POG localization", 5, localization),
        ("covariance", 10, covariance),
        ("whole and parts", 15, whole_and_parts),
        ("Gabor comparative optimality", 30, gabor_optimality),
        ("smooth non-group approximate invariance", 30, smooth_approximate_invariance),
        ("sample-complexity gap", 60, sample_complexity_gap),
        ("determinism", 30, determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(budget);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && within, o.detail),
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        // written to stderr directly so the lines survive output capture
        let _ = writeln!(
            std::io::stderr(),
            "criterion {:>2} {:<40} {} | {} | {:.2}s (budget {budget}s)",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
