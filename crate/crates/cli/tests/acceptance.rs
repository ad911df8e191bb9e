//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so each criterion prints exactly one
//! `PASS` or `FAIL` line. The process fails when a criterion fails that is
//! not listed in `KNOWN_RED`.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use stage_audit::{stages, ExperimentConfig, StageOptions, StageOutcome, Workspace};
use stage_core::body_model::Mesh;
use stage_core::cond_render::image_io::{decode_depth_png, decode_rgb_png};
use stage_core::cond_render::{rasterize, SkeletonFormat};
use stage_core::cond_render::Camera;
use stage_core::filters::{keypoint_alignment_filter, FilterConfig};
use stage_core::metrics::{
    category_pdp, degraded, overall_pdp, pdp, pose_gap, procrustes_align, round_to, stability_curve,
    Alignment,
};
use stage_core::orchestrator::BenchmarkManifest;
use stage_core::report::Report;
use stage_core::services::{Keypoint2DResponse, PersonKeypoints};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Criteria expected to stay red, with the reason printed alongside.
const KNOWN_RED: &[(&str, &str)] = &[(
    "published-table-means",
    "the SMPLer-X L32 row prints 13.54 but its six category PDPs average to 13.5467",
)];

type Outcome = Result<String, String>;

// ---------------------------------------------------------------------------
// Published table arithmetic

/// (row, MPJPE, PA-MPJPE, category PDPs, printed mean)
const SENSITIVITY_TABLE: [(&str, f64, f64, [f64; 6], f64); 10] = [
    ("SPIN", 122.50, 90.27, [15.79, 19.65, 12.93, 29.13, 17.43, 29.26], 20.70),
    ("PARE", 118.81, 88.98, [13.34, 15.84, 9.36, 21.66, 12.97, 18.43], 15.27),
    ("MeTRAbs", 89.80, 67.77, [17.06, 19.57, 11.31, 22.93, 15.88, 16.94], 17.28),
    ("PyMAF-X", 115.81, 84.03, [9.83, 12.49, 5.40, 14.61, 8.51, 10.60], 10.24),
    ("HMR 2.0", 102.40, 75.21, [9.31, 12.41, 5.34, 15.76, 7.57, 10.75], 10.19),
    ("BEDLAM-CLIFF", 113.14, 84.22, [17.30, 20.77, 15.61, 23.36, 15.47, 19.42], 18.65),
    ("SMPLer-X S32", 117.84, 90.61, [15.62, 19.54, 11.20, 21.76, 15.88, 18.51], 17.08),
    ("SMPLer-X B32", 107.00, 80.40, [13.30, 17.24, 7.81, 17.38, 12.57, 13.13], 13.57),
    ("SMPLer-X L32", 101.83, 75.98, [14.48, 17.84, 7.73, 16.53, 12.30, 12.40], 13.54),
    ("SMPLer-X H32", 104.79, 76.00, [14.35, 18.55, 6.75, 15.11, 10.54, 10.74], 12.67),
];

fn published_table_means() -> Outcome {
    let mut bad = Vec::new();
    for (row, _, _, cats, printed) in SENSITIVITY_TABLE {
        let mean = overall_pdp(&cats).map_err(|e| e.to_string())?;
        let oracle = cats.iter().sum::<f64>() / 6.0;
        if (mean - oracle).abs() > 1e-12 {
            return Err(format!("{row}: overall_pdp {mean} differs from plain mean {oracle}"));
        }
        if (mean - printed).abs() > 0.005 + 1e-9 {
            bad.push(format!("{row} computed {mean:.4} printed {printed:.2}"));
        }
    }
    if bad.is_empty() {
        Ok("10/10 row means within 0.005".into())
    } else {
        Err(format!("{}/10 rows match; {}", 10 - bad.len(), bad.join("; ")))
    }
}

/// (row, MPJPE real, MPJPE synth, MPJPE gap, PA real, PA synth, PA gap)
const POSE_GAP_TABLE: [(&str, f64, f64, f64, f64, f64, f64); 4] = [
    ("row 1", 69.31, 79.76, 10.45, 47.16, 60.27, 13.11),
    ("row 2", 64.84, 70.93, 6.09, 45.60, 55.25, 9.65),
    ("row 3", 70.90, 79.81, 8.91, 49.56, 60.30, 10.74),
    ("row 4", 68.52, 69.41, 0.89, 47.46, 53.96, 6.50),
];

fn pose_gap_arithmetic() -> Outcome {
    let mut checked = 0;
    for (row, mr, ms, mg, pr, ps, pg) in POSE_GAP_TABLE {
        for (real, synth, printed) in [(mr, ms, mg), (pr, ps, pg)] {
            let gap = pose_gap(&[real], &[synth]).map_err(|e| e.to_string())?;
            if round_to(gap, 2) != printed {
                return Err(format!("{row}: {synth} - {real} = {gap:.4}, printed {printed}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} gaps exact at two decimals"))
}

// ---------------------------------------------------------------------------
// Procrustes against a brute-force search

fn rms(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    (s / a.len() as f64).sqrt()
}

/// Residual of the best planar similarity found on a 0.001 degree grid.
/// Both point sets lie in z = 0, so a proper 3D rotation restricted to the
/// plane is either an in-plane rotation or an in-plane reflection.
fn brute_force_residual(src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
    let n = src.len() as f64;
    let mean = |v: &[[f64; 2]]| {
        let s = v.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ms, md) = (mean(src), mean(dst));
    let a: Vec<[f64; 2]> = src.iter().map(|p| [p[0] - ms[0], p[1] - ms[1]]).collect();
    let b: Vec<[f64; 2]> = dst.iter().map(|p| [p[0] - md[0], p[1] - md[1]]).collect();
    let norm_a: f64 = a.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let norm_b: f64 = b.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let mut best = f64::INFINITY;
    for step in 0..360_000 {
        let t = (step as f64 * 0.001).to_radians();
        let (s, c) = t.sin_cos();
        for flip in [1.0, -1.0] {
            let mut dot = 0.0;
            for (p, q) in a.iter().zip(&b) {
                let r = [c * p[0] - s * p[1] * flip, s * p[0] + c * p[1] * flip];
                dot += r[0] * q[0] + r[1] * q[1];
            }
            let scale = (dot / norm_a).max(0.0);
            let sse = norm_b - 2.0 * scale * dot + scale * scale * norm_a;
            best = best.min(sse);
        }
    }
    (best.max(0.0) / n).sqrt()
}

fn procrustes_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let k = rng.gen_range(3..=4);
        let src: Vec<[f64; 2]> = (0..k).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let dst: Vec<[f64; 2]> = (0..k).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let lift = |v: &[[f64; 2]]| v.iter().map(|p| Point3::new(p[0], p[1], 0.0)).collect::<Vec<_>>();
        let (s3, d3) = (lift(&src), lift(&dst));
        let aligned = procrustes_align(&s3, &d3, Alignment::Similarity).map_err(|e| e.to_string())?;
        let closed_mm = rms(&aligned, &d3) * 1000.0;
        let brute_mm = brute_force_residual(&src, &dst) * 1000.0;
        let diff = (closed_mm - brute_mm).abs();
        worst = worst.max(diff);
        if diff > 1e-3 {
            return Err(format!("case {case}: closed form {closed_mm:.6} mm, search {brute_mm:.6} mm"));
        }
    }
    Ok(format!("100 planar sets, worst residual gap {worst:.2e} mm"))
}

// ---------------------------------------------------------------------------
// End-to-end runs with mock services

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn mock_config(workspace: &Path, parallelism: usize, tau: f64) -> ExperimentConfig {
    let text = format!(
        r#"
[experiment]
name = "acceptance"
seed = 3
workspace = "{ws}"
parallelism = {parallelism}

[body_model]
path = "humanoid.stgm"

[sampling]
corpus = "toy_corpus.txt"
count = 500

[render]
image_size = [128, 128]

[prompts]
categories = ["texture"]

[mock.estimator]
displacement_mm = 80.0
joint = 20
fraction = 0.3
role = "att"

[mock.keypoints]
noise_px = 3.0

[eval]
tau_mm = {tau:?}
"#,
        ws = workspace.display()
    );
    let mut cfg = ExperimentConfig::from_toml(&text).expect("acceptance config parses");
    cfg.resolve_paths(&fixtures_dir());
    cfg
}

fn run_stage(
    stage: fn(&ExperimentConfig, &StageOptions) -> Result<StageOutcome, stage_audit::CliError>,
    cfg: &ExperimentConfig,
    opts: &StageOptions,
) -> Result<StageOutcome, String> {
    stage(cfg, opts).map_err(|e| e.to_string())
}

fn full_pipeline(cfg: &ExperimentConfig) -> Result<(), String> {
    let opts = StageOptions::default();
    for stage in [
        stages::sample_poses,
        stages::render_conditions,
        stages::generate,
        stages::predict,
        stages::evaluate,
    ] {
        run_stage(stage, cfg, &opts)?;
    }
    Ok(())
}

fn report_path(cfg: &ExperimentConfig) -> PathBuf {
    Workspace::new(&cfg.experiment.workspace)
        .reports()
        .join(&cfg.experiment.name)
        .join(&cfg.services.estimator_name)
}

fn load_report(cfg: &ExperimentConfig) -> Result<Report, String> {
    let text = std::fs::read_to_string(report_path(cfg).join("report.json")).map_err(|e| e.to_string())?;
    Report::from_json(&text).map_err(|e| e.to_string())
}

fn attribute_pdps(report: &Report) -> Vec<(String, usize, f64)> {
    report
        .categories
        .iter()
        .flat_map(|c| c.attributes.iter().map(|a| (a.attribute_id.clone(), a.poses, a.pdp)))
        .collect()
}

fn mock_pipeline_pdp(root: &Path) -> Outcome {
    let cfg = mock_config(&root.join("a"), 4, 50.0);
    let start = Instant::now();
    full_pipeline(&cfg)?;
    let at_50 = attribute_pdps(&load_report(&cfg)?);
    let cfg100 = mock_config(&root.join("a"), 4, 100.0);
    run_stage(stages::evaluate, &cfg100, &StageOptions::default())?;
    let at_100 = attribute_pdps(&load_report(&cfg100)?);
    // Leave the tau = 50 report in place for the determinism comparison.
    run_stage(stages::evaluate, &cfg, &StageOptions::default())?;
    if at_50.len() != 2 {
        return Err(format!("expected 2 attributes, got {at_50:?}"));
    }
    for (id, poses, p) in &at_50 {
        if *poses != 500 || round_to(*p, 2) != 30.0 {
            return Err(format!("tau 50: {id} PDP {p:.4} over {poses} poses"));
        }
    }
    for (id, _, p) in &at_100 {
        if *p != 0.0 {
            return Err(format!("tau 100: {id} PDP {p:.4}"));
        }
    }
    Ok(format!(
        "500 poses x 2 attributes: 30.00% at tau 50, 0.00% at tau 100 ({:.1} s)",
        start.elapsed().as_secs_f64()
    ))
}

fn compare_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let (x, y) = (std::fs::read(a.join(name)), std::fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{name} differs between {} and {}", a.display(), b.display())),
            (x, y) => return Err(format!("{name}: {:?} / {:?}", x.err(), y.err())),
        }
    }
    Ok(())
}

const REPORT_FILES: [&str; 5] = [
    "report.json",
    "report.csv",
    "report.txt",
    "records.jsonl",
    "plotdata/stability.csv",
];

fn determinism(root: &Path) -> Outcome {
    let a = mock_config(&root.join("a"), 4, 50.0);
    let b = mock_config(&root.join("b"), 1, 50.0);
    full_pipeline(&b)?;
    compare_files(&a.experiment.workspace, &b.experiment.workspace, &["manifest.jsonl"])?;
    compare_files(&report_path(&a), &report_path(&b), &REPORT_FILES)?;

    let c = mock_config(&root.join("c"), 2, 50.0);
    let opts = StageOptions::default();
    run_stage(stages::sample_poses, &c, &opts)?;
    run_stage(stages::render_conditions, &c, &opts)?;
    let half = StageOptions {
        stop_after_cells: Some(500),
        ..StageOptions::default()
    };
    match run_stage(stages::generate, &c, &half)? {
        StageOutcome::Partial(_) => {}
        other => return Err(format!("interrupted run reported {other:?}")),
    }
    let resumed = StageOptions {
        resume: true,
        ..StageOptions::default()
    };
    run_stage(stages::generate, &c, &resumed)?;
    run_stage(stages::predict, &c, &opts)?;
    run_stage(stages::evaluate, &c, &opts)?;
    compare_files(&a.experiment.workspace, &c.experiment.workspace, &["manifest.jsonl"])?;
    compare_files(&report_path(&a), &report_path(&c), &REPORT_FILES)?;
    Ok("two workspaces and an interrupted-then-resumed run give identical manifests and reports".into())
}

// ---------------------------------------------------------------------------
// Filters

fn filter_monotonicity(root: &Path) -> Outcome {
    let format = SkeletonFormat::OpenPose18;
    let k = format.num_joints();
    let mut rng = StdRng::seed_from_u64(5);
    let mut flips = 0;
    for set in 0..1000 {
        let projected: Vec<[f64; 2]> = (0..k).map(|_| [rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0)]).collect();
        let visible: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.9)).collect();
        let spread = rng.gen_range(1.0..120.0);
        let keypoints: Vec<[f64; 2]> = projected
            .iter()
            .map(|p| [p[0] + rng.gen_range(-spread..spread), p[1] + rng.gen_range(-spread..spread)])
            .collect();
        let confidence: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.03) { 0.0 } else { 0.9 }).collect();
        let count = match rng.gen_range(0..20) {
            0 => 0,
            1 => 2,
            _ => 1,
        };
        let persons = (0..count)
            .map(|_| PersonKeypoints {
                keypoints: keypoints.clone(),
                confidence: confidence.clone(),
            })
            .collect();
        let detected = Keypoint2DResponse {
            protocol_version: stage_core::services::PROTOCOL_VERSION,
            skeleton: format.name().into(),
            persons,
        };
        let mut thresholds: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..150.0)).collect();
        thresholds.sort_by(f64::total_cmp);
        let mut passed_before = false;
        for t in thresholds {
            let config = FilterConfig {
                threshold_px: t,
                ..FilterConfig::default()
            };
            let pass = keypoint_alignment_filter(&detected, &projected, &visible, format, &config)
                .map_err(|e| e.to_string())?
                .pass;
            if passed_before && !pass {
                return Err(format!("set {set}: passes below {t} px but fails at {t} px"));
            }
            flips += (!passed_before && pass) as usize;
            passed_before |= pass;
        }
    }

    // Retry bound: an attribute the VQA always rejects uses every attempt.
    let mut cfg = mock_config(&root.join("retry"), 2, 50.0);
    cfg.sampling.count = 4;
    cfg.mock.vqa.fail_on = Some("floral".into());
    let opts = StageOptions::default();
    run_stage(stages::sample_poses, &cfg, &opts)?;
    run_stage(stages::render_conditions, &cfg, &opts)?;
    run_stage(stages::generate, &cfg, &opts)?;
    let manifest = BenchmarkManifest::load(&Workspace::new(&cfg.experiment.workspace).manifest())
        .map_err(|e| e.to_string())?;
    for cell in &manifest.cells {
        let tries = manifest
            .attempts
            .iter()
            .filter(|a| a.pose_id == cell.pose_id && a.attribute_id == cell.attribute_id)
            .count() as u32;
        let expect = match cell.attribute_id.as_str() {
            "floral_shirt" => (13, false),
            _ => (1, true),
        };
        if (tries, cell.valid) != expect || cell.attempts != tries {
            return Err(format!(
                "{}/{}: {tries} attempts, valid {}",
                cell.pose_id, cell.attribute_id, cell.valid
            ));
        }
    }
    Ok(format!(
        "1000 detection sets monotone in the threshold ({flips} fail-to-pass flips); rejected cells stop at 13 attempts"
    ))
}

// ---------------------------------------------------------------------------
// Rasterizer

fn rasterizer_fidelity(root: &Path) -> Outcome {
    let (w, h) = (96u32, 96u32);
    let camera = Camera {
        focal_normalized: 2.0,
        center: Vector3::zeros(),
        rotation: Matrix3::identity(),
        image_size: (w, h),
    };
    let mut rng = StdRng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut triangles = 0;
    while triangles < 50 {
        let verts: Vec<Point3<f64>> = (0..3)
            .map(|_| {
                let z = rng.gen_range(1.0..6.0);
                Point3::new(rng.gen_range(-0.45..0.45) * z, rng.gen_range(-0.45..0.45) * z, z)
            })
            .collect();
        let mesh = Mesh {
            vertices: verts.clone(),
            faces: vec![[0, 1, 2]],
        };
        let colors = [[1.0, 0.5, 0.25]; 3];
        let (depth, semantic) = rasterize(&mesh, Some(&colors), &camera);
        let covered: Vec<(u32, u32)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| depth.at(x, y).is_finite())
            .collect();
        if covered.len() < 50 {
            continue;
        }
        triangles += 1;
        let normal = (verts[1] - verts[0]).cross(&(verts[2] - verts[0]));
        for i in 0..50 {
            let (x, y) = covered[i * covered.len() / 50];
            let ray = Vector3::new(
                ((x as f64 + 0.5) / w as f64 * 2.0 - 1.0) / camera.focal_normalized,
                ((y as f64 + 0.5) / h as f64 * 2.0 - 1.0) / camera.focal_normalized,
                1.0,
            );
            let plane_z = normal.dot(&verts[0].coords) / normal.dot(&ray);
            let err = (depth.at(x, y) - plane_z).abs();
            worst = worst.max(err);
            if err > 1e-4 {
                return Err(format!("triangle {triangles} pixel ({x},{y}): {} vs plane {plane_z}", depth.at(x, y)));
            }
        }
        for (i, (d, s)) in depth.data.iter().zip(&semantic.data).enumerate() {
            if d.is_finite() != (*s != [0.0; 3]) {
                return Err(format!("triangle {triangles} pixel {i}: depth and semantic support differ"));
            }
        }
    }

    let cond = root.join("a").join("conditioning");
    let mut bundles = 0;
    for entry in std::fs::read_dir(&cond).map_err(|e| e.to_string())? {
        let dir = entry.map_err(|e| e.to_string())?.path();
        let depth = std::fs::read(dir.join("depth.png")).map_err(|e| e.to_string())?;
        let semantic = std::fs::read(dir.join("semantic.png")).map_err(|e| e.to_string())?;
        let (_, _, depth) = decode_depth_png(&depth).map_err(|e| e.to_string())?;
        let semantic = decode_rgb_png(&semantic).map_err(|e| e.to_string())?;
        for (i, d) in depth.iter().enumerate() {
            let lit = semantic.data[i * 3..i * 3 + 3] != [0, 0, 0];
            if (*d != 0) != lit {
                return Err(format!("{}: pixel {i} support differs", dir.display()));
            }
        }
        bundles += 1;
    }
    if bundles == 0 {
        return Err("no rendered bundles to check".into());
    }
    Ok(format!(
        "50 triangles x 50 pixels within {worst:.1e} m of the plane; support equal in {bundles} bundles"
    ))
}

// ---------------------------------------------------------------------------
// Stability and degradation criterion

/// Smallest and largest counts outside which each binomial tail holds at
/// most 0.5% of the mass.
fn binomial_interval(n: usize, p: f64) -> (usize, usize) {
    let mut pmf = vec![0.0; n + 1];
    pmf[0] = (1.0 - p).powi(n as i32);
    for k in 1..=n {
        pmf[k] = pmf[k - 1] * (n - k + 1) as f64 / k as f64 * p / (1.0 - p);
    }
    let mut lo = 0;
    let mut acc = 0.0;
    while acc + pmf[lo] <= 0.005 {
        acc += pmf[lo];
        lo += 1;
    }
    let mut hi = n;
    acc = 0.0;
    while acc + pmf[hi] <= 0.005 {
        acc += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}

fn stability_convergence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(17);
    let mut notes = Vec::new();
    for p in [0.05, 0.2, 0.5] {
        let flags: Vec<bool> = (0..1000).map(|_| rng.gen_bool(p)).collect();
        let curve = stability_curve(&flags, 50).map_err(|e| e.to_string())?;
        let &(n, last) = curve.last().ok_or("empty curve")?;
        let (lo, hi) = binomial_interval(1000, p);
        let (lo, hi) = (lo as f64 / 10.0, hi as f64 / 10.0);
        if n != 1000 || !(lo..=hi).contains(&last) {
            return Err(format!("p = {p}: PDP {last:.2}% at N = {n}, interval [{lo}, {hi}]"));
        }
        notes.push(format!("p={p}: {last:.1}% in [{lo}, {hi}]"));
    }
    Ok(notes.join(", "))
}

fn degradation_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(23);
    let mut base = Vec::with_capacity(10_000);
    let mut att = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let b: f64 = rng.gen_range(0.0..300.0);
        let a = match i % 4 {
            0 => b,
            _ => (b + rng.gen_range(-150.0..150.0)).max(0.0),
        };
        let tau = match i % 3 {
            0 => 0.0,
            _ => rng.gen_range(0.0..200.0),
        };
        if degraded(a, b, tau) && degraded(b, a, tau) {
            return Err(format!("record {i}: degraded both ways at tau {tau}"));
        }
        base.push(b);
        att.push(a);
    }
    let mut last = f64::INFINITY;
    for step in 0..=400 {
        let tau = step as f64 * 0.5;
        let flags: Vec<bool> = att.iter().zip(&base).map(|(a, b)| degraded(*a, *b, tau)).collect();
        let p = pdp(&flags).map_err(|e| e.to_string())?;
        if p > last {
            return Err(format!("PDP rises from {last} to {p} at tau {tau}"));
        }
        last = p;
    }
    let cat = category_pdp(&[last]).map_err(|e| e.to_string())?;
    Ok(format!("no record degraded both ways; PDP non-increasing over 401 taus (ends at {cat:.2}%)"))
}

// ---------------------------------------------------------------------------

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("published-table-means", Box::new(published_table_means)),
        ("pose-gap-arithmetic", Box::new(pose_gap_arithmetic)),
        ("procrustes-vs-search", Box::new(procrustes_oracle)),
        ("mock-pipeline-pdp", Box::new(|| mock_pipeline_pdp(root))),
        ("determinism-and-resume", Box::new(|| determinism(root))),
        ("filter-monotonicity-and-retry-bound", Box::new(|| filter_monotonicity(root))),
        ("rasterizer-fidelity", Box::new(|| rasterizer_fidelity(root))),
        ("stability-convergence", Box::new(stability_convergence)),
        ("degradation-asymmetry-and-tau-monotonicity", Box::new(degradation_properties)),
    ];
    let mut unexpected = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => match KNOWN_RED.iter().find(|(n, _)| n == name) {
                Some((_, why)) => println!("FAIL {name}: {detail} (known: {why})"),
                None => {
                    println!("FAIL {name}: {detail}");
                    unexpected += 1;
                }
            },
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
