use stage_core::body_model::fixtures;
use stage_core::cond_render::{build_conditioning_bundle, RenderConfig, SkeletonFormat};
use stage_core::orchestrator::*;
use stage_core::prompt_catalog::CatalogConfig;
use stage_core::services::mocks::{MockConfig, Oracle};
use stage_core::services::ServiceSet;
use std::collections::HashSet;
use std::path::Path;

const HASH: &str = "test-config";

/// Renders `n` corpus poses into `ws` and pairs each with the given
/// attributes of the bundled catalog.
fn setup(ws: &Path, n: usize, attributes: &[&str]) -> (Vec<PoseWork>, Oracle) {
    let model = fixtures::humanoid();
    let corpus = fixtures::toy_corpus(n, 0);
    let catalog = CatalogConfig::bundled();
    let specs: Vec<_> = catalog
        .categories
        .iter()
        .flat_map(|c| catalog.expand_category(&c.name).unwrap())
        .filter(|s| attributes.contains(&s.attribute_id.as_str()))
        .collect();
    assert_eq!(specs.len(), attributes.len());
    let config = RenderConfig {
        image_size: (96, 96),
        ..RenderConfig::default()
    };
    let mut oracle = Oracle::default();
    let mut work = Vec::new();
    for pose in &corpus.poses {
        let bundle = build_conditioning_bundle(&model, pose, &config).unwrap();
        let rel = format!("conditioning/{}", pose.pose_id);
        bundle.write_dir(&ws.join(&rel)).unwrap();
        oracle.keypoints2d.insert(
            pose.pose_id.clone(),
            (bundle.keypoints2d.clone(), bundle.keypoint_visible.clone()),
        );
        work.push(PoseWork {
            target: PoseTarget {
                pose_id: pose.pose_id.clone(),
                gender: pose.gender,
                conditioning_dir: rel,
                image_size: (96, 96),
                skeleton: SkeletonFormat::OpenPose18,
                keypoints2d: bundle.keypoints2d,
                keypoint_visible: bundle.keypoint_visible,
            },
            cells: specs
                .iter()
                .map(|s| CellSpec {
                    attribute_id: s.attribute_id.clone(),
                    category: s.category.clone(),
                    template: catalog.template.clone(),
                    base_slots: s.base_slots_for(pose.gender),
                    change: Some((s.slot, s.attribute_value.clone())),
                })
                .collect(),
        });
    }
    (work, oracle)
}

fn services(oracle: &Oracle, mock: &MockConfig) -> ServiceSet {
    ServiceSet::mock(mock, oracle.clone(), "smpl24", "openpose18")
}

fn config() -> GenerationConfig {
    GenerationConfig {
        experiment_seed: 5,
        parallelism: 2,
        ..GenerationConfig::default()
    }
}

fn run(
    ws: &Path,
    work: &[PoseWork],
    svc: &ServiceSet,
    stop: Option<usize>,
) -> Result<RunSummary, OrchestratorError> {
    build_benchmark(
        work,
        &config(),
        HASH,
        ws,
        &manifest_path(ws),
        svc,
        &RunOptions {
            stop_after_cells: stop,
        },
    )
}

fn finalize(ws: &Path, work: &[PoseWork]) -> BenchmarkManifest {
    let mut m = BenchmarkManifest::load(&manifest_path(ws)).unwrap();
    m.finalize(&manifest_path(ws), &attribute_order(work)).unwrap();
    m
}

#[test]
fn ten_poses_two_attributes_all_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (work, oracle) = setup(dir.path(), 10, &["snow", "rain"]);
    let summary = run(dir.path(), &work, &services(&oracle, &MockConfig::default()), None).unwrap();
    assert!(summary.complete);
    assert_eq!(summary.cells_written, 20);
    let m = finalize(dir.path(), &work);
    assert_eq!(m.cells.iter().filter(|c| c.valid).count(), 20);
    assert_eq!(m.valid_pose_ids("snow").len(), 10);
    assert_eq!(m.valid_pose_ids("rain").len(), 10);
    // Both attributes of a pose share one base image.
    for pose in &work {
        let bases: HashSet<_> = m
            .attempts
            .iter()
            .filter(|a| a.pose_id == pose.target.pose_id)
            .map(|a| a.base_image.clone())
            .collect();
        assert_eq!(bases.len(), 1, "{}", pose.target.pose_id);
    }
    for a in &m.attempts {
        assert!(dir.path().join(&a.base_image).is_file());
        assert!(dir.path().join(a.attribute_image.as_ref().unwrap()).is_file());
    }
}

#[test]
fn rejected_attribute_uses_every_attempt_and_discards_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (work, oracle) = setup(dir.path(), 3, &["snow", "rain"]);
    let mut mock = MockConfig::default();
    mock.vqa.fail_on = Some("snow".into());
    run(dir.path(), &work, &services(&oracle, &mock), None).unwrap();
    let m = finalize(dir.path(), &work);
    for cell in &m.cells {
        let attempts: Vec<_> = m
            .attempts
            .iter()
            .filter(|a| a.pose_id == cell.pose_id && a.attribute_id == cell.attribute_id)
            .collect();
        if cell.attribute_id == "snow" {
            assert_eq!(cell.attempts, DEFAULT_MAX_ATTEMPTS);
            assert_eq!(attempts.len(), DEFAULT_MAX_ATTEMPTS as usize);
            assert!(!cell.valid);
            assert_eq!(cell.valid_attempt, None);
            for a in attempts {
                assert!(a.base_verdict.pass, "base image passes on its own");
                assert!(!a.attribute_verdict.as_ref().unwrap().pass);
                assert!(!a.valid);
            }
        } else {
            assert!(cell.valid);
            assert_eq!(attempts.len(), 1);
        }
    }
    assert!(m.valid_pose_ids("snow").is_empty());
    assert_eq!(m.valid_pose_ids("rain").len(), 3);
}

#[test]
fn recovery_stops_at_first_passing_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let (work, oracle) = setup(dir.path(), 2, &["snow"]);
    let mut mock = MockConfig::default();
    mock.vqa.fail_on = Some("snow".into());
    mock.vqa.pass_from_attempt = Some(4);
    run(dir.path(), &work, &services(&oracle, &mock), None).unwrap();
    let m = finalize(dir.path(), &work);
    for cell in &m.cells {
        assert!(cell.valid);
        assert_eq!(cell.attempts, 5);
        assert_eq!(cell.valid_attempt, Some(4));
        let pair = m.valid_pair(&cell.pose_id, "snow").unwrap();
        assert_eq!(pair.noise_seed, derive_seed(5, &cell.pose_id, 4));
    }
}

#[test]
fn interrupted_run_resumes_to_identical_manifest() {
    let full = tempfile::tempdir().unwrap();
    let (work, oracle) = setup(full.path(), 6, &["snow", "rain"]);
    let svc = services(&oracle, &MockConfig::default());
    run(full.path(), &work, &svc, None).unwrap();
    finalize(full.path(), &work);

    let part = tempfile::tempdir().unwrap();
    let (work_b, _) = setup(part.path(), 6, &["snow", "rain"]);
    let first = run(part.path(), &work_b, &svc, Some(5)).unwrap();
    assert!(!first.complete);
    assert_eq!(first.cells_written, 5);
    let second = run(part.path(), &work_b, &svc, None).unwrap();
    assert!(second.complete);
    assert_eq!(second.cells_skipped + second.cells_written, 12);
    finalize(part.path(), &work_b);

    let a = std::fs::read(manifest_path(full.path())).unwrap();
    let b = std::fs::read(manifest_path(part.path())).unwrap();
    assert!(a == b, "resumed manifest differs");
}

#[test]
fn resume_refuses_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let (work, oracle) = setup(dir.path(), 2, &["snow"]);
    let svc = services(&oracle, &MockConfig::default());
    run(dir.path(), &work, &svc, Some(1)).unwrap();
    let err = build_benchmark(
        &work,
        &config(),
        "another-config",
        dir.path(),
        &manifest_path(dir.path()),
        &svc,
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, OrchestratorError::ConfigChanged { .. }), "{err}");
}

#[test]
fn noise_seeds_do_not_collide_across_the_toy_corpus() {
    let corpus = fixtures::toy_corpus(1500, 0);
    let mut seen = HashSet::new();
    for pose in &corpus.poses {
        for attempt in 0..DEFAULT_MAX_ATTEMPTS {
            assert!(seen.insert(derive_seed(0, &pose.pose_id, attempt)));
        }
    }
    assert_eq!(seen.len(), 1500 * DEFAULT_MAX_ATTEMPTS as usize);
}
