//! The pipeline stages behind each subcommand. Every stage records a stamp
//! with the hash of its inputs and outputs and is skipped when both still
//! match.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stage_core::body_model::{load_body_model, regress_joints, skin_mesh, BodyModelData, Gender};
use stage_core::cond_render::{build_conditioning_bundle, SkeletonFormat};
use stage_core::hashing::sha256_hex;
use stage_core::metrics::{evaluate_manifest, PredictionRecord, PredictionStore};
use stage_core::orchestrator::{
    attribute_order, build_benchmark, BenchmarkManifest, CellSpec, GenerationConfig,
    OrchestratorError, PoseTarget, PoseWork, RunOptions,
};
use stage_core::pose_sampling::{balance_by_label, farthest_point_sample, PoseCorpus};
use stage_core::prompt_catalog::{CatalogConfig, PromptSlots, Slot};
use stage_core::report::{emit, report_dir, summarize, Labels};
use stage_core::services::mocks::Oracle;
use stage_core::services::{
    EstimateRequest, Endpoint, Hints, RemoteService, Role, ServiceSet, PROTOCOL_VERSION,
};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{ExperimentConfig, MOCK};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    pub dry_run: bool,
    pub resume: bool,
    /// Generation stops after this many cells, leaving a partial manifest.
    pub stop_after_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Ran(String),
    UpToDate(String),
    Planned(String),
    /// Generation stopped early; the manifest can be resumed.
    Partial(String),
}

impl StageOutcome {
    pub fn message(&self) -> &str {
        match self {
            StageOutcome::Ran(m)
            | StageOutcome::UpToDate(m)
            | StageOutcome::Planned(m)
            | StageOutcome::Partial(m) => m,
        }
    }
}

/// Files of a workspace.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn poses(&self) -> PathBuf {
        self.root.join("poses.txt")
    }
    pub fn targets(&self) -> PathBuf {
        self.root.join("targets.jsonl")
    }
    pub fn conditioning_rel(pose_id: &str) -> String {
        format!("conditioning/{pose_id}")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }
    pub fn replica_manifest(&self) -> PathBuf {
        self.root.join("replica").join("manifest.jsonl")
    }
    pub fn predictions(&self, estimator: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{estimator}.jsonl"))
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    fn stamp(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    input_hash: String,
    /// Workspace-relative path to content hash.
    outputs: BTreeMap<String, String>,
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(internal)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&read(path)?))
}

fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config serializes").as_bytes())
}

fn up_to_date(ws: &Workspace, stage: &str, input_hash: &str) -> bool {
    let Ok(text) = std::fs::read_to_string(ws.stamp(stage)) else {
        return false;
    };
    let Ok(stamp) = serde_json::from_str::<Stamp>(&text) else {
        return false;
    };
    stamp.input_hash == input_hash
        && stamp
            .outputs
            .iter()
            .all(|(rel, h)| hash_file(&ws.root.join(rel)).is_ok_and(|x| x == *h))
}

fn write_stamp(ws: &Workspace, stage: &str, input_hash: &str, outputs: &[&Path]) -> Result<(), CliError> {
    let mut map = BTreeMap::new();
    for p in outputs {
        let rel = p
            .strip_prefix(&ws.root)
            .map_err(internal)?
            .to_string_lossy()
            .replace('\\', "/");
        map.insert(rel, hash_file(p)?);
    }
    let stamp = Stamp {
        input_hash: input_hash.to_string(),
        outputs: map,
    };
    write_atomic(
        &ws.stamp(stage),
        serde_json::to_string_pretty(&stamp).expect("stamp serializes").as_bytes(),
    )
}

fn require(path: &Path, stage: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(vec![format!(
            "{} is missing; run {stage} first",
            path.display()
        )]))
    }
}

fn load_model(cfg: &ExperimentConfig) -> Result<BodyModelData, CliError> {
    load_body_model(&cfg.body_model.path).map_err(|e| CliError::Validation(vec![e.to_string()]))
}

// ---- sample-poses ----

pub fn sample_poses(cfg: &ExperimentConfig, opts: &StageOptions) -> Result<StageOutcome, CliError> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.experiment.workspace);
    let input = hash_json(&(
        "sample-poses",
        hash_file(&cfg.body_model.path)?,
        hash_file(&cfg.sampling.corpus)?,
        &cfg.sampling.count,
        &cfg.sampling.balance,
    ));
    if up_to_date(&ws, "sample-poses", &input) {
        return Ok(StageOutcome::UpToDate(format!("{} is up to date", ws.poses().display())));
    }
    let how = if cfg.sampling.balance {
        format!("{} per label (male, female)", cfg.sampling.count / 2)
    } else {
        format!("{} poses", cfg.sampling.count)
    };
    if opts.dry_run {
        return Ok(StageOutcome::Planned(format!(
            "would select {how} from {} by farthest point sampling into {}",
            cfg.sampling.corpus.display(),
            ws.poses().display()
        )));
    }
    let model = load_model(cfg)?;
    let corpus = PoseCorpus::load(&cfg.sampling.corpus).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
    let subset = if cfg.sampling.balance {
        balance_by_label(&corpus, &[Gender::Male, Gender::Female], cfg.sampling.count / 2, &model)
            .map_err(|e| CliError::Validation(vec![e.to_string()]))?
    } else {
        let idx = farthest_point_sample(&corpus, cfg.sampling.count, &model)
            .map_err(|e| CliError::Validation(vec![e.to_string()]))?;
        PoseCorpus {
            poses: idx.into_iter().map(|i| corpus.poses[i].clone()).collect(),
            source_tag: format!("{} fps {}", corpus.source_tag, cfg.sampling.count),
        }
    };
    write_atomic(&ws.poses(), subset.to_text().as_bytes())?;
    write_stamp(&ws, "sample-poses", &input, &[&ws.poses()])?;
    Ok(StageOutcome::Ran(format!(
        "selected {} poses into {}",
        subset.len(),
        ws.poses().display()
    )))
}

// ---- render-conditions ----

/// Ground truth and projection data of one rendered pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub pose_id: String,
    pub gender: Gender,
    pub conditioning_dir: String,
    pub image_size: [u32; 2],
    pub skeleton: String,
    pub orientation_deg: f64,
    pub keypoints2d: Vec<[f64; 2]>,
    pub keypoint_visible: Vec<bool>,
    /// Native joints in the camera frame, meters.
    pub joints3d: Vec<[f64; 3]>,
    pub joint_format: String,
}

impl TargetRecord {
    pub fn pose_target(&self) -> Result<PoseTarget, CliError> {
        Ok(PoseTarget {
            pose_id: self.pose_id.clone(),
            gender: self.gender,
            conditioning_dir: self.conditioning_dir.clone(),
            image_size: (self.image_size[0], self.image_size[1]),
            skeleton: SkeletonFormat::from_name(&self.skeleton).map_err(internal)?,
            keypoints2d: self.keypoints2d.clone(),
            keypoint_visible: self.keypoint_visible.clone(),
        })
    }
}

pub fn load_targets(path: &Path) -> Result<Vec<TargetRecord>, CliError> {
    let text = String::from_utf8(read(path)?).map_err(internal)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Internal(format!("{}: {e}", path.display()))))
        .collect()
}

fn render_input_hash(cfg: &ExperimentConfig, ws: &Workspace) -> Result<String, CliError> {
    Ok(hash_json(&(
        "render-conditions",
        hash_file(&cfg.body_model.path)?,
        hash_file(&ws.poses())?,
        &cfg.render,
        &cfg.eval.gt_format,
    )))
}

pub fn render_conditions(cfg: &ExperimentConfig, opts: &StageOptions) -> Result<StageOutcome, CliError> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.experiment.workspace);
    require(&ws.poses(), "sample-poses")?;
    let input = render_input_hash(cfg, &ws)?;
    if up_to_date(&ws, "render-conditions", &input) {
        return Ok(StageOutcome::UpToDate(format!("{} is up to date", ws.targets().display())));
    }
    let poses = PoseCorpus::load(ws.poses()).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
    if opts.dry_run {
        return Ok(StageOutcome::Planned(format!(
            "would render {} conditioning bundles at {}x{} into {}",
            poses.len(),
            cfg.render.image_size.0,
            cfg.render.image_size.1,
            ws.root.join("conditioning").display()
        )));
    }
    let model = load_model(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.parallelism)
        .build()
        .map_err(internal)?;
    let records: Vec<TargetRecord> = pool.install(|| {
        poses
            .poses
            .par_iter()
            .map(|pose| {
                let bundle = build_conditioning_bundle(&model, pose, &cfg.render).map_err(internal)?;
                let rel = Workspace::conditioning_rel(&pose.pose_id);
                bundle.write_dir(&ws.root.join(&rel)).map_err(internal)?;
                let mesh = skin_mesh(&model, &bundle.pose).map_err(internal)?;
                let native = regress_joints(&mesh.vertices, &model.joint_regressor_native).map_err(internal)?;
                let joints3d = native
                    .iter()
                    .map(|p| {
                        let c = bundle.camera.to_camera(p);
                        [c.x, c.y, c.z]
                    })
                    .collect();
                Ok(TargetRecord {
                    pose_id: pose.pose_id.clone(),
                    gender: pose.gender,
                    conditioning_dir: rel,
                    image_size: [cfg.render.image_size.0, cfg.render.image_size.1],
                    skeleton: cfg.render.skeleton.clone(),
                    orientation_deg: bundle.orientation_deg,
                    keypoints2d: bundle.keypoints2d.clone(),
                    keypoint_visible: bundle.keypoint_visible.clone(),
                    joints3d,
                    joint_format: cfg.eval.gt_format.clone(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("targets serialize"));
        text.push('\n');
    }
    write_atomic(&ws.targets(), text.as_bytes())?;
    write_stamp(&ws, "render-conditions", &input, &[&ws.targets()])?;
    Ok(StageOutcome::Ran(format!(
        "rendered {} conditioning bundles",
        records.len()
    )))
}

// ---- services ----

fn oracle(targets: &[TargetRecord]) -> Oracle {
    Oracle {
        joints3d: targets
            .iter()
            .map(|t| (t.pose_id.clone(), t.joints3d.clone()))
            .collect(),
        keypoints2d: targets
            .iter()
            .map(|t| (t.pose_id.clone(), (t.keypoints2d.clone(), t.keypoint_visible.clone())))
            .collect(),
    }
}

/// Mock services answer from the rendered ground truth; any other endpoint
/// is reached over HTTP or stdio.
pub fn build_services(cfg: &ExperimentConfig, targets: &[TargetRecord]) -> Result<ServiceSet, CliError> {
    let mut set = ServiceSet::mock(&cfg.mock, oracle(targets), &cfg.eval.gt_format, &cfg.render.skeleton);
    let remote = |spec: &str| -> Result<Option<Arc<RemoteService>>, CliError> {
        if spec == MOCK {
            return Ok(None);
        }
        let endpoint = Endpoint::parse(spec).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
        Ok(Some(Arc::new(RemoteService::new(endpoint, cfg.services.retry.clone()))))
    };
    if let Some(s) = remote(&cfg.services.generator)? {
        set.generator = s;
    }
    if let Some(s) = remote(&cfg.services.estimator)? {
        set.estimator = s;
    }
    if let Some(s) = remote(&cfg.services.keypoints)? {
        set.keypoints = s;
    }
    if let Some(s) = remote(&cfg.services.vqa)? {
        set.vqa = s;
    }
    Ok(set)
}

fn map_orchestrator(e: OrchestratorError) -> CliError {
    use stage_core::filters::FilterError;
    match e {
        OrchestratorError::Cell {
            source: FilterError::Service(s),
            pose_id,
            attribute_id,
        } => CliError::Service(format!("pose {pose_id}, attribute {attribute_id}: {s}")),
        OrchestratorError::ConfigChanged { .. } | OrchestratorError::Invalid(_) => {
            CliError::Validation(vec![e.to_string()])
        }
        other => CliError::Internal(other.to_string()),
    }
}

// ---- generate ----

fn generation_config(cfg: &ExperimentConfig, catalog: &CatalogConfig) -> GenerationConfig {
    GenerationConfig {
        experiment_seed: cfg.experiment.seed,
        max_attempts: cfg.generation.max_attempts,
        parallelism: cfg.experiment.parallelism,
        use_3d_conditioning: cfg.generation.use_3d_conditioning,
        negative_prompt: catalog.negative_prompt.clone(),
        filters: cfg.generation.filters.clone(),
    }
}

/// Hash of everything that shapes the manifest content. The workspace
/// location, parallelism and endpoint addresses are left out.
fn manifest_config_hash(
    cfg: &ExperimentConfig,
    gen: &GenerationConfig,
    work: &[PoseWork],
    targets_hash: &str,
    kind: &str,
) -> String {
    let mut gen = gen.clone();
    gen.parallelism = 0;
    let cells: Vec<(String, Vec<(String, String, String, PromptSlots, Option<(Slot, String)>)>)> = work
        .iter()
        .map(|w| {
            (
                w.target.pose_id.clone(),
                w.cells
                    .iter()
                    .map(|c| {
                        (
                            c.attribute_id.clone(),
                            c.category.clone(),
                            c.template.clone(),
                            c.base_slots.clone(),
                            c.change.clone(),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    // The estimator mock only matters from predict on.
    let mock = (&cfg.mock.generator, &cfg.mock.keypoints, &cfg.mock.vqa);
    hash_json(&(kind, PROTOCOL_VERSION, &gen, mock, targets_hash, cells))
}

fn selected_categories(cfg: &ExperimentConfig, catalog: &CatalogConfig) -> Vec<String> {
    if cfg.prompts.categories.is_empty() {
        catalog.categories.iter().map(|c| c.name.clone()).collect()
    } else {
        cfg.prompts.categories.clone()
    }
}

fn benchmark_work(
    cfg: &ExperimentConfig,
    catalog: &CatalogConfig,
    targets: &[TargetRecord],
) -> Result<Vec<PoseWork>, CliError> {
    let mut specs = Vec::new();
    for name in selected_categories(cfg, catalog) {
        specs.extend(
            catalog
                .expand_category(&name)
                .map_err(|e| CliError::Validation(vec![e.to_string()]))?,
        );
    }
    targets
        .iter()
        .map(|t| {
            Ok(PoseWork {
                target: t.pose_target()?,
                cells: specs
                    .iter()
                    .map(|s| CellSpec {
                        attribute_id: s.attribute_id.clone(),
                        category: s.category.clone(),
                        template: catalog.template.clone(),
                        base_slots: s.base_slots_for(t.gender),
                        change: Some((s.slot, s.attribute_value.clone())),
                    })
                    .collect(),
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_generation(
    opts: &StageOptions,
    ws: &Workspace,
    stage: &str,
    manifest_path: &Path,
    work: &[PoseWork],
    gen: &GenerationConfig,
    config_hash: &str,
    services: &ServiceSet,
) -> Result<StageOutcome, CliError> {
    let cells: usize = work.iter().map(|w| w.cells.len()).sum();
    if up_to_date(ws, stage, config_hash) {
        return Ok(StageOutcome::UpToDate(format!(
            "{} is up to date",
            manifest_path.display()
        )));
    }
    let existing = if manifest_path.exists() {
        let m = BenchmarkManifest::load(manifest_path).map_err(map_orchestrator)?;
        if m.header.config_hash != config_hash {
            return Err(CliError::Validation(vec![format!(
                "{} was produced by a different configuration; use a fresh workspace",
                manifest_path.display()
            )]));
        }
        Some(m.completed_cells().len())
    } else {
        None
    };
    if opts.dry_run {
        let done = existing.unwrap_or(0);
        return Ok(StageOutcome::Planned(format!(
            "would generate {} of {cells} cells ({} poses, up to {} attempts each) into {}",
            cells.saturating_sub(done),
            work.len(),
            gen.max_attempts,
            manifest_path.display()
        )));
    }
    if let Some(done) = existing {
        if done > 0 && !opts.resume {
            return Err(CliError::Validation(vec![format!(
                "{} already has {done} completed cells; pass --resume to continue it",
                manifest_path.display()
            )]));
        }
    }
    let summary = build_benchmark(
        work,
        gen,
        config_hash,
        &ws.root,
        manifest_path,
        services,
        &RunOptions {
            stop_after_cells: opts.stop_after_cells,
        },
    )
    .map_err(map_orchestrator)?;
    if !summary.complete {
        return Ok(StageOutcome::Partial(format!(
            "stopped after {} new cells; rerun with --resume to continue",
            summary.cells_written
        )));
    }
    let mut manifest = BenchmarkManifest::load(manifest_path).map_err(map_orchestrator)?;
    manifest
        .finalize(manifest_path, &attribute_order(work))
        .map_err(map_orchestrator)?;
    write_stamp(ws, stage, config_hash, &[manifest_path])?;
    let valid = manifest.cells.iter().filter(|c| c.valid).count();
    Ok(StageOutcome::Ran(format!(
        "{valid} of {} cells valid ({} generated in this run)",
        manifest.cells.len(),
        summary.cells_written
    )))
}

pub fn generate(cfg: &ExperimentConfig, opts: &StageOptions) -> Result<StageOutcome, CliError> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.experiment.workspace);
    require(&ws.targets(), "render-conditions")?;
    let targets = load_targets(&ws.targets())?;
    let catalog = cfg.catalog()?;
    let work = benchmark_work(cfg, &catalog, &targets)?;
    let gen = generation_config(cfg, &catalog);
    let hash = manifest_config_hash(cfg, &gen, &work, &hash_file(&ws.targets())?, "benchmark");
    let services = build_services(cfg, &targets)?;
    run_generation(opts, &ws, "generate", &ws.manifest(), &work, &gen, &hash, &services)
}

// ---- replica ----

/// Reads `pose_id,<slot>,...` rows; unlisted slots keep canonical values.
pub fn load_replica_slots(path: &Path) -> Result<BTreeMap<String, BTreeMap<Slot, String>>, CliError> {
    let bad = |m: String| CliError::Validation(vec![format!("{}: {m}", path.display())]);
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("pose_id") {
        return Err(bad("first column must be pose_id".into()));
    }
    let slots: Vec<Slot> = header[1..]
        .iter()
        .map(|h| h.parse::<Slot>().map_err(|e| bad(e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut row = BTreeMap::new();
        for (slot, value) in slots.iter().zip(rec.iter().skip(1)) {
            if !value.trim().is_empty() {
                row.insert(*slot, value.trim().to_string());
            }
        }
        if out.insert(rec[0].to_string(), row).is_some() {
            return Err(bad(format!("pose {} listed twice", &rec[0])));
        }
    }
    Ok(out)
}

pub const REPLICA_ID: &str = "replica";

pub fn replica(cfg: &ExperimentConfig, opts: &StageOptions) -> Result<StageOutcome, CliError> {
    cfg.validate()?;
    let slots_path = cfg.replica.slots.as_ref().ok_or_else(|| {
        CliError::Validation(vec!["replica.slots must name the per-pose slot file".into()])
    })?;
    let ws = Workspace::new(&cfg.experiment.workspace);
    require(&ws.targets(), "render-conditions")?;
    let targets = load_targets(&ws.targets())?;
    let rows = load_replica_slots(slots_path)?;
    let catalog = cfg.catalog()?;
    let template = cfg.replica.template.clone().unwrap_or_else(|| catalog.template.clone());
    let by_id: HashMap<&str, &TargetRecord> = targets.iter().map(|t| (t.pose_id.as_str(), t)).collect();
    let mut missing = Vec::new();
    let mut work = Vec::new();
    for (pose_id, row) in &rows {
        let Some(t) = by_id.get(pose_id.as_str()) else {
            missing.push(format!("replica.slots: pose {pose_id} was not rendered"));
            continue;
        };
        let mut slots = PromptSlots::canonical();
        if matches!(t.gender, Gender::Male | Gender::Female) {
            slots.set(Slot::Gender, t.gender.as_str());
        }
        for (slot, value) in row {
            slots.set(*slot, value.clone());
        }
        work.push(PoseWork {
            target: t.pose_target()?,
            cells: vec![CellSpec {
                attribute_id: REPLICA_ID.into(),
                category: REPLICA_ID.into(),
                template: template.clone(),
                base_slots: slots,
                change: None,
            }],
        });
    }
    if !missing.is_empty() {
        return Err(CliError::Validation(missing));
    }
    let gen = generation_config(cfg, &catalog);
    let hash = manifest_config_hash(cfg, &gen, &work, &hash_file(&ws.targets())?, "replica");
    let services = build_services(cfg, &targets)?;
    run_generation(opts, &ws, "replica", &ws.replica_manifest(), &work, &gen, &hash, &services)
}

// ---- predict ----

pub fn predict(cfg: &ExperimentConfig, opts: &StageOptions) -> Result<StageOutcome, CliError> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.experiment.workspace);
    require(&ws.manifest(), "generate")?;
    require(&ws.targets(), "render-conditions")?;
    let estimator = &cfg.services.estimator_name;
    let out = ws.predictions(estimator);
    let stage = format!("predict-{estimator}");
    let endpoint = if cfg.services.estimator == MOCK {
        hash_json(&("mock", &cfg.mock.estimator))
    } else {
        cfg.services.estimator.clone()
    };
    let input = hash_json(&("predict", hash_file(&ws.manifest())?, estimator, endpoint));
    if up_to_date(&ws, &stage, &input) {
        return Ok(StageOutcome::UpToDate(format!("{} is up to date", out.display())));
    }
    let manifest = BenchmarkManifest::load(&ws.manifest()).map_err(map_orchestrator)?;
    if manifest.valid_sets.is_empty() {
        return Err(CliError::Validation(vec![format!(
            "{} is not finalized; finish generate first",
            ws.manifest().display()
        )]));
    }
    let mut store = if opts.resume && out.exists() {
        PredictionStore::load(&out).map_err(internal)?
    } else {
        PredictionStore::new()
    };
    // (pose, attribute, role, image) still to predict.
    let mut todo: Vec<(String, String, Role, String)> = Vec::new();
    for pair in manifest.valid_pairs() {
        let att = pair
            .attribute_image
            .clone()
            .ok_or_else(|| CliError::Internal(format!("pair {}/{} has no attribute image", pair.pose_id, pair.attribute_id)))?;
        for (role, image) in [(Role::Base, pair.base_image.clone()), (Role::Attribute, att)] {
            if !store.contains(&pair.pose_id, &pair.attribute_id, role) {
                todo.push((pair.pose_id.clone(), pair.attribute_id.clone(), role, image));
            }
        }
    }
    if opts.dry_run {
        return Ok(StageOutcome::Planned(format!(
            "would run estimator {estimator} on {} images into {}",
            todo.len(),
            out.display()
        )));
    }
    let targets = load_targets(&ws.targets())?;
    let services = build_services(cfg, &targets)?;
    let mut images: Vec<(&str, &str, Option<&str>, Role)> = Vec::new();
    for (pose_id, attribute_id, role, image) in &todo {
        if !images.iter().any(|i| i.0 == image.as_str()) {
            let attr = (*role == Role::Attribute).then_some(attribute_id.as_str());
            images.push((image.as_str(), pose_id.as_str(), attr, *role));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.parallelism)
        .build()
        .map_err(internal)?;
    let results: Vec<(String, Vec<[f64; 3]>, String)> = pool.install(|| {
        images
            .par_iter()
            .map(|(image, pose_id, attribute_id, role)| {
                let resp = services
                    .estimator
                    .estimate(&EstimateRequest {
                        protocol_version: PROTOCOL_VERSION,
                        image_path: ws.root.join(image).to_string_lossy().into_owned(),
                        hints: Hints {
                            pose_id: Some(pose_id.to_string()),
                            attribute_id: attribute_id.map(str::to_string),
                            role: Some(*role),
                            attempt: None,
                        },
                    })
                    .map_err(|e| CliError::Service(e.to_string()))?;
                Ok((image.to_string(), resp.joints3d, resp.joint_format))
            })
            .collect::<Result<_, CliError>>()
    })?;
    let by_image: HashMap<&str, (&Vec<[f64; 3]>, &String)> =
        results.iter().map(|(i, j, f)| (i.as_str(), (j, f))).collect();
    for (pose_id, attribute_id, role, image) in todo {
        let (joints, format) = by_image[image.as_str()];
        store.insert(PredictionRecord {
            pose_id,
            attribute_id,
            role,
            image,
            joints3d: joints.clone(),
            joint_format: format.clone(),
        });
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(internal)?;
    }
    store.save(&out).map_err(internal)?;
    write_stamp(&ws, &stage, &input, &[&out])?;
    Ok(StageOutcome::Ran(format!(
        "{} predictions in {} ({} estimator calls)",
        store.len(),
        out.display(),
        results.len()
    )))
}

// ---- evaluate ----

pub fn labels(catalog: &CatalogConfig) -> Labels {
    let mut out = Labels::new();
    for c in &catalog.categories {
        out.insert(c.name.clone(), c.display_label().to_string());
        for a in &c.attributes {
            out.insert(a.id.clone(), a.value.clone());
        }
    }
    out
}

pub fn evaluate(cfg: &ExperimentConfig, opts: &StageOptions) -> Result<StageOutcome, CliError> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.experiment.workspace);
    let estimator = &cfg.services.estimator_name;
    let preds = ws.predictions(estimator);
    require(&ws.manifest(), "generate")?;
    require(&preds, "predict")?;
    let dir = report_dir(&ws.reports(), &cfg.experiment.name, estimator);
    let stage = format!("evaluate-{estimator}");
    let catalog = cfg.catalog()?;
    let input = hash_json(&(
        "evaluate",
        hash_file(&ws.manifest())?,
        hash_file(&preds)?,
        hash_file(&ws.targets())?,
        &cfg.eval,
        &cfg.report,
        &cfg.experiment.name,
        labels(&catalog),
    ));
    if up_to_date(&ws, &stage, &input) {
        return Ok(StageOutcome::UpToDate(format!("{} is up to date", dir.display())));
    }
    if opts.dry_run {
        return Ok(StageOutcome::Planned(format!(
            "would evaluate {} against ground truth at tau = {} mm into {}",
            preds.display(),
            cfg.eval.tau_mm,
            dir.display()
        )));
    }
    let manifest = BenchmarkManifest::load(&ws.manifest()).map_err(map_orchestrator)?;
    let store = PredictionStore::load(&preds).map_err(internal)?;
    let gt: HashMap<String, Vec<[f64; 3]>> = load_targets(&ws.targets())?
        .into_iter()
        .map(|t| (t.pose_id, t.joints3d))
        .collect();
    let eval = evaluate_manifest(&manifest, &store, &gt, &cfg.eval, estimator, None).map_err(|e| match e {
        stage_core::metrics::MetricsError::MissingPrediction { .. } => CliError::Validation(vec![e.to_string()]),
        other => CliError::Internal(other.to_string()),
    })?;
    let report = summarize(
        &cfg.experiment.name,
        &eval,
        &manifest,
        &labels(&catalog),
        cfg.report.fid.clone(),
        cfg.eval.intersect,
    )
    .map_err(internal)?;
    let files = emit(&report, &dir).map_err(internal)?;
    let records_path = dir.join("records.jsonl");
    let mut text = String::new();
    for r in &eval.records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    write_atomic(&records_path, text.as_bytes())?;
    let mut outputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    outputs.push(&records_path);
    write_stamp(&ws, &stage, &input, &outputs)?;
    Ok(StageOutcome::Ran(format!(
        "overall PDP {:.2}% over {} categories; report in {}",
        report.overall_pdp,
        report.categories.len(),
        dir.display()
    )))
}
