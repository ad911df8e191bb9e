//! Generation of the paired benchmark: for every pose and attribute, retry
//! base/attribute image pairs under a shared noise seed until both pass the
//! filters or the attempt budget runs out.

mod manifest;

pub use manifest::{
    AttemptRecord, BenchmarkManifest, CellRecord, ManifestHeader, ManifestRecord, ManifestWriter,
    SamplePair, ValidSetRecord,
};

use crate::body_model::Gender;
use crate::cond_render::{SkeletonFormat, DEPTH_FILE, SEMANTIC_FILE, SKELETON_FILE};
use crate::filters::{apply_filters, FilterConfig, FilterError, FilterInput, FilterVerdict};
use crate::hashing::{hash_u64, sha256_hex};
use crate::prompt_catalog::{render_prompt, PromptSlots, Slot};
use crate::services::{
    ConditionRef, Conditioning, GenerateRequest, Hints, Role, ServiceSet, PROTOCOL_VERSION,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 13;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("{0}")]
    Io(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest was produced by config {found}, current config is {expected}")]
    ConfigChanged { expected: String, found: String },
    #[error("pose {pose_id}, attribute {attribute_id}: {source}")]
    Cell {
        pose_id: String,
        attribute_id: String,
        #[source]
        source: FilterError,
    },
    #[error("invalid generation input: {0}")]
    Invalid(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
}

/// Noise seed shared by the base and attribute image of an attempt, and by
/// every attribute of the pose.
pub fn derive_seed(experiment_seed: u64, pose_id: &str, attempt: u32) -> u64 {
    hash_u64(&[
        b"noise",
        &experiment_seed.to_le_bytes(),
        pose_id.as_bytes(),
        &attempt.to_le_bytes(),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub experiment_seed: u64,
    pub max_attempts: u32,
    /// Poses processed concurrently.
    pub parallelism: usize,
    /// Send depth and semantic maps; off means zero markers.
    pub use_3d_conditioning: bool,
    pub negative_prompt: String,
    pub filters: FilterConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            experiment_seed: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            parallelism: 4,
            use_3d_conditioning: true,
            negative_prompt: String::new(),
            filters: FilterConfig::default(),
        }
    }
}

/// Everything the harness knows about one benchmark pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTarget {
    pub pose_id: String,
    pub gender: Gender,
    /// Workspace-relative directory holding the conditioning PNGs.
    pub conditioning_dir: String,
    pub image_size: (u32, u32),
    pub skeleton: SkeletonFormat,
    pub keypoints2d: Vec<[f64; 2]>,
    pub keypoint_visible: Vec<bool>,
}

/// One (pose, attribute) cell. Without an attribute change the cell is a
/// single image judged on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub attribute_id: String,
    pub category: String,
    pub template: String,
    pub base_slots: PromptSlots,
    pub change: Option<(Slot, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub attempts: Vec<AttemptRecord>,
    pub cell: CellRecord,
}

/// Base images already generated for a pose, keyed by prompt and attempt.
pub type BaseCache = HashMap<(String, u32), (String, FilterVerdict)>;

fn path_safe(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn rel_to_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn base_image_path(pose_id: &str, base_prompt: &str, attempt: u32) -> String {
    let tag = &sha256_hex(base_prompt.as_bytes())[..12];
    format!("images/{pose_id}/base-{tag}/a{attempt:02}.png")
}

pub fn attribute_image_path(pose_id: &str, attribute_id: &str, attempt: u32) -> String {
    format!("images/{pose_id}/{attribute_id}/a{attempt:02}.png")
}

struct Context<'a> {
    config: &'a GenerationConfig,
    workspace: &'a Path,
    services: &'a ServiceSet,
}

impl Context<'_> {
    fn abs(&self, rel: &str) -> String {
        self.workspace.join(rel).to_string_lossy().into_owned()
    }

    fn conditioning(&self, target: &PoseTarget) -> Conditioning {
        let file = |name: &str| ConditionRef::File {
            path: self.abs(&format!("{}/{name}", target.conditioning_dir)),
        };
        let (depth, semantic) = if self.config.use_3d_conditioning {
            (file(DEPTH_FILE), file(SEMANTIC_FILE))
        } else {
            (ConditionRef::Zero, ConditionRef::Zero)
        };
        Conditioning {
            depth,
            semantic,
            skeleton: file(SKELETON_FILE),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn generate_and_judge(
        &self,
        target: &PoseTarget,
        prompt: &str,
        slots: &PromptSlots,
        attribute_slot: Option<Slot>,
        seed: u64,
        rel: &str,
        hints: Hints,
    ) -> Result<FilterVerdict, FilterError> {
        let output = self.abs(rel);
        if let Some(parent) = Path::new(&output).parent() {
            std::fs::create_dir_all(parent).map_err(|e| {
                FilterError::Service(crate::services::ServiceError::Mock(format!(
                    "{}: {e}",
                    parent.display()
                )))
            })?;
        }
        let response = self.services.generator.generate(&GenerateRequest {
            protocol_version: PROTOCOL_VERSION,
            prompt: prompt.to_string(),
            negative_prompt: self.config.negative_prompt.clone(),
            noise_seed: seed,
            conditioning: self.conditioning(target),
            image_size: [target.image_size.0, target.image_size.1],
            output_path: output.clone(),
            hints: hints.clone(),
        })?;
        if response.image_path != output {
            log::warn!(
                "generator wrote {} instead of {output}",
                response.image_path
            );
        }
        apply_filters(
            &FilterInput {
                image_path: &response.image_path,
                projected: &target.keypoints2d,
                visible: &target.keypoint_visible,
                format: target.skeleton,
                slots,
                attribute_slot,
                hints,
            },
            self.services,
            &self.config.filters,
        )
    }
}

/// Retries a cell until a pair passes or the budget is spent. Base images
/// are reused from `cache` when another attribute of the pose already
/// produced them.
pub fn generate_pair(
    target: &PoseTarget,
    cell: &CellSpec,
    config: &GenerationConfig,
    workspace: &Path,
    services: &ServiceSet,
    cache: &mut BaseCache,
) -> Result<CellOutcome, OrchestratorError> {
    let ctx = Context {
        config,
        workspace,
        services,
    };
    let wrap = |source: FilterError| OrchestratorError::Cell {
        pose_id: target.pose_id.clone(),
        attribute_id: cell.attribute_id.clone(),
        source,
    };
    let render = |slots: &PromptSlots| {
        render_prompt(slots, &cell.template).map_err(|e| OrchestratorError::Invalid(e.to_string()))
    };
    let base_prompt = render(&cell.base_slots)?;
    let attribute_slots = cell
        .change
        .as_ref()
        .map(|(slot, value)| cell.base_slots.with(*slot, value.clone()));
    let attribute_prompt = attribute_slots.as_ref().map(render).transpose()?;

    let mut attempts = Vec::new();
    let mut valid_attempt = None;
    for attempt in 0..config.max_attempts {
        let seed = derive_seed(config.experiment_seed, &target.pose_id, attempt);
        let key = (base_prompt.clone(), attempt);
        let (base_image, base_verdict) = match cache.get(&key) {
            Some(hit) => hit.clone(),
            None => {
                let rel = base_image_path(&target.pose_id, &base_prompt, attempt);
                let verdict = ctx
                    .generate_and_judge(
                        target,
                        &base_prompt,
                        &cell.base_slots,
                        None,
                        seed,
                        &rel,
                        Hints {
                            pose_id: Some(target.pose_id.clone()),
                            attribute_id: None,
                            role: Some(Role::Base),
                            attempt: Some(attempt),
                        },
                    )
                    .map_err(wrap)?;
                cache.insert(key, (rel.clone(), verdict.clone()));
                (rel, verdict)
            }
        };
        let (attribute_image, attribute_verdict) = match (&attribute_slots, &attribute_prompt) {
            (Some(slots), Some(prompt)) if base_verdict.pass => {
                let rel = attribute_image_path(&target.pose_id, &cell.attribute_id, attempt);
                let verdict = ctx
                    .generate_and_judge(
                        target,
                        prompt,
                        slots,
                        cell.change.as_ref().map(|c| c.0),
                        seed,
                        &rel,
                        Hints {
                            pose_id: Some(target.pose_id.clone()),
                            attribute_id: Some(cell.attribute_id.clone()),
                            role: Some(Role::Attribute),
                            attempt: Some(attempt),
                        },
                    )
                    .map_err(wrap)?;
                (Some(rel), Some(verdict))
            }
            _ => (None, None),
        };
        let valid = base_verdict.pass
            && match (&cell.change, &attribute_verdict) {
                (None, _) => true,
                (Some(_), Some(v)) => v.pass,
                (Some(_), None) => false,
            };
        attempts.push(AttemptRecord {
            pose_id: target.pose_id.clone(),
            attribute_id: cell.attribute_id.clone(),
            category: cell.category.clone(),
            attempt,
            noise_seed: seed,
            base_prompt: base_prompt.clone(),
            attribute_prompt: attribute_prompt.clone(),
            base_image,
            attribute_image,
            base_verdict,
            attribute_verdict,
            valid,
        });
        if valid {
            valid_attempt = Some(attempt);
            break;
        }
    }
    let cell_record = CellRecord {
        pose_id: target.pose_id.clone(),
        attribute_id: cell.attribute_id.clone(),
        category: cell.category.clone(),
        attempts: attempts.len() as u32,
        valid: valid_attempt.is_some(),
        valid_attempt,
    };
    Ok(CellOutcome {
        attempts,
        cell: cell_record,
    })
}

/// One pose and the cells to generate for it.
#[derive(Debug, Clone)]
pub struct PoseWork {
    pub target: PoseTarget,
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop once this many cells have been written in this run.
    pub stop_after_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub cells_written: usize,
    pub cells_skipped: usize,
    pub complete: bool,
}

fn validate_work(work: &[PoseWork]) -> Result<(), OrchestratorError> {
    let mut poses = BTreeSet::new();
    let mut attribute_categories: HashMap<&str, &str> = HashMap::new();
    for w in work {
        let t = &w.target;
        if !path_safe(&t.pose_id) {
            return Err(OrchestratorError::Invalid(format!(
                "pose id {:?} is not path safe",
                t.pose_id
            )));
        }
        if !poses.insert(t.pose_id.as_str()) {
            return Err(OrchestratorError::Invalid(format!(
                "duplicate pose id {}",
                t.pose_id
            )));
        }
        let k = t.skeleton.num_joints();
        if t.keypoints2d.len() != k || t.keypoint_visible.len() != k {
            return Err(OrchestratorError::Invalid(format!(
                "pose {} has {} keypoints, skeleton {} has {k}",
                t.pose_id,
                t.keypoints2d.len(),
                t.skeleton.name()
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &w.cells {
            if !path_safe(&c.attribute_id) || c.attribute_id.starts_with("base-") {
                return Err(OrchestratorError::Invalid(format!(
                    "attribute id {:?} is not usable as a directory name",
                    c.attribute_id
                )));
            }
            if !seen.insert(c.attribute_id.as_str()) {
                return Err(OrchestratorError::Invalid(format!(
                    "pose {} lists attribute {} twice",
                    t.pose_id, c.attribute_id
                )));
            }
            if let Some(prev) = attribute_categories.insert(&c.attribute_id, &c.category) {
                if prev != c.category {
                    return Err(OrchestratorError::Invalid(format!(
                        "attribute {} appears in categories {prev} and {}",
                        c.attribute_id, c.category
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Generates every cell not yet recorded in the manifest at
/// `manifest_path`, appending as cells finish. Poses run in parallel; the
/// cells of one pose run in order so base images are shared safely.
pub fn build_benchmark(
    work: &[PoseWork],
    config: &GenerationConfig,
    config_hash: &str,
    workspace: &Path,
    manifest_path: &Path,
    services: &ServiceSet,
    options: &RunOptions,
) -> Result<RunSummary, OrchestratorError> {
    validate_work(work)?;
    if config.max_attempts == 0 {
        return Err(OrchestratorError::Invalid("max_attempts must be positive".into()));
    }
    let header = ManifestHeader {
        protocol_version: PROTOCOL_VERSION,
        config_hash: config_hash.to_string(),
        experiment_seed: config.experiment_seed,
        max_attempts: config.max_attempts,
    };
    let done = if manifest_path.exists() {
        let existing = BenchmarkManifest::load(manifest_path)?;
        if existing.header.config_hash != config_hash {
            return Err(OrchestratorError::ConfigChanged {
                expected: config_hash.to_string(),
                found: existing.header.config_hash,
            });
        }
        existing.completed_cells()
    } else {
        BTreeSet::new()
    };
    let writer = Mutex::new(ManifestWriter::open(manifest_path, &header)?);
    let written = AtomicUsize::new(0);
    let claimed = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let stopped = AtomicBool::new(false);
    let failure: Mutex<Option<OrchestratorError>> = Mutex::new(None);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| OrchestratorError::Invalid(e.to_string()))?;
    pool.install(|| {
        work.par_iter().for_each(|w| {
            let mut cache = BaseCache::new();
            for cell in &w.cells {
                if stopped.load(Ordering::SeqCst) {
                    return;
                }
                if done.contains(&(w.target.pose_id.clone(), cell.attribute_id.clone())) {
                    skipped.fetch_add(1, Ordering::SeqCst);
                    continue;
                }
                if let Some(limit) = options.stop_after_cells {
                    if claimed.fetch_add(1, Ordering::SeqCst) >= limit {
                        stopped.store(true, Ordering::SeqCst);
                        return;
                    }
                }
                let result = generate_pair(&w.target, cell, config, workspace, services, &mut cache)
                    .and_then(|outcome| {
                        writer
                            .lock()
                            .unwrap_or_else(|p| p.into_inner())
                            .append_cell(&outcome.attempts, &outcome.cell)
                    });
                match result {
                    Ok(()) => {
                        written.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(e) => {
                        stopped.store(true, Ordering::SeqCst);
                        failure
                            .lock()
                            .unwrap_or_else(|p| p.into_inner())
                            .get_or_insert(e);
                        return;
                    }
                }
            }
        })
    });
    if let Some(e) = failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    let total: usize = work.iter().map(|w| w.cells.len()).sum();
    let cells_written = written.into_inner();
    let cells_skipped = skipped.into_inner();
    Ok(RunSummary {
        cells_written,
        cells_skipped,
        complete: cells_written + cells_skipped == total,
    })
}

/// Category and attribute order used when finalizing.
pub fn attribute_order(work: &[PoseWork]) -> Vec<(String, String)> {
    let mut order: Vec<(String, String)> = Vec::new();
    for w in work {
        for c in &w.cells {
            if !order.iter().any(|(_, a)| *a == c.attribute_id) {
                order.push((c.category.clone(), c.attribute_id.clone()));
            }
        }
    }
    order
}

/// Poses valid for every listed attribute. A valid cell implies its base
/// image passed too.
pub fn intersect_valid(
    manifest: &BenchmarkManifest,
    attribute_ids: &[&str],
) -> Result<BTreeSet<String>, OrchestratorError> {
    let known = manifest.attribute_ids();
    let mut out: Option<BTreeSet<String>> = None;
    for id in attribute_ids {
        if !known.contains(id) {
            return Err(OrchestratorError::UnknownAttribute(id.to_string()));
        }
        let valid = manifest.valid_pose_ids(id);
        out = Some(match out {
            None => valid,
            Some(acc) => acc.intersection(&valid).cloned().collect(),
        });
    }
    Ok(out.unwrap_or_default())
}

/// Workspace-relative form of `path`, with forward slashes.
pub fn relative_to(workspace: &Path, path: &Path) -> String {
    rel_to_string(path.strip_prefix(workspace).unwrap_or(path))
}

/// Default layout of a benchmark workspace.
pub fn manifest_path(workspace: &Path) -> PathBuf {
    workspace.join("manifest.jsonl")
}
