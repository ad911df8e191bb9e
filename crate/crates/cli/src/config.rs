//! Experiment configuration: one TOML file, paths relative to the file,
//! service endpoints overridable from the environment.

use serde::{Deserialize, Serialize};
use stage_core::cond_render::{RenderConfig, SkeletonFormat};
use stage_core::filters::FilterConfig;
use stage_core::metrics::EvalConfig;
use stage_core::prompt_catalog::CatalogConfig;
use stage_core::services::mocks::MockConfig;
use stage_core::services::{Endpoint, RetryPolicy};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const ENV_GENERATOR: &str = "STAGE_GENERATOR_URL";
pub const ENV_ESTIMATOR: &str = "STAGE_ESTIMATOR_URL";
pub const ENV_KEYPOINTS: &str = "STAGE_KEYPOINT_URL";
pub const ENV_VQA: &str = "STAGE_VQA_URL";

/// Endpoint value selecting the in-process deterministic stand-in.
pub const MOCK: &str = "mock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub workspace: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyModelSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub corpus: PathBuf,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Split the count evenly between male and female poses.
    #[serde(default = "yes")]
    pub balance: bool,
}

fn default_count() -> usize {
    1500
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsSection {
    /// Category catalog; the bundled six-category catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Categories to generate, in order; empty means all.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesSection {
    pub generator: String,
    pub estimator: String,
    pub keypoints: String,
    pub vqa: String,
    /// Name used for prediction and report paths.
    pub estimator_name: String,
    pub retry: RetryPolicy,
}

impl Default for ServicesSection {
    fn default() -> Self {
        Self {
            generator: MOCK.into(),
            estimator: MOCK.into(),
            keypoints: MOCK.into(),
            vqa: MOCK.into(),
            estimator_name: MOCK.into(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub max_attempts: u32,
    pub use_3d_conditioning: bool,
    pub filters: FilterConfig,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            max_attempts: stage_core::orchestrator::DEFAULT_MAX_ATTEMPTS,
            use_3d_conditioning: true,
            filters: FilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Externally computed FID values copied into the report.
    pub fid: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicaSection {
    /// CSV with a `pose_id` column and one column per overridden slot.
    pub slots: Option<PathBuf>,
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub body_model: BodyModelSection,
    pub sampling: SamplingSection,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub prompts: PromptsSection,
    #[serde(default)]
    pub services: ServicesSection,
    #[serde(default)]
    pub mock: MockConfig,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub replica: ReplicaSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(vec![format!("config: {e}")]))
    }

    /// Parses `path`, resolves relative paths against its directory and
    /// applies endpoint overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(vec![format!("cannot read config {}: {e}", path.display())])
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.experiment.workspace);
        resolve(base, &mut self.body_model.path);
        resolve(base, &mut self.sampling.corpus);
        if let Some(p) = &mut self.prompts.catalog {
            resolve(base, p);
        }
        if let Some(p) = &mut self.replica.slots {
            resolve(base, p);
        }
    }

    /// Endpoint overrides only; nothing else is read from the environment.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        for (key, slot) in [
            (ENV_GENERATOR, &mut self.services.generator),
            (ENV_ESTIMATOR, &mut self.services.estimator),
            (ENV_KEYPOINTS, &mut self.services.keypoints),
            (ENV_VQA, &mut self.services.vqa),
        ] {
            if let Some(v) = get(key).filter(|v| !v.trim().is_empty()) {
                *slot = v;
            }
        }
    }

    pub fn catalog(&self) -> Result<CatalogConfig, CliError> {
        match &self.prompts.catalog {
            Some(p) => CatalogConfig::load(p).map_err(|e| CliError::Validation(vec![e.to_string()])),
            None => Ok(CatalogConfig::bundled()),
        }
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errors = Vec::new();
        let e = &self.experiment;
        if e.name.trim().is_empty() || e.name.contains(['/', '\\']) {
            errors.push(format!("experiment.name {:?} must be a non-empty path segment", e.name));
        }
        if e.parallelism < 1 {
            errors.push("experiment.parallelism must be >= 1".into());
        }
        if !self.body_model.path.is_file() {
            errors.push(format!("body_model.path {} does not exist", self.body_model.path.display()));
        }
        if !self.sampling.corpus.is_file() {
            errors.push(format!("sampling.corpus {} does not exist", self.sampling.corpus.display()));
        }
        if self.sampling.count == 0 {
            errors.push("sampling.count must be >= 1".into());
        }
        if self.sampling.balance && self.sampling.count % 2 != 0 {
            errors.push(format!(
                "sampling.count {} cannot be split evenly between two labels",
                self.sampling.count
            ));
        }
        let r = &self.render;
        if !(r.focal_normalized > 0.0) {
            errors.push("render.focal_normalized must be > 0".into());
        }
        if !(0.0..0.5).contains(&r.margin) {
            errors.push("render.margin must be in [0, 0.5)".into());
        }
        if r.image_size.0 == 0 || r.image_size.1 == 0 {
            errors.push("render.image_size must be positive".into());
        }
        if !(r.orientation_step_deg > 0.0 && r.orientation_step_deg <= 180.0) {
            errors.push("render.orientation_step_deg must be in (0, 180]".into());
        }
        let format = SkeletonFormat::from_name(&r.skeleton);
        if let Err(err) = &format {
            errors.push(format!("render.skeleton: {err}"));
        }
        if let Some(p) = &self.prompts.catalog {
            if !p.is_file() {
                errors.push(format!("prompts.catalog {} does not exist", p.display()));
            }
        }
        match self.catalog() {
            Ok(cat) => {
                for c in &self.prompts.categories {
                    if cat.category(c).is_err() {
                        errors.push(format!("prompts.categories: unknown category {c:?}"));
                    }
                }
            }
            Err(CliError::Validation(v)) if self.prompts.catalog.as_ref().is_some_and(|p| p.is_file()) => {
                errors.extend(v.into_iter().map(|m| format!("prompts.catalog: {m}")));
            }
            Err(_) => {}
        }
        for (name, spec) in [
            ("generator", &self.services.generator),
            ("estimator", &self.services.estimator),
            ("keypoints", &self.services.keypoints),
            ("vqa", &self.services.vqa),
        ] {
            if spec != MOCK {
                if let Err(err) = Endpoint::parse(spec) {
                    errors.push(format!("services.{name}: {err}"));
                }
            }
        }
        let est = &self.services.estimator_name;
        if est.is_empty() || est.contains(['/', '\\']) || est == "." || est == ".." {
            errors.push(format!("services.estimator_name {est:?} must be a non-empty path segment"));
        }
        let g = &self.generation;
        if g.max_attempts < 1 {
            errors.push("generation.max_attempts must be >= 1".into());
        }
        if !(g.filters.threshold_px >= 0.0) {
            errors.push("generation.filters.threshold_px must be >= 0".into());
        }
        if let Ok(format) = format {
            if let Err(err) = g.filters.selected_indices(format) {
                errors.push(format!("generation.filters.selected_joints: {err}"));
            }
        }
        if let Err(err) = self.eval.validate() {
            errors.push(format!("eval: {err}"));
        }
        if let Some(p) = &self.replica.slots {
            if !p.is_file() {
                errors.push(format!("replica.slots {} does not exist", p.display()));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(errors))
        }
    }
}
