//! Line-delimited JSON record of every generation attempt.
//!
//! While a run is in progress each finished cell is appended as a block:
//! its attempt records followed by one `cell` record. Finalizing rewrites
//! the file in canonical order and appends the per-attribute valid sets.

use crate::filters::FilterVerdict;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub protocol_version: u32,
    pub config_hash: String,
    pub experiment_seed: u64,
    pub max_attempts: u32,
}

/// One generation attempt of a (pose, attribute) cell. The valid attempt of
/// a cell is the sample pair used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptRecord {
    pub pose_id: String,
    pub attribute_id: String,
    pub category: String,
    pub attempt: u32,
    pub noise_seed: u64,
    pub base_prompt: String,
    pub attribute_prompt: Option<String>,
    /// Workspace-relative image paths.
    pub base_image: String,
    pub attribute_image: Option<String>,
    pub base_verdict: FilterVerdict,
    pub attribute_verdict: Option<FilterVerdict>,
    pub valid: bool,
}

pub type SamplePair = AttemptRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRecord {
    pub pose_id: String,
    pub attribute_id: String,
    pub category: String,
    pub attempts: u32,
    pub valid: bool,
    pub valid_attempt: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidSetRecord {
    pub category: String,
    pub attribute_id: String,
    pub pose_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ManifestRecord {
    Header(ManifestHeader),
    Attempt(AttemptRecord),
    Cell(CellRecord),
    ValidSet(ValidSetRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkManifest {
    pub header: ManifestHeader,
    pub attempts: Vec<AttemptRecord>,
    pub cells: Vec<CellRecord>,
    pub valid_sets: Vec<ValidSetRecord>,
}

fn line(record: &ManifestRecord) -> String {
    let mut s = serde_json::to_string(record).expect("manifest records serialize");
    s.push('\n');
    s
}

fn io_err(path: &Path, e: std::io::Error) -> OrchestratorError {
    OrchestratorError::Io(format!("{}: {e}", path.display()))
}

impl BenchmarkManifest {
    pub fn new(header: ManifestHeader) -> Self {
        Self {
            header,
            attempts: Vec::new(),
            cells: Vec::new(),
            valid_sets: Vec::new(),
        }
    }

    /// Reads a manifest, dropping a truncated final line and any attempt
    /// records whose cell never completed.
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let lines: Vec<&str> = text.split('\n').collect();
        let mut header = None;
        let mut attempts = Vec::new();
        let mut cells = Vec::new();
        let mut valid_sets = Vec::new();
        for (i, l) in lines.iter().enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let last = i + 1 == lines.len() || (i + 2 == lines.len() && lines[i + 1].is_empty());
            let record: ManifestRecord = match serde_json::from_str(l) {
                Ok(r) => r,
                Err(e) if last && !text.ends_with('\n') => {
                    log::warn!("{}: dropping truncated final line ({e})", path.display());
                    continue;
                }
                Err(e) => {
                    return Err(OrchestratorError::Manifest(format!(
                        "{} line {}: {e}",
                        path.display(),
                        i + 1
                    )))
                }
            };
            match record {
                ManifestRecord::Header(h) => {
                    if header.replace(h).is_some() {
                        return Err(OrchestratorError::Manifest("two header records".into()));
                    }
                }
                ManifestRecord::Attempt(a) => attempts.push(a),
                ManifestRecord::Cell(c) => cells.push(c),
                ManifestRecord::ValidSet(v) => valid_sets.push(v),
            }
        }
        let header =
            header.ok_or_else(|| OrchestratorError::Manifest("missing header record".into()))?;
        let done: BTreeSet<(String, String)> = cells
            .iter()
            .map(|c| (c.pose_id.clone(), c.attribute_id.clone()))
            .collect();
        attempts.retain(|a| done.contains(&(a.pose_id.clone(), a.attribute_id.clone())));
        Ok(Self {
            header,
            attempts,
            cells,
            valid_sets,
        })
    }

    pub fn completed_cells(&self) -> BTreeSet<(String, String)> {
        self.cells
            .iter()
            .map(|c| (c.pose_id.clone(), c.attribute_id.clone()))
            .collect()
    }

    pub fn attribute_ids(&self) -> BTreeSet<&str> {
        self.cells.iter().map(|c| c.attribute_id.as_str()).collect()
    }

    /// Valid pose ids of one attribute, from the cell records.
    pub fn valid_pose_ids(&self, attribute_id: &str) -> BTreeSet<String> {
        self.cells
            .iter()
            .filter(|c| c.attribute_id == attribute_id && c.valid)
            .map(|c| c.pose_id.clone())
            .collect()
    }

    pub fn valid_pair(&self, pose_id: &str, attribute_id: &str) -> Option<&SamplePair> {
        let cell = self
            .cells
            .iter()
            .find(|c| c.pose_id == pose_id && c.attribute_id == attribute_id && c.valid)?;
        self.attempts.iter().find(|a| {
            a.pose_id == pose_id && a.attribute_id == attribute_id && Some(a.attempt) == cell.valid_attempt
        })
    }

    pub fn valid_pairs(&self) -> impl Iterator<Item = &SamplePair> {
        self.attempts.iter().filter(|a| a.valid)
    }

    /// Canonical order, duplicates removed, valid sets recomputed in the
    /// given attribute order (attributes not listed follow, sorted).
    pub fn canonicalize(&mut self, attribute_order: &[(String, String)]) {
        self.attempts
            .sort_by(|a, b| (&a.pose_id, &a.attribute_id, a.attempt).cmp(&(&b.pose_id, &b.attribute_id, b.attempt)));
        self.attempts
            .dedup_by(|a, b| (&a.pose_id, &a.attribute_id, a.attempt) == (&b.pose_id, &b.attribute_id, b.attempt));
        self.cells
            .sort_by(|a, b| (&a.pose_id, &a.attribute_id).cmp(&(&b.pose_id, &b.attribute_id)));
        self.cells
            .dedup_by(|a, b| (&a.pose_id, &a.attribute_id) == (&b.pose_id, &b.attribute_id));

        let categories: BTreeMap<&str, &str> = self
            .cells
            .iter()
            .map(|c| (c.attribute_id.as_str(), c.category.as_str()))
            .collect();
        let mut order: Vec<(String, String)> = attribute_order
            .iter()
            .filter(|(_, a)| categories.contains_key(a.as_str()))
            .cloned()
            .collect();
        for (a, c) in &categories {
            if !order.iter().any(|(_, x)| x == a) {
                order.push((c.to_string(), a.to_string()));
            }
        }
        self.valid_sets = order
            .into_iter()
            .map(|(category, attribute_id)| ValidSetRecord {
                pose_ids: self.valid_pose_ids(&attribute_id).into_iter().collect(),
                category,
                attribute_id,
            })
            .collect();
    }

    /// Serialized form: header, then per cell its attempts and the cell
    /// record, then the valid sets.
    pub fn to_jsonl(&self) -> String {
        let mut out = line(&ManifestRecord::Header(self.header.clone()));
        let mut attempts = self.attempts.iter().peekable();
        for cell in &self.cells {
            while let Some(a) = attempts.peek() {
                if (&a.pose_id, &a.attribute_id) > (&cell.pose_id, &cell.attribute_id) {
                    break;
                }
                out.push_str(&line(&ManifestRecord::Attempt((*a).clone())));
                attempts.next();
            }
            out.push_str(&line(&ManifestRecord::Cell(cell.clone())));
        }
        for a in attempts {
            out.push_str(&line(&ManifestRecord::Attempt(a.clone())));
        }
        for v in &self.valid_sets {
            out.push_str(&line(&ManifestRecord::ValidSet(v.clone())));
        }
        out
    }

    /// Canonicalizes and replaces the file atomically.
    pub fn finalize(
        &mut self,
        path: &Path,
        attribute_order: &[(String, String)],
    ) -> Result<(), OrchestratorError> {
        self.canonicalize(attribute_order);
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, self.to_jsonl()).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }
}

/// Append-only writer used while cells complete.
pub struct ManifestWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ManifestWriter {
    /// Opens `path` for appending, writing `header` first if the file is new.
    pub fn open(path: &Path, header: &ManifestHeader) -> Result<Self, OrchestratorError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let fresh = !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        if !fresh {
            // Terminate a truncated trailing line so appends start clean.
            let text = std::fs::read(path).map_err(|e| io_err(path, e))?;
            if !text.is_empty() && !text.ends_with(b"\n") {
                file.write_all(b"\n").map_err(|e| io_err(path, e))?;
            }
        }
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if fresh {
            w.write_raw(&line(&ManifestRecord::Header(header.clone())))?;
        }
        Ok(w)
    }

    fn write_raw(&mut self, text: &str) -> Result<(), OrchestratorError> {
        self.out
            .write_all(text.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| io_err(&self.path, e))
    }

    pub fn append_cell(
        &mut self,
        attempts: &[AttemptRecord],
        cell: &CellRecord,
    ) -> Result<(), OrchestratorError> {
        let mut block = String::new();
        for a in attempts {
            block.push_str(&line(&ManifestRecord::Attempt(a.clone())));
        }
        block.push_str(&line(&ManifestRecord::Cell(cell.clone())));
        self.write_raw(&block)
    }
}
