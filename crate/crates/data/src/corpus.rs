//! Synthetic corpus builder and its JSON-lines manifest.
//!
//! A corpus directory holds one image file per record plus `manifest.jsonl`:
//! a header line carrying `{u, v, generator_version}` followed by one record
//! per line. Paths are stored relative to the manifest. Every record carries
//! the derived seed it was generated with and a PSNR-based pseudo-quality
//! score, so the corpus doubles as a labeled quality dataset.

use crate::distortion::{apply_distortion, psnr, psnr_to_score, DistortionSpec, FamilyKind};
use crate::error::DataError;
use satqa_core::rng::derive_seed;
use satqa_core::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const GENERATOR_VERSION: &str = "satqa-synth/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub u: u32,
    pub v: u32,
    pub generator_version: String,
}

/// One image record. `family == 0 && level == 0` marks a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub family: u32,
    pub level: u32,
    pub category: u32,
    pub reference_id: String,
    pub seed: u64,
    pub score: f64,
}

impl ManifestRecord {
    pub fn is_reference(&self) -> bool {
        self.category == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Structural invariants: reference ids resolve, (reference, family,
    /// level) triples are unique, categories lie in 0..=u*v.
    pub fn validate(&self) -> Result<(), DataError> {
        let references: BTreeSet<&str> = self
            .records
            .iter()
            .filter(|r| r.is_reference())
            .map(|r| r.reference_id.as_str())
            .collect();
        let mut triples = BTreeSet::new();
        for record in &self.records {
            if !references.contains(record.reference_id.as_str()) {
                return Err(DataError::Config(format!(
                    "record {}: reference id '{}' has no reference record",
                    record.path, record.reference_id
                )));
            }
            if record.category > self.header.u * self.header.v {
                return Err(DataError::Config(format!(
                    "record {}: category {} out of range",
                    record.path, record.category
                )));
            }
            if !triples.insert((record.reference_id.clone(), record.family, record.level)) {
                return Err(DataError::Config(format!(
                    "duplicate (reference, family, level) triple for {}",
                    record.path
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = serde_json::to_string(&self.header)
            .map_err(|e| DataError::Config(format!("manifest header: {e}")))?;
        writeln!(w, "{header}").map_err(|e| DataError::io(path, e))?;
        for record in &self.records {
            let line = serde_json::to_string(record)
                .map_err(|e| DataError::Config(format!("manifest record: {e}")))?;
            writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| DataError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty manifest".into(),
        })?;
        let first = first.map_err(|e| DataError::io(path, e))?;
        let header: ManifestHeader =
            serde_json::from_str(&first).map_err(|e| DataError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header: {e}"),
            })?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| DataError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| DataError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        let manifest = CorpusManifest {
            header,
            records,
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Generates one distorted image per (reference, family, level) plus the
/// reference records themselves. Deterministic in `seed`; refuses to clobber
/// an existing manifest unless `force` is set.
pub fn build_synthetic_corpus(
    references: &[PathBuf],
    families: &[DistortionSpec],
    v_levels: u32,
    out_dir: &Path,
    seed: u64,
    force: bool,
) -> Result<CorpusManifest, DataError> {
    if references.is_empty() {
        return Err(DataError::Config("at least one reference image required".into()));
    }
    if families.is_empty() {
        return Err(DataError::Config("at least one distortion family required".into()));
    }
    for spec in families {
        spec.validate(v_levels)?;
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    if manifest_path.exists() && !force {
        return Err(DataError::Collision(manifest_path));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;

    let mut sorted_refs: Vec<PathBuf> = references.to_vec();
    sorted_refs.sort();

    let mut records = Vec::new();
    for (ref_idx, ref_path) in sorted_refs.iter().enumerate() {
        let reference = RgbImage::load(ref_path).map_err(|e| match e {
            satqa_core::CoreError::Image { path, source } => DataError::Io {
                path,
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, source.to_string()),
            },
            other => DataError::Core(other),
        })?;
        let reference_id = ref_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| format!("ref{ref_idx}"));

        let ref_name = format!("{reference_id}.png");
        reference.save_png(&out_dir.join(&ref_name))?;
        records.push(ManifestRecord {
            path: ref_name,
            family: 0,
            level: 0,
            category: 0,
            reference_id: reference_id.clone(),
            seed: derive_seed(seed, 0, ref_idx as u64),
            score: 1.0,
        });

        for spec in families {
            for level in 1..=v_levels {
                let record_seed = derive_seed(
                    seed,
                    spec.family as u64 * 64 + level as u64,
                    ref_idx as u64,
                );
                let distorted = apply_distortion(&reference, spec, level, record_seed)?;
                let category = spec
                    .family
                    .checked_sub(1)
                    .map(|u0| u0 * v_levels + level)
                    .expect("family >= 1");
                // The JPEG family writes its own lossy artifact; everything
                // else must reach disk without further degradation.
                let (file_name, saved) = if spec.kind == FamilyKind::Jpeg {
                    let name = format!("{reference_id}_f{:02}_l{level}.jpg", spec.family);
                    let quality = spec.level_params[(level - 1) as usize].round() as u8;
                    reference.save_jpeg(&out_dir.join(&name), quality)?;
                    let reloaded = RgbImage::load(&out_dir.join(&name))?;
                    (name, reloaded)
                } else {
                    let name = format!("{reference_id}_f{:02}_l{level}.png", spec.family);
                    distorted.save_png(&out_dir.join(&name))?;
                    (name, distorted)
                };
                let quality_db = psnr(&reference, &saved);
                records.push(ManifestRecord {
                    path: file_name,
                    family: spec.family,
                    level,
                    category,
                    reference_id: reference_id.clone(),
                    seed: record_seed,
                    score: psnr_to_score(quality_db),
                });
            }
        }
    }

    let manifest = CorpusManifest {
        header: ManifestHeader {
            u: families.len() as u32,
            v: v_levels,
            generator_version: GENERATOR_VERSION.to_string(),
        },
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.write(&manifest_path)?;
    Ok(manifest)
}
