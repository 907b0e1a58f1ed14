use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use jointsynth_nn::Rng;
use jointsynth_tabular::{FeatureKind, MixedRecord, TabularSchema};

use crate::attributes::{nako_schema, sample_phantom_attributes, AttributeParams};
use crate::csv;
use crate::render::render_phantom_volume;
use crate::volume::{preprocess_volume, read_volume, write_volume, Volume};
use crate::{PhantomError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Generated cohorts reuse the same directory format under this tag.
    Synthetic,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "synthetic" => Ok(Split::Synthetic),
            other => Err(PhantomError::Config(format!("unknown split tag `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub volume_shape: [usize; 3],
    pub rng_seed: u64,
    pub noise_sigma: f64,
    /// Phantoms are rendered at `render_supersample * volume_shape` and then
    /// resampled down, so sub-voxel fat-shell thickness survives as partial
    /// intensities instead of being rounded away.
    pub render_supersample: usize,
    pub attributes: AttributeParams,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_subjects: 100,
            volume_shape: [32, 32, 32],
            rng_seed: 0,
            noise_sigma: 0.02,
            render_supersample: 3,
            attributes: AttributeParams::default(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 1 {
            return Err(PhantomError::Config("n_subjects must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(PhantomError::Config("noise_sigma must be >= 0".into()));
        }
        if self.render_supersample < 1 {
            return Err(PhantomError::Config("render_supersample must be >= 1".into()));
        }
        if self.volume_shape.iter().any(|&s| s < 8) {
            return Err(PhantomError::Config(format!(
                "volume shape {:?} below the 8-voxel minimum",
                self.volume_shape
            )));
        }
        Ok(())
    }

    pub fn render_shape(&self) -> [usize; 3] {
        [
            self.volume_shape[0] * self.render_supersample,
            self.volume_shape[1] * self.render_supersample,
            self.volume_shape[2] * self.render_supersample,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortEntry {
    pub subject_id: String,
    pub volume_file: String,
    pub split: Split,
    pub record: MixedRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortManifest {
    pub schema: TabularSchema,
    pub entries: Vec<CohortEntry>,
}

/// A manifest plus its volumes in memory (parallel to `manifest.entries`).
#[derive(Clone, Debug)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub volumes: Vec<Volume>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn records(&self) -> Vec<MixedRecord> {
        self.manifest.entries.iter().map(|e| e.record.clone()).collect()
    }

    /// Subset with the given split tag, preserving order.
    pub fn filter_split(&self, split: Split) -> Cohort {
        let mut entries = Vec::new();
        let mut volumes = Vec::new();
        for (e, v) in self.manifest.entries.iter().zip(&self.volumes) {
            if e.split == split {
                entries.push(e.clone());
                volumes.push(v.clone());
            }
        }
        Cohort {
            manifest: CohortManifest {
                schema: self.manifest.schema.clone(),
                entries,
            },
            volumes,
        }
    }
}

/// Renders the full cohort: per-subject attribute and noise streams derived
/// from (seed, subject index), then the preprocessing pass (resample +
/// min-max normalization). All subjects start tagged Train; `split_dataset`
/// assigns the final tags.
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let schema = nako_schema();
    let mut entries = Vec::with_capacity(config.n_subjects);
    let mut volumes = Vec::with_capacity(config.n_subjects);
    let render_shape = config.render_shape();
    for i in 0..config.n_subjects {
        let mut attr_rng = Rng::from_stream(config.rng_seed, (i as u64) * 2);
        let mut noise_rng = Rng::from_stream(config.rng_seed, (i as u64) * 2 + 1);
        let record = sample_phantom_attributes(&mut attr_rng, &config.attributes);
        let raw = render_phantom_volume(
            &record,
            render_shape,
            config.noise_sigma,
            &mut noise_rng,
        )?;
        let vol = preprocess_volume(&raw, config.volume_shape)?;
        vol.validate()?;
        let subject_id = format!("phantom-{i:05}");
        entries.push(CohortEntry {
            volume_file: format!("{subject_id}.mmjs"),
            subject_id,
            split: Split::Train,
            record,
        });
        volumes.push(vol);
    }
    Ok(Cohort {
        manifest: CohortManifest { schema, entries },
        volumes,
    })
}

/// Deterministic seeded shuffle; the first round(ratio * n) subjects (in
/// shuffle order) are tagged Train, the rest Test.
pub fn split_dataset(manifest: &mut CohortManifest, ratio: f64, seed: u64) -> Result<()> {
    let n = manifest.entries.len();
    if n < 2 {
        return Err(PhantomError::Split(format!(
            "need at least 2 subjects to split, got {n}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PhantomError::Split(format!(
            "ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n_train = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::from_seed(seed);
    rng.shuffle(&mut order);
    for (pos, &idx) in order.iter().enumerate() {
        manifest.entries[idx].split = if pos < n_train { Split::Train } else { Split::Test };
    }
    Ok(())
}

/// Directory layout: manifest.csv (subject_id, volume, split, one column per
/// schema feature) + schema.json + one volume file per subject.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    let io_err = |p: &Path, e: std::io::Error| PhantomError::Io(p.display().to_string(), e);
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let schema = &cohort.manifest.schema;
    let schema_json = schema.to_json()?;
    let schema_path = dir.join("schema.json");
    fs::write(&schema_path, schema_json).map_err(|e| io_err(&schema_path, e))?;

    let mut lines = Vec::with_capacity(cohort.len() + 1);
    let mut header = vec![
        "subject_id".to_string(),
        "volume".to_string(),
        "split".to_string(),
    ];
    header.extend(schema.features.iter().map(|f| f.name.clone()));
    lines.push(csv::write_row(&header));
    for (entry, vol) in cohort.manifest.entries.iter().zip(&cohort.volumes) {
        let mut row = vec![
            entry.subject_id.clone(),
            entry.volume_file.clone(),
            entry.split.to_string(),
        ];
        for f in &schema.features {
            row.push(match f.kind {
                FeatureKind::Numeric => format!("{}", entry.record.numeric(&f.name)),
                FeatureKind::Categorical => entry.record.categorical(&f.name).to_string(),
            });
        }
        lines.push(csv::write_row(&row));
        write_volume(&dir.join(&entry.volume_file), vol)?;
    }
    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, lines.join("\n") + "\n").map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let io_err = |p: &Path, e: std::io::Error| PhantomError::Io(p.display().to_string(), e);
    let schema_path = dir.join("schema.json");
    let schema_json = fs::read_to_string(&schema_path).map_err(|e| io_err(&schema_path, e))?;
    let schema = TabularSchema::from_json(&schema_json)?;

    let manifest_path = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| PhantomError::Config("manifest.csv is empty".into()))?;
    let header = csv::parse_row(header);
    let expected_cols = 3 + schema.n_features();
    if header.len() != expected_cols {
        return Err(PhantomError::Config(format!(
            "manifest.csv has {} columns, schema expects {expected_cols}",
            header.len()
        )));
    }

    let mut entries = Vec::new();
    let mut volumes = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells = csv::parse_row(line);
        if cells.len() != expected_cols {
            return Err(PhantomError::Config(format!(
                "manifest row has {} cells, expected {expected_cols}",
                cells.len()
            )));
        }
        let subject_id = cells[0].clone();
        if !seen.insert(subject_id.clone()) {
            return Err(PhantomError::Integrity {
                subject_id,
                reason: "duplicate subject_id in manifest".into(),
            });
        }
        let volume_file = cells[1].clone();
        let split = Split::parse(&cells[2])?;
        let mut record = MixedRecord::new();
        for (f, cell) in schema.features.iter().zip(&cells[3..]) {
            match f.kind {
                FeatureKind::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| PhantomError::Integrity {
                        subject_id: subject_id.clone(),
                        reason: format!("cannot parse `{cell}` as numeric `{}`", f.name),
                    })?;
                    record.numeric_values.insert(f.name.clone(), v);
                }
                FeatureKind::Categorical => {
                    record
                        .categorical_values
                        .insert(f.name.clone(), cell.clone());
                }
            }
        }
        record
            .validate(&schema)
            .map_err(|e| PhantomError::Integrity {
                subject_id: subject_id.clone(),
                reason: e.to_string(),
            })?;
        let vol = read_volume(&dir.join(&volume_file)).map_err(|e| match e {
            PhantomError::VolumeFormat { reason, .. } => PhantomError::Integrity {
                subject_id: subject_id.clone(),
                reason,
            },
            PhantomError::Io(path, err) => PhantomError::Integrity {
                subject_id: subject_id.clone(),
                reason: format!("cannot read volume {path}: {err}"),
            },
            other => other,
        })?;
        entries.push(CohortEntry {
            subject_id,
            volume_file,
            split,
            record,
        });
        volumes.push(vol);
    }
    Ok(Cohort {
        manifest: CohortManifest { schema, entries },
        volumes,
    })
}
