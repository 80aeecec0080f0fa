//! Seeded datasets of noisy waveforms, stored as a JSON manifest plus one
//! `TFSIG001` record per sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{Renderer, TFImage};
use crate::rng::derive_seed;
use crate::tfa::{split_complex, stft, WindowSpec};
use crate::waveforms::{generate, read_record, write_record, SignalClass, WaveformConfig, RECORD_MAGIC};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_DIR: &str = "records";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub waveform: WaveformConfig,
    pub classes: Vec<SignalClass>,
    pub per_class: usize,
    /// Share of each class held out for testing (the last samples of the
    /// class, rounded to the nearest count).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            waveform: WaveformConfig::default(),
            classes: SignalClass::ALL.to_vec(),
            per_class: 400,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        if self.classes.is_empty() {
            return Err(Error::Config("at least one class is required".into()));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test fraction must lie in [0, 1], got {}", self.test_fraction)));
        }
        let mut seen = self.classes.clone();
        seen.sort_by_key(|c| c.id());
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::Config("classes must not repeat".into()));
        }
        Ok(())
    }

    pub fn test_count(&self) -> usize {
        (self.per_class as f64 * self.test_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub label: SignalClass,
    pub split: Split,
    pub snr_db: f64,
    pub seed: u64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
}

/// Generates `per_class` samples of each class. Sample `id` uses seed
/// `derive_seed(seed, id)`; ids run class by class.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let test = config.test_count();
    let mut samples = Vec::with_capacity(config.classes.len() * config.per_class);
    for &class in &config.classes {
        for k in 0..config.per_class {
            let id = samples.len();
            let seed = derive_seed(config.seed, id as u64);
            let sig = generate(class, &config.waveform, seed)?;
            samples.push(Sample {
                id,
                label: class,
                split: if k + test >= config.per_class { Split::Test } else { Split::Train },
                snr_db: sig.snr_db,
                seed,
                samples: sig.samples,
            });
        }
    }
    Ok(Dataset {
        config: config.clone(),
        samples,
    })
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub file: String,
    pub label: SignalClass,
    pub split: Split,
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub class_names: Vec<String>,
    /// Sample count per class, in `class_names` order.
    pub counts: Vec<usize>,
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

pub fn record_file_name(id: usize) -> String {
    format!("{RECORDS_DIR}/{id:05}.tfsig")
}

impl Manifest {
    pub fn for_dataset(ds: &Dataset) -> Self {
        Manifest {
            format: String::from_utf8_lossy(RECORD_MAGIC).into_owned(),
            class_names: ds.config.classes.iter().map(|c| c.name().to_owned()).collect(),
            counts: ds
                .config
                .classes
                .iter()
                .map(|&c| ds.samples.iter().filter(|s| s.label == c).count())
                .collect(),
            config: ds.config.clone(),
            samples: ds
                .samples
                .iter()
                .map(|s| ManifestEntry {
                    id: s.id,
                    file: record_file_name(s.id),
                    label: s.label,
                    split: s.split,
                    snr_db: s.snr_db,
                    seed: s.seed,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses and checks a manifest: known format tag, counts consistent
    /// with the entries, relative record paths.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format.as_bytes() != RECORD_MAGIC {
            return Err(Error::Format(format!("manifest format `{}` is not supported", m.format)));
        }
        if m.class_names.len() != m.counts.len() || m.class_names.len() != m.config.classes.len() {
            return Err(Error::Format("manifest class names, counts and classes disagree".into()));
        }
        for (i, &c) in m.config.classes.iter().enumerate() {
            if m.class_names[i] != c.name() || m.samples.iter().filter(|s| s.label == c).count() != m.counts[i] {
                return Err(Error::Format(format!("manifest count for class `{}` does not match its entries", c.name())));
            }
        }
        for e in &m.samples {
            let p = Path::new(&e.file);
            if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return Err(Error::Format(format!("manifest record path `{}` must stay inside the dataset", e.file)));
            }
        }
        Ok(m)
    }
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let records = dir.join(RECORDS_DIR);
    fs::create_dir_all(&records).map_err(|e| Error::io(&records, e))?;
    let manifest = Manifest::for_dataset(ds);
    for (s, e) in ds.samples.iter().zip(&manifest.samples) {
        write_record(&dir.join(&e.file), s.label, &s.samples)?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::from_json(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let file = dir.join(&e.file);
        let (label, data) = read_record(&file)?;
        if label != e.label {
            return Err(Error::Format(format!("{}: label disagrees with the manifest", file.display())));
        }
        if data.len() != manifest.config.waveform.n_samples {
            return Err(Error::Format(format!(
                "{}: {} samples, manifest says {}",
                file.display(),
                data.len(),
                manifest.config.waveform.n_samples
            )));
        }
        samples.push(Sample {
            id: e.id,
            label,
            split: e.split,
            snr_db: e.snr_db,
            seed: e.seed,
            samples: data,
        });
    }
    Ok(Dataset {
        config: manifest.config,
        samples,
    })
}

/// Receiver view of a waveform: STFT then render.
pub fn render_signal(samples: &[f64], window: &WindowSpec, renderer: &Renderer) -> Result<TFImage> {
    let (re, im) = split_complex(&stft(samples, window)?);
    renderer.render(&re, &im)
}
