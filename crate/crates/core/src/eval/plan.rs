//! Experiment plans: train the model family, attack every test sample from
//! every source model and score the adversarial inputs on every victim.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{generate_dataset, load_dataset, render_signal, save_dataset, Dataset, DatasetConfig, Sample, Split};
use super::matrix::{Judgement, MatrixEntry, TransferMatrix};
use crate::attacks::{run_image_attack, AttackConfig, AttackMethod};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, accuracy, ArchId, Classifier, Example, Model, TrainConfig, TrainHistory};
use crate::render::{write_image, ImageFormat, MagnitudeScale, Renderer, TFImage};
use crate::rng::derive_seed;
use crate::stds::{stds_attack, StdsConfig};
use crate::tfa::WindowSpec;
use crate::waveforms::{write_record, SignalClass};

pub const MATRIX_PATH: &str = "results/matrix.csv";
pub const MODELS_CSV_PATH: &str = "results/models.csv";
pub const SAMPLES_DIR: &str = "results/samples";
pub const PLAN_PATH: &str = "results/plan.json";
pub const WAVEFORMS_DIR: &str = "results/waveforms";
pub const FIGURES_DIR: &str = "figures";
pub const MODELS_DIR: &str = "models";
pub const DATASET_DIR: &str = "datasets/default";

pub const SAMPLES_HEADER: &str = "sample_id,true_label,victim,clean_label,adv_label,eligible,success,l2,linf,l2_signal,iterations";

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Generated and saved under `datasets/default`.
    Generate(DatasetConfig),
    /// A directory written by [`save_dataset`].
    Load(PathBuf),
}

/// Where the models come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSource {
    /// Each architecture is initialized and trained with a seed derived from
    /// the plan seed, then saved under `models/`.
    Train(TrainConfig),
    /// Weight files; each provides the architecture it encodes.
    Load(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset: DatasetSource,
    pub window: WindowSpec,
    pub scale: MagnitudeScale,
    pub models: ModelSource,
    pub attacks: Vec<AttackMethod>,
    pub attack: AttackConfig,
    pub stds: StdsConfig,
    /// `(source, victim)`; `source == victim` is a white-box attack.
    pub pairs: Vec<(ArchId, ArchId)>,
    pub seed: u64,
    /// Attack only the first this many test samples (interleaved by class).
    pub test_limit: Option<usize>,
    pub image_format: ImageFormat,
    /// Triptychs written per (attack, source).
    pub figures: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            dataset: DatasetSource::Generate(DatasetConfig::default()),
            window: WindowSpec::default(),
            scale: MagnitudeScale::Linear,
            models: ModelSource::Train(TrainConfig::default()),
            attacks: AttackMethod::ALL.to_vec(),
            attack: AttackConfig::default(),
            stds: StdsConfig::default(),
            pairs: all_pairs(&ArchId::ALL),
            seed: 0,
            test_limit: None,
            image_format: ImageFormat::Ppm,
            figures: 2,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every ordered pair, self-pairs included.
pub fn all_pairs(archs: &[ArchId]) -> Vec<(ArchId, ArchId)> {
    archs.iter().flat_map(|&s| archs.iter().map(move |&v| (s, v))).collect()
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Generate(cfg) = &self.dataset {
            cfg.validate()?;
        }
        self.attack.validate()?;
        self.stds.validate()?;
        if let ModelSource::Train(t) = &self.models {
            if t.batch_size == 0 || !(t.lr.is_finite() && t.lr >= 0.0) {
                return Err(Error::Config("training needs a positive batch size and a finite lr >= 0".into()));
            }
        }
        if !self.attacks.is_empty() && self.pairs.is_empty() {
            return Err(Error::Config("attacks were requested without any source/victim pair".into()));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if self.pairs[..i].contains(p) {
                return Err(Error::Config(format!("pair {} -> {} is listed twice", p.0.name(), p.1.name())));
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if self.attacks[..i].contains(a) {
                return Err(Error::Config(format!("attack {a} is listed twice")));
            }
        }
        Ok(())
    }

    pub fn renderer(&self) -> Renderer {
        Renderer::default().with_scale(self.scale)
    }

    /// Architectures appearing in any pair, in id order.
    pub fn archs(&self) -> Vec<ArchId> {
        let mut a: Vec<ArchId> = self.pairs.iter().flat_map(|&(s, v)| [s, v]).collect();
        a.sort();
        a.dedup();
        a
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }
}

/// One victim's view of one adversarial example.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub attack: AttackMethod,
    pub source: ArchId,
    pub victim: ArchId,
    pub sample_id: usize,
    pub judgement: Judgement,
    /// Image-domain distances in pixel units (out of 255).
    pub l2: f64,
    pub linf: f64,
    /// `||noise|| / ||signal||` for waveform attacks.
    pub l2_signal: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub arch: ArchId,
    pub test_accuracy: f64,
    pub history: TrainHistory,
    /// Zero for loaded models.
    pub train_time: Duration,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub matrix: TransferMatrix,
    pub records: Vec<SampleRecord>,
    pub models: Vec<ModelSummary>,
}

impl PlanOutput {
    pub fn records_for(&self, attack: AttackMethod, source: ArchId, victim: ArchId) -> impl Iterator<Item = &SampleRecord> {
        self.records
            .iter()
            .filter(move |r| r.attack == attack && r.source == source && r.victim == victim)
    }
}

/// Test samples interleaved by class, so a prefix stays balanced.
fn interleaved_test(ds: &Dataset) -> Vec<&Sample> {
    let mut per_class: Vec<Vec<&Sample>> = Vec::new();
    for s in ds.split(Split::Test) {
        match per_class.iter_mut().find(|v| v[0].label == s.label) {
            Some(v) => v.push(s),
            None => per_class.push(vec![s]),
        }
    }
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|k| per_class.iter().filter_map(move |v| v.get(k).copied()))
        .collect()
}

/// Renders every sample, in dataset order.
pub fn render_dataset(ds: &Dataset, window: &WindowSpec, renderer: &Renderer) -> Result<Vec<TFImage>> {
    ds.samples
        .par_iter()
        .map(|s| render_signal(&s.samples, window, renderer))
        .collect()
}

pub fn examples(ds: &Dataset, images: &[TFImage], split: Split) -> Vec<Example> {
    ds.samples
        .iter()
        .zip(images)
        .filter(|(s, _)| s.split == split)
        .map(|(s, img)| Example {
            pixels: img.pixels.clone(),
            label: s.label.id() as usize,
        })
        .collect()
}

/// Initializes `arch` with `cfg.seed` and trains it.
pub fn train_arch(arch: ArchId, train_set: &[Example], test_set: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    nn::train(&Model::init(arch, cfg.seed), train_set, test_set, cfg)
}

struct Cell {
    attack: AttackMethod,
    source: ArchId,
    victims: Vec<ArchId>,
}

/// Result of attacking one sample from one source.
struct Attacked {
    adv: Image,
    adv_signal: Option<Vec<f64>>,
    l2: f64,
    linf: f64,
    l2_signal: Option<f64>,
    iterations: usize,
    /// Victim predictions, in the cell's victim order.
    adv_labels: Vec<usize>,
}

fn attack_seed(plan_seed: u64, attack: AttackMethod, source: ArchId, sample: usize) -> u64 {
    let cell = derive_seed(derive_seed(plan_seed, attack as u64), source.id() as u64);
    derive_seed(cell, sample as u64)
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutput> {
    plan.validate()?;
    if plan.attacks.is_empty() {
        return Ok(PlanOutput {
            matrix: TransferMatrix::default(),
            records: Vec::new(),
            models: Vec::new(),
        });
    }
    let out = &plan.output_dir;
    let renderer = plan.renderer();
    let ds = match &plan.dataset {
        DatasetSource::Generate(cfg) => {
            let ds = generate_dataset(cfg)?;
            save_dataset(&ds, &out.join(DATASET_DIR))?;
            ds
        }
        DatasetSource::Load(dir) => load_dataset(dir)?,
    };
    if ds.config.classes.iter().any(|c| c.id() as usize >= nn::NUM_CLASSES) {
        return Err(Error::Config("dataset labels exceed the classifier's classes".into()));
    }
    let images = render_dataset(&ds, &plan.window, &renderer)?;
    let train_set = examples(&ds, &images, Split::Train);
    let test_set = examples(&ds, &images, Split::Test);
    if test_set.is_empty() {
        return Err(Error::Config("the dataset has no test samples".into()));
    }

    let archs = plan.archs();
    let mut models: Vec<(Model, ModelSummary)> = Vec::new();
    match &plan.models {
        ModelSource::Train(cfg) => {
            let dir = out.join(MODELS_DIR);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for &arch in &archs {
                let cfg = TrainConfig {
                    seed: derive_seed(plan.seed, 1000 + arch.id() as u64),
                    ..*cfg
                };
                let start = Instant::now();
                let (model, history) = train_arch(arch, &train_set, &[], &cfg)?;
                let train_time = start.elapsed();
                nn::save(&model, &dir.join(model_file_name(arch)))?;
                let test_accuracy = accuracy(&model, &test_set)?;
                models.push((
                    model,
                    ModelSummary {
                        arch,
                        test_accuracy,
                        history,
                        train_time,
                    },
                ));
            }
        }
        ModelSource::Load(paths) => {
            for p in paths {
                let model = nn::load(p)?;
                if models.iter().any(|(m, _)| m.id() == model.id()) {
                    return Err(Error::Config(format!("{}: a second {} model", p.display(), model.id().name())));
                }
                let test_accuracy = accuracy(&model, &test_set)?;
                let arch = model.id();
                models.push((
                    model,
                    ModelSummary {
                        arch,
                        test_accuracy,
                        history: TrainHistory::default(),
                        train_time: Duration::ZERO,
                    },
                ));
            }
            if let Some(missing) = archs.iter().find(|a| !models.iter().any(|(m, _)| m.id() == **a)) {
                return Err(Error::Config(format!("no model file provides {}", missing.name())));
            }
        }
    }
    let model_of = |a: ArchId| -> &Model { &models.iter().find(|(m, _)| m.id() == a).expect("model present").0 };

    let mut targets = interleaved_test(&ds);
    if let Some(n) = plan.test_limit {
        targets.truncate(n);
    }
    let index_of = |s: &Sample| ds.samples.iter().position(|o| o.id == s.id).expect("sample present");
    let target_idx: Vec<usize> = targets.iter().map(|s| index_of(s)).collect();

    // Clean predictions of every victim on every target.
    let clean_pred: Vec<Vec<usize>> = archs
        .iter()
        .map(|&a| {
            target_idx
                .par_iter()
                .map(|&i| model_of(a).classify(&images[i].pixels))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let arch_slot = |a: ArchId| archs.iter().position(|&x| x == a).expect("arch present");

    let mut cells = Vec::new();
    for &attack in &plan.attacks {
        let mut sources: Vec<ArchId> = plan.pairs.iter().map(|p| p.0).collect();
        sources.sort();
        sources.dedup();
        for source in sources {
            let victims = plan.pairs.iter().filter(|p| p.0 == source).map(|p| p.1).collect();
            cells.push(Cell { attack, source, victims });
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..target_idx.len()).map(move |t| (c, t))).collect();
    let results: Vec<Attacked> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cell = &cells[c];
            let i = target_idx[t];
            let sample = &ds.samples[i];
            let label = sample.label.id() as usize;
            let source = model_of(cell.source);
            let seed = attack_seed(plan.seed, cell.attack, cell.source, sample.id);
            let mut a = if cell.attack == AttackMethod::Stds {
                let o = stds_attack(source, &sample.samples, label, &plan.stds, &plan.window, &renderer)?;
                let received = render_signal(&o.adv_signal, &plan.window, &renderer)?;
                let noise = received.pixels.sub(&images[i].pixels)?;
                Attacked {
                    adv: received.pixels,
                    l2: noise.l2() * 255.0,
                    linf: noise.linf() * 255.0,
                    l2_signal: Some(o.l2_signal),
                    iterations: o.iterations_used,
                    adv_signal: Some(o.adv_signal),
                    adv_labels: Vec::new(),
                }
            } else {
                let cfg = AttackConfig { seed, ..plan.attack };
                let o = run_image_attack(cell.attack, source, &images[i], label, &cfg)?;
                Attacked {
                    adv: o.adv_image.pixels,
                    l2: o.l2 * 255.0,
                    linf: o.linf * 255.0,
                    l2_signal: None,
                    iterations: o.iterations_used,
                    adv_signal: None,
                    adv_labels: Vec::new(),
                }
            };
            a.adv_labels = cell
                .victims
                .iter()
                .map(|&v| model_of(v).classify(&a.adv))
                .collect::<Result<_>>()?;
            if t >= plan.figures {
                a.adv = Image::zeros(0, 0, 0);
            }
            Ok(a)
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut entries = Vec::new();
    let samples_dir = out.join(SAMPLES_DIR);
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let figures_dir = out.join(FIGURES_DIR);
    if plan.figures > 0 {
        fs::create_dir_all(&figures_dir).map_err(|e| Error::io(&figures_dir, e))?;
    }
    for (c, cell) in cells.iter().enumerate() {
        let cell_results = &results[c * target_idx.len()..(c + 1) * target_idx.len()];
        let mut csv = format!("{SAMPLES_HEADER}\n");
        let mut cell_records = Vec::new();
        for (t, a) in cell_results.iter().enumerate() {
            let sample = &ds.samples[target_idx[t]];
            for (k, &victim) in cell.victims.iter().enumerate() {
                let r = SampleRecord {
                    attack: cell.attack,
                    source: cell.source,
                    victim,
                    sample_id: sample.id,
                    judgement: Judgement {
                        true_label: sample.label.id() as usize,
                        clean_label: clean_pred[arch_slot(victim)][t],
                        adv_label: a.adv_labels[k],
                    },
                    l2: a.l2,
                    linf: a.linf,
                    l2_signal: a.l2_signal,
                    iterations: a.iterations,
                };
                write_sample_row(&mut csv, &r);
                cell_records.push(r);
            }
        }
        let path = samples_dir.join(format!("{}_{}.csv", cell.attack, cell.source.name()));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        for &victim in &cell.victims {
            let js: Vec<&SampleRecord> = cell_records.iter().filter(|r| r.victim == victim).collect();
            entries.push(MatrixEntry {
                attack: cell.attack,
                source: cell.source,
                victim,
                eligible: js.iter().filter(|r| r.judgement.eligible()).count(),
                successes: js.iter().filter(|r| r.judgement.success()).count(),
            });
        }
        records.extend(cell_records);

        if cell.attack == AttackMethod::Stds {
            let dir = out.join(WAVEFORMS_DIR).join(cell.source.name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (t, a) in cell_results.iter().enumerate() {
                let sample = &ds.samples[target_idx[t]];
                let signal = a.adv_signal.as_ref().expect("waveform attack keeps its signal");
                write_record(&dir.join(format!("{:05}.tfsig", sample.id)), sample.label, signal)?;
            }
        }
        for (t, a) in cell_results.iter().enumerate().take(plan.figures) {
            let sample = &ds.samples[target_idx[t]];
            let fig = triptych(&images[target_idx[t]].pixels, &a.adv)?;
            let name = format!("{}_{}_{:05}.{}", cell.attack, cell.source.name(), sample.id, plan.image_format.extension());
            write_image(&figures_dir.join(name), &fig, plan.image_format)?;
        }
    }

    let matrix = TransferMatrix { entries };
    write_file(&out.join(MATRIX_PATH), &matrix.to_csv())?;
    let summaries: Vec<ModelSummary> = models.into_iter().map(|(_, s)| s).collect();
    write_file(&out.join(MODELS_CSV_PATH), &models_csv(&summaries, train_set.len(), test_set.len()))?;
    write_file(&out.join(PLAN_PATH), &plan.to_json())?;
    Ok(PlanOutput {
        matrix,
        records,
        models: summaries,
    })
}

pub fn model_file_name(arch: ArchId) -> String {
    format!("{}.tfadv", arch.name())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn class_name(id: usize) -> &'static str {
    SignalClass::from_id(id as u8).map(SignalClass::name).unwrap_or("?")
}

fn write_sample_row(csv: &mut String, r: &SampleRecord) {
    let j = &r.judgement;
    let l2s = r.l2_signal.map(|v| format!("{v:.6}")).unwrap_or_default();
    writeln!(
        csv,
        "{},{},{},{},{},{},{},{:.6},{:.6},{l2s},{}",
        r.sample_id,
        class_name(j.true_label),
        r.victim.name(),
        class_name(j.clean_label),
        class_name(j.adv_label),
        j.eligible() as u8,
        j.success() as u8,
        r.l2,
        r.linf,
        r.iterations
    )
    .unwrap();
}

fn models_csv(models: &[ModelSummary], train: usize, test: usize) -> String {
    let mut s = String::from("arch,train_samples,test_samples,test_accuracy\n");
    for m in models {
        writeln!(s, "{},{train},{test},{:.4}", m.arch.name(), m.test_accuracy).unwrap();
    }
    s
}

const GAP: usize = 2;

/// Clean, adversarial and noise panels side by side on a white background.
/// The noise panel maps `adv - clean` to `0.5 + 0.5 d / max|d|`.
pub fn triptych(clean: &Image, adv: &Image) -> Result<Image> {
    clean.check_same_shape(adv)?;
    let noise = adv.sub(clean)?;
    let peak = noise.linf();
    let noise_panel = Image {
        data: noise
            .data
            .iter()
            .map(|d| if peak > 0.0 { 0.5 + 0.5 * d / peak } else { 0.5 })
            .collect(),
        ..noise
    };
    let (c, h, w) = clean.shape();
    let width = 3 * w + 2 * GAP;
    let mut out = Image {
        channels: c,
        height: h,
        width,
        data: vec![1.0; c * h * width],
    };
    for (k, panel) in [clean, adv, &noise_panel].into_iter().enumerate() {
        if panel.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::NonFinite("figure panel leaves [0, 1]".into()));
        }
        let x0 = k * (w + GAP);
        for ch in 0..c {
            for y in 0..h {
                let dst = out.index(ch, y, x0);
                out.data[dst..dst + w].copy_from_slice(&panel.data[panel.index(ch, y, 0)..panel.index(ch, y, 0) + w]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_and_defaults() {
        let p = ExperimentPlan::default();
        assert_eq!(p.pairs.len(), 9);
        assert_eq!(p.attacks.len(), 5);
        assert_eq!(p.archs(), ArchId::ALL.to_vec());
        assert!(p.validate().is_ok());
        let back: ExperimentPlan = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn invalid_plans() {
        let dup = ExperimentPlan {
            attacks: vec![AttackMethod::Pgd, AttackMethod::Pgd],
            ..Default::default()
        };
        let no_pairs = ExperimentPlan {
            pairs: vec![],
            ..Default::default()
        };
        for p in [dup, no_pairs] {
            assert!(matches!(p.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn triptych_layout() {
        let clean = Image::from_data(3, 2, 2, vec![0.25; 12]).unwrap();
        let mut adv = clean.clone();
        adv.data[0] = 0.75;
        adv.data[5] = 0.0;
        let t = triptych(&clean, &adv).unwrap();
        assert_eq!(t.shape(), (3, 2, 3 * 2 + 2 * GAP));
        assert_eq!(t.at(0, 0, 0), 0.25);
        assert_eq!(t.at(0, 0, 2), 1.0);
        assert_eq!(t.at(0, 0, 4), 0.75);
        assert_eq!(t.at(0, 0, 8), 1.0);
        assert_eq!(t.at(1, 0, 9), 0.25);
        assert_eq!(t.at(0, 1, 8), 0.5);
        let zero = triptych(&clean, &clean).unwrap();
        assert_eq!(zero.at(2, 1, 9), 0.5);
        let mut bad = clean.clone();
        bad.data[3] = 1.5;
        assert!(triptych(&clean, &bad).is_err());
    }

    #[test]
    fn attack_seeds_differ_per_sample_and_cell() {
        let a = attack_seed(0, AttackMethod::Ditimi, ArchId::TinyA, 3);
        assert_ne!(a, attack_seed(0, AttackMethod::Ditimi, ArchId::TinyA, 4));
        assert_ne!(a, attack_seed(0, AttackMethod::Ditimi, ArchId::TinyB, 3));
        assert_ne!(a, attack_seed(0, AttackMethod::Pgd, ArchId::TinyA, 3));
        assert_ne!(a, attack_seed(1, AttackMethod::Ditimi, ArchId::TinyA, 3));
    }
}
