//! Datasets, experiment plans and transfer-matrix reports.

mod dataset;
mod matrix;
mod plan;

pub use dataset::{
    generate_dataset, load_dataset, record_file_name, render_signal, save_dataset, Dataset, DatasetConfig, Manifest,
    ManifestEntry, Sample, Split, MANIFEST_FILE, RECORDS_DIR,
};
pub use matrix::{success_rate, Judgement, MatrixEntry, TransferMatrix, MATRIX_HEADER};
pub use plan::{
    all_pairs, examples, model_file_name, render_dataset, run_plan, train_arch, triptych, DatasetSource, ExperimentPlan,
    ModelSource, ModelSummary, PlanOutput, SampleRecord, DATASET_DIR, FIGURES_DIR, MATRIX_PATH, MODELS_CSV_PATH,
    MODELS_DIR, PLAN_PATH, SAMPLES_DIR, SAMPLES_HEADER, WAVEFORMS_DIR,
};
