//! Dataset generation, the train and infer stages, and reporting.

mod config;
mod dataset;
mod report;
mod run;

pub use config::{DatasetSection, GenerationConfig, GridSection, LeakSection, RunConfig};
pub use dataset::{
    default_split, generate_dataset, leak_flags, split_dataset, ArrayEntry, Counts, Dataset, DatasetManifest,
    SampleRecord, SplitAssignment, FORMAT_VERSION, MANIFEST,
};
pub use report::{panel_image, report_run, summarize, write_summary, Summary};
pub use run::{ensure_split, infer_run, read_planes, tau_for, train_run, InferIndex, RunPaths};
