//! Ingestion, BAD annotation, the project store, exports and the command
//! workflow.

mod bad;
mod export;
mod ingest;
mod store;
mod visualize;
mod workflow;

pub use bad::{BadAnnotation, BadInterval};
pub use export::{export, fmt_ln_p, fmt_sig, ExportTable, COMBINED_FILE, DIFFTEST_FILE, PARAMS_FILE, RAW_SCORES_FILE};
pub use ingest::{
    expand_inputs, ingest, parse_tsv, parse_vcf, Dataset, IngestStats, InputFormat, ReadCountRecord, Sample,
    SampleRecord, Snv, TSV_COLUMNS,
};
pub use store::{
    load_project, project_dir, resolve_project, save_project, sha256_file, CombinedStore, CommandDescriptor,
    DiffTestStore, GroupSpec, InputHash, Project, ProjectLock, ReproduceLog, ScoreStore, LOG_FILE, MANIFEST,
    PROJECT_EXT, STORE_VERSION,
};
pub use visualize::{diagnostics, visualize, DiagnosticRow, DIAGNOSTICS_FILE};
pub use workflow::{
    apply, execute, portable_path, project_base, read_group, reproduce, resolve_path, verify_inputs, Command, ALL_GROUP,
};
