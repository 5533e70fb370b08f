//! Simulated and ingested homodyne scans, phase binning, and training sets.

mod csv_io;
mod dataset;
mod scan;

pub use csv_io::{export_csv, ingest_csv, ingest_reader, write_csv, SCAN_HEADER};
pub use dataset::{
    gen_dataset, generate_record, record_params, record_seed, DatasetHeader, DatasetReader,
    DatasetSpec, LabelKind, ParamRanges, Record, HEADER_LEN, MAGIC, PARAMS_LABEL_LEN, VERSION,
};
pub use scan::{binned_variances, sample_quadratures, sample_scan, PhaseBin, PhaseMode, QuadratureScan, MIN_SCAN_POINTS};
