//! On-disk formats: binary and CSV datasets, JSON checkpoints.

pub mod checkpoint;
pub mod ltds;

pub use checkpoint::Checkpoint;
pub use ltds::{read_csv, read_dataset, write_csv, write_dataset};
