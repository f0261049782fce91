//! Objective quality metrics and the attention-window sweep.

mod metrics;
mod report;
mod sweep;

pub use metrics::{log_spectral_distance, segmental_snr, SEG_FRAME, SEG_HOP, SEG_SNR_CEIL, SEG_SNR_FLOOR};
pub use report::{evaluate, evaluate_utterance, Bucket, MetricReport, MetricRow};
pub use sweep::{sweep_cell, sweep_windows, SweepGrid};
