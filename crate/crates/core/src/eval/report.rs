use std::path::Path;

use rayon::prelude::*;

use super::metrics::{log_spectral_distance, segmental_snr};
use crate::data::Utterance;
use crate::enhance::Enhancer;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub snr_db: f64,
    pub seg_snr_noisy: f64,
    pub seg_snr_enhanced: f64,
    pub lsd_noisy: f64,
    pub lsd_enhanced: f64,
}

impl MetricRow {
    pub fn seg_snr_gain(&self) -> f64 {
        self.seg_snr_enhanced - self.seg_snr_noisy
    }
}

/// Means over the rows sharing one SNR value.
#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub snr_db: f64,
    pub count: usize,
    pub seg_snr_noisy: f64,
    pub seg_snr_enhanced: f64,
    pub lsd_noisy: f64,
    pub lsd_enhanced: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Ascending by SNR, one per distinct row SNR.
    pub buckets: Vec<Bucket>,
}

fn mean(rows: &[&MetricRow], f: impl Fn(&MetricRow) -> f64) -> f64 {
    rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut levels: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let buckets = levels
            .into_iter()
            .map(|snr| {
                let members: Vec<&MetricRow> = rows.iter().filter(|r| r.snr_db == snr).collect();
                Bucket {
                    snr_db: snr,
                    count: members.len(),
                    seg_snr_noisy: mean(&members, |r| r.seg_snr_noisy),
                    seg_snr_enhanced: mean(&members, |r| r.seg_snr_enhanced),
                    lsd_noisy: mean(&members, |r| r.lsd_noisy),
                    lsd_enhanced: mean(&members, |r| r.lsd_enhanced),
                }
            })
            .collect();
        Self { rows, buckets }
    }

    /// Mean seg-SNR improvement over all rows; NaN when empty.
    pub fn mean_seg_snr_gain(&self) -> f64 {
        self.rows.iter().map(MetricRow::seg_snr_gain).sum::<f64>() / self.rows.len() as f64
    }

    /// One CSV: utterance rows first, then bucket rows. `scope` tells them
    /// apart; bucket rows leave `id` empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "scope",
            "id",
            "snr_db",
            "count",
            "seg_snr_noisy",
            "seg_snr_enhanced",
            "lsd_noisy",
            "lsd_enhanced",
        ])?;
        for r in &self.rows {
            w.write_record([
                "utterance".to_string(),
                r.id.clone(),
                r.snr_db.to_string(),
                "1".to_string(),
                r.seg_snr_noisy.to_string(),
                r.seg_snr_enhanced.to_string(),
                r.lsd_noisy.to_string(),
                r.lsd_enhanced.to_string(),
            ])?;
        }
        for b in &self.buckets {
            w.write_record([
                "bucket".to_string(),
                String::new(),
                b.snr_db.to_string(),
                b.count.to_string(),
                b.seg_snr_noisy.to_string(),
                b.seg_snr_enhanced.to_string(),
                b.lsd_noisy.to_string(),
                b.lsd_enhanced.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Metrics of the noisy mixture and of its enhanced version against the
/// clean component.
pub fn evaluate_utterance(enhancer: &Enhancer, utt: &Utterance) -> Result<MetricRow> {
    let clean = &utt.mixture.clean;
    let noisy = &utt.mixture.noisy;
    let enhanced = enhancer.enhance(noisy)?.output;
    Ok(MetricRow {
        id: utt.id.clone(),
        snr_db: utt.snr_db,
        seg_snr_noisy: segmental_snr(clean, noisy)?,
        seg_snr_enhanced: segmental_snr(clean, &enhanced)?,
        lsd_noisy: log_spectral_distance(clean, noisy)?,
        lsd_enhanced: log_spectral_distance(clean, &enhanced)?,
    })
}

/// Rows in input order.
pub fn evaluate(enhancer: &Enhancer, utterances: &[Utterance]) -> Result<MetricReport> {
    let rows = utterances
        .par_iter()
        .map(|u| evaluate_utterance(enhancer, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(rows))
}
