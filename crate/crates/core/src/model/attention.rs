use std::ops::RangeInclusive;
use std::path::Path;

use crate::error::{Error, Result};

/// Look-back (`omega`) and look-ahead (`xi`) window lengths, in frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub omega: usize,
    pub xi: usize,
}

impl AttentionConfig {
    pub const fn new(omega: usize, xi: usize) -> Self {
        Self { omega, xi }
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { omega: 15, xi: 5 }
    }
}

/// Frames attended to from focal frame `t`: `max(0, t-ω)..=t` looking back
/// and `t..=min(N-1, t+ξ)` looking ahead. Both contain `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionWindow {
    pub forward: RangeInclusive<usize>,
    pub backward: RangeInclusive<usize>,
}

pub fn attention_window(t: usize, n_frames: usize, cfg: &AttentionConfig) -> Result<AttentionWindow> {
    if t >= n_frames {
        return Err(Error::input(format!("frame {t} out of range for {n_frames} frames")));
    }
    Ok(AttentionWindow {
        forward: t.saturating_sub(cfg.omega)..=t,
        backward: t..=(t + cfg.xi).min(n_frames - 1),
    })
}

/// Attention weights laid out on fixed-width grids for inspection.
///
/// Row `t` of `forward` has `ω + 1` cells for frames `t-ω ..= t` and row `t`
/// of `backward` has `ξ + 1` cells for frames `t ..= t+ξ`. Cells that fall
/// outside the utterance are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub config: AttentionConfig,
    pub forward: Vec<Vec<Option<f64>>>,
    pub backward: Vec<Vec<Option<f64>>>,
}

const PAD: &str = "pad";

impl AttentionDump {
    pub(crate) fn from_weights(config: AttentionConfig, forward: &[Vec<f64>], backward: &[Vec<f64>]) -> Self {
        let fw = forward
            .iter()
            .map(|w| {
                let mut row = vec![None; config.omega + 1 - w.len()];
                row.extend(w.iter().copied().map(Some));
                row
            })
            .collect();
        let bw = backward
            .iter()
            .map(|w| {
                let mut row: Vec<Option<f64>> = w.iter().copied().map(Some).collect();
                row.resize(config.xi + 1, None);
                row
            })
            .collect();
        Self {
            config,
            forward: fw,
            backward: bw,
        }
    }

    /// Writes one headered CSV per direction.
    pub fn write_csv(&self, forward_path: impl AsRef<Path>, backward_path: impl AsRef<Path>) -> Result<()> {
        let fw_header: Vec<String> = (0..=self.config.omega).rev().map(|lag| format!("t-{lag}")).collect();
        write_grid(forward_path.as_ref(), &fw_header, &self.forward)?;
        let bw_header: Vec<String> = (0..=self.config.xi).map(|lead| format!("t+{lead}")).collect();
        write_grid(backward_path.as_ref(), &bw_header, &self.backward)
    }
}

fn write_grid(path: &Path, header: &[String], rows: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut h = vec!["frame".to_string()];
    h.extend(header.iter().cloned());
    w.write_record(&h)?;
    for (t, row) in rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|c| c.map_or_else(|| PAD.to_string(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_at_edges() {
        let cfg = AttentionConfig::default();
        let w = attention_window(0, 100, &cfg).unwrap();
        assert_eq!(w.forward, 0..=0);
        let w = attention_window(99, 100, &cfg).unwrap();
        assert_eq!(w.backward, 99..=99);
        let w = attention_window(20, 251, &cfg).unwrap();
        assert_eq!((w.forward, w.backward), (5..=20, 20..=25));
        assert!(attention_window(100, 100, &cfg).is_err());
    }

    #[test]
    fn dump_padding() {
        let cfg = AttentionConfig::new(2, 1);
        let fw = vec![vec![1.0], vec![0.5, 0.5], vec![0.2, 0.3, 0.5]];
        let bw = vec![vec![0.4, 0.6], vec![0.1, 0.9], vec![1.0]];
        let d = AttentionDump::from_weights(cfg, &fw, &bw);
        assert_eq!(d.forward[0], vec![None, None, Some(1.0)]);
        assert_eq!(d.forward[2].len(), 3);
        assert_eq!(d.backward[2], vec![Some(1.0), None]);
    }
}
