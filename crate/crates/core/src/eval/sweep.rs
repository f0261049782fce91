use std::path::Path;

use super::report::evaluate;
use crate::data::Utterance;
use crate::dsp::Frontend;
use crate::enhance::Enhancer;
use crate::error::{Error, Result};
use crate::model::{init_params, AttentionConfig, ModelDims};
use crate::training::{train, TrainConfig, TrainingExample};

/// Mean seg-SNR improvement per `(omega, xi)`: `cells[i][j]` belongs to
/// `omegas[i]`, `xis[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub omegas: Vec<usize>,
    pub xis: Vec<usize>,
    pub cells: Vec<Vec<f64>>,
}

impl SweepGrid {
    pub fn get(&self, omega: usize, xi: usize) -> Option<f64> {
        let i = self.omegas.iter().position(|&o| o == omega)?;
        let j = self.xis.iter().position(|&x| x == xi)?;
        Some(self.cells[i][j])
    }

    /// Rows are omega values, columns xi values.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["omega".to_string()];
        header.extend(self.xis.iter().map(|x| format!("xi={x}")));
        w.write_record(&header)?;
        for (o, row) in self.omegas.iter().zip(&self.cells) {
            let mut rec = vec![o.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains from `init_params(dims, init_seed)` with the given windows, keeps the
/// epoch with the lowest training-set MSE and returns the mean seg-SNR
/// improvement on `eval_set`.
pub fn sweep_cell(
    dims: ModelDims,
    init_seed: u64,
    attention: AttentionConfig,
    train_set: &[TrainingExample],
    eval_set: &[Utterance],
    cfg: &TrainConfig,
) -> Result<f64> {
    let init = init_params(dims, init_seed)?;
    let cfg = TrainConfig {
        attention,
        ..cfg.clone()
    };
    let out = train(&init, train_set, train_set, &cfg, |_, _| {})?;
    let enhancer = Enhancer::new(out.best, attention, Frontend::default())?;
    Ok(evaluate(&enhancer, eval_set)?.mean_seg_snr_gain())
}

/// One independent training run per grid cell, same seeds throughout.
#[allow(clippy::too_many_arguments)]
pub fn sweep_windows(
    dims: ModelDims,
    init_seed: u64,
    train_set: &[TrainingExample],
    eval_set: &[Utterance],
    omegas: &[usize],
    xis: &[usize],
    cfg: &TrainConfig,
    mut on_cell: impl FnMut(usize, usize, f64),
) -> Result<SweepGrid> {
    if omegas.is_empty() || xis.is_empty() {
        return Err(Error::config("omega and xi lists must be nonempty"));
    }
    if eval_set.is_empty() {
        return Err(Error::input("sweep needs evaluation utterances"));
    }
    let mut cells = Vec::with_capacity(omegas.len());
    for &omega in omegas {
        let mut row = Vec::with_capacity(xis.len());
        for &xi in xis {
            let v = sweep_cell(dims, init_seed, AttentionConfig { omega, xi }, train_set, eval_set, cfg)?;
            on_cell(omega, xi, v);
            row.push(v);
        }
        cells.push(row);
    }
    Ok(SweepGrid {
        omegas: omegas.to_vec(),
        xis: xis.to_vec(),
        cells,
    })
}
