use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Target peak after a protective rescale.
const PEAK_LIMIT: f64 = 0.99;

/// A mixture and the exact addends that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Clean component as present in `noisy` (after any peak rescale).
    pub clean: Waveform,
    /// Scaled noise component as present in `noisy`.
    pub noise: Waveform,
    /// Factor applied to the raw noise to hit the target SNR.
    pub noise_scale: f64,
    /// Factor applied to the whole mixture to keep `|noisy| <= 1`; 1.0 when
    /// no rescale happened.
    pub peak_rescale: f64,
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10 log10(P_signal / P_noise)` with mean-square powers.
pub fn measure_snr(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}

/// Mixes `noise` (tiled if shorter) into `clean` at `snr_db`, measuring power
/// over the full clean signal.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::input(format!("SNR must be finite, got {snr_db}")));
    }
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::input(format!(
            "sample rates differ: clean {} Hz, noise {} Hz",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::input("clean and noise signals must be nonempty"));
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(Error::input("clean signal is silent"));
    }
    let n = clean.len();
    let tiled: Vec<f64> = noise.samples().iter().copied().cycle().take(n).collect();
    let p_noise = mean_square(&tiled);
    if p_noise == 0.0 {
        return Err(Error::input("noise signal is silent"));
    }
    let noise_scale = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();

    let mut s: Vec<f64> = clean.samples().to_vec();
    let mut v: Vec<f64> = tiled.iter().map(|x| x * noise_scale).collect();
    let mut y: Vec<f64> = s.iter().zip(&v).map(|(a, b)| a + b).collect();
    let peak = y.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let peak_rescale = if peak > 1.0 { PEAK_LIMIT / peak } else { 1.0 };
    if peak_rescale != 1.0 {
        for buf in [&mut s, &mut v, &mut y] {
            buf.iter_mut().for_each(|x| *x *= peak_rescale);
        }
    }
    let rate = clean.sample_rate();
    Ok(Mixture {
        noisy: Waveform::new(y, rate)?,
        clean: Waveform::new(s, rate)?,
        noise: Waveform::new(v, rate)?,
        noise_scale,
        peak_rescale,
    })
}
