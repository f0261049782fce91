use crate::dsp::{Stft, Waveform};
use crate::error::{Error, Result};

pub const SEG_FRAME: usize = 512;
pub const SEG_HOP: usize = 256;
pub const SEG_SNR_FLOOR: f64 = -10.0;
pub const SEG_SNR_CEIL: f64 = 35.0;
const SILENT_FRAME: f64 = 1e-10;
const LSD_EPS: f64 = 1e-8;

fn check_lengths(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::input(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::input("signals are empty"));
    }
    Ok(())
}

/// Frame-averaged SNR over 32 ms frames with 50% overlap, each frame clamped
/// to [-10, 35] dB. Frames with (near) silent reference are skipped; a signal
/// shorter than one frame is treated as a single frame.
pub fn segmental_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let (r, e) = (reference.samples(), estimate.samples());
    let len = r.len();
    let starts: Vec<usize> = if len < SEG_FRAME {
        vec![0]
    } else {
        (0..=(len - SEG_FRAME) / SEG_HOP).map(|k| k * SEG_HOP).collect()
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in starts {
        let end = (s + SEG_FRAME).min(len);
        let sig: f64 = r[s..end].iter().map(|x| x * x).sum();
        if sig < SILENT_FRAME {
            continue;
        }
        let err: f64 = r[s..end].iter().zip(&e[s..end]).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = 10.0 * (sig / err).log10();
        sum += db.clamp(SEG_SNR_FLOOR, SEG_SNR_CEIL);
        count += 1;
    }
    if count == 0 {
        return Err(Error::input("reference is silent"));
    }
    Ok(sum / count as f64)
}

/// Mean over STFT frames of the RMS (over bins) log-magnitude difference in dB.
pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let stft = Stft::default();
    let a = stft.analyze(reference)?;
    let b = stft.analyze(estimate)?;
    let bins = a.n_bins();
    let mut total = 0.0;
    for t in 0..a.n_frames() {
        let ms: f64 = a
            .frame(t)
            .iter()
            .zip(b.frame(t))
            .map(|(x, y)| {
                let d = 20.0 * ((x.norm() + LSD_EPS) / (y.norm() + LSD_EPS)).log10();
                d * d
            })
            .sum::<f64>()
            / bins as f64;
        total += ms.sqrt();
    }
    Ok(total / a.n_frames() as f64)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::dsp::{make_hann, SAMPLE_RATE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wave(x: Vec<f64>) -> Waveform {
        Waveform::new(x, SAMPLE_RATE).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn identical_signals_hit_ceiling() {
        let x = wave(random(4000, 1));
        assert_eq!(segmental_snr(&x, &x).unwrap(), 35.0);
    }

    #[test]
    fn zero_estimate_is_zero_db() {
        let x = wave(random(4000, 2));
        let z = wave(vec![0.0; 4000]);
        assert!(segmental_snr(&x, &z).unwrap().abs() < 1e-12);
    }

    #[test]
    fn known_per_frame_noise_level() {
        // Noise scaled frame by frame so every 512-sample frame sits at 10 dB;
        // frames overlap by half, so scale each 256-sample half-block.
        let n = 256 * 40;
        let x = random(n, 3);
        let raw = random(n, 4);
        let mut y = x.clone();
        for b in 0..n / 256 {
            let r = b * 256..(b + 1) * 256;
            let ps: f64 = x[r.clone()].iter().map(|v| v * v).sum();
            let pn: f64 = raw[r.clone()].iter().map(|v| v * v).sum();
            let s = (ps / pn / 10.0).sqrt();
            for i in r {
                y[i] += s * raw[i];
            }
        }
        let got = segmental_snr(&wave(x), &wave(y)).unwrap();
        assert!((got - 10.0).abs() < 0.5, "{got}");
    }

    #[test]
    fn silent_frames_are_excluded() {
        let mut x = random(4096, 5);
        x[..2048].iter_mut().for_each(|v| *v = 0.0);
        let z = vec![0.0; 4096];
        // All counted frames overlap signal; with a zero estimate every
        // counted frame is exactly 0 dB.
        assert!(segmental_snr(&wave(x), &wave(z)).unwrap().abs() < 1e-12);
        assert!(segmental_snr(&wave(vec![0.0; 4096]), &wave(random(4096, 6))).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = wave(random(1000, 7));
        let b = wave(random(999, 8));
        assert!(matches!(segmental_snr(&a, &b), Err(Error::InvalidInput(_))));
        assert!(matches!(log_spectral_distance(&a, &b), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lsd_of_identity_and_half() {
        let x = random(5000, 9);
        let a = wave(x.clone());
        assert_eq!(log_spectral_distance(&a, &a).unwrap(), 0.0);
        let half = wave(x.iter().map(|v| 0.5 * v).collect());
        let d = log_spectral_distance(&a, &half).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-6, "{d}");
    }

    #[test]
    fn lsd_is_symmetric_and_deterministic() {
        let a = wave(random(3000, 10));
        let b = wave(random(3000, 11));
        let ab = log_spectral_distance(&a, &b).unwrap();
        assert!((ab - log_spectral_distance(&b, &a).unwrap()).abs() < 1e-9);
        assert_eq!(ab.to_bits(), log_spectral_distance(&a, &b).unwrap().to_bits());
    }

    #[test]
    fn lsd_matches_direct_dft() {
        let n = 2000;
        let x = random(n, 12);
        let y = random(n, 13);
        let (frame, hop, pad) = (512usize, 384usize, 128usize);
        let w = make_hann(frame).unwrap();
        let padded = |s: &[f64]| {
            let mut v = vec![0.0; pad];
            v.extend_from_slice(s);
            v.extend(std::iter::repeat_n(0.0, pad));
            v
        };
        let (px, py) = (padded(&x), padded(&y));
        let total = px.len();
        let frames = 1 + (total - frame).div_ceil(hop);
        let mag = |sig: &[f64], t: usize, k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..frame {
                let v = sig.get(t * hop + i).copied().unwrap_or(0.0) * w[i];
                let ang = -2.0 * PI * (k * i) as f64 / frame as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re.hypot(im)
        };
        let mut acc = 0.0;
        for t in 0..frames {
            let mut s = 0.0;
            for k in 0..=frame / 2 {
                let d = 20.0 * ((mag(&px, t, k) + 1e-8) / (mag(&py, t, k) + 1e-8)).log10();
                s += d * d;
            }
            acc += (s / 257.0).sqrt();
        }
        let want = acc / frames as f64;
        let got = log_spectral_distance(&wave(x), &wave(y)).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
