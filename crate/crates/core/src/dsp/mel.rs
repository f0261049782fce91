use std::ops::Range;

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Filter count of the FBank front end.
pub const N_FBANK: usize = 42;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Per-frame linear-amplitude FBank energies, `T x n_filters`, all nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence(Matrix);

impl FeatureSequence {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::input("feature sequence needs at least one frame"));
        }
        if values.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("features must be finite and nonnegative"));
        }
        Ok(Self(values))
    }

    pub fn n_frames(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Sigmoid gains per frame and filter. Entries lie in (0, 1); saturation of
/// the logistic in floating point may land exactly on an endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSequence(Matrix);

impl GainSequence {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::input("gain sequence needs at least one frame"));
        }
        if values.data().iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::input("gains must lie in [0, 1]"));
        }
        Ok(Self(values))
    }

    pub fn n_frames(&self) -> usize {
        self.0.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Triangular filters on the mel axis with unit peaks on FFT bins.
///
/// Filter `m` rises from the previous peak bin to its own and falls to the
/// next one, interpolating linearly in mel. Adjacent filters therefore sum
/// to one between the first and last peak, and every peak bin is touched by
/// exactly one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterBank {
    filters: Matrix,
    peak_bins: Vec<usize>,
    support: Vec<Range<usize>>,
    f_low: f64,
    f_high: f64,
    sample_rate: u32,
}

impl MelFilterBank {
    pub fn n_filters(&self) -> usize {
        self.filters.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.filters.cols()
    }

    pub fn filters(&self) -> &Matrix {
        &self.filters
    }

    pub fn peak_bins(&self) -> &[usize] {
        &self.peak_bins
    }

    /// Bin range where filter `m` is nonzero.
    pub fn support(&self, m: usize) -> Range<usize> {
        self.support[m].clone()
    }

    pub fn f_low(&self) -> f64 {
        self.f_low
    }

    pub fn f_high(&self) -> f64 {
        self.f_high
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

pub fn build_mel_bank(
    n_filters: usize,
    n_bins: usize,
    sample_rate: u32,
    f_low: f64,
    f_high: f64,
) -> Result<MelFilterBank> {
    if n_filters == 0 {
        return Err(Error::config("need at least one mel filter"));
    }
    if n_bins < 2 {
        return Err(Error::config("need at least two FFT bins"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_low >= 0.0 && f_low < f_high && f_high <= nyquist) {
        return Err(Error::config(format!(
            "need 0 <= f_low < f_high <= {nyquist}, got {f_low}..{f_high}"
        )));
    }
    let bin_hz = nyquist / (n_bins - 1) as f64;
    let bin_mel = |k: usize| hz_to_mel(k as f64 * bin_hz);

    let mel_lo = hz_to_mel(f_low);
    let mel_hi = hz_to_mel(f_high);
    let step = (mel_hi - mel_lo) / (n_filters + 1) as f64;
    // Edge anchors plus one vertex per filter, each snapped to the nearest bin.
    let anchors: Vec<usize> = (0..n_filters + 2)
        .map(|i| {
            let hz = mel_to_hz(mel_lo + step * i as f64);
            ((hz / bin_hz).round() as usize).min(n_bins - 1)
        })
        .collect();
    if let Some(w) = anchors.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::config(format!(
            "{n_filters} mel filters over {f_low}..{f_high} Hz put two vertices on bin {} ({bin_hz} Hz bins)",
            anchors[w]
        )));
    }

    let mut filters = Matrix::zeros(n_filters, n_bins);
    let mut support = Vec::with_capacity(n_filters);
    for m in 0..n_filters {
        let (left, centre, right) = (anchors[m], anchors[m + 1], anchors[m + 2]);
        let (ml, mc, mr) = (bin_mel(left), bin_mel(centre), bin_mel(right));
        let row = filters.row_mut(m);
        for (k, w) in row.iter_mut().enumerate().take(right).skip(left + 1) {
            *w = match k.cmp(&centre) {
                std::cmp::Ordering::Less => (bin_mel(k) - ml) / (mc - ml),
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => (mr - bin_mel(k)) / (mr - mc),
            };
        }
        support.push(left + 1..right);
    }

    Ok(MelFilterBank {
        filters,
        peak_bins: anchors[1..=n_filters].to_vec(),
        support,
        f_low,
        f_high,
        sample_rate,
    })
}

/// `values[t][m] = Σ_k filters[m][k] · |X[t][k]|`, no log compression.
pub fn extract_fbank(spec: &Spectrogram, bank: &MelFilterBank) -> Result<FeatureSequence> {
    if spec.n_bins() != bank.n_bins() {
        return Err(Error::input(format!(
            "spectrogram has {} bins, filter bank expects {}",
            spec.n_bins(),
            bank.n_bins()
        )));
    }
    let mut out = Matrix::zeros(spec.n_frames(), bank.n_filters());
    for t in 0..spec.n_frames() {
        let frame = spec.frame(t);
        let row = out.row_mut(t);
        for (m, value) in row.iter_mut().enumerate() {
            let weights = bank.filters.row(m);
            *value = bank.support[m].clone().map(|k| weights[k] * frame[k].norm()).sum();
        }
    }
    FeatureSequence::new(out)
}

/// Spreads per-filter gains over FFT bins: a filter-weighted average where any
/// filter covers the bin, otherwise the value of the nearest covered bin.
pub fn expand_gains(gains: &GainSequence, bank: &MelFilterBank) -> Result<Matrix> {
    let g = gains.values();
    if g.cols() != bank.n_filters() {
        return Err(Error::input(format!(
            "gain sequence has {} columns, filter bank has {} filters",
            g.cols(),
            bank.n_filters()
        )));
    }
    let n_bins = bank.n_bins();
    let mut denom = vec![0.0; n_bins];
    for m in 0..bank.n_filters() {
        for k in bank.support[m].clone() {
            denom[k] += bank.filters.get(m, k);
        }
    }
    let covered: Vec<usize> = (0..n_bins).filter(|&k| denom[k] > 0.0).collect();
    let nearest_covered = |k: usize| -> usize {
        *covered
            .iter()
            .min_by_key(|&&c| c.abs_diff(k))
            .expect("a filter bank always covers its peak bins")
    };

    let mut out = Matrix::zeros(g.rows(), n_bins);
    for t in 0..g.rows() {
        let gains_t = g.row(t);
        let row = out.row_mut(t);
        for (m, &g_m) in gains_t.iter().enumerate() {
            let weights = bank.filters.row(m);
            for k in bank.support[m].clone() {
                row[k] += g_m * weights[k];
            }
        }
        for k in 0..n_bins {
            if denom[k] > 0.0 {
                row[k] /= denom[k];
            }
        }
        for k in 0..n_bins {
            if denom[k] <= 0.0 {
                row[k] = row[nearest_covered(k)];
            }
        }
    }
    Ok(out)
}

/// Scales every complex bin by a real gain; the noisy phase is kept.
pub fn apply_spectral_gain(spec: &Spectrogram, gains: &Matrix) -> Result<Spectrogram> {
    if gains.rows() != spec.n_frames() || gains.cols() != spec.n_bins() {
        return Err(Error::input(format!(
            "gain matrix is {}x{}, spectrogram is {}x{}",
            gains.rows(),
            gains.cols(),
            spec.n_frames(),
            spec.n_bins()
        )));
    }
    let mut out = spec.clone();
    for t in 0..spec.n_frames() {
        for (c, &g) in out.frame_mut(t).iter_mut().zip(gains.row(t)) {
            *c *= g;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex64;

    use super::*;
    use crate::dsp::{StftConfig, SAMPLE_RATE};

    fn default_bank() -> MelFilterBank {
        build_mel_bank(N_FBANK, 257, SAMPLE_RATE, 0.0, 8000.0).unwrap()
    }

    fn random_spec(rng: &mut ChaCha8Rng, frames: usize) -> Spectrogram {
        let cells = (0..frames * 257)
            .map(|_| Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        Spectrogram::new(cells, frames, StftConfig::default(), 1000, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn mel_closed_form() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn default_bank_shape_and_peaks() {
        let bank = default_bank();
        assert_eq!(bank.n_filters(), 42);
        assert_eq!(bank.n_bins(), 257);
        assert!(bank.peak_bins().windows(2).all(|w| w[0] < w[1]));
        for (m, &p) in bank.peak_bins().iter().enumerate() {
            assert_eq!(bank.filters().get(m, p), 1.0);
            assert!(bank.filters().row(m).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn filters_two_apart_are_disjoint() {
        let bank = default_bank();
        for m in 0..bank.n_filters() - 2 {
            for k in 0..257 {
                assert!(bank.filters().get(m, k) == 0.0 || bank.filters().get(m + 2, k) == 0.0);
            }
        }
    }

    #[test]
    fn bins_between_outer_peaks_are_covered() {
        let bank = default_bank();
        let first = bank.peak_bins()[0];
        let last = *bank.peak_bins().last().unwrap();
        for k in first..=last {
            let s: f64 = (0..42).map(|m| bank.filters().get(m, k)).sum();
            assert!(s > 0.0, "bin {k}");
            assert!((s - 1.0).abs() < 1e-12, "bin {k} sums to {s}");
        }
    }

    #[test]
    fn infeasible_spacing_is_rejected() {
        assert!(matches!(
            build_mel_bank(200, 257, SAMPLE_RATE, 0.0, 8000.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(build_mel_bank(0, 257, SAMPLE_RATE, 0.0, 8000.0).is_err());
        assert!(build_mel_bank(10, 257, SAMPLE_RATE, 500.0, 400.0).is_err());
        assert!(build_mel_bank(10, 257, SAMPLE_RATE, 0.0, 9000.0).is_err());
    }

    #[test]
    fn fbank_of_silence_is_zero() {
        let spec = Spectrogram::new(
            vec![Complex64::new(0.0, 0.0); 3 * 257],
            3,
            StftConfig::default(),
            900,
            SAMPLE_RATE,
        )
        .unwrap();
        let f = extract_fbank(&spec, &default_bank()).unwrap();
        assert!(f.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_magnitude_at_a_peak_bin_reads_one() {
        let bank = default_bank();
        let m = 17;
        let p = bank.peak_bins()[m];
        let mut cells = vec![Complex64::new(0.0, 0.0); 2 * 257];
        cells[257 + p] = Complex64::new(0.6, 0.8);
        let spec = Spectrogram::new(cells, 2, StftConfig::default(), 600, SAMPLE_RATE).unwrap();
        let f = extract_fbank(&spec, &bank).unwrap();
        for j in 0..42 {
            let expected = if j == m { 1.0 } else { 0.0 };
            assert!((f.values().get(1, j) - expected).abs() < 1e-12);
            assert_eq!(f.values().get(0, j), 0.0);
        }
    }

    #[test]
    fn fbank_matches_dense_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bank = default_bank();
        let spec = random_spec(&mut rng, 6);
        let f = extract_fbank(&spec, &bank).unwrap();
        for t in 0..6 {
            for m in 0..42 {
                let mut oracle = 0.0;
                for k in 0..257 {
                    let c = spec.frame(t)[k];
                    oracle += bank.filters().get(m, k) * (c.re * c.re + c.im * c.im).sqrt();
                }
                assert!((f.values().get(t, m) - oracle).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fbank_dimension_mismatch() {
        let bank = build_mel_bank(10, 129, SAMPLE_RATE, 0.0, 8000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(extract_fbank(&random_spec(&mut rng, 1), &bank).is_err());
    }

    #[test]
    fn uniform_gains_expand_uniformly() {
        let bank = default_bank();
        for c in [1.0, 0.5, 0.123] {
            let gains = GainSequence::new(Matrix::filled(4, 42, c)).unwrap();
            let g = expand_gains(&gains, &bank).unwrap();
            assert!(g.data().iter().all(|&v| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn uncovered_edges_copy_their_neighbour() {
        let bank = default_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gains = Matrix::new(1, 42, (0..42).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap();
        let g = expand_gains(&GainSequence::new(gains.clone()).unwrap(), &bank).unwrap();
        assert_eq!(g.get(0, 0), g.get(0, 1));
        assert_eq!(g.get(0, 256), g.get(0, 255));
        assert_eq!(g.get(0, bank.peak_bins()[0]), gains.get(0, 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn expansion_is_exact_at_peaks(seed in any::<u64>()) {
            let bank = default_bank();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gains = Matrix::new(3, 42, (0..126).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let g = expand_gains(&GainSequence::new(gains.clone()).unwrap(), &bank).unwrap();
            for t in 0..3 {
                for (m, &p) in bank.peak_bins().iter().enumerate() {
                    prop_assert_eq!(g.get(t, p), gains.get(t, m));
                }
            }
        }

        #[test]
        fn spectral_gain_keeps_phase(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_spec(&mut rng, 2);
            let gains = Matrix::new(2, 257, (0..514).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let out = apply_spectral_gain(&spec, &gains).unwrap();
            for (a, b) in spec.cells().iter().zip(out.cells()) {
                if b.norm() > 0.0 {
                    prop_assert!((a.arg() - b.arg()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spectral_gain_identity_zero_and_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = random_spec(&mut rng, 3);
        assert_eq!(apply_spectral_gain(&spec, &Matrix::filled(3, 257, 1.0)).unwrap(), spec);
        let zero = apply_spectral_gain(&spec, &Matrix::zeros(3, 257)).unwrap();
        assert!(zero.cells().iter().all(|c| c.norm() == 0.0));
        let half = apply_spectral_gain(&spec, &Matrix::filled(3, 257, 0.5)).unwrap();
        for (a, b) in spec.cells().iter().zip(half.cells()) {
            assert!((b.norm() - 0.5 * a.norm()).abs() < 1e-12);
        }
        assert!(apply_spectral_gain(&spec, &Matrix::zeros(2, 257)).is_err());
    }
}
