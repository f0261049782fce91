//! Built-in numerical checks: gradients against finite differences, attention
//! structure, STFT round trip and the filter bank against a dense oracle.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{apply_spectral_gain, expand_gains, Frontend, GainSequence, Stft, Waveform, SAMPLE_RATE};
use crate::dsp::{FeatureSequence, N_FBANK};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::model::{
    forward, init_params, loss_and_gradients, mse_loss, AttentionConfig, ModelDims, ModelParams, Params, RunMode,
};
use crate::nn::Tensor;

/// Gradient-check tolerance on the relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-4;
/// Denominator floor so that entries whose true gradient is numerically zero
/// are judged on absolute error.
const GRAD_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

/// Random features in `[0, 1)`.
pub fn random_features(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureSequence {
    let data = (0..frames * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    FeatureSequence::new(Matrix::new(frames, dim, data).expect("sized")).expect("nonnegative")
}

fn set_entry(params: &mut ModelParams, slot: usize, j: usize, value: f64) {
    let mut i = 0;
    params.tensors_mut().for_each_mut(|t| {
        if i == slot {
            t.data_mut()[j] = value;
        }
        i += 1;
    });
}

/// Compares `grads` with central differences of the inference-mode MSE for
/// every parameter entry.
pub fn check_gradients(
    params: &ModelParams,
    grads: &Params<Tensor>,
    noisy: &FeatureSequence,
    clean: &FeatureSequence,
    cfg: &AttentionConfig,
    eps: f64,
) -> Result<GradCheck> {
    let mut q = params.clone();
    let names: Vec<String> = params.tensors().entries().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.entries().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut report = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (slot, name) in names.iter().enumerate() {
        for (j, &a) in analytic[slot].iter().enumerate() {
            let orig = params.tensors().entries()[slot].1.data()[j];
            set_entry(&mut q, slot, j, orig + eps);
            let up = mse_loss(&forward(&q, noisy, cfg, RunMode::Inference)?, clean)?;
            set_entry(&mut q, slot, j, orig - eps);
            let down = mse_loss(&forward(&q, noisy, cfg, RunMode::Inference)?, clean)?;
            set_entry(&mut q, slot, j, orig);
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{j}]");
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// The small gradient-check configuration: 8 features, encoder 16, hidden 12,
/// e_dim 12, windows 3/2, 20 frames.
pub fn small_gradient_check(seed: u64) -> Result<GradCheck> {
    let dims = ModelDims {
        feature: 8,
        encoder_out: 16,
        hidden: 12,
        e_dim: 12,
    };
    let cfg = AttentionConfig { omega: 3, xi: 2 };
    let params = init_params(dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noisy = random_features(&mut rng, 20, 8);
    let clean = random_features(&mut rng, 20, 8);
    let (_, grads) = loss_and_gradients(&params, &noisy, &clean, &cfg, RunMode::Inference)?;
    check_gradients(&params, &grads, &noisy, &clean, &cfg, GRAD_EPS)
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<22} {} ({:.2?})", c.name, c.detail, c.elapsed)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

fn run(name: &'static str, check: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn gradient_check() -> Result<(bool, String)> {
    let r = small_gradient_check(7)?;
    Ok((
        r.passed(),
        format!(
            "{} entries, max rel err {:.2e} at {} (analytic {:.6e}, numeric {:.6e})",
            r.checked, r.max_rel_error, r.worst, r.worst_analytic, r.worst_numeric
        ),
    ))
}

fn attention_check() -> Result<(bool, String)> {
    let dims = ModelDims {
        feature: 6,
        encoder_out: 8,
        hidden: 5,
        e_dim: 6,
    };
    let params = init_params(dims, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sum: f64 = 0.0;
    let mut draws = 0;
    for _ in 0..30 {
        let n = rng.random_range(1..25);
        let cfg = AttentionConfig {
            omega: rng.random_range(0..8),
            xi: rng.random_range(0..8),
        };
        let x = random_features(&mut rng, n, 6);
        let tr = forward(&params, &x, &cfg, RunMode::Inference)?;
        for t in 0..n {
            let fwd = (t.saturating_sub(cfg.omega), t);
            let bwd = (t, (t + cfg.xi).min(n - 1));
            if tr.windows_f[t] != fwd || tr.windows_b[t] != bwd {
                return Ok((false, format!("frame {t} of {n}: wrong window for {cfg:?}")));
            }
            for (w, (lo, hi)) in [(&tr.attn_f[t], fwd), (&tr.attn_b[t], bwd)] {
                if w.len() != hi - lo + 1 || w.iter().any(|&a| a.is_nan() || a <= 0.0) {
                    return Ok((false, format!("frame {t}: weights outside support")));
                }
                worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
            }
            draws += 1;
        }
    }
    Ok((
        worst_sum < 1e-9,
        format!("{draws} frames, max |sum - 1| {worst_sum:.1e}"),
    ))
}

fn round_trip_check() -> Result<(bool, String)> {
    let stft = Stft::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    for len in [2048, 4096, 12345] {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wave = Waveform::new(x, SAMPLE_RATE)?;
        let back = stft.synthesize(&stft.analyze(&wave)?)?;
        let err: f64 = wave
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let sig: f64 = wave.samples().iter().map(|a| a * a).sum();
        worst = worst.min(10.0 * (sig / err.max(1e-300)).log10());
    }
    Ok((worst > 60.0, format!("min SNR {worst:.1} dB")))
}

fn filterbank_check() -> Result<(bool, String)> {
    let frontend = Frontend::default();
    let bank = frontend.bank();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x: Vec<f64> = (0..6000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let wave = Waveform::new(x, SAMPLE_RATE)?;
    let (spec, feats) = frontend.analyze(&wave)?;
    let w = bank.filters();
    let mut worst: f64 = 0.0;
    for t in 0..spec.n_frames() {
        for m in 0..N_FBANK {
            let dense: f64 = spec
                .frame(t)
                .iter()
                .enumerate()
                .map(|(k, c)| w.get(m, k) * c.norm())
                .sum();
            worst = worst.max((dense - feats.values().get(t, m)).abs());
        }
    }
    let unit = GainSequence::new(Matrix::filled(spec.n_frames(), N_FBANK, 1.0))?;
    let same = apply_spectral_gain(&spec, &expand_gains(&unit, bank)?)?;
    let identity = same.cells() == spec.cells();
    Ok((
        worst < 1e-9 && identity,
        format!("max dense-oracle diff {worst:.1e}, unit gain identity {identity}"),
    ))
}

pub fn run_selftest() -> SelftestReport {
    SelftestReport {
        checks: vec![
            run("gradients", gradient_check),
            run("attention", attention_check),
            run("stft round trip", round_trip_check),
            run("filter bank", filterbank_check),
        ],
    }
}
