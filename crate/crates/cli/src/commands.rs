use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use biatt_core::data::{
    load_utterance, load_utterances, make_toy_corpus, training_examples, Manifest, SplitTag, ToyCorpusConfig, Utterance,
};
use biatt_core::dsp::{read_wav, write_matrix_csv, write_wav, Frontend, N_FBANK};
use biatt_core::enhance::Enhancer;
use biatt_core::eval::{evaluate, sweep_windows};
use biatt_core::model::{init_params, AttentionConfig, Checkpoint, ModelDims};
use biatt_core::selftest::run_selftest;
use biatt_core::training::{train, write_loss_curve, OptimizerKind, TrainConfig, TrainingExample};

use crate::args::{self, Hyper, SplitArg};

/// Bad flag combination or value; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
pub struct SelftestFailed;

impl fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("self-test failed")
    }
}

impl std::error::Error for SelftestFailed {}

#[derive(Clone, Copy, Debug)]
pub struct Ui {
    level: i8,
}

impl Ui {
    pub fn new(verbose: u8, quiet: bool) -> Self {
        Self {
            level: if quiet { -1 } else { verbose as i8 },
        }
    }

    fn info(&self, msg: impl fmt::Display) {
        if self.level >= 0 {
            println!("{msg}");
        }
    }

    fn detail(&self, msg: impl fmt::Display) {
        if self.level >= 1 {
            println!("{msg}");
        }
    }

    fn warn(&self, msg: impl fmt::Display) {
        if self.level >= 0 {
            eprintln!("warning: {msg}");
        }
    }
}

struct Settings {
    dims: ModelDims,
    train: TrainConfig,
}

impl Settings {
    fn banner(&self) -> String {
        let t = &self.train;
        let d = &self.dims;
        format!(
            "omega={} xi={} hidden={} encoder_out={} e_dim={} feature={} batch={} dropout={} epochs={} \
             optimizer={} lr={} grad_clip={} seed={}",
            t.attention.omega,
            t.attention.xi,
            d.hidden,
            d.encoder_out,
            d.e_dim,
            d.feature,
            t.batch_size,
            t.dropout_rate,
            t.epochs,
            t.optimizer,
            match t.lr_override {
                Some(lr) => lr.to_string(),
                None if t.lr_scale == 1.0 => "snr-schedule".to_string(),
                None => format!("snr-schedule*{}", t.lr_scale),
            },
            t.grad_clip_norm,
            t.seed,
        )
    }
}

fn read_config(path: Option<&Path>) -> Result<Hyper> {
    let Some(path) = path else {
        return Ok(Hyper::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

/// Flags over config file over built-in defaults.
fn settings(flags: Hyper, config: Option<&Path>, default_epochs: usize) -> Result<Settings> {
    let h = flags.or(read_config(config)?);
    let full = ModelDims::full();
    let dims = ModelDims {
        feature: N_FBANK,
        encoder_out: h.encoder_out.unwrap_or(full.encoder_out),
        hidden: h.hidden.unwrap_or(full.hidden),
        e_dim: h.e_dim.unwrap_or(full.e_dim),
    };
    dims.validate().map_err(|e| UsageError(e.to_string()))?;
    let defaults = TrainConfig::default();
    let attention = AttentionConfig {
        omega: h.omega.unwrap_or(defaults.attention.omega),
        xi: h.xi.unwrap_or(defaults.attention.xi),
    };
    let optimizer = match h.optimizer.as_deref() {
        Some(s) => s.parse::<OptimizerKind>().map_err(|e| UsageError(e.to_string()))?,
        None => defaults.optimizer,
    };
    let train = TrainConfig {
        batch_size: h.batch.unwrap_or(defaults.batch_size),
        epochs: h.epochs.unwrap_or(default_epochs),
        dropout_rate: h.dropout.unwrap_or(defaults.dropout_rate),
        grad_clip_norm: h.grad_clip.unwrap_or(defaults.grad_clip_norm),
        seed: h.seed.unwrap_or(defaults.seed),
        attention,
        optimizer,
        lr_scale: h.lr_scale.unwrap_or(defaults.lr_scale),
        lr_override: h.lr,
        patience: match h.patience {
            Some(0) => None,
            Some(p) => Some(p),
            None => defaults.patience,
        },
    };
    train.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(Settings { dims, train })
}

fn examples_for(manifest: &Manifest, tag: SplitTag) -> Result<(Vec<Utterance>, Vec<TrainingExample>)> {
    let utts = load_utterances(&manifest.with_split(tag))?;
    let ex = training_examples(&utts, &Frontend::default())?;
    Ok((utts, ex))
}

pub fn make_toy_data(a: args::MakeToyData, ui: Ui) -> Result<()> {
    let mut cfg = ToyCorpusConfig::new(a.n, a.seed);
    if let Some(snr) = a.snr {
        cfg.snr_choices = snr;
    }
    let m = make_toy_corpus(&cfg, &a.out)?;
    ui.info(format!(
        "wrote {} utterances ({} train, {} test) to {}",
        m.len(),
        m.with_split(SplitTag::Train).len(),
        m.with_split(SplitTag::Test).len(),
        a.out.join("manifest.csv").display()
    ));
    Ok(())
}

pub fn train_cmd(a: args::Train, ui: Ui) -> Result<()> {
    let s = settings(a.hyper, a.config.as_deref(), 100)?;
    ui.info(format!("train: {}", s.banner()));
    let manifest = Manifest::load(&a.manifest)?;
    let (_, train_set) = examples_for(&manifest, SplitTag::Train)?;
    if train_set.is_empty() {
        bail!(biatt_core::Error::InvalidInput(format!(
            "{} has no train rows",
            a.manifest.display()
        )));
    }
    let (_, mut val_set) = examples_for(&manifest, SplitTag::Test)?;
    if val_set.is_empty() {
        ui.warn("no test rows; validating on the training set");
        val_set = train_set.clone();
    }
    ui.detail(format!(
        "{} training / {} validation utterances",
        train_set.len(),
        val_set.len()
    ));

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let init = init_params(s.dims, s.train.seed)?;
    let attention = s.train.attention;
    let mut save_err = None;
    let out = train(&init, &train_set, &val_set, &s.train, |row, params| {
        ui.info(format!(
            "epoch {:>4}  train_mse {:.6}  val_mse {:.6}  grad_norm {:.4}",
            row.epoch, row.train_mse, row.val_mse, row.mean_grad_norm
        ));
        if a.save_every_epoch && save_err.is_none() {
            let ckpt = Checkpoint {
                params: params.clone(),
                attention,
            };
            if let Err(e) = ckpt.save(a.out_dir.join(format!("epoch_{:04}.ckpt", row.epoch))) {
                save_err = Some(e);
            }
        }
    })?;
    if let Some(e) = save_err {
        return Err(e.into());
    }
    let best_path = a.out_dir.join("best.ckpt");
    let curve_path = a.out_dir.join("loss_curve.csv");
    Checkpoint {
        params: out.best,
        attention,
    }
    .save(&best_path)?;
    write_loss_curve(&curve_path, &out.curve)?;
    match out.best_epoch {
        Some(e) => ui.info(format!("best epoch {e} (val_mse {:.6})", out.best_val_mse)),
        None => ui.info("no epochs run; checkpoint holds the initial parameters"),
    }
    ui.info(format!("wrote {} and {}", best_path.display(), curve_path.display()));
    Ok(())
}

fn side_path(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().unwrap_or_default().to_string_lossy();
    output.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn enhance_file(e: &Enhancer, input: &Path, output: &Path, attention: bool, gains: bool) -> Result<()> {
    let wave = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let out = e
        .enhance(&wave)
        .with_context(|| format!("enhancing {}", input.display()))?;
    write_wav(output, &out.output).with_context(|| format!("writing {}", output.display()))?;
    if attention {
        out.attention.write_csv(
            side_path(output, "attention_forward"),
            side_path(output, "attention_backward"),
        )?;
    }
    if gains {
        write_matrix_csv(side_path(output, "gains"), "band", out.gains.values())?;
        write_matrix_csv(side_path(output, "bin_gains"), "bin", &out.bin_gains)?;
    }
    Ok(())
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")));
    files.sort();
    Ok(files)
}

pub fn enhance_cmd(a: args::Enhance, force_attention: bool, ui: Ui) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let enhancer = Enhancer::from_checkpoint(ckpt)?;
    let attention = a.dump_attention || force_attention;
    match (a.input, a.output, a.input_dir, a.output_dir) {
        (Some(input), Some(output), None, None) => {
            enhance_file(&enhancer, &input, &output, attention, a.dump_gains)?;
            ui.info(format!("wrote {}", output.display()));
        }
        (None, None, Some(in_dir), Some(out_dir)) => {
            let files = wav_files(&in_dir)?;
            if files.is_empty() {
                ui.warn(format!("no .wav files in {}", in_dir.display()));
            }
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let results: Vec<(PathBuf, Result<()>)> = files
                .par_iter()
                .map(|f| {
                    let out = out_dir.join(f.file_name().expect("listed file"));
                    let r = enhance_file(&enhancer, f, &out, attention, a.dump_gains);
                    (out, r)
                })
                .collect();
            for (out, r) in results {
                r?;
                ui.detail(format!("wrote {}", out.display()));
            }
            ui.info(format!("enhanced {} files into {}", files.len(), out_dir.display()));
        }
        _ => {
            return Err(UsageError("use either --input/--output or --input-dir/--output-dir".into()).into());
        }
    }
    Ok(())
}

pub fn evaluate_cmd(a: args::Evaluate, ui: Ui) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let enhancer = Enhancer::from_checkpoint(ckpt)?;
    let tag = match a.split {
        SplitArg::Train => SplitTag::Train,
        SplitArg::Test => SplitTag::Test,
    };
    let manifest = Manifest::parse(&a.manifest)?.with_split(tag);
    let mut utts = Vec::new();
    let mut skipped = 0;
    for (i, e) in manifest.entries().iter().enumerate() {
        if let Some(p) = manifest.missing_file(e) {
            ui.warn(format!("skipping {} ({}): missing {}", e.id(), i + 1, p.display()));
            skipped += 1;
            continue;
        }
        match load_utterance(&manifest, e) {
            Ok(u) => utts.push(u),
            Err(err) => {
                ui.warn(format!("skipping {}: {err}", e.id()));
                skipped += 1;
            }
        }
    }
    if utts.is_empty() {
        ui.warn(format!("no usable {tag} rows; writing an empty report"));
    }
    let report = evaluate(&enhancer, &utts)?;
    report.write_csv(&a.out)?;
    for b in &report.buckets {
        ui.info(format!(
            "snr {:>5} dB  n={:<3} seg_snr {:7.3} -> {:7.3}  lsd {:7.3} -> {:7.3}",
            b.snr_db, b.count, b.seg_snr_noisy, b.seg_snr_enhanced, b.lsd_noisy, b.lsd_enhanced
        ));
    }
    if skipped > 0 {
        ui.warn(format!("skipped {skipped} row(s)"));
    }
    ui.info(format!("wrote {} ({} rows)", a.out.display(), report.rows.len()));
    Ok(())
}

pub fn selftest_cmd(ui: Ui) -> Result<()> {
    let report = run_selftest();
    if report.all_passed() {
        ui.info(&report);
        Ok(())
    } else {
        eprintln!("{report}");
        Err(SelftestFailed.into())
    }
}

pub fn sweep_cmd(a: args::Sweep, ui: Ui) -> Result<()> {
    if a.hyper.omega.is_some() || a.hyper.xi.is_some() {
        return Err(UsageError("sweep takes --omegas/--xis, not --omega/--xi".into()).into());
    }
    let s = settings(a.hyper, a.config.as_deref(), 20)?;
    ui.info(format!("sweep: omegas={:?} xis={:?} {}", a.omegas, a.xis, s.banner()));
    let manifest = Manifest::load(&a.manifest)?;
    let (_, train_set) = examples_for(&manifest, SplitTag::Train)?;
    let (mut eval_set, _) = examples_for(&manifest, SplitTag::Test)?;
    if eval_set.is_empty() {
        ui.warn("no test rows; scoring on the training set");
        eval_set = load_utterances(&manifest.with_split(SplitTag::Train))?;
    }
    if train_set.is_empty() {
        bail!(biatt_core::Error::InvalidInput(format!(
            "{} has no train rows",
            a.manifest.display()
        )));
    }
    let grid = sweep_windows(
        s.dims,
        s.train.seed,
        &train_set,
        &eval_set,
        &a.omegas,
        &a.xis,
        &s.train,
        |omega, xi, v| ui.info(format!("omega={omega:<3} xi={xi:<3} seg-SNR gain {v:.3} dB")),
    )?;
    grid.write_csv(&a.out)?;
    ui.info(format!("wrote {}", a.out.display()));
    Ok(())
}
