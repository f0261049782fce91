use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biatt_core::dsp::{read_wav, write_wav, Waveform};
use biatt_core::model::{init_params, AttentionConfig, Checkpoint, ModelDims};

fn biatt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biatt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn biatt")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join("corpus");
    let o = biatt(
        &[
            "make-toy-data",
            "--n",
            &n.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            "corpus",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("manifest.csv")
}

const TINY: [&str; 6] = ["--hidden", "6", "--encoder-out", "6", "--e-dim", "6"];

fn tiny_checkpoint(dir: &Path, feature: usize) -> PathBuf {
    let dims = ModelDims {
        feature,
        encoder_out: 6,
        hidden: 6,
        e_dim: 6,
    };
    let p = dir.join(format!("tiny{feature}.ckpt"));
    Checkpoint {
        params: init_params(dims, 3).unwrap(),
        attention: AttentionConfig::default(),
    }
    .save(&p)
    .unwrap();
    p
}

#[test]
fn make_toy_data_rows_and_reproducibility() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = toy(a.path(), 50, 4);
    let mb = toy(b.path(), 50, 4);
    let text = fs::read_to_string(&ma).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text, fs::read_to_string(&mb).unwrap());
    for f in ["clean_0049.wav", "noisy_0017.wav"] {
        assert_eq!(
            fs::read(a.path().join("corpus").join(f)).unwrap(),
            fs::read(b.path().join("corpus").join(f)).unwrap()
        );
    }
}

#[test]
fn make_toy_data_unwritable_dir() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), b"x").unwrap();
    let o = biatt(&["make-toy-data", "--n", "3", "--out", "blocker/corpus"], dir.path());
    assert_ne!(code(&o), 0);
    assert!(!dir.path().join("blocker/corpus/manifest.csv").exists());
}

#[test]
fn train_defaults_banner_and_zero_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 3, 1);
    let o = biatt(
        &[
            "train",
            "--manifest",
            m.to_str().unwrap(),
            "--out-dir",
            "run",
            "--epochs",
            "0",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let banner = stdout(&o);
    for needle in [
        "omega=15",
        "xi=5",
        "hidden=350",
        "batch=96",
        "feature=42",
        "dropout=0.2",
    ] {
        assert!(banner.contains(needle), "{needle} missing from {banner}");
    }
    let ckpt = Checkpoint::load(dir.path().join("run/best.ckpt")).unwrap();
    assert_eq!(
        ckpt.params.tensors(),
        init_params(ModelDims::full(), 0).unwrap().tensors()
    );
    assert_eq!(ckpt.attention, AttentionConfig { omega: 15, xi: 5 });
    let curve = fs::read_to_string(dir.path().join("run/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn train_writes_one_curve_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 4, 2);
    let mut args = vec![
        "train",
        "--manifest",
        m.to_str().unwrap(),
        "--out-dir",
        "run",
        "--epochs",
        "3",
    ];
    args.extend(["--patience", "0", "--save-every-epoch", "-q"]);
    args.extend(TINY);
    let o = biatt(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let curve = fs::read_to_string(dir.path().join("run/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(dir.path().join("run/epoch_0003.ckpt").is_file());
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 3, 3);
    fs::write(dir.path().join("cfg.toml"), "hidden = 9\nomega = 4\nepochs = 0\n").unwrap();
    let base = [
        "train",
        "--manifest",
        m.to_str().unwrap(),
        "--out-dir",
        "run",
        "--config",
        "cfg.toml",
    ];
    let o = biatt(&base, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("hidden=9") && stdout(&o).contains("omega=4"));
    let mut with_flag = base.to_vec();
    with_flag.extend(["--hidden", "7"]);
    let o = biatt(&with_flag, dir.path());
    assert!(stdout(&o).contains("hidden=7") && stdout(&o).contains("omega=4"));

    fs::write(dir.path().join("bad.toml"), "hiden = 9\n").unwrap();
    let o = biatt(
        &[
            "train",
            "--manifest",
            m.to_str().unwrap(),
            "--out-dir",
            "run",
            "--config",
            "bad.toml",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn corrupt_manifest_reports_row() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 3, 5);
    let text = fs::read_to_string(&m).unwrap().replacen(",train", ",holdout", 1);
    fs::write(&m, text).unwrap();
    let o = biatt(
        &["train", "--manifest", m.to_str().unwrap(), "--out-dir", "run"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row"), "{}", stderr(&o));
}

#[test]
fn enhance_preserves_length_and_suppresses() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 2, 7);
    let ckpt = tiny_checkpoint(dir.path(), 42);
    let input = dir.path().join("corpus/noisy_0000.wav");
    let o = biatt(
        &[
            "enhance",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--output",
            "out.wav",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let x = read_wav(&input).unwrap();
    let y = read_wav(dir.path().join("out.wav")).unwrap();
    assert_eq!(x.len(), y.len());
    assert!(y.rms() <= x.rms());
    assert!(!dir.path().join("out.attention_forward.csv").exists());
}

#[test]
fn dump_attention_alias_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 2, 8);
    let ckpt = tiny_checkpoint(dir.path(), 42);
    let input = dir.path().join("corpus/noisy_0001.wav");
    let o = biatt(
        &[
            "dump-attention",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--output",
            "a.wav",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fwd = fs::read_to_string(dir.path().join("a.attention_forward.csv")).unwrap();
    let bwd = fs::read_to_string(dir.path().join("a.attention_backward.csv")).unwrap();
    assert_eq!(fwd.lines().next().unwrap().split(',').count(), 17);
    assert_eq!(bwd.lines().next().unwrap().split(',').count(), 7);
    assert_eq!(fwd.lines().count(), bwd.lines().count());
}

#[test]
fn enhance_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let good = tiny_checkpoint(dir.path(), 42);
    let wrong_dims = tiny_checkpoint(dir.path(), 40);
    let w16 = dir.path().join("a.wav");
    write_wav(&w16, &Waveform::new(vec![0.1; 4000], 16_000).unwrap()).unwrap();
    let w8 = dir.path().join("b.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&w8, spec).unwrap();
    for _ in 0..4000 {
        w.write_sample(3000i16).unwrap();
    }
    w.finalize().unwrap();

    let run = |ckpt: &Path, input: &Path| {
        code(&biatt(
            &[
                "enhance",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--input",
                input.to_str().unwrap(),
                "--output",
                "o.wav",
            ],
            dir.path(),
        ))
    };
    assert_eq!(run(&good, &w8), 2);
    assert_eq!(run(&wrong_dims, &w16), 2);
    assert_eq!(run(&good, &w16), 0);

    let both = biatt(
        &[
            "enhance",
            "--checkpoint",
            good.to_str().unwrap(),
            "--input",
            "a.wav",
            "--output",
            "o.wav",
            "--input-dir",
            ".",
        ],
        dir.path(),
    );
    assert_eq!(code(&both), 1);
    let neither = biatt(&["enhance", "--checkpoint", good.to_str().unwrap()], dir.path());
    assert_eq!(code(&neither), 1);
}

#[test]
fn enhance_directory_mode() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 3, 9);
    let ckpt = tiny_checkpoint(dir.path(), 42);
    let o = biatt(
        &[
            "enhance",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input-dir",
            "corpus",
            "--output-dir",
            "enh",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..3 {
        let name = format!("noisy_{i:04}.wav");
        let x = read_wav(dir.path().join("corpus").join(&name)).unwrap();
        let y = read_wav(dir.path().join("enh").join(&name)).unwrap();
        assert_eq!(x.len(), y.len());
    }
    assert_eq!(fs::read_dir(dir.path().join("enh")).unwrap().count(), 9);
}

#[test]
fn evaluate_buckets_match_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 20, 10);
    let ckpt = tiny_checkpoint(dir.path(), 42);
    let o = biatt(
        &[
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            m.to_str().unwrap(),
            "--out",
            "r.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(&m).unwrap();
    let mut want: Vec<f64> = manifest
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",test"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    want.sort_by(f64::total_cmp);
    want.dedup();
    let report = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let got: Vec<f64> = rows
        .iter()
        .filter(|r| r[0] == "bucket")
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert_eq!(got, want);
    for b in rows.iter().filter(|r| r[0] == "bucket") {
        let members: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == "utterance" && r[2] == b[2]).collect();
        assert_eq!(members.len().to_string(), b[3]);
        for col in 4..8 {
            let mean = members.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / members.len() as f64;
            assert!((mean - b[col].parse::<f64>().unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn evaluate_empty_split_and_missing_reference() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 5, 11);
    let ckpt = tiny_checkpoint(dir.path(), 42);
    let only_train: String = fs::read_to_string(&m).unwrap().replace(",test", ",train");
    let train_manifest = dir.path().join("corpus/train_only.csv");
    fs::write(&train_manifest, only_train).unwrap();
    let o = biatt(
        &[
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            train_manifest.to_str().unwrap(),
            "--out",
            "e.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert_eq!(fs::read_to_string(dir.path().join("e.csv")).unwrap().lines().count(), 1);

    let o = biatt(
        &[
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            m.to_str().unwrap(),
            "--split",
            "train",
            "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let full = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let n_train = full.lines().filter(|l| l.starts_with("utterance")).count();
    let victim = fs::read_to_string(&m)
        .unwrap()
        .lines()
        .find(|l| l.ends_with(",train"))
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .to_string();
    fs::remove_file(dir.path().join("corpus").join(victim)).unwrap();
    let o = biatt(
        &[
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            m.to_str().unwrap(),
            "--split",
            "train",
            "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("skipped 1 row"), "{}", stderr(&o));
    let after = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(
        after.lines().filter(|l| l.starts_with("utterance")).count(),
        n_train - 1
    );
}

#[test]
fn sweep_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 4, 12);
    let mut args = vec![
        "sweep",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        "g.csv",
        "--epochs",
        "1",
    ];
    args.extend(["--omegas", "0,3", "--xis", "0,1,2"]);
    args.extend(TINY);
    let o = biatt(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let grid = fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "omega,xi=0,xi=1,xi=2");
    assert_eq!(lines.len(), 3);

    let o = biatt(
        &[
            "sweep",
            "--manifest",
            m.to_str().unwrap(),
            "--out",
            "g.csv",
            "--omega",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = biatt(&["selftest"], dir.path());
    if cfg!(feature = "inject-grad-fault") {
        assert_eq!(code(&o), 3);
    } else {
        assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("0 failed"));
    }
}

#[test]
fn help_and_unknown_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&biatt(&["--help"], dir.path())), 0);
    assert_eq!(code(&biatt(&["selftest", "--frobnicate"], dir.path())), 1);
    assert_eq!(code(&biatt(&[], dir.path())), 1);
}
