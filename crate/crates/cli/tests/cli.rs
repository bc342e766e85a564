//! End-to-end checks of the binary: subcommand plumbing, file artifacts,
//! and the documented exit codes (0 ok, 1 usage, 2 numeric, 3 I/O).

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn wavesep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavesep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_data_writes_split_dataset_deterministically() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let out = wavesep(&[
        "synth-data",
        "--out",
        path_str(&a),
        "--tracks",
        "7",
        "--duration",
        "2",
        "--sr",
        "4000",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(text.matches("split=train").count(), 4); // 7*0.70 -> 4
    assert_eq!(text.matches("split=valid").count(), 1); // 7*0.15 -> 1
    assert_eq!(text.matches("split=test").count(), 2); // remainder

    let set = wavesep_core_load(&a.join("tr_000"));
    assert!(set.mixture_deviation().unwrap().unwrap() <= 1e-6);

    // Same flags, second directory: byte-identical audio.
    let b = dir.path().join("b");
    let out = wavesep(&[
        "synth-data",
        "--out",
        path_str(&b),
        "--tracks",
        "7",
        "--duration",
        "2",
        "--sr",
        "4000",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(a.join("tr_003/vocals.wav")).unwrap(),
        std::fs::read(b.join("tr_003/vocals.wav")).unwrap()
    );
}

fn wavesep_core_load(dir: &Path) -> wavesep::audio::SourceSet {
    wavesep::data::load_track_dir(dir).unwrap()
}

#[test]
fn train_separate_evaluate_roundtrip() {
    let dir = TempDir::new().unwrap();
    let ds = dir.path().join("ds");
    let out = wavesep(&[
        "synth-data",
        "--out",
        path_str(&ds),
        "--tracks",
        "7",
        "--duration",
        "6",
        "--sr",
        "4000",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");

    let cfg = dir.path().join("train.cfg");
    std::fs::write(
        &cfg,
        "[training]\n\
         model = convtasnet\n\
         epochs = 1\n\
         batch_size = 2\n\
         seed = 5\n\
         [convtasnet]\n\
         frontend_channels = 8\n\
         block_channels = 8\n\
         repeats = 1\n\
         blocks_per_repeat = 2\n\
         [data]\n\
         manifest = ds/manifest.txt\n\
         extract_seconds = 2\n\
         stride_seconds = 1\n\
         crop_seconds = 1\n\
         [output]\n\
         checkpoint_dir = ckpt\n",
    )
    .unwrap();
    let out = wavesep(&["train", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let ckpt = dir.path().join("ckpt");
    assert!(ckpt.join("best.bin").exists());
    assert!(ckpt.join("log.csv").exists());

    // Resume for one more epoch appends to the log.
    let cfg2 = dir.path().join("train2.cfg");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg2, text.replace("epochs = 1", "epochs = 2")).unwrap();
    let out = wavesep(&["train", "--config", path_str(&cfg2), "--resume"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let log = std::fs::read_to_string(ckpt.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4); // header + epochs 0, 1, 2

    // Separate a test-split mixture; stems must mirror input geometry.
    let est_root = dir.path().join("est");
    let out = wavesep(&[
        "separate",
        "--model",
        "convtasnet",
        "--checkpoint",
        path_str(&ckpt.join("best")),
        "--input",
        path_str(&ds.join("tr_005/mixture.wav")),
        "--out",
        path_str(&est_root.join("tr_005")),
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let mix = wavesep::wav::load_wav(ds.join("tr_005/mixture.wav")).unwrap();
    for stem in ["drums", "bass", "other", "vocals"] {
        let w = wavesep::wav::load_wav(est_root.join(format!("tr_005/{stem}.wav"))).unwrap();
        assert_eq!(w.len(), mix.len());
        assert_eq!(w.channels(), mix.channels());
        assert_eq!(w.sample_rate(), mix.sample_rate());
    }

    // References scored as their own estimates clamp to +100 dB medians.
    let refs = dir.path().join("refs");
    std::fs::create_dir_all(&refs).unwrap();
    for t in ["tr_005", "tr_006"] {
        let target = refs.join(t);
        std::os::unix::fs::symlink(ds.join(t), &target).unwrap();
    }
    let csv = dir.path().join("perfect.csv");
    let out = wavesep(&[
        "evaluate",
        "--estimates",
        path_str(&refs),
        "--references",
        path_str(&refs),
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"sdr\": 100.0000"), "{stdout}");
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "track,source,frame_index,sdr,sir,sar");
    // 2 tracks x 4 sources x 6 one-second frames + header.
    assert_eq!(rows.lines().count(), 1 + 2 * 4 * 6);

    // Baseline flag needs no estimates directory.
    let out = wavesep(&[
        "evaluate",
        "--baseline",
        "--references",
        path_str(&refs),
        "--out",
        path_str(&dir.path().join("base.csv")),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = TempDir::new().unwrap();

    // Usage: unknown flag (clap) and unknown op name.
    let out = wavesep(&["synth-data", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
    let out = wavesep(&["grad-check", "--op", "nonsense"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("available:"));

    // Usage: config file with an unknown key names the key.
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[training]\nmodel = demucs\nbogus_key = 1\n").unwrap();
    let out = wavesep(&["train", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    // I/O: missing manifest / missing checkpoint / unreadable input.
    let cfg = dir.path().join("io.cfg");
    std::fs::write(&cfg, "[training]\nmodel = convtasnet\n[data]\nmanifest = nowhere.txt\n").unwrap();
    let out = wavesep(&["train", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 3, "{out:?}");
    let out = wavesep(&[
        "separate",
        "--model",
        "demucs",
        "--checkpoint",
        path_str(&dir.path().join("missing")),
        "--input",
        path_str(&dir.path().join("missing.wav")),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code(&out), 3, "{out:?}");

    // Help exits 0 and documents every flag of a subcommand.
    let out = wavesep(&["separate", "--help"]);
    assert_eq!(code(&out), 0);
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--model", "--checkpoint", "--input", "--out", "--shifts", "--max-shift", "--seed", "--config", "--threads"] {
        assert!(help.contains(flag), "help missing {flag}");
    }
}
