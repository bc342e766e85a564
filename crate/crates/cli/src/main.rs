//! Operator-facing command line: dataset synthesis, training, separation,
//! evaluation, and gradient verification.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 numeric failure
//! (non-finite values, failed gradient check), 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wavesep::audio::{SourceSet, SOURCE_NAMES};
use wavesep::config::{ModelKind, TrainConfig};
use wavesep::data::{self, DatasetManifest, Split, TrackEntry, TrackSource};
use wavesep::error::{Error, Result};
use wavesep::gradcheck;
use wavesep::inference;
use wavesep::metrics::{evaluate_track, EvalReport};
use wavesep::synth::synth_track;
use wavesep::train::{self, AnyModel};
use wavesep::wav::{load_wav, save_wav, WavEncoding};

/// Pass threshold for every gradient check.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "wavesep",
    version,
    about = "Waveform-domain music source separation toolkit"
)]
struct Cli {
    /// Worker threads for batch gradient computation (0 = config value,
    /// which itself defaults to auto-detect).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-stem dataset directory plus manifest.
    SynthData {
        /// Output directory (one subdirectory per track + manifest.txt).
        #[arg(long)]
        out: PathBuf,
        /// Number of tracks; split 70/15/15 train/valid/test by order.
        #[arg(long, default_value_t = 20)]
        tracks: usize,
        /// Track duration in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        /// Sample rate in Hz.
        #[arg(long = "sr", default_value_t = 8000)]
        sample_rate: u32,
        /// Base seed; track i uses seed+i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generate mono tracks instead of stereo.
        #[arg(long, default_value_t = false)]
        mono: bool,
    },
    /// Train a model from a config file; writes checkpoints and a CSV log.
    Train {
        /// Training config file (sections: training, data, augment, output,
        /// demucs, convtasnet).
        #[arg(long)]
        config: PathBuf,
        /// Continue from the last checkpoint in the output directory.
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Separate a mixture WAV into four stem WAVs.
    Separate {
        /// Model kind: demucs | convtasnet.
        #[arg(long)]
        model: String,
        /// Checkpoint base path (e.g. ckpt/best).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input mixture WAV.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for drums/bass/other/vocals.wav.
        #[arg(long)]
        out: PathBuf,
        /// Shift-stabilization passes; 0 = plain single pass.
        #[arg(long, default_value_t = 0)]
        shifts: usize,
        /// Maximum random shift in seconds when stabilizing.
        #[arg(long, default_value_t = 0.5)]
        max_shift: f64,
        /// Seed for the stabilization shifts.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional config file whose model section overrides the
        /// architecture (must match --model).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score estimated stems against references (SDR/SIR/SAR medians).
    Evaluate {
        /// Directory of per-track estimate directories (four stem WAVs each).
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Directory of per-track reference directories (stems + mixture).
        #[arg(long)]
        references: PathBuf,
        /// Output CSV path (track,source,frame_index,sdr,sir,sar).
        #[arg(long)]
        out: PathBuf,
        /// Score the mixture itself as the estimate for every source.
        #[arg(long, default_value_t = false)]
        baseline: bool,
        /// Evaluation frame length in seconds.
        #[arg(long, default_value_t = 1.0)]
        frame_seconds: f64,
        /// Hop between frames in seconds.
        #[arg(long, default_value_t = 1.0)]
        hop_seconds: f64,
        /// Optional path for the structured-text summary (also printed).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    GradCheck {
        /// Check a single operator by name (default: all operators).
        #[arg(long)]
        op: Option<String>,
        /// Also check full models: accepts 'desk' (both architectures).
        #[arg(long)]
        model: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads;
    match run(cli.command, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numeric(_) => 2,
                Error::Io(_) => 3,
                _ => 1,
            })
        }
    }
}

fn run(command: Command, threads: usize) -> Result<()> {
    match command {
        Command::SynthData {
            out,
            tracks,
            duration,
            sample_rate,
            seed,
            mono,
        } => cmd_synth_data(&out, tracks, duration, sample_rate, seed, !mono),
        Command::Train { config, resume } => cmd_train(&config, resume, threads),
        Command::Separate {
            model,
            checkpoint,
            input,
            out,
            shifts,
            max_shift,
            seed,
            config,
        } => cmd_separate(
            &model,
            &checkpoint,
            &input,
            &out,
            shifts,
            max_shift,
            seed,
            config.as_deref(),
        ),
        Command::Evaluate {
            estimates,
            references,
            out,
            baseline,
            frame_seconds,
            hop_seconds,
            summary,
        } => cmd_evaluate(
            estimates.as_deref(),
            &references,
            &out,
            baseline,
            frame_seconds,
            hop_seconds,
            summary.as_deref(),
        ),
        Command::GradCheck { op, model } => cmd_grad_check(op.as_deref(), model.as_deref()),
    }
}

/// 70/15/15 by track order, truncating; the remainder goes to test.
fn split_for(index: usize, tracks: usize) -> Split {
    let train = tracks * 70 / 100;
    let valid = tracks * 15 / 100;
    if index < train {
        Split::Train
    } else if index < train + valid {
        Split::Valid
    } else {
        Split::Test
    }
}

fn cmd_synth_data(
    out: &Path,
    tracks: usize,
    duration: f64,
    sample_rate: u32,
    seed: u64,
    stereo: bool,
) -> Result<()> {
    if tracks == 0 {
        return Err(Error::arg("--tracks must be at least 1"));
    }
    std::fs::create_dir_all(out)?;
    let mut manifest = DatasetManifest::new();
    for i in 0..tracks {
        let id = format!("tr_{i:03}");
        let set = synth_track(seed.wrapping_add(i as u64), duration, sample_rate, stereo)?;
        data::save_track_dir(&set, &out.join(&id), WavEncoding::Float32)?;
        manifest.entries.push(TrackEntry {
            id: id.clone(),
            split: split_for(i, tracks),
            source: TrackSource::Dir(PathBuf::from(&id)),
            duration_s: duration,
            sample_rate,
            channels: if stereo { 2 } else { 1 },
        });
    }
    let manifest_path = out.join("manifest.txt");
    manifest.save(&manifest_path)?;
    let counts = (
        manifest.split(Split::Train).len(),
        manifest.split(Split::Valid).len(),
        manifest.split(Split::Test).len(),
    );
    println!(
        "wrote {} tracks ({} train / {} valid / {} test) to {}",
        tracks,
        counts.0,
        counts.1,
        counts.2,
        out.display()
    );
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

/// Relative paths in a config file resolve against the file's directory.
fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn cmd_train(config: &Path, resume: bool, threads: usize) -> Result<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Error::io(format!("reading {}: {e}", config.display())))?;
    let mut cfg = TrainConfig::from_text(&text)?;
    if let Some(dir) = config.parent() {
        rebase(&mut cfg.manifest, dir);
        rebase(&mut cfg.checkpoint_dir, dir);
    }
    if threads > 0 {
        cfg.threads = threads;
    }
    let outcome = train::train(&cfg, resume)?;
    println!(
        "trained {} epochs: best valid L1 {:.6}, final valid L1 {:.6}",
        outcome.epochs_run, outcome.best_valid_l1, outcome.final_valid_l1
    );
    println!("best checkpoint: {}", outcome.best_path.display());
    println!("last checkpoint: {}", outcome.last_path.display());
    println!("log: {}", outcome.log_path.display());
    Ok(())
}

fn build_model(kind: ModelKind, config: Option<&Path>) -> Result<(AnyModel, TrainConfig)> {
    let cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading {}: {e}", path.display())))?;
            let cfg = TrainConfig::from_text(&text)?;
            if cfg.model != kind {
                return Err(Error::config(format!(
                    "--model {} but config file declares {}",
                    kind.as_str(),
                    cfg.model.as_str()
                )));
            }
            cfg
        }
        None => TrainConfig::desk(kind),
    };
    let model = AnyModel::build(&cfg)?;
    Ok((model, cfg))
}

#[allow(clippy::too_many_arguments)]
fn cmd_separate(
    model_name: &str,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    shifts: usize,
    max_shift: f64,
    seed: u64,
    config: Option<&Path>,
) -> Result<()> {
    let kind = ModelKind::parse(model_name)?;
    let (model, _cfg) = build_model(kind, config)?;
    train::load_model_values(checkpoint, &model)?;
    let x = load_wav(input)?;
    let stems = if shifts == 0 {
        inference::separate_plain(&model, &x)?
    } else {
        inference::shift_stabilize(&model, &x, shifts, max_shift, seed)?
    };
    std::fs::create_dir_all(out)?;
    for (name, wave) in stems.stems() {
        let path = out.join(format!("{name}.wav"));
        save_wav(wave, &path, WavEncoding::Float32)?;
        println!("{}", path.display());
    }
    Ok(())
}

/// Track directories sorted by name; every subdirectory counts as a track.
fn track_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut dirs = Vec::new();
    let entries = std::fs::read_dir(root)
        .map_err(|e| Error::io(format!("reading {}: {e}", root.display())))?;
    for entry in entries {
        let entry = entry?;
        if entry.path().is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::arg(format!(
            "no track directories under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

/// Loads the four canonical stems from a directory of estimate WAVs
/// (no mixture file required).
fn load_estimates(dir: &Path) -> Result<SourceSet> {
    let mut set = SourceSet::new();
    for name in SOURCE_NAMES {
        let path = dir.join(format!("{name}.wav"));
        if !path.exists() {
            return Err(Error::io(format!(
                "missing estimate file '{name}.wav' in {}",
                dir.display()
            )));
        }
        set.push(name, load_wav(&path)?)?;
    }
    Ok(set)
}

/// The input-as-estimate baseline: every source estimated by the mixture.
fn mixture_as_estimates(references: &SourceSet) -> Result<SourceSet> {
    let mixture = references.mixture()?;
    let mut set = SourceSet::new();
    for name in references.names() {
        set.push(name, mixture.clone())?;
    }
    Ok(set)
}

fn cmd_evaluate(
    estimates: Option<&Path>,
    references: &Path,
    out: &Path,
    baseline: bool,
    frame_seconds: f64,
    hop_seconds: f64,
    summary: Option<&Path>,
) -> Result<()> {
    if estimates.is_none() && !baseline {
        return Err(Error::arg("need --estimates DIR or --baseline"));
    }
    let mut report = EvalReport {
        tracks: Vec::new(),
        frame_seconds,
        hop_seconds,
    };
    for (name, ref_dir) in track_dirs(references)? {
        let refs = data::load_track_dir(&ref_dir)?;
        let est = if baseline {
            mixture_as_estimates(&refs)?
        } else {
            load_estimates(&estimates.unwrap().join(&name))?
        };
        report
            .tracks
            .push(evaluate_track(&name, &est, &refs, frame_seconds, hop_seconds)?);
    }
    report.write_csv(out)?;
    let text = report.summary();
    if let Some(path) = summary {
        report.write_summary(path)?;
    }
    print!("{text}");
    println!("report: {}", out.display());
    Ok(())
}

/// Directional finite-difference check of a full model at desk scale.
fn check_desk_model(kind: ModelKind, input_len: usize, seed: u64) -> Result<f64> {
    let cfg = TrainConfig::desk(kind);
    let model = AnyModel::build(&cfg)?;
    gradcheck::check_model_gradients(&model, input_len, 3, GRAD_TOLERANCE, seed)
}

fn cmd_grad_check(op: Option<&str>, model: Option<&str>) -> Result<()> {
    let mut results: Vec<(String, f64)> = Vec::new();

    let run_ops = model.is_none() || op.is_some();
    if run_ops {
        let suite = gradcheck::run_standard_suite()?;
        match op {
            Some(name) => {
                let found: Vec<_> = suite.iter().filter(|(n, _)| n == name).cloned().collect();
                if found.is_empty() {
                    let names: Vec<&str> = suite.iter().map(|(n, _)| n.as_str()).collect();
                    return Err(Error::arg(format!(
                        "unknown op '{name}'; available: {}",
                        names.join(", ")
                    )));
                }
                results.extend(found);
            }
            None => results.extend(suite),
        }
    }
    if let Some(m) = model {
        if m != "desk" {
            return Err(Error::arg(format!("unknown model '{m}'; available: desk")));
        }
        results.push((
            "demucs desk (directional)".into(),
            check_desk_model(ModelKind::Demucs, 1024, 0xD0)?,
        ));
        results.push((
            "convtasnet desk (directional)".into(),
            check_desk_model(ModelKind::ConvTasnet, 1000, 0xC0)?,
        ));
    }

    let mut failures = 0;
    for (name, err) in &results {
        let pass = err.is_finite() && *err <= GRAD_TOLERANCE;
        if !pass {
            failures += 1;
        }
        println!(
            "{:<32} {:>12.3e}  {}",
            name,
            err,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{} checks, {} failed (tolerance {GRAD_TOLERANCE:.0e})",
        results.len(),
        failures
    );
    if failures > 0 {
        return Err(Error::numeric(format!("{failures} gradient checks failed")));
    }
    Ok(())
}
