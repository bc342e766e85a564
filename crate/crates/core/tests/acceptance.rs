//! Exit-gate acceptance suite. Nine numbered checks, each printing exactly
//! one `criterion N … PASS/FAIL` line before asserting. Trained models and
//! evaluation reports are built once and shared; tests hold only plain data
//! (parameter snapshots, reports), so any execution order works.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use wavesep::adjoint;
use wavesep::audio::{SourceSet, SOURCE_NAMES};
use wavesep::config::{LossKind, ModelKind, TrainConfig};
use wavesep::convtasnet::{self, ConvTasnetModel, ConvTasnetSpec};
use wavesep::data::{self, synthetic_manifest, AugmentConfig, SamplerConfig, Split};
use wavesep::demucs::{DemucsModel, DemucsSpec};
use wavesep::error::Result;
use wavesep::gradcheck;
use wavesep::inference;
use wavesep::metrics::{self, evaluate_track, EvalReport, Metric};
use wavesep::ops::PadMode;
use wavesep::oracles;
use wavesep::synth::synth_track;
use wavesep::tensor::{Graph, Tensor};
use wavesep::train::{self, AnyModel};
use wavesep::wav::WavEncoding;

/// Epochs for the in-suite training runs. The masking network trains at its
/// full 20-epoch default; the U-net gets a reduced count and a raised
/// learning rate (it spends several epochs on a loss plateau before
/// escaping) sized so one run stays inside the 30-minute budget on a
/// single core.
const CONVTASNET_EPOCHS: usize = 20;
const DEMUCS_EPOCHS: usize = 12;
const DEMUCS_LR: f64 = 1e-3;

fn report_line(id: &str, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id} [{name}]: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

struct Trained {
    cfg: TrainConfig,
    values: Vec<Vec<f64>>,
    wall_seconds: f64,
    epoch0_valid: f64,
    final_valid: f64,
}

impl Trained {
    fn model(&self) -> AnyModel {
        AnyModel::build_with_values(&self.cfg, &self.values).unwrap()
    }
}

struct Fixtures {
    _dir: TempDir,
    test_refs: Vec<(String, SourceSet)>,
    demucs: Trained,
    convtasnet: Trained,
    baseline: EvalReport,
    demucs_plain: EvalReport,
    convtasnet_plain: EvalReport,
    irm: EvalReport,
}

static FIXTURES: OnceLock<Fixtures> = OnceLock::new();

fn parse_epoch0_valid(log_path: &Path) -> f64 {
    let text = std::fs::read_to_string(log_path).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] == "0" {
            return fields[2].parse().unwrap();
        }
    }
    panic!("no epoch-0 row in {}", log_path.display());
}

fn train_one(mut cfg: TrainConfig, dir: &Path) -> Trained {
    cfg.checkpoint_dir = dir.to_path_buf();
    let start = Instant::now();
    let outcome = train::train(&cfg, false).unwrap();
    let wall_seconds = start.elapsed().as_secs_f64();
    let model = AnyModel::build(&cfg).unwrap();
    train::load_model_values(&outcome.best_path, &model).unwrap();
    Trained {
        epoch0_valid: parse_epoch0_valid(&outcome.log_path),
        final_valid: outcome.final_valid_l1,
        values: model.snapshot(),
        wall_seconds,
        cfg,
    }
}

/// Mixture-as-estimate: every source estimated by the mixture itself.
fn mixture_estimates(refs: &SourceSet) -> SourceSet {
    let mixture = refs.mixture().unwrap();
    let mut set = SourceSet::new();
    for name in refs.names() {
        set.push(name, mixture.clone()).unwrap();
    }
    set
}

fn report_over<F>(test_refs: &[(String, SourceSet)], mut estimate: F) -> EvalReport
where
    F: FnMut(&str, &SourceSet) -> SourceSet,
{
    let mut report = EvalReport {
        tracks: Vec::new(),
        frame_seconds: 1.0,
        hop_seconds: 1.0,
    };
    for (id, refs) in test_refs {
        let est = estimate(id, refs);
        report
            .tracks
            .push(evaluate_track(id, &est, refs, 1.0, 1.0).unwrap());
    }
    report
}

fn fixtures() -> &'static Fixtures {
    FIXTURES.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let manifest = synthetic_manifest(0xD5, (12, 4, 4), 30.0, 8000, true);
        let manifest_path = dir.path().join("manifest.txt");
        manifest.save(&manifest_path).unwrap();
        let test_refs: Vec<(String, SourceSet)> = manifest
            .split(Split::Test)
            .iter()
            .map(|e| (e.id.clone(), e.load().unwrap()))
            .collect();

        let mut dm_cfg = TrainConfig::desk(ModelKind::Demucs);
        dm_cfg.epochs = DEMUCS_EPOCHS;
        dm_cfg.learning_rate = DEMUCS_LR;
        dm_cfg.seed = 0x7A;
        dm_cfg.manifest = manifest_path.clone();
        let demucs = train_one(dm_cfg, &dir.path().join("dm"));

        let mut ct_cfg = TrainConfig::desk(ModelKind::ConvTasnet);
        ct_cfg.epochs = CONVTASNET_EPOCHS;
        ct_cfg.seed = 0x7A;
        ct_cfg.manifest = manifest_path.clone();
        let convtasnet = train_one(ct_cfg, &dir.path().join("ct"));

        let baseline = report_over(&test_refs, |_, refs| mixture_estimates(refs));
        let dm = demucs.model();
        let demucs_plain = report_over(&test_refs, |_, refs| {
            inference::separate_plain(&dm, &refs.mixture().unwrap()).unwrap()
        });
        let ct = convtasnet.model();
        let convtasnet_plain = report_over(&test_refs, |_, refs| {
            inference::separate_plain(&ct, &refs.mixture().unwrap()).unwrap()
        });
        let irm = report_over(&test_refs, |_, refs| {
            oracles::ideal_ratio_mask(
                &refs.mixture().unwrap(),
                refs,
                oracles::DEFAULT_WINDOW,
                oracles::DEFAULT_HOP,
            )
            .unwrap()
        });

        Fixtures {
            _dir: dir,
            test_refs,
            demucs,
            convtasnet,
            baseline,
            demucs_plain,
            convtasnet_plain,
            irm,
        }
    })
}

fn median_sdr(report: &EvalReport, source: &str) -> f64 {
    report.global_median(source, Metric::Sdr).unwrap()
}

fn mean_source_sdr(report: &EvalReport) -> f64 {
    SOURCE_NAMES
        .iter()
        .map(|s| median_sdr(report, s))
        .sum::<f64>()
        / SOURCE_NAMES.len() as f64
}

#[test]
fn c1_gradient_suite() {
    let start = Instant::now();
    let suite = gradcheck::run_standard_suite().unwrap();
    let worst_op = suite
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let dm = AnyModel::build(&TrainConfig::desk(ModelKind::Demucs)).unwrap();
    let dm_err = gradcheck::check_model_gradients(&dm, 1024, 3, 1e-4, 0xD0).unwrap();
    let ct = AnyModel::build(&TrainConfig::desk(ModelKind::ConvTasnet)).unwrap();
    let ct_err = gradcheck::check_model_gradients(&ct, 1000, 3, 1e-4, 0xC0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = suite.iter().all(|(_, e)| *e <= 1e-4)
        && dm_err <= 1e-4
        && ct_err <= 1e-4
        && elapsed <= 300.0;
    report_line(
        "1",
        "gradient suite",
        pass,
        &format!(
            "{} ops worst {} {:.2e}; desk u-net {dm_err:.2e}, desk masking {ct_err:.2e}; {elapsed:.1}s (limit 300s)",
            suite.len(),
            worst_op.0,
            worst_op.1
        ),
    );
    assert!(pass);
}

#[test]
fn c2_adjoint_suite() {
    let cases = adjoint::run_adjoint_suite(100, 0xAD).unwrap();
    let worst = cases
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .unwrap();
    let bwd = adjoint::conv_transpose_matches_backward_data(100, 0xAD).unwrap();
    let pass = cases.iter().all(|c| c.rel_err <= 1e-6) && bwd <= 1e-6;
    report_line(
        "2",
        "adjoint suite",
        pass,
        &format!(
            "{} operators x 100 instances, worst {} {:.2e}; transpose-vs-backward {bwd:.2e}",
            cases.len(),
            worst.name,
            worst.rel_err
        ),
    );
    assert!(pass);
}

#[test]
fn c3_init_rescaling() {
    let spec = DemucsSpec::default();
    let raw = DemucsModel::<f64>::new_unscaled(spec, 5).unwrap();
    let scaled = DemucsModel::<f64>::new(spec, 5).unwrap();
    let a = spec.rescale;

    // Black-box property: every tensor the constructor rescales must obey
    // std(w') = sqrt(a·std(w)); unrescaled tensors must be untouched.
    let mut rescaled_count = 0usize;
    let mut worst_rel: f64 = 0.0;
    for ((name, before), (_, after)) in raw.params().iter().zip(scaled.params().iter()) {
        let sb = std_of(&before.to_vec());
        let sa = std_of(&after.to_vec());
        if (sb - sa).abs() <= 1e-15 {
            continue; // untouched (biases)
        }
        rescaled_count += 1;
        let expected = (a * sb).sqrt();
        worst_rel = worst_rel.max((sa - expected).abs() / expected);
        assert!(
            name.ends_with(".weight"),
            "rescaled a non-weight tensor: {name}"
        );
    }

    // Directional consequence: without rescaling, late features shrink
    // relative to early ones; rescaling improves that ratio at least 4x.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Tensor::uniform(&[1, 2, 8000], -0.5, 0.5, &mut rng);
    let ratio = |m: &DemucsModel<f64>| -> f64 {
        let g = Graph::new();
        let mut stats = Vec::new();
        m.forward_with_stats(&g, &x, &mut stats).unwrap();
        stats.last().unwrap() / stats.first().unwrap()
    };
    let ratio_raw = ratio(&raw);
    let ratio_scaled = ratio(&scaled);
    let improvement = ratio_scaled / ratio_raw;

    let pass = rescaled_count > 0 && worst_rel <= 1e-6 && improvement >= 4.0;
    report_line(
        "3",
        "init rescaling",
        pass,
        &format!(
            "{rescaled_count} tensors, worst std relation err {worst_rel:.2e}; feature-std ratio {ratio_raw:.4} -> {ratio_scaled:.4} ({improvement:.1}x, need >=4x)"
        ),
    );
    assert!(pass);
}

fn std_of(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn c4_equivariance_and_stabilization() {
    // Architectural half: the masking network with circular padding commutes
    // with stride-multiple circular shifts; the u-net does not.
    let ct = ConvTasnetModel::<f64>::new(ConvTasnetSpec::desk(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f64>::uniform(&[1, 2, 2000], -0.5, 0.5, &mut rng);
    let ct_fwd = |inp: &Tensor<f64>| {
        let g = Graph::new();
        ct.forward_mode(&g, inp, PadMode::Circular)
    };
    let stride = ConvTasnetSpec::desk().frontend_stride;
    let ct_dev = [1usize, 3, 17]
        .iter()
        .map(|m| convtasnet::equivariance_deviation(ct_fwd, &x, m * stride).unwrap())
        .fold(0.0f64, f64::max);

    let dm = DemucsModel::<f64>::new(DemucsSpec::default(), 7).unwrap();
    let dm_fwd = |inp: &Tensor<f64>| {
        let g = Graph::new();
        dm.forward(&g, inp)
    };
    let dm_dev = convtasnet::equivariance_deviation(dm_fwd, &x, 3 * stride).unwrap();

    // Behavioral half: randomized shift averaging may not lose more than
    // 0.05 dB against the plain forward pass of the trained u-net.
    let f = fixtures();
    let model = f.demucs.model();
    let stabilized = report_over(&f.test_refs, |_, refs| {
        inference::shift_stabilize(&model, &refs.mixture().unwrap(), 10, 0.5, 0xB0).unwrap()
    });
    let plain_sdr = mean_source_sdr(&f.demucs_plain);
    let stab_sdr = mean_source_sdr(&stabilized);

    let pass = ct_dev <= 1e-4 && dm_dev > ct_dev && stab_sdr >= plain_sdr - 0.05;
    report_line(
        "4",
        "equivariance",
        pass,
        &format!(
            "masking circular dev {ct_dev:.2e} (<=1e-4); u-net dev {dm_dev:.2e} (recorded, larger); stabilized SDR {stab_sdr:.3} vs plain {plain_sdr:.3} dB"
        ),
    );
    assert!(pass);
}

#[test]
fn c5_metrics_oracle_equivalence() {
    // Projection decomposition vs an independent modified-Gram-Schmidt
    // projector on 1000 random 4-source instances.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5D);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 64;
        let refs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let est: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ref_slices: Vec<&[f64]> = refs.iter().map(|r| r.as_slice()).collect();
        let d = metrics::decompose(&est, &ref_slices, 0).unwrap();
        let via_gram: Vec<f64> = d
            .s_target
            .iter()
            .zip(&d.e_interf)
            .map(|(t, i)| t + i)
            .collect();
        let oracle = metrics::project_span_gram_schmidt(&est, &ref_slices).unwrap();
        let scale = oracle
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        for (a, b) in via_gram.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / scale);
        }
    }

    // Hand-computable ratio cases, exact to rounding.
    let d_equal = metrics::Decomposition {
        s_target: vec![1.0, 1.0],
        e_interf: vec![1.0, -1.0],
        e_artif: vec![0.0, 0.0],
    };
    let sir0 = metrics::sir(&d_equal); // equal powers → 0 dB
    let d_clean = metrics::decompose(&[2.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], 0).unwrap();
    let sdr_clean = metrics::sdr(&d_clean); // exact scaled copy → clamp
    let d_tenth = metrics::Decomposition {
        s_target: vec![1.0, 0.0],
        e_interf: vec![0.0, 0.0],
        e_artif: vec![0.0, f64::sqrt(10.0)],
    };
    let sar_tenth = metrics::sar(&d_tenth); // power ratio 1/10 → −10 dB

    let hand_ok = sir0.abs() < 1e-9 && sdr_clean == 100.0 && (sar_tenth + 10.0).abs() < 1e-9;
    let pass = worst <= 1e-8 && hand_ok;
    report_line(
        "5",
        "metrics oracle",
        pass,
        &format!(
            "1000 projection instances worst rel {worst:.2e} (<=1e-8); hand cases 0dB/{sdr_clean}/-10dB {}",
            if hand_ok { "exact" } else { "WRONG" }
        ),
    );
    assert!(pass);
}

#[test]
fn c6_irm_topline() {
    let f = fixtures();
    let mut detail = String::new();
    let mut pass = true;
    for s in SOURCE_NAMES {
        let irm = median_sdr(&f.irm, s);
        let dm = median_sdr(&f.demucs_plain, s);
        let ct = median_sdr(&f.convtasnet_plain, s);
        pass &= irm > dm && irm > ct;
        detail.push_str(&format!("{s}: irm {irm:.1} > unet {dm:.1}, masking {ct:.1}; "));
    }
    report_line("6", "ratio-mask topline", pass, detail.trim_end());
    assert!(pass);
}

#[test]
fn c7_end_to_end_learning() {
    let f = fixtures();
    let mut detail = String::new();
    let mut pass = true;

    for (label, trained, report) in [
        ("u-net", &f.demucs, &f.demucs_plain),
        ("masking", &f.convtasnet, &f.convtasnet_plain),
    ] {
        let mut above = 0;
        for s in SOURCE_NAMES {
            let gain = median_sdr(report, s) - median_sdr(&f.baseline, s);
            if gain >= 3.0 {
                above += 1;
            }
        }
        let budget_ok = trained.wall_seconds <= 1800.0;
        let converged = trained.final_valid < trained.epoch0_valid;
        pass &= above >= 3 && budget_ok && converged;
        detail.push_str(&format!(
            "{label}: {above}/4 sources >=+3dB, {:.0}s (<=1800), valid L1 {:.4}->{:.4}; ",
            trained.wall_seconds, trained.epoch0_valid, trained.final_valid
        ));
    }

    // Squared-error objective also converges (short run, directional only).
    let dir = TempDir::new().unwrap();
    let manifest = synthetic_manifest(0xD5, (4, 2, 1), 30.0, 8000, true);
    let manifest_path = dir.path().join("m.txt");
    manifest.save(&manifest_path).unwrap();
    let mut l2_cfg = TrainConfig::desk(ModelKind::ConvTasnet);
    l2_cfg.loss = LossKind::L2;
    l2_cfg.epochs = 3;
    l2_cfg.seed = 0x7A;
    l2_cfg.manifest = manifest_path;
    let l2 = train_one(l2_cfg, &dir.path().join("l2"));
    let l2_ok = l2.final_valid < l2.epoch0_valid;
    pass &= l2_ok;
    detail.push_str(&format!(
        "l2 loss: valid L1 {:.4}->{:.4}",
        l2.epoch0_valid, l2.final_valid
    ));

    report_line("7", "end-to-end learning", pass, &detail);
    assert!(pass);
}

#[test]
fn c8_pipeline_integrity() {
    // Mixture property at every stage.
    let set = synth_track(99, 30.0, 8000, true).unwrap();
    let synth_dev = set.mixture_deviation().unwrap().unwrap();

    let dir = TempDir::new().unwrap();
    data::save_track_dir(&set, dir.path(), WavEncoding::Float32).unwrap();
    let loaded = data::load_track_dir(dir.path()).unwrap();
    let load_dev = loaded.mixture_deviation().unwrap().unwrap();

    let sampler = SamplerConfig::default();
    let tracks = vec![("t".to_string(), set.mixture().unwrap().len(), 8000u32)];
    let plan = data::plan_epoch(&tracks, &sampler, 3, 0).unwrap();
    let extract = data::materialize_extract(&set, &plan[0]).unwrap();
    let extract_dev = extract.mixture_deviation().unwrap().unwrap();

    let augmented = data::augment_batch(
        &[extract.clone(), extract.clone()],
        &AugmentConfig::default(),
        9,
    )
    .unwrap();
    let augment_dev = augmented[0].mixture_deviation().unwrap().unwrap();

    // Sampler arithmetic: floor(30−11)+1 = 20 extracts for a 30 s track.
    let plan_count = plan.len();

    // Involutions: double channel swap and double sign flip are identities.
    let invol = AugmentConfig {
        shuffle_sources: false,
        channel_swap_prob: 1.0,
        sign_flip_prob: 1.0,
    };
    let once = data::augment_batch(&[extract.clone()], &invol, 1).unwrap();
    let twice = data::augment_batch(&once, &invol, 2).unwrap();
    let mut invol_ok = true;
    for name in SOURCE_NAMES {
        invol_ok &= twice[0].get(name).unwrap().samples() == extract.get(name).unwrap().samples();
    }

    let pass = synth_dev == 0.0
        && load_dev <= 1e-6
        && extract_dev == 0.0
        && augment_dev == 0.0
        && plan_count == 20
        && invol_ok;
    report_line(
        "8",
        "pipeline integrity",
        pass,
        &format!(
            "mixture dev synth {synth_dev:.1e} / disk {load_dev:.1e} / extract {extract_dev:.1e} / augment {augment_dev:.1e}; {plan_count}/20 extracts; involutions {}",
            if invol_ok { "identity" } else { "BROKEN" }
        ),
    );
    assert!(pass);
}

/// One full train → separate → evaluate pipeline at micro scale.
fn full_run(root: &Path, manifest_path: &Path, test_refs: &[(String, SourceSet)]) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let mut cfg = TrainConfig::desk(ModelKind::ConvTasnet);
    cfg.convtasnet.frontend_channels = 8;
    cfg.convtasnet.block_channels = 8;
    cfg.convtasnet.repeats = 1;
    cfg.convtasnet.blocks_per_repeat = 2;
    cfg.epochs = 2;
    cfg.seed = 0x99;
    cfg.manifest = manifest_path.to_path_buf();
    cfg.checkpoint_dir = root.join("ckpt");
    let outcome = train::train(&cfg, false)?;

    let model = AnyModel::build(&cfg)?;
    train::load_model_values(&outcome.best_path, &model)?;
    let report = report_over(test_refs, |_, refs| {
        inference::separate_plain(&model, &refs.mixture().unwrap()).unwrap()
    });
    let csv = root.join("eval.csv");
    report.write_csv(&csv)?;
    Ok((
        outcome.best_path.with_extension("bin"),
        outcome.last_path.with_extension("bin"),
        csv,
    ))
}

#[test]
fn c9_determinism() {
    let dir = TempDir::new().unwrap();
    let manifest = synthetic_manifest(0x44, (3, 1, 1), 12.0, 8000, true);
    let manifest_path = dir.path().join("m.txt");
    manifest.save(&manifest_path).unwrap();
    let test_refs: Vec<(String, SourceSet)> = manifest
        .split(Split::Test)
        .iter()
        .map(|e| (e.id.clone(), e.load().unwrap()))
        .collect();

    let (best_a, last_a, csv_a) = full_run(&dir.path().join("a"), &manifest_path, &test_refs).unwrap();
    let (best_b, last_b, csv_b) = full_run(&dir.path().join("b"), &manifest_path, &test_refs).unwrap();

    let eq = |x: &PathBuf, y: &PathBuf| std::fs::read(x).unwrap() == std::fs::read(y).unwrap();
    let best_ok = eq(&best_a, &best_b);
    let last_ok = eq(&last_a, &last_b);
    let csv_ok = eq(&csv_a, &csv_b);

    let pass = best_ok && last_ok && csv_ok;
    report_line(
        "9",
        "determinism",
        pass,
        &format!(
            "checkpoints bit-identical: best {best_ok}, last {last_ok}; evaluation CSV identical: {csv_ok}"
        ),
    );
    assert!(pass);
}
