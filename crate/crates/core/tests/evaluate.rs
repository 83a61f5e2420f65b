use std::fs;

use ncl_core::data::{fit_scaler, preprocess, synth_generate, Dataset, SynthConfig};
use ncl_core::encoder::{Checkpoint, Encoder, EncoderConfig, HeadKind};
use ncl_core::evaluate::{evaluate_run, format_mean_std, mean_std, EvalProtocol};
use ncl_core::probe::ProbeConfig;
use ncl_core::rng::seeded;
use ncl_core::run::{hash_dir, RunManifest, RUN_MANIFEST_FILE};

const HISTORY: usize = 12;

fn setup() -> (Checkpoint, Dataset) {
    let raw = synth_generate(&SynthConfig {
        n_patients: 60,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = preprocess(&raw, &fit_scaler(&raw).unwrap()).unwrap().0;
    let cfg = EncoderConfig {
        filters: 4,
        dilations: vec![1, 2, 4],
        embed_dim: 6,
        ..EncoderConfig::default()
    };
    let enc = Encoder::new(cfg, ds.n_channels(), ds.static_dim(), true).unwrap();
    let params = enc.init(&mut seeded(0));
    (Checkpoint::new("random", HISTORY, enc, params), ds)
}

fn protocol() -> EvalProtocol {
    EvalProtocol {
        seeds: vec![0, 1],
        max_train_samples: 600,
        max_eval_samples: 400,
        probe: ProbeConfig {
            lr: 1e-2,
            max_epochs: 5,
            ..ProbeConfig::default()
        },
        ..EvalProtocol::default()
    }
}

#[test]
fn full_fraction_matches_the_plain_protocol() {
    let (ck, ds) = setup();
    let plain = evaluate_run(&ck, &ds, &protocol()).unwrap();
    let mixed = evaluate_run(
        &ck,
        &ds,
        &EvalProtocol {
            label_fractions: vec![0.5, 1.0],
            ..protocol()
        },
    )
    .unwrap();
    for metric in ["auroc", "auprc"] {
        let a = plain.entry("decompensation", HeadKind::Linear, 1.0, metric).unwrap();
        let b = mixed.entry("decompensation", HeadKind::Linear, 1.0, metric).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 2);
        assert!(mixed.entry("decompensation", HeadKind::Linear, 0.5, metric).is_some());
    }
}

#[test]
fn transfer_and_multiclass_entries() {
    let (ck, ds) = setup();
    let report = evaluate_run(
        &ck,
        &ds,
        &EvalProtocol {
            tasks: vec!["length_of_stay".into()],
            heads: vec![HeadKind::Mlp],
            seeds: vec![0],
            pretrain_task: Some("decompensation".into()),
            ..protocol()
        },
    )
    .unwrap();
    let e = report.entry("length_of_stay", HeadKind::Mlp, 1.0, "kappa").unwrap();
    assert_eq!(e.pretrain_task.as_deref(), Some("decompensation"));
    assert_eq!(e.std, 0.0);
    let csv = report.to_csv();
    assert!(csv.lines().nth(1).unwrap().contains("decompensation,length_of_stay,mlp"));
}

#[test]
fn twenty_seed_summary_format() {
    let values: Vec<f64> = (0..20).map(|i| 0.9 + 0.001 * (i % 5) as f64).collect();
    let (mean, std) = mean_std(&values);
    let direct_mean = values.iter().sum::<f64>() / 20.0;
    let direct_std = (values.iter().map(|v| (v - direct_mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    assert!((mean - direct_mean).abs() <= 1e-15 && (std - direct_std).abs() <= 1e-15);
    assert_eq!(format_mean_std(mean, std), "90.2 ± 0.1");
}

#[test]
fn manifest_hashes_and_verification() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.txt"), "one").unwrap();
    fs::create_dir(dir.path().join("sub")).unwrap();
    fs::write(dir.path().join("sub/b.txt"), "two").unwrap();
    let h = hash_dir(dir.path()).unwrap();

    let mut m = RunManifest::new("evaluate", 7, &protocol(), Some(h.clone())).unwrap();
    m.add_artifact(dir.path(), "a.txt").unwrap();
    m.finish(dir.path()).unwrap();
    assert_eq!(hash_dir(dir.path()).unwrap(), h, "the manifest itself is not hashed");
    let loaded = RunManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, m);
    assert!(loaded.verify(dir.path()).is_ok());
    assert!(dir.path().join(RUN_MANIFEST_FILE).exists());

    fs::write(dir.path().join("a.txt"), "changed").unwrap();
    assert!(loaded.verify(dir.path()).is_err());
    assert_ne!(hash_dir(dir.path()).unwrap(), h);
}
