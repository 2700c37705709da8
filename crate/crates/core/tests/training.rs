//! Training loop, checkpointing, embedding cache and probe protocol.

use std::collections::{BTreeMap, BTreeSet};

use ctg_ssl::config::{ModelConfig, TrainConfig};
use ctg_ssl::model::Model;
use ctg_ssl::pretrain::{
    batch_objective, checkpoint_digest, load_checkpoint, save_checkpoint, PreparedSegment, Trainer,
};
use ctg_ssl::probe::{
    ablation_variants, auc, data_regime_sweep, dropout_robustness, embed_corpus, embed_segments,
    prepare_probe_segments, probe_task, stratified_split, train_linear_probe, write_reports, DropoutBin,
    ProbeData, ProbeHyper, ProbeSettings, run_splits, MIN_BIN_PER_CLASS,
};
use ctg_ssl::selfcheck;
use ctg_ssl::synth::{generate_corpus, CorpusSpec, DropoutPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        cnn_channels: 4,
        cnn_blocks: 1,
        ..ModelConfig::default()
    }
}

fn train_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        steps,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn bits(m: &Model<f32>) -> Vec<u32> {
    m.params.iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect()
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let cfg = small();
    let corpus = selfcheck::tiny_corpus(&cfg, 4, 1).unwrap();
    let mut full = Trainer::new(cfg.clone(), train_cfg(6), corpus.clone()).unwrap();
    full.run_until(6, |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut first = Trainer::new(cfg, train_cfg(6), corpus.clone()).unwrap();
    first.run_until(3, |_, _| Ok(())).unwrap();
    let digest = save_checkpoint(&path, &first.checkpoint()).unwrap();
    assert_eq!(digest, checkpoint_digest(&path).unwrap());
    let mut resumed = Trainer::resume(load_checkpoint(&path).unwrap(), corpus).unwrap();
    assert_eq!(resumed.step, 3);
    resumed.run_until(6, |_, _| Ok(())).unwrap();
    assert_eq!(bits(&resumed.model), bits(&full.model));

    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    save_checkpoint(&a, &full.checkpoint()).unwrap();
    save_checkpoint(&b, &resumed.checkpoint()).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let cfg = small();
    let corpus = selfcheck::tiny_corpus(&cfg, 2, 1).unwrap();
    let t = Trainer::new(cfg, train_cfg(1), corpus).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&path, &t.checkpoint()).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn quantizers_stay_frozen_through_training() {
    let out = selfcheck::quantizer_frozen(&small(), 5, 2).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn gradients_do_not_depend_on_thread_count() {
    let cfg = small();
    let corpus = selfcheck::tiny_corpus(&cfg, 4, 5).unwrap();
    let trainer = Trainer::new(cfg, TrainConfig { batch_size: 12, chunk_size: 4, ..train_cfg(1) }, corpus).unwrap();
    let (idx, masks) = trainer.batch_for_step(0).unwrap();
    let batch: Vec<&PreparedSegment> = idx.iter().map(|&i| &trainer.corpus.segments[i]).collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| batch_objective(&trainer.model, &trainer.model.params, &batch, &masks, 4, true).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    let flat = |g: &ctg_ssl::nn::Grads<f32>| g.data.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(flat(a.grads.as_ref().unwrap()), flat(b.grads.as_ref().unwrap()));
}

#[test]
fn training_reduces_the_loss() {
    let cfg = small();
    let corpus = selfcheck::tiny_corpus(&cfg, 4, 6).unwrap();
    let mut t = Trainer::new(cfg, TrainConfig { batch_size: 4, steps: 40, seed: 1, lr: 3e-3, ..TrainConfig::default() }, corpus).unwrap();
    let mut losses = vec![];
    t.run_until(40, |_, m| {
        losses.push(m.loss);
        Ok(())
    })
    .unwrap();
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[35..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}

fn probe_segments(n: usize, seed: u64, dropout: DropoutPlan) -> (Vec<PreparedSegment>, BTreeMap<String, u8>) {
    let corpus = generate_corpus(&CorpusSpec {
        duration: 1200,
        dropout,
        ..CorpusSpec::new(n, 0.5, seed)
    })
    .unwrap();
    let model = Model::<f32>::new(small()).unwrap();
    let segs = prepare_probe_segments(&model, &corpus.records, 1200).unwrap();
    let labels = corpus
        .records
        .iter()
        .zip(&corpus.labels)
        .map(|(r, l)| (r.record_id.clone(), l.abnormal))
        .collect();
    (segs, labels)
}

#[test]
fn embedding_cache_is_reused_and_keyed_by_digest() {
    let model = Model::<f32>::new(small()).unwrap();
    let (segs, _) = probe_segments(6, 9, DropoutPlan::Cycle(vec![0.0]));
    let dir = tempfile::tempdir().unwrap();
    let direct = embed_segments(&model, &segs).unwrap();
    let first = embed_corpus(&model, "abcdef0123456789ff", &segs, Some(dir.path())).unwrap();
    assert_eq!(first, direct);
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let path = files[0].as_ref().unwrap().path();

    // tamper with the cache: a hit must return the stored rows
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    v["rows"][&segs[0].id][0] = serde_json::json!(12345.0);
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let hit = embed_corpus(&model, "abcdef0123456789ff", &segs, Some(dir.path())).unwrap();
    assert_eq!(hit[0][0], 12345.0);
    assert_eq!(hit[1..], direct[1..]);

    // same prefix, different digest: the cache is ignored
    v["checkpoint_digest"] = serde_json::json!("abcdef0123456789zz");
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let miss = embed_corpus(&model, "abcdef0123456789ff", &segs, Some(dir.path())).unwrap();
    assert_eq!(miss, direct);
}

#[test]
fn probing_leaves_the_encoder_untouched() {
    let model = Model::<f32>::new(small()).unwrap();
    let before = bits(&model);
    let (segs, labels) = probe_segments(20, 10, DropoutPlan::Cycle(vec![0.0]));
    let x = embed_segments(&model, &segs).unwrap();
    let data = ProbeData::new(&segs, x, |r| Ok(labels.get(r).copied())).unwrap();
    let settings = ProbeSettings { n_runs: 2, ..ProbeSettings::default() };
    probe_task(&data, &settings, 1.0, "pretrained", "abnormal").unwrap();
    assert_eq!(before, bits(&model));
}

/// Gaussian rows, one segment per record, label shifted along one axis by `shift`.
fn gaussian_data(n: usize, dim: usize, shift: f64, seed: u64) -> ProbeData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = Normal::new(0.0, 1.0).unwrap();
    let mut d = ProbeData {
        segment_ids: vec![],
        record_ids: vec![],
        labels: vec![],
        missing: vec![],
        x: vec![],
    };
    for i in 0..n {
        let l = (i % 2) as u8;
        let mut row: Vec<f64> = (0..dim).map(|_| nd.sample(&mut rng)).collect();
        row[0] += shift * l as f64;
        d.segment_ids.push(format!("r{i:05}:0"));
        d.record_ids.push(format!("r{i:05}"));
        d.labels.push(l);
        d.missing.push(rng.gen_range(0.0..0.5));
        d.x.push(row);
    }
    d
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let mut data = gaussian_data(2000, 8, 3.0, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    use rand::seq::SliceRandom;
    data.labels.shuffle(&mut rng);
    let r = probe_task(&data, &ProbeSettings::default(), 1.0, "x", "shuffled").unwrap();
    let m = r.auc_mean.unwrap();
    assert!((m - 0.5).abs() <= 0.08, "{m}");
}

#[test]
fn separable_toy_data_is_learned() {
    let mut x = vec![];
    let mut y = vec![];
    for i in 0..40 {
        let l = (i % 2) as u8;
        let s = if l == 1 { 1.0 } else { -1.0 };
        x.push(vec![s * (1.0 + i as f64 * 0.01), (i as f64).sin()]);
        y.push(l);
    }
    let fit = train_linear_probe(&x, &y, &ProbeHyper::default(), 0).unwrap();
    assert!(fit.final_loss < fit.initial_loss);
    let correct = x.iter().zip(&y).filter(|(r, &l)| (fit.probe.score(r) > 0.0) == (l == 1)).count();
    assert_eq!(correct, 40);
    let scores: Vec<f64> = x.iter().map(|r| fit.probe.score(r)).collect();
    assert_eq!(auc(&scores, &y).unwrap(), 1.0);
}

#[test]
fn single_class_training_set_is_rejected() {
    let x = vec![vec![0.0, 1.0]; 5];
    assert!(train_linear_probe(&x, &[1; 5], &ProbeHyper::default(), 0).is_err());
}

#[test]
fn full_fraction_equals_standard_probe() {
    let data = gaussian_data(300, 4, 1.0, 13);
    let settings = ProbeSettings { seed: 1, ..ProbeSettings::default() };
    let std = probe_task(&data, &settings, 1.0, "x", "t").unwrap();
    let sweep = data_regime_sweep(&data, &settings, &[0.1, 1.0], "x", "t").unwrap();
    assert_eq!(sweep[1].aucs, std.aucs);
    assert!(sweep[0].n_train < sweep[1].n_train);
    // 60 test records per run, 5 runs
    assert_eq!(std.n_test, 300);
    assert_eq!(std.aucs.len(), 5);
    let mean = std.aucs.iter().sum::<f64>() / 5.0;
    assert!((std.auc_mean.unwrap() - mean).abs() < 1e-12);
}

#[test]
fn split_is_by_record() {
    let mut data = gaussian_data(200, 3, 1.0, 14);
    // two segments per record
    for i in 0..200 {
        data.record_ids[i] = format!("r{:05}", i / 2);
        data.labels[i] = ((i / 2) % 2) as u8;
    }
    let split = stratified_split(&data.record_labels(), 0.2, 0).unwrap();
    assert!(split.is_disjoint());
    assert_eq!(split.test.len(), 20);
    let test: BTreeSet<_> = data.indices_of(&split.test).into_iter().collect();
    for i in 0..200 {
        let j = i ^ 1;
        assert_eq!(test.contains(&i), test.contains(&j));
    }
}

#[test]
fn dropout_bins_partition_the_test_set() {
    let data = gaussian_data(600, 4, 1.5, 15);
    let settings = ProbeSettings { seed: 2, ..ProbeSettings::default() };
    let bins = DropoutBin::default_bins();
    let reps = dropout_robustness(&data, &settings, &bins, "x", "t").unwrap();
    let total: usize = reps.iter().map(|r| r.n_test).sum();
    let expected: usize = run_splits(&data, &settings).unwrap().iter().map(|s| data.indices_of(&s.test).len()).sum();
    assert_eq!(total, expected);
    for r in &reps {
        let enough = r.n_test_pos >= MIN_BIN_PER_CLASS && r.n_test_neg >= MIN_BIN_PER_CLASS;
        assert_eq!(r.status, if enough { "ok" } else { "insufficient" });
        assert_eq!(r.auc_mean.is_some(), enough);
        assert_eq!(r.n_test, r.n_test_pos + r.n_test_neg);
    }
}

#[test]
fn dropout_free_corpus_fills_only_the_first_bin() {
    let mut data = gaussian_data(200, 4, 1.5, 16);
    data.missing.iter_mut().for_each(|m| *m = 0.0);
    let reps = dropout_robustness(&data, &ProbeSettings::default(), &DropoutBin::default_bins(), "x", "t").unwrap();
    assert_eq!(reps[0].n_test, 5 * 40);
    assert_eq!(reps[0].aucs.len(), 5);
    assert_eq!(reps[0].status, "ok");
    for r in &reps[1..] {
        assert_eq!(r.n_test, 0);
        assert_eq!(r.status, "insufficient");
        assert!(r.auc_mean.is_none());
    }
}

#[test]
fn sweep_reports_are_written() {
    let data = gaussian_data(100, 2, 2.0, 17);
    let reps = data_regime_sweep(&data, &ProbeSettings::default(), &[0.5, 1.0], "x", "t").unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_reports(dir.path(), "sweep", &reps).unwrap();
    for f in ["sweep.csv", "sweep.ndjson", "sweep_plot.csv"] {
        assert!(dir.path().join(f).exists());
    }
    let nd = std::fs::read_to_string(dir.path().join("sweep.ndjson")).unwrap();
    assert_eq!(nd.lines().count(), 2);
}

#[test]
fn ablation_list_has_one_row_per_component() {
    let v = ablation_variants(&ModelConfig::default());
    assert_eq!(v.len(), 6);
    let names: BTreeSet<_> = v.iter().map(|(n, _)| *n).collect();
    assert_eq!(names.len(), 6);
    for (name, cfg) in &v {
        cfg.validate().unwrap();
        let off = [!cfg.use_cnn, !cfg.use_label_embed, !cfg.use_multiview, !cfg.use_bestrq_mae, !cfg.use_uncertainty_weighting]
            .iter()
            .filter(|&&b| b)
            .count();
        assert_eq!(off, if *name == "full" { 0 } else { 1 }, "{name}");
    }
}

#[test]
fn every_ablation_variant_trains() {
    for (name, cfg) in ablation_variants(&small()) {
        let corpus = selfcheck::tiny_corpus(&cfg, 2, 4).unwrap();
        let mut t = Trainer::new(cfg, train_cfg(2), corpus).unwrap();
        t.run_until(2, |_, m| {
            assert!(m.loss.is_finite(), "{name}");
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn each_run_draws_its_own_split() {
    let data = gaussian_data(200, 3, 1.0, 18);
    let splits = run_splits(&data, &ProbeSettings::default()).unwrap();
    assert_eq!(splits.len(), 5);
    for s in &splits {
        assert!(s.is_disjoint());
        assert_eq!(s.test.len(), 40);
    }
    let distinct: BTreeSet<_> = splits.iter().map(|s| s.test.clone()).collect();
    assert_eq!(distinct.len(), 5);
}
