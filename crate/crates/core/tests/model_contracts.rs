//! Behavioural contracts of the model: isolation, locality, shapes, ablation
//! flags and gradient flow.

use std::sync::Arc;

use ctg_ssl::config::ModelConfig;
use ctg_ssl::model::{isolation_mask, Model, SampleInput};
use ctg_ssl::nn::{AttnMask, ConvResidualBlock, Grads, Graph, ParamStore, Var};
use ctg_ssl::pretrain::sample_mask;
use ctg_ssl::quantizer::{Quantizer, QuantizerSpec};
use ctg_ssl::selfcheck;
use ctg_ssl::signal::{normalize_fhr, normalize_ua, to_patches, Metadata, Scale, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        enc_layers: 2,
        dec_layers: 1,
        cnn_channels: 4,
        cnn_blocks: 1,
        ..ModelConfig::default()
    }
}

fn random_values(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..1200).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..2.0)]).collect()
}

fn labels_for(q: &Quantizer, values: &[[f64; 2]]) -> Vec<usize> {
    let seg = Segment {
        values: values.to_vec(),
        valid: vec![[true; 2]; values.len()],
        missing_fraction: 0.0,
        metadata: Metadata {
            gestational_age: 38.0,
            time_to_birth: 3.0,
            maternal_age: 30.0,
        },
        source_record: "x".into(),
        start_offset: 0,
        scale: Scale::Normalized,
    };
    q.quantize_grid(&to_patches(&seg, 60).unwrap()).unwrap()
}

fn vals<T: ctg_ssl::nn::Real>(g: &Graph<'_, T>, v: Var) -> Vec<f64> {
    g.value(v).iter().map(|x| x.f64()).collect()
}

#[test]
fn task_tokens_are_isolated_before_cross_attention() {
    let out = selfcheck::isolation(&ModelConfig::default(), 20, 3).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn perturbing_a_task_token_changes_its_own_output() {
    let model = Model::<f64>::new(small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values = random_values(&mut rng);
    let labels = labels_for(&model.sig_q, &values);
    let x = SampleInput {
        values: &values,
        signal_labels: &labels,
    };
    let visible: Vec<usize> = (0..20).step_by(2).collect();
    let mut g = Graph::new(&model.params);
    let base = model.encode(&mut g, &x, &visible).unwrap();
    let before = vals(&g, base.cls[1]);
    let mut store = model.params.clone();
    store.get_mut(model.cls_ids()[1]).value[0] += 0.5;
    let mut g2 = Graph::new(&store);
    let out = model.encode(&mut g2, &x, &visible).unwrap();
    assert_ne!(vals(&g2, out.cls[1]), before);
    assert_eq!(vals(&g2, out.cls[0]), vals(&g, base.cls[0]));
    assert_eq!(vals(&g2, out.patches), vals(&g, base.patches));
}

#[test]
fn full_attention_mask_changes_patch_outputs() {
    let model = Model::<f64>::new(small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values = random_values(&mut rng);
    let labels = labels_for(&model.sig_q, &values);
    let x = SampleInput {
        values: &values,
        signal_labels: &labels,
    };
    let visible: Vec<usize> = (0..20).collect();
    let n = 3 + visible.len();
    let mut g = Graph::new(&model.params);
    let iso = model
        .encode_with_mask(&mut g, &x, &visible, Arc::new(isolation_mask(3, 20).unwrap()))
        .unwrap();
    let full = model
        .encode_with_mask(&mut g, &x, &visible, Arc::new(AttnMask::full(n, n)))
        .unwrap();
    assert_ne!(vals(&g, iso.patches), vals(&g, full.patches));
}

#[test]
fn cross_attention_exchanges_information() {
    let model = Model::<f64>::new(small()).unwrap();
    let d = model.cfg.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tok: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut g = Graph::new(&model.params);
    let c: Vec<Var> = tok.iter().map(|t| g.input(t.clone(), 1, d)).collect();
    let out = model.cls_cross_attention(&mut g, &c);
    assert_eq!(out.len(), 3);
    let zero_f = g.input(vec![0.0; d], 1, d);
    let out2 = model.cls_cross_attention(&mut g, &[c[0], c[1], zero_f]);
    assert_ne!(vals(&g, out[0]), vals(&g, out2[0]));
}

#[test]
fn identical_task_tokens_make_attention_weights_irrelevant() {
    let model = Model::<f64>::new(small()).unwrap();
    let d = model.cfg.d_model;
    let t: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
    let run = |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let c: Vec<Var> = (0..3).map(|_| g.input(t.clone(), 1, d)).collect();
        let out = model.cls_cross_attention(&mut g, &c);
        vals(&g, out[0])
    };
    let a = run(&model.params);
    let mut store = model.params.clone();
    for name in ["xattn.r.attn.q.w", "xattn.r.attn.k.w"] {
        let id = store.id(name).unwrap();
        store.get_mut(id).value.iter_mut().for_each(|v| *v *= -3.0);
    }
    let b = run(&store);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn masked_patch_content_never_reaches_the_encoder() {
    let model = Model::<f32>::new(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let values = random_values(&mut rng);
        let mask = sample_mask(20, 0.5, &mut rng).unwrap();
        let mut changed = values.clone();
        let target = mask.masked[0];
        for v in &mut changed[target * 60..(target + 1) * 60] {
            *v = [rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..3.0)];
        }
        let la = labels_for(&model.sig_q, &values);
        let lb = labels_for(&model.sig_q, &changed);
        let mut ga = Graph::new(&model.params);
        let a = model
            .encode(&mut ga, &SampleInput { values: &values, signal_labels: &la }, &mask.visible)
            .unwrap();
        let mut gb = Graph::new(&model.params);
        let b = model
            .encode(&mut gb, &SampleInput { values: &changed, signal_labels: &lb }, &mask.visible)
            .unwrap();
        let bits = |g: &Graph<'_, f32>, v: Var| g.value(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ga, a.patches), bits(&gb, b.patches));
        for (x, y) in a.cls.iter().zip(&b.cls) {
            assert_eq!(bits(&ga, *x), bits(&gb, *y));
        }
    }
}

#[test]
fn without_label_embedding_the_codebook_seed_is_irrelevant() {
    let cfg = ModelConfig {
        use_label_embed: false,
        ..ModelConfig::default()
    };
    let model = Model::<f32>::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values = random_values(&mut rng);
    let q2 = Quantizer::build(QuantizerSpec::signal(99)).unwrap();
    let l1 = labels_for(&model.sig_q, &values);
    let l2 = labels_for(&q2, &values);
    assert_ne!(l1, l2);
    let a = model.forward_probe(&SampleInput { values: &values, signal_labels: &l1 }).unwrap();
    let b = model.forward_probe(&SampleInput { values: &values, signal_labels: &l2 }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saturated_gate_removes_label_fusion() {
    let model = Model::<f64>::new(small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let values = random_values(&mut rng);
    let la = labels_for(&model.sig_q, &values);
    let lb: Vec<usize> = la.iter().map(|l| (l + 17) % 256).collect();
    let visible: Vec<usize> = (0..20).step_by(2).collect();
    let recon = |store: &ParamStore<f64>, dec_labels: &[usize]| {
        let mut g = Graph::new(store);
        let enc = model
            .encode(&mut g, &SampleInput { values: &values, signal_labels: &la }, &visible)
            .unwrap();
        let cls = model.cls_cross_attention(&mut g, &enc.cls);
        let r = model.decode_reconstruct(&mut g, &enc, cls[0], dec_labels).unwrap();
        assert_eq!(g.shape(r), (20, 120));
        vals(&g, r)
    };
    assert_ne!(recon(&model.params, &la), recon(&model.params, &lb));
    let mut store = model.params.clone();
    let gb = model.gate_bias_id().unwrap();
    store.get_mut(gb).value.iter_mut().for_each(|v| *v = -1e3);
    let (a, b) = (recon(&store, &la), recon(&store, &lb));
    let sup = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(sup < 1e-6, "{sup}");
}

#[test]
fn head_shapes_and_probe_dimension() {
    let model = Model::<f32>::new(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values = random_values(&mut rng);
    let labels = labels_for(&model.sig_q, &values);
    let x = SampleInput {
        values: &values,
        signal_labels: &labels,
    };
    let visible: Vec<usize> = (0..20).filter(|i| i % 3 != 0).collect();
    let mut g = Graph::new(&model.params);
    let h = model.embed_patches(&mut g, &values, &(0..20).collect::<Vec<_>>());
    assert_eq!(g.shape(h), (20, 64));
    let out = model.forward_pretrain(&mut g, &x, &visible).unwrap();
    assert_eq!(g.shape(out.recon.unwrap()), (20, 120));
    assert_eq!(g.shape(out.meta.unwrap()), (1, 3));
    assert_eq!(g.shape(out.feat_logits.unwrap()), (visible.len(), 64));
    assert_eq!(g.shape(out.enc.patches), (visible.len(), 64));

    let p1 = model.forward_probe(&x).unwrap();
    assert_eq!(p1.len(), 192);
    assert_eq!(p1, model.forward_probe(&x).unwrap());
    // a segment at a different baseline
    let shifted: Vec<[f64; 2]> = values.iter().map(|v| [v[0] + normalize_fhr(160.0), v[1]]).collect();
    let ls = labels_for(&model.sig_q, &shifted);
    let p2 = model.forward_probe(&SampleInput { values: &shifted, signal_labels: &ls }).unwrap();
    let dist: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(dist > 0.0);
}

#[test]
fn patch_embedding_paths() {
    let values: Vec<[f64; 2]> = (0..1200).map(|_| [normalize_fhr(140.0), normalize_ua(20.0)]).collect();
    for use_cnn in [true, false] {
        let model = Model::<f32>::new(ModelConfig {
            use_cnn,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut g = Graph::new(&model.params);
        let all: Vec<usize> = (0..20).collect();
        let h = model.embed_patches(&mut g, &values, &all);
        assert_eq!(g.shape(h), (20, 64));
        // identical patches give identical tokens
        let v = g.value(h);
        for i in 1..20 {
            assert_eq!(&v[i * 64..(i + 1) * 64], &v[..64]);
        }
        assert_eq!(model.params.names().iter().any(|n| n.starts_with("cnn.")), use_cnn);
    }
}

#[test]
fn zero_label_table_leaves_patch_plus_position() {
    let mut model = Model::<f64>::new(small()).unwrap();
    let e = model.label_embed_id().unwrap();
    model.params.get_mut(e).value.iter_mut().for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values = random_values(&mut rng);
    let labels = labels_for(&model.sig_q, &values);
    let patches = vec![1, 4, 7];
    let mut g = Graph::new(&model.params);
    let h = model.embed_patches(&mut g, &values, &patches);
    let z = model.fuse_tokens(&mut g, h, &labels, &patches);
    let pos = &model.params.by_name("pos_table").unwrap().value;
    let d = model.cfg.d_model;
    let (hv, zv) = (vals(&g, h), vals(&g, z));
    for (r, &i) in patches.iter().enumerate() {
        for k in 0..d {
            assert_eq!(zv[r * d + k], hv[r * d + k] + pos[i * d + k]);
        }
    }
}

#[test]
fn zero_conv_weights_reduce_block_to_projection() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let block = ConvResidualBlock::new(&mut store, "b", 2, 8, 5, &mut rng);
    for name in ["b.conv1.w", "b.conv2.w"] {
        let id = store.id(name).unwrap();
        store.get_mut(id).value.iter_mut().for_each(|v| *v = 0.0);
    }
    let x: Vec<f64> = (0..120).map(|i| (i as f64 * 0.3).cos()).collect();
    let mut g = Graph::new(&store);
    let xv = g.input(x, 60, 2);
    let y = block.forward(&mut g, xv, 60);
    let p = block.proj.unwrap().forward(&mut g, xv);
    assert_eq!(g.shape(y), (60, 8));
    assert_eq!(vals(&g, y), vals(&g, p));
}

#[test]
fn gradients_match_finite_differences_and_skip_frozen_params() {
    let (outcome, report) = selfcheck::gradients(&small(), 2, 0.05, 1e-4, 1).unwrap();
    assert!(outcome.passed, "{}", outcome.detail);
    assert!(report.frozen_grads_zero);
    let by_name = |n: &str| report.groups.iter().find(|g| g.name == n).unwrap();
    assert!(by_name("dec.gate.w").max_abs_grad > 0.0);
    assert!(by_name("label_embed").max_abs_grad > 0.0);
    assert_eq!(by_name("sig_q.projection").max_abs_grad, 0.0);
    assert_eq!(by_name("feat_q.codebook").max_abs_grad, 0.0);
}

#[test]
fn linear_layer_gradient_is_tight() {
    use ctg_ssl::nn::{check_gradients, Linear};
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let lin = Linear::new(&mut store, "l", 5, 3, &mut rng);
    let bid = store.id("l.b").unwrap();
    store.get_mut(bid).value = vec![0.3, -0.2, 0.1];
    let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
    let loss_var = |g: &mut Graph<'_, f64>| {
        let xi = g.input(x.clone(), 4, 5);
        let y = lin.forward(g, xi);
        g.sq_err(y, vec![0.5; 12], vec![1.0; 12])
    };
    let loss = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let l = loss_var(&mut g);
        g.scalar(l)
    };
    let grad = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let l = loss_var(&mut g);
        let mut gr = Grads::zeros_like(s);
        g.backward(l, &mut gr);
        gr
    };
    let r = check_gradients(&store, loss, grad, 1e-6, 1.0, 0);
    assert!(r.max_rel_error < 1e-7, "{}", r.max_rel_error);
}
