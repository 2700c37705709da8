//! Property tests for the stated invariants.

use std::collections::BTreeMap;
use std::sync::Arc;

use ctg_ssl::config::ModelConfig;
use ctg_ssl::features::{extract_features, RawPatch};
use ctg_ssl::nn::{AttnMask, Graph, ParamStore};
use ctg_ssl::pretrain::{sample_mask, total_loss, total_loss_grad_s};
use ctg_ssl::probe::{auc, stratified_split, subsample_stratified};
use ctg_ssl::quantizer::{Quantizer, QuantizerSpec};
use ctg_ssl::signal::{
    denormalize_fhr, denormalize_ua, downsample_4hz_to_1hz, filter_for_pretraining, normalize_fhr, normalize_ua, to_patches,
    CtgRecord, Metadata, Scale, Segment,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn meta() -> Metadata {
    Metadata {
        gestational_age: 38.0,
        time_to_birth: 5.0,
        maternal_age: 31.0,
    }
}

fn segment(values: Vec<[f64; 2]>, valid: Vec<[bool; 2]>, missing: f64, offset: usize) -> Segment {
    Segment {
        values,
        valid,
        missing_fraction: missing,
        metadata: meta(),
        source_record: "r".into(),
        start_offset: offset,
        scale: Scale::Raw,
    }
}

fn patch_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>, Vec<bool>)> {
    (
        prop::collection::vec(60.0f64..200.0, 60),
        prop::collection::vec(prop::bool::weighted(0.85), 60),
        prop::collection::vec(0.0f64..100.0, 60),
        prop::collection::vec(prop::bool::weighted(0.85), 60),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_grid_round_trip(vals in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1200)) {
        let values: Vec<[f64; 2]> = vals.iter().map(|&(a, b)| [a, b]).collect();
        let s = segment(values.clone(), vec![[true; 2]; 1200], 0.0, 0);
        let g = to_patches(&s, 60).unwrap();
        prop_assert_eq!(g.n_patches(), 20);
        prop_assert_eq!(g.reassemble(), values);
    }

    #[test]
    fn downsampling_a_constant(c in 50.0f64..200.0, u in 0.0f64..100.0,
                               miss in prop::collection::vec(prop::bool::weighted(0.3), 400)) {
        let fhr: Vec<Option<f64>> = miss.iter().map(|&m| (!m).then_some(c)).collect();
        let ua: Vec<Option<f64>> = miss.iter().rev().map(|&m| (!m).then_some(u)).collect();
        let rec = CtgRecord::ingest("r", fhr.clone(), ua, meta()).unwrap();
        let out = downsample_4hz_to_1hz(&rec).unwrap();
        prop_assert_eq!(out.len(), 100);
        for v in out.fhr.iter().flatten() {
            prop_assert!((v - c).abs() <= 1e-12 * c);
        }
        for v in out.ua.iter().flatten() {
            prop_assert!((v - u).abs() <= 1e-12 * u.max(1.0));
        }
        let in_missing = fhr.iter().filter(|v| v.is_none()).count();
        let out_missing = out.fhr.iter().filter(|v| v.is_none()).count();
        prop_assert!(out_missing <= in_missing.div_ceil(4));
    }

    #[test]
    fn normalization_inverts_on_clipped_range(f in 50.0f64..=210.0, u in 0.0f64..=100.0) {
        prop_assert!((denormalize_fhr(normalize_fhr(f)) - f).abs() <= 1e-9);
        prop_assert!((denormalize_ua(normalize_ua(u)) - u).abs() <= 1e-9);
    }

    #[test]
    fn pretraining_filter_idempotent_and_ordered(miss in prop::collection::vec(0.0f64..1.0, 0..40)) {
        let segs: Vec<Segment> = miss.iter().enumerate()
            .map(|(i, &m)| segment(vec![[130.0, 10.0]; 4], vec![[true; 2]; 4], m, i))
            .collect();
        let once = filter_for_pretraining(segs.clone());
        let twice = filter_for_pretraining(once.clone());
        prop_assert_eq!(&once, &twice);
        let offsets: Vec<usize> = once.iter().map(|s| s.start_offset).collect();
        let mut sorted = offsets.clone();
        sorted.sort_unstable();
        prop_assert_eq!(offsets, sorted);
        prop_assert!(once.iter().all(|s| s.missing_fraction <= 0.5));
        prop_assert_eq!(once.len(), miss.iter().filter(|&&m| m <= 0.5).count());
    }

    #[test]
    fn features_ignore_fill_values((fhr, fv, ua, uv) in patch_strategy(), seed in 0u64..1000) {
        let base = extract_features(RawPatch { fhr: &fhr, fhr_valid: &fv, ua: &ua, ua_valid: &uv });
        // scramble the fill values at missing FHR positions
        let mut other = fhr.clone();
        let mut k = seed;
        for (t, v) in other.iter_mut().enumerate() {
            if !fv[t] {
                k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = 40.0 + (k >> 40) as f64 % 180.0;
            }
        }
        if fv.iter().filter(|&&b| b).count() >= 2 {
            let moved = extract_features(RawPatch { fhr: &other, fhr_valid: &fv, ua: &ua, ua_valid: &uv });
            for j in 0..11 {
                prop_assert_eq!(base.0[j].to_bits(), moved.0[j].to_bits(), "feature {}", j);
            }
        }
    }

    #[test]
    fn features_translate_with_fhr((fhr, fv, ua, uv) in patch_strategy(), c in -30.0f64..30.0) {
        prop_assume!(fv.iter().filter(|&&b| b).count() >= 2);
        let a = extract_features(RawPatch { fhr: &fhr, fhr_valid: &fv, ua: &ua, ua_valid: &uv });
        let shifted: Vec<f64> = fhr.iter().map(|x| x + c).collect();
        let b = extract_features(RawPatch { fhr: &shifted, fhr_valid: &fv, ua: &ua, ua_valid: &uv });
        for j in [0, 2, 3] {
            prop_assert!((b.0[j] - a.0[j] - c).abs() < 1e-9, "feature {}", j);
        }
        for j in [1, 4, 5, 6, 7, 8, 9, 10] {
            prop_assert!((b.0[j] - a.0[j]).abs() < 1e-9, "feature {}", j);
        }
    }

    #[test]
    fn quantizer_labels_scale_invariant(x in prop::collection::vec(-5.0f64..5.0, 120), log_c in -4.0f64..4.0, seed in 0u64..50) {
        let q = Quantizer::build(QuantizerSpec::signal(seed)).unwrap();
        let c = 10f64.powf(log_c);
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert_eq!(q.quantize(&x).unwrap(), q.quantize(&y).unwrap());
    }

    #[test]
    fn auc_monotone_and_negation(scores in prop::collection::vec(-100.0f64..100.0, 4..60), flips in prop::collection::vec(any::<bool>(), 60)) {
        let n = scores.len();
        let mut y: Vec<u8> = flips[..n].iter().map(|&b| b as u8).collect();
        y[0] = 0;
        y[1] = 1;
        let a = auc(&scores, &y).unwrap();
        let t: Vec<f64> = scores.iter().map(|s| s.atan() * 3.0 + s).collect();
        prop_assert_eq!(auc(&t, &y).unwrap(), a);
        let mut uniq = scores.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        if uniq.len() == n {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auc(&neg, &y).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_partitions_patches(n in 2usize..64, ratio in 0.01f64..0.99, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = sample_mask(n, ratio, &mut rng).unwrap();
        let mut all: Vec<usize> = m.masked.iter().chain(&m.visible).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!m.masked.is_empty() && !m.visible.is_empty());
        prop_assert_eq!(m.masked.len(), ((n as f64 * ratio).round() as usize).clamp(1, n - 1));
    }

    #[test]
    fn split_is_disjoint_and_complete(labels in prop::collection::vec(any::<bool>(), 2..120), seed in any::<u64>()) {
        let table: BTreeMap<String, u8> = labels.iter().enumerate().map(|(i, &b)| (format!("r{i:04}"), b as u8)).collect();
        let s = stratified_split(&table, 0.2, seed).unwrap();
        prop_assert!(s.is_disjoint());
        prop_assert_eq!(s.train.len() + s.test.len(), table.len());
        for class in [0u8, 1] {
            let n_c = table.values().filter(|&&l| l == class).count();
            let t_c = s.test.iter().filter(|id| table[*id] == class).count();
            prop_assert_eq!(t_c, (n_c as f64 * 0.2).round() as usize);
        }
    }

    #[test]
    fn subsample_takes_floor_per_class(n in 4usize..200, frac in 0.05f64..1.0, seed in any::<u64>()) {
        let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let idx: Vec<usize> = (0..n).collect();
        let sub = subsample_stratified(&idx, &labels, frac, seed);
        for class in [0u8, 1] {
            let n_c = labels.iter().filter(|&&l| l == class).count();
            let k = sub.iter().filter(|&&i| labels[i] == class).count();
            prop_assert_eq!(k, ((n_c as f64 * frac).floor() as usize).max(1));
        }
    }

    #[test]
    fn loss_s_gradient_is_stationary_at_log_l(l in prop::collection::vec(0.01f64..500.0, 3), s in prop::collection::vec(-3.0f64..3.0, 3)) {
        let cfg = ModelConfig::default();
        let l = [l[0], l[1], l[2]];
        let s = [s[0], s[1], s[2]];
        let g = total_loss_grad_s(l, s, &cfg);
        for i in 0..3 {
            prop_assert!((g[i] - (1.0 - (-s[i]).exp() * l[i])).abs() < 1e-12);
            let h = 1e-6;
            let mut sp = s;
            sp[i] += h;
            let mut sm = s;
            sm[i] -= h;
            let fd = (total_loss(l, sp, &cfg) - total_loss(l, sm, &cfg)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()));
        }
        let star = [l[0].ln(), l[1].ln(), l[2].ln()];
        for v in total_loss_grad_s(l, star, &cfg) {
            prop_assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_distributions(nq in 1usize..6, nk in 1usize..6, allow in prop::collection::vec(any::<bool>(), 36), vals in prop::collection::vec(-2.0f64..2.0, 3 * 36 * 4)) {
        let mut bits: Vec<bool> = (0..nq * nk).map(|i| allow[i]).collect();
        for i in 0..nq {
            bits[i * nk + (i % nk)] = true;
        }
        let mask = Arc::new(AttnMask::new(nq, nk, bits.clone()).unwrap());
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let d = 4;
        let q = g.input(vals[..nq * d].to_vec(), nq, d);
        let k = g.input(vals[36 * 4..36 * 4 + nk * d].to_vec(), nk, d);
        let v = g.input(vals[72 * 4..72 * 4 + nk * d].to_vec(), nk, d);
        let out = g.attention(q, k, v, 2, mask);
        let p = g.attention_probs(out).unwrap();
        for h in 0..2 {
            for i in 0..nq {
                let row = &p[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                for j in 0..nk {
                    if !bits[i * nk + j] {
                        prop_assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
    }
}
