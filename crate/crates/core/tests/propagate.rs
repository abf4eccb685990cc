use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatdyn_core::propagate::*;
use splatdyn_core::{Error, Image};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn fmap(frame: usize, h: usize, w: usize, tokens: DMatrix<f64>) -> FeatureMap {
    FeatureMap::new(frame, h, w, tokens, "up1", Stage::Coarse).unwrap()
}

/// Two-loop softmax attention.
fn attention_oracle(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.ncols() as f64;
    let mut out = DMatrix::zeros(q.nrows(), v.ncols());
    for i in 0..q.nrows() {
        let scores: Vec<f64> = (0..k.nrows())
            .map(|j| (0..q.ncols()).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / d.sqrt())
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..k.nrows() {
            for c in 0..v.ncols() {
                out[(i, c)] += e[j] / z * v[(j, c)];
            }
        }
    }
    out
}

fn concat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, blocks[0].ncols());
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

fn nn_oracle(frame: &DMatrix<f64>, key: &DMatrix<f64>) -> Vec<usize> {
    (0..frame.nrows())
        .map(|q| {
            let a: Vec<f64> = frame.row(q).iter().copied().collect();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..key.nrows() {
                let b: Vec<f64> = key.row(j).iter().copied().collect();
                let d = cosine_distance(&a, &b);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn blend_examples() {
    let fg = Image::filled(3, 2, 3, 0.8);
    let bg = Image::filled(3, 2, 3, 0.4);
    assert_eq!(blend(&fg, &Image::filled(3, 2, 1, 1.0), &bg).unwrap(), fg);
    assert_eq!(blend(&fg, &Image::filled(3, 2, 1, 0.0), &bg).unwrap(), bg);
    let mid = blend(&fg, &Image::filled(3, 2, 1, 0.25), &bg).unwrap();
    assert!(mid.data.iter().all(|v| (v - 0.5).abs() < 1e-15));
    let small = Image::filled(2, 2, 3, 0.4);
    assert!(matches!(blend(&fg, &Image::filled(3, 2, 1, 0.5), &small), Err(Error::DimensionMismatch(_))));
    assert!(blend(&fg, &Image::filled(3, 2, 1, 1.5), &bg).is_err());
}

#[test]
fn attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, k, v) = (random(&mut rng, 1, 4), random(&mut rng, 1, 4), random(&mut rng, 1, 3));
    assert_eq!(attention(&q, &k, &v).unwrap(), v);

    let q = random(&mut rng, 5, 4);
    let row = random(&mut rng, 1, 4);
    let k = DMatrix::from_fn(6, 4, |_, c| row[(0, c)]);
    let v = random(&mut rng, 6, 3);
    let out = attention(&q, &k, &v).unwrap();
    let mean = v.row_mean();
    for r in 0..5 {
        assert!((out.row(r) - &mean).abs().max() < 1e-12);
    }

    let q = random(&mut rng, 6, 5);
    let k = random(&mut rng, 6, 5);
    let v = random(&mut rng, 6, 5);
    assert!(max_abs(&attention(&q, &k, &v).unwrap(), &attention_oracle(&q, &k, &v)) < 1e-12);

    let empty = DMatrix::<f64>::zeros(3, 0);
    assert!(matches!(attention(&empty, &empty, &v.rows(0, 3).into_owned()), Err(Error::InvalidArgument(_))));
}

#[test]
fn attention_rows_are_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random(&mut rng, 40, 8) * 10.0;
    let k = random(&mut rng, 30, 8) * 10.0;
    let a = attention_weights(&q, &k).unwrap();
    for r in 0..a.nrows() {
        assert!((a.row(r).sum() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn extended_attention_single_and_identical_keyframes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (q, k, v) = (random(&mut rng, 9, 4), random(&mut rng, 9, 4), random(&mut rng, 9, 2));
    let base = attention(&q, &k, &v).unwrap();
    let one = extended_attention(std::slice::from_ref(&q), std::slice::from_ref(&k), std::slice::from_ref(&v)).unwrap();
    assert!(max_abs(&one[0], &base) < 1e-14);
    let three = extended_attention(&[q.clone(), q.clone(), q], &[k.clone(), k.clone(), k], &[v.clone(), v.clone(), v]).unwrap();
    for out in &three {
        assert!(max_abs(out, &base) < 1e-12);
    }
}

#[test]
fn extended_attention_matches_concatenation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let qs: Vec<_> = (0..3).map(|_| random(&mut rng, 16, 8)).collect();
    let ks: Vec<_> = (0..3).map(|_| random(&mut rng, 16, 8)).collect();
    let vs: Vec<_> = (0..3).map(|_| random(&mut rng, 16, 6)).collect();
    let out = extended_attention(&qs, &ks, &vs).unwrap();
    let (kc, vc) = (concat(&ks), concat(&vs));
    for (q, o) in qs.iter().zip(&out) {
        assert!(max_abs(o, &attention_oracle(q, &kc, &vc)) <= 1e-6);
        let a = attention_weights(q, &kc).unwrap();
        for r in 0..a.nrows() {
            assert!((a.row(r).sum() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn extended_attention_rejects_mismatched_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, 4, 3);
    let b = random(&mut rng, 5, 3);
    assert!(matches!(
        extended_attention(&[a.clone(), b.clone()], &[a.clone(), b.clone()], &[a.clone(), b]),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(extended_attention(std::slice::from_ref(&a), &[a.clone(), a.clone()], &[a.clone()]).is_err());
}

#[test]
fn extended_attention_is_block_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let qs: Vec<_> = (0..4).map(|_| random(&mut rng, 6, 5)).collect();
    let ks: Vec<_> = (0..4).map(|_| random(&mut rng, 6, 5)).collect();
    let vs: Vec<_> = (0..4).map(|_| random(&mut rng, 6, 3)).collect();
    let perm = [2, 0, 3, 1];
    let out = extended_attention(&qs, &ks, &vs).unwrap();
    let pk: Vec<_> = perm.iter().map(|&i| ks[i].clone()).collect();
    let pv: Vec<_> = perm.iter().map(|&i| vs[i].clone()).collect();
    let permuted = extended_attention(&qs, &pk, &pv).unwrap();
    for (a, b) in out.iter().zip(&permuted) {
        assert!(max_abs(a, b) < 1e-12);
    }
}

#[test]
fn nn_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = random(&mut rng, 16, 6);
    let nu = nn_correspondence(&fmap(2, 4, 4, t.clone()), &fmap(1, 4, 4, t.clone()), None).unwrap();
    assert_eq!(nu, (0..16).collect::<Vec<_>>());

    let mut frame = random(&mut rng, 16, 6);
    frame.row_mut(3).copy_from(&(t.row(11) * 5.0));
    let nu = nn_correspondence(&fmap(2, 4, 4, frame), &fmap(1, 4, 4, t), None).unwrap();
    assert_eq!(nu[3], 11);
}

#[test]
fn nn_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for side in [4, 6, 8, 12, 16] {
        let frame = random(&mut rng, side * side, 8);
        let key = random(&mut rng, side * side, 8);
        let nu = nn_correspondence(&fmap(2, side, side, frame.clone()), &fmap(1, side, side, key.clone()), None).unwrap();
        assert_eq!(nu, nn_oracle(&frame, &key), "{side}x{side} grid");
    }
}

#[test]
fn nn_ties_and_zero_vectors() {
    let key = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
    let frame = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
    let nu = nn_correspondence(&fmap(2, 1, 2, frame), &fmap(1, 2, 2, key), None).unwrap();
    // tokens 1 and 2 are both at distance 0; a zero frame token ties everywhere at 1
    assert_eq!(nu, vec![1, 0]);
    assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
}

#[test]
fn nn_window_is_exhaustive_within_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, w, r) = (7, 9, 2);
    let frame = random(&mut rng, h * w, 5);
    let key = random(&mut rng, h * w, 5);
    let nu = nn_correspondence(&fmap(2, h, w, frame.clone()), &fmap(1, h, w, key.clone()), Some(r)).unwrap();
    for q in 0..h * w {
        let (y, x) = ((q / w) as i64, (q % w) as i64);
        let a: Vec<f64> = frame.row(q).iter().copied().collect();
        let mut best = (f64::INFINITY, 0);
        for c in 0..h * w {
            let (yy, xx) = ((c / w) as i64, (c % w) as i64);
            if (yy - y).abs() > r as i64 || (xx - x).abs() > r as i64 {
                continue;
            }
            let b: Vec<f64> = key.row(c).iter().copied().collect();
            let d = cosine_distance(&a, &b);
            if d < best.0 {
                best = (d, c);
            }
        }
        assert_eq!(nu[q], best.1);
    }
    let full = nn_correspondence(&fmap(2, h, w, frame.clone()), &fmap(1, h, w, key.clone()), Some(h.max(w))).unwrap();
    assert_eq!(full, nn_oracle(&frame, &key));
}

#[test]
fn propagate_weight_example() {
    let keys = KeyframeSet::new(vec![1, 6], 8).unwrap();
    assert_eq!(keys.neighbors(2).unwrap(), Neighbors::Between { prev: 1, next: 6 });
    assert_eq!(keys.neighbors(7).unwrap(), Neighbors::Trailing { prev: 6 });
    assert_eq!(keys.neighbors(6).unwrap(), Neighbors::Keyframe);
    assert!((linear_weight(2, 1, 6) - 0.2).abs() < 1e-15);

    let past = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
    let future = DMatrix::from_row_slice(2, 1, &[10.0, 20.0]);
    let field = CorrespondenceField {
        frame: 2,
        prev: 1,
        next: Some(6),
        nu_prev: vec![1, 0],
        nu_next: Some(vec![0, 0]),
        weight: 0.2,
    };
    let out = propagate(&field, &past, Some(&future)).unwrap();
    assert!((out[(0, 0)] - (0.2 * 10.0 + 0.8 * 3.0)).abs() < 1e-12);
    assert!((out[(1, 0)] - (0.2 * 10.0 + 0.8 * 1.0)).abs() < 1e-12);
}

#[test]
fn propagate_random_field_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, d) = (20, 4);
    let past = random(&mut rng, n, d);
    let future = random(&mut rng, n, d);
    let nu_prev: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let nu_next: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let w = 0.35;
    let field = CorrespondenceField {
        frame: 3,
        prev: 1,
        next: Some(5),
        nu_prev: nu_prev.clone(),
        nu_next: Some(nu_next.clone()),
        weight: w,
    };
    let out = propagate(&field, &past, Some(&future)).unwrap();
    for q in 0..n {
        for c in 0..d {
            let expect = w * future[(nu_next[q], c)] + (1.0 - w) * past[(nu_prev[q], c)];
            assert!((out[(q, c)] - expect).abs() < 1e-14);
        }
    }
    let bad = CorrespondenceField { nu_prev: vec![n; n], ..field };
    assert!(propagate(&bad, &past, Some(&future)).is_err());
}

#[test]
fn propagate_sequence_constant_field_is_exact_and_keyframes_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w, d, total) = (4, 4, 6, 12);
    let keys = select_keyframes(total, 5, 3).unwrap();
    let coarse: Vec<FeatureMap> = (1..=total).map(|j| fmap(j, h, w, random(&mut rng, h * w, d))).collect();
    let uniform = DMatrix::from_fn(h * w, 3, |_, c| [0.1, 0.7, 0.3][c]);
    let enhanced: BTreeMap<usize, DMatrix<f64>> = keys.frames().iter().map(|&k| (k, uniform.clone())).collect();
    let out = propagate_sequence(&keys, &coarse, &enhanced, &linear_weight, None).unwrap();
    assert_eq!(out.len(), total);
    assert!(out.iter().all(|f| *f == uniform));

    let distinct: BTreeMap<usize, DMatrix<f64>> = keys.frames().iter().map(|&k| (k, random(&mut rng, h * w, 3))).collect();
    let out = propagate_sequence(&keys, &coarse, &distinct, &linear_weight, None).unwrap();
    for &k in keys.frames() {
        assert_eq!(out[k - 1], distinct[&k]);
    }
    let last = *keys.frames().last().unwrap();
    if last < total {
        let nu = nn_correspondence(&coarse[total - 1], &coarse[last - 1], None).unwrap();
        for (q, &m) in nu.iter().enumerate() {
            assert_eq!(out[total - 1].row(q), distinct[&last].row(m));
        }
    }
}

#[test]
fn injection_gate_examples() {
    let s = InjectionSchedule::default();
    assert_eq!((s.tau_features, s.tau_attention, s.sampling_steps), (0.8, 0.8, 50));
    assert_eq!((s.inversion_steps, s.inversion_stride), (1000, 20));
    assert_eq!((s.inversion_guidance, s.sampling_guidance, s.keyframe_interval), (1.0, 7.5, 5));
    let g = injection_gate(0, 50, &s);
    assert!(g.inject_features && g.inject_attention);
    assert_eq!(injection_gate(49, 50, &s), Gate::default());
    for tau in [0.1, 0.25, 0.5, 0.8, 0.93] {
        let s = InjectionSchedule {
            tau_features: tau,
            tau_attention: tau,
            ..Default::default()
        };
        let active = (0..50).filter(|&t| injection_gate(t, 50, &s).inject_features).count();
        assert_eq!(active, (50.0 * tau).ceil() as usize, "tau {tau}");
    }
    let bad = InjectionSchedule {
        tau_features: 1.0,
        sampling_steps: 0,
        ..Default::default()
    };
    let Err(Error::InvalidArgument(msg)) = bad.validate() else { panic!() };
    assert!(msg.contains("tau_features") && msg.contains("sampling_steps"));
}

#[test]
fn controller_injects_decoder_qk_and_residuals_only() {
    let mut c = InjectionController::new(InjectionSchedule::default()).unwrap();
    let m = DMatrix::from_element(2, 2, 1.0);
    for hook in [HookPoint::ResidualOut, HookPoint::AttnQ, HookPoint::AttnK, HookPoint::AttnV, HookPoint::AttnOut] {
        for step in [0, 45] {
            c.capture(TapKey { frame: 1, layer: 3, step, hook }, m.clone());
        }
    }
    assert_eq!(c.captured(), 10);
    let key = |hook, step| TapKey { frame: 1, layer: 3, step, hook };
    assert!(c.inject(&key(HookPoint::ResidualOut, 0), LayerKind::Decoder).is_some());
    assert!(c.inject(&key(HookPoint::AttnQ, 0), LayerKind::Decoder).is_some());
    assert!(c.inject(&key(HookPoint::AttnK, 0), LayerKind::Decoder).is_some());
    assert!(c.inject(&key(HookPoint::AttnV, 0), LayerKind::Decoder).is_none());
    assert!(c.inject(&key(HookPoint::AttnOut, 0), LayerKind::Decoder).is_none());
    assert!(c.inject(&key(HookPoint::ResidualOut, 0), LayerKind::Encoder).is_none());
    assert!(c.inject(&key(HookPoint::AttnQ, 45), LayerKind::Decoder).is_none());
    assert!(c.inject(&TapKey { frame: 2, ..key(HookPoint::AttnQ, 0) }, LayerKind::Decoder).is_none());
}

#[test]
fn keyframe_selection() {
    let five = select_keyframes(5, 5, 0).unwrap();
    assert_eq!(five.frames(), &[1]);
    assert_eq!(select_keyframes(7, 1, 0).unwrap().frames(), (1..=7).collect::<Vec<_>>().as_slice());
    assert_eq!(select_keyframes(3, 10, 0).unwrap().frames(), &[1]);

    let a = select_keyframes(20, 5, 42).unwrap();
    assert_eq!(a, select_keyframes(20, 5, 42).unwrap());
    assert_eq!(a.frames(), &[1, 7, 14, 16]);
    assert_eq!(a.frames()[0], 1);
    for (w, f) in a.frames().iter().enumerate() {
        assert!((w * 5 + 1..=w * 5 + 5).contains(f));
    }
    assert!(select_keyframes(20, 0, 1).is_err());
    assert!(select_keyframes(0, 5, 1).is_err());
    assert!(KeyframeSet::new(vec![2, 5], 8).is_err());
}

#[test]
fn feature_map_tensor_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let tokens = random(&mut rng, 6, 4).map(|v| v as f32 as f64);
    let f = FeatureMap::new(7, 2, 3, tokens, "up2.attn1", Stage::Enhanced).unwrap();
    let t = f.to_tensor();
    assert_eq!(t.dims, vec![2, 3, 4]);
    assert_eq!(t.tag, "enhanced:7:up2.attn1");
    assert_eq!(t.data[4], f.tokens[(1, 0)] as f32);
    assert_eq!(FeatureMap::from_tensor(&t).unwrap(), f);
    assert!(FeatureMap::new(1, 2, 2, DMatrix::zeros(3, 2), "x", Stage::Coarse).is_err());
}

proptest! {
    #[test]
    fn nn_is_scale_invariant(seed in 0u64..1000, s in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = random(&mut rng, 16, 4);
        let key = random(&mut rng, 16, 4);
        let a = nn_correspondence(&fmap(2, 4, 4, frame.clone()), &fmap(1, 4, 4, key.clone()), None).unwrap();
        let b = nn_correspondence(&fmap(2, 4, 4, frame), &fmap(1, 4, 4, key * s), None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn blend_is_bounded(f in 0.0f64..1.0, b in 0.0f64..1.0, a in 0.0f64..=1.0) {
        let out = blend(&Image::filled(1, 1, 3, f), &Image::filled(1, 1, 1, a), &Image::filled(1, 1, 3, b)).unwrap();
        for v in out.data {
            prop_assert!(v >= f.min(b) && v <= f.max(b));
        }
    }

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, n in 1usize..12, m in 1usize..12, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = attention_weights(&(random(&mut rng, n, d) * 20.0), &(random(&mut rng, m, d) * 20.0)).unwrap();
        for r in 0..n {
            prop_assert!((a.row(r).sum() - 1.0).abs() <= 1e-6);
        }
    }
}
