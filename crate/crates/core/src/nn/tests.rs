use super::*;
use crate::pointops::{voxelize, LabeledPointCloud};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn random_tokens(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, 99);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_points(n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut rng = rng_for(seed, 98);
    (0..n)
        .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
        .collect()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

// Loop-based reference implementation.

fn naive_linear(x: &[Vec<f64>], l: &Linear) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..l.output())
                .map(|o| l.bias[o] + (0..l.input()).map(|i| row[i] * l.weight[(i, o)]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn naive_ln(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            row.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn naive_attention(q: &DMatrix<f64>, kv: &DMatrix<f64>, p: &AttentionParams) -> DMatrix<f64> {
    let (q, kv) = (rows_of(q), rows_of(kv));
    let (qn, kvn) = (naive_ln(&q), naive_ln(&kv));
    let qp = naive_linear(&qn, &p.wq);
    let kp = naive_linear(&kvn, &p.wk);
    let vp = naive_linear(&kvn, &p.wv);
    let d = p.hidden / p.heads;
    let mut mixed = vec![vec![0.0; p.hidden]; q.len()];
    for h in 0..p.heads {
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..kv.len())
                .map(|j| (0..d).map(|c| qp[i][h * d + c] * kp[j][h * d + c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..d {
                mixed[i][h * d + c] = (0..kv.len()).map(|j| e[j] / z * vp[j][h * d + c]).sum();
            }
        }
    }
    let proj = naive_linear(&mixed, &p.wo);
    let a: Vec<Vec<f64>> = q.iter().zip(&proj).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect();
    let hid: Vec<Vec<f64>> = naive_linear(&naive_ln(&a), &p.ffn1)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let ff = naive_linear(&hid, &p.ffn2);
    let base = match &p.shortcut {
        Some(s) => naive_linear(&a, s),
        None => a,
    };
    DMatrix::from_fn(q.len(), p.dim_out(), |r, c| base[r][c] + ff[r][c])
}

#[test]
fn sat_matches_naive_oracle() {
    let p = AttentionParams::seeded(32, 4, 64, &mut rng_for(1, 0)).unwrap();
    let x = FeatureMatrix::new(random_tokens(16, 32, 2));
    let y = sat_forward(&x, &p).unwrap();
    assert_eq!(y.tokens.shape(), (16, 32));
    assert!(max_abs_diff(&y.tokens, &naive_attention(&x.tokens, &x.tokens, &p)) < 1e-6);
}

#[test]
fn cat_matches_naive_oracle() {
    let p = AttentionParams::seeded_cross(16, 24, 16, 4, 32, &mut rng_for(3, 0)).unwrap();
    let q = FeatureMatrix::new(random_tokens(8, 16, 4));
    let kv = FeatureMatrix::new(random_tokens(32, 24, 5));
    let y = cat_forward(&q, &kv, &p).unwrap();
    assert_eq!(y.tokens.shape(), (8, 16));
    assert!(max_abs_diff(&y.tokens, &naive_attention(&q.tokens, &kv.tokens, &p)) < 1e-6);
}

#[test]
fn widening_block_matches_naive_oracle() {
    let p = AttentionParams::seeded_cross(16, 16, 32, 2, 16, &mut rng_for(6, 0)).unwrap();
    let x = random_tokens(12, 16, 7);
    let y = sat_forward(&FeatureMatrix::new(x.clone()), &p).unwrap();
    assert_eq!(y.channels(), 32);
    assert!(max_abs_diff(&y.tokens, &naive_attention(&x, &x, &p)) < 1e-6);
}

#[test]
fn heads_must_divide_hidden() {
    assert!(AttentionParams::seeded(16, 3, 16, &mut rng_for(0, 0)).is_err());
}

#[test]
fn single_key_gets_full_weight() {
    // With one kv token the mixed value is that token's projected value.
    let p = AttentionParams::seeded_cross(8, 8, 8, 2, 8, &mut rng_for(8, 0)).unwrap();
    let q = FeatureMatrix::new(random_tokens(5, 8, 9));
    let kv = FeatureMatrix::new(random_tokens(1, 8, 10));
    let v = p.wo.apply(&p.wv.apply(&layer_norm(&kv.tokens)).unwrap()).unwrap();
    let mut a = q.tokens.clone();
    for mut row in a.row_iter_mut() {
        row += v.row(0);
    }
    let expect = &a + p.ffn2.apply(&relu(p.ffn1.apply(&layer_norm(&a)).unwrap())).unwrap();
    let y = cat_forward(&q, &kv, &p).unwrap();
    assert!(max_abs_diff(&y.tokens, &expect) < 1e-12);
}

#[test]
fn cat_is_invariant_to_kv_order() {
    let p = AttentionParams::seeded(16, 4, 32, &mut rng_for(11, 0)).unwrap();
    let q = FeatureMatrix::new(random_tokens(6, 16, 12));
    let kv = random_tokens(20, 16, 13);
    let perm: Vec<usize> = (0..20).rev().collect();
    let a = cat_forward(&q, &FeatureMatrix::new(kv.clone()), &p).unwrap();
    let b = cat_forward(&q, &FeatureMatrix::new(kv.select_rows(&perm)), &p).unwrap();
    assert!(max_abs_diff(&a.tokens, &b.tokens) < 1e-12);
}

#[test]
fn sat_is_permutation_equivariant() {
    let p = AttentionParams::seeded(16, 4, 32, &mut rng_for(14, 0)).unwrap();
    let x = random_tokens(10, 16, 15);
    let perm = [3, 1, 4, 0, 9, 2, 6, 5, 8, 7];
    let a = sat_forward(&FeatureMatrix::new(x.clone()), &p).unwrap().tokens;
    let b = sat_forward(&FeatureMatrix::new(x.select_rows(&perm)), &p).unwrap().tokens;
    assert!(max_abs_diff(&a.select_rows(&perm), &b) < 1e-12);
}

#[test]
fn channel_mismatch_is_rejected() {
    let p = AttentionParams::seeded(16, 4, 32, &mut rng_for(0, 0)).unwrap();
    let x = FeatureMatrix::new(random_tokens(4, 8, 0));
    assert!(matches!(sat_forward(&x, &p), Err(Error::ShapeMismatch(_))));
}

#[test]
fn gat_uses_farthest_point_queries() {
    let p = AttentionParams::seeded(16, 4, 32, &mut rng_for(16, 0)).unwrap();
    let pts = random_points(64, 17);
    let x = FeatureMatrix::with_coords(random_tokens(64, 16, 18), pts.clone()).unwrap();
    let (idx, y) = gat_forward_indexed(&x, &p, 5).unwrap();
    assert_eq!(idx, farthest_point_sample(&pts, 16, 5).unwrap());
    assert_eq!(y.len(), 16);
    let want: Vec<Point3<f64>> = idx.iter().map(|&i| pts[i]).collect();
    assert_eq!(y.coords.as_deref(), Some(&want[..]));
    let q = x.select(&idx);
    assert!(max_abs_diff(&y.tokens, &naive_attention(&q.tokens, &x.tokens, &p)) < 1e-6);
}

#[test]
fn gat_with_four_tokens_keeps_the_start() {
    let p = AttentionParams::seeded(8, 2, 8, &mut rng_for(0, 0)).unwrap();
    let x = FeatureMatrix::with_coords(random_tokens(4, 8, 1), random_points(4, 2)).unwrap();
    let (idx, y) = gat_forward_indexed(&x, &p, 2).unwrap();
    assert_eq!(idx, vec![2]);
    assert_eq!(y.len(), 1);
}

#[test]
fn gat_rejects_bad_token_counts() {
    let p = AttentionParams::seeded(8, 2, 8, &mut rng_for(0, 0)).unwrap();
    let x = FeatureMatrix::with_coords(random_tokens(6, 8, 1), random_points(6, 2)).unwrap();
    assert!(matches!(gat_forward(&x, &p, 0), Err(Error::TNotDivisible(6))));
    let bare = FeatureMatrix::new(random_tokens(8, 8, 1));
    assert!(matches!(gat_forward(&bare, &p, 0), Err(Error::ShapeMismatch(_))));
    assert!(FeatureMatrix::with_coords(random_tokens(3, 8, 1), random_points(2, 2)).is_err());
}

#[test]
fn shape_sweep() {
    for (i, &(t, c, heads)) in [
        (4, 8, 1),
        (8, 8, 2),
        (16, 16, 4),
        (32, 16, 4),
        (64, 32, 4),
        (12, 12, 3),
        (20, 24, 4),
        (40, 8, 2),
        (48, 16, 8),
        (128, 16, 4),
    ]
    .iter()
    .enumerate()
    {
        let seed = i as u64;
        let p = AttentionParams::seeded(c, heads, 4 * heads, &mut rng_for(seed, 0)).unwrap();
        let x = FeatureMatrix::with_coords(random_tokens(t, c, seed), random_points(t, seed)).unwrap();
        assert_eq!(sat_forward(&x, &p).unwrap().tokens.shape(), (t, c));
        assert_eq!(gat_forward(&x, &p, 0).unwrap().tokens.shape(), (t / 4, c));
        let q = FeatureMatrix::new(random_tokens(t / 2 + 1, c, seed + 100));
        assert_eq!(cat_forward(&q, &x, &p).unwrap().tokens.shape(), (t / 2 + 1, c));
    }
}

#[test]
fn attention_tensor_round_trip() {
    let p = AttentionParams::seeded_cross(8, 12, 16, 2, 8, &mut rng_for(20, 0)).unwrap();
    let back = AttentionParams::from_tensor_list(&p.to_tensors()).unwrap();
    assert_eq!(p, back);
}

fn vfe_cloud(n: usize, seed: u64) -> LabeledPointCloud {
    let mut c = LabeledPointCloud::new(random_points(n, seed));
    c.labels = Some((0..n).map(|i| (i % 2) as u8).collect());
    c
}

#[test]
fn vfe_single_point_voxels() {
    let params = VfeParams::seeded(8, 16, &mut rng_for(21, 0));
    let cloud = vfe_cloud(10, 22);
    let voxels = voxelize(&cloud, 1e-3).unwrap();
    let out = vfe_forward(&cloud, &voxels, &params).unwrap();
    assert_eq!(out.cells.len(), 10);
    for (r, (cell, members)) in voxels.cells.iter().enumerate() {
        assert_eq!(out.cells[r], *cell);
        let i = members[0];
        let p = cloud.points[i];
        let input = DMatrix::from_row_slice(1, 4, &[p.x, p.y, p.z, (i % 2) as f64]);
        let h1 = relu(params.layer1.apply(&input).unwrap());
        let cat = DMatrix::from_fn(1, 16, |_, c| h1[(0, c % 8)]);
        let h2 = relu(params.layer2.apply(&cat).unwrap());
        assert!(max_abs_diff(&out.features.tokens.rows(r, 1).into_owned(), &h2) < 1e-12);
    }
}

#[test]
fn vfe_ignores_duplicates_and_member_order() {
    let params = VfeParams::seeded(8, 16, &mut rng_for(23, 0));
    let cloud = vfe_cloud(60, 24);
    let base = vfe_forward(&cloud, &voxelize(&cloud, 2.5).unwrap(), &params).unwrap();

    let mut doubled = cloud.clone();
    doubled.points.extend(cloud.points.clone());
    doubled.labels.as_mut().unwrap().extend(cloud.labels.clone().unwrap());
    let dup = vfe_forward(&doubled, &voxelize(&doubled, 2.5).unwrap(), &params).unwrap();
    assert_eq!(base.cells, dup.cells);
    assert!(max_abs_diff(&base.features.tokens, &dup.features.tokens) < 1e-12);

    let perm: Vec<usize> = (0..60).rev().collect();
    let shuffled = cloud.gather(&perm);
    let sh = vfe_forward(&shuffled, &voxelize(&shuffled, 2.5).unwrap(), &params).unwrap();
    assert_eq!(base.cells, sh.cells);
    assert!(max_abs_diff(&base.features.tokens, &sh.features.tokens) < 1e-12);

    assert!(base.cells.windows(2).all(|w| w[0] < w[1]));
}

fn toy_config(seed: u64) -> NetConfig {
    NetConfig {
        heads: 4,
        hidden: 32,
        seed,
        decode_gain: 1.0,
    }
}

#[test]
fn zero_decode_passes_template_through() {
    let cfg = toy_config(30);
    let mut params = TemplateDeformParams::seeded(&cfg, &mut rng_for(30, 0)).unwrap();
    params.decode = Linear::zeros(TEMPLATE_WIDTH, 3);
    let template = random_points(50, 31);
    let g = FeatureMatrix::new(random_tokens(1, GLOBAL_WIDTH, 32));
    assert_eq!(template_deform_forward(&template, &g, &params).unwrap(), template);
}

#[test]
fn deform_keeps_count_and_is_deterministic() {
    let cfg = toy_config(33);
    let params = TemplateDeformParams::seeded(&cfg, &mut rng_for(33, 0)).unwrap();
    let template = random_points(37, 34);
    let g = FeatureMatrix::new(random_tokens(1, GLOBAL_WIDTH, 35));
    let a = template_deform_forward(&template, &g, &params).unwrap();
    assert_eq!(a.len(), 37);
    assert_eq!(a, template_deform_forward(&template, &g, &params).unwrap());
}

#[test]
fn refine_split_routes_channel_halves() {
    // Probe: a decode head reading only channel k sees token i's channel k
    // for child 0 and channel C + k for child 1.
    let features = random_tokens(5, 8, 36);
    let children = split_children(&features).unwrap();
    assert_eq!(children.shape(), (10, 4));
    for i in 0..5 {
        for k in 0..4 {
            assert_eq!(children[(i, k)], features[(i, k)]);
            assert_eq!(children[(5 + i, k)], features[(i, 4 + k)]);
        }
    }

    let cfg = toy_config(37);
    let mut params = RefineParams::seeded(16, 8, &cfg, &mut rng_for(37, 0)).unwrap();
    let k = 3;
    params.decode = Linear::zeros(16, 3);
    params.decode.weight[(k, 0)] = 1.0;
    let pts = random_points(6, 38);
    let crown = FeatureMatrix::with_coords(random_tokens(6, 16, 39), pts.clone()).unwrap();
    let ios = FeatureMatrix::new(random_tokens(12, 8, 40));
    let f = refine_features(&crown, &ios, &params).unwrap();
    let out = refine_forward(&crown, &ios, &params).unwrap();
    assert_eq!(out.len(), 12);
    for i in 0..6 {
        assert!((out[i].x - pts[i].x - f[(i, k)]).abs() < 1e-12);
        assert!((out[6 + i].x - pts[i].x - f[(i, 16 + k)]).abs() < 1e-12);
        assert_eq!(out[i].y, pts[i].y);
    }
}

#[test]
fn refine_doubles_twice() {
    let cfg = toy_config(41);
    let r1 = RefineParams::seeded(CROWN_WIDTH, IOS_WIDTH1, &cfg, &mut rng_for(41, 3)).unwrap();
    let r2 = RefineParams::seeded(CROWN_WIDTH, IOS_WIDTH0, &cfg, &mut rng_for(41, 4)).unwrap();
    let pts = random_points(24, 42);
    let once = refine_points(&pts, &FeatureMatrix::new(random_tokens(16, IOS_WIDTH1, 43)), &r1).unwrap();
    let twice = refine_points(&once, &FeatureMatrix::new(random_tokens(64, IOS_WIDTH0, 44)), &r2).unwrap();
    assert_eq!((once.len(), twice.len()), (48, 96));
    let bare = FeatureMatrix::new(random_tokens(24, CROWN_WIDTH, 0));
    assert!(refine_forward(&bare, &FeatureMatrix::new(random_tokens(4, IOS_WIDTH1, 0)), &r1).is_err());
}

#[test]
fn full_network_shapes_and_round_trip() {
    let net = CrownNet::seeded(&toy_config(45)).unwrap();
    let ios = random_points(64, 46);
    let labels: Vec<f64> = (0..64).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let template = random_points(32, 47);
    let feats = net.encoder.forward(&ios, &labels).unwrap();
    assert_eq!(feats.f0.tokens.shape(), (64, IOS_WIDTH0));
    assert_eq!(feats.f1.tokens.shape(), (16, IOS_WIDTH1));
    assert_eq!(feats.global.tokens.shape(), (1, GLOBAL_WIDTH));
    let out = net.forward(&ios, &labels, &template).unwrap();
    assert_eq!((out.coarse.len(), out.refined1.len(), out.refined2.len()), (32, 64, 128));
    assert!(out.refined2.iter().all(|p| p.coords.iter().all(|v| v.is_finite())));

    let again = CrownNet::seeded(&toy_config(45)).unwrap().forward(&ios, &labels, &template).unwrap();
    assert_eq!(out, again);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    net.save(&path).unwrap();
    assert_eq!(CrownNet::load(&path).unwrap(), net);

    assert!(net.encoder.forward(&ios[..60], &labels[..60]).is_err());
}

#[test]
fn large_inputs_stay_finite() {
    let p = AttentionParams::seeded(16, 4, 32, &mut rng_for(50, 0)).unwrap();
    let x = FeatureMatrix::new(random_tokens(16, 16, 51) * 1e3);
    assert!(sat_forward(&x, &p).unwrap().tokens.iter().all(|v| v.is_finite()));
    let net = CrownNet::seeded(&toy_config(52)).unwrap();
    let ios: Vec<Point3<f64>> = random_points(32, 53).iter().map(|p| p * 200.0).collect();
    let labels = vec![1.0; 32];
    let out = net.forward(&ios, &labels, &random_points(16, 54)).unwrap();
    assert!(out.refined2.iter().all(|p| p.coords.iter().all(|v| v.is_finite())));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cat_kv_permutation_invariance(seed in 0u64..1000, rot in 1usize..15) {
        let p = AttentionParams::seeded(8, 2, 8, &mut rng_for(seed, 0)).unwrap();
        let q = FeatureMatrix::new(random_tokens(4, 8, seed + 1));
        let kv = random_tokens(16, 8, seed + 2);
        let perm: Vec<usize> = (0..16).map(|i| (i + rot) % 16).collect();
        let a = cat_forward(&q, &FeatureMatrix::new(kv.clone()), &p).unwrap();
        let b = cat_forward(&q, &FeatureMatrix::new(kv.select_rows(&perm)), &p).unwrap();
        prop_assert!(max_abs_diff(&a.tokens, &b.tokens) < 1e-6);
    }

    #[test]
    fn sat_equivariance(seed in 0u64..1000, rot in 1usize..11) {
        let p = AttentionParams::seeded(8, 2, 8, &mut rng_for(seed, 0)).unwrap();
        let x = random_tokens(12, 8, seed + 3);
        let perm: Vec<usize> = (0..12).map(|i| (i + rot) % 12).collect();
        let a = sat_forward(&FeatureMatrix::new(x.clone()), &p).unwrap().tokens;
        let b = sat_forward(&FeatureMatrix::new(x.select_rows(&perm)), &p).unwrap().tokens;
        prop_assert!(max_abs_diff(&a.select_rows(&perm), &b) < 1e-6);
    }
}
