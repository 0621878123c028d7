use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::finite_difference_check;

type Mat = Vec<Vec<f64>>;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

fn t(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()))
}

fn sigm(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mm_t(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b.len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b.len() {
            for k in 0..a[0].len() {
                out[i][j] += a[i][k] * b[j][k];
            }
        }
    }
    out
}

fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|&v| f(v)).collect())
        .collect()
}

fn softmax(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let z: f64 = r.iter().map(|v| v.exp()).sum();
            r.iter().map(|v| v.exp() / z).collect()
        })
        .collect()
}

fn assert_close(tensor: &Tensor, expect: &Mat, tol: f64) {
    let flat: Vec<f64> = expect.concat();
    assert_eq!(tensor.numel(), flat.len());
    for (a, b) in tensor.data().iter().zip(&flat) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }
}

#[test]
fn ria_attention_zero_queries_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::zeros(&[4, 3]));
    let f = tape.constant(t(&rand_mat(&mut rng, 6, 3, 1.0)));
    let w = tape.constant(t(&rand_mat(&mut rng, 3, 3, 1.0)));
    let a = ria_attention(&mut tape, q, f, w).unwrap();
    assert_eq!(tape.shape(a), &[4, 6]);
    assert!(tape
        .value(a)
        .data()
        .iter()
        .all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn ria_attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // 2x2 grid, one region, two channels
    let (q, f, w) = (
        rand_mat(&mut rng, 1, 2, 1.0),
        rand_mat(&mut rng, 4, 2, 1.0),
        rand_mat(&mut rng, 2, 2, 1.0),
    );
    let expect = softmax(&mm_t(&q, &map(&mm(&f, &w), gelu)));
    let mut tape = Tape::new();
    let (qv, fv, wv) = (
        tape.constant(t(&q)),
        tape.constant(t(&f)),
        tape.constant(t(&w)),
    );
    let a = ria_attention(&mut tape, qv, fv, wv).unwrap();
    assert_close(tape.value(a), &expect, 1e-10);
}

#[test]
fn ria_attention_channel_mismatch() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::zeros(&[4, 3]));
    let f = tape.constant(Tensor::zeros(&[6, 2]));
    let w = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(
        ria_attention(&mut tape, q, f, w),
        Err(GresError::Dimension { .. })
    ));
}

#[test]
fn ria_collect_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = rand_mat(&mut rng, 5, 3, 1.0);
    let w = rand_mat(&mut rng, 3, 3, 1.0);
    let transformed = map(&mm(&f, &w), gelu);

    // uniform attention → mean of transformed rows
    let uniform = vec![vec![0.2; 5]; 2];
    let mean: Vec<f64> = (0..3)
        .map(|c| transformed.iter().map(|r| r[c]).sum::<f64>() / 5.0)
        .collect();
    // one-hot → that row
    let onehot = vec![vec![0.0, 0.0, 1.0, 0.0, 0.0]];
    // random stochastic rows → matrix product
    let raw = rand_mat(&mut rng, 3, 5, 2.0);
    let stochastic = softmax(&raw);

    for (a, expect) in [
        (uniform, vec![mean.clone(), mean]),
        (onehot, vec![transformed[2].clone()]),
        (stochastic.clone(), mm(&stochastic, &transformed)),
    ] {
        let mut tape = Tape::new();
        let (av, fv, wv) = (
            tape.constant(t(&a)),
            tape.constant(t(&f)),
            tape.constant(t(&w)),
        );
        let out = ria_collect(&mut tape, av, fv, wv).unwrap();
        assert_close(tape.value(out), &expect, 1e-10);
    }
}

#[test]
fn region_filter_affine_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_mat(&mut rng, 4, 3, 1.0);
    let bias = vec![0.5, -1.0, 2.0];

    let mut tape = Tape::new();
    let xv = tape.constant(t(&x));
    let zero_w = tape.constant(Tensor::zeros(&[3, 3]));
    let b = tape.constant(Tensor::new(vec![3], bias.clone()).unwrap());
    let out = region_filter(&mut tape, xv, zero_w, b).unwrap();
    assert_close(tape.value(out), &vec![bias; 4], 0.0 + 1e-15);

    let eye = tape.constant(Tensor::eye(3));
    let zb = tape.constant(Tensor::zeros(&[3]));
    let out = region_filter(&mut tape, xv, eye, zb).unwrap();
    assert_close(tape.value(out), &x, 1e-15);
}

#[test]
fn self_attention_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (wq, wk, wv) = (
        rand_mat(&mut rng, 3, 3, 1.0),
        rand_mat(&mut rng, 3, 3, 1.0),
        rand_mat(&mut rng, 3, 3, 1.0),
    );
    let run = |x: &Mat| {
        let mut tape = Tape::new();
        let xv = tape.constant(t(x));
        let (a, b, c) = (
            tape.constant(t(&wq)),
            tape.constant(t(&wk)),
            tape.constant(t(&wv)),
        );
        let out = rla_self_attention(&mut tape, xv, a, b, c).unwrap();
        tape.value(out).clone()
    };

    let single = rand_mat(&mut rng, 1, 3, 1.0);
    assert_close(&run(&single), &mm(&single, &wv), 1e-12);

    let row = rand_mat(&mut rng, 1, 3, 1.0)[0].clone();
    let same = run(&vec![row; 3]);
    assert_eq!(same.row(0), same.row(1));
    assert_eq!(same.row(1), same.row(2));

    let x = rand_mat(&mut rng, 4, 3, 1.0);
    let logits = map(&mm_t(&mm(&x, &wq), &mm(&x, &wk)), |v| v / 3f64.sqrt());
    let expect = mm(&softmax(&logits), &mm(&x, &wv));
    assert_close(&run(&x), &expect, 1e-10);
}

#[test]
fn cross_attention_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (wq, wk) = (rand_mat(&mut rng, 3, 3, 1.0), rand_mat(&mut rng, 3, 3, 1.0));
    let run = |r: &Mat, words: &Mat, wq: &Mat| {
        let mut tape = Tape::new();
        let (rv, tv) = (tape.constant(t(r)), tape.constant(t(words)));
        let (a, b) = (tape.constant(t(wq)), tape.constant(t(&wk)));
        let (a_l, f_r2) = rla_cross_attention(&mut tape, rv, tv, a, b).unwrap();
        (tape.value(a_l).clone(), tape.value(f_r2).clone())
    };
    let regions = rand_mat(&mut rng, 4, 3, 1.0);

    let one_word = rand_mat(&mut rng, 1, 3, 1.0);
    let (a_l, f_r2) = run(&regions, &one_word, &wq);
    assert!(a_l.data().iter().all(|&v| v == 1.0));
    assert_close(&f_r2, &vec![one_word[0].clone(); 4], 1e-15);

    let words = rand_mat(&mut rng, 3, 3, 1.0);
    let mean: Vec<f64> = (0..3)
        .map(|c| words.iter().map(|r| r[c]).sum::<f64>() / 3.0)
        .collect();
    let (a_l, f_r2) = run(&regions, &words, &vec![vec![0.0; 3]; 3]);
    assert!(a_l.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    assert_close(&f_r2, &vec![mean; 4], 1e-12);

    let a = softmax(&mm_t(
        &map(&mm(&regions, &wq), gelu),
        &map(&mm(&words, &wk), gelu),
    ));
    let (a_l, f_r2) = run(&regions, &words, &wq);
    assert_close(&a_l, &a, 1e-10);
    assert_close(&f_r2, &mm(&a, &words), 1e-10);
}

fn fuse_with(parts: [&Mat; 3], mlp: [&Mat; 4]) -> Tensor {
    let mut tape = Tape::new();
    let [a, b, c] = parts.map(|m| tape.constant(t(m)));
    let vars = mlp.map(|m| {
        let tensor = if m.len() == 1 {
            Tensor::new(vec![m[0].len()], m[0].clone()).unwrap()
        } else {
            t(m)
        };
        tape.constant(tensor)
    });
    let out = rla_fuse(&mut tape, a, Some(b), c, vars).unwrap();
    tape.value(out).clone()
}

#[test]
fn fuse_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, y, z) = (
        rand_mat(&mut rng, 4, 3, 1.0),
        rand_mat(&mut rng, 4, 3, 1.0),
        rand_mat(&mut rng, 4, 3, 1.0),
    );
    let (w1, b1) = (rand_mat(&mut rng, 3, 3, 1.0), rand_mat(&mut rng, 1, 3, 1.0));
    let (w2, b2) = (rand_mat(&mut rng, 3, 3, 1.0), rand_mat(&mut rng, 1, 3, 1.0));

    let zeros = vec![vec![0.0; 3]; 3];
    let zb = vec![vec![0.0; 3]];
    let dead = fuse_with([&x, &y, &z], [&w1, &b1, &zeros, &zb]);
    assert!(dead.data().iter().all(|&v| v == 0.0));

    let a = fuse_with([&x, &y, &z], [&w1, &b1, &w2, &b2]);
    let b = fuse_with([&x, &z, &y], [&w1, &b1, &w2, &b2]);
    assert!(a.max_abs_diff(&b) < 1e-15);

    let sum: Mat = (0..4)
        .map(|i| (0..3).map(|j| x[i][j] + y[i][j] + z[i][j]).collect())
        .collect();
    let hidden: Mat = mm(&sum, &w1)
        .iter()
        .map(|r| r.iter().zip(&b1[0]).map(|(v, b)| gelu(v + b)).collect())
        .collect();
    let expect: Mat = mm(&hidden, &w2)
        .iter()
        .map(|r| r.iter().zip(&b2[0]).map(|(v, b)| v + b).collect())
        .collect();
    assert_close(&a, &expect, 1e-10);
}

#[test]
fn region_mask_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fm = rand_mat(&mut rng, 6, 3, 3.0);
    let mut tape = Tape::new();
    let zero = tape.constant(Tensor::zeros(&[4, 3]));
    let fmv = tape.constant(t(&fm));
    let m = region_masks(&mut tape, zero, fmv).unwrap();
    assert!(tape.value(m).data().iter().all(|&v| v == 0.5));

    let ff = rand_mat(&mut rng, 4, 3, 3.0);
    let ffv = tape.constant(t(&ff));
    let m = region_masks(&mut tape, ffv, fmv).unwrap();
    assert!(tape.value(m).data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_close(tape.value(m), &map(&mm_t(&ff, &fm), sigm), 1e-10);
}

#[test]
fn head_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fr = rand_mat(&mut rng, 4, 3, 1.0);
    let w = rand_mat(&mut rng, 3, 1, 1.0);
    let bias = 0.3;
    let mut tape = Tape::new();
    let frv = tape.constant(t(&fr));
    let zw = tape.constant(Tensor::zeros(&[3, 1]));
    let zb = tape.constant(Tensor::zeros(&[1]));
    let x = minimap_head(&mut tape, frv, zw, zb).unwrap();
    let e = no_target_head(&mut tape, frv, zw, zb).unwrap();
    assert!(tape.value(x).data().iter().all(|&v| v == 0.5));
    assert_eq!(tape.value(e).item(), 0.5);

    let wv = tape.constant(t(&w));
    let bv = tape.constant(Tensor::scalar(bias));
    let x = minimap_head(&mut tape, frv, wv, bv).unwrap();
    assert_eq!(tape.shape(x), &[4]);
    for (n, row) in fr.iter().enumerate() {
        let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b[0]).sum::<f64>() + bias;
        assert!((tape.value(x).data()[n] - sigm(z)).abs() < 1e-12);
    }
    let e = no_target_head(&mut tape, frv, wv, bv).unwrap();
    let mean: Vec<f64> = (0..3)
        .map(|c| fr.iter().map(|r| r[c]).sum::<f64>() / 4.0)
        .collect();
    let z: f64 = mean.iter().zip(&w).map(|(a, b)| a * b[0]).sum::<f64>() + bias;
    assert!((tape.value(e).item() - sigm(z)).abs() < 1e-12);

    // identical rows → identical minimap entries; permuted rows → identical E
    let same = tape.constant(t(&vec![fr[1].clone(); 4]));
    let x = minimap_head(&mut tape, same, wv, bv).unwrap();
    let d = tape.value(x).data();
    assert!(d.iter().all(|&v| v == d[0]));
    let permuted: Mat = vec![fr[2].clone(), fr[0].clone(), fr[3].clone(), fr[1].clone()];
    let pv = tape.constant(t(&permuted));
    let e2 = no_target_head(&mut tape, pv, wv, bv).unwrap();
    assert!((tape.value(e2).item() - sigm(z)).abs() < 1e-15);
}

fn aggregate(x: &[f64], m_r: &Mat, mode: AggregationMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![x.len()], x.to_vec()).unwrap());
    let mv = tape.constant(t(m_r));
    let m = aggregate_mask(&mut tape, xv, mv, mode)?;
    Ok(tape.value(m).clone())
}

#[test]
fn aggregation_cases() {
    let m_r = vec![vec![0.1, 0.9, 0.4, 0.6], vec![0.7, 0.2, 0.5, 0.3]];
    let x = [0.8, 0.4];

    // scalar oracle for both modes
    let total = 0.8 + 0.4 + AGGREGATION_EPS;
    let norm: Vec<f64> = (0..4)
        .map(|p| (0.8 * m_r[0][p] + 0.4 * m_r[1][p]) / total)
        .collect();
    let lit: Vec<f64> = (0..4)
        .map(|p| (0.8 * m_r[0][p] + 0.4 * m_r[1][p]).min(1.0))
        .collect();
    assert_close(
        &aggregate(&x, &m_r, AggregationMode::Normalized).unwrap(),
        &vec![norm],
        1e-12,
    );
    assert_close(
        &aggregate(&x, &m_r, AggregationMode::Literal).unwrap(),
        &vec![lit],
        1e-12,
    );

    let onehot = [1.0 - 1e-9, 1e-9];
    for mode in [AggregationMode::Normalized, AggregationMode::Literal] {
        let m = aggregate(&onehot, &m_r, mode).unwrap();
        assert_close(&m, &vec![m_r[0].clone()], 1e-6);
    }

    let same = vec![m_r[0].clone(); 2];
    let m = aggregate(&[0.3, 0.6], &same, AggregationMode::Normalized).unwrap();
    assert_close(&m, &vec![m_r[0].clone()], 1e-6);

    assert!(matches!(
        aggregate(&[0.5, -0.1], &m_r, AggregationMode::Normalized),
        Err(GresError::Contract(_))
    ));
    assert!(aggregate(&[0.5], &m_r, AggregationMode::Normalized).is_err());
}

#[test]
fn hard_split_matrix_is_cellwise_mean() {
    let pool = hard_split_pooling_matrix(4, 4, 2).unwrap();
    assert_eq!(pool.shape(), &[4, 16]);
    for r in 0..4 {
        assert!((pool.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    assert_eq!(pool.get(0, 0), 0.25);
    assert_eq!(pool.get(0, 5), 0.25);
    assert_eq!(pool.get(0, 2), 0.0);
    assert_eq!(pool.get(3, 15), 0.25);
    assert!(hard_split_pooling_matrix(3, 3, 4).is_err());
}

fn prediction_output(m: Vec<f64>, e: f64, h: usize, w: usize) -> RelaOutput {
    RelaOutput {
        m: Tensor::new(vec![h * w], m).unwrap(),
        x_r: Tensor::scalar(1.0),
        e,
        m_r: Tensor::zeros(&[1, h * w]),
        a_ri: Tensor::full(&[1, h * w], 1.0 / (h * w) as f64),
        a_l: Tensor::scalar(1.0),
        h,
        w,
    }
}

#[test]
fn classifier_prediction_rule() {
    let cfg = PredictConfig::default();
    let out = prediction_output(vec![0.9; 16], 0.99, 4, 4);
    let p = predict(&out, 16, 16, &cfg);
    assert!(p.no_target && p.mask.is_empty());

    let out = prediction_output(vec![0.9; 16], 0.01, 4, 4);
    let p = predict(&out, 16, 16, &cfg);
    assert!(!p.no_target);
    assert_eq!((p.mask.height, p.mask.width, p.mask.count()), (16, 16, 256));
}

#[test]
fn fifty_pixel_rule_boundary() {
    let cfg = PredictConfig {
        mode: NoTargetMode::FiftyPix,
        ..PredictConfig::default()
    };
    for (positives, cleared) in [(49usize, true), (50, false)] {
        let m: Vec<f64> = (0..100)
            .map(|i| if i < positives { 0.8 } else { 0.1 })
            .collect();
        // e is ignored in this mode
        let out = prediction_output(m, 0.99, 10, 10);
        let p = predict(&out, 10, 10, &cfg);
        assert_eq!(p.no_target, cleared, "{positives}");
        assert_eq!(p.mask.count(), if cleared { 0 } else { positives });
    }
}

fn small_model(cfg: RelaConfig, seed: u64) -> (ParamSet, Rela) {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rela = Rela::register(&mut params, cfg, &mut rng).unwrap();
    (params, rela)
}

fn features(
    tape: &mut Tape,
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
    words: usize,
) -> (ImageFeature, TextFeature, MaskFeature) {
    let fi = tape.constant(t(&rand_mat(rng, h * w, c, 1.0)));
    let ft = tape.constant(t(&rand_mat(rng, words, c, 1.0)));
    let fm = tape.constant(t(&rand_mat(rng, h * w, c, 1.0)));
    (
        ImageFeature { var: fi, h, w, c },
        TextFeature {
            var: ft,
            token_ids: vec![2; words],
        },
        MaskFeature { var: fm, h, w },
    )
}

#[test]
fn forward_equals_manual_staging() {
    let cfg = RelaConfig::full(2, 4);
    let (params, rela) = small_model(cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut tape = Tape::new();
    let (fi, ft, fm) = features(&mut tape, &mut rng, 3, 3, 4, 3);
    let out = rela
        .forward(&mut tape, &params, &fi, &ft, &fm)
        .unwrap()
        .output(&tape);
    assert_eq!(out.m.shape(), &[9]);
    assert_eq!(out.x_r.shape(), &[4]);
    assert!(out.m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let p = |tape: &mut Tape, name: &str| tape.param(&params, params.id(name).unwrap());
    let q = p(&mut tape, "queries.q_r");
    let w_ik = p(&mut tape, "ria.w_ik");
    let w_iv = p(&mut tape, "ria.w_iv");
    let a_ri = ria_attention(&mut tape, q, fi.var, w_ik).unwrap();
    let frp = ria_collect(&mut tape, a_ri, fi.var, w_iv).unwrap();
    let (fw, fb) = (p(&mut tape, "ria.filter.w"), p(&mut tape, "ria.filter.b"));
    let ff = region_filter(&mut tape, frp, fw, fb).unwrap();
    let (sq, sk, sv) = (
        p(&mut tape, "rla.self.wq"),
        p(&mut tape, "rla.self.wk"),
        p(&mut tape, "rla.self.wv"),
    );
    let fr1 = rla_self_attention(&mut tape, frp, sq, sk, sv).unwrap();
    let (lq, lk) = (p(&mut tape, "rla.w_lq"), p(&mut tape, "rla.w_lk"));
    let (a_l, fr2) = rla_cross_attention(&mut tape, frp, ft.var, lq, lk).unwrap();
    let mlp = [
        "rla.fuse.fc1.w",
        "rla.fuse.fc1.b",
        "rla.fuse.fc2.w",
        "rla.fuse.fc2.b",
    ]
    .map(|n| p(&mut tape, n));
    let fr = rla_fuse(&mut tape, frp, Some(fr1), fr2, mlp).unwrap();
    let (mw, mb) = (
        p(&mut tape, "heads.minimap.w"),
        p(&mut tape, "heads.minimap.b"),
    );
    let x = minimap_head(&mut tape, fr, mw, mb).unwrap();
    let (nw, nb) = (
        p(&mut tape, "heads.no_target.w"),
        p(&mut tape, "heads.no_target.b"),
    );
    let e = no_target_head(&mut tape, fr, nw, nb).unwrap();
    let mr = region_masks(&mut tape, ff, fm.var).unwrap();
    let m = aggregate_mask(&mut tape, x, mr, AggregationMode::Normalized).unwrap();

    assert_eq!(&out.a_ri, tape.value(a_ri));
    assert_eq!(&out.a_l, tape.value(a_l));
    assert_eq!(&out.x_r, tape.value(x));
    assert_eq!(out.e, tape.value(e).item());
    assert_eq!(&out.m_r, tape.value(mr));
    assert_eq!(&out.m, tape.value(m));
}

#[test]
fn forward_rejects_channel_mismatch() {
    let (params, rela) = small_model(RelaConfig::full(2, 4), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let (fi, _, fm) = features(&mut tape, &mut rng, 3, 3, 4, 2);
    let ft = tape.constant(t(&rand_mat(&mut rng, 2, 5, 1.0)));
    let ft = TextFeature {
        var: ft,
        token_ids: vec![2, 2],
    };
    assert!(matches!(
        rela.forward(&mut tape, &params, &fi, &ft, &fm),
        Err(GresError::Dimension { .. })
    ));
}

#[test]
fn hard_split_on_constant_feature_gives_identical_regions() {
    let cfg = RelaConfig {
        hard_split_pooling: true,
        ..RelaConfig::full(4, 4)
    };
    let (params, rela) = small_model(cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tape = Tape::new();
    let (_, ft, fm) = features(&mut tape, &mut rng, 12, 12, 4, 3);
    let row = rand_mat(&mut rng, 1, 4, 1.0)[0].clone();
    let fi = tape.constant(t(&vec![row; 144]));
    let fi = ImageFeature {
        var: fi,
        h: 12,
        w: 12,
        c: 4,
    };
    let vars = rela.forward(&mut tape, &params, &fi, &ft, &fm).unwrap();
    let frp = tape.value(vars.f_r_prime);
    for r in 1..16 {
        assert_eq!(frp.row(r), frp.row(0));
    }
}

#[test]
fn every_parameter_gets_gradient_and_matches_finite_differences() {
    let cfg = RelaConfig::full(2, 3);
    let (mut params, rela) = small_model(cfg, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let fi = t(&rand_mat(&mut rng, 9, 3, 1.0));
    let ft = t(&rand_mat(&mut rng, 2, 3, 1.0));
    let fm = t(&rand_mat(&mut rng, 9, 3, 1.0));
    let target = Tensor::new(vec![9], (0..9).map(|i| f64::from(i % 2)).collect()).unwrap();
    let report = finite_difference_check(&mut params, 1e-4, |tape, p| {
        let fi = ImageFeature {
            var: tape.constant(fi.clone()),
            h: 3,
            w: 3,
            c: 3,
        };
        let ft = TextFeature {
            var: tape.constant(ft.clone()),
            token_ids: vec![2, 3],
        };
        let fm = MaskFeature {
            var: tape.constant(fm.clone()),
            h: 3,
            w: 3,
        };
        let v = rela.forward(tape, p, &fi, &ft, &fm)?;
        let l1 = tape.bce(v.m, &target, 1e-7)?;
        let l2 = tape.bce(
            v.x_r,
            &Tensor::new(vec![4], vec![1.0, 0.0, 0.5, 0.25]).unwrap(),
            1e-7,
        )?;
        let l3 = tape.bce(v.e, &Tensor::scalar(0.0), 1e-7)?;
        let s = tape.add(l1, l2)?;
        tape.add(s, l3)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
    assert!(
        report.zero_grad_params.is_empty(),
        "{:?}",
        report.zero_grad_params
    );
}

#[test]
fn invariants_hold_for_table_region_counts() {
    for p in [4usize, 8, 10, 12] {
        let (params, rela) = small_model(RelaConfig::full(p, 8), p as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + p as u64);
        let mut tape = Tape::new();
        let (fi, ft, fm) = features(&mut tape, &mut rng, 12, 12, 8, 4);
        let out = rela
            .forward(&mut tape, &params, &fi, &ft, &fm)
            .unwrap()
            .output(&tape);
        assert_eq!(out.x_r.shape(), &[p * p]);
        assert_eq!(out.m_r.shape(), &[p * p, 144]);
        assert_eq!(out.a_l.shape(), &[p * p, 4]);
        for r in 0..p * p {
            assert!((out.a_ri.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((out.a_l.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for v in out
            .m
            .data()
            .iter()
            .chain(out.x_r.data())
            .chain(out.m_r.data())
        {
            assert!((0.0..=1.0).contains(v));
        }
        assert!((0.0..=1.0).contains(&out.e));
    }
}
