use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numeric::{check_gradients, ParamStore};

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.item(v).unwrap()
}

fn mat(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn cross_entropy_examples() {
    let one_hot_target = eval(|t| {
        let p = t.constant(mat(&[vec![0.0, 1.0, 0.0]]))?;
        cross_entropy(t, p, &[1])
    });
    assert_eq!(one_hot_target, 0.0);
    let uniform = eval(|t| {
        let p = t.constant(mat(&[vec![0.25; 4]]))?;
        cross_entropy(t, p, &[2])
    });
    assert!((uniform - 4f64.ln()).abs() < 1e-12);
    let rows = vec![vec![0.1, 0.9], vec![0.6, 0.4], vec![0.5, 0.5]];
    let batch = eval(|t| {
        let p = t.constant(mat(&rows))?;
        cross_entropy(t, p, &[1, 1, 0])
    });
    let want = -(0.9f64.ln() + 0.4f64.ln() + 0.5f64.ln()) / 3.0;
    assert!((batch - want).abs() < 1e-12);
    let floored = eval(|t| {
        let p = t.constant(mat(&[vec![1.0, 0.0]]))?;
        cross_entropy(t, p, &[1])
    });
    assert!((floored + CE_FLOOR.ln()).abs() < 1e-9);
    let mut tape = Tape::new();
    let p = tape.constant(mat(&[vec![0.5, 0.5]])).unwrap();
    assert!(cross_entropy(&mut tape, p, &[2]).is_err());
}

#[test]
fn focal_examples() {
    let half = eval(|t| {
        let s = t.constant(mat(&[vec![0.5, 0.2]]))?;
        focal_multi(t, s, &[Some(0)], 0.25, 2.0, false)
    });
    assert!((half - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
    assert!((half - 0.0433).abs() < 1e-4);
    let perfect = eval(|t| {
        let s = t.constant(mat(&[vec![1.0, 0.3]]))?;
        focal_multi(t, s, &[Some(0)], 0.25, 2.0, false)
    });
    assert!(perfect.abs() < 1e-12);
    let background = eval(|t| {
        let s = t.constant(mat(&[vec![0.9, 0.3]]))?;
        focal_multi(t, s, &[None], 0.25, 2.0, false)
    });
    assert_eq!(background, 0.0);
    let b_half = eval(|t| {
        let s = t.constant(mat(&[vec![0.5]]))?;
        focal_binary(t, s, &[true], 0.25, 2.0, false)
    });
    assert!((b_half - 0.0433).abs() < 1e-4);
    let b_neg = eval(|t| {
        let s = t.constant(mat(&[vec![0.7]]))?;
        focal_binary(t, s, &[false], 0.25, 2.0, false)
    });
    assert_eq!(b_neg, 0.0);
    let b_neg_full = eval(|t| {
        let s = t.constant(mat(&[vec![0.7]]))?;
        focal_binary(t, s, &[false], 0.25, 2.0, true)
    });
    assert!((b_neg_full - 0.75 * 0.49 * -(0.3f64.ln())).abs() < 1e-12);
    let b_one = eval(|t| {
        let s = t.constant(mat(&[vec![1.0]]))?;
        focal_binary(t, s, &[true], 0.25, 2.0, false)
    });
    assert!(b_one.abs() < 1e-12);
}

#[test]
fn focal_without_modulation_is_scaled_positive_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let m = rng.gen_range(1..6);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..4).map(|_| rng.gen_range(0.01..0.99)).collect()).collect();
        let labels: Vec<Option<usize>> = (0..m).map(|_| if rng.gen_bool(0.7) { Some(rng.gen_range(0..4)) } else { None }).collect();
        let got = eval(|t| {
            let s = t.constant(mat(&rows))?;
            focal_multi(t, s, &labels, 0.25, 0.0, false)
        });
        let want: f64 = rows.iter().zip(&labels).filter_map(|(r, l)| l.map(|c| -r[c].ln())).sum::<f64>() * 0.25 / m as f64;
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn bce_examples() {
    let perfect = eval(|t| {
        let s = t.constant(mat(&[vec![1.0, 0.0]]))?;
        bce_relatedness(t, s, &mat(&[vec![1.0, 0.0]]))
    });
    assert!(perfect < 1e-6);
    let half = eval(|t| {
        let s = t.constant(mat(&[vec![0.5, 0.5], vec![0.5, 0.5]]))?;
        bce_relatedness(t, s, &mat(&[vec![1.0, 0.0], vec![0.0, 0.0]]))
    });
    assert!((half - 2.0 * 2f64.ln()).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(0.01..0.99)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect()).collect();
    let got = eval(|t| {
        let s = t.constant(mat(&rows))?;
        bce_relatedness(t, s, &mat(&ys))
    });
    let mut want = 0.0;
    for (r, y) in rows.iter().zip(&ys) {
        for (p, y) in r.iter().zip(y) {
            want -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    assert!((got - want / 4.0).abs() < 1e-12);
}

#[test]
fn total_loss_examples() {
    let run = |cfg: &LossConfig| {
        eval(|t| {
            let c = |t: &mut Tape, v: f64| t.constant(Tensor::scalar(v));
            let (lp, le, lm, lb) = (c(t, 1.0)?, c(t, 2.0)?, c(t, 3.0)?, c(t, 4.0)?);
            total_loss(t, lp, Some(le), &[RceTerms { l_m: lm, l_b: lb }], cfg)
        })
    };
    assert_eq!(run(&LossConfig::default()), 10.0);
    assert_eq!(run(&LossConfig { lambda_rce: 0.0, lambda_e: 0.0, lambda_b: 0.0, ..Default::default() }), 1.0);
    assert!(LossConfig { lambda_e: -1.0, ..Default::default() }.validate().is_err());
}

#[test]
fn losses_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let labels = [Some(0), None, Some(2)];
        for full in [false, true] {
            let v = eval(|t| {
                let s = t.constant(mat(&rows))?;
                focal_multi(t, s, &labels, 0.25, 2.0, full)
            });
            assert!(v >= 0.0);
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let logits = store.add("logits", crate::layers::glorot(4, 3, &mut rng)).unwrap();
    let labels = [Some(1), None, Some(0), Some(2)];
    let related = [true, false, true, true];
    for full in [false, true] {
        let build = |t: &mut Tape, s: &ParamStore| -> Result<Var> {
            let z = t.param(s, logits)?;
            let probs = t.softmax(z)?;
            let scores = t.sigmoid(z)?;
            let ce = cross_entropy(t, probs, &[1, 0, 0, 2])?;
            let fm = focal_multi(t, scores, &labels, 0.25, 2.0, full)?;
            let col = t.gather_rows(scores, &[0, 1, 2, 3])?;
            let w = t.constant(Tensor::new(vec![3, 1], vec![0.3, -0.2, 0.5])?)?;
            let sb = t.matmul(col, w)?;
            let sb = t.sigmoid(sb)?;
            let fb = focal_binary(t, sb, &related, 0.25, 2.0, full)?;
            let bce = bce_relatedness(t, scores, &one_hot(&labels, 3)?)?;
            let a = t.add(ce, fm)?;
            let b = t.add(fb, bce)?;
            t.add(a, b)
        };
        let report = check_gradients(build, &mut store, &[logits], 1e-5).unwrap();
        assert!(report.passes(1e-4), "{:?}", report.params);
    }
}
