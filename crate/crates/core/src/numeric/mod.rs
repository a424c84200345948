//! Dense tensors, an eager reverse-mode tape and a finite-difference
//! gradient checker.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{
    check_gradients, finite_diff_check, finite_diff_check_piecewise, relative_error, GradCheckReport, ParamCheck, SkippedElement,
};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{gate_value, sigmoid, Tape, Var};
pub use tensor::{Precision, Tensor};

pub(crate) use tape::softmax_in_place;

/// Softmax of one row, outside any tape.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2)).unwrap();
        let m = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(mat(&[&[1.0, 0.0]])).unwrap();
        let b = t.constant(mat(&[&[5.0], &[7.0]])).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[5.0]);
        assert_eq!(t.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn concat_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![3.0])).unwrap();
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);

        let e = t.constant(Tensor::vector(vec![])).unwrap();
        let d = t.concat(&[a, e], 0).unwrap();
        assert_eq!(t.value(d), t.value(a));

        let m1 = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        let m2 = t.constant(Tensor::zeros(&[3, 3])).unwrap();
        assert!(t.concat(&[m1, m2], 1).is_err());
        assert!(t.concat(&[m1, m2], 0).is_ok());
    }

    #[test]
    fn concat_gradient_is_ones() {
        let mut store = ParamStore::new();
        let pa = store.add("a", Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap()).unwrap();
        let pb = store.add("b", Tensor::new(vec![2, 1], vec![4.0, 5.0]).unwrap()).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, pa).unwrap();
        let b = t.param(&store, pb).unwrap();
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, -2.0, 4.0, 0.5, 3.0, 5.0]);
        let s = t.sum(c).unwrap();
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(pa).data(), &[1.0; 4]);
        assert_eq!(store.grad(pb).data(), &[1.0; 2]);
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0.0])).unwrap();
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);

        let x = t.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let sm = t.softmax(x).unwrap();
        assert_eq!(t.value(sm).data(), &[0.5, 0.5]);

        let big = t.constant(Tensor::vector(vec![1000.0, 0.0])).unwrap();
        let sm = t.softmax(big).unwrap();
        // exp(-1000) underflows to exactly 0 in f64
        assert_eq!(t.value(sm).data(), &[1.0, 0.0]);

        let neg = t.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!(matches!(t.log(neg), Err(Error::Domain(_))));
        let r = t.constant(Tensor::vector(vec![-1.0, 2.0])).unwrap();
        let r = t.relu(r).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1000.0])).unwrap();
        assert!(matches!(t.exp(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_examples() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(&[3])).unwrap();
        let mut t = Tape::new();
        let v = t.param(&store, p).unwrap();
        let s = t.sum(v).unwrap();
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(p).data(), &[1.0; 3]);

        store.zero_grads();
        assert_eq!(store.grad(p).data(), &[0.0; 3]);
        let mut t = Tape::new();
        let v = t.param(&store, p).unwrap();
        let sg = t.sigmoid(v).unwrap();
        let s = t.sum(sg).unwrap();
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(p).data(), &[0.25; 3]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(&[3])).unwrap();
        let mut t = Tape::new();
        let v = t.param(&store, p).unwrap();
        assert!(matches!(t.backward(v, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn gate_kinks_and_values() {
        let (a, b) = (2.2, 0.025);
        assert_eq!(gate_value(0.025, a, b), 0.0);
        assert!((gate_value(0.25, a, b) - 0.495).abs() < 1e-12);
        assert_eq!(gate_value(0.48, a, b), 1.0);
    }

    #[test]
    fn linear_loss_gradcheck_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![3, 1], vec![0.3, -1.2, 2.0]).unwrap()).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap();
        let report = check_gradients(
            |t, s| {
                let xv = t.constant(x.clone())?;
                let wv = t.param(s, w)?;
                let y = t.matmul(xv, wv)?;
                t.sum(y)
            },
            &mut store,
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-10, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -0.7])).unwrap();
        let build = |t: &mut Tape, s: &ParamStore| {
            let wv = t.param(s, w)?;
            let y = t.sigmoid(wv)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        };
        let mut tape = Tape::new();
        let l = build(&mut tape, &store).unwrap();
        tape.backward(l, &mut store).unwrap();
        store.get_mut(w).grad.data_mut()[1] *= 1.1;
        let report = finite_diff_check(
            |s| {
                let mut t = Tape::new();
                let l = build(&mut t, s)?;
                t.item(l)
            },
            &mut store,
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err() > 1e-2);
        assert_eq!(report.offenders(1e-2).count(), 1);
    }
}
