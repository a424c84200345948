//! Relationship confidence estimation.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::layers::{glorot, Linear};
use crate::numeric::{ParamId, ParamStore, Tape, Var};

/// `g_x`: linear, ReLU, linear, sigmoid; `w_b` fuses the per-class scores.
#[derive(Clone, Debug)]
pub struct RceParams {
    pub hidden: Linear,
    pub out: Linear,
    pub w_b: ParamId,
    pub num_entity_classes: usize,
    pub num_predicate_classes: usize,
}

/// Per-predicate confidence: `s_m` is `m × |C_p|`, `s_b` is `m × 1`.
#[derive(Clone, Copy, Debug)]
pub struct ConfidenceEstimate {
    pub s_m: Var,
    pub s_b: Var,
}

impl RceParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        predicate_dim: usize,
        num_entity_classes: usize,
        num_predicate_classes: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let in_dim = predicate_dim + 2 * num_entity_classes;
        let hidden = Linear::new(store, &format!("{name}.g_x.0"), in_dim, hidden_dim, true, rng)?;
        let out = Linear::new(store, &format!("{name}.g_x.1"), hidden_dim, num_predicate_classes, true, rng)?;
        let w_b = store.add(format!("{name}.w_b"), glorot(num_predicate_classes, 1, rng))?;
        Ok(Self { hidden, out, w_b, num_entity_classes, num_predicate_classes })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.hidden.params();
        v.extend(self.out.params());
        v.push(self.w_b);
        v
    }
}

/// Scores every predicate node. `simplices` is `n × |C_e|`, one class
/// distribution per entity; `subj`/`obj` index into it.
pub fn rce_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &RceParams,
    predicates: Var,
    simplices: Var,
    subj: &[usize],
    obj: &[usize],
) -> Result<ConfidenceEstimate> {
    let ps = tape.shape(simplices).to_vec();
    ensure!(
        ps.len() == 2 && ps[1] == params.num_entity_classes,
        Dimension,
        "entity simplices of shape {ps:?}, expected n x {}",
        params.num_entity_classes
    );
    let pi = tape.gather_rows(simplices, subj)?;
    let pj = tape.gather_rows(simplices, obj)?;
    let x = tape.concat(&[predicates, pi, pj], 1)?;
    let h = params.hidden.forward(tape, store, x)?;
    let h = tape.relu(h)?;
    let z = params.out.forward(tape, store, h)?;
    let s_m = tape.sigmoid(z)?;
    let w_b = tape.param(store, params.w_b)?;
    let fused = tape.matmul(s_m, w_b)?;
    let s_b = tape.sigmoid(fused)?;
    Ok(ConfidenceEstimate { s_m, s_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{sigmoid, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamStore, RceParams, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = RceParams::new(&mut store, "rce", 5, 3, 4, 6, &mut rng).unwrap();
        let r = glorot(4, 5, &mut rng);
        let simp = Tensor::from_rows(&[vec![0.2, 0.5, 0.3], vec![1.0, 0.0, 0.0], vec![0.1, 0.1, 0.8]]).unwrap();
        (store, p, r, simp)
    }

    fn dense(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
        let (n_in, n_out) = (w.rows(), w.cols());
        (0..n_out)
            .map(|o| (0..n_in).map(|i| x[i] * w.data()[i * n_out + o]).sum::<f64>() + b.map_or(0.0, |b| b.data()[o]))
            .collect()
    }

    #[test]
    fn matches_scalar_recomputation() {
        for seed in 0..5 {
            let (store, p, r, simp) = setup(seed);
            let subj = [0, 1, 2, 2];
            let obj = [1, 0, 0, 1];
            let mut tape = Tape::new();
            let rv = tape.constant(r.clone()).unwrap();
            let sv = tape.constant(simp.clone()).unwrap();
            let est = rce_forward(&mut tape, &store, &p, rv, sv, &subj, &obj).unwrap();
            for k in 0..4 {
                let mut x = r.row(k).to_vec();
                x.extend_from_slice(simp.row(subj[k]));
                x.extend_from_slice(simp.row(obj[k]));
                let h: Vec<f64> = dense(&x, store.value(p.hidden.weight), p.hidden.bias.map(|b| store.value(b)))
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect();
                let s_m: Vec<f64> =
                    dense(&h, store.value(p.out.weight), p.out.bias.map(|b| store.value(b))).into_iter().map(sigmoid).collect();
                let s_b = sigmoid(dense(&s_m, store.value(p.w_b), None)[0]);
                for (c, want) in s_m.iter().enumerate() {
                    assert!((tape.value(est.s_m).row(k)[c] - want).abs() < 1e-12);
                }
                assert!((tape.value(est.s_b).data()[k] - s_b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_fusion_weight_gives_half() {
        let (mut store, p, r, simp) = setup(1);
        store.value_mut(p.w_b).fill(0.0);
        let mut tape = Tape::new();
        let rv = tape.constant(r).unwrap();
        let sv = tape.constant(simp).unwrap();
        let est = rce_forward(&mut tape, &store, &p, rv, sv, &[0, 1, 2, 0], &[2, 2, 1, 1]).unwrap();
        assert!(tape.value(est.s_b).data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn large_output_bias_saturates() {
        let (mut store, p, r, simp) = setup(2);
        store.value_mut(p.out.bias.unwrap()).fill(50.0);
        let mut tape = Tape::new();
        let rv = tape.constant(r).unwrap();
        let sv = tape.constant(simp).unwrap();
        let est = rce_forward(&mut tape, &store, &p, rv, sv, &[0, 1, 2, 0], &[1, 2, 0, 2]).unwrap();
        assert!(tape.value(est.s_m).data().iter().all(|v| (1.0 - v) < 1e-12));
    }

    #[test]
    fn rejects_wrong_simplex_width() {
        let (store, p, r, _) = setup(3);
        let mut tape = Tape::new();
        let rv = tape.constant(r).unwrap();
        let sv = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(rce_forward(&mut tape, &store, &p, rv, sv, &[0, 1, 2, 0], &[1, 2, 0, 2]).is_err());
    }
}
