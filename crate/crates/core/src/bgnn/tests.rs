use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::layers::glorot;
use crate::numeric::{check_gradients, gate_value, sigmoid, Tensor};

const DIMS: StageDims = StageDims { entity_dim: 5, predicate_dim: 4, num_entity_classes: 3, num_predicate_classes: 6, rce_hidden: 7 };

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `x · W` for a row vector against an `in × out` weight.
fn vm(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.rows(), w.cols());
    assert_eq!(x.len(), n_in);
    (0..n_out).map(|o| (0..n_in).map(|i| x[i] * w.data()[i * n_out + o]).sum()).collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

struct World {
    store: ParamStore,
    params: BgnnParams,
    cfg: BgnnConfig,
    entities: Tensor,
    predicates: Tensor,
    simplices: Tensor,
    pairs: Vec<(usize, usize)>,
}

fn random_world(seed: u64, n: usize, cfg: BgnnConfig) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = BgnnParams::new(&mut store, &cfg, DIMS, &mut rng).unwrap();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.6) {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 1));
    }
    let entities = glorot(n, DIMS.entity_dim, &mut rng);
    let predicates = glorot(pairs.len(), DIMS.predicate_dim, &mut rng);
    let simplices = Tensor::from_rows(
        &(0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..DIMS.num_entity_classes).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect::<Vec<_>>(),
    )
    .unwrap();
    World { store, params, cfg, entities, predicates, simplices, pairs }
}

fn graph_on(tape: &mut Tape, w: &World) -> (BipartiteGraph, Var) {
    let entities = tape.constant(w.entities.clone()).unwrap();
    let predicates = tape.constant(w.predicates.clone()).unwrap();
    let simplices = tape.constant(w.simplices.clone()).unwrap();
    let topology = Topology::new(w.entities.rows(), &w.pairs).unwrap();
    (BipartiteGraph { entities, predicates, topology }, simplices)
}

fn run(w: &World) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let (g, s) = graph_on(&mut tape, w);
    let out = run_bgnn(&mut tape, &w.store, &w.params, &w.cfg, &g, s).unwrap();
    (tape.value(out.graph.entities).clone(), tape.value(out.graph.predicates).clone())
}

/// Scalar re-implementation of one stage under confidence gating.
fn oracle_stage(store: &ParamStore, p: &StageParams, e: &Mat, r: &Mat, simp: &Mat, pairs: &[(usize, usize)], iters: usize) -> (Mat, Mat) {
    let v = |id: ParamId| store.value(id);
    let lin = |x: &[f64], l: &crate::layers::Linear| -> Vec<f64> {
        let mut y = vm(x, v(l.weight));
        if let Some(b) = l.bias {
            y.iter_mut().zip(v(b).data()).for_each(|(a, b)| *a += b);
        }
        y
    };
    let alpha = v(p.log_alpha).item().unwrap().exp();
    let beta = v(p.beta).item().unwrap();
    let gam: Vec<f64> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let x = cat(&cat(&r[k], &simp[i]), &simp[j]);
            let h: Vec<f64> = lin(&x, &p.rce.hidden).into_iter().map(|z| z.max(0.0)).collect();
            let s_m: Vec<f64> = lin(&h, &p.rce.out).into_iter().map(sigmoid).collect();
            let s_b = sigmoid(vm(&s_m, v(p.rce.w_b))[0]);
            gate_value(s_b, alpha, beta)
        })
        .collect();
    let (mut e, mut r) = (e.clone(), r.clone());
    for _ in 0..iters {
        let r_new: Mat = pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let ds = sigmoid(lin(&cat(&r[k], &e[i]), &p.w_s)[0]);
                let d_o = sigmoid(lin(&cat(&r[k], &e[j]), &p.w_o)[0]);
                let (mi, mj) = (lin(&e[i], &p.w_r), lin(&e[j], &p.w_r));
                r[k].iter().zip(mi.iter().zip(&mj)).map(|(x, (a, b))| x + (ds * a + d_o * b).max(0.0)).collect()
            })
            .collect();
        let e_new: Mat = (0..e.len())
            .map(|ent| {
                let mut acc = vec![0.0; e[ent].len()];
                for side in 0..2 {
                    let mut sum = vec![0.0; e[ent].len()];
                    let mut count = 0;
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let (end, w) = if side == 0 { (i, &p.w_s) } else { (j, &p.w_o) };
                        if end != ent || gam[k] == 0.0 {
                            continue;
                        }
                        count += 1;
                        let d = sigmoid(lin(&cat(&r_new[k], &e[end]), w)[0]);
                        for (s, m) in sum.iter_mut().zip(lin(&r_new[k], &p.w_e)) {
                            *s += gam[k] * d * m;
                        }
                    }
                    if count > 0 {
                        acc.iter_mut().zip(&sum).for_each(|(a, s)| *a += s / count as f64);
                    }
                }
                e[ent].iter().zip(&acc).map(|(x, a)| x + a.max(0.0)).collect()
            })
            .collect();
        e = e_new;
        r = r_new;
    }
    (e, r)
}

fn max_diff(a: &Tensor, b: &Mat) -> f64 {
    to_mat(a).iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn stage_matches_scalar_oracle() {
    for seed in 0..10 {
        let cfg = BgnnConfig { stages: 1, iterations: 2, ..Default::default() };
        let mut w = random_world(seed, 4, cfg);
        // shift gate parameters so that some but not all predicates are blocked
        *w.store.value_mut(w.params.stages[0].beta).data_mut().first_mut().unwrap() = 0.45;
        let (e, r) = run(&w);
        let (oe, or) = oracle_stage(
            &w.store,
            &w.params.stages[0],
            &to_mat(&w.entities),
            &to_mat(&w.predicates),
            &to_mat(&w.simplices),
            &w.pairs,
            2,
        );
        assert!(max_diff(&e, &oe) < 1e-12, "seed {seed}: {}", max_diff(&e, &oe));
        assert!(max_diff(&r, &or) < 1e-12);
    }
}

#[test]
fn zero_transforms_are_identity() {
    for (seed, mode) in [GatingMode::Confidence, GatingMode::None, GatingMode::HardTopk, GatingMode::LinearCombo].into_iter().enumerate() {
        let cfg = BgnnConfig { stages: 3, iterations: 3, gating: GatingConfig { mode, top_n: 2, ..Default::default() }, ..Default::default() };
        let mut w = random_world(seed as u64, 5, cfg);
        for sp in &w.params.stages {
            w.store.value_mut(sp.w_r.weight).fill(0.0);
            w.store.value_mut(sp.w_e.weight).fill(0.0);
        }
        let (e, r) = run(&w);
        assert_eq!(e, w.entities);
        assert_eq!(r, w.predicates);
    }
}

#[test]
fn zero_iterations_rejected() {
    let w = random_world(0, 3, BgnnConfig { stages: 1, ..Default::default() });
    let mut tape = Tape::new();
    let (g, s) = graph_on(&mut tape, &w);
    let err = run_stage(&mut tape, &w.store, &w.params.stages[0], &w.cfg.gating, &g, s, 0, false);
    assert!(matches!(err, Err(crate::Error::Contract(_))));
    assert!(BgnnConfig { iterations: 0, ..Default::default() }.validate().is_err());
}

#[test]
fn two_iterations_equal_chained_rounds() {
    let w = random_world(3, 5, BgnnConfig { stages: 1, iterations: 2, ..Default::default() });
    let sp = &w.params.stages[0];
    let mut tape = Tape::new();
    let (g, s) = graph_on(&mut tape, &w);
    let (out, _) = run_stage(&mut tape, &w.store, sp, &w.cfg.gating, &g, s, 2, false).unwrap();
    let mut tape2 = Tape::new();
    let (g2, s2) = graph_on(&mut tape2, &w);
    let t = &g2.topology;
    let conf = rce_forward(&mut tape2, &w.store, &sp.rce, g2.predicates, s2, &t.subj, &t.obj).unwrap();
    let gates = compute_gates(&mut tape2, &w.store, sp, &w.cfg.gating, &g2, &conf).unwrap();
    let once = propagate(&mut tape2, &w.store, sp, &g2, &gates).unwrap();
    let twice = propagate(&mut tape2, &w.store, sp, &once, &gates).unwrap();
    assert_eq!(tape.value(out.entities), tape2.value(twice.entities));
    assert_eq!(tape.value(out.predicates), tape2.value(twice.predicates));
}

#[test]
fn blocked_predicate_equals_removed_predicate() {
    for seed in 0..20 {
        let w = random_world(seed, 5, BgnnConfig { stages: 1, iterations: 1, ..Default::default() });
        let sp = &w.params.stages[0];
        let m = w.pairs.len();
        let blocked = seed as usize % m;
        let mut tape = Tape::new();
        let (g, _) = graph_on(&mut tape, &w);
        let gv: Vec<f64> = (0..m).map(|k| if k == blocked { 0.0 } else { 0.3 + 0.05 * k as f64 }).collect();
        let gcol = tape.constant(Tensor::new(vec![m, 1], gv.clone()).unwrap()).unwrap();
        let full = propagate(&mut tape, &w.store, sp, &g, &Gates { subj: gcol, obj: gcol, keep: None }).unwrap();

        let keep: Vec<usize> = (0..m).filter(|&k| k != blocked).collect();
        let pairs: Vec<(usize, usize)> = keep.iter().map(|&k| w.pairs[k]).collect();
        let mut t2 = Tape::new();
        let e = t2.constant(w.entities.clone()).unwrap();
        let rows: Vec<Vec<f64>> = keep.iter().map(|&k| w.predicates.row(k).to_vec()).collect();
        let r = if rows.is_empty() {
            t2.constant(Tensor::zeros(&[0, DIMS.predicate_dim])).unwrap()
        } else {
            t2.constant(Tensor::from_rows(&rows).unwrap()).unwrap()
        };
        let g2 = BipartiteGraph { entities: e, predicates: r, topology: Topology::new(5, &pairs).unwrap() };
        let gv2: Vec<f64> = keep.iter().map(|&k| gv[k]).collect();
        let gcol2 = t2.constant(Tensor::new(vec![keep.len(), 1], gv2).unwrap()).unwrap();
        let reduced = propagate(&mut t2, &w.store, sp, &g2, &Gates { subj: gcol2, obj: gcol2, keep: None }).unwrap();
        assert_eq!(tape.value(full.entities), t2.value(reduced.entities), "seed {seed}");
    }
}

#[test]
fn isolated_entity_is_unchanged() {
    let w = random_world(4, 4, BgnnConfig { stages: 2, iterations: 2, ..Default::default() });
    let mut w = w;
    w.pairs.retain(|&(i, j)| i != 3 && j != 3);
    if w.pairs.is_empty() {
        w.pairs.push((0, 1));
    }
    w.predicates = Tensor::from_rows(&(0..w.pairs.len()).map(|k| w.predicates.row(k % w.predicates.rows()).to_vec()).collect::<Vec<_>>()).unwrap();
    let (e, _) = run(&w);
    assert_eq!(e.row(3), w.entities.row(3));
}

#[test]
fn permutation_equivariance() {
    let mut w = random_world(7, 5, BgnnConfig { stages: 2, iterations: 2, ..Default::default() });
    let (e, r) = run(&w);
    let perm = [3, 0, 4, 1, 2]; // old index -> new index
    let n = 5;
    let mut inv = vec![0; n];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    let permute_rows = |t: &Tensor| Tensor::from_rows(&(0..n).map(|new| t.row(inv[new]).to_vec()).collect::<Vec<_>>()).unwrap();
    w.entities = permute_rows(&w.entities);
    w.simplices = permute_rows(&w.simplices);
    w.pairs = w.pairs.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
    let (e2, r2) = run(&w);
    for old in 0..n {
        for (a, b) in e.row(old).iter().zip(e2.row(perm[old])) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(r.max_abs_diff(&r2) < 1e-12);
}

#[test]
fn pruned_predicates_frozen_under_hard_topk() {
    let cfg = BgnnConfig { stages: 1, iterations: 2, gating: GatingConfig { mode: GatingMode::HardTopk, top_n: 2, ..Default::default() }, ..Default::default() };
    let w = random_world(9, 4, cfg);
    let mut tape = Tape::new();
    let (g, s) = graph_on(&mut tape, &w);
    let (out, conf) = run_stage(&mut tape, &w.store, &w.params.stages[0], &w.cfg.gating, &g, s, 2, false).unwrap();
    let keep = hard_topk_prune(tape.value(conf[0].s_b).data(), 2);
    let r = tape.value(out.predicates);
    for (k, kept) in keep.iter().enumerate() {
        if !kept {
            assert_eq!(r.row(k), w.predicates.row(k));
        }
    }
    assert_eq!(keep.iter().filter(|k| **k).count(), 2.min(w.pairs.len()));
}

#[test]
fn stages_change_features_and_report_confidence() {
    let cfg = BgnnConfig { stages: 3, iterations: 3, ..Default::default() };
    let w = random_world(11, 4, cfg);
    let mut tape = Tape::new();
    let (g, s) = graph_on(&mut tape, &w);
    let out = run_bgnn(&mut tape, &w.store, &w.params, &w.cfg, &g, s).unwrap();
    assert_eq!(out.confidences.len(), 3);
    assert!(tape.value(out.graph.predicates).max_abs_diff(&w.predicates) > 1e-6);
    for c in &out.confidences {
        assert!(tape.value(c.s_b).data().iter().all(|x| *x > 0.0 && *x < 1.0));
    }
    let cfg = BgnnConfig { stages: 2, iterations: 3, rce_per_iteration: true, ..Default::default() };
    let w = random_world(11, 4, cfg);
    let mut tape = Tape::new();
    let (g, s) = graph_on(&mut tape, &w);
    assert_eq!(run_bgnn(&mut tape, &w.store, &w.params, &w.cfg, &g, s).unwrap().confidences.len(), 6);
}

fn toy_loss(tape: &mut Tape, store: &ParamStore, w: &World) -> Result<Var> {
    let (g, s) = graph_on(tape, w);
    let out = run_bgnn(tape, store, &w.params, &w.cfg, &g, s)?;
    let a = tape.sum(out.graph.entities)?;
    let b = tape.sum(out.graph.predicates)?;
    let mut total = tape.add(a, b)?;
    for c in &out.confidences {
        let sb = tape.sum(c.s_b)?;
        let sm = tape.mean(c.s_m)?;
        total = tape.add(total, sb)?;
        total = tape.add(total, sm)?;
    }
    Ok(total)
}

#[test]
fn gradients_match_finite_differences() {
    for mode in [GatingMode::Confidence, GatingMode::LinearCombo, GatingMode::None] {
        let cfg = BgnnConfig { stages: 2, iterations: 2, gating: GatingConfig { mode, ..Default::default() }, ..Default::default() };
        let mut w = random_world(5, 4, cfg);
        // keep every confidence inside the linear part of the gate
        for sp in &w.params.stages {
            w.store.value_mut(sp.log_alpha).data_mut()[0] = 0.0;
            w.store.value_mut(sp.beta).data_mut()[0] = -0.2;
        }
        let ids = w.params.params();
        let mut store = std::mem::take(&mut w.store);
        let report = check_gradients(|t, s| toy_loss(t, s, &w), &mut store, &ids, 1e-5).unwrap();
        let worst: Vec<_> = report.offenders(1e-4).map(|p| (p.name.clone(), p.max_rel_err, p.analytic, p.numeric)).collect();
        assert!(worst.is_empty(), "{mode:?}: {worst:?}");
    }
}
