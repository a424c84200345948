//! Initial node features for the bipartite graph.
//!
//! Entities: `e_i = f_e(v_i ⊕ g_i ⊕ w_i)` where `w_i` is a learned class
//! embedding. Predicates: `r_ij = f_u(u_ij) + f_p(e_i ⊕ e_j)`.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::layers::{glorot, Mlp};
use crate::numeric::{ParamId, ParamStore, Tape, Var};

use super::GEOMETRY_DIM;

#[derive(Clone, Debug)]
pub struct RepresentationParams {
    pub embed: ParamId,
    pub num_entity_classes: usize,
    pub f_e: Mlp,
    pub f_u: Mlp,
    pub f_p: Mlp,
}

impl RepresentationParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        num_entity_classes: usize,
        visual_dim: usize,
        embed_dim: usize,
        entity_dim: usize,
        predicate_dim: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = store.add("repr.embed", glorot(num_entity_classes, embed_dim, rng))?;
        let f_e = Mlp::new(store, "repr.f_e", visual_dim + GEOMETRY_DIM + embed_dim, entity_dim, depth, rng)?;
        let f_u = Mlp::new(store, "repr.f_u", visual_dim, predicate_dim, depth, rng)?;
        let f_p = Mlp::new(store, "repr.f_p", 2 * entity_dim, predicate_dim, depth, rng)?;
        Ok(Self { embed, num_entity_classes, f_e, f_u, f_p })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.embed];
        v.extend(self.f_e.params());
        v.extend(self.f_u.params());
        v.extend(self.f_p.params());
        v
    }
}

/// Rows of the embedding table for the given classes.
pub fn embedding_lookup(tape: &mut Tape, store: &ParamStore, params: &RepresentationParams, classes: &[usize]) -> Result<Var> {
    for &c in classes {
        ensure!(c < params.num_entity_classes, Index, "entity class {c} >= {}", params.num_entity_classes);
    }
    let table = tape.param(store, params.embed)?;
    tape.gather_rows(table, classes)
}

/// Entity features for `n` proposals: `visual` is `n×D_v`, `geometry` is
/// `n×8`; returns `n×D_e`.
pub fn entity_representation(
    tape: &mut Tape,
    store: &ParamStore,
    params: &RepresentationParams,
    visual: Var,
    geometry: Var,
    classes: &[usize],
) -> Result<Var> {
    let w = embedding_lookup(tape, store, params, classes)?;
    let x = tape.concat(&[visual, geometry, w], 1)?;
    params.f_e.forward(tape, store, x)
}

/// Predicate features for `m` ordered pairs `(subj[k], obj[k])`; `unions`
/// is `m×D_v`, `entities` is `n×D_e`; returns `m×D_r`.
pub fn predicate_representation(
    tape: &mut Tape,
    store: &ParamStore,
    params: &RepresentationParams,
    entities: Var,
    unions: Var,
    subj: &[usize],
    obj: &[usize],
) -> Result<Var> {
    ensure!(subj.len() == obj.len(), Dimension, "{} subjects for {} objects", subj.len(), obj.len());
    let ei = tape.gather_rows(entities, subj)?;
    let ej = tape.gather_rows(entities, obj)?;
    let pair = tape.concat(&[ei, ej], 1)?;
    let from_union = params.f_u.forward(tape, store, unions)?;
    let from_pair = params.f_p.forward(tape, store, pair)?;
    tape.add(from_union, from_pair)
}
