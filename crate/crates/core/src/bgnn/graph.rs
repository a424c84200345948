use crate::error::{ensure, Result};
use crate::numeric::Var;

/// Connectivity of the bipartite graph: each predicate node links its
/// subject and object entity.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub num_entities: usize,
    pub subj: Vec<usize>,
    pub obj: Vec<usize>,
    /// `as_subject[i]`: predicates whose subject is entity `i`.
    pub as_subject: Vec<Vec<usize>>,
    /// `as_object[i]`: predicates whose object is entity `i`.
    pub as_object: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(num_entities: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut as_subject = vec![Vec::new(); num_entities];
        let mut as_object = vec![Vec::new(); num_entities];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            ensure!(i < num_entities && j < num_entities, Index, "pair ({i}, {j}) outside {num_entities} entities");
            ensure!(i != j, Contract, "self pair ({i}, {i})");
            as_subject[i].push(k);
            as_object[j].push(k);
        }
        Ok(Self {
            num_entities,
            subj: pairs.iter().map(|p| p.0).collect(),
            obj: pairs.iter().map(|p| p.1).collect(),
            as_subject,
            as_object,
        })
    }

    pub fn num_predicates(&self) -> usize {
        self.subj.len()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.subj.iter().copied().zip(self.obj.iter().copied()).collect()
    }
}

/// Node features on a tape plus the topology they live on.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    /// `n × D_e`
    pub entities: Var,
    /// `m × D_r`, row `k` for pair `k` of the topology.
    pub predicates: Var,
    pub topology: Topology,
}
