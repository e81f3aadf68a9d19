//! Muon optimizer steppers over the simulated fabric.
//!
//! * [`DenseState::oracle_step`] is the single-rank serial reference.
//! * [`OptimizerState::distributed_muon_step`] all-gathers every gradient and
//!   orthogonalizes it redundantly on every rank of the group.
//! * [`OptimizerState::parallel_muon_step`] redistributes shards with one
//!   all-to-all so each full gradient lands on one owner, orthogonalizes once,
//!   and scatters update shards back with a second all-to-all.
//! * [`OptimizerState::parallel_muon_step_pipelined`] runs the same exchange
//!   chunk by chunk, overlapping the scatter of one chunk, the compute of the
//!   next and the gather of the one after.
//!
//! All steppers perform the same elementwise and Newton-Schulz operations on
//! the same full matrices, so their results agree bit for bit.

mod distributed;
mod oracle;
mod parallel;

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::Fabric;
use crate::sharding::{
    assign_params, chunk_params, shard_mapping, validate_params, Assignment, Chunk, Mesh,
    ParamSpec, ShardLayout,
};
use crate::tensor::{Block, MuonHyper};

pub use oracle::DenseState;

/// How per-rank numerics inside one phase are executed. Both modes append
/// trace events in the same order, so results and traces are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Serial,
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub enabled: bool,
    /// Chunks gathered ahead of the first scatter.
    pub warmup_depth: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            enabled: false,
            warmup_depth: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub sort_by_flops: bool,
    pub chunk_size: NonZeroUsize,
    pub pipeline: PipelineConfig,
    pub exec: ExecMode,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            sort_by_flops: true,
            chunk_size: NonZeroUsize::new(32).expect("non-zero"),
            pipeline: PipelineConfig::default(),
            exec: ExecMode::Serial,
        }
    }
}

/// Shards held by one global rank, keyed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankShards<B> {
    pub params: BTreeMap<usize, B>,
    pub momenta: BTreeMap<usize, B>,
}

/// Per-rank gradient shards, indexed by global rank then parameter id.
pub type ShardedGrads<B> = Vec<BTreeMap<usize, B>>;

#[derive(Debug, Clone)]
pub struct OptimizerState<B> {
    specs: Vec<ParamSpec>,
    mesh: Mesh,
    layouts: BTreeMap<usize, ShardLayout>,
    hyper: MuonHyper,
    assignment: Assignment,
    chunks: Vec<Chunk>,
    options: OptimizerOptions,
    ranks: Vec<RankShards<B>>,
    steps_taken: usize,
}

impl<B: Block> OptimizerState<B> {
    /// Shard `initial` (full parameters keyed by id) over `mesh` with zero
    /// momenta.
    pub fn new(
        specs: &[ParamSpec],
        mesh: Mesh,
        hyper: MuonHyper,
        options: OptimizerOptions,
        initial: &BTreeMap<usize, B>,
    ) -> Result<Self> {
        validate_params(specs)?;
        mesh.validate()?;
        hyper.validate()?;
        let mut specs = specs.to_vec();
        specs.sort_by_key(|p| p.id);

        let layouts: BTreeMap<usize, ShardLayout> = specs
            .iter()
            .map(|p| Ok((p.id, shard_mapping(p, &mesh)?)))
            .collect::<Result<_>>()?;
        let assignment = assign_params(
            &specs,
            mesh.group_size(),
            hyper.ns_iterations,
            options.sort_by_flops,
        )?;
        let chunks = chunk_params(&assignment.order, options.chunk_size);

        let mut state = OptimizerState {
            specs,
            mesh,
            layouts,
            hyper,
            assignment,
            chunks,
            options,
            ranks: Vec::new(),
            steps_taken: 0,
        };
        state.check_ownership()?;

        let params = state.shard_full(initial)?;
        state.ranks = params
            .into_iter()
            .map(|params| {
                let momenta = params
                    .iter()
                    .map(|(&id, b)| {
                        let (r, c) = b.shape();
                        (id, B::zeros(r, c))
                    })
                    .collect();
                RankShards { params, momenta }
            })
            .collect();
        Ok(state)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn hyper(&self) -> &MuonHyper {
        &self.hyper
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn options(&self) -> &OptimizerOptions {
        &self.options
    }

    pub fn layout(&self, id: usize) -> &ShardLayout {
        &self.layouts[&id]
    }

    pub fn rank(&self, rank: usize) -> &RankShards<B> {
        &self.ranks[rank]
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    fn spec(&self, id: usize) -> &ParamSpec {
        let idx = self
            .specs
            .binary_search_by_key(&id, |p| p.id)
            .expect("id validated at construction");
        &self.specs[idx]
    }

    fn check_ownership(&self) -> Result<()> {
        let g = self.mesh.group_size();
        if self.assignment.owner.len() != self.specs.len() {
            return Err(Error::Ownership(format!(
                "{} owners for {} parameters",
                self.assignment.owner.len(),
                self.specs.len()
            )));
        }
        for p in &self.specs {
            match self.assignment.owner.get(&p.id) {
                Some(&r) if r < g => {}
                Some(&r) => {
                    return Err(Error::Ownership(format!(
                        "parameter `{}` owned by rank {r} outside a group of {g}",
                        p.name
                    )))
                }
                None => return Err(Error::Ownership(format!("parameter `{}` has no owner", p.name))),
            }
        }
        let chunked: usize = self.chunks.iter().map(|c| c.param_ids.len()).sum();
        if chunked != self.specs.len() {
            return Err(Error::Ownership(format!(
                "chunks cover {chunked} of {} parameters",
                self.specs.len()
            )));
        }
        Ok(())
    }

    /// Slice full matrices (keyed by id) into every global rank's shards.
    pub fn shard_full(&self, full: &BTreeMap<usize, B>) -> Result<Vec<BTreeMap<usize, B>>> {
        let mut out = vec![BTreeMap::new(); self.mesh.world_size()];
        for p in &self.specs {
            let m = full.get(&p.id).ok_or_else(|| {
                Error::LayoutMismatch(format!("no full matrix for parameter `{}`", p.name))
            })?;
            if m.shape() != (p.rows, p.cols) {
                return Err(Error::ShapeMismatch {
                    left: (p.rows, p.cols),
                    right: m.shape(),
                });
            }
            let layout = &self.layouts[&p.id];
            for (rank, shards) in out.iter_mut().enumerate() {
                let (_, group_rank) = self.mesh.coords(rank);
                shards.insert(p.id, m.extract(layout.region(group_rank))?);
            }
        }
        Ok(out)
    }

    fn reassemble(&self, replica: usize, pick: impl Fn(&RankShards<B>) -> &BTreeMap<usize, B>) -> Result<BTreeMap<usize, B>> {
        let group = self.mesh.replica_group(replica);
        self.specs
            .iter()
            .map(|p| {
                let layout = &self.layouts[&p.id];
                let tiles: Vec<&B> = group.iter().map(|&r| &pick(&self.ranks[r])[&p.id]).collect();
                let full = B::assemble(
                    p.rows,
                    p.cols,
                    layout.slices.iter().map(|s| &s.region).zip(tiles),
                )?;
                Ok((p.id, full))
            })
            .collect()
    }

    /// Full parameters reassembled from the shards of one replica group.
    pub fn full_params(&self, replica: usize) -> Result<BTreeMap<usize, B>> {
        self.reassemble(replica, |r| &r.params)
    }

    pub fn full_momenta(&self, replica: usize) -> Result<BTreeMap<usize, B>> {
        self.reassemble(replica, |r| &r.momenta)
    }

    fn check_grads(&self, grads: &ShardedGrads<B>) -> Result<()> {
        if grads.len() != self.mesh.world_size() {
            return Err(Error::LayoutMismatch(format!(
                "gradients for {} ranks, world has {}",
                grads.len(),
                self.mesh.world_size()
            )));
        }
        for (rank, shards) in grads.iter().enumerate() {
            let (_, group_rank) = self.mesh.coords(rank);
            for p in &self.specs {
                let region = self.layouts[&p.id].region(group_rank);
                match shards.get(&p.id) {
                    Some(g) if g.shape() == (region.rows, region.cols) => {}
                    Some(g) => {
                        return Err(Error::LayoutMismatch(format!(
                            "rank {rank}, parameter `{}`: gradient shard {:?}, layout expects {:?}",
                            p.name,
                            g.shape(),
                            (region.rows, region.cols)
                        )))
                    }
                    None => {
                        return Err(Error::LayoutMismatch(format!(
                            "rank {rank} has no gradient for parameter `{}`",
                            p.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Local momentum update on every rank; returns the effective gradient
    /// shards and records one elementwise compute event per rank.
    fn momentum_phase(
        &mut self,
        grads: &ShardedGrads<B>,
        fabric: &mut Fabric,
    ) -> Result<(ShardedGrads<B>, Vec<f64>)> {
        self.check_grads(grads)?;
        if fabric.world_size() != self.mesh.world_size() {
            return Err(Error::LayoutMismatch(format!(
                "fabric has {} ranks, mesh needs {}",
                fabric.world_size(),
                self.mesh.world_size()
            )));
        }
        let hyper = self.hyper.clone();
        let specs = &self.specs;
        let update = |rank: &RankShards<B>, g: &BTreeMap<usize, B>| -> Result<(BTreeMap<usize, B>, BTreeMap<usize, B>)> {
            let mut m_next = BTreeMap::new();
            let mut g_eff = BTreeMap::new();
            for p in specs {
                let (m, e) = B::momentum_update(&rank.momenta[&p.id], &g[&p.id], &hyper)
                    .map_err(|e| e.for_param(&p.name))?;
                m_next.insert(p.id, m);
                g_eff.insert(p.id, e);
            }
            Ok((m_next, g_eff))
        };
        let results: Vec<Result<_>> = match self.options.exec {
            ExecMode::Serial => self.ranks.iter().zip(grads).map(|(r, g)| update(r, g)).collect(),
            ExecMode::Threaded => {
                use rayon::prelude::*;
                self.ranks.par_iter().zip(grads.par_iter()).map(|(r, g)| update(r, g)).collect()
            }
        };

        let step = self.steps_taken;
        let mut effective = Vec::with_capacity(results.len());
        let mut ready = Vec::with_capacity(results.len());
        for (rank, res) in results.into_iter().enumerate() {
            let (m_next, g_eff) = res?;
            let elems: usize = g_eff.values().map(|b| b.elems()).sum();
            let after = fabric.rank_clock(rank);
            let t = fabric.compute(rank, 4 * elems as u64, after, &format!("momentum/s{step}"));
            ready.push(t.end_us);
            self.ranks[rank].momenta = m_next;
            effective.push(g_eff);
        }
        Ok((effective, ready))
    }
}

/// Tag prefix of Newton-Schulz compute events.
pub const NS_TAG: &str = "ns/";

fn ns_tag(id: usize, step: usize) -> String {
    format!("{NS_TAG}p{id}/s{step}")
}

/// Run `f` over `items`, threaded or not, preserving order.
fn run_all<I, T, F>(exec: ExecMode, items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Send + Sync,
{
    match exec {
        ExecMode::Serial => items.into_iter().map(f).collect(),
        ExecMode::Threaded => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
    }
}
