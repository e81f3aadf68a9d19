//! Parameter and mesh descriptions, shard layouts, the Newton-Schulz FLOPs
//! estimator, FLOPs-sorted round-robin ownership, and chunking.
//!
//! Ranks inside one replica group are numbered `shard_idx * tp + tp_idx`;
//! replica groups are laid out contiguously, so global rank is
//! `replica * (dp_shard * tp) + group_rank`.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Region;

fn default_tp_dim() -> usize {
    1
}

fn default_elem_bytes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub id: usize,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Bytes per element used for communication and memory accounting.
    #[serde(default = "default_elem_bytes")]
    pub elem_bytes: usize,
    /// Dimension split by tensor parallelism.
    #[serde(default = "default_tp_dim")]
    pub tp_dim: usize,
}

impl ParamSpec {
    pub fn new(id: usize, name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ParamSpec {
            id,
            name: name.into(),
            rows,
            cols,
            elem_bytes: default_elem_bytes(),
            tp_dim: default_tp_dim(),
        }
    }

    pub fn with_elem_bytes(mut self, bytes: usize) -> Self {
        self.elem_bytes = bytes;
        self
    }

    pub fn with_tp_dim(mut self, dim: usize) -> Self {
        self.tp_dim = dim;
        self
    }

    pub fn elems(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bytes(&self) -> u64 {
        (self.elems() * self.elem_bytes) as u64
    }
}

/// Check ids are unique and shapes non-degenerate.
pub fn validate_params(params: &[ParamSpec]) -> Result<()> {
    if params.is_empty() {
        return Err(Error::EmptyParams);
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in params {
        if !seen.insert(p.id) {
            return Err(Error::DuplicateParam(p.id));
        }
        if p.rows == 0 || p.cols == 0 {
            return Err(Error::DegenerateShape {
                rows: p.rows,
                cols: p.cols,
            });
        }
        if p.elem_bytes == 0 {
            return Err(Error::Config(format!("parameter `{}`: elem_bytes must be positive", p.name)));
        }
        if p.tp_dim > 1 {
            return Err(Error::Config(format!("parameter `{}`: tp_dim must be 0 or 1", p.name)));
        }
    }
    Ok(())
}

/// Device mesh `(replicate, shard, tp)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mesh {
    pub dp_replicate: usize,
    pub dp_shard: usize,
    pub tp: usize,
}

impl Default for Mesh {
    fn default() -> Self {
        Mesh {
            dp_replicate: 1,
            dp_shard: 1,
            tp: 1,
        }
    }
}

impl Mesh {
    pub fn fsdp(dp_shard: usize) -> Self {
        Mesh {
            dp_shard,
            ..Mesh::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dp_replicate == 0 || self.dp_shard == 0 || self.tp == 0 {
            return Err(Error::InvalidMesh(format!(
                "all axes must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn world_size(&self) -> usize {
        self.dp_replicate * self.dp_shard * self.tp
    }

    /// Ranks holding distinct slices of a parameter.
    pub fn group_size(&self) -> usize {
        self.dp_shard * self.tp
    }

    pub fn global_rank(&self, replica: usize, group_rank: usize) -> usize {
        replica * self.group_size() + group_rank
    }

    /// Global ranks of one replica group, in group-rank order.
    pub fn replica_group(&self, replica: usize) -> Vec<usize> {
        (0..self.group_size())
            .map(|g| self.global_rank(replica, g))
            .collect()
    }

    /// `(replica, group_rank)` of a global rank.
    pub fn coords(&self, rank: usize) -> (usize, usize) {
        (rank / self.group_size(), rank % self.group_size())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardSlice {
    pub group_rank: usize,
    pub region: Region,
}

/// Which slice of one parameter each rank of a replica group holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardLayout {
    pub param_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub tp_dim: Option<usize>,
    /// Ordered by group rank.
    pub slices: Vec<ShardSlice>,
}

impl ShardLayout {
    pub fn region(&self, group_rank: usize) -> &Region {
        &self.slices[group_rank].region
    }

    pub fn group_size(&self) -> usize {
        self.slices.len()
    }

    /// Slices are disjoint, in bounds, cover every element, and list each
    /// group rank once.
    pub fn verify_tiling(&self) -> Result<()> {
        let mut covered = 0usize;
        for (i, s) in self.slices.iter().enumerate() {
            if s.group_rank != i {
                return Err(Error::LayoutMismatch(format!(
                    "param {}: slice {i} belongs to group rank {}",
                    self.param_id, s.group_rank
                )));
            }
            let r = &s.region;
            if r.row + r.rows > self.rows || r.col + r.cols > self.cols {
                return Err(Error::LayoutMismatch(format!(
                    "param {}: slice {i} out of bounds",
                    self.param_id
                )));
            }
            for other in &self.slices[..i] {
                if r.overlaps(&other.region) {
                    return Err(Error::LayoutMismatch(format!(
                        "param {}: slices {i} and {} overlap",
                        self.param_id, other.group_rank
                    )));
                }
            }
            covered += r.elems();
        }
        if covered != self.rows * self.cols {
            return Err(Error::LayoutMismatch(format!(
                "param {}: slices cover {covered} of {} elements",
                self.param_id,
                self.rows * self.cols
            )));
        }
        Ok(())
    }
}

/// Contiguous near-equal blocks; the first `extent % parts` blocks get one extra.
pub fn split_extent(extent: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = extent / parts;
    let extra = extent % parts;
    let mut offset = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let block = (offset, len);
            offset += len;
            block
        })
        .collect()
}

/// Compose the TP split (on the parameter's `tp_dim`) with the FSDP split
/// (on dim 0 of each TP block).
pub fn shard_mapping(param: &ParamSpec, mesh: &Mesh) -> Result<ShardLayout> {
    mesh.validate()?;
    let too_small = |dim: usize, extent: usize, shards: usize| Error::ShardTooSmall {
        param: param.name.clone(),
        dim,
        extent,
        shards,
    };

    let tp_blocks: Vec<Region> = if mesh.tp == 1 {
        vec![Region::full(param.rows, param.cols)]
    } else if param.tp_dim == 0 {
        if param.rows < mesh.tp {
            return Err(too_small(0, param.rows, mesh.tp));
        }
        split_extent(param.rows, mesh.tp)
            .into_iter()
            .map(|(row, rows)| Region { row, col: 0, rows, cols: param.cols })
            .collect()
    } else {
        if param.cols < mesh.tp {
            return Err(too_small(1, param.cols, mesh.tp));
        }
        split_extent(param.cols, mesh.tp)
            .into_iter()
            .map(|(col, cols)| Region { row: 0, col, rows: param.rows, cols })
            .collect()
    };

    let mut slices = vec![None; mesh.group_size()];
    for (tp_idx, block) in tp_blocks.iter().enumerate() {
        if block.rows < mesh.dp_shard {
            return Err(too_small(0, block.rows, mesh.dp_shard));
        }
        for (shard_idx, (row, rows)) in split_extent(block.rows, mesh.dp_shard).into_iter().enumerate() {
            let group_rank = shard_idx * mesh.tp + tp_idx;
            slices[group_rank] = Some(ShardSlice {
                group_rank,
                region: Region {
                    row: block.row + row,
                    col: block.col,
                    rows,
                    cols: block.cols,
                },
            });
        }
    }

    Ok(ShardLayout {
        param_id: param.id,
        rows: param.rows,
        cols: param.cols,
        tp_dim: (mesh.tp > 1).then_some(param.tp_dim),
        slices: slices.into_iter().map(|s| s.expect("every group rank filled")).collect(),
    })
}

/// FLOPs of `iterations` Newton-Schulz steps on the wide orientation.
///
/// Per step with `n = min`, `m = max`: `X Xᵀ` and `B X` cost `2 n² m` each,
/// `A²` costs `2 n³`.
pub fn ns_flops(param: &ParamSpec, iterations: usize) -> u64 {
    let n = param.rows.min(param.cols) as u64;
    let m = param.rows.max(param.cols) as u64;
    iterations as u64 * (4 * n * n * m + 2 * n * n * n)
}

/// Which rank of a group orthogonalizes each parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub owner: BTreeMap<usize, usize>,
    pub rank_flops: Vec<u64>,
    /// Parameter ids in assignment order (the order chunks are cut from).
    pub order: Vec<usize>,
}

impl Assignment {
    pub fn n_ranks(&self) -> usize {
        self.rank_flops.len()
    }

    pub fn total_flops(&self) -> u64 {
        self.rank_flops.iter().sum()
    }

    /// `(max - min) / mean` of per-rank FLOPs.
    pub fn imbalance(&self) -> f64 {
        let max = *self.rank_flops.iter().max().unwrap_or(&0) as f64;
        let min = *self.rank_flops.iter().min().unwrap_or(&0) as f64;
        let mean = self.total_flops() as f64 / self.n_ranks().max(1) as f64;
        if mean == 0.0 {
            0.0
        } else {
            (max - min) / mean
        }
    }

    pub fn owned_by(&self, rank: usize) -> impl Iterator<Item = usize> + '_ {
        self.order
            .iter()
            .copied()
            .filter(move |id| self.owner[id] == rank)
    }
}

/// Round-robin ownership, optionally after sorting by descending FLOPs (ties
/// by ascending id). Unsorted order is ascending id.
pub fn assign_params(
    params: &[ParamSpec],
    n_ranks: usize,
    ns_iterations: usize,
    sort_by_flops: bool,
) -> Result<Assignment> {
    if params.is_empty() {
        return Err(Error::EmptyParams);
    }
    if n_ranks == 0 {
        return Err(Error::InvalidMesh("assignment needs at least one rank".into()));
    }
    let mut order: Vec<(u64, usize)> = params
        .iter()
        .map(|p| (ns_flops(p, ns_iterations), p.id))
        .collect();
    if sort_by_flops {
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    } else {
        order.sort_by_key(|&(_, id)| id);
    }

    let mut owner = BTreeMap::new();
    let mut rank_flops = vec![0u64; n_ranks];
    for (k, &(flops, id)) in order.iter().enumerate() {
        let rank = k % n_ranks;
        owner.insert(id, rank);
        rank_flops[rank] += flops;
    }
    Ok(Assignment {
        owner,
        rank_flops,
        order: order.into_iter().map(|(_, id)| id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub param_ids: Vec<usize>,
}

pub fn chunk_params(order: &[usize], chunk_size: NonZeroUsize) -> Vec<Chunk> {
    order
        .chunks(chunk_size.get())
        .enumerate()
        .map(|(index, ids)| Chunk {
            index,
            param_ids: ids.to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(row: usize, col: usize, rows: usize, cols: usize) -> Region {
        Region { row, col, rows, cols }
    }

    #[test]
    fn fsdp_even_and_remainder_splits() {
        let l = shard_mapping(&ParamSpec::new(0, "w", 8, 4), &Mesh::fsdp(2)).unwrap();
        assert_eq!(*l.region(0), region(0, 0, 4, 4));
        assert_eq!(*l.region(1), region(4, 0, 4, 4));

        let l = shard_mapping(&ParamSpec::new(0, "w", 7, 4), &Mesh::fsdp(2)).unwrap();
        assert_eq!(*l.region(0), region(0, 0, 4, 4));
        assert_eq!(*l.region(1), region(4, 0, 3, 4));
        l.verify_tiling().unwrap();
    }

    #[test]
    fn hybrid_tp_fsdp_tiles() {
        let mesh = Mesh { dp_replicate: 1, dp_shard: 2, tp: 2 };
        let l = shard_mapping(&ParamSpec::new(3, "w", 8, 8), &mesh).unwrap();
        assert_eq!(l.slices.len(), 4);
        assert!(l.slices.iter().all(|s| s.region.rows == 4 && s.region.cols == 4));
        // group rank = shard_idx * tp + tp_idx
        assert_eq!(*l.region(1), region(0, 4, 4, 4));
        assert_eq!(*l.region(2), region(4, 0, 4, 4));
        l.verify_tiling().unwrap();

        let l = shard_mapping(&ParamSpec::new(3, "w", 9, 5).with_tp_dim(0), &mesh).unwrap();
        l.verify_tiling().unwrap();
        assert_eq!(*l.region(0), region(0, 0, 3, 5));
        assert_eq!(*l.region(1), region(5, 0, 2, 5));
    }

    #[test]
    fn too_small_names_parameter() {
        let err = shard_mapping(&ParamSpec::new(0, "tiny", 1, 4), &Mesh::fsdp(2)).unwrap_err();
        match err {
            Error::ShardTooSmall { param, .. } => assert_eq!(param, "tiny"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flops_formula() {
        assert_eq!(ns_flops(&ParamSpec::new(0, "s", 1, 1), 1), 6);
        let ff = ParamSpec::new(0, "ff", 4096, 16384);
        let want = 5u64 * (4 * 4096 * 4096 * 16384 + 2 * 4096u64.pow(3));
        assert_eq!(ns_flops(&ff, 5), want);
        assert!((want as f64 - 6.18e12).abs() / 6.18e12 < 1e-3);
        assert_eq!(ns_flops(&ParamSpec::new(0, "sq", 10, 10), 3), 3 * 6 * 1000);
        // orientation does not matter
        assert_eq!(ns_flops(&ParamSpec::new(0, "t", 16384, 4096), 5), want);
    }

    /// Params whose NS FLOPs at one iteration equal `6 n^3` for the given n.
    fn squares(sizes: &[usize]) -> Vec<ParamSpec> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| ParamSpec::new(i, format!("p{i}"), n, n))
            .collect()
    }

    #[test]
    fn sorted_round_robin_hand_trace() {
        // One iteration on n x n costs 6 n^3: ids 0..4 cost 48, 750, 162, 384.
        let params = vec![
            ParamSpec::new(0, "a", 2, 2),
            ParamSpec::new(1, "b", 5, 5),
            ParamSpec::new(2, "c", 3, 3),
            ParamSpec::new(3, "d", 4, 4),
        ];
        let a = assign_params(&params, 2, 1, true).unwrap();
        assert_eq!(a.order, vec![1, 3, 2, 0]);
        assert_eq!(a.owner[&1], 0);
        assert_eq!(a.owner[&3], 1);
        assert_eq!(a.owner[&2], 0);
        assert_eq!(a.owner[&0], 1);
        assert_eq!(a.rank_flops, vec![6 * (125 + 27), 6 * (64 + 8)]);

        let single = assign_params(&params, 1, 1, true).unwrap();
        assert_eq!(single.rank_flops, vec![single.total_flops()]);
    }

    #[test]
    fn equal_flops_balanced_within_one_param() {
        let params = squares(&[4; 11]);
        let a = assign_params(&params, 3, 5, false).unwrap();
        let per = ns_flops(&params[0], 5);
        let max = *a.rank_flops.iter().max().unwrap();
        let min = *a.rank_flops.iter().min().unwrap();
        assert!(max - min <= per);
    }

    #[test]
    fn chunking() {
        let ids: Vec<usize> = (0..8).collect();
        let c = chunk_params(&ids, NonZeroUsize::new(2).unwrap());
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|c| c.param_ids.len() == 2));
        let c = chunk_params(&ids[..5], NonZeroUsize::new(2).unwrap());
        assert_eq!(c.iter().map(|c| c.param_ids.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
        let c = chunk_params(&ids, NonZeroUsize::new(100).unwrap());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].param_ids, ids);
    }

    #[test]
    fn empty_params_rejected() {
        assert_eq!(assign_params(&[], 2, 5, true), Err(Error::EmptyParams));
    }
}
