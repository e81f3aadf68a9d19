use super::{ns_tag, run_all, OptimizerState, ShardedGrads};
use crate::error::{Error, Result};
use crate::fabric::{BufId, Fabric, Payload, Stream, Tile};
use crate::sharding::{ns_flops, Chunk};
use crate::tensor::Block;

/// Full gradients that arrived at their owners.
struct Gathered<B> {
    chunk: usize,
    /// Per group rank: `(param id, full gradient, buffer)` in chunk order.
    owned: Vec<Vec<(usize, B, BufId)>>,
    end_us: f64,
}

/// Full updates computed by their owners.
struct Computed<B> {
    chunk: usize,
    owned: Vec<Vec<(usize, B, BufId)>>,
    done_us: Vec<f64>,
}

/// Update shards delivered back to every rank.
struct Scattered<B> {
    chunk: usize,
    received: Vec<Vec<Tile<B>>>,
    buffers: Vec<Option<BufId>>,
    end_us: f64,
}

impl<B: Block> OptimizerState<B> {
    /// One all-to-all gather of every parameter, compute on owners, one
    /// all-to-all scatter.
    pub fn parallel_muon_step(&mut self, grads: &ShardedGrads<B>, fabric: &mut Fabric) -> Result<()> {
        let single = [Chunk {
            index: 0,
            param_ids: self.assignment.order.clone(),
        }];
        self.run_parallel(grads, fabric, &single, 1)
    }

    /// Chunked exchange: the first `warmup_depth` chunks are gathered up
    /// front, then each tick overlaps the scatter of chunk `c - 1`, the
    /// compute of chunk `c` and the gather of chunk `c - 1 + warmup_depth`.
    pub fn parallel_muon_step_pipelined(&mut self, grads: &ShardedGrads<B>, fabric: &mut Fabric) -> Result<()> {
        let chunks = self.chunks.clone();
        let depth = self.options.pipeline.warmup_depth.max(1);
        self.run_parallel(grads, fabric, &chunks, depth)
    }

    fn run_parallel(
        &mut self,
        grads: &ShardedGrads<B>,
        fabric: &mut Fabric,
        chunks: &[Chunk],
        depth: usize,
    ) -> Result<()> {
        let (g_eff, ready) = self.momentum_phase(grads, fabric)?;
        let n = chunks.len();

        for replica in 0..self.mesh.dp_replicate {
            let group = self.mesh.replica_group(replica);
            let start: Vec<f64> = group.iter().map(|&r| ready[r]).collect();

            let mut in_flight: Vec<Option<Gathered<B>>> = (0..n).map(|_| None).collect();
            for (c, chunk) in chunks.iter().enumerate().take(depth) {
                in_flight[c] = Some(self.gather_chunk(&group, chunk, &g_eff, &start, fabric)?);
            }

            // Tick c issues the scatter of chunk c-1 and the gather of chunk
            // c-1+depth, computes chunk c, then applies chunk c-1.
            let mut previous: Option<Computed<B>> = None;
            for c in 0..=n {
                let scattered = match previous.take() {
                    Some(done) => {
                        let next = c - 1 + depth;
                        if next < n {
                            in_flight[next] =
                                Some(self.gather_chunk(&group, &chunks[next], &g_eff, &done.done_us, fabric)?);
                        }
                        Some(self.scatter_chunk(&group, done, fabric)?)
                    }
                    None => None,
                };
                if c < n {
                    let gathered = in_flight[c].take().expect("gathered before compute");
                    previous = Some(self.compute_chunk(&group, gathered, fabric)?);
                }
                if let Some(s) = scattered {
                    self.apply_chunk(&group, s, fabric)?;
                }
            }
        }
        self.steps_taken += 1;
        Ok(())
    }

    fn gather_chunk(
        &self,
        group: &[usize],
        chunk: &Chunk,
        g_eff: &ShardedGrads<B>,
        after: &[f64],
        fabric: &mut Fabric,
    ) -> Result<Gathered<B>> {
        let step = self.steps_taken;
        let g = group.len();
        let mut send: Vec<Vec<Vec<Tile<B>>>> = vec![vec![Vec::new(); g]; g];
        for &id in &chunk.param_ids {
            let owner = self.assignment.owner[&id];
            let spec = self.spec(id);
            for (i, &rank) in group.iter().enumerate() {
                send[i][owner].push(Tile {
                    param_id: id,
                    elem_bytes: spec.elem_bytes,
                    data: g_eff[rank][&id].clone(),
                });
            }
        }
        let (recv, timing) = fabric.all_to_all(
            group,
            send,
            Stream::Gather,
            after,
            &format!("gather/c{}/s{step}", chunk.index),
        )?;

        let mut owned = Vec::with_capacity(g);
        for (j, from) in recv.into_iter().enumerate() {
            let mut columns: Vec<std::vec::IntoIter<Tile<B>>> = from.into_iter().map(Vec::into_iter).collect();
            let mut mine = Vec::new();
            for &id in chunk.param_ids.iter().filter(|id| self.assignment.owner[id] == j) {
                let spec = self.spec(id);
                let layout = &self.layouts[&id];
                let tiles: Vec<Tile<B>> = columns
                    .iter_mut()
                    .enumerate()
                    .map(|(i, col)| {
                        col.next()
                            .filter(|t| t.param_id == id)
                            .ok_or_else(|| Error::MissingShard {
                                rank: i,
                                tag: format!("gather of parameter `{}`", spec.name),
                            })
                    })
                    .collect::<Result<_>>()?;
                let full = B::assemble(
                    spec.rows,
                    spec.cols,
                    layout.slices.iter().map(|s| &s.region).zip(tiles.iter().map(|t| &t.data)),
                )?;
                let buf = fabric.alloc(group[j], spec.bytes(), timing.start_us, &format!("G/p{id}/s{step}"));
                mine.push((id, full, buf));
            }
            owned.push(mine);
        }
        Ok(Gathered {
            chunk: chunk.index,
            owned,
            end_us: timing.end_us,
        })
    }

    fn compute_chunk(&self, group: &[usize], gathered: Gathered<B>, fabric: &mut Fabric) -> Result<Computed<B>> {
        let step = self.steps_taken;
        let hyper = &self.hyper;
        let inputs: Vec<Vec<(usize, B)>> = gathered
            .owned
            .iter()
            .map(|v| v.iter().map(|(id, b, _)| (*id, b.clone())).collect())
            .collect();
        let results: Vec<Vec<Result<B>>> = run_all(self.options.exec, inputs, |mine| {
            mine.into_iter().map(|(_, g)| g.orthogonalize(hyper)).collect()
        });

        let mut owned = Vec::with_capacity(group.len());
        let mut done_us = Vec::with_capacity(group.len());
        for ((&rank, inputs), outputs) in group.iter().zip(gathered.owned).zip(results) {
            let mut done = gathered.end_us;
            let mut mine = Vec::with_capacity(inputs.len());
            for ((id, _, g_buf), u) in inputs.into_iter().zip(outputs) {
                let spec = self.spec(id);
                let u = u.map_err(|e| e.for_param(&spec.name))?;
                let ns = fabric.compute(rank, ns_flops(spec, hyper.ns_iterations), gathered.end_us, &ns_tag(id, step));
                let u_buf = fabric.alloc(rank, spec.bytes(), ns.start_us, &format!("U/p{id}/s{step}"));
                fabric.free(g_buf, ns.end_us)?;
                done = ns.end_us;
                mine.push((id, u, u_buf));
            }
            owned.push(mine);
            done_us.push(done);
        }
        Ok(Computed {
            chunk: gathered.chunk,
            owned,
            done_us,
        })
    }

    fn scatter_chunk(&self, group: &[usize], computed: Computed<B>, fabric: &mut Fabric) -> Result<Scattered<B>> {
        let step = self.steps_taken;
        let g = group.len();
        let mut send: Vec<Vec<Vec<Tile<B>>>> = vec![vec![Vec::new(); g]; g];
        let mut owner_bufs = Vec::new();
        for (j, mine) in computed.owned.into_iter().enumerate() {
            for (id, u, buf) in mine {
                let spec = self.spec(id);
                let layout = &self.layouts[&id];
                for (i, row) in send[j].iter_mut().enumerate() {
                    row.push(Tile {
                        param_id: id,
                        elem_bytes: spec.elem_bytes,
                        data: u.extract(layout.region(i))?,
                    });
                }
                owner_bufs.push(buf);
            }
        }
        let (recv, timing) = fabric.all_to_all(
            group,
            send,
            Stream::Scatter,
            &computed.done_us,
            &format!("scatter/c{}/s{step}", computed.chunk),
        )?;
        let mut received = Vec::with_capacity(g);
        let mut buffers = Vec::with_capacity(g);
        for (i, from) in recv.into_iter().enumerate() {
            let tiles: Vec<Tile<B>> = from.into_iter().flatten().collect();
            let bytes = tiles.bytes();
            buffers.push((bytes > 0).then(|| {
                fabric.alloc(group[i], bytes, timing.start_us, &format!("R/c{}/s{step}", computed.chunk))
            }));
            received.push(tiles);
        }
        for buf in owner_bufs {
            fabric.free(buf, timing.end_us)?;
        }
        Ok(Scattered {
            chunk: computed.chunk,
            received,
            buffers,
            end_us: timing.end_us,
        })
    }

    fn apply_chunk(&mut self, group: &[usize], scattered: Scattered<B>, fabric: &mut Fabric) -> Result<()> {
        let step = self.steps_taken;
        for ((&rank, tiles), buf) in group.iter().zip(scattered.received).zip(scattered.buffers) {
            if tiles.is_empty() {
                continue;
            }
            let mut elems = 0usize;
            for tile in tiles {
                let spec = self.spec(tile.param_id).clone();
                let shards = &mut self.ranks[rank];
                let current = &shards.params[&tile.param_id];
                if current.shape() != tile.data.shape() {
                    return Err(Error::LayoutMismatch(format!(
                        "rank {rank}: update shard for `{}` is {:?}, parameter shard is {:?}",
                        spec.name,
                        tile.data.shape(),
                        current.shape()
                    )));
                }
                let next = B::apply_update(current, &tile.data, &self.hyper, spec.rows, spec.cols)
                    .map_err(|e| e.for_param(&spec.name))?;
                elems += next.elems();
                shards.params.insert(tile.param_id, next);
            }
            let t = fabric.compute(
                rank,
                3 * elems as u64,
                scattered.end_us,
                &format!("apply/c{}/s{step}", scattered.chunk),
            );
            if let Some(buf) = buf {
                fabric.free(buf, t.end_us)?;
            }
        }
        Ok(())
    }
}
