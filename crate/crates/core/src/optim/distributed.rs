use super::{ns_tag, run_all, OptimizerState, ShardedGrads};
use crate::error::Result;
use crate::fabric::Fabric;
use crate::sharding::ns_flops;
use crate::tensor::Block;

impl<B: Block> OptimizerState<B> {
    /// Baseline: per parameter, all-gather the effective gradient, run
    /// Newton-Schulz on every rank of the group, keep the local slice.
    pub fn distributed_muon_step(&mut self, grads: &ShardedGrads<B>, fabric: &mut Fabric) -> Result<()> {
        let step = self.steps_taken;
        let (g_eff, mut ready) = self.momentum_phase(grads, fabric)?;
        let hyper = self.hyper.clone();
        let exec = self.options.exec;

        for replica in 0..self.mesh.dp_replicate {
            let group = self.mesh.replica_group(replica);
            for p in self.specs.clone() {
                let layout = self.layouts[&p.id].clone();
                let shards = group.iter().map(|&r| Some(g_eff[r][&p.id].clone())).collect();
                let after: Vec<f64> = group.iter().map(|&r| ready[r]).collect();
                let (full, gathered, timing) = fabric.all_gather(
                    &group,
                    &layout,
                    shards,
                    p.elem_bytes,
                    &after,
                    &format!("allgather/p{}/s{step}", p.id),
                )?;

                // Redundant orthogonalization: every rank computes on its own copy.
                let updates: Vec<Result<B>> = run_all(exec, full, |g| g.orthogonalize(&hyper));
                let flops = ns_flops(&p, hyper.ns_iterations);
                let full_bytes = p.bytes();
                for (i, (&rank, update)) in group.iter().zip(updates).enumerate() {
                    let u = update.map_err(|e| e.for_param(&p.name))?;
                    let ns = fabric.compute(rank, flops, timing.end_us, &ns_tag(p.id, step));
                    let u_buf = fabric.alloc(rank, full_bytes, ns.start_us, &format!("U/p{}/s{step}", p.id));
                    fabric.free(gathered[i], ns.end_us)?;

                    let region = layout.region(i);
                    let u_local = u.extract(region)?;
                    let shards = &mut self.ranks[rank];
                    let next = B::apply_update(&shards.params[&p.id], &u_local, &hyper, p.rows, p.cols)
                        .map_err(|e| e.for_param(&p.name))?;
                    shards.params.insert(p.id, next);
                    let apply = fabric.compute(
                        rank,
                        3 * region.elems() as u64,
                        ns.end_us,
                        &format!("apply/p{}/s{step}", p.id),
                    );
                    fabric.free(u_buf, apply.end_us)?;
                    ready[rank] = apply.end_us;
                }
            }
        }
        self.steps_taken += 1;
        Ok(())
    }
}
