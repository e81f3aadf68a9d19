//! Deterministic in-process rank fabric.
//!
//! Payloads move between ranks exactly (an all-to-all is a transpose of the
//! send matrix); simulated time advances separately through a [`CostModel`].
//! Each rank owns three in-order streams: one for compute and one each for the
//! gather and scatter process groups, so a gather and a scatter can be in
//! flight at the same time as a compute. An operation starts once its stream
//! is free and its data dependencies (`after`) are met; a collective starts
//! when the last participant arrives.
//!
//! Issuing a collective is a rendezvous: a rank cannot run compute issued
//! after a collective (in program order) before that collective has started
//! on every participant. This is what makes a per-chunk all-to-all act as a
//! barrier across ranks.
//!
//! Every operation is recorded in an [`EventTrace`]. Memory is accounted with
//! explicit alloc/free events, and [`simulate`] folds a trace into per-rank
//! finish times and peak live bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sharding::ShardLayout;
use crate::tensor::Block;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub alpha_us: f64,
    pub bandwidth_bytes_per_us: f64,
    pub compute_flops_per_us: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha_us: 20.0,
            bandwidth_bytes_per_us: 400e3,
            compute_flops_per_us: 200e6,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.alpha_us) && ok(self.bandwidth_bytes_per_us) && ok(self.compute_flops_per_us)) {
            return Err(Error::Config(format!(
                "cost_model values must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    /// Alpha-beta time of a collective whose busiest rank moves `bytes`.
    pub fn collective_us(&self, bytes: u64) -> f64 {
        self.alpha_us + bytes as f64 / self.bandwidth_bytes_per_us
    }

    pub fn compute_us(&self, flops: u64) -> f64 {
        flops as f64 / self.compute_flops_per_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Compute,
    Send,
    Recv,
    CollectiveBegin,
    CollectiveEnd,
    Alloc,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub rank: usize,
    pub kind: EventKind,
    pub start_us: f64,
    pub end_us: f64,
    pub bytes: u64,
    pub flops: u64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventTrace {
    pub world_size: usize,
    pub events: Vec<Event>,
}

impl EventTrace {
    pub fn new(world_size: usize) -> Self {
        EventTrace {
            world_size,
            events: Vec::new(),
        }
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// One JSON object per line: rank, kind, start_us, end_us, bytes, flops, tag.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.events {
            let line = serde_json::to_string(e).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R, world_size: usize) -> Result<Self> {
        let mut trace = EventTrace::new(world_size);
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line)
                .map_err(|e| Error::Io(format!("trace line {}: {e}", n + 1)))?;
            trace.events.push(e);
        }
        Ok(trace)
    }

    /// Check the structural invariants: compute events never overlap on a
    /// rank, every collective ends after all of its participants arrived, and
    /// live memory never goes negative.
    pub fn validate(&self) -> Result<()> {
        let mut compute: Vec<Vec<(f64, f64)>> = vec![Vec::new(); self.world_size];
        let mut begins: BTreeMap<&str, f64> = BTreeMap::new();
        let mut ends: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for e in &self.events {
            if e.rank >= self.world_size {
                return Err(Error::BufferMismatch(format!("event on rank {} outside world", e.rank)));
            }
            match e.kind {
                EventKind::Compute => compute[e.rank].push((e.start_us, e.end_us)),
                EventKind::CollectiveBegin => {
                    let b = begins.entry(&e.tag).or_insert(f64::NEG_INFINITY);
                    *b = b.max(e.start_us);
                }
                EventKind::CollectiveEnd => ends.entry(&e.tag).or_default().push(e.end_us),
                _ => {}
            }
        }
        for (rank, spans) in compute.iter_mut().enumerate() {
            spans.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
            for w in spans.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::BufferMismatch(format!(
                        "rank {rank}: compute events overlap at {} us",
                        w[1].0
                    )));
                }
            }
        }
        for (tag, end_times) in &ends {
            let last_begin = begins.get(tag).copied().unwrap_or(f64::NEG_INFINITY);
            if end_times.iter().any(|&t| t < last_begin) {
                return Err(Error::BufferMismatch(format!(
                    "collective {tag} ends before its last participant arrives"
                )));
            }
        }
        simulate(self).map(|_| ())
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

/// Per-rank summary of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub finish_us: Vec<f64>,
    pub peak_bytes: Vec<u64>,
}

impl SimResult {
    pub fn makespan_us(&self) -> f64 {
        self.finish_us.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_peak_bytes(&self) -> u64 {
        self.peak_bytes.iter().copied().max().unwrap_or(0)
    }
}

/// Finish time is the latest event end on each rank; peak bytes is the
/// largest running sum of allocs minus frees, ordered by time and then by
/// trace position.
pub fn simulate(trace: &EventTrace) -> Result<SimResult> {
    let n = trace.world_size;
    let mut finish = vec![0.0f64; n];
    let mut mem: Vec<Vec<(f64, usize, i128)>> = vec![Vec::new(); n];
    for (seq, e) in trace.events.iter().enumerate() {
        if e.rank >= n {
            return Err(Error::BufferMismatch(format!("event on rank {} outside world", e.rank)));
        }
        finish[e.rank] = finish[e.rank].max(e.end_us);
        match e.kind {
            EventKind::Alloc => mem[e.rank].push((e.start_us, seq, e.bytes as i128)),
            EventKind::Free => mem[e.rank].push((e.start_us, seq, -(e.bytes as i128))),
            _ => {}
        }
    }
    let mut peak = vec![0u64; n];
    for (rank, ops) in mem.iter_mut().enumerate() {
        ops.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times").then(a.1.cmp(&b.1)));
        let mut live: i128 = 0;
        for &(t, _, delta) in ops.iter() {
            live += delta;
            if live < 0 {
                return Err(Error::NegativeLiveMemory { rank, time_us: t });
            }
            peak[rank] = peak[rank].max(live as u64);
        }
    }
    Ok(SimResult {
        finish_us: finish,
        peak_bytes: peak,
    })
}

/// Anything whose size the cost model can charge.
pub trait Payload {
    fn bytes(&self) -> u64;
}

impl<P: Payload> Payload for Vec<P> {
    fn bytes(&self) -> u64 {
        self.iter().map(Payload::bytes).sum()
    }
}

/// A block tagged with the parameter it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile<B> {
    pub param_id: usize,
    pub elem_bytes: usize,
    pub data: B,
}

impl<B: Block> Payload for Tile<B> {
    fn bytes(&self) -> u64 {
        (self.data.elems() * self.elem_bytes) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Compute,
    Gather,
    Scatter,
}

impl Stream {
    fn index(self) -> usize {
        self as usize
    }
}

/// Start and completion of a collective, shared by all participants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub start_us: f64,
    pub end_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufId(u64);

/// Named subsets of the world used for gather and scatter collectives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankGroup {
    pub world: Vec<usize>,
    pub sub_groups: BTreeMap<String, Vec<usize>>,
}

impl RankGroup {
    pub fn new(world_size: usize) -> Self {
        RankGroup {
            world: (0..world_size).collect(),
            sub_groups: BTreeMap::new(),
        }
    }

    pub fn add_sub_group(&mut self, name: impl Into<String>, ranks: Vec<usize>) -> Result<()> {
        let name = name.into();
        let mut seen = std::collections::BTreeSet::new();
        for r in &ranks {
            if !self.world.contains(r) || !seen.insert(*r) {
                return Err(Error::InvalidMesh(format!(
                    "sub-group {name}: rank {r} is duplicated or outside the world"
                )));
            }
        }
        self.sub_groups.insert(name, ranks);
        Ok(())
    }

    pub fn sub_group(&self, name: &str) -> Option<&[usize]> {
        self.sub_groups.get(name).map(Vec::as_slice)
    }
}

/// Simulated rank group. Owns the trace and the per-rank stream clocks.
#[derive(Debug, Clone)]
pub struct Fabric {
    cost: CostModel,
    trace: EventTrace,
    stream_free: Vec<[f64; 3]>,
    /// Latest collective start each rank has rendezvoused at.
    issued: Vec<f64>,
    live: BTreeMap<BufId, (usize, u64, String)>,
    next_buf: u64,
    next_collective: u64,
}

impl Fabric {
    pub fn new(world_size: usize, cost: CostModel) -> Self {
        Fabric {
            cost,
            trace: EventTrace::new(world_size),
            stream_free: vec![[0.0; 3]; world_size],
            issued: vec![0.0; world_size],
            live: BTreeMap::new(),
            next_buf: 0,
            next_collective: 0,
        }
    }

    pub fn world_size(&self) -> usize {
        self.trace.world_size
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EventTrace {
        self.trace
    }

    /// Time at which `rank`'s stream becomes idle.
    pub fn stream_free(&self, rank: usize, stream: Stream) -> f64 {
        self.stream_free[rank][stream.index()]
    }

    /// Latest time any stream on `rank` is busy.
    pub fn rank_clock(&self, rank: usize) -> f64 {
        self.stream_free[rank].iter().copied().fold(0.0, f64::max)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, rank: usize, kind: EventKind, start: f64, end: f64, bytes: u64, flops: u64, tag: &str) {
        self.trace.events.push(Event {
            rank,
            kind,
            start_us: start,
            end_us: end,
            bytes,
            flops,
            tag: tag.to_string(),
        });
    }

    /// Run `flops` of work on `rank`'s compute stream, no earlier than
    /// `after` and the rank's last collective rendezvous.
    pub fn compute(&mut self, rank: usize, flops: u64, after: f64, tag: &str) -> Timing {
        let start = after
            .max(self.stream_free(rank, Stream::Compute))
            .max(self.issued[rank]);
        let end = start + self.cost.compute_us(flops);
        self.stream_free[rank][Stream::Compute.index()] = end;
        self.push(rank, EventKind::Compute, start, end, 0, flops, tag);
        Timing {
            start_us: start,
            end_us: end,
        }
    }

    pub fn alloc(&mut self, rank: usize, bytes: u64, at: f64, tag: &str) -> BufId {
        let id = BufId(self.next_buf);
        self.next_buf += 1;
        self.live.insert(id, (rank, bytes, tag.to_string()));
        self.push(rank, EventKind::Alloc, at, at, bytes, 0, tag);
        id
    }

    pub fn free(&mut self, buf: BufId, at: f64) -> Result<()> {
        let (rank, bytes, tag) = self
            .live
            .remove(&buf)
            .ok_or_else(|| Error::BufferMismatch(format!("double free of {buf:?}")))?;
        self.push(rank, EventKind::Free, at, at, bytes, 0, &tag);
        Ok(())
    }

    /// Bytes currently allocated and not yet freed, per rank.
    pub fn live_bytes(&self) -> Vec<u64> {
        let mut out = vec![0; self.world_size()];
        for (rank, bytes, _) in self.live.values() {
            out[*rank] += bytes;
        }
        out
    }

    fn check_group(&self, group: &[usize], after: &[f64]) -> Result<()> {
        if group.is_empty() || after.len() != group.len() {
            return Err(Error::BufferMismatch(format!(
                "group of {} ranks with {} readiness times",
                group.len(),
                after.len()
            )));
        }
        if let Some(r) = group.iter().find(|&&r| r >= self.world_size()) {
            return Err(Error::BufferMismatch(format!("rank {r} outside world")));
        }
        Ok(())
    }

    /// Synchronize `group` on `stream`, moving `bytes_out[i]` / `bytes_in[i]`
    /// for member `i`, and record begin/send/recv/end events.
    fn collective(
        &mut self,
        group: &[usize],
        stream: Stream,
        after: &[f64],
        bytes_out: &[u64],
        bytes_in: &[u64],
        tag: &str,
    ) -> Timing {
        let tag = format!("{tag}@{}", self.next_collective);
        self.next_collective += 1;
        let arrivals: Vec<f64> = group
            .iter()
            .zip(after)
            .map(|(&r, &a)| a.max(self.stream_free(r, stream)))
            .collect();
        let start = arrivals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let busiest = bytes_out
            .iter()
            .zip(bytes_in)
            .map(|(&o, &i)| o.max(i))
            .max()
            .unwrap_or(0);
        let end = if group.len() == 1 {
            start
        } else {
            start + self.cost.collective_us(busiest)
        };
        for (i, &r) in group.iter().enumerate() {
            self.push(r, EventKind::CollectiveBegin, arrivals[i], arrivals[i], 0, 0, &tag);
            self.push(r, EventKind::Send, start, end, bytes_out[i], 0, &tag);
            self.push(r, EventKind::Recv, start, end, bytes_in[i], 0, &tag);
            self.push(r, EventKind::CollectiveEnd, start, end, 0, 0, &tag);
            self.stream_free[r][stream.index()] = end;
            self.issued[r] = self.issued[r].max(start);
        }
        Timing {
            start_us: start,
            end_us: end,
        }
    }

    /// `recv[p][r] = send[r][p]` over `group` (indices are group positions).
    /// Self-sends are free.
    pub fn all_to_all<P: Payload>(
        &mut self,
        group: &[usize],
        send: Vec<Vec<P>>,
        stream: Stream,
        after: &[f64],
        tag: &str,
    ) -> Result<(Vec<Vec<P>>, Timing)> {
        self.check_group(group, after)?;
        let g = group.len();
        if send.len() != g || send.iter().any(|row| row.len() != g) {
            return Err(Error::BufferMismatch(format!(
                "all-to-all over {g} ranks needs a {g}x{g} send matrix"
            )));
        }
        let mut bytes_out = vec![0u64; g];
        let mut bytes_in = vec![0u64; g];
        for (r, row) in send.iter().enumerate() {
            for (p, buf) in row.iter().enumerate() {
                if r != p {
                    let b = buf.bytes();
                    bytes_out[r] += b;
                    bytes_in[p] += b;
                }
            }
        }
        let timing = self.collective(group, stream, after, &bytes_out, &bytes_in, tag);

        let mut recv: Vec<Vec<Option<P>>> = (0..g).map(|_| (0..g).map(|_| None).collect()).collect();
        for (r, row) in send.into_iter().enumerate() {
            for (p, buf) in row.into_iter().enumerate() {
                recv[p][r] = Some(buf);
            }
        }
        let recv = recv
            .into_iter()
            .map(|row| row.into_iter().map(|b| b.expect("filled")).collect())
            .collect();
        Ok((recv, timing))
    }

    /// Every member receives the full block reassembled from its layout.
    /// The full buffer is charged to each member at collective start; the
    /// returned ids must be freed by the caller.
    pub fn all_gather<B: Block>(
        &mut self,
        group: &[usize],
        layout: &ShardLayout,
        shards: Vec<Option<B>>,
        elem_bytes: usize,
        after: &[f64],
        tag: &str,
    ) -> Result<(Vec<B>, Vec<BufId>, Timing)> {
        self.check_group(group, after)?;
        if layout.group_size() != group.len() || shards.len() != group.len() {
            return Err(Error::LayoutMismatch(format!(
                "param {}: {} slices, {} shards, group of {}",
                layout.param_id,
                layout.group_size(),
                shards.len(),
                group.len()
            )));
        }
        let shards: Vec<B> = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::MissingShard {
                    rank: i,
                    tag: tag.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        for (i, s) in shards.iter().enumerate() {
            let r = layout.region(i);
            if s.shape() != (r.rows, r.cols) {
                return Err(Error::ShapeMismatch {
                    left: (r.rows, r.cols),
                    right: s.shape(),
                });
            }
        }
        let full = B::assemble(
            layout.rows,
            layout.cols,
            layout.slices.iter().map(|s| &s.region).zip(shards.iter()),
        )?;

        let shard_bytes: Vec<u64> = shards.iter().map(|s| (s.elems() * elem_bytes) as u64).collect();
        let full_bytes = (layout.rows * layout.cols * elem_bytes) as u64;
        let g = group.len() as u64;
        let bytes_out: Vec<u64> = shard_bytes.iter().map(|b| b * (g - 1)).collect();
        let bytes_in: Vec<u64> = shard_bytes.iter().map(|b| full_bytes - b).collect();
        let timing = self.collective(group, Stream::Gather, after, &bytes_out, &bytes_in, tag);

        let bufs = group
            .iter()
            .map(|&r| self.alloc(r, full_bytes, timing.start_us, &format!("{tag}/full")))
            .collect();
        Ok((vec![full; group.len()], bufs, timing))
    }
}
