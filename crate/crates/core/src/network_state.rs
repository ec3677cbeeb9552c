//! The network of past events: applied history, an inverted node → event
//! index, and pairwise joint-participation weights.

use std::borrow::Cow;
use std::io::{Read, Write};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::event_model::{HyperEvent, NodeRef, NodeSets, NodeType, Timestamp};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("event at {t} precedes state clock {clock}")]
    OutOfOrder { t: Timestamp, clock: Timestamp },
    #[error("joint weight of a node with itself is undefined")]
    SelfPair,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Neighbors = [FxHashMap<u32, u32>; 3];

/// Incrementally maintained state of all applied events.
#[derive(Debug, Clone, Default)]
pub struct NetworkState {
    history: Vec<HyperEvent>,
    postings: [Vec<Vec<u32>>; 3],
    adjacency: [Vec<Neighbors>; 3],
    active: [Vec<u32>; 3],
    seen: [Vec<bool>; 3],
    clock: Option<Timestamp>,
}

/// Per past event, the sizes of its author, reference and keyword overlaps
/// with a candidate. Only events with a non-zero component are listed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlapProfile {
    entries: Vec<(usize, [u32; 3])>,
}

impl OverlapProfile {
    /// `(history position, [authors, references, keywords])`, ascending by position.
    pub fn entries(&self) -> &[(usize, [u32; 3])] {
        &self.entries
    }

    pub fn get(&self, position: usize) -> Option<[u32; 3]> {
        self.entries
            .binary_search_by_key(&position, |(p, _)| *p)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dense per-position overlap accumulator reused across candidates.
#[derive(Debug, Default)]
pub(crate) struct OverlapScratch {
    pub(crate) counts: Vec<[u32; 3]>,
    pub(crate) touched: Vec<u32>,
}

impl OverlapScratch {
    pub(crate) fn clear(&mut self) {
        for &p in &self.touched {
            self.counts[p as usize] = [0; 3];
        }
        self.touched.clear();
    }
}

impl NetworkState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replays `events` in order.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a HyperEvent>) -> Result<Self, StateError> {
        let mut state = Self::new();
        for e in events {
            state.apply_event(e)?;
        }
        Ok(state)
    }

    pub fn history(&self) -> &[HyperEvent] {
        &self.history
    }

    pub fn clock(&self) -> Option<Timestamp> {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn apply_event(&mut self, e: &HyperEvent) -> Result<(), StateError> {
        if let Some(clock) = self.clock {
            if e.t < clock {
                return Err(StateError::OutOfOrder { t: e.t, clock });
            }
        }
        let pos = self.history.len() as u32;
        for ty in NodeType::ALL {
            let k = ty.index();
            if let Some(&max) = e.nodes.get(ty).last() {
                let need = max as usize + 1;
                if self.postings[k].len() < need {
                    self.postings[k].resize_with(need, Vec::new);
                    self.adjacency[k].resize_with(need, Default::default);
                    self.seen[k].resize(need, false);
                }
            }
            for &id in e.nodes.get(ty) {
                self.postings[k][id as usize].push(pos);
                if !self.seen[k][id as usize] {
                    self.seen[k][id as usize] = true;
                    self.active[k].push(id);
                }
            }
        }
        let nodes: Vec<NodeRef> = e.nodes.iter().collect();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &nodes[i + 1..] {
                *self.adjacency[u.node_type.index()][u.id as usize][v.node_type.index()]
                    .entry(v.id)
                    .or_insert(0) += 1;
                *self.adjacency[v.node_type.index()][v.id as usize][u.node_type.index()]
                    .entry(u.id)
                    .or_insert(0) += 1;
            }
        }
        self.history.push(e.clone());
        self.clock = Some(e.t);
        Ok(())
    }

    /// Number of history events with timestamp strictly before `t`.
    pub fn cutoff(&self, t: Timestamp) -> usize {
        self.history.partition_point(|e| e.t < t)
    }

    /// True when every applied event lies strictly before `t`.
    pub fn is_strictly_before(&self, t: Timestamp) -> bool {
        self.clock.is_none_or(|c| c < t)
    }

    /// The state restricted to events strictly before `t`; borrowed when
    /// nothing needs to be removed.
    pub fn before(&self, t: Timestamp) -> Cow<'_, NetworkState> {
        if self.is_strictly_before(t) {
            Cow::Borrowed(self)
        } else {
            let n = self.cutoff(t);
            let state = NetworkState::from_events(&self.history[..n]).expect("history is ordered");
            Cow::Owned(state)
        }
    }

    /// Weight over the full applied history; zero for `u == v`.
    #[inline]
    pub fn weight(&self, u: NodeRef, v: NodeRef) -> u32 {
        self.neighbors(u, v.node_type)
            .and_then(|m| m.get(&v.id))
            .copied()
            .unwrap_or(0)
    }

    /// Count of history events with `tₘ < t` containing both `u` and `v`.
    pub fn joint_weight(&self, u: NodeRef, v: NodeRef, t: Timestamp) -> Result<u32, StateError> {
        if u == v {
            return Err(StateError::SelfPair);
        }
        if self.is_strictly_before(t) {
            return Ok(self.weight(u, v));
        }
        let cut = self.cutoff(t) as u32;
        let a = self.postings(u);
        let b = self.postings(v);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() && a[i] < cut && b[j] < cut {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(n)
    }

    /// Weighted neighbours of `node` among nodes of type `ty`.
    #[inline]
    pub fn neighbors(&self, node: NodeRef, ty: NodeType) -> Option<&FxHashMap<u32, u32>> {
        self.adjacency[node.node_type.index()]
            .get(node.id as usize)
            .map(|n| &n[ty.index()])
    }

    /// History positions of the events containing `node`, ascending.
    #[inline]
    pub fn postings(&self, node: NodeRef) -> &[u32] {
        self.postings[node.node_type.index()]
            .get(node.id as usize)
            .map_or(&[], Vec::as_slice)
    }

    /// Nodes of type `ty` seen in the history, in first-seen order.
    pub fn active(&self, ty: NodeType) -> &[u32] {
        &self.active[ty.index()]
    }

    pub fn is_active(&self, node: NodeRef) -> bool {
        self.seen[node.node_type.index()]
            .get(node.id as usize)
            .copied()
            .unwrap_or(false)
    }

    /// Upper bound (exclusive) on ids seen for `ty`.
    pub fn id_bound(&self, ty: NodeType) -> usize {
        self.postings[ty.index()].len()
    }

    pub(crate) fn fill_overlaps(&self, cand: &NodeSets, cutoff: usize, scratch: &mut OverlapScratch) {
        if scratch.counts.len() < cutoff {
            scratch.counts.resize(cutoff, [0; 3]);
        }
        let cut = cutoff as u32;
        for ty in NodeType::ALL {
            let k = ty.index();
            for &id in cand.get(ty) {
                for &p in self.postings(NodeRef::new(ty, id)) {
                    if p >= cut {
                        break;
                    }
                    let c = &mut scratch.counts[p as usize];
                    if *c == [0; 3] {
                        scratch.touched.push(p);
                    }
                    c[k] += 1;
                }
            }
        }
    }

    /// Overlap sizes between `cand` and every event with `tₘ < t`.
    pub fn overlap_profile(&self, cand: &NodeSets, t: Timestamp) -> OverlapProfile {
        let mut scratch = OverlapScratch::default();
        self.fill_overlaps(cand, self.cutoff(t), &mut scratch);
        let mut entries: Vec<(usize, [u32; 3])> = scratch
            .touched
            .iter()
            .map(|&p| (p as usize, scratch.counts[p as usize]))
            .collect();
        entries.sort_unstable_by_key(|(p, _)| *p);
        OverlapProfile { entries }
    }

    /// All unordered dyads with positive weight, each listed once with `u < v`.
    pub fn dyad_weights(&self) -> Vec<(NodeRef, NodeRef, u32)> {
        let mut out = Vec::new();
        for ty in NodeType::ALL {
            for (id, neigh) in self.adjacency[ty.index()].iter().enumerate() {
                let u = NodeRef::new(ty, id as u32);
                for other in NodeType::ALL {
                    for (&vid, &w) in &neigh[other.index()] {
                        let v = NodeRef::new(other, vid);
                        if u < v {
                            out.push((u, v, w));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Sum of all unordered dyad weights.
    pub fn total_dyad_weight(&self) -> u64 {
        let twice: u64 = self
            .adjacency
            .iter()
            .flatten()
            .flat_map(|n| n.iter())
            .map(|m| m.values().map(|&w| w as u64).sum::<u64>())
            .sum();
        twice / 2
    }

    /// Binary snapshot: magic, format version, then the applied history.
    /// Indexes are rebuilt on load.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), StateError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.history.len() as u64).to_le_bytes())?;
        for e in &self.history {
            w.write_all(&e.t.value().to_le_bytes())?;
            w.write_all(&(e.seq as u64).to_le_bytes())?;
            for ty in NodeType::ALL {
                let set = e.nodes.get(ty);
                w.write_all(&(set.len() as u32).to_le_bytes())?;
                for &id in set {
                    w.write_all(&id.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, StateError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(StateError::Snapshot("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(StateError::Snapshot(format!("unsupported version {version}")));
        }
        let n = read_u64(&mut r)?;
        let mut state = NetworkState::new();
        for _ in 0..n {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            let t = Timestamp::new(f64::from_le_bytes(buf))
                .ok_or_else(|| StateError::Snapshot("non-finite timestamp".into()))?;
            let seq = read_u64(&mut r)? as usize;
            let mut sets: [Vec<u32>; 3] = Default::default();
            for set in sets.iter_mut() {
                let len = read_u32(&mut r)?;
                for _ in 0..len {
                    set.push(read_u32(&mut r)?);
                }
            }
            let [a, rf, k] = sets;
            state.apply_event(&HyperEvent::new(t, seq, NodeSets::new(a, rf, k)))?;
        }
        Ok(state)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"RHEMSNAP";
const SNAPSHOT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
