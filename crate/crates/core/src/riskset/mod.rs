//! Risk pools, size-matched control sampling and the stratified design matrix.

mod design;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use design::{DesignMatrix, DesignMeta, Row, Stratum};

use crate::event_model::{EventSequence, HyperEvent, NodeRef, NodeSets, NodeType};
use crate::network_state::{NetworkState, StateError};
use crate::statistics::{EffectCatalog, EffectEvaluator};

/// Redraws allowed before a control identical to the case is accepted.
pub const MAX_REDRAWS: usize = 16;
/// Default number of controls per observed event.
pub const DEFAULT_CONTROLS: usize = 10;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("{node_type} pool has {available} nodes, {required} required")]
    PoolTooSmall { node_type: NodeType, available: usize, required: usize },
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("controls per event must be at least 1")]
    NoControls,
    #[error("unknown design column {0:?}")]
    UnknownColumn(String),
    #[error("design columns do not match")]
    ColumnMismatch,
    #[error("empty design")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("stratum {stratum} has {cases} case rows")]
    CaseCount { stratum: usize, cases: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nodes eligible at an event: everything in the past state plus the
/// event's own nodes.
#[derive(Debug, Clone)]
pub struct RiskPools<'a> {
    base: [&'a [u32]; 3],
    extra: [Vec<u32>; 3],
}

impl RiskPools<'_> {
    pub fn size(&self, ty: NodeType) -> usize {
        self.base[ty.index()].len() + self.extra[ty.index()].len()
    }

    /// The `i`-th pool member (base nodes first, in first-seen order).
    pub fn get(&self, ty: NodeType, i: usize) -> u32 {
        let base = self.base[ty.index()];
        if i < base.len() {
            base[i]
        } else {
            self.extra[ty.index()][i - base.len()]
        }
    }

    pub fn members(&self, ty: NodeType) -> Vec<u32> {
        let mut v: Vec<u32> = self.base[ty.index()].iter().chain(&self.extra[ty.index()]).copied().collect();
        v.sort_unstable();
        v
    }
}

pub fn active_sets<'a>(state: &'a NetworkState, event: &HyperEvent) -> RiskPools<'a> {
    let mut extra: [Vec<u32>; 3] = Default::default();
    for ty in NodeType::ALL {
        extra[ty.index()] = event
            .nodes
            .get(ty)
            .iter()
            .copied()
            .filter(|&id| !state.is_active(NodeRef::new(ty, id)))
            .collect();
    }
    RiskPools {
        base: [
            state.active(NodeType::Author),
            state.active(NodeType::Reference),
            state.active(NodeType::Keyword),
        ],
        extra,
    }
}

/// A sampled non-event.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub nodes: NodeSets,
    /// Identical to the case after exhausting the redraws.
    pub duplicate: bool,
}

/// Draws `m` controls matching the event's set sizes, uniformly without
/// replacement within each pool and independently across controls.
pub fn sample_controls<R: Rng + ?Sized>(
    event: &HyperEvent,
    pools: &RiskPools<'_>,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Control>, SampleError> {
    let sizes = event.nodes.sizes();
    for ty in NodeType::ALL {
        let (available, required) = (pools.size(ty), sizes[ty.index()]);
        if available < required {
            return Err(SampleError::PoolTooSmall { node_type: ty, available, required });
        }
    }
    let draw = |rng: &mut R| {
        let mut sets: [Vec<u32>; 3] = Default::default();
        for ty in NodeType::ALL {
            sets[ty.index()] = index::sample(rng, pools.size(ty), sizes[ty.index()])
                .into_iter()
                .map(|i| pools.get(ty, i))
                .collect();
        }
        let [a, r, k] = sets;
        NodeSets::new(a, r, k)
    };
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut nodes = draw(rng);
        let mut tries = 0;
        while nodes == event.nodes && tries < MAX_REDRAWS {
            nodes = draw(rng);
            tries += 1;
        }
        let duplicate = nodes == event.nodes;
        out.push(Control { nodes, duplicate });
    }
    Ok(out)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stratum of event `index`; depends on nothing else, so
/// appending events never changes earlier strata.
pub fn stratum_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64)))
}

/// One chronological pass: for every group of equal timestamps, sample each
/// event's controls and compute all rows against the state of strictly
/// earlier events, then apply the group.
pub fn build_design_matrix(
    seq: &EventSequence,
    catalog: &EffectCatalog,
    m: usize,
    seed: u64,
) -> Result<DesignMatrix, DesignError> {
    if m == 0 {
        return Err(DesignError::NoControls);
    }
    let events = seq.events();
    let mut state = NetworkState::new();
    let mut strata = Vec::with_capacity(events.len());
    let mut start = 0;
    for group in events.chunk_by(|a, b| a.t == b.t) {
        let mut jobs: Vec<(usize, NodeSets, bool, bool)> = Vec::with_capacity(group.len() * (m + 1));
        for (offset, event) in group.iter().enumerate() {
            let idx = start + offset;
            let pools = active_sets(&state, event);
            let mut rng = stratum_rng(seed, idx);
            jobs.push((idx, event.nodes.clone(), true, false));
            match sample_controls(event, &pools, m, &mut rng) {
                Ok(controls) => {
                    jobs.extend(controls.into_iter().map(|c| (idx, c.nodes, false, c.duplicate)));
                }
                Err(e) => log::warn!("event {idx}: {e}; stratum kept case-only"),
            }
        }
        let evaluator = EffectEvaluator::new(&state, group[0].t, catalog);
        let rows: Vec<Vec<f64>> = jobs.par_iter().map(|(_, nodes, _, _)| evaluator.evaluate(nodes)).collect();
        drop(evaluator);
        for ((idx, _, is_case, duplicate), values) in jobs.into_iter().zip(rows) {
            if strata.last().is_none_or(|s: &Stratum| s.event != idx) {
                strata.push(Stratum { event: idx, rows: Vec::with_capacity(m + 1) });
            }
            strata.last_mut().expect("pushed").rows.push(Row { values, is_case, duplicate });
        }
        for event in group {
            state.apply_event(event)?;
        }
        start += group.len();
    }
    Ok(DesignMatrix::new(catalog.names(), strata, m, seed, catalog.to_config_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{SequenceBuilder, Timestamp};

    fn figure_sequence() -> EventSequence {
        let mut b = SequenceBuilder::new();
        let none: [&str; 0] = [];
        b.push(1, Timestamp::from(1), &["A", "B"], &none, &none).unwrap();
        b.push(2, Timestamp::from(2), &["B", "C"], &none, &none).unwrap();
        b.push(3, Timestamp::from(3), &["A", "C"], &none, &none).unwrap();
        b.finish()
    }

    #[test]
    fn first_event_pools_are_its_own_sets() {
        let seq = figure_sequence();
        let state = NetworkState::new();
        let pools = active_sets(&state, &seq.events()[0]);
        assert_eq!(pools.members(NodeType::Author), vec![0, 1]);
        assert_eq!(pools.size(NodeType::Reference), 0);
    }

    #[test]
    fn later_nodes_absent_from_earlier_pools() {
        let seq = figure_sequence();
        let state = NetworkState::from_events(&seq.events()[..1]).unwrap();
        let pools = active_sets(&state, &seq.events()[0]);
        assert!(!pools.members(NodeType::Author).contains(&2));
    }

    #[test]
    fn forced_degenerate_draw_flags_duplicates() {
        let seq = figure_sequence();
        let state = NetworkState::new();
        let ev = &seq.events()[0];
        let pools = active_sets(&state, ev);
        let controls = sample_controls(ev, &pools, 4, &mut stratum_rng(1, 0)).unwrap();
        assert!(controls.iter().all(|c| c.duplicate && c.nodes == ev.nodes));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let seq = figure_sequence();
        let state = NetworkState::from_events(&seq.events()[..2]).unwrap();
        let ev = &seq.events()[2];
        let pools = active_sets(&state, ev);
        let a = sample_controls(ev, &pools, 5, &mut stratum_rng(9, 2)).unwrap();
        let b = sample_controls(ev, &pools, 5, &mut stratum_rng(9, 2)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.nodes.sizes() == ev.nodes.sizes()));
    }

    #[test]
    fn pool_too_small_names_the_type() {
        let seq = figure_sequence();
        let state = NetworkState::new();
        let big = HyperEvent::new(1, 0, NodeSets::new(vec![0], vec![0, 1], vec![]));
        let pools = active_sets(&state, &seq.events()[0]);
        match sample_controls(&big, &pools, 1, &mut stratum_rng(0, 0)) {
            Err(SampleError::PoolTooSmall { node_type, .. }) => assert_eq!(node_type, NodeType::Reference),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn design_of_figure_sequence() {
        let seq = figure_sequence();
        let catalog = EffectCatalog::standard();
        let d = build_design_matrix(&seq, &catalog, 2, 7).unwrap();
        assert_eq!(d.n_rows(), 9);
        assert_eq!(d.strata.len(), 3);
        assert!(d.strata[0].rows.iter().all(|r| r.values.iter().all(|&v| v == 0.0)));
        let col = catalog.position("closure.aut.aut.aut").unwrap();
        assert_eq!(d.strata[2].case().unwrap().values[col], 1.0);
        assert!(matches!(build_design_matrix(&seq, &catalog, 0, 7), Err(DesignError::NoControls)));
    }

    #[test]
    fn single_event_design_is_all_zero() {
        let seq = figure_sequence().prefix(1);
        let d = build_design_matrix(&seq, &EffectCatalog::standard(), 10, 0).unwrap();
        assert_eq!(d.strata.len(), 1);
        assert_eq!(d.n_rows(), 11);
        assert!(d.strata[0].rows.iter().all(|r| r.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let seq = figure_sequence();
        let d = build_design_matrix(&seq, &EffectCatalog::standard(), 3, 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DesignMatrix::read_csv(buf.as_slice(), Some(d.meta.clone())).unwrap();
        assert_eq!(back.columns, d.columns);
        for (a, b) in back.strata.iter().zip(&d.strata) {
            assert_eq!(a.event, b.event);
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                assert_eq!(ra.values, rb.values);
                assert_eq!(ra.is_case, rb.is_case);
            }
        }
        let mut wrong = d.meta.clone();
        wrong.catalog.swap(0, 1);
        assert!(matches!(DesignMatrix::read_csv(buf.as_slice(), Some(wrong)), Err(DesignError::ColumnMismatch)));
    }
}
