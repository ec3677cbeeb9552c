//! Effect statistics of a candidate hyperedge against the past network:
//! geometrically weighted subset repetition (GWSR) and two-path closure.

mod catalog;

use std::borrow::Cow;
use std::cell::RefCell;

use rustc_hash::FxHashMap;
use thiserror::Error;

pub use catalog::{
    definition, ClosureSpec, EffectCatalog, EffectDef, EffectKind, GwsrConfig, DEFAULT_DECAY, INACTIVE_SIDE,
    STANDARD_EFFECTS,
};

use crate::event_model::{NodeRef, NodeSets, NodeType, Timestamp};
use crate::network_state::{NetworkState, OverlapScratch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown effect {0:?}")]
    UnknownEffect(String),
    #[error("subset order ({p}, {q}) exceeds candidate set sizes ({x}, {y})")]
    OrderTooLarge { p: usize, q: usize, x: usize, y: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwsrValue {
    pub value: f64,
    /// Set when a required candidate set was empty; `value` is then 0.
    pub degenerate: bool,
}

/// `{1 − (1 − e^{−decay})^k} · k`
#[inline]
fn geometric_weight(k: u32, decay: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if decay == 0.0 {
        return k as f64;
    }
    let saturation = -((k as f64) * (-(-decay).exp()).ln_1p()).exp_m1();
    saturation * k as f64
}

fn gwsr_from_overlaps<'a>(
    cand: &NodeSets,
    cfg: &GwsrConfig,
    overlaps: impl Iterator<Item = &'a [u32; 3]>,
) -> GwsrValue {
    let xs = cand.get(cfg.source).len();
    let ys = cand.get(cfg.target).len();
    let (si, ti) = (cfg.source.index(), cfg.target.index());
    let (src, tgt) = (cfg.source_active(), cfg.target_active());
    if (src && xs == 0) || (tgt && ys == 0) {
        return GwsrValue { value: 0.0, degenerate: true };
    }
    let mut sum = 0.0;
    for ov in overlaps {
        let term = match (src, tgt) {
            (true, true) => geometric_weight(ov[si], cfg.kappa) * geometric_weight(ov[ti], cfg.lambda),
            (true, false) => geometric_weight(ov[si], cfg.kappa),
            (false, true) => geometric_weight(ov[ti], cfg.lambda),
            (false, false) => 0.0,
        };
        sum += term;
    }
    let (scale, norm) = match (src, tgt) {
        (true, true) => ((cfg.kappa + cfg.lambda).exp(), (xs * ys) as f64),
        (true, false) => (cfg.kappa.exp(), xs as f64),
        (false, true) => (cfg.lambda.exp(), ys as f64),
        (false, false) => (0.0, 1.0),
    };
    GwsrValue { value: scale * sum / norm, degenerate: false }
}

/// Geometrically weighted subset repetition of `cand` at time `t`.
pub fn gwsr(state: &NetworkState, cand: &NodeSets, t: Timestamp, cfg: &GwsrConfig) -> Result<GwsrValue, StatError> {
    cfg.validate()?;
    let profile = state.overlap_profile(cand, t);
    Ok(gwsr_from_overlaps(cand, cfg, profile.entries().iter().map(|(_, ov)| ov)))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i as u128 + 1);
    }
    r
}

/// Subset repetition of order `(p, q)` between the `source` and `target`
/// sets of `cand`, from overlap sizes with each past event.
pub fn subset_repetition(
    state: &NetworkState,
    cand: &NodeSets,
    t: Timestamp,
    source: NodeType,
    target: NodeType,
    p: usize,
    q: usize,
) -> Result<f64, StatError> {
    if source == target {
        return Err(StatError::Config("source and target roles must differ".into()));
    }
    let (x, y) = (cand.get(source).len(), cand.get(target).len());
    if p == 0 || q == 0 || p > x || q > y {
        return Err(StatError::OrderTooLarge { p, q, x, y });
    }
    let profile = state.overlap_profile(cand, t);
    let numer: u128 = profile
        .entries()
        .iter()
        .map(|(_, ov)| binomial(ov[source.index()] as usize, p) * binomial(ov[target.index()] as usize, q))
        .sum();
    Ok(numer as f64 / (binomial(x, p) * binomial(y, q)) as f64)
}

/// Closure statistic of `cand` at time `t` (legs may share a past event).
pub fn closure(state: &NetworkState, cand: &NodeSets, t: Timestamp, spec: ClosureSpec) -> f64 {
    closure_with(state, cand, t, spec, false)
}

/// Closure statistic with an explicit two-path strictness switch.
pub fn closure_with(state: &NetworkState, cand: &NodeSets, t: Timestamp, spec: ClosureSpec, strict: bool) -> f64 {
    let catalog = EffectCatalog::from_effects(vec![EffectDef {
        name: "closure".into(),
        kind: EffectKind::Closure(spec),
    }])
    .expect("single closure")
    .with_strict_closure(strict);
    EffectEvaluator::new(state, t, &catalog).evaluate(cand)[0]
}

/// All catalog statistics of `cand` at time `t`, in catalog order.
pub fn compute_effect_vector(state: &NetworkState, cand: &NodeSets, t: Timestamp, catalog: &EffectCatalog) -> Vec<f64> {
    EffectEvaluator::new(state, t, catalog).evaluate(cand)
}

/// Level counts for one (endpoint type, intermediary type) aggregation:
/// `first[v2]` = number of endpoints with weight ≥ 1 to `v2`, `higher[(v2, k)]`
/// = number with weight ≥ k for k ≥ 2.
#[derive(Debug, Default)]
struct LevelAgg {
    first: Vec<u32>,
    touched: Vec<u32>,
    higher: FxHashMap<(u32, u32), u32>,
}

impl LevelAgg {
    fn clear(&mut self) {
        for &v in &self.touched {
            self.first[v as usize] = 0;
        }
        self.touched.clear();
        self.higher.clear();
    }
}

#[derive(Debug, Default)]
struct Scratch {
    overlap: OverlapScratch,
    member: [Vec<bool>; 3],
    aggs: [LevelAgg; 9],
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

#[inline]
fn pairs(n: u32) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Evaluates a catalog against a fixed past state. The state is restricted to
/// events strictly before `t` once, at construction; `evaluate` is read-only
/// and may be called from many threads.
pub struct EffectEvaluator<'a> {
    state: Cow<'a, NetworkState>,
    catalog: &'a EffectCatalog,
    needs_overlap: bool,
    needed_aggs: [bool; 9],
}

impl<'a> EffectEvaluator<'a> {
    pub fn new(state: &'a NetworkState, t: Timestamp, catalog: &'a EffectCatalog) -> Self {
        let mut needed_aggs = [false; 9];
        let mut needs_overlap = false;
        for e in catalog.effects() {
            match e.kind {
                EffectKind::Gwsr(_) => needs_overlap = true,
                EffectKind::Closure(s) => {
                    needed_aggs[s.outer_left.index() * 3 + s.inner.index()] = true;
                    needed_aggs[s.outer_right.index() * 3 + s.inner.index()] = true;
                }
            }
        }
        EffectEvaluator { state: state.before(t), catalog, needs_overlap, needed_aggs }
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn evaluate(&self, cand: &NodeSets) -> Vec<f64> {
        SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            self.evaluate_with(cand, &mut scratch)
        })
    }

    fn evaluate_with(&self, cand: &NodeSets, scratch: &mut Scratch) -> Vec<f64> {
        let state: &NetworkState = &self.state;
        let mut out = vec![0.0; self.catalog.len()];

        if self.needs_overlap {
            state.fill_overlaps(cand, state.len(), &mut scratch.overlap);
            let counts = &scratch.overlap.counts;
            for (slot, e) in out.iter_mut().zip(self.catalog.effects()) {
                if let EffectKind::Gwsr(cfg) = &e.kind {
                    let ovs = scratch.overlap.touched.iter().map(|&p| &counts[p as usize]);
                    *slot = gwsr_from_overlaps(cand, cfg, ovs).value;
                }
            }
            scratch.overlap.clear();
        }

        if self.needed_aggs.iter().any(|&b| b) {
            for ty in NodeType::ALL {
                let member = &mut scratch.member[ty.index()];
                let need = state.id_bound(ty).max(cand.get(ty).last().map_or(0, |&m| m as usize + 1));
                if member.len() < need {
                    member.resize(need, false);
                }
                for &id in cand.get(ty) {
                    member[id as usize] = true;
                }
            }
            if self.catalog.strict_closure() {
                for (slot, e) in out.iter_mut().zip(self.catalog.effects()) {
                    if let EffectKind::Closure(spec) = e.kind {
                        *slot = strict_closure(state, cand, spec, &scratch.member);
                    }
                }
            } else {
                self.closures_by_levels(state, cand, scratch, &mut out);
            }
            for ty in NodeType::ALL {
                for &id in cand.get(ty) {
                    scratch.member[ty.index()][id as usize] = false;
                }
            }
        }
        out
    }

    fn closures_by_levels(&self, state: &NetworkState, cand: &NodeSets, scratch: &mut Scratch, out: &mut [f64]) {
        for outer in NodeType::ALL {
            for inner in NodeType::ALL {
                let slot = outer.index() * 3 + inner.index();
                if !self.needed_aggs[slot] || cand.get(outer).is_empty() {
                    continue;
                }
                let agg = &mut scratch.aggs[slot];
                let bound = state.id_bound(inner);
                if agg.first.len() < bound {
                    agg.first.resize(bound, 0);
                }
                let member = &scratch.member[inner.index()];
                for &v1 in cand.get(outer) {
                    let Some(neigh) = state.neighbors(NodeRef::new(outer, v1), inner) else {
                        continue;
                    };
                    for (&v2, &w) in neigh {
                        if member[v2 as usize] {
                            continue;
                        }
                        let f = &mut agg.first[v2 as usize];
                        if *f == 0 {
                            agg.touched.push(v2);
                        }
                        *f += 1;
                        for k in 2..=w {
                            *agg.higher.entry((v2, k)).or_insert(0) += 1;
                        }
                    }
                }
            }
        }

        for (slot, e) in out.iter_mut().zip(self.catalog.effects()) {
            let EffectKind::Closure(spec) = e.kind else { continue };
            let nl = cand.get(spec.outer_left).len() as u64;
            let nr = cand.get(spec.outer_right).len() as u64;
            let inner = spec.inner.index();
            let numer: u64;
            let npairs: u64;
            if spec.outer_left == spec.outer_right {
                npairs = pairs(nl as u32);
                if npairs == 0 {
                    continue;
                }
                let a = &scratch.aggs[spec.outer_left.index() * 3 + inner];
                numer = a.touched.iter().map(|&v| pairs(a.first[v as usize])).sum::<u64>()
                    + a.higher.values().map(|&c| pairs(c)).sum::<u64>();
            } else {
                npairs = nl * nr;
                if npairs == 0 {
                    continue;
                }
                let a = &scratch.aggs[spec.outer_left.index() * 3 + inner];
                let b = &scratch.aggs[spec.outer_right.index() * 3 + inner];
                let (a, b) = if a.touched.len() <= b.touched.len() { (a, b) } else { (b, a) };
                let mut s = 0u64;
                for &v in &a.touched {
                    s += a.first[v as usize] as u64 * b.first.get(v as usize).copied().unwrap_or(0) as u64;
                }
                for (key, &c) in &a.higher {
                    s += c as u64 * b.higher.get(key).copied().unwrap_or(0) as u64;
                }
                numer = s;
            }
            *slot = numer as f64 / npairs as f64;
        }

        for agg in scratch.aggs.iter_mut() {
            agg.clear();
        }
    }
}

/// Closure counting only two-paths whose legs come from distinct events:
/// the shared weight of events holding all three nodes is removed from both legs.
fn strict_closure(state: &NetworkState, cand: &NodeSets, spec: ClosureSpec, member: &[Vec<bool>; 3]) -> f64 {
    let left = cand.get(spec.outer_left);
    let right = cand.get(spec.outer_right);
    let same = spec.outer_left == spec.outer_right;
    let mut endpoint_pairs = Vec::new();
    for (i, &a) in left.iter().enumerate() {
        if same {
            for &b in &left[i + 1..] {
                endpoint_pairs.push((a, b));
            }
        } else {
            for &b in right {
                endpoint_pairs.push((a, b));
            }
        }
    }
    if endpoint_pairs.is_empty() {
        return 0.0;
    }
    let mut numer = 0u64;
    for &(a, b) in &endpoint_pairs {
        let v1 = NodeRef::new(spec.outer_left, a);
        let v3 = NodeRef::new(spec.outer_right, b);
        let Some(neigh) = state.neighbors(v1, spec.inner) else { continue };
        for (&mid, &w12) in neigh {
            if member[spec.inner.index()][mid as usize] {
                continue;
            }
            let v2 = NodeRef::new(spec.inner, mid);
            let w23 = state.weight(v2, v3);
            if w23 == 0 {
                continue;
            }
            let shared = triple_count(state.postings(v1), state.postings(v2), state.postings(v3));
            numer += (w12 - shared).min(w23 - shared) as u64;
        }
    }
    numer as f64 / endpoint_pairs.len() as f64
}

fn triple_count(a: &[u32], b: &[u32], c: &[u32]) -> u32 {
    let (mut j, mut k, mut n) = (0, 0, 0);
    for &x in a {
        while j < b.len() && b[j] < x {
            j += 1;
        }
        while k < c.len() && c[k] < x {
            k += 1;
        }
        if j < b.len() && k < c.len() && b[j] == x && c[k] == x {
            n += 1;
        }
    }
    n
}
