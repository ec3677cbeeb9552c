//! Brute-force reference implementations. Everything here works from the raw
//! event list by literal definition: no indices, no incremental state, and
//! nothing shared with the engine's statistic code.

use rand::seq::index;
use rand::Rng;

use rhem_core::event_model::SequenceBuilder;
use rhem_core::riskset::{Row, Stratum};
use rhem_core::{DesignMatrix, EventSequence, HyperEvent, NodeSets, NodeType, Timestamp};

const DECAY: f64 = 5.0;

/// A small sequence, a candidate hyperedge and a query time.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub seq: EventSequence,
    pub candidate: NodeSets,
    pub t: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Brute {
    Gwsr { source: NodeType, target: NodeType, kappa: f64, lambda: f64 },
    Closure { left: NodeType, inner: NodeType, right: NodeType },
}

fn token(s: &str) -> Option<NodeType> {
    match s {
        "aut" => Some(NodeType::Author),
        "ref" => Some(NodeType::Reference),
        "key" => Some(NodeType::Keyword),
        _ => None,
    }
}

/// The oracle's own effect table.
pub fn brute_definition(name: &str) -> Result<Brute, String> {
    use NodeType::*;
    let g = |source, target, kappa, lambda| Ok(Brute::Gwsr { source, target, kappa, lambda });
    match name {
        "sub.rep.aut" => g(Author, Reference, DECAY, -1.0),
        "sub.rep.ref" => g(Author, Reference, -1.0, DECAY),
        "sub.rep.key" => g(Author, Keyword, -1.0, DECAY),
        "sub.rep.aut.ref" => g(Author, Reference, DECAY, DECAY),
        "sub.rep.aut.key" => g(Author, Keyword, DECAY, DECAY),
        "sub.rep.key.ref" => g(Keyword, Reference, DECAY, DECAY),
        _ => {
            let parts: Vec<&str> = name.split('.').collect();
            match parts.as_slice() {
                ["closure", a, b, c] => match (token(a), token(b), token(c)) {
                    (Some(left), Some(inner), Some(right)) => Ok(Brute::Closure { left, inner, right }),
                    _ => Err(format!("unknown effect {name}")),
                },
                _ => Err(format!("unknown effect {name}")),
            }
        }
    }
}

fn past(seq: &EventSequence, t: Timestamp) -> impl Iterator<Item = &HyperEvent> {
    seq.events().iter().filter(move |e| e.t < t)
}

fn common(a: &[u32], b: &[u32]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

fn has(e: &HyperEvent, ty: NodeType, id: u32) -> bool {
    e.nodes.get(ty).contains(&id)
}

/// Term by term over past events.
pub fn brute_gwsr(seq: &EventSequence, cand: &NodeSets, t: Timestamp, source: NodeType, target: NodeType, kappa: f64, lambda: f64) -> f64 {
    let x = cand.get(source);
    let y = cand.get(target);
    let use_x = kappa >= 0.0;
    let use_y = lambda >= 0.0;
    if (use_x && x.is_empty()) || (use_y && y.is_empty()) {
        return 0.0;
    }
    let side = |k: usize, d: f64| (1.0 - (1.0 - (-d).exp()).powi(k as i32)) * k as f64;
    let mut sum = 0.0;
    for e in past(seq, t) {
        let mut term = 1.0;
        if use_x {
            term *= side(common(x, e.nodes.get(source)), kappa);
        }
        if use_y {
            term *= side(common(y, e.nodes.get(target)), lambda);
        }
        sum += term;
    }
    let mut scale = 1.0;
    if use_x {
        scale *= kappa.exp() / x.len() as f64;
    }
    if use_y {
        scale *= lambda.exp() / y.len() as f64;
    }
    scale * sum
}

fn subsets(set: &[u32], k: usize) -> Vec<Vec<u32>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if set.len() < k {
        return Vec::new();
    }
    let mut with: Vec<Vec<u32>> = subsets(&set[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, set[0]);
            s
        })
        .collect();
    with.extend(subsets(&set[1..], k));
    with
}

/// Mean hyperedge degree over all (p, q) sub-hyperedges of the candidate.
pub fn brute_subrep_enumerated(seq: &EventSequence, cand: &NodeSets, t: Timestamp, source: NodeType, target: NodeType, p: usize, q: usize) -> f64 {
    let xs = subsets(cand.get(source), p);
    let ys = subsets(cand.get(target), q);
    let mut count = 0u64;
    for e in past(seq, t) {
        for xi in &xs {
            if !xi.iter().all(|v| has(e, source, *v)) {
                continue;
            }
            for yi in &ys {
                if yi.iter().all(|v| has(e, target, *v)) {
                    count += 1;
                }
            }
        }
    }
    count as f64 / (xs.len() * ys.len()) as f64
}

fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn brute_subrep_binomial(seq: &EventSequence, cand: &NodeSets, t: Timestamp, source: NodeType, target: NodeType, p: usize, q: usize) -> f64 {
    let x = cand.get(source);
    let y = cand.get(target);
    let mut sum = 0.0;
    for e in past(seq, t) {
        sum += choose(common(x, e.nodes.get(source)), p) * choose(common(y, e.nodes.get(target)), q);
    }
    sum / (choose(x.len(), p) * choose(y.len(), q))
}

/// Past events containing both nodes; with `exclude`, also not containing it.
fn weight(seq: &EventSequence, t: Timestamp, u: (NodeType, u32), v: (NodeType, u32), exclude: Option<(NodeType, u32)>) -> u32 {
    past(seq, t)
        .filter(|e| has(e, u.0, u.1) && has(e, v.0, v.1))
        .filter(|e| exclude.is_none_or(|w| !has(e, w.0, w.1)))
        .count() as u32
}

/// Triple loop over endpoint pairs and intermediaries. `strict` keeps only
/// two-paths whose legs come from events not containing all three nodes.
pub fn brute_closure(seq: &EventSequence, cand: &NodeSets, t: Timestamp, left: NodeType, inner: NodeType, right: NodeType, strict: bool) -> f64 {
    let l = cand.get(left);
    let r = cand.get(right);
    let mut pairs = Vec::new();
    for (i, &a) in l.iter().enumerate() {
        for (j, &b) in r.iter().enumerate() {
            if left == right && j <= i {
                continue;
            }
            pairs.push((a, b));
        }
    }
    if pairs.is_empty() {
        return 0.0;
    }
    let universe = seq.registry().count(inner) as u32;
    let mut total = 0u64;
    for &(a, b) in &pairs {
        for z in 0..universe {
            if (inner == left && z == a) || (inner == right && z == b) || cand.get(inner).contains(&z) {
                continue;
            }
            let (ex1, ex2) = if strict { (Some((right, b)), Some((left, a))) } else { (None, None) };
            let w1 = weight(seq, t, (left, a), (inner, z), ex1);
            let w2 = weight(seq, t, (inner, z), (right, b), ex2);
            total += w1.min(w2) as u64;
        }
    }
    total as f64 / pairs.len() as f64
}

pub fn brute_statistic_with(inst: &ToyInstance, name: &str, strict: bool) -> Result<f64, String> {
    Ok(match brute_definition(name)? {
        Brute::Gwsr { source, target, kappa, lambda } => brute_gwsr(&inst.seq, &inst.candidate, inst.t, source, target, kappa, lambda),
        Brute::Closure { left, inner, right } => brute_closure(&inst.seq, &inst.candidate, inst.t, left, inner, right, strict),
    })
}

pub fn brute_statistic(inst: &ToyInstance, name: &str) -> Result<f64, String> {
    brute_statistic_with(inst, name, false)
}

/// Nodes seen strictly before event `i`, plus the event's own nodes.
fn exact_pools(seq: &EventSequence, i: usize) -> [Vec<u32>; 3] {
    let ev = &seq.events()[i];
    NodeType::ALL.map(|ty| {
        let mut pool: Vec<u32> = seq
            .events()
            .iter()
            .filter(|e| e.t < ev.t)
            .flat_map(|e| e.nodes.get(ty).iter().copied())
            .chain(ev.nodes.get(ty).iter().copied())
            .collect();
        pool.sort_unstable();
        pool.dedup();
        pool
    })
}

pub const EXACT_BOUND: f64 = 1e6;

/// Every size-matched candidate of event `i`'s full risk set.
fn exact_candidates(seq: &EventSequence, i: usize) -> Result<Vec<NodeSets>, String> {
    let ev = &seq.events()[i];
    let pools = exact_pools(seq, i);
    let size: f64 = NodeType::ALL.iter().map(|&ty| choose(pools[ty.index()].len(), ev.nodes.get(ty).len())).product();
    if size > EXACT_BOUND {
        return Err(format!("event {i}: {size} candidates exceed the enumeration bound"));
    }
    let [a, r, k] = NodeType::ALL.map(|ty| subsets(&pools[ty.index()], ev.nodes.get(ty).len()));
    let mut out = Vec::with_capacity(size as usize);
    for ai in &a {
        for ri in &r {
            for ki in &k {
                out.push(NodeSets::new(ai.clone(), ri.clone(), ki.clone()));
            }
        }
    }
    Ok(out)
}

fn brute_vector(seq: &EventSequence, cand: &NodeSets, t: Timestamp, effects: &[&str]) -> Result<Vec<f64>, String> {
    let inst = ToyInstance { seq: seq.clone(), candidate: cand.clone(), t };
    effects.iter().map(|n| brute_statistic(&inst, n)).collect()
}

/// Design with the full (unsampled) denominator for every event.
pub fn exact_design(seq: &EventSequence, effects: &[&str]) -> Result<DesignMatrix, String> {
    let mut strata = Vec::new();
    for (i, ev) in seq.events().iter().enumerate() {
        let rows = exact_candidates(seq, i)?
            .into_iter()
            .map(|c| {
                let is_case = c == ev.nodes;
                brute_vector(seq, &c, ev.t, effects).map(|values| Row { values, is_case, duplicate: false })
            })
            .collect::<Result<Vec<_>, _>>()?;
        strata.push(Stratum { event: i, rows });
    }
    Ok(DesignMatrix::new(effects.iter().map(|s| s.to_string()).collect(), strata, 0, 0, String::new()))
}

/// Exact log partial likelihood by enumeration of every risk-set candidate.
pub fn exact_denominator_loglik(seq: &EventSequence, effects: &[&str], beta: &[f64]) -> Result<f64, String> {
    let mut ll = 0.0;
    for (i, ev) in seq.events().iter().enumerate() {
        let score = |c: &NodeSets| -> Result<f64, String> {
            Ok(brute_vector(seq, c, ev.t, effects)?.iter().zip(beta).map(|(x, b)| x * b).sum())
        };
        let case = score(&ev.nodes)?;
        let mut denom = 0.0;
        for c in exact_candidates(seq, i)? {
            denom += score(&c)?.exp();
        }
        ll += case - denom.ln();
    }
    Ok(ll)
}

/// Universe and size limits for random toy instances.
#[derive(Debug, Clone, Copy)]
pub struct ToyShape {
    pub max_events: usize,
    pub universe: [usize; 3],
    pub max_size: [usize; 3],
}

impl Default for ToyShape {
    fn default() -> Self {
        ToyShape { max_events: 25, universe: [12, 12, 12], max_size: [4, 5, 3] }
    }
}

fn random_sets<R: Rng>(rng: &mut R, shape: &ToyShape, universe: [usize; 3], min_author: usize) -> [Vec<u32>; 3] {
    NodeType::ALL.map(|ty| {
        let u = universe[ty.index()];
        let lo = if ty == NodeType::Author { min_author.min(u) } else { 0 };
        let hi = shape.max_size[ty.index()].min(u);
        let n = if hi <= lo { lo } else { rng.random_range(lo..=hi) };
        index::sample(rng, u, n).into_iter().map(|i| i as u32).collect()
    })
}

fn labels(ids: &[u32], prefix: &str) -> Vec<String> {
    ids.iter().map(|i| format!("{prefix}{i}")).collect()
}

pub fn random_sequence<R: Rng>(rng: &mut R, shape: &ToyShape, n_events: usize) -> EventSequence {
    let mut b = SequenceBuilder::new();
    let mut t = 1i64;
    for line in 0..n_events {
        if rng.random_bool(0.6) {
            t += 1;
        }
        let [a, r, k] = random_sets(rng, shape, shape.universe, 1);
        b.push(line + 1, Timestamp::from(t), &labels(&a, "a"), &labels(&r, "r"), &labels(&k, "k"))
            .expect("valid toy event");
    }
    b.finish()
}

/// Random sequence with exact ties, a candidate over the registered nodes and a
/// query time anywhere in (and just past) the sequence's time range.
pub fn random_toy_instance<R: Rng>(rng: &mut R, shape: &ToyShape) -> ToyInstance {
    let n = rng.random_range(0..=shape.max_events);
    let seq = random_sequence(rng, shape, n.max(1));
    let counts = NodeType::ALL.map(|ty| seq.registry().count(ty));
    let [a, r, k] = random_sets(rng, shape, counts, 1);
    let last = seq.events().last().map_or(1.0, |e| e.t.value());
    let t = Timestamp::from(rng.random_range(1..=last as i64 + 1));
    ToyInstance { seq, candidate: NodeSets::new(a, r, k), t }
}
