//! Tripartite hyperevents: one publication joins a set of authors, the
//! references it cites, and the keywords that label it.

mod descriptives;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptives::{descriptives, write_descriptives_csv, PeriodSummary, SizeSummary};

/// The three node modes of a publication event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Author,
    Reference,
    Keyword,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::Author, NodeType::Reference, NodeType::Keyword];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            NodeType::Author => 0,
            NodeType::Reference => 1,
            NodeType::Keyword => 2,
        }
    }

    /// Short token used in effect names (`aut`, `ref`, `key`).
    pub fn token(self) -> &'static str {
        match self {
            NodeType::Author => "aut",
            NodeType::Reference => "ref",
            NodeType::Keyword => "key",
        }
    }

    pub fn from_token(token: &str) -> Option<NodeType> {
        match token {
            "aut" => Some(NodeType::Author),
            "ref" => Some(NodeType::Reference),
            "key" => Some(NodeType::Keyword),
            _ => None,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            NodeType::Author => "author",
            NodeType::Reference => "reference",
            NodeType::Keyword => "keyword",
        };
        f.write_str(name)
    }
}

/// A typed node handle. Ids are dense per type, in first-appearance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub id: u32,
}

impl NodeRef {
    pub fn new(node_type: NodeType, id: u32) -> Self {
        NodeRef { node_type, id }
    }
}

/// Event time. Only the order relation is used by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestamp(f64);

impl Timestamp {
    /// Returns `None` for non-finite input.
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then_some(Timestamp(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<i64> for Timestamp {
    fn from(v: i64) -> Self {
        Timestamp(v as f64)
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // integral years are written back as integers
        if self.0.fract() == 0.0 && self.0.abs() < MAX_EXACT_INT {
            s.serialize_i64(self.0 as i64)
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Timestamp::new(v).ok_or_else(|| serde::de::Error::custom("timestamp must be finite"))
    }
}

/// Author, reference and keyword id sets of one (candidate) hyperedge.
/// Each set is kept sorted and duplicate-free.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NodeSets {
    sets: [Vec<u32>; 3],
}

impl NodeSets {
    pub fn new(authors: Vec<u32>, references: Vec<u32>, keywords: Vec<u32>) -> Self {
        Self::new_counting(authors, references, keywords).0
    }

    /// Like [`NodeSets::new`], also returning how many duplicates were dropped.
    pub fn new_counting(authors: Vec<u32>, references: Vec<u32>, keywords: Vec<u32>) -> (Self, usize) {
        let mut dropped = 0;
        let mut sets = [authors, references, keywords];
        for set in sets.iter_mut() {
            let before = set.len();
            set.sort_unstable();
            set.dedup();
            dropped += before - set.len();
        }
        (NodeSets { sets }, dropped)
    }

    #[inline]
    pub fn get(&self, node_type: NodeType) -> &[u32] {
        &self.sets[node_type.index()]
    }

    pub fn authors(&self) -> &[u32] {
        &self.sets[0]
    }

    pub fn references(&self) -> &[u32] {
        &self.sets[1]
    }

    pub fn keywords(&self) -> &[u32] {
        &self.sets[2]
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        self.get(node.node_type).binary_search(&node.id).is_ok()
    }

    /// Total number of nodes over the three sets.
    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.sets[0].len(), self.sets[1].len(), self.sets[2].len()]
    }

    /// All nodes as typed references, type by type.
    pub fn iter(&self) -> impl Iterator<Item = NodeRef> + '_ {
        NodeType::ALL
            .into_iter()
            .flat_map(move |ty| self.get(ty).iter().map(move |&id| NodeRef::new(ty, id)))
    }
}

/// One publication event.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperEvent {
    pub t: Timestamp,
    pub nodes: NodeSets,
    /// Position in the input order.
    pub seq: usize,
}

impl HyperEvent {
    pub fn new(t: impl Into<Timestamp>, seq: usize, nodes: NodeSets) -> Self {
        HyperEvent { t: t.into(), nodes, seq }
    }

    pub fn authors(&self) -> &[u32] {
        self.nodes.authors()
    }

    pub fn references(&self) -> &[u32] {
        self.nodes.references()
    }

    pub fn keywords(&self) -> &[u32] {
        self.nodes.keywords()
    }
}

/// Bijection between external labels and dense ids, per node type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    labels: [Vec<String>; 3],
    index: [HashMap<String, u32>; 3],
}

impl Registry {
    /// Returns the id of `label`, registering it if new.
    pub fn intern(&mut self, node_type: NodeType, label: &str) -> u32 {
        let k = node_type.index();
        if let Some(&id) = self.index[k].get(label) {
            return id;
        }
        let id = self.labels[k].len() as u32;
        self.labels[k].push(label.to_string());
        self.index[k].insert(label.to_string(), id);
        id
    }

    pub fn id(&self, node_type: NodeType, label: &str) -> Option<u32> {
        self.index[node_type.index()].get(label).copied()
    }

    pub fn label(&self, node: NodeRef) -> Option<&str> {
        self.labels[node.node_type.index()]
            .get(node.id as usize)
            .map(String::as_str)
    }

    pub fn count(&self, node_type: NodeType) -> usize {
        self.labels[node_type.index()].len()
    }

    pub fn labels(&self, node_type: NodeType) -> &[String] {
        &self.labels[node_type.index()]
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: empty author set")]
    EmptyAuthors { line: usize },
    #[error("line {line}: timestamp {t} precedes previous timestamp {previous}")]
    OutOfOrder { line: usize, t: Timestamp, previous: Timestamp },
    #[error("empty event sequence")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered, validated sequence of hyperevents with its label registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventSequence {
    events: Vec<HyperEvent>,
    registry: Registry,
    dedup_warnings: usize,
}

impl EventSequence {
    pub fn events(&self) -> &[HyperEvent] {
        &self.events
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Number of duplicate nodes dropped from within-event sets.
    pub fn dedup_warnings(&self) -> usize {
        self.dedup_warnings
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events `0..n`, sharing the same registry.
    pub fn prefix(&self, n: usize) -> EventSequence {
        EventSequence {
            events: self.events[..n.min(self.events.len())].to_vec(),
            registry: self.registry.clone(),
            dedup_warnings: self.dedup_warnings,
        }
    }

    /// Writes the sequence back in the JSON-lines input format.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in &self.events {
            let labels = |ty: NodeType| -> Vec<&str> {
                ev.nodes
                    .get(ty)
                    .iter()
                    .map(|&id| self.registry.label(NodeRef::new(ty, id)).unwrap_or(""))
                    .collect()
            };
            let rec = RecordOut {
                t: ev.t,
                authors: labels(NodeType::Author),
                references: labels(NodeType::Reference),
                keywords: labels(NodeType::Keyword),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    t: Timestamp,
    authors: Vec<String>,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    keywords: Vec<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    t: Timestamp,
    authors: Vec<&'a str>,
    references: Vec<&'a str>,
    keywords: Vec<&'a str>,
}

/// Incrementally assembles an [`EventSequence`] from labeled events.
#[derive(Debug, Default)]
pub struct SequenceBuilder {
    seq: EventSequence,
}

impl SequenceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one event; `line` is only used in error messages.
    pub fn push<S: AsRef<str>>(
        &mut self,
        line: usize,
        t: Timestamp,
        authors: &[S],
        references: &[S],
        keywords: &[S],
    ) -> Result<(), EventError> {
        if authors.iter().all(|a| a.as_ref().trim().is_empty()) {
            return Err(EventError::EmptyAuthors { line });
        }
        if let Some(last) = self.seq.events.last() {
            if t < last.t {
                return Err(EventError::OutOfOrder { line, t, previous: last.t });
            }
        }
        let mut ids: [Vec<u32>; 3] = Default::default();
        for (ty, labels) in [
            (NodeType::Author, authors),
            (NodeType::Reference, references),
            (NodeType::Keyword, keywords),
        ] {
            for raw in labels {
                let label = raw.as_ref().trim();
                if label.is_empty() {
                    return Err(EventError::Malformed {
                        line,
                        message: format!("empty {ty} label"),
                    });
                }
                ids[ty.index()].push(self.seq.registry.intern(ty, label));
            }
        }
        let [a, r, k] = ids;
        let (nodes, dropped) = NodeSets::new_counting(a, r, k);
        self.seq.dedup_warnings += dropped;
        let seq = self.seq.events.len();
        self.seq.events.push(HyperEvent { t, nodes, seq });
        Ok(())
    }

    pub fn finish(self) -> EventSequence {
        self.seq
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Stable-sort the records by timestamp instead of rejecting disorder.
    pub sort: bool,
}

/// Reads the JSON-lines event format. Blank lines are skipped.
pub fn parse_event_stream<R: BufRead>(source: R, opts: ParseOptions) -> Result<EventSequence, EventError> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| EventError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, rec));
    }
    if opts.sort {
        records.sort_by_key(|(_, rec)| rec.t);
    }
    let mut builder = SequenceBuilder::new();
    let mut dedup_before = 0;
    for (line_no, rec) in &records {
        builder.push(*line_no, rec.t, &rec.authors, &rec.references, &rec.keywords)?;
        if builder.seq.dedup_warnings > dedup_before {
            log::warn!(
                "line {line_no}: dropped {} duplicate node(s)",
                builder.seq.dedup_warnings - dedup_before
            );
            dedup_before = builder.seq.dedup_warnings;
        }
    }
    Ok(builder.finish())
}
