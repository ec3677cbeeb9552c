use std::io::Write;

use super::{EventError, EventSequence, HyperEvent, NodeType, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSummary {
    pub mean: f64,
    pub median: f64,
    pub max: usize,
    /// Percentage of events whose set is non-empty.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSummary {
    /// `None` for the overall row.
    pub period: Option<Timestamp>,
    pub n: usize,
    pub authors: SizeSummary,
    pub keywords: SizeSummary,
    pub references: SizeSummary,
}

fn summarize(sizes: &mut [usize]) -> SizeSummary {
    let n = sizes.len();
    sizes.sort_unstable();
    let mean = sizes.iter().sum::<usize>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        sizes[n / 2] as f64
    } else {
        (sizes[n / 2 - 1] + sizes[n / 2]) as f64 / 2.0
    };
    let covered = sizes.iter().filter(|&&s| s > 0).count();
    SizeSummary {
        mean,
        median,
        max: sizes[n - 1],
        coverage: 100.0 * covered as f64 / n as f64,
    }
}

fn summarize_events(period: Option<Timestamp>, events: &[HyperEvent]) -> PeriodSummary {
    let by_type = |ty: NodeType| {
        let mut sizes: Vec<usize> = events.iter().map(|e| e.nodes.get(ty).len()).collect();
        summarize(&mut sizes)
    };
    PeriodSummary {
        period,
        n: events.len(),
        authors: by_type(NodeType::Author),
        keywords: by_type(NodeType::Keyword),
        references: by_type(NodeType::Reference),
    }
}

/// Per-timestamp size summaries followed by one overall row.
pub fn descriptives(seq: &EventSequence) -> Result<Vec<PeriodSummary>, EventError> {
    if seq.is_empty() {
        return Err(EventError::Empty);
    }
    let events = seq.events();
    let mut rows: Vec<PeriodSummary> = events
        .chunk_by(|a, b| a.t == b.t)
        .map(|chunk| summarize_events(Some(chunk[0].t), chunk))
        .collect();
    rows.push(summarize_events(None, events));
    Ok(rows)
}

pub fn write_descriptives_csv<W: Write>(rows: &[PeriodSummary], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "period,n,auth_mean,auth_med,auth_max,key_mean,key_med,key_max,key_cov,ref_mean,ref_med,ref_max,ref_cov"
    )?;
    for row in rows {
        let period = row.period.map_or_else(|| "overall".to_string(), |t| t.to_string());
        writeln!(
            w,
            "{},{},{:.2},{},{},{:.2},{},{},{:.1},{:.2},{},{},{:.1}",
            period,
            row.n,
            row.authors.mean,
            row.authors.median,
            row.authors.max,
            row.keywords.mean,
            row.keywords.median,
            row.keywords.max,
            row.keywords.coverage,
            row.references.mean,
            row.references.median,
            row.references.max,
            row.references.coverage,
        )?;
    }
    Ok(())
}
