use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::DesignError;

/// One candidate hyperedge's statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub values: Vec<f64>,
    pub is_case: bool,
    /// Control accepted although identical to the case.
    pub duplicate: bool,
}

/// One observed event with its sampled controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    /// Index of the observed event in the sequence.
    pub event: usize,
    pub rows: Vec<Row>,
}

impl Stratum {
    pub fn case(&self) -> Option<&Row> {
        self.rows.iter().find(|r| r.is_case)
    }

    pub fn duplicates(&self) -> usize {
        self.rows.iter().filter(|r| r.duplicate).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMeta {
    pub m: usize,
    pub seed: u64,
    pub catalog: Vec<String>,
    /// Catalog in its file format, including decay parameters.
    pub catalog_config: String,
    pub n_events: usize,
    pub n_strata: usize,
    pub n_rows: usize,
    pub case_only_strata: usize,
    pub duplicate_controls: usize,
}

/// Stratified case/control design: one stratum per observed event.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<String>,
    pub strata: Vec<Stratum>,
    pub meta: DesignMeta,
}

impl DesignMatrix {
    pub fn new(columns: Vec<String>, strata: Vec<Stratum>, m: usize, seed: u64, catalog_config: String) -> Self {
        let mut d = DesignMatrix {
            meta: DesignMeta {
                m,
                seed,
                catalog: columns.clone(),
                catalog_config,
                n_events: 0,
                n_strata: 0,
                n_rows: 0,
                case_only_strata: 0,
                duplicate_controls: 0,
            },
            columns,
            strata,
        };
        d.refresh_counts();
        d
    }

    fn refresh_counts(&mut self) {
        self.meta.catalog = self.columns.clone();
        self.meta.n_strata = self.strata.len();
        self.meta.n_events = self.strata.len();
        self.meta.n_rows = self.n_rows();
        self.meta.case_only_strata = self.strata.iter().filter(|s| s.rows.len() < 2).count();
        self.meta.duplicate_controls = self.strata.iter().map(Stratum::duplicates).sum();
    }

    pub fn n_rows(&self) -> usize {
        self.strata.iter().map(|s| s.rows.len()).sum()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Restriction to the named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<DesignMatrix, DesignError> {
        let idx = names
            .iter()
            .map(|n| self.column(n.as_ref()).ok_or_else(|| DesignError::UnknownColumn(n.as_ref().to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let strata = self
            .strata
            .iter()
            .map(|s| Stratum {
                event: s.event,
                rows: s
                    .rows
                    .iter()
                    .map(|r| Row {
                        values: idx.iter().map(|&i| r.values[i]).collect(),
                        is_case: r.is_case,
                        duplicate: r.duplicate,
                    })
                    .collect(),
            })
            .collect();
        let mut d = DesignMatrix {
            columns: names.iter().map(|n| n.as_ref().to_string()).collect(),
            strata,
            meta: self.meta.clone(),
        };
        d.refresh_counts();
        Ok(d)
    }

    /// Appends a column computed per `(stratum, row)`.
    pub fn push_column(&mut self, name: &str, mut value: impl FnMut(usize, usize) -> f64) {
        self.columns.push(name.to_string());
        for (si, s) in self.strata.iter_mut().enumerate() {
            for (ri, r) in s.rows.iter_mut().enumerate() {
                r.values.push(value(si, ri));
            }
        }
        self.refresh_counts();
    }

    /// Concatenates designs with identical columns; stratum event indices
    /// are kept as-is.
    pub fn concat(parts: &[DesignMatrix]) -> Result<DesignMatrix, DesignError> {
        let first = parts.first().ok_or(DesignError::Empty)?;
        let mut out = first.clone();
        for p in &parts[1..] {
            if p.columns != first.columns {
                return Err(DesignError::ColumnMismatch);
            }
            out.strata.extend(p.strata.iter().cloned());
        }
        out.refresh_counts();
        Ok(out)
    }

    /// CSV with header `stratum,is_case,<columns>`. Values use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "stratum,is_case")?;
        for c in &self.columns {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for s in &self.strata {
            for r in &s.rows {
                write!(w, "{},{}", s.event, u8::from(r.is_case))?;
                for v in &r.values {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Reads the CSV export. Consecutive rows with equal stratum ids form one
    /// stratum. `meta` is taken from the sidecar when available.
    pub fn read_csv<R: BufRead>(r: R, meta: Option<DesignMeta>) -> Result<DesignMatrix, DesignError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(DesignError::Empty)??;
        let fields: Vec<&str> = header.trim_end().split(',').collect();
        if fields.len() < 2 || fields[0] != "stratum" || fields[1] != "is_case" {
            return Err(DesignError::Malformed { line: 1, message: "expected header stratum,is_case,...".into() });
        }
        let columns: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
        if let Some(meta) = &meta {
            if meta.catalog != columns {
                return Err(DesignError::ColumnMismatch);
            }
        }
        let mut strata: Vec<Stratum> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| DesignError::Malformed { line: line_no, message };
            let parts: Vec<&str> = line.trim_end().split(',').collect();
            if parts.len() != columns.len() + 2 {
                return Err(malformed(format!("expected {} fields, found {}", columns.len() + 2, parts.len())));
            }
            let event: usize = parts[0].parse().map_err(|_| malformed(format!("bad stratum id {:?}", parts[0])))?;
            let is_case = match parts[1] {
                "1" => true,
                "0" => false,
                other => return Err(malformed(format!("bad case flag {other:?}"))),
            };
            let values = parts[2..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| malformed(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let row = Row { values, is_case, duplicate: false };
            match strata.last_mut() {
                Some(s) if s.event == event => s.rows.push(row),
                _ => strata.push(Stratum { event, rows: vec![row] }),
            }
        }
        for s in &strata {
            let cases = s.rows.iter().filter(|r| r.is_case).count();
            if cases != 1 {
                return Err(DesignError::CaseCount { stratum: s.event, cases });
            }
        }
        let (m, seed, config) = meta
            .as_ref()
            .map_or((0, 0, String::new()), |m| (m.m, m.seed, m.catalog_config.clone()));
        let mut d = DesignMatrix::new(columns, strata, m, seed, config);
        if let Some(meta) = meta {
            d.meta.duplicate_controls = meta.duplicate_controls;
        }
        Ok(d)
    }
}
