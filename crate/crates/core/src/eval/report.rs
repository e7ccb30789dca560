use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::RtreResult;

/// Metrics for one registered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    /// Grouping key for the aggregate table (tissue type, suite name, ...).
    pub group: String,
    pub mean_tre: f64,
    pub median_tre: f64,
    pub mean_rtre: f64,
    pub median_rtre: f64,
    /// Per-landmark rTRE, kept for landmark-level medians.
    pub rtre: Vec<f64>,
    /// Dice per class, empty when no masks were given.
    pub dice: Vec<f64>,
    /// HD95 per class in pixels; `None` when a mask is empty.
    pub hd95: Vec<Option<f64>>,
}

impl PairRecord {
    pub fn new(pair_id: impl Into<String>, group: impl Into<String>, r: &RtreResult) -> Self {
        Self {
            pair_id: pair_id.into(),
            group: group.into(),
            mean_tre: r.mean_tre,
            median_tre: r.median_tre,
            mean_rtre: r.mean_rtre,
            median_rtre: r.median_rtre,
            rtre: r.rtre.clone(),
            dice: Vec::new(),
            hd95: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<PairRecord>,
}

/// Both flavours of median rTRE, since it is ambiguous which one a
/// "median rTRE" refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Median over pairs of each pair's median rTRE.
    pub median_rtre_pairs: f64,
    /// Median over every landmark of every pair.
    pub median_rtre_landmarks: f64,
    pub pairs: usize,
}

impl MetricReport {
    pub fn push(&mut self, record: PairRecord) {
        self.records.push(record);
    }

    pub fn aggregate(&self) -> Option<Aggregate> {
        Self::aggregate_of(self.records.iter())
    }

    fn aggregate_of<'a>(records: impl Iterator<Item = &'a PairRecord> + Clone) -> Option<Aggregate> {
        let per_pair: Vec<f64> = records.clone().map(|r| r.median_rtre).collect();
        if per_pair.is_empty() {
            return None;
        }
        let all: Vec<f64> = records.flat_map(|r| r.rtre.iter().copied()).collect();
        Some(Aggregate {
            median_rtre_pairs: median(&per_pair),
            median_rtre_landmarks: if all.is_empty() { f64::NAN } else { median(&all) },
            pairs: per_pair.len(),
        })
    }

    /// Distinct groups in first-seen order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.group) {
                out.push(r.group.clone());
            }
        }
        out
    }

    pub fn group_aggregate(&self, group: &str) -> Option<Aggregate> {
        Self::aggregate_of(self.records.iter().filter(|r| r.group == group))
    }

    /// One row per pair; per-class columns are `dice_<c>` and `hd95_<c>`.
    pub fn to_csv(&self) -> String {
        let classes = self.records.iter().map(|r| r.dice.len().max(r.hd95.len())).max().unwrap_or(0);
        let mut out = String::from("pair_id,group,mean_tre,median_tre,mean_rtre,median_rtre");
        for c in 0..classes {
            let _ = write!(out, ",dice_{c}");
        }
        for c in 0..classes {
            let _ = write!(out, ",hd95_{c}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.pair_id, r.group, r.mean_tre, r.median_tre, r.mean_rtre, r.median_rtre
            );
            for c in 0..classes {
                match r.dice.get(c) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            for c in 0..classes {
                match r.hd95.get(c).copied().flatten() {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            records: &'a [PairRecord],
            aggregate: Option<Aggregate>,
        }
        serde_json::to_string_pretty(&Doc { records: &self.records, aggregate: self.aggregate() }).expect("report serializes")
    }
}

/// Median rTRE table with one column per named report and one row per group,
/// headed by an `All` row, as a fixed-width text table.
pub fn aggregate_table(columns: &[(&str, &MetricReport)]) -> String {
    let mut groups: Vec<String> = Vec::new();
    for (_, rep) in columns {
        for g in rep.groups() {
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
    }
    let width = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(10);
    let label = groups.iter().map(String::len).max().unwrap_or(0).max(3);
    let mut out = format!("{:label$}", "");
    for (name, _) in columns {
        let _ = write!(out, " | {name:>width$}");
    }
    out.push('\n');
    let mut row = |name: &str, pick: &dyn Fn(&MetricReport) -> Option<Aggregate>| {
        let _ = write!(out, "{name:label$}");
        for (_, rep) in columns {
            match pick(rep) {
                Some(a) => {
                    let _ = write!(out, " | {:>width$.5}", a.median_rtre_pairs);
                }
                None => {
                    let _ = write!(out, " | {:>width$}", "-");
                }
            }
        }
        out.push('\n');
    };
    row("All", &|r| r.aggregate());
    if groups.len() > 1 {
        for g in &groups {
            row(g, &|r| r.group_aggregate(g));
        }
    }
    out
}

/// Median with the two middle values averaged for even lengths.
pub fn median(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "median of an empty sample");
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}
