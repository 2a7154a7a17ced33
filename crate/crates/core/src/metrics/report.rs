use std::fmt::Write as _;

use super::clear::{clear_counts, ClearCounts};
use super::hota::{hota_accum, HotaAccum};
use super::identity::{id_counts, IdCounts};
use super::{MetricError, SequenceEval};

/// Column order of the machine-readable metric table.
pub const TABLE_COLUMNS: [&str; 9] = ["HOTA", "DetA", "AssA", "IDF1", "MOTA", "TP", "FP", "FN", "IDSW"];

/// Raw accumulators for one sequence (or several, after [`SequenceMetrics::merge`]).
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMetrics {
    pub name: String,
    pub clear: ClearCounts,
    pub id: IdCounts,
    pub hota: HotaAccum,
}

/// Final ratios plus the CLEAR counts.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub idf1: f64,
    pub mota: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
}

pub fn evaluate_sequence(seq: &SequenceEval) -> SequenceMetrics {
    SequenceMetrics {
        name: seq.name().to_string(),
        clear: clear_counts(seq),
        id: id_counts(seq),
        hota: hota_accum(seq),
    }
}

impl SequenceMetrics {
    /// Pools raw counts of several sequences.
    pub fn combined<'a>(name: &str, parts: impl IntoIterator<Item = &'a SequenceMetrics>) -> Self {
        let mut out = SequenceMetrics {
            name: name.to_string(),
            clear: ClearCounts::default(),
            id: IdCounts::default(),
            hota: HotaAccum::default(),
        };
        for p in parts {
            out.clear.merge(&p.clear);
            out.id.merge(&p.id);
            out.hota.merge(&p.hota);
        }
        out
    }

    pub fn report(&self) -> Result<MetricReport, MetricError> {
        let h = self.hota.result(&self.name)?;
        Ok(MetricReport {
            name: self.name.clone(),
            hota: h.hota,
            deta: h.deta,
            assa: h.assa,
            idf1: self.id.idf1(&self.name)?,
            mota: self.clear.mota(&self.name)?,
            tp: self.clear.tp,
            fp: self.clear.fp,
            fn_: self.clear.fn_,
            idsw: self.clear.idsw,
        })
    }
}

impl MetricReport {
    fn cells(&self) -> [String; 9] {
        [
            format!("{:.6}", self.hota),
            format!("{:.6}", self.deta),
            format!("{:.6}", self.assa),
            format!("{:.6}", self.idf1),
            format!("{:.6}", self.mota),
            self.tp.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
            self.idsw.to_string(),
        ]
    }

    /// Comma-separated table: header then one row per report.
    pub fn to_csv(rows: &[MetricReport]) -> String {
        let mut s = String::from("sequence");
        for c in TABLE_COLUMNS {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in rows {
            s.push_str(&r.name);
            for c in r.cells() {
                s.push(',');
                s.push_str(&c);
            }
            s.push('\n');
        }
        s
    }

    /// Fixed-width table for terminals.
    pub fn to_text(rows: &[MetricReport]) -> String {
        let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
        let mut s = String::new();
        let _ = write!(s, "{:<name_w$}", "sequence");
        for c in TABLE_COLUMNS {
            let _ = write!(s, " {c:>9}");
        }
        s.push('\n');
        for r in rows {
            let _ = write!(s, "{:<name_w$}", r.name);
            for (i, c) in r.cells().iter().enumerate() {
                if i < 5 {
                    // ratios as percentages, MOTChallenge style
                    let v: f64 = c.parse().unwrap_or(f64::NAN);
                    let _ = write!(s, " {:>9.3}", 100.0 * v);
                } else {
                    let _ = write!(s, " {c:>9}");
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::seq;
    use super::*;

    #[test]
    fn combined_pools_counts() {
        let gt = [(1, 1, 0., 0., 10., 10.), (2, 1, 0., 0., 10., 10.)];
        let a = evaluate_sequence(&seq(&gt, &gt));
        let b = evaluate_sequence(&seq(&gt, &[]));
        let c = SequenceMetrics::combined("ALL", [&a, &b]);
        let r = c.report().unwrap();
        assert_eq!((r.tp, r.fn_), (2, 2));
        assert_eq!(r.mota, 0.5);
        assert_eq!(r.idf1, 2.0 * 2.0 / (4.0 + 2.0));
    }

    #[test]
    fn csv_header_order() {
        let gt = [(1, 1, 0., 0., 10., 10.)];
        let r = evaluate_sequence(&seq(&gt, &gt)).report().unwrap();
        let csv = MetricReport::to_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "sequence,HOTA,DetA,AssA,IDF1,MOTA,TP,FP,FN,IDSW");
        assert_eq!(lines.next().unwrap(), "test,1.000000,1.000000,1.000000,1.000000,1.000000,1,0,0,0");
    }
}
