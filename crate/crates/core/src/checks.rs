//! Pass/fail checks of sweep results against the expected figure trends and
//! the model agreement bound.

use std::fmt;

use crate::engine::Scheme;
use crate::metrics::{ClassFilter, MetricsRecord};
use crate::sweep::AnalysisRow;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

/// Loads compared with a tolerance, since they round-trip through CSV.
fn point(records: &[MetricsRecord], scheme: Scheme, load: f64, class: ClassFilter) -> Option<&MetricsRecord> {
    records
        .iter()
        .find(|r| r.scheme == scheme && r.class == class && (r.load - load).abs() < 1e-9)
}

fn loads(records: &[MetricsRecord]) -> Vec<f64> {
    let mut v: Vec<f64> = records.iter().map(|r| r.load).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

struct Collector {
    ok: bool,
    notes: Vec<String>,
}

impl Collector {
    fn new() -> Self {
        Self {
            ok: true,
            notes: Vec::new(),
        }
    }

    fn require(&mut self, cond: bool, note: String) {
        if !cond {
            self.ok = false;
            self.notes.push(format!("violated: {note}"));
        } else {
            self.notes.push(note);
        }
    }

    fn missing(&mut self, what: &str) {
        self.ok = false;
        self.notes.push(format!("missing {what}"));
    }

    fn finish(self, id: u32, name: &'static str) -> Check {
        Check {
            id,
            name,
            passed: self.ok,
            detail: self.notes.join("; "),
        }
    }
}

const HIGH: f64 = 0.8;
const LOW: f64 = 0.1;

fn rel_gain(better: f64, worse: f64) -> f64 {
    (worse - better) / worse
}

/// Overall mean FCT ordering and DiffFlow's gain over RPS at high load.
pub fn overall_fct(records: &[MetricsRecord]) -> Check {
    let mut c = Collector::new();
    let get = |s| point(records, s, HIGH, ClassFilter::All);
    match (get(Scheme::DiffFlow), get(Scheme::Rps), get(Scheme::Ecmp)) {
        (Some(d), Some(r), Some(e)) => {
            c.require(
                d.mean_norm_fct + d.ci95 < r.mean_norm_fct - r.ci95,
                format!(
                    "diffflow {:.3}±{:.3} < rps {:.3}±{:.3}",
                    d.mean_norm_fct, d.ci95, r.mean_norm_fct, r.ci95
                ),
            );
            c.require(
                r.mean_norm_fct + r.ci95 < e.mean_norm_fct - e.ci95,
                format!(
                    "rps {:.3}±{:.3} < ecmp {:.3}±{:.3}",
                    r.mean_norm_fct, r.ci95, e.mean_norm_fct, e.ci95
                ),
            );
            let gain = rel_gain(d.mean_norm_fct, r.mean_norm_fct);
            c.require(
                (0.02..=0.15).contains(&gain),
                format!("gain over rps {:.1}% in [2, 15]%", gain * 100.0),
            );
        }
        _ => c.missing("load 0.8 overall FCT for all three schemes"),
    }
    c.finish(1, "overall FCT at load 0.8")
}

pub fn throughput(records: &[MetricsRecord]) -> Check {
    let mut c = Collector::new();
    let tp = |s, l| point(records, s, l, ClassFilter::All).and_then(|r| r.norm_throughput);
    for s in [Scheme::Rps, Scheme::DiffFlow] {
        match tp(s, LOW) {
            Some(v) => c.require(v >= 0.99, format!("{s}@0.1 {v:.4} >= 0.99")),
            None => c.missing(&format!("{s}@0.1")),
        }
        match tp(s, HIGH) {
            Some(v) => c.require((0.80..=0.93).contains(&v), format!("{s}@0.8 {v:.4} in [0.80, 0.93]")),
            None => c.missing(&format!("{s}@0.8")),
        }
    }
    match tp(Scheme::Ecmp, HIGH) {
        Some(v) => c.require((0.45..=0.70).contains(&v), format!("ecmp@0.8 {v:.4} in [0.45, 0.70]")),
        None => c.missing("ecmp@0.8"),
    }
    let mut order_ok = true;
    let mut worst_gap: f64 = 0.0;
    for l in loads(records) {
        if let (Some(e), Some(r), Some(d)) = (tp(Scheme::Ecmp, l), tp(Scheme::Rps, l), tp(Scheme::DiffFlow, l)) {
            order_ok &= e <= r && e <= d;
            worst_gap = worst_gap.max((r - d).abs());
        }
    }
    c.require(order_ok, "ecmp <= rps, diffflow at every load".into());
    c.require(worst_gap < 0.03, format!("max |rps - diffflow| {worst_gap:.4} < 0.03"));
    c.finish(2, "normalized throughput")
}

pub fn short_fct(records: &[MetricsRecord]) -> Check {
    let mut c = Collector::new();
    let get = |s, l| point(records, s, l, ClassFilter::Short).map(|r| r.mean_norm_fct);
    for l in loads(records).into_iter().filter(|&l| l > 0.3 + 1e-9) {
        if let (Some(d), Some(r)) = (get(Scheme::DiffFlow, l), get(Scheme::Rps, l)) {
            c.require(d <= r, format!("diffflow {d:.3} <= rps {r:.3} @{l}"));
        }
    }
    match (
        get(Scheme::DiffFlow, HIGH),
        get(Scheme::Rps, HIGH),
        get(Scheme::Ecmp, HIGH),
    ) {
        (Some(d), Some(r), Some(e)) => {
            let g = rel_gain(d, r);
            c.require(
                (0.05..=0.25).contains(&g),
                format!("diffflow gain over rps @0.8 {:.1}% in [5, 25]%", g * 100.0),
            );
            let g = rel_gain(r, e);
            c.require(g >= 0.05, format!("rps gain over ecmp @0.8 {:.1}% >= 5%", g * 100.0));
        }
        _ => c.missing("load 0.8 short-flow FCT"),
    }
    c.finish(3, "short-flow FCT")
}

pub fn long_fct(records: &[MetricsRecord]) -> Check {
    let mut c = Collector::new();
    let get = |s, l| point(records, s, l, ClassFilter::Long).map(|r| r.mean_norm_fct);
    let ls = loads(records);
    let ecmp: Vec<f64> = ls.iter().filter_map(|&l| get(Scheme::Ecmp, l)).collect();
    c.require(
        ecmp.windows(2).all(|w| w[1] > w[0]),
        format!(
            "ecmp rises with load {:?}",
            ecmp.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
    match get(Scheme::Ecmp, HIGH) {
        Some(v) => c.require((2.5..=4.5).contains(&v), format!("ecmp@0.8 {v:.3} in [2.5, 4.5]")),
        None => c.missing("ecmp@0.8"),
    }
    let mut range_ok = true;
    let mut worst: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for &l in &ls {
        if let (Some(r), Some(d)) = (get(Scheme::Rps, l), get(Scheme::DiffFlow, l)) {
            range_ok &= (1.0..=2.0).contains(&r) && (1.0..=2.0).contains(&d);
            hi = hi.max(r).max(d);
            worst = worst.max((r - d).abs() / r);
        }
    }
    c.require(range_ok, format!("rps, diffflow in [1, 2] (max {hi:.3})"));
    c.require(
        worst < 0.05,
        format!("max |rps - diffflow|/rps {:.1}% < 5%", worst * 100.0),
    );
    c.finish(4, "long-flow FCT")
}

/// Model versus simulation for every (scheme, class) at loads up to 0.5.
pub fn model_agreement(rows: &[AnalysisRow]) -> Check {
    let mut c = Collector::new();
    let mut worst: Option<&AnalysisRow> = None;
    let mut seen = 0;
    for r in rows
        .iter()
        .filter(|r| r.load <= 0.5 + 1e-9 && r.class != ClassFilter::All)
    {
        let Some(dev) = r.deviation else { continue };
        seen += 1;
        if worst.is_none_or(|w| dev > w.deviation.unwrap_or(0.0)) {
            worst = Some(r);
        }
    }
    match worst {
        Some(w) => {
            let dev = w.deviation.unwrap_or(0.0);
            c.require(
                dev <= 0.25,
                format!(
                    "{seen} cells, worst {} {} @{}: model {:.3} vs sim {:.3} ({:.1}% <= 25%)",
                    w.scheme,
                    w.class,
                    w.load,
                    w.analytic_norm_fct,
                    w.sim_norm_fct.unwrap_or(f64::NAN),
                    dev * 100.0
                ),
            );
        }
        None => c.missing("model comparison rows at load <= 0.5"),
    }
    c.finish(5, "model agreement")
}

/// The figure and model checks that a finished sweep can answer.
pub fn evaluate(records: &[MetricsRecord], analysis: &[AnalysisRow]) -> Vec<Check> {
    vec![
        overall_fct(records),
        throughput(records),
        short_fct(records),
        long_fct(records),
        model_agreement(analysis),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(scheme: Scheme, load: f64, class: ClassFilter, fct: f64, tp: f64) -> MetricsRecord {
        MetricsRecord {
            scheme,
            load,
            class,
            mean_norm_fct: fct,
            ci95: 0.01,
            norm_throughput: Some(tp),
            flows: 100,
            drops: 0,
            p50_norm_fct: fct,
            p99_norm_fct: fct,
            incomplete: 0,
        }
    }

    #[test]
    fn ordering_check_reads_cis() {
        let rs = vec![
            rec(Scheme::DiffFlow, 0.8, ClassFilter::All, 1.80, 0.9),
            rec(Scheme::Rps, 0.8, ClassFilter::All, 1.95, 0.9),
            rec(Scheme::Ecmp, 0.8, ClassFilter::All, 3.0, 0.6),
        ];
        assert!(overall_fct(&rs).passed);
        let mut close = rs.clone();
        close[0].mean_norm_fct = 1.94;
        assert!(!overall_fct(&close).passed);
        assert!(!overall_fct(&rs[..2]).passed);
    }

    #[test]
    fn missing_data_fails() {
        for c in evaluate(&[], &[]) {
            assert!(!c.passed, "{c}");
        }
    }
}
