//! Timing harness: five runs per measurement, the first discarded, the last
//! four averaged. Reports wall time together with consistent / possible answer
//! counts, as CSV and as text with consecutive scaling ratios.

use std::fmt::Write as _;
use std::time::Instant;

use crate::engine::{consistent_answers, eval_query, DatabaseInstance, EngineError};
use crate::query::ConjunctiveQuery;

pub const DEFAULT_RUNS: usize = 5;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub query: String,
    pub n: usize,
    pub mode: String,
    pub wall_ms_avg4: f64,
    pub out_c: usize,
    pub out_p: usize,
}

#[derive(Debug, Default, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Runs `f` `runs` times, discards the first run and returns the average wall
/// time of the rest in milliseconds, plus the last result.
pub fn time_runs<R>(runs: usize, mut f: impl FnMut() -> R) -> (f64, R) {
    assert!(runs >= 2);
    let mut result = None;
    let mut total_ms = 0.0;
    for i in 0..runs {
        let start = Instant::now();
        let r = f();
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if i > 0 {
            total_ms += elapsed;
        }
        result = Some(r);
    }
    (total_ms / (runs - 1) as f64, result.unwrap())
}

/// Times consistent-answer and possible-answer evaluation of one query over
/// one instance.
pub fn bench_query(
    label: &str,
    q: &ConjunctiveQuery,
    db: &DatabaseInstance,
    runs: usize,
) -> Result<Vec<BenchRow>, EngineError> {
    let n = db.total_rows();
    let (cqa_ms, cqa) = time_runs(runs, || consistent_answers(q, db));
    let cqa = cqa?;
    let (possible_ms, possible) = time_runs(runs, || eval_query(q, db));
    let possible = possible?;
    let (out_c, out_p) = if q.is_boolean() {
        (cqa.as_bool() as usize, possible.as_bool() as usize)
    } else {
        (cqa.len(), possible.len())
    };
    Ok(vec![
        BenchRow {
            query: label.to_string(),
            n,
            mode: "cqa".to_string(),
            wall_ms_avg4: cqa_ms,
            out_c,
            out_p,
        },
        BenchRow {
            query: label.to_string(),
            n,
            mode: "possible".to_string(),
            wall_ms_avg4: possible_ms,
            out_c,
            out_p,
        },
    ])
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query,N,mode,wall_ms_avg4,out_c,out_p\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{},{}",
                r.query, r.n, r.mode, r.wall_ms_avg4, r.out_c, r.out_p
            );
        }
        out
    }

    /// Human-readable table with wall-time ratios between consecutive rows of
    /// the same query and mode.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:<9} {:>13} {:>9} {:>9} {:>7}",
            "query", "N", "mode", "wall_ms_avg4", "out_c", "out_p", "ratio"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let ratio = self.rows[..i]
                .iter()
                .rev()
                .find(|p| p.query == r.query && p.mode == r.mode)
                .map(|p| {
                    if p.wall_ms_avg4 > 0.0 {
                        format!("{:.2}", r.wall_ms_avg4 / p.wall_ms_avg4)
                    } else {
                        "-".to_string()
                    }
                })
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:<9} {:>13.3} {:>9} {:>9} {:>7}",
                r.query, r.n, r.mode, r.wall_ms_avg4, r.out_c, r.out_p, ratio
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workbench::{gen_synthetic, SyntheticSpec};

    #[test]
    fn report_contains_counts_and_containment() {
        let (db, _) = gen_synthetic(&SyntheticSpec {
            query_id: "q1".into(),
            rsize: 200,
            inratio: 0.1,
            bsize: 2,
            seed: 5,
        })
        .unwrap();
        let q = crate::workbench::fixture("q1").unwrap().query;
        let rows = bench_query("q1", &q, &db, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].out_c <= rows[0].out_p);
        let report = BenchReport { rows };
        let csv = report.to_csv();
        assert!(csv.starts_with("query,N,mode,wall_ms_avg4,out_c,out_p"));
        assert_eq!(csv.lines().count(), 3);
        assert!(report.render_text().contains("cqa"));
    }
}
