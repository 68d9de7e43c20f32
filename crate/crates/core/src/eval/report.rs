use std::fmt::Write as _;

use super::budget::{BudgetPoint, CostModel, ExitReport};
use super::stagewise::{Evaluation, StageMetrics};
use crate::policy::ExitLabel;

pub const BUDGET_HEADER: &str =
    "budget,mean_cost,rank1,map,exits_s1,exits_s2,exits_s3,exits_s4,correct_exits_s1,incorrect_exits_s1";
pub const STAGEWISE_HEADER: &str = "stage,code_len,rank1,rank5,rank10,map,valid_queries,excluded_queries";
pub const EXIT_REPORT_HEADER: &str = "policy,exited_s1,correct_s1,incorrect_s1,maximum";

pub fn budget_csv(points: &[BudgetPoint]) -> String {
    let mut out = format!("{BUDGET_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{:.4},{:.6},{:.4},{:.4},{},{},{},{},{},{}",
            p.budget, p.mean_cost, p.rank1, p.map, p.exits[0], p.exits[1], p.exits[2], p.exits[3], p.correct_exits, p.incorrect_exits
        );
    }
    out
}

/// Whitespace-separated columns for plotting; the cost model is recorded in the header.
pub fn budget_gnuplot(points: &[BudgetPoint], cost: &CostModel, policy: &str) -> String {
    let f = cost.fractions;
    let mut out = format!("# policy {policy}\n# cost_fractions {} {} {} {}\n# mean_cost rank1 map budget\n", f[0], f[1], f[2], f[3]);
    for p in points {
        let _ = writeln!(out, "{:.6} {:.4} {:.4} {:.4}", p.mean_cost, p.rank1, p.map, p.budget);
    }
    out
}

pub fn stagewise_csv(stages: &[StageMetrics]) -> String {
    let mut out = format!("{STAGEWISE_HEADER}\n");
    for s in stages {
        let m = &s.metrics;
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            s.stage,
            s.code_len,
            100.0 * m.rank(1),
            100.0 * m.rank(5),
            100.0 * m.rank(10),
            100.0 * m.map,
            m.valid,
            m.excluded
        );
    }
    out
}

pub fn exit_report_csv(rows: &[(String, ExitReport)]) -> String {
    let mut out = format!("{EXIT_REPORT_HEADER}\n");
    for (policy, r) in rows {
        let _ = writeln!(out, "{policy},{},{},{},{}", r.exited, r.correct, r.incorrect, r.maximum);
    }
    out
}

pub const DECISION_HEADER: &str = "query\tidentity\tlabel\texit_stage\ttop1_distances\tstage1_correct";

/// One line per query: position, identity, ETS label (or `-`), chosen
/// stage, stage-1..4 top-1 distances and stage-1 correctness.
pub fn decision_log(eval: &Evaluation, labels: Option<&[ExitLabel]>, stages: &[u8]) -> String {
    let mut out = format!("{DECISION_HEADER}\n");
    let correct = eval.top1_correct(1);
    for (q, &stage) in stages.iter().enumerate() {
        let label = labels.map_or("-", |l| l[q].name());
        let dists: Vec<String> = eval.signals(q).iter().map(|s| s.top1_distance.to_string()).collect();
        let _ = writeln!(
            out,
            "{q}\t{}\t{label}\t{stage}\t{}\t{}",
            eval.query_ids[q],
            dists.join(","),
            u8::from(correct[q])
        );
    }
    out
}

/// Recovers `(exit stage, stage-1 correct)` pairs from a decision log.
pub fn parse_decision_log(text: &str) -> Option<Vec<(u8, bool)>> {
    let mut lines = text.lines();
    if lines.next()? != DECISION_HEADER {
        return None;
    }
    lines
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 6 {
                return None;
            }
            Some((cols[3].parse().ok()?, cols[5] == "1"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::budget::exit_report;
    use crate::eval::stagewise::StageOutcome;
    use crate::policy::StageSignal;

    fn toy_eval() -> Evaluation {
        let outcome = |id, d| StageOutcome { ap: Some((1.0, 0)), signal: StageSignal { top1_distance: d, top1_id: id, gs_margin: None } };
        Evaluation {
            query_ids: vec![3, 4],
            outcomes: vec![vec![outcome(3, 1); 4], vec![outcome(9, 7); 4]],
            max_rank: 10,
        }
    }

    #[test]
    fn decision_log_replays_exit_report() {
        let eval = toy_eval();
        let stages = [1, 1];
        let log = decision_log(&eval, Some(&[ExitLabel::Easy, ExitLabel::Skip]), &stages);
        assert!(log.lines().nth(2).unwrap().starts_with("1\t4\tskip\t1\t7,7,7,7\t0"));
        let parsed = parse_decision_log(&log).unwrap();
        let replay = exit_report(
            &parsed.iter().map(|p| p.0).collect::<Vec<_>>(),
            &parsed.iter().map(|p| p.1).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(replay, exit_report(&stages, &eval.top1_correct(1)).unwrap());
    }

    #[test]
    fn csv_headers() {
        assert!(budget_csv(&[]).starts_with("budget,mean_cost"));
        assert_eq!(exit_report_csv(&[("gs".into(), ExitReport::default())]).lines().nth(1), Some("gs,0,0,0,0"));
    }
}
