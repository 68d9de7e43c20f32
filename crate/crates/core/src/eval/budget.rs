use serde::{Deserialize, Serialize};

use super::stagewise::Evaluation;
use crate::encoder::N_STAGES;
use crate::error::{Error, Result};

/// Slack for floating-point accumulation when comparing costs to budgets.
pub const COST_TOLERANCE: f64 = 1e-9;

/// Incremental cost fraction of each stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub fractions: [f64; N_STAGES],
}

impl Default for CostModel {
    fn default() -> Self {
        Self { fractions: [0.2, 0.2, 0.3, 0.3] }
    }
}

impl CostModel {
    pub fn new(fractions: [f64; N_STAGES]) -> Result<Self> {
        let m = Self { fractions };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config(format!("cost fractions must be non-negative: {:?}", self.fractions)));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("cost fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Cost of running stages `1..=stage`.
    pub fn cumulative(&self, stage: u8) -> f64 {
        self.fractions[..stage as usize].iter().sum()
    }

    pub fn floor(&self) -> f64 {
        self.fractions[0]
    }

    pub fn mean_cost(&self, stages: &[u8]) -> f64 {
        stages.iter().map(|&s| self.cumulative(s)).sum::<f64>() / stages.len().max(1) as f64
    }
}

/// Per-query stages under a mean-cost budget.
///
/// Every query starts at stage 1. In query order, queries the policy sends
/// deeper are promoted to their policy stage while the total fits; the
/// first one that does not fit gets the deepest stage still affordable and
/// everyone after it stays at stage 1. A larger budget therefore never
/// moves a query to an earlier stage.
pub fn allocate(policy_stages: &[u8], cost: &CostModel, budget: f64) -> Result<Vec<u8>> {
    cost.validate()?;
    if budget + COST_TOLERANCE < cost.floor() {
        return Err(Error::InfeasibleBudget { budget, floor: cost.floor() });
    }
    if let Some(s) = policy_stages.iter().find(|s| !(1..=4).contains(*s)) {
        return Err(Error::Policy(format!("policy stage {s} outside 1..=4")));
    }
    let n = policy_stages.len() as f64;
    let allowed = budget.min(1.0) * n + COST_TOLERANCE;
    let mut spent = cost.floor() * n;
    let mut out = vec![1u8; policy_stages.len()];
    for (q, &target) in policy_stages.iter().enumerate() {
        if target == 1 {
            continue;
        }
        let extra = cost.cumulative(target) - cost.floor();
        if spent + extra <= allowed {
            spent += extra;
            out[q] = target;
            continue;
        }
        out[q] = (1..target).rev().find(|&s| spent + cost.cumulative(s) - cost.floor() <= allowed).unwrap_or(1);
        break;
    }
    Ok(out)
}

/// Stage-1 exit counts against the number of queries whose stage-1 top-1 is correct.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitReport {
    pub exited: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub maximum: usize,
}

pub fn exit_report(stages: &[u8], stage1_correct: &[bool]) -> Result<ExitReport> {
    if stages.len() != stage1_correct.len() {
        return Err(Error::Dimension(format!("{} decisions for {} queries", stages.len(), stage1_correct.len())));
    }
    let mut r = ExitReport { maximum: stage1_correct.iter().filter(|c| **c).count(), ..Default::default() };
    for (&s, &ok) in stages.iter().zip(stage1_correct) {
        if s == 1 {
            r.exited += 1;
            if ok {
                r.correct += 1;
            } else {
                r.incorrect += 1;
            }
        }
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetPoint {
    pub budget: f64,
    pub mean_cost: f64,
    /// Percent.
    pub rank1: f64,
    /// Percent.
    pub map: f64,
    pub exits: [usize; N_STAGES],
    pub correct_exits: usize,
    pub incorrect_exits: usize,
    pub stages: Vec<u8>,
}

pub fn budget_curve(eval: &Evaluation, policy_stages: &[u8], cost: &CostModel, budgets: &[f64]) -> Result<Vec<BudgetPoint>> {
    if budgets.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Evaluation(format!("budgets must be sorted ascending: {budgets:?}")));
    }
    if policy_stages.len() != eval.len() {
        return Err(Error::Dimension(format!("{} decisions for {} queries", policy_stages.len(), eval.len())));
    }
    let stage1_correct = eval.top1_correct(1);
    budgets
        .iter()
        .map(|&b| {
            let stages = allocate(policy_stages, cost, b)?;
            let m = eval.metrics_at(&stages)?;
            let mut exits = [0; N_STAGES];
            for &s in &stages {
                exits[s as usize - 1] += 1;
            }
            let report = exit_report(&stages, &stage1_correct)?;
            Ok(BudgetPoint {
                budget: b,
                mean_cost: cost.mean_cost(&stages),
                rank1: 100.0 * m.rank(1),
                map: 100.0 * m.map,
                exits,
                correct_exits: report.correct,
                incorrect_exits: report.incorrect,
                stages,
            })
        })
        .collect()
}

/// Budgets from the cost floor to full compute in `steps` equal increments.
pub fn budget_grid(cost: &CostModel, steps: usize) -> Vec<f64> {
    let lo = cost.floor();
    let steps = steps.max(1);
    (0..=steps).map(|i| lo + (1.0 - lo) * i as f64 / steps as f64).collect()
}
