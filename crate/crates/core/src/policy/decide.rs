use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flips::ExitLabel;
use super::heuristics::GsMode;
use crate::error::{Error, Result};
use crate::rng::{stream, substream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "qs")]
    Qs,
    #[serde(rename = "gs")]
    Gs,
    #[serde(rename = "ets")]
    Ets,
    #[serde(rename = "ets+gs")]
    EtsGs,
    /// Never exits early.
    #[serde(rename = "full")]
    Full,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] =
        [PolicyKind::Random, PolicyKind::Qs, PolicyKind::Gs, PolicyKind::Ets, PolicyKind::EtsGs, PolicyKind::Full];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Qs => "qs",
            PolicyKind::Gs => "gs",
            PolicyKind::Ets => "ets",
            PolicyKind::EtsGs => "ets+gs",
            PolicyKind::Full => "full",
        }
    }

    pub fn needs_ets(self) -> bool {
        matches!(self, PolicyKind::Ets | PolicyKind::EtsGs)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Policy(format!("unknown policy {s:?} (expected random, qs, gs, ets, ets+gs or full)")))
    }
}

/// Calibrated heuristic thresholds for stages 1–3.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub qs: Option<[f64; 3]>,
    pub gs: Option<[f64; 3]>,
    pub gs_mode: GsMode,
}

/// Retrieval evidence for one query at one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSignal {
    pub top1_distance: u32,
    pub top1_id: u32,
    pub gs_margin: Option<u32>,
}

/// Everything the policies may consult for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySignals {
    /// Stages 1–4 in order.
    pub stages: Vec<StageSignal>,
    pub ets: Option<ExitLabel>,
    /// Uniform draw in `[0, 1)` used by the random policy.
    pub random_draw: f64,
}

/// One uniform draw per query from the policy stream.
pub fn random_draws(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = substream(seed, stream::POLICY);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn stage_signal(q: &QuerySignals, stage: usize) -> Result<&StageSignal> {
    q.stages.get(stage - 1).ok_or_else(|| Error::Policy(format!("no stage-{stage} signal for query")))
}

fn gs_fires(q: &QuerySignals, stage: usize, taus: &[f64; 3]) -> Result<bool> {
    Ok(stage_signal(q, stage)?.gs_margin.is_some_and(|m| f64::from(m) > taus[stage - 1]))
}

/// Exit stage in `1..=4`, clamped to `cap` when one is supplied.
pub fn decide_exit(policy: PolicyKind, q: &QuerySignals, th: &Thresholds, cap: Option<u8>) -> Result<u8> {
    if let Some(c) = cap {
        if !(1..=4).contains(&c) {
            return Err(Error::Policy(format!("stage cap {c} outside 1..=4")));
        }
    }
    let missing = |what: &str| Error::Policy(format!("policy {policy} needs {what}; run `train-policy` first"));
    let stage = match policy {
        PolicyKind::Full => 4,
        PolicyKind::Random => {
            if q.random_draw < 0.5 {
                1
            } else {
                4
            }
        }
        PolicyKind::Qs => {
            let taus = th.qs.as_ref().ok_or_else(|| missing("calibrated QS thresholds"))?;
            let mut exit = 4;
            for k in 1..=3 {
                if f64::from(stage_signal(q, k)?.top1_distance) < taus[k - 1] {
                    exit = k as u8;
                    break;
                }
            }
            exit
        }
        PolicyKind::Gs => {
            let taus = th.gs.as_ref().ok_or_else(|| missing("calibrated GS thresholds"))?;
            let mut exit = 4;
            for k in 1..=3 {
                if gs_fires(q, k, taus)? {
                    exit = k as u8;
                    break;
                }
            }
            exit
        }
        PolicyKind::Ets => {
            if q.ets.ok_or_else(|| missing("an ETS prediction"))?.exits_early() {
                1
            } else {
                4
            }
        }
        PolicyKind::EtsGs => {
            let label = q.ets.ok_or_else(|| missing("an ETS prediction"))?;
            let taus = th.gs.as_ref().ok_or_else(|| missing("calibrated GS thresholds"))?;
            if label.exits_early() {
                1
            } else if gs_fires(q, 2, taus)? {
                2
            } else if gs_fires(q, 3, taus)? {
                3
            } else {
                4
            }
        }
    };
    Ok(cap.map_or(stage, |c| stage.min(c)))
}
