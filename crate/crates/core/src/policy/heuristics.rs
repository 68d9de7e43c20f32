use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamming::{GalleryIndex, HashCode, Neighbor, QueryFilter};

/// How the gallery-separability margin picks its second match.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GsMode {
    /// Best match whose identity differs from the top-1 identity.
    #[default]
    DistinctIdentity,
    /// Plain second-ranked match.
    RawTop2,
}

/// Distance from the query to its nearest gallery entry.
pub fn qs_score(query: &HashCode, index: &GalleryIndex, filter: &QueryFilter) -> Result<u32> {
    Ok(index.topk_filtered(query, 1, filter)?[0].distance)
}

pub fn qs_exit(query: &HashCode, index: &GalleryIndex, tau: f64, filter: &QueryFilter) -> Result<bool> {
    Ok(f64::from(qs_score(query, index, filter)?) < tau)
}

/// Margin between the top-1 match and the second match chosen by `mode`,
/// from an already computed scan. `None` when no second match exists.
pub fn gs_margin_from_scan(scan: &[Neighbor], mode: GsMode) -> Option<u32> {
    let key = |n: &Neighbor| (n.distance, n.position);
    let top = scan.iter().min_by_key(|n| key(n))?;
    let second = scan
        .iter()
        .filter(|n| match mode {
            GsMode::DistinctIdentity => n.id != top.id,
            GsMode::RawTop2 => n.position != top.position,
        })
        .min_by_key(|n| key(n))?;
    Some(second.distance - top.distance)
}

pub fn gs_margin(query: &HashCode, index: &GalleryIndex, filter: &QueryFilter, mode: GsMode) -> Result<Option<u32>> {
    let scan = index.scan(query, filter)?;
    if scan.is_empty() {
        return Err(Error::Retrieval("gallery is empty after filtering".into()));
    }
    Ok(gs_margin_from_scan(&scan, mode))
}

/// Exit iff the margin exceeds `tau`; a single-identity gallery never exits.
pub fn gs_exit(query: &HashCode, index: &GalleryIndex, tau: f64, filter: &QueryFilter, mode: GsMode) -> Result<bool> {
    match gs_margin(query, index, filter, mode)? {
        Some(m) => Ok(f64::from(m) > tau),
        None => {
            log::warn!("gallery holds a single identity; gallery-separability never exits");
            Ok(false)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitRule {
    /// Exit iff `score < τ`.
    Below,
    /// Exit iff `score > τ`.
    Above,
}

impl ExitRule {
    pub fn exits(self, score: Option<f64>, tau: f64) -> bool {
        match (self, score) {
            (_, None) => false,
            (ExitRule::Below, Some(s)) => s < tau,
            (ExitRule::Above, Some(s)) => s > tau,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub exits: usize,
    pub correct_exits: usize,
    pub incorrect_exits: usize,
}

impl Calibration {
    pub fn net(&self) -> i64 {
        self.correct_exits as i64 - self.incorrect_exits as i64
    }
}

fn evaluate(scores: &[Option<f64>], correct: &[bool], rule: ExitRule, tau: f64) -> Calibration {
    let mut c = Calibration { threshold: tau, exits: 0, correct_exits: 0, incorrect_exits: 0 };
    for (s, &ok) in scores.iter().zip(correct) {
        if rule.exits(*s, tau) {
            c.exits += 1;
            if ok {
                c.correct_exits += 1;
            } else {
                c.incorrect_exits += 1;
            }
        }
    }
    c
}

/// Threshold maximising `correct exits − incorrect exits`; among equals the
/// one exiting fewest queries, then the smallest threshold.
pub fn calibrate_threshold(scores: &[Option<f64>], correct: &[bool], rule: ExitRule) -> Result<Calibration> {
    if scores.len() != correct.len() || scores.is_empty() {
        return Err(Error::Policy(format!("calibration needs aligned non-empty data ({} scores, {} labels)", scores.len(), correct.len())));
    }
    let mut values: Vec<f64> = scores.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let (lo, hi) = (values.first().copied().unwrap_or(0.0), values.last().copied().unwrap_or(0.0));
    let mut candidates = values;
    candidates.push(match rule {
        ExitRule::Below => hi + 1.0,
        ExitRule::Above => lo - 1.0,
    });
    let mut best: Option<Calibration> = None;
    for tau in candidates {
        let c = evaluate(scores, correct, rule, tau);
        let better = match &best {
            None => true,
            Some(b) => (c.net(), std::cmp::Reverse(c.exits)) > (b.net(), std::cmp::Reverse(b.exits))
                || ((c.net(), c.exits) == (b.net(), b.exits) && tau < b.threshold),
        };
        if better {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one candidate"))
}
