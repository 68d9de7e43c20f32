use rayon::prelude::*;

use super::metrics::{aggregate, average_precision, RetrievalMetrics};
use crate::encoder::N_STAGES;
use crate::error::{Error, Result};
use crate::hamming::{GalleryIndex, QueryFilter, StageCodes};
use crate::policy::{gs_margin_from_scan, GsMode, StageSignal};

/// Query codes at every stage with aligned identity and source ids.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub stages: Vec<StageCodes>,
    pub ids: Vec<u32>,
    pub sources: Vec<u32>,
}

impl QuerySet {
    pub fn new(stages: Vec<StageCodes>, ids: Vec<u32>, sources: Vec<u32>) -> Result<Self> {
        if ids.len() != sources.len() || stages.iter().any(|s| s.codes.len() != ids.len()) {
            return Err(Error::Dimension("query codes, ids and sources are not aligned".into()));
        }
        Ok(Self { stages, ids, sources })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Drop gallery entries sharing the query's identity and source.
    pub same_source_filter: bool,
    pub gs_mode: GsMode,
    pub max_rank: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { same_source_filter: false, gs_mode: GsMode::DistinctIdentity, max_rank: 10 }
    }
}

/// Retrieval outcome of one query at one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageOutcome {
    /// `(AP, first-hit rank)`; `None` without gallery positives.
    pub ap: Option<(f64, usize)>,
    pub signal: StageSignal,
}

impl StageOutcome {
    pub fn top1_correct(&self, query_id: u32) -> bool {
        self.signal.top1_id == query_id
    }
}

/// Every query evaluated independently at all four stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub query_ids: Vec<u32>,
    /// `outcomes[q][k]`: query `q` at stage `k + 1`.
    pub outcomes: Vec<Vec<StageOutcome>>,
    pub max_rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageMetrics {
    pub stage: u8,
    pub code_len: usize,
    pub metrics: RetrievalMetrics,
}

pub fn evaluate_queries(queries: &QuerySet, index: &GalleryIndex, opts: &EvalOptions) -> Result<Evaluation> {
    if queries.stages.len() != N_STAGES {
        return Err(Error::Evaluation(format!("queries carry {} stages, expected {N_STAGES}", queries.stages.len())));
    }
    let outcomes = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let filter = QueryFilter {
                exclude_same_source: opts.same_source_filter.then(|| (queries.ids[q], queries.sources[q])),
                exclude_position: None,
            };
            queries
                .stages
                .iter()
                .map(|s| {
                    let ranked = index.rank(&s.codes[q], &filter)?;
                    let ids: Vec<u32> = ranked.iter().map(|n| n.id).collect();
                    Ok(StageOutcome {
                        ap: average_precision(&ids, queries.ids[q]),
                        signal: StageSignal {
                            top1_distance: ranked[0].distance,
                            top1_id: ranked[0].id,
                            gs_margin: gs_margin_from_scan(&ranked, opts.gs_mode),
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { query_ids: queries.ids.clone(), outcomes, max_rank: opts.max_rank })
}

impl Evaluation {
    pub fn len(&self) -> usize {
        self.query_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_ids.is_empty()
    }

    /// Metrics when each query is answered at `stages[q]`.
    pub fn metrics_at(&self, stages: &[u8]) -> Result<RetrievalMetrics> {
        if stages.len() != self.len() {
            return Err(Error::Dimension(format!("{} stage choices for {} queries", stages.len(), self.len())));
        }
        let picked: Vec<_> = self.outcomes.iter().zip(stages).map(|(o, &s)| o[s as usize - 1].ap).collect();
        aggregate(&picked, self.max_rank)
    }

    pub fn stage_metrics(&self, stage: u8) -> Result<RetrievalMetrics> {
        self.metrics_at(&vec![stage; self.len()])
    }

    pub fn top1_correct(&self, stage: u8) -> Vec<bool> {
        self.outcomes.iter().zip(&self.query_ids).map(|(o, &id)| o[stage as usize - 1].top1_correct(id)).collect()
    }

    pub fn signals(&self, q: usize) -> Vec<StageSignal> {
        self.outcomes[q].iter().map(|o| o.signal).collect()
    }
}

/// Rank-k and mAP of every stage, each evaluated without exiting.
pub fn stagewise_eval(queries: &QuerySet, index: &GalleryIndex, opts: &EvalOptions) -> Result<(Evaluation, Vec<StageMetrics>)> {
    let eval = evaluate_queries(queries, index, opts)?;
    let per_stage = queries
        .stages
        .iter()
        .map(|s| Ok(StageMetrics { stage: s.stage, code_len: s.len, metrics: eval.stage_metrics(s.stage)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((eval, per_stage))
}
