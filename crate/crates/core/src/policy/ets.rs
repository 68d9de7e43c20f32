use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flips::ExitLabel;
use super::gru::{EtsClassifier, SEQ_LEN};
use crate::error::{Error, Result};
use crate::losses::classifier_nll;
use crate::numerics::{Module, Optimizer, OptimizerKind};

/// Flattened `[query, top-1, …, top-4]` sequence and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct EtsExample {
    pub sequence: Vec<f64>,
    pub label: ExitLabel,
}

/// Concatenates the query feature and its four nearest gallery features.
pub fn build_sequence(query: &[f64], neighbors: &[&[f64]]) -> Result<Vec<f64>> {
    if neighbors.len() != SEQ_LEN - 1 {
        return Err(Error::Policy(format!("sequence needs {} neighbours, got {}", SEQ_LEN - 1, neighbors.len())));
    }
    if neighbors.iter().any(|n| n.len() != query.len()) {
        return Err(Error::Dimension("neighbour feature width differs from the query".into()));
    }
    let mut seq = query.to_vec();
    for n in neighbors {
        seq.extend_from_slice(n);
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtsTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub hidden: usize,
}

impl Default for EtsTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-3, batch_size: 32, weight_decay: 0.0, hidden: 64 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtsTrainReport {
    pub class_counts: [usize; 3],
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Cross-entropy training with inverse-frequency class-balanced sampling.
pub fn train_ets(
    clf: &mut EtsClassifier,
    data: &[EtsExample],
    cfg: &EtsTrainConfig,
    rng: &mut impl Rng,
) -> Result<EtsTrainReport> {
    let mut counts = [0usize; 3];
    for e in data {
        counts[e.label.index()] += 1;
    }
    let mut report = EtsTrainReport { class_counts: counts, epoch_losses: Vec::new(), train_accuracy: 0.0 };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if data.is_empty() {
        return Err(Error::Policy("no labelled sequences to train on".into()));
    }
    for l in ExitLabel::ALL {
        if counts[l.index()] == 0 {
            log::warn!("no `{}` sequences in the training data; that label will never be predicted", l.name());
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("ETS batch size must be positive".into()));
    }
    let seqs: Vec<Vec<f64>> = data.iter().map(|e| e.sequence.clone()).collect();
    clf.fit_standardization(&seqs);
    clf.set_present(counts.map(|c| c > 0));
    let weights: Vec<f64> = data.iter().map(|e| 1.0 / counts[e.label.index()] as f64).collect();
    let sampler = WeightedIndex::new(&weights).map_err(|e| Error::Policy(e.to_string()))?;
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.lr, cfg.weight_decay);
    for _ in 0..cfg.epochs {
        let draw: Vec<usize> = (0..data.len()).map(|_| sampler.sample(rng)).collect();
        let mut total = 0.0;
        for chunk in draw.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].sequence.as_slice()).collect();
            let labels: Vec<u32> = chunk.iter().map(|&i| data[i].label.index() as u32).collect();
            let logits = clf.forward(&batch)?;
            let loss = classifier_nll(&logits, &labels)?;
            total += loss.value * chunk.len() as f64;
            clf.backward(&loss.grad)?;
            opt.step(clf)?;
        }
        report.epoch_losses.push(total / data.len() as f64);
    }
    clf.zero_grad();
    let refs: Vec<&[f64]> = seqs.iter().map(Vec::as_slice).collect();
    let predicted = predict(clf, &refs)?;
    let hits = predicted.iter().zip(data).filter(|(p, e)| **p == e.label).count();
    report.train_accuracy = hits as f64 / data.len() as f64;
    Ok(report)
}

/// Arg-max over the labels seen in training; ties go to the lower label index.
pub fn predict(clf: &EtsClassifier, seqs: &[&[f64]]) -> Result<Vec<ExitLabel>> {
    if seqs.is_empty() {
        return Ok(Vec::new());
    }
    let logits = clf.logits(seqs)?;
    Ok((0..seqs.len())
        .map(|i| {
            let row = logits.row(i);
            let mut best: Option<usize> = None;
            for c in (0..3).filter(|&c| clf.is_present(c)) {
                if best.is_none_or(|b| row[c] > row[b]) {
                    best = Some(c);
                }
            }
            ExitLabel::from_index(best.unwrap_or(0)).expect("three logits")
        })
        .collect())
}
