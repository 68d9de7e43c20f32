use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::augment::random_erase;
use super::config::RunConfig;
use super::data::{Dataset, Split};
use super::run::RunDir;
use crate::encoder::{Encoder, N_STAGES};
use crate::error::{Error, Result};
use crate::hamming::{EmbeddingMatrix, HashCode, StageCodes};
use crate::losses::{combined_loss, PkSampler};
use crate::numerics::{Checkpoint, Mode, Optimizer};
use crate::policy::{leave_one_out_top1, FlipTable};
use crate::rng::{stream, substream};

const ENCODE_CHUNK: usize = 256;

/// Codes at every stage plus the stage-1 pooled features of one split.
#[derive(Clone, Debug)]
pub struct SplitEncoding {
    pub stages: Vec<StageCodes>,
    pub features: EmbeddingMatrix,
}

pub fn encode_split(enc: &Encoder, split: &Split) -> Result<SplitEncoding> {
    let mut codes: Vec<Vec<HashCode>> = (0..N_STAGES).map(|_| Vec::with_capacity(split.len())).collect();
    let mut feats = Vec::new();
    let mut dim = 0;
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(ENCODE_CHUNK) {
        let out = enc.encode(&split.batch(chunk)?)?;
        for (k, c) in out.codes.into_iter().enumerate() {
            codes[k].extend(c);
        }
        dim = out.pooled[0].cols();
        feats.extend(out.pooled[0].data().iter().map(|&v| v as f32));
    }
    let stages = codes.into_iter().enumerate().map(|(k, c)| StageCodes::new((k + 1) as u8, c)).collect::<Result<_>>()?;
    Ok(SplitEncoding { stages, features: EmbeddingMatrix::new(dim, feats)? })
}

/// Stage-4 leave-one-out top-1 correctness over the training split.
pub fn flip_check(enc: &Encoder, train: &Split) -> Result<Vec<Option<bool>>> {
    let e = encode_split(enc, train)?;
    leave_one_out_top1(&e.stages[N_STAGES - 1].codes, &train.ids)
}

pub fn save_encoder(enc: &Encoder, stem: &Path, epoch: usize, seed: u64) -> Result<()> {
    let cfg = enc.config();
    let meta = BTreeMap::from([
        ("kind".to_string(), "encoder".to_string()),
        ("epoch".to_string(), epoch.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("num_classes".to_string(), cfg.num_classes.to_string()),
    ]);
    Checkpoint::capture(enc, meta).save(stem)
}

pub fn load_encoder(cfg: &RunConfig, stem: &Path) -> Result<Encoder> {
    let ckpt = Checkpoint::load(stem)?;
    let classes = ckpt
        .get("num_classes")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format { path: stem.to_path_buf(), reason: "checkpoint lacks num_classes".into() })?;
    let mut enc = Encoder::new(cfg.encoder_config(classes), &mut substream(cfg.seed, stream::INIT))?;
    ckpt.restore(&mut enc)?;
    Ok(enc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub triplet: f64,
    pub classifier: f64,
    pub ranking: f64,
}

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,loss,triplet,classifier,ranking\n");
    for e in log {
        let _ = writeln!(out, "{},{:e},{:.6},{:.6},{:.6},{:.6}", e.epoch, e.lr, e.loss, e.triplet, e.classifier, e.ranking);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub flips: FlipTable,
    pub log: Vec<EpochLog>,
}

/// Trains the encoder on the training split, checkpointing and recording
/// flip statistics every `checkpoint_interval` epochs.
pub fn train_encoder(cfg: &RunConfig, ds: &Dataset, run: Option<&RunDir>) -> Result<TrainOutcome> {
    let (labels, classes) = ds.train_classes();
    let mut enc = Encoder::new(cfg.encoder_config(classes), &mut substream(cfg.seed, stream::INIT))?;
    let t = &cfg.train;
    let sampler = PkSampler::new(&labels, t.p, t.k)?;
    let mut rng = substream(cfg.seed, stream::SAMPLING);
    let mut aug_rng = substream(cfg.seed, stream::AUGMENT);
    let mut opt = Optimizer::new(t.optimizer, t.lr.base, t.weight_decay);
    let mut flips = FlipTable::default();
    let mut log = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        opt.lr = t.lr.lr_at(epoch);
        let mut entry = EpochLog { epoch: epoch + 1, lr: opt.lr, loss: 0.0, triplet: 0.0, classifier: 0.0, ranking: 0.0 };
        let batches = sampler.epoch(&mut rng);
        for batch in &batches {
            let mut x = ds.train.batch(&batch.indices)?;
            random_erase(&mut x, &t.erasing, &mut aug_rng)?;
            let y: Vec<u32> = batch.indices.iter().map(|&i| labels[i]).collect();
            let out = enc.forward_all(&x, Mode::Train)?;
            let loss = combined_loss(&out, &y, &cfg.loss)?;
            enc.backward(&loss.grads)?;
            opt.step(&mut enc)?;
            entry.loss += loss.total;
            for e in &loss.per_exit {
                entry.triplet += e.triplet;
                entry.classifier += e.classifier;
                entry.ranking += e.ranking;
            }
        }
        let nb = batches.len().max(1) as f64;
        for v in [&mut entry.loss, &mut entry.triplet, &mut entry.classifier, &mut entry.ranking] {
            *v /= nb;
        }
        log::debug!("epoch {} lr {:e} loss {:.4}", entry.epoch, entry.lr, entry.loss);
        log.push(entry);
        let done = epoch + 1;
        if done % t.checkpoint_interval == 0 {
            flips.record_checkpoint(done, &flip_check(&enc, &ds.train)?, t.checkpoint_interval)?;
            if let Some(run) = run {
                save_encoder(&enc, &run.checkpoint(done), done, cfg.seed)?;
            }
        }
    }
    if let Some(run) = run {
        save_encoder(&enc, &run.final_checkpoint(), t.epochs, cfg.seed)?;
        flips.save(&run.flips())?;
        fs::write(run.train_log(), train_log_csv(&log))?;
    }
    Ok(TrainOutcome { encoder: enc, flips, log })
}

/// Rebuilds the flip table by re-evaluating every saved checkpoint.
pub fn replay_flips(cfg: &RunConfig, ds: &Dataset, run: &RunDir) -> Result<FlipTable> {
    let t = &cfg.train;
    let mut flips = FlipTable::default();
    for epoch in (t.checkpoint_interval..=t.epochs).step_by(t.checkpoint_interval) {
        let enc = load_encoder(cfg, &run.checkpoint(epoch))?;
        flips.record_checkpoint(epoch, &flip_check(&enc, &ds.train)?, t.checkpoint_interval)?;
    }
    Ok(flips)
}
