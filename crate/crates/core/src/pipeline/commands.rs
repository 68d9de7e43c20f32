use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{DataSource, RunConfig};
use super::data::{gen_data, ingest_embeddings, Dataset};
use super::run::RunDir;
use super::train::{encode_split, load_encoder, replay_flips, train_encoder, SplitEncoding, TrainOutcome};
use crate::encoder::N_STAGES;
use crate::error::{Error, Result};
use crate::eval::{
    budget_csv, budget_curve, budget_gnuplot, budget_grid, decision_log, evaluate_queries, exit_report,
    exit_report_csv, stagewise_csv, stagewise_eval, BudgetPoint, EvalOptions, Evaluation, ExitReport, QuerySet,
    StageMetrics,
};
use crate::hamming::{
    read_codes, read_embeddings, timing_csv, timing_table, write_codes, write_embeddings, CodeFile, EmbeddingMatrix,
    GalleryIndex, Neighbor, QueryFilter, StageCodes, TimingRow,
};
use crate::numerics::{manifest_path, Checkpoint};
use crate::policy::{
    build_sequence, calibrate_threshold, decide_exit, predict, random_draws, train_ets, Calibration, EtsClassifier,
    EtsExample, EtsTrainReport, ExitLabel, ExitRule, FlipTable, PolicyKind, QuerySignals, Thresholds,
};
use crate::rng::{stream, substream};

/// Number of stage-1 neighbours following the query in an ETS sequence.
pub const ETS_NEIGHBORS: usize = 4;

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { path: path.to_path_buf(), hint: hint.into() })
    }
}

/// Generates (or ingests) the dataset into the run directory.
pub fn gen_data_cmd(cfg: &RunConfig, run: &RunDir) -> Result<Dataset> {
    let (ds, meta) = match &cfg.data {
        DataSource::Synthetic(spec) => {
            let ds = gen_data(spec, cfg.seed)?;
            let meta = ds.meta(Some(cfg.seed), Some(spec));
            (ds, meta)
        }
        DataSource::Embeddings { dir, shape } => {
            let ds = ingest_embeddings(dir, *shape)?;
            let meta = ds.meta(None, None);
            (ds, meta)
        }
    };
    ds.save(&run.data(), &meta)?;
    cfg.save(&run.config())?;
    Ok(ds)
}

pub fn load_dataset(run: &RunDir) -> Result<Dataset> {
    require(&run.data().join("meta.json"), "run `gen-data` first")?;
    Dataset::load(&run.data())
}

pub fn train_cmd(cfg: &RunConfig, run: &RunDir) -> Result<TrainOutcome> {
    let ds = load_dataset(run)?;
    train_encoder(cfg, &ds, Some(run))
}

/// Re-derives `flips.tsv` from the saved checkpoints.
pub fn collect_flips_cmd(cfg: &RunConfig, run: &RunDir) -> Result<FlipTable> {
    let ds = load_dataset(run)?;
    require(&manifest_path(&run.checkpoint(cfg.train.checkpoint_interval)), "run `train` first")?;
    let table = replay_flips(cfg, &ds, run)?;
    table.save(&run.flips())?;
    Ok(table)
}

fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}

/// Query feature followed by the features of its stage-1 top neighbours.
pub fn ets_sequence(
    query_feat: &[f32],
    query_code: &crate::hamming::HashCode,
    gallery: &GalleryIndex,
    gallery_feats: &EmbeddingMatrix,
    filter: &QueryFilter,
) -> Result<Vec<f64>> {
    let top = gallery.topk_filtered(query_code, ETS_NEIGHBORS, filter)?;
    if top.len() < ETS_NEIGHBORS {
        return Err(Error::Retrieval(format!("ETS sequences need {ETS_NEIGHBORS} gallery neighbours")));
    }
    let neigh: Vec<Vec<f64>> = top.iter().map(|n| to_f64(gallery_feats.row(n.position))).collect();
    let refs: Vec<&[f64]> = neigh.iter().map(Vec::as_slice).collect();
    build_sequence(&to_f64(query_feat), &refs)
}

fn stage1_index(enc: &SplitEncoding, ids: &[u32], sources: &[u32]) -> Result<GalleryIndex> {
    GalleryIndex::new(vec![enc.stages[0].clone()], ids.to_vec(), sources.to_vec())
}

fn eval_options(cfg: &RunConfig, th: &Thresholds) -> EvalOptions {
    EvalOptions { same_source_filter: cfg.policy.same_source_filter, gs_mode: th.gs_mode, ..Default::default() }
}

#[derive(Clone, Debug)]
pub struct CalibrationRow {
    pub heuristic: &'static str,
    pub stage: u8,
    pub calibration: Calibration,
}

/// Per-stage QS and GS thresholds maximising correct minus incorrect exits.
pub fn calibrate(eval: &Evaluation, gs_mode: crate::policy::GsMode) -> Result<(Thresholds, Vec<CalibrationRow>)> {
    let mut qs = [0.0; 3];
    let mut gs = [0.0; 3];
    let mut rows = Vec::new();
    for k in 1..=3u8 {
        let correct = eval.top1_correct(k);
        let sig: Vec<_> = (0..eval.len()).map(|q| eval.outcomes[q][k as usize - 1].signal).collect();
        let qs_scores: Vec<Option<f64>> = sig.iter().map(|s| Some(f64::from(s.top1_distance))).collect();
        let gs_scores: Vec<Option<f64>> = sig.iter().map(|s| s.gs_margin.map(f64::from)).collect();
        let cq = calibrate_threshold(&qs_scores, &correct, ExitRule::Below)?;
        let cg = calibrate_threshold(&gs_scores, &correct, ExitRule::Above)?;
        qs[k as usize - 1] = cq.threshold;
        gs[k as usize - 1] = cg.threshold;
        rows.push(CalibrationRow { heuristic: "qs", stage: k, calibration: cq });
        rows.push(CalibrationRow { heuristic: "gs", stage: k, calibration: cg });
    }
    Ok((Thresholds { qs: Some(qs), gs: Some(gs), gs_mode }, rows))
}

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut out = String::from("heuristic,stage,threshold,exits,correct_exits,incorrect_exits\n");
    for r in rows {
        let c = &r.calibration;
        let _ = writeln!(out, "{},{},{},{},{},{}", r.heuristic, r.stage, c.threshold, c.exits, c.correct_exits, c.incorrect_exits);
    }
    out
}

#[derive(Clone, Debug)]
pub struct PolicyOutcome {
    pub ets: EtsTrainReport,
    pub thresholds: Thresholds,
    pub calibration: Vec<CalibrationRow>,
}

/// Trains the ETS classifier on flip labels and calibrates QS/GS thresholds
/// on the validation split.
pub fn train_policy_cmd(cfg: &RunConfig, run: &RunDir) -> Result<PolicyOutcome> {
    let ds = load_dataset(run)?;
    require(&run.flips(), "run `train` or `collect-flips` first")?;
    let flips = FlipTable::load(&run.flips())?;
    let enc = load_encoder(cfg, &run.final_checkpoint())?;

    let train = encode_split(&enc, &ds.train)?;
    let index = stage1_index(&train, &ds.train.ids, &ds.train.sources)?;
    let labels = flips.labels();
    let examples = flips
        .samples
        .iter()
        .zip(&labels)
        .map(|(&i, &label)| {
            if i >= ds.train.len() {
                return Err(Error::Policy(format!("flip table names sample {i} outside the training split")));
            }
            let filter = QueryFilter { exclude_same_source: None, exclude_position: Some(i) };
            let sequence = ets_sequence(train.features.row(i), &train.stages[0].codes[i], &index, &train.features, &filter)?;
            Ok(EtsExample { sequence, label })
        })
        .collect::<Result<Vec<_>>>()?;
    let ets_cfg = &cfg.policy.ets;
    let mut rng = substream(cfg.seed, stream::ETS);
    let mut clf = EtsClassifier::new(train.features.dim(), ets_cfg.hidden, &mut rng);
    let report = train_ets(&mut clf, &examples, ets_cfg, &mut rng)?;
    let meta = BTreeMap::from([
        ("kind".to_string(), "ets".to_string()),
        ("input_dim".to_string(), clf.input_dim().to_string()),
        ("hidden".to_string(), clf.hidden().to_string()),
    ]);
    Checkpoint::capture(&clf, meta).save(&run.ets())?;
    let mut text = format!("sequences\t{}\n", examples.len());
    for l in ExitLabel::ALL {
        let _ = writeln!(text, "{}\t{}", l.name(), report.class_counts[l.index()]);
    }
    let _ = writeln!(text, "train_accuracy\t{:.4}", report.train_accuracy);
    fs::write(run.ets_report(), text)?;

    let gs_mode = cfg.policy.thresholds.gs_mode;
    let vq = encode_split(&enc, &ds.val_query)?;
    let vg = encode_split(&enc, &ds.val_gallery)?;
    let queries = QuerySet::new(vq.stages, ds.val_query.ids.clone(), ds.val_query.sources.clone())?;
    let gallery = GalleryIndex::new(vg.stages, ds.val_gallery.ids.clone(), ds.val_gallery.sources.clone())?;
    let eval = evaluate_queries(&queries, &gallery, &eval_options(cfg, &cfg.policy.thresholds))?;
    let (thresholds, rows) = calibrate(&eval, gs_mode)?;
    fs::write(run.calibration(), calibration_csv(&rows))?;
    fs::write(run.thresholds(), toml::to_string(&thresholds).map_err(|e| Error::Config(e.to_string()))?)?;
    let mut updated = cfg.clone();
    updated.policy.thresholds = thresholds.clone();
    updated.save(&run.config())?;
    Ok(PolicyOutcome { ets: report, thresholds, calibration: rows })
}

/// Writes binary codes for every stage plus stage-1 features of the test splits.
pub fn encode_gallery_cmd(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let ds = load_dataset(run)?;
    let enc = load_encoder(cfg, &run.final_checkpoint())?;
    for name in ["gallery", "query"] {
        let split = ds.split(name).expect("known split");
        let e = encode_split(&enc, split)?;
        for s in e.stages {
            let stage = s.stage;
            let file = CodeFile { codes: s, ids: split.ids.clone(), sources: split.sources.clone() };
            write_codes(&run.codes(name, stage), &file)?;
        }
        write_embeddings(&run.features(name), &e.features)?;
    }
    Ok(())
}

/// Codes, ids and stage-1 features of one encoded split.
#[derive(Clone, Debug)]
pub struct EncodedSplit {
    pub stages: Vec<StageCodes>,
    pub ids: Vec<u32>,
    pub sources: Vec<u32>,
    pub features: EmbeddingMatrix,
}

pub fn load_encoded(run: &RunDir, split: &str) -> Result<EncodedSplit> {
    let mut stages = Vec::with_capacity(N_STAGES);
    let mut ids = Vec::new();
    let mut sources = Vec::new();
    for k in 1..=N_STAGES as u8 {
        let path = run.codes(split, k);
        require(&path, "run `encode-gallery` first")?;
        let f = read_codes(&path)?;
        if k == 1 {
            ids = f.ids;
            sources = f.sources;
        } else if f.ids != ids || f.sources != sources {
            return Err(Error::Format { path, reason: "ids differ between stage files".into() });
        }
        stages.push(f.codes);
    }
    let path = run.features(split);
    require(&path, "run `encode-gallery` first")?;
    let features = read_embeddings(&path)?;
    if features.count() != ids.len() {
        return Err(Error::Format { path, reason: "feature rows do not match code count".into() });
    }
    Ok(EncodedSplit { stages, ids, sources, features })
}

fn thresholds_for(cfg: &RunConfig, run: &RunDir) -> Result<Thresholds> {
    let th = &cfg.policy.thresholds;
    if th.qs.is_some() || th.gs.is_some() || !run.thresholds().exists() {
        return Ok(th.clone());
    }
    toml::from_str(&fs::read_to_string(run.thresholds())?).map_err(|e| Error::Config(e.to_string()))
}

fn test_evaluation(cfg: &RunConfig, run: &RunDir, th: &Thresholds) -> Result<(Evaluation, Vec<StageMetrics>, EncodedSplit, EncodedSplit)> {
    let q = load_encoded(run, "query")?;
    let g = load_encoded(run, "gallery")?;
    let queries = QuerySet::new(q.stages.clone(), q.ids.clone(), q.sources.clone())?;
    let gallery = GalleryIndex::new(g.stages.clone(), g.ids.clone(), g.sources.clone())?;
    let (eval, metrics) = stagewise_eval(&queries, &gallery, &eval_options(cfg, th))?;
    Ok((eval, metrics, q, g))
}

/// Stage-wise retrieval metrics of the encoded test splits.
pub fn eval_cmd(cfg: &RunConfig, run: &RunDir) -> Result<Vec<StageMetrics>> {
    let th = thresholds_for(cfg, run)?;
    let (_, metrics, _, _) = test_evaluation(cfg, run, &th)?;
    fs::write(run.report("stagewise.csv"), stagewise_csv(&metrics))?;
    Ok(metrics)
}

pub fn load_ets(run: &RunDir) -> Result<EtsClassifier> {
    require(&manifest_path(&run.ets()), "run `train-policy` first")?;
    let ckpt = Checkpoint::load(&run.ets())?;
    let field = |k: &str| {
        ckpt.get(k)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Format { path: run.ets(), reason: format!("checkpoint lacks {k}") })
    };
    let mut clf = EtsClassifier::new(field("input_dim")?, field("hidden")?, &mut substream(0, stream::ETS));
    ckpt.restore(&mut clf)?;
    Ok(clf)
}

/// ETS labels for every test query.
pub fn ets_labels(cfg: &RunConfig, clf: &EtsClassifier, q: &EncodedSplit, g: &EncodedSplit) -> Result<Vec<ExitLabel>> {
    let index = GalleryIndex::new(vec![g.stages[0].clone()], g.ids.clone(), g.sources.clone())?;
    let seqs = (0..q.ids.len())
        .map(|i| {
            let filter = QueryFilter {
                exclude_same_source: cfg.policy.same_source_filter.then(|| (q.ids[i], q.sources[i])),
                exclude_position: None,
            };
            ets_sequence(q.features.row(i), &q.stages[0].codes[i], &index, &g.features, &filter)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = seqs.iter().map(Vec::as_slice).collect();
    predict(clf, &refs)
}

/// Per-policy results on the test split.
#[derive(Clone, Debug)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub stages: Vec<u8>,
    pub exits: ExitReport,
    pub points: Vec<BudgetPoint>,
}

#[derive(Clone, Debug)]
pub struct BudgetOutcome {
    pub evaluation: Evaluation,
    pub stage_metrics: Vec<StageMetrics>,
    pub labels: Option<Vec<ExitLabel>>,
    pub budgets: Vec<f64>,
    pub runs: Vec<PolicyRun>,
}

impl BudgetOutcome {
    pub fn run(&self, policy: PolicyKind) -> Option<&PolicyRun> {
        self.runs.iter().find(|r| r.policy == policy)
    }
}

/// File-name form of a policy name.
pub fn policy_slug(p: PolicyKind) -> String {
    p.name().replace('+', "-")
}

/// Budgeted evaluation of `policies` (every policy whose artifacts exist
/// when empty). Writes budget curves, decision logs and the exit report.
pub fn budget_cmd(cfg: &RunConfig, run: &RunDir, policies: &[PolicyKind], budgets: Option<&[f64]>) -> Result<BudgetOutcome> {
    let th = thresholds_for(cfg, run)?;
    let (eval, stage_metrics, q, g) = test_evaluation(cfg, run, &th)?;
    let ets_ready = manifest_path(&run.ets()).exists();
    let wanted: Vec<PolicyKind> = if policies.is_empty() {
        PolicyKind::ALL
            .into_iter()
            .filter(|p| match p {
                PolicyKind::Qs => th.qs.is_some(),
                PolicyKind::Gs => th.gs.is_some(),
                PolicyKind::Ets => ets_ready,
                PolicyKind::EtsGs => ets_ready && th.gs.is_some(),
                _ => true,
            })
            .collect()
    } else {
        policies.to_vec()
    };
    let labels = if wanted.iter().any(|p| p.needs_ets()) {
        let clf = load_ets(run)?;
        Some(ets_labels(cfg, &clf, &q, &g)?)
    } else {
        None
    };
    let budgets: Vec<f64> = match budgets {
        Some(b) => b.to_vec(),
        None if !cfg.budget.budgets.is_empty() => cfg.budget.budgets.clone(),
        None => budget_grid(&cfg.cost, cfg.budget.steps),
    };
    let draws = random_draws(cfg.seed, eval.len());
    let stage1_correct = eval.top1_correct(1);
    let mut runs = Vec::new();
    for policy in wanted {
        let stages = (0..eval.len())
            .map(|i| {
                let sig = QuerySignals {
                    stages: eval.signals(i),
                    ets: labels.as_ref().map(|l| l[i]),
                    random_draw: draws[i],
                };
                decide_exit(policy, &sig, &th, None)
            })
            .collect::<Result<Vec<u8>>>()?;
        let exits = exit_report(&stages, &stage1_correct)?;
        let points = budget_curve(&eval, &stages, &cfg.cost, &budgets)?;
        let slug = policy_slug(policy);
        fs::write(run.report(&format!("budget-{slug}.csv")), budget_csv(&points))?;
        fs::write(run.report(&format!("budget-{slug}.dat")), budget_gnuplot(&points, &cfg.cost, policy.name()))?;
        let log_labels = if policy.needs_ets() { labels.as_deref() } else { None };
        fs::write(run.report(&format!("decisions-{slug}.tsv")), decision_log(&eval, log_labels, &stages))?;
        runs.push(PolicyRun { policy, stages, exits, points });
    }
    let rows: Vec<(String, ExitReport)> = runs.iter().map(|r| (r.policy.name().to_string(), r.exits)).collect();
    fs::write(run.report("exits.csv"), exit_report_csv(&rows))?;
    fs::write(run.report("stagewise.csv"), stagewise_csv(&stage_metrics))?;
    Ok(BudgetOutcome { evaluation: eval, stage_metrics, labels, budgets, runs })
}

pub fn bench_cmd(cfg: &RunConfig, run: &RunDir) -> Result<Vec<TimingRow>> {
    let b = &cfg.bench;
    if b.lengths.is_empty() || b.n_gallery == 0 || b.n_queries == 0 {
        return Err(Error::Config("bench needs code lengths and non-empty gallery and query sets".into()));
    }
    let rows = timing_table(&b.lengths, b.n_gallery, b.n_queries, cfg.seed);
    fs::write(run.report("bench_hamming.csv"), timing_csv(&rows))?;
    Ok(rows)
}

/// Top-`k` gallery neighbours of each query code at one stage.
pub fn search(gallery: &CodeFile, queries: &CodeFile, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    let index = GalleryIndex::new(vec![gallery.codes.clone()], gallery.ids.clone(), gallery.sources.clone())?;
    queries.codes.codes.iter().map(|c| index.topk(c, k)).collect()
}

pub fn search_tsv(queries: &CodeFile, results: &[Vec<Neighbor>]) -> String {
    let mut out = String::from("query\tquery_identity\trank\tposition\tidentity\tdistance\n");
    for (q, hits) in results.iter().enumerate() {
        for (r, n) in hits.iter().enumerate() {
            let _ = writeln!(out, "{q}\t{}\t{}\t{}\t{}\t{}", queries.ids[q], r + 1, n.position, n.id, n.distance);
        }
    }
    out
}

/// Every stage from data generation to the budget curves.
pub fn run_all(cfg: &RunConfig, run: &RunDir) -> Result<BudgetOutcome> {
    gen_data_cmd(cfg, run)?;
    train_cmd(cfg, run)?;
    let policy = train_policy_cmd(cfg, run)?;
    encode_gallery_cmd(cfg, run)?;
    let mut cfg = cfg.clone();
    cfg.policy.thresholds = policy.thresholds;
    budget_cmd(&cfg, run, &[], None)
}
