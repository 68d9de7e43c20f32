use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use hashreid::eval::{stagewise_eval, EvalOptions, QuerySet};
use hashreid::hamming::{read_codes, GalleryIndex};
use hashreid::pipeline::*;
use hashreid::policy::{FlipTable, PolicyKind};
use hashreid::Error;
use tempfile::TempDir;

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::reference(seed);
    cfg.data = DataSource::Synthetic(SyntheticDatasetSpec {
        train_identities: 12,
        val_identities: 6,
        test_identities: 8,
        train_per_identity: 6,
        query_per_identity: 3,
        gallery_per_identity: 4,
        ..Default::default()
    });
    cfg.train.p = 6;
    cfg.train.epochs = 6;
    cfg.train.checkpoint_interval = 2;
    cfg.train.lr.milestones = vec![4];
    cfg.policy.ets.epochs = 3;
    cfg.policy.ets.hidden = 8;
    cfg.budget.steps = 6;
    cfg
}

struct Fixture {
    dir: TempDir,
    cfg: RunConfig,
    outcome: BudgetOutcome,
    in_loop_flips: FlipTable,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = small_config(4);
        let run = RunDir::new(dir.path()).unwrap();
        let outcome = run_all(&cfg, &run).unwrap();
        let in_loop_flips = FlipTable::load(&run.flips()).unwrap();
        let cfg = RunConfig::load(&run.config()).unwrap();
        Fixture { dir, cfg, outcome, in_loop_flips }
    })
}

fn run_dir(f: &Fixture) -> RunDir {
    RunDir::new(f.dir.path()).unwrap()
}

#[test]
fn commands_report_missing_prerequisites() {
    let dir = TempDir::new().unwrap();
    let run = RunDir::new(dir.path()).unwrap();
    let cfg = small_config(0);
    let missing = |r: hashreid::Result<()>| matches!(r, Err(Error::MissingArtifact { .. }));
    assert!(missing(train_cmd(&cfg, &run).map(|_| ())));
    assert!(missing(train_policy_cmd(&cfg, &run).map(|_| ())));
    assert!(missing(eval_cmd(&cfg, &run).map(|_| ())));
    assert!(missing(budget_cmd(&cfg, &run, &[], None).map(|_| ())));
    gen_data_cmd(&cfg, &run).unwrap();
    assert!(missing(collect_flips_cmd(&cfg, &run).map(|_| ())));
    assert!(missing(train_policy_cmd(&cfg, &run).map(|_| ())));
    assert!(missing(load_ets(&run).map(|_| ())));
}

#[test]
fn run_all_writes_every_artifact() {
    let f = fixture();
    let run = run_dir(f);
    for p in [run.config(), run.flips(), run.train_log(), run.thresholds(), run.calibration(), run.ets_report()] {
        assert!(p.exists(), "{}", p.display());
    }
    for split in ["gallery", "query"] {
        for k in 1..=4 {
            assert!(run.codes(split, k).exists());
        }
        assert!(run.features(split).exists());
    }
    for r in &f.outcome.runs {
        let slug = policy_slug(r.policy);
        for name in [format!("budget-{slug}.csv"), format!("budget-{slug}.dat"), format!("decisions-{slug}.tsv")] {
            assert!(run.report(&name).exists(), "{name}");
        }
    }
    let names: Vec<_> = f.outcome.runs.iter().map(|r| r.policy).collect();
    assert_eq!(names, PolicyKind::ALL.to_vec());
    assert!(f.cfg.policy.thresholds.qs.is_some() && f.cfg.policy.thresholds.gs.is_some());
}

#[test]
fn collect_flips_reproduces_in_loop_table() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    copy_tree(f.dir.path(), dir.path());
    let run = RunDir::new(dir.path()).unwrap();
    fs::remove_file(run.flips()).unwrap();
    let replayed = collect_flips_cmd(&f.cfg, &run).unwrap();
    assert_eq!(replayed, f.in_loop_flips);
    assert_eq!(fs::read(run.flips()).unwrap(), fs::read(run_dir(f).flips()).unwrap());
}

#[test]
fn eval_from_files_matches_in_memory_encoding() {
    let f = fixture();
    let run = run_dir(f);
    let from_files = eval_cmd(&f.cfg, &run).unwrap();
    let ds = load_dataset(&run).unwrap();
    let enc = load_encoder(&f.cfg, &run.final_checkpoint()).unwrap();
    let q = encode_split(&enc, &ds.query).unwrap();
    let g = encode_split(&enc, &ds.gallery).unwrap();
    let queries = QuerySet::new(q.stages, ds.query.ids.clone(), ds.query.sources.clone()).unwrap();
    let gallery = GalleryIndex::new(g.stages, ds.gallery.ids.clone(), ds.gallery.sources.clone()).unwrap();
    let opts = EvalOptions { gs_mode: f.cfg.policy.thresholds.gs_mode, ..Default::default() };
    let (_, in_memory) = stagewise_eval(&queries, &gallery, &opts).unwrap();
    assert_eq!(from_files, in_memory);
    assert_eq!(from_files, f.outcome.stage_metrics);
}

#[test]
fn search_matches_index_ranking() {
    let f = fixture();
    let run = run_dir(f);
    let gallery = read_codes(&run.codes("gallery", 2)).unwrap();
    let queries = read_codes(&run.codes("query", 2)).unwrap();
    let hits = search(&gallery, &queries, 3).unwrap();
    let index = GalleryIndex::new(vec![gallery.codes.clone()], gallery.ids.clone(), gallery.sources.clone()).unwrap();
    for (q, h) in queries.codes.codes.iter().zip(&hits) {
        assert_eq!(h, &index.topk(q, 3).unwrap());
    }
    let tsv = search_tsv(&queries, &hits);
    assert_eq!(tsv.lines().count(), 1 + 3 * queries.ids.len());
}

#[test]
fn budget_subset_and_explicit_budgets() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    copy_tree(f.dir.path(), dir.path());
    let run = RunDir::new(dir.path()).unwrap();
    let out = budget_cmd(&f.cfg, &run, &[PolicyKind::Gs], Some(&[0.5, 1.0])).unwrap();
    assert_eq!(out.runs.len(), 1);
    assert!(out.labels.is_none());
    let gs = out.run(PolicyKind::Gs).unwrap();
    assert_eq!(gs.points.len(), 2);
    assert_eq!(gs.stages, f.outcome.run(PolicyKind::Gs).unwrap().stages);
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let run = RunDir::new(dir.path()).unwrap();
    run_all(&small_config(4), &run).unwrap();
    for rel in ["codes/query-s1.hrc", "codes/gallery-s4.hrc", "flips.tsv", "reports/decisions-ets-gs.tsv", "reports/exits.csv"] {
        assert_eq!(fs::read(f.dir.path().join(rel)).unwrap(), fs::read(dir.path().join(rel)).unwrap(), "{rel}");
    }
}

fn copy_tree(from: &Path, to: &Path) {
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            fs::create_dir_all(&target).unwrap();
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}
