//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use hashreid::encoder::{Encoder, EncoderConfig, Preset};
use hashreid::eval::{cmc_map, BudgetPoint};
use hashreid::hamming::{bench, hamming_distance, DistanceKind, GalleryIndex, HashCode, StageCodes};
use hashreid::losses::{classifier_nll, combined_loss, ranking_regularizer, triplet_batch_hard, LossWeights, RankingConfig};
use hashreid::numerics::{check_gradients, Mode, Module, Tensor};
use hashreid::pipeline::{run_all, BudgetOutcome, RunConfig, RunDir};
use hashreid::policy::{count_flips, label_from_flips, EtsClassifier, ExitLabel, PolicyKind};
use hashreid::rng::substream;
use rand::Rng;
use tempfile::TempDir;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = substream(seed, "acceptance");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Finite-difference check on the first `take` entries of a named parameter.
fn param_check<M: Module>(m: &mut M, name: &str, take: usize, mut loss: impl FnMut(&mut M) -> f64) -> f64 {
    let mut theta0 = Vec::new();
    m.visit("", &mut |n, t| {
        if n == name {
            theta0 = t.data()[..take.min(t.len())].to_vec();
        }
    });
    assert!(!theta0.is_empty(), "no parameter {name}");
    let k = theta0.len();
    check_gradients(
        |v| {
            m.visit_mut("", &mut |n, t| {
                if n == name {
                    t.data_mut()[..k].copy_from_slice(v);
                }
            });
            m.zero_grad();
            let value = loss(m);
            let mut g = Vec::new();
            m.visit("", &mut |n, t| {
                if n == name {
                    g = t.grad().expect("gradient buffer")[..k].to_vec();
                }
            });
            (value, g)
        },
        &theta0,
        1e-6,
    )
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let mut worst_layer = 0.0f64;

    // every layer kind, through the full objective of the toy network
    let mut enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 4), &mut substream(5, "init")).unwrap();
    let x = random_tensor(&[8, 32, 16, 3], 6);
    let labels = [0, 0, 1, 1, 2, 2, 3, 3];
    let w = LossWeights { margin: 50.0, ..LossWeights::default() };
    for name in [
        "stage1.mix.weight",
        "stage2.mix.bias",
        "stage3.mix.weight",
        "stage4.mix.weight",
        "exit1.bridge_fc.weight",
        "exit1.bridge_bn.gamma",
        "exit2.bridge_bn.beta",
        "exit2.proj.weight",
        "exit3.bn.gamma",
        "exit4.bn.beta",
        "exit4.classifier.weight",
    ] {
        let err = param_check(&mut enc, name, 24, |e| {
            let out = e.forward_all(&x, Mode::Train).unwrap();
            let c = combined_loss(&out, &labels, &w).unwrap();
            e.backward(&c.grads).unwrap();
            c.total
        });
        ensure(err < 1e-4, || format!("{name}: relative error {err:.2e}"))?;
        worst_layer = worst_layer.max(err);
    }

    // recurrent exit classifier
    let mut clf = EtsClassifier::new(3, 5, &mut substream(4, "ets"));
    let seqs: Vec<Vec<f64>> = (0..4).map(|i| random_tensor(&[15], 20 + i).into_data()).collect();
    clf.fit_standardization(&seqs);
    let refs: Vec<&[f64]> = seqs.iter().map(Vec::as_slice).collect();
    let wl: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
    for name in ["gru1.wz", "gru1.ur", "gru1.un", "gru2.wn", "gru2.bz", "head.fc.weight", "head.out.weight"] {
        let err = param_check(&mut clf, name, 24, |c| {
            let logits = c.forward(&refs).unwrap();
            c.backward(&Tensor::new(vec![4, 3], wl.clone()).unwrap()).unwrap();
            logits.data().iter().zip(&wl).map(|(a, b)| a * b).sum()
        });
        ensure(err < 1e-4, || format!("{name}: relative error {err:.2e}"))?;
        worst_layer = worst_layer.max(err);
    }

    // loss terms against their inputs
    let mut worst_loss = 0.0f64;
    let pk: Vec<u32> = (0..4).flat_map(|i| [i; 3]).collect();
    let feats = random_tensor(&[12, 6], 30);
    let err = check_gradients(
        |v| {
            let l = triplet_batch_hard(&Tensor::new(vec![12, 6], v.to_vec()).unwrap(), &pk, 5.0).unwrap();
            (l.value, l.grad.into_data())
        },
        feats.data(),
        1e-6,
    );
    worst_loss = worst_loss.max(err);
    let logits = random_tensor(&[12, 4], 31);
    let err = check_gradients(
        |v| {
            let l = classifier_nll(&Tensor::new(vec![12, 4], v.to_vec()).unwrap(), &pk).unwrap();
            (l.value, l.grad.into_data())
        },
        logits.data(),
        1e-6,
    );
    worst_loss = worst_loss.max(err);
    let hash = random_tensor(&[12, 8], 32).map(|v| v / (1.0 + v.abs()));
    let cfg = RankingConfig::default();
    let err = check_gradients(
        |v| {
            let l = ranking_regularizer(&feats, &Tensor::new(vec![12, 8], v.to_vec()).unwrap(), cfg).unwrap();
            (l.value, l.d_hash.into_data())
        },
        hash.data(),
        1e-6,
    );
    worst_loss = worst_loss.max(err);
    let err = check_gradients(
        |v| {
            let l = ranking_regularizer(&Tensor::new(vec![12, 6], v.to_vec()).unwrap(), &hash, cfg).unwrap();
            (l.value, l.d_ori.into_data())
        },
        feats.data(),
        1e-6,
    );
    worst_loss = worst_loss.max(err);
    ensure(worst_loss < 1e-3, || format!("loss gradient relative error {worst_loss:.2e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("layers {worst_layer:.1e}, losses {worst_loss:.1e}, {secs:.1}s"))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn oracles() -> Check {
    // batch-hard triplet against an O(N³) scan
    for seed in 0..20 {
        let labels: Vec<u32> = (0..4).flat_map(|i| [i; 4]).collect();
        let f = random_tensor(&[16, 5], 100 + seed);
        let n = labels.len();
        let mut total = 0.0;
        for a in 0..n {
            let mut best = f64::NEG_INFINITY;
            for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
                for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                    best = best.max(euclid(f.row(a), f.row(p)) - euclid(f.row(a), f.row(q)) + 0.3);
                }
            }
            total += best.max(0.0);
        }
        let got = triplet_batch_hard(&f, &labels, 0.3).unwrap().value;
        ensure(got == total / n as f64, || format!("triplet {got} vs scan {}", total / n as f64))?;
    }

    // top-5 ranking regularizer against full Gram matrices
    for seed in 0..10 {
        let ori = random_tensor(&[10, 7], 200 + seed);
        let hash = random_tensor(&[10, 9], 300 + seed).map(|v| v / (1.0 + v.abs()));
        let n = 10;
        let unit = |x: &Tensor, i: usize| -> Vec<f64> {
            let r = x.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / norm).collect()
        };
        let gram = |x: &Tensor| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| unit(x, i).iter().zip(unit(x, j)).map(|(a, b)| a * b).sum()).collect()).collect()
        };
        let (go, gh) = (gram(&ori), gram(&hash));
        let mut total = 0.0;
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| euclid(ori.row(i), ori.row(a)).total_cmp(&euclid(ori.row(i), ori.row(b))).then(a.cmp(&b)));
            let mut top = order[..5].to_vec();
            top.sort_unstable();
            for j in top {
                total += (go[i][j] - gh[i][j]).powi(2);
            }
        }
        let want = total / (n * 5) as f64;
        let got = ranking_regularizer(&ori, &hash, RankingConfig::default()).unwrap().value;
        ensure(got == want, || format!("ranking {got} vs Gram {want}"))?;
    }

    // packed Hamming against a bit loop
    let mut rng = substream(7, "acceptance-hamming");
    for i in 0..10_000 {
        let len = [64, 100, 256, 2048][i % 4];
        let a: Vec<f64> = (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let b: Vec<f64> = (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let naive = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
        let got = hamming_distance(&HashCode::pack(&a, 1).unwrap(), &HashCode::pack(&b, 1).unwrap()).unwrap();
        ensure(got == naive, || format!("hamming {got} vs bit loop {naive}"))?;
    }

    // top-k against a full sort
    let codes: Vec<HashCode> = (0..500)
        .map(|_| HashCode::pack(&(0..64).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect::<Vec<_>>(), 1).unwrap())
        .collect();
    let ids: Vec<u32> = (0..500).map(|i| i % 50).collect();
    let index = GalleryIndex::new(vec![StageCodes::new(1, codes.clone()).unwrap()], ids, vec![0; 500]).unwrap();
    for q in codes.iter().take(50) {
        let mut all: Vec<(u32, usize)> = codes.iter().enumerate().map(|(i, c)| (hamming_distance(q, c).unwrap(), i)).collect();
        all.sort();
        let got: Vec<(u32, usize)> = index.topk(q, 10).unwrap().iter().map(|n| (n.distance, n.position)).collect();
        ensure(got == all[..10], || "top-k differs from full sort".into())?;
    }

    // mAP and CMC against naive AP summation
    let mut instances = 0;
    while instances < 100 {
        let qids: Vec<u32> = (0..5).map(|_| rng.random_range(0..6)).collect();
        let rankings: Vec<Vec<u32>> = (0..5).map(|_| (0..20).map(|_| rng.random_range(0..6)).collect()).collect();
        let Ok(m) = cmc_map(&rankings, &qids, 20) else { continue };
        instances += 1;
        let mut aps = Vec::new();
        let mut r1 = 0.0;
        for (r, &q) in rankings.iter().zip(&qids) {
            let pos: Vec<usize> = (0..r.len()).filter(|&i| r[i] == q).collect();
            if pos.is_empty() {
                continue;
            }
            let p: f64 = pos.iter().map(|&p| r[..=p].iter().filter(|&&x| x == q).count() as f64 / (p + 1) as f64).sum();
            aps.push(p / pos.len() as f64);
            r1 += f64::from(u8::from(r[0] == q));
        }
        let map = aps.iter().sum::<f64>() / aps.len() as f64;
        let r1 = r1 / aps.len() as f64;
        ensure((m.map - map).abs() <= 1e-12 && (m.rank(1) - r1).abs() <= 1e-12, || format!("mAP {} vs {map}", m.map))?;
    }
    Ok("triplet, ranking, hamming (10^4 pairs), top-k, mAP/CMC (100 instances)".into())
}

fn flip_labels() -> Check {
    let seq = |s: &str| s.chars().map(|c| c == '1').collect::<Vec<bool>>();
    let cases = [
        ("0011111111", 1, ExitLabel::Easy),
        ("0011000111", 3, ExitLabel::Hard),
        ("1100111111", 2, ExitLabel::Easy),
        ("1010101111", 6, ExitLabel::Hard),
        ("0101010111", 7, ExitLabel::Skip),
    ];
    for (s, flips, label) in cases {
        let got = (count_flips(&seq(s)), label_from_flips(&seq(s)));
        ensure(got == (flips, label), || format!("{s}: {got:?}, expected ({flips}, {label:?})"))?;
    }
    Ok("printed sequences easy/hard, boundaries 2/6/7 easy/hard/skip".into())
}

fn search_speedup() -> Check {
    let start = Instant::now();
    let b = bench(DistanceKind::Hamming, 2048, 10_000, 100, 0);
    let e = bench(DistanceKind::Euclidean, 2048, 10_000, 100, 0);
    let ratio = e.per_pair_secs / b.per_pair_secs;
    let secs = start.elapsed().as_secs_f64();
    ensure(b.pairs >= 1_000_000, || format!("{} pairs", b.pairs))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    ensure(ratio >= 10.0, || format!("ratio {ratio:.1}x"))?;
    Ok(format!("{ratio:.1}x at L=2048 over {} pairs, {secs:.1}s", b.pairs))
}

struct Reference {
    _dir: TempDir,
    root: std::path::PathBuf,
    outcome: BudgetOutcome,
    secs: f64,
}

fn reference_run(seed: u64) -> Result<Reference, String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let root = dir.path().to_path_buf();
    let start = Instant::now();
    let run = RunDir::new(&root).map_err(|e| e.to_string())?;
    let outcome = run_all(&RunConfig::reference(seed), &run).map_err(|e| format!("seed {seed}: {e}"))?;
    Ok(Reference { _dir: dir, root, outcome, secs: start.elapsed().as_secs_f64() })
}

fn policy(r: &Reference, p: PolicyKind) -> Result<&hashreid::pipeline::PolicyRun, String> {
    r.outcome.run(p).ok_or_else(|| format!("no {p} run"))
}

fn rank1(r: &Reference, stage: usize) -> f64 {
    100.0 * r.outcome.stage_metrics[stage - 1].metrics.rank(1)
}

fn dynamic_inference(r: &Reference) -> Check {
    let n = r.outcome.evaluation.len();
    let ets_gs = policy(r, PolicyKind::EtsGs)?;
    let e = ets_gs.exits;
    let share = e.exited as f64 / n as f64;
    let target = 0.95 * rank1(r, 4);
    let reached = ets_gs.points.iter().filter(|p| p.mean_cost <= 0.5 + 1e-12).map(|p| p.rank1).fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "stage-1 exits {}/{n} ({:.1}%), incorrect {}/{} max ({:.1}%), best R-1 at cost<=0.5 {reached:.2} vs target {target:.2}, {:.0}s",
        e.exited,
        100.0 * share,
        e.incorrect,
        e.maximum,
        100.0 * e.incorrect as f64 / e.maximum as f64,
        r.secs
    );
    ensure(share >= 0.6, || detail.clone())?;
    ensure(e.incorrect as f64 <= 0.1 * e.maximum as f64, || detail.clone())?;
    ensure(reached >= target, || detail.clone())?;
    ensure(r.secs < 600.0, || detail.clone())?;
    Ok(detail)
}

fn policy_ordering(runs: &[&Reference]) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for (seed, r) in runs.iter().enumerate() {
        let combo = policy(r, PolicyKind::EtsGs)?.exits;
        let gs = policy(r, PolicyKind::Gs)?.exits;
        let ets = policy(r, PolicyKind::Ets)?.exits;
        ok &= combo.correct >= gs.correct && combo.incorrect <= ets.incorrect;
        parts.push(format!(
            "seed {seed}: correct {}>={} incorrect {}<={}",
            combo.correct, gs.correct, combo.incorrect, ets.incorrect
        ));
    }
    let detail = parts.join("; ");
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

/// Problems with one policy's curve: exit sets must nest and R-1 must not drop.
fn curve_issues(points: &[BudgetPoint], name: &str) -> Vec<String> {
    let mut issues = Vec::new();
    for w in points.windows(2) {
        if !w[0].stages.iter().zip(&w[1].stages).all(|(a, b)| a <= b) {
            issues.push(format!("{name}: exit sets not nested between budgets {:.2} and {:.2}", w[0].budget, w[1].budget));
        }
        if w[1].rank1 < w[0].rank1 {
            issues.push(format!(
                "{name}: R-1 drops {:.2} -> {:.2} between budgets {:.2} and {:.2}",
                w[0].rank1, w[1].rank1, w[0].budget, w[1].budget
            ));
        }
    }
    issues
}

fn budget_curve_structure(r: &Reference) -> Check {
    let (s1, s4) = (rank1(r, 1), rank1(r, 4));
    let map = |k: usize| 100.0 * r.outcome.stage_metrics[k - 1].metrics.map;
    let full = policy(r, PolicyKind::Full)?;
    let ceiling = full.points.last().ok_or("empty curve")?;
    let mut issues = Vec::new();
    for run in &r.outcome.runs {
        let floor = &run.points[0];
        if !(floor.stages.iter().all(|&s| s == 1) && floor.rank1 == s1 && floor.map == map(1)) {
            issues.push(format!("{}: floor R-1 {:.2} vs S1 {s1:.2}", run.policy, floor.rank1));
        }
        if run.policy != PolicyKind::Random {
            issues.extend(curve_issues(&run.points, run.policy.name()));
        }
    }
    if !(ceiling.stages.iter().all(|&s| s == 4) && ceiling.rank1 == s4 && ceiling.map == map(4)) {
        issues.push(format!("ceiling R-1 {:.2} vs S4 {s4:.2}", ceiling.rank1));
    }
    let summary = format!("S1 R-1 {s1:.2}, S4 R-1 {s4:.2}, {} budgets", full.points.len());
    if issues.is_empty() {
        Ok(format!("{summary}; floors = S1, ceiling = S4, deterministic curves nested and non-decreasing"))
    } else {
        Err(format!("{summary}; {}", issues.join("; ")))
    }
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(first: &Reference) -> Check {
    let second = reference_run(0)?;
    let (a, b) = (tree_bytes(&first.root), tree_bytes(&second.root));
    ensure(a.keys().eq(b.keys()), || "artifact sets differ".into())?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("differing files: {differing:?}"))?;
    for required in ["codes/query-s1.hrc", "codes/gallery-s4.hrc", "reports/decisions-ets-gs.tsv", "reports/stagewise.csv"] {
        ensure(a.contains_key(required), || format!("missing {required}"))?;
    }
    Ok(format!("{} files byte-identical across two runs", a.len()))
}

fn report(id: usize, title: &str, result: Check) -> bool {
    match &result {
        Ok(detail) => println!("criterion {id} {title}: PASS ({detail})"),
        Err(detail) => println!("criterion {id} {title}: FAIL ({detail})"),
    }
    result.is_ok()
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

/// Failing criteria are reported without failing the process unless
/// `HASHREID_ACCEPTANCE_STRICT` is set.
fn main() -> ExitCode {
    // `cargo test -- --list` and filtered runs probe test binaries; nothing to list here
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut ok = true;
    ok &= report(1, "gradient fidelity", guarded(gradient_fidelity));
    ok &= report(2, "oracle equivalence", guarded(oracles));
    ok &= report(3, "flip labels", guarded(flip_labels));
    ok &= report(4, "search speedup", guarded(search_speedup));

    let runs: Vec<Result<Reference, String>> = (0..3).map(guarded_run).collect();
    match &runs[0] {
        Ok(r0) => {
            ok &= report(5, "dynamic inference", guarded(|| dynamic_inference(r0)));
            let all: Result<Vec<&Reference>, String> = runs.iter().map(|r| r.as_ref().map_err(Clone::clone)).collect();
            ok &= report(6, "policy ordering", all.and_then(|v| guarded(|| policy_ordering(&v))));
            ok &= report(7, "budget curve structure", guarded(|| budget_curve_structure(r0)));
            ok &= report(8, "determinism", guarded(|| determinism(r0)));
        }
        Err(e) => {
            for (id, title) in [(5, "dynamic inference"), (6, "policy ordering"), (7, "budget curve structure"), (8, "determinism")] {
                ok &= report(id, title, Err(e.clone()));
            }
        }
    }
    let strict = std::env::var_os("HASHREID_ACCEPTANCE_STRICT").is_some();
    println!("acceptance: {}", if ok { "all criteria pass" } else { "some criteria fail" });
    if ok || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn guarded_run(seed: u64) -> Result<Reference, String> {
    catch_unwind(|| reference_run(seed)).unwrap_or_else(|_| Err(format!("seed {seed}: pipeline panicked")))
}
