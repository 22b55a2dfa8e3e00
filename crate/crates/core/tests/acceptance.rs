//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//! Runs with `harness = false`; the exit status is non-zero if any fails.

#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    brute_rep_vectors, brute_seed_map, forward_raw, library_lrp, lrp_raw, random_fc, random_layers, small_config,
    trained_toy_sae, write_config, LevelView,
};
use eagrs::cli::{
    build_features, cmd_pretrain, compute_relevance, cross_validate, load_subjects, parse_sweep, pretrain_sae,
    CvOutcome, DataSource, Overrides, RunConfig, RunDir,
};
use eagrs::eval::{
    confusion_metrics, mcnemar, mcnemar_from_counts, roc_auc, selection_ratio, stratified_kfold, top_k_strict,
    ward_cluster,
};
use eagrs::fcdata::{apply_mask_flat, sample_mask, Subject};
use eagrs::linalg::{flatten_upper, RngStream};
use eagrs::lrp::{global_relevance, relevance_for_seed, MeanAxis, RelevanceRule};
use eagrs::nn::gradient_check;
use eagrs::roiselect::{representative_vectors, AblationCase, ClassifierInput, GateDraw, RepVectors, Step3Model};
use eagrs::sae::{level_loss_and_grads, masked_reconstruction_error, SaeModel};
use sha2::{Digest, Sha256};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn lrp_conservation() -> Verdict {
    let start = Instant::now();
    let (mut worst_zero, mut worst_eps) = (0.0f64, 0.0f64);
    for seed in 0..200u64 {
        let mut rng = RngStream::new(1000 + seed);
        let depth = 2 + (seed as usize % 3);

        let layers = random_layers(&mut rng, depth, 64, false);
        let x: Vec<f64> = (0..layers[0].w[0].len()).map(|_| rng.next_normal()).collect();
        let out = forward_raw(&layers, &x).output;
        let unit = rng.next_below(out.len());
        let rel = library_lrp(&layers, &x, unit, RelevanceRule::zero());
        worst_zero = worst_zero.max((rel.iter().sum::<f64>() - out[unit]).abs());

        let layers = random_layers(&mut rng, depth, 64, true);
        let x: Vec<f64> = (0..layers[0].w[0].len()).map(|_| rng.next_normal()).collect();
        let out = forward_raw(&layers, &x).output;
        let unit = rng.next_below(out.len());
        let rel = library_lrp(&layers, &x, unit, RelevanceRule::epsilon(1e-6));
        let (_, absorbed) = lrp_raw(&layers, &x, unit, 1e-6);
        let total = rel.iter().sum::<f64>() + absorbed.iter().sum::<f64>();
        worst_eps = worst_eps.max((total - out[unit]).abs());
    }
    let t = start.elapsed();
    verdict(
        worst_zero <= 1e-9 && worst_eps <= 1e-7 && within(t, 10),
        format!("200 nets; lrp-zero max err {worst_zero:.2e}, eps-rule max err {worst_eps:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

fn sae_level_error(seed: u64, level: usize) -> f64 {
    let mut rng = RngStream::new(seed);
    let r = 6;
    let mut sae = SaeModel::new(r, &[9, 4], &mut rng).unwrap();
    let x = flatten_upper(&random_fc(r, &mut rng)).unwrap();
    let mut masked = x.clone();
    apply_mask_flat(&mut masked, r, &sample_mask(r, 0.3, &mut rng).unwrap()).unwrap();
    let alpha = 0.25 + 0.5 * rng.next_uniform();
    let mut view = LevelView { sae: &mut sae, level };
    gradient_check(&mut view, |v| level_loss_and_grads(v.sae, v.level, alpha, &masked, &x), 1e-6).unwrap()
}

fn step3_error(seed: u64, case: AblationCase) -> f64 {
    let mut rng = RngStream::new(seed);
    let r = 5;
    let mut sae = SaeModel::new(r, &[9, 4], &mut rng).unwrap();
    sae.mark_trained();
    let mut model = Step3Model::new(case, &sae, [7, 6], 1.0, &mut rng).unwrap();
    let x = flatten_upper(&random_fc(r, &mut rng)).unwrap();
    let f: Vec<[f64; 2]> = (0..r).map(|_| [rng.next_normal(), rng.next_normal()]).collect();
    let noise: Vec<f64> = (0..r).map(|_| rng.next_gumbel() - rng.next_gumbel()).collect();
    let label = (seed % 2) as u8;
    gradient_check(
        &mut model,
        |m| m.loss_and_grads(ClassifierInput { x: &x, f: &f }, GateDraw::Noise(&noise), label),
        1e-6,
    )
    .unwrap()
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for seed in 0..100u64 {
        for level in [1, 2] {
            let e = sae_level_error(seed, level);
            let w = worst.entry(format!("E/G level {level}")).or_default();
            *w = w.max(e);
        }
        for case in [AblationCase::Full, AblationCase::V, AblationCase::VI, AblationCase::IV, AblationCase::I] {
            let e = step3_error(seed, case);
            let w = worst.entry(format!("step3 {case}")).or_default();
            *w = w.max(e);
        }
    }
    let t = start.elapsed();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    verdict(
        max < 1e-5 && within(t, 60),
        format!("100 seeds; {}; {:.1}s", parts.join(", "), t.as_secs_f64()),
    )
}

fn algorithm_oracles() -> Verdict {
    let start = Instant::now();
    let r = 6;
    let rule = RelevanceRule::epsilon(1e-6);
    let (mut worst, mut bitwise) = (0.0f64, true);
    for seed in 0..20u64 {
        let sae = trained_toy_sae(r, &[10, 5], 500 + seed);
        let x = random_fc(r, &mut RngStream::new(900 + seed));
        for seed_roi in 0..r {
            let lib = relevance_for_seed(&sae, &x, seed_roi, rule).unwrap();
            let oracle = brute_seed_map(&sae, &x, seed_roi, 1e-6);
            for a in 0..r {
                for b in 0..r {
                    worst = worst.max((lib.get(a, b) - oracle[a][b]).abs());
                }
            }
        }
        let tensor = global_relevance(&sae, &x, rule, "s").unwrap();
        let rep = representative_vectors(&tensor, MeanAxis::Third).unwrap();
        let (f_v, f_c) = brute_rep_vectors(tensor.values(), r);
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        bitwise &= same(&rep.f_v, &f_v) && same(&rep.f_c, &f_c);
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-12 && bitwise && within(t, 30),
        format!("R=6, 20 models; seed maps max err {worst:.2e}; representative vectors bitwise {bitwise}; {:.2}s", t.as_secs_f64()),
    )
}

/// Everything Step 3 needs from one root seed.
struct Prepared {
    cfg: RunConfig,
    subjects: Vec<Subject>,
    sae: SaeModel,
    ids: Vec<String>,
    reps: Vec<RepVectors>,
}

fn prepare(seed: u64) -> Prepared {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.normalize();
    let subjects = load_subjects(&cfg).unwrap();
    let (sae, _) = pretrain_sae(&cfg, &subjects).unwrap();
    let (_, reps) = compute_relevance(&cfg, &sae, &subjects).unwrap();
    let ids = subjects.iter().map(|s| s.id.clone()).collect();
    Prepared {
        cfg,
        subjects,
        sae,
        ids,
        reps,
    }
}

fn run_case(p: &Prepared, case: AblationCase) -> CvOutcome {
    let reps = (case != AblationCase::I).then_some((p.ids.as_slice(), p.reps.as_slice()));
    let data = build_features(&p.subjects, reps).unwrap();
    let sae = (!case.uses_svm()).then_some(&p.sae);
    cross_validate(&p.cfg, case, sae, &data).unwrap()
}

fn planted_recovery(p: &Prepared, full: &CvOutcome, elapsed: Duration) -> Verdict {
    let auc = full.summary().auc.0;
    let selections: Vec<Vec<u8>> = full.predictions.iter().map(|x| x.selection.clone().unwrap()).collect();
    let asd: Vec<bool> = p.subjects.iter().map(|s| s.label.as_u8() == 1).collect();
    let sr = selection_ratio(&selections, &asd).unwrap();
    let planted = match &p.cfg.data {
        DataSource::Synthetic(s) => s.planted_asd.clone(),
        DataSource::Manifest { .. } => unreachable!(),
    };
    let top = top_k_strict(&sr, planted.len());
    let hits = planted.iter().filter(|r| top.contains(r)).count();
    let frac = hits as f64 / planted.len() as f64;
    verdict(
        auc >= 0.80 && frac >= 0.6 && within(elapsed, 15 * 60),
        format!(
            "AUC {auc:.3}; planted {planted:?} in top-{} {top:?}: {hits}/{}; {:.0}s",
            planted.len(),
            planted.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation_ordering(first: (f64, f64, f64)) -> Verdict {
    let mut rows = vec![first];
    for seed in 1..5u64 {
        let p = prepare(seed);
        let auc = |case| run_case(&p, case).summary().auc.0;
        rows.push((auc(AblationCase::Full), auc(AblationCase::I), auc(AblationCase::II)));
    }
    let holds = rows.iter().filter(|(f, i, ii)| f >= i && i >= ii).count();
    let text: Vec<String> = rows.iter().map(|(f, i, ii)| format!("{f:.3}/{i:.3}/{ii:.3}")).collect();
    verdict(
        holds >= 3,
        format!("full/I/II AUC per seed [{}]; ordering holds for {holds}/5", text.join(", ")),
    )
}

fn q_sweep() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::resolve(None, dir.path());
    let grid = parse_sweep("0.1:0.5:0.1").unwrap();
    cmd_pretrain(&run, &Overrides::default(), Some(&grid)).unwrap();
    let csv = fs::read_to_string(run.sweep_summary()).unwrap_or_default();
    let emitted = csv.lines().count() == 1 + grid.len();

    let cfg = RunConfig::load(&run.config()).unwrap();
    let data: Vec<Vec<f64>> = load_subjects(&cfg).unwrap().iter().map(|s| flatten_upper(&s.fc).unwrap()).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for train_q in [0.1, 0.2] {
        let mut sae = SaeModel::load(&run.sweep_checkpoint(train_q)).unwrap();
        for &q in &grid {
            let (model, zero) = masked_reconstruction_error(&mut sae, &data, q, cfg.eval_seed()).unwrap();
            ok &= model < zero;
            parts.push(format!("{train_q}@{q}: {model:.4}<{zero:.4}"));
        }
    }
    let t = start.elapsed();
    verdict(
        ok && emitted && within(t, 10 * 60),
        format!("{}; summary csv {emitted}; {:.0}s", parts.join(" "), t.as_secs_f64()),
    )
}

fn statistical_utilities() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    check("auc separated", roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap() == 1.0);
    check("auc ties", roc_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap() == 0.5);
    check("auc 3/4", roc_auc(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]).unwrap() == 0.75);

    let labels = [1, 1, 1, 1, 0, 0, 0, 0];
    let m = confusion_metrics(&labels, &labels).unwrap();
    check("confusion identity", (m.acc, m.sen, m.spec) == (1.0, 1.0, 1.0));
    let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
    let m = confusion_metrics(&flipped, &labels).unwrap();
    check("confusion negated", (m.acc, m.sen, m.spec) == (0.0, 0.0, 0.0));
    let m = confusion_metrics(&[1, 1, 1, 0, 0, 0, 1, 1], &labels).unwrap();
    check("confusion hand count", (m.acc, m.sen, m.spec) == (5.0 / 8.0, 0.75, 0.5));

    let t = mcnemar_from_counts(10, 2).unwrap();
    check("mcnemar 49/12", t.chi2 == 49.0 / 12.0 && t.p < 0.05);
    check("mcnemar 1/10", mcnemar_from_counts(5, 5).unwrap().chi2 == 0.1);
    check("mcnemar degenerate", mcnemar(&[1, 0], &[1, 0], &[1, 1]).is_err());

    let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
    let plan = stratified_kfold(&labels, 5, 3).unwrap();
    let balanced = (0..5).all(|f| {
        let members = plan.fold(f);
        let pos = members.iter().filter(|&&i| labels[i] == 1).count();
        pos == 2 && members.len() == 4
    });
    check("fold balance", balanced);
    check("fold determinism", plan == stratified_kfold(&labels, 5, 3).unwrap());
    let cohort: Vec<u8> = (0..896).map(|i| u8::from(i < 418)).collect();
    let plan = stratified_kfold(&cohort, 5, 11).unwrap();
    let cohort_ok = (0..5).all(|f| {
        let m = plan.fold(f);
        let pos = m.iter().filter(|&&i| cohort[i] == 1).count() as f64;
        let neg = m.len() as f64 - pos;
        (pos - 83.6).abs() <= 1.0 && (neg - 95.6).abs() <= 1.0
    });
    check("fold cohort scale", cohort_ok);

    let tree = ward_cluster(&[vec![0.0], vec![0.1], vec![10.0]]).unwrap();
    let cut = tree.cut_count(2).unwrap();
    check("ward three points", cut[0] == cut[1] && cut[0] != cut[2]);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed);
        let pts: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.next_normal()).collect()).collect();
        let tree = ward_cluster(&pts).unwrap();
        for (m, h) in tree.merges.iter().zip(brute_ward(&pts)) {
            worst = worst.max((m.height - h).abs());
        }
    }
    check("ward brute force", worst < 1e-10);

    let t = start.elapsed();
    let ok = failures.is_empty() && within(t, 5);
    let detail = if failures.is_empty() {
        format!("AUC, confusion, McNemar, folds, Ward (max height err {worst:.1e}); {:.2}s", t.as_secs_f64())
    } else {
        format!("failed: {}", failures.join(", "))
    };
    verdict(ok, detail)
}

/// Merge heights `sqrt(2 ΔESS)` by exhaustive search over cluster pairs.
fn brute_ward(points: &[Vec<f64>]) -> Vec<f64> {
    let ess = |members: &[usize]| {
        let d = points[0].len();
        let n = members.len() as f64;
        let mut total = 0.0;
        for k in 0..d {
            let mean = members.iter().map(|&i| points[i][k]).sum::<f64>() / n;
            total += members.iter().map(|&i| (points[i][k] - mean).powi(2)).sum::<f64>();
        }
        total
    };
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut heights = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let union: Vec<usize> = clusters[i].iter().chain(&clusters[j]).copied().collect();
                let delta = ess(&union) - ess(&clusters[i]) - ess(&clusters[j]);
                if delta < best.0 {
                    best = (delta, i, j);
                }
            }
        }
        let moved = clusters.remove(best.2);
        clusters[best.1].extend(moved);
        heights.push((2.0 * best.0).sqrt());
    }
    heights
}

fn hash_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), digest.to_vec());
            }
        }
    }
    out
}

fn eagrs(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_eagrs"))
        .args(args)
        .env_remove("EAGRS_RUN_ROOT")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Every command of a run, read from the run's stored config.
fn replay(run: &Path, workers: &str) -> bool {
    let run = run.to_str().unwrap();
    let w = ["--workers", workers];
    let steps: [&[&str]; 7] = [
        &["pretrain", "--run", run, "--sweep-q", "0.1:0.3:0.1"],
        &["pretrain", "--run", run],
        &["relevance", "--run", run],
        &["train", "--run", run, "--ablation", "II"],
        &["train", "--run", run, "--ablation", "I"],
        &["train", "--run", run, "--ablation", "full"],
        &["analyze", "--run", run],
    ];
    steps.iter().all(|s| eagrs(&[s, &w[..]].concat()))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let syn = r#"{"rois": 8, "n_per_class": 15, "timepoints": 80, "planted_asd": [1, 5], "effect_size": 0.8, "seed": 4}"#;
    fs::write(dir.path().join("syn.json"), syn).unwrap();
    let synth = |out: &Path| {
        eagrs(&["synth", "--out", out.to_str().unwrap(), "--config", dir.path().join("syn.json").to_str().unwrap()])
    };
    if !synth(&data) {
        return verdict(false, "synth failed");
    }
    let data_hash = hash_tree(&data);

    let mut cfg = small_config(9);
    cfg.data = DataSource::Manifest {
        path: data.join("manifest.jsonl"),
    };
    cfg.sae_hidden = Some(vec![16, 6]);
    let a = dir.path().join("a");
    fs::create_dir_all(&a).unwrap();
    write_config(&cfg, &a.join("config.json"));
    if !replay(&a, "1") {
        return verdict(false, "first run failed");
    }
    let first = hash_tree(&a);

    let mut mismatches = Vec::new();
    if !replay(&a, "1") || hash_tree(&a) != first {
        mismatches.push("rerun in place");
    }
    let b = dir.path().join("b");
    fs::create_dir_all(&b).unwrap();
    fs::copy(a.join("config.json"), b.join("config.json")).unwrap();
    if !replay(&b, "4") || hash_tree(&b) != first {
        mismatches.push("fresh run with --workers 4");
    }
    let data2 = dir.path().join("data2");
    if !synth(&data2) || hash_tree(&data2) != data_hash {
        mismatches.push("synth");
    }
    verdict(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} artifacts byte-identical across reruns and --workers 1/4", first.len())
        } else {
            format!("differs: {}", mismatches.join(", "))
        },
    )
}

/// Runs one criterion; a panic inside it counts as a failure.
fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    })
}

fn report(name: &'static str, v: Verdict, results: &mut Vec<(&'static str, Verdict)>) {
    println!("[{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    results.push((name, v));
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = Vec::new();

    report("1 LRP conservation", guarded(lrp_conservation), &mut results);
    report("2 gradient fidelity", guarded(gradient_fidelity), &mut results);
    report("3 seed-map and representative-vector oracles", guarded(algorithm_oracles), &mut results);

    // Seed 0 of the ablation study is the planted-signal run itself.
    let mut seed0: Option<(Prepared, CvOutcome)> = None;
    let v = guarded(|| {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let start = Instant::now();
        let (p, full) = single.install(|| {
            let p = prepare(0);
            let full = run_case(&p, AblationCase::Full);
            (p, full)
        });
        let v = planted_recovery(&p, &full, start.elapsed());
        seed0 = Some((p, full));
        v
    });
    report("4 planted-signal recovery", v, &mut results);

    let v = guarded(|| {
        let (p, full) = seed0.take().unwrap_or_else(|| {
            let p = prepare(0);
            let full = run_case(&p, AblationCase::Full);
            (p, full)
        });
        let first = (
            full.summary().auc.0,
            run_case(&p, AblationCase::I).summary().auc.0,
            run_case(&p, AblationCase::II).summary().auc.0,
        );
        ablation_ordering(first)
    });
    report("5 ablation ordering", v, &mut results);
    report("6 masking-ratio sweep", guarded(q_sweep), &mut results);
    report("7 statistical utilities", guarded(statistical_utilities), &mut results);
    report("8 determinism", guarded(determinism), &mut results);

    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
