use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{mcnemar, selection_ratio, sr_bands, ward_cluster};
use crate::fcdata::{save_dataset, SyntheticConfig};
use crate::lrp::save_relevance;
use crate::roiselect::{read_rep_vectors_csv, write_rep_vectors_csv, AblationCase};
use crate::sae::{EpochLog, SaeModel};

use super::pipeline::{build_features, compute_relevance, cross_validate, load_subjects, pretrain_sae, sweep_q, CvOutcome};
use super::{RunConfig, RunDir};

/// Command-line settings layered over the stored or supplied config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub q: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub folds: Option<usize>,
    pub ablation: Option<AblationCase>,
}

/// Picks `--config`, else the run's stored config, else the defaults; applies
/// overrides and stores the result canonically.
fn prepare(run: &RunDir, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &ov.config {
        Some(path) => RunConfig::load(path)?,
        None if run.config().is_file() => RunConfig::load(&run.config())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(q) = ov.q {
        cfg.step1.q = q;
    }
    if let Some(alpha) = ov.alpha {
        cfg.step1.alpha = alpha;
    }
    if let Some(tau) = ov.tau {
        cfg.step3.temperature = tau;
    }
    if let Some(k) = ov.folds {
        cfg.folds = k;
    }
    if let Some(case) = ov.ablation {
        cfg.ablation = case;
    }
    cfg.normalize();
    cfg.validate()?;
    run.create()?;
    let text = cfg.to_canonical_json();
    if fs::read_to_string(run.config()).ok().as_deref() != Some(text.as_str()) {
        fs::write(run.config(), text)?;
    }
    Ok(cfg)
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_epoch_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    write_lines(
        path,
        "level,epoch,rec_loss_x,rec_loss_h,objective",
        logs.iter()
            .map(|l| format!("{},{},{},{},{}", l.level, l.epoch, l.rec_loss_x, l.rec_loss_h, l.objective)),
    )
}

/// Parses `a:b:step` into the inclusive grid `a, a+step, …, b`.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("--sweep-q expects a:b:step, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [a, b, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || !(b >= a) {
        return Err(bad());
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| ((a + k as f64 * step) * 1e10).round() / 1e10).collect())
}

pub fn cmd_synth(out: &Path, cfg: &SyntheticConfig) -> Result<String> {
    let subjects = crate::fcdata::generate_cohort(cfg)?;
    fs::create_dir_all(out)?;
    let manifest = out.join("manifest.jsonl");
    save_dataset(&subjects, &manifest)?;
    fs::write(out.join("synthetic.json"), serde_json::to_string_pretty(cfg).expect("serialises") + "\n")?;
    Ok(format!("wrote {} subjects to {}\n", subjects.len(), manifest.display()))
}

pub fn cmd_pretrain(run: &RunDir, ov: &Overrides, sweep: Option<&[f64]>) -> Result<String> {
    let cfg = prepare(run, ov)?;
    let subjects = load_subjects(&cfg)?;
    let mut out = String::new();
    match sweep {
        None => {
            let (sae, logs) = pretrain_sae(&cfg, &subjects)?;
            sae.save(&run.checkpoint())?;
            write_epoch_log(&run.pretrain_log(), &logs)?;
            let last = logs.last().map_or(f64::NAN, |l| l.objective);
            writeln!(out, "pretrained {} levels on {} subjects; final objective {last:.6}", sae.levels(), subjects.len())
                .ok();
            writeln!(out, "checkpoint: {}", run.checkpoint().display()).ok();
        }
        Some(qs) => {
            for &q in qs {
                if !(0.0..1.0).contains(&q) {
                    return Err(Error::InvalidRatio(q));
                }
            }
            let results = sweep_q(&cfg, &subjects, qs)?;
            let mut rows = Vec::new();
            writeln!(out, "{:>6} {:>14} {:>14} {:>14}", "q", "objective", "masked_mse", "zero_mse").ok();
            for (sae, row) in &results {
                sae.save(&run.sweep_checkpoint(row.q))?;
                rows.push(format!("{},{},{},{}", row.q, row.final_objective, row.masked_mse, row.zero_mse));
                writeln!(
                    out,
                    "{:>6.2} {:>14.6} {:>14.6} {:>14.6}",
                    row.q, row.final_objective, row.masked_mse, row.zero_mse
                )
                .ok();
            }
            write_lines(&run.sweep_summary(), "q,final_objective,masked_mse,zero_mse", rows)?;
            writeln!(out, "summary: {}", run.sweep_summary().display()).ok();
        }
    }
    Ok(out)
}

fn load_checkpoint(run: &RunDir) -> Result<SaeModel> {
    let path = run.checkpoint();
    if !path.is_file() {
        return Err(Error::MissingArtifact(format!("{} (run `pretrain` first)", path.display())));
    }
    SaeModel::load(&path)
}

pub fn cmd_relevance(run: &RunDir, ov: &Overrides) -> Result<String> {
    let cfg = prepare(run, ov)?;
    let subjects = load_subjects(&cfg)?;
    let sae = load_checkpoint(run)?;
    let (tensors, reps) = compute_relevance(&cfg, &sae, &subjects)?;
    save_relevance(&run.relevance(), &tensors)?;
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    write_rep_vectors_csv(&run.rep_vectors(), &ids, &reps)?;
    Ok(format!(
        "relevance for {} subjects ({} ROIs): {}\nrepresentative vectors: {}\n",
        tensors.len(),
        sae.rois(),
        run.relevance().display(),
        run.rep_vectors().display()
    ))
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub label: u8,
    pub fold: usize,
    pub score: f64,
    pub pred: u8,
    pub selection: Option<Vec<u8>>,
}

fn write_predictions(path: &Path, ids: &[String], labels: &[u8], cv: &CvOutcome) -> Result<()> {
    let r = cv.predictions.iter().find_map(|p| p.selection.as_ref().map(Vec::len));
    let mut header = "id,label,fold,score,pred".to_string();
    for k in 0..r.unwrap_or(0) {
        write!(header, ",sel_{k}").ok();
    }
    let rows = cv.predictions.iter().enumerate().map(|(i, p)| {
        let mut row = format!("{},{},{},{},{}", ids[i], labels[i], p.fold, p.score, p.pred);
        for s in p.selection.iter().flatten() {
            write!(row, ",{s}").ok();
        }
        row
    });
    write_lines(path, &header, rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(format!("{} (run `train` first)", path.display())));
    }
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(1, e.to_string()))?;
    let width = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.len();
    if width < 5 {
        return Err(parse_err(1, format!("expected at least 5 columns, found {width}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> { field(k).parse().map_err(|_| parse_err(line, format!("bad number in column {}", k + 1))) };
        let flag = |k: usize| -> Result<u8> {
            match field(k) {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(parse_err(line, format!("expected 0 or 1 in column {}, found `{other}`", k + 1))),
            }
        };
        let selection = if width > 5 {
            Some((5..width).map(flag).collect::<Result<Vec<u8>>>()?)
        } else {
            None
        };
        rows.push(PredictionRow {
            id: field(0).to_string(),
            label: flag(1)?,
            fold: num(2)? as usize,
            score: num(3)?,
            pred: flag(4)?,
            selection,
        });
    }
    Ok(rows)
}

/// Baseline predictions from a run directory (its stored ablation case) or a predictions CSV.
fn baseline_predictions(path: &Path) -> Result<(PathBuf, Vec<PredictionRow>)> {
    let file = if path.is_dir() {
        let other = RunDir::resolve(None, path);
        let cfg = RunConfig::load(&other.config())
            .map_err(|_| Error::MissingArtifact(format!("{} has no config.json", path.display())))?;
        other.predictions(cfg.ablation)
    } else {
        path.to_path_buf()
    };
    let rows = read_predictions(&file)?;
    Ok((file, rows))
}

pub fn cmd_train(run: &RunDir, ov: &Overrides, mcnemar_vs: Option<&Path>) -> Result<String> {
    let cfg = prepare(run, ov)?;
    let case = cfg.ablation;
    let subjects = load_subjects(&cfg)?;
    let sae = if case.uses_svm() {
        None
    } else {
        let sae = load_checkpoint(run)?;
        let r = subjects.first().map_or(0, |s| s.rois());
        if sae.rois() != r {
            return Err(Error::RoiMismatch {
                checkpoint: sae.rois(),
                data: r,
            });
        }
        Some(sae)
    };
    let reps = if case == AblationCase::I {
        None
    } else {
        if !run.rep_vectors().is_file() {
            return Err(Error::MissingArtifact(format!(
                "{} (run `relevance` first)",
                run.rep_vectors().display()
            )));
        }
        Some(read_rep_vectors_csv(&run.rep_vectors())?)
    };
    let data = build_features(&subjects, reps.as_ref().map(|(i, r)| (i.as_slice(), r.as_slice())))?;
    let cv = cross_validate(&cfg, case, sae.as_ref(), &data)?;

    write_lines(
        &run.folds(),
        "id,label,fold",
        (0..data.len()).map(|i| format!("{},{},{}", data.ids[i], data.labels[i], cv.plan.assignments[i])),
    )?;
    for f in &cv.folds {
        write_lines(
            &run.train_log(case, f.fold),
            "epoch,train_loss,val_loss",
            f.log.iter().map(|l| format!("{},{},{}", l.epoch, l.train_loss, l.val_loss)),
        )?;
    }
    let summary = cv.summary();
    let mut rows: Vec<String> = cv
        .folds
        .iter()
        .map(|f| format!("{},{},{},{},{},{}", f.fold, f.auc, f.acc, f.sen, f.spec, f.best_epoch))
        .collect();
    rows.push(format!("mean,{},{},{},{},", summary.auc.0, summary.acc.0, summary.sen.0, summary.spec.0));
    rows.push(format!("std,{},{},{},{},", summary.auc.1, summary.acc.1, summary.sen.1, summary.spec.1));
    write_lines(&run.metrics(case), "fold,auc,acc,sen,spec,best_epoch", rows)?;
    write_predictions(&run.predictions(case), &data.ids, &data.labels, &cv)?;

    let mut out = String::new();
    writeln!(out, "case {case}, {}-fold cross-validation on {} subjects", cfg.folds, data.len()).ok();
    writeln!(out, "{:>5} {:>7} {:>7} {:>7} {:>7}", "fold", "AUC", "ACC", "SEN", "SPEC").ok();
    for f in &cv.folds {
        writeln!(out, "{:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4}", f.fold, f.auc, f.acc, f.sen, f.spec).ok();
    }
    let ms = |(m, s): (f64, f64)| format!("{m:.4}±{s:.4}");
    writeln!(
        out,
        "mean  AUC {}  ACC {}  SEN {}  SPEC {}",
        ms(summary.auc),
        ms(summary.acc),
        ms(summary.sen),
        ms(summary.spec)
    )
    .ok();

    if let Some(other) = mcnemar_vs {
        let (file, baseline) = baseline_predictions(other)?;
        let mut theirs = Vec::with_capacity(data.len());
        for id in &data.ids {
            let row = baseline
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::MissingArtifact(format!("subject {id} absent from {}", file.display())))?;
            theirs.push(row.pred);
        }
        let test = mcnemar(&cv.preds(), &theirs, &data.labels)?;
        let json = serde_json::json!({
            "case": case.as_str(),
            "baseline": file.display().to_string(),
            "b": test.b,
            "c": test.c,
            "chi2": test.chi2,
            "p": test.p,
        });
        fs::write(run.mcnemar(case), serde_json::to_string_pretty(&json).expect("serialises") + "\n")?;
        writeln!(
            out,
            "McNemar vs {}: b={} c={} chi2={:.4} p={:.4}",
            file.display(),
            test.b,
            test.c,
            test.chi2,
            test.p
        )
        .ok();
    }
    Ok(out)
}

pub fn cmd_analyze(run: &RunDir, ov: &Overrides) -> Result<String> {
    let cfg = prepare(run, ov)?;
    let case = cfg.ablation;
    let rows = read_predictions(&run.predictions(case))?;
    let selections: Vec<Vec<u8>> = rows
        .iter()
        .map(|r| r.selection.clone())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::MissingArtifact(format!("case {case} predictions carry no ROI selections")))?;
    let asd: Vec<bool> = rows.iter().map(|r| r.label == 1).collect();
    let td: Vec<bool> = asd.iter().map(|a| !a).collect();
    let sr_asd = selection_ratio(&selections, &asd)?;
    let sr_td = selection_ratio(&selections, &td)?;
    let (moderate, high) = sr_bands(&sr_asd);
    write_lines(
        &run.selection_ratios(case),
        "roi,sr_asd,sr_td,band",
        (0..sr_asd.len()).map(|r| {
            let band = if high.contains(&r) {
                "high"
            } else if moderate.contains(&r) {
                "moderate"
            } else {
                ""
            };
            format!("{r},{},{},{band}", sr_asd[r], sr_td[r])
        }),
    )?;

    let members: Vec<usize> = (0..rows.len()).filter(|&i| asd[i]).collect();
    let points: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| selections[i].iter().map(|&s| f64::from(s)).collect())
        .collect();
    let tree = ward_cluster(&points)?;
    let labels = match cfg.analysis.clusters {
        Some(k) => tree.cut_count(k)?,
        None => tree.cut_height(cfg.analysis.cut_height),
    };
    fs::write(run.dendrogram(case), tree.to_json() + "\n")?;
    write_lines(
        &run.subtypes(case),
        "id,cluster",
        members.iter().zip(&labels).map(|(&i, c)| format!("{},{c}", rows[i].id)),
    )?;

    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let list = |v: &[usize]| v.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    writeln!(out, "case {case}: {} ASD and {} TD subjects", members.len(), rows.len() - members.len()).ok();
    writeln!(out, "ASD SR > 0.75:        {}", list(&high)).ok();
    writeln!(out, "ASD 0.5 < SR <= 0.75: {}", list(&moderate)).ok();
    for c in 0..n_clusters {
        let size = labels.iter().filter(|&&l| l == c).count();
        writeln!(out, "subtype {c}: {size} subjects").ok();
    }
    Ok(out)
}
