//! Subcommand implementations shared by the binary and the tests.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use eqgs_core::data::{predicted_matches, recover_correspondences};
use eqgs_core::geometry::{PointCloud, RigidTransform};
use eqgs_core::objective::{
    correspondence_rmse, f1_score, inlier_delta, median, rotation_error_deg, translation_error, MetricReport,
    PairEvaluation, ThresholdProfile,
};
use eqgs_core::pipeline::{EpochStats, Model, PreparedPair, Registration, Trainer};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::Config;
use crate::dataset::{generate_dataset, load_dataset, save_dataset, DatasetPair};
use crate::eqdf::attach_descriptors;
use crate::error::{CliError, Result};
use crate::ply::read_ply;

/// Writes a dataset of `count` pairs and returns one summary line per pair.
pub fn cmd_generate(config: &Config, out_dir: &Path, count: usize) -> Result<Vec<String>> {
    let g = config.generator_config()?;
    let pairs = generate_dataset(&g, config.seed, count)?;
    save_dataset(out_dir, &pairs)?;
    Ok(pairs
        .iter()
        .map(|p| {
            format!(
                "pair {:05}: src {} tar {} matches {} angle {:.3} deg translation {:.4}",
                p.id,
                p.pair.src.len(),
                p.pair.tar.len(),
                p.pair.gt_correspondences.len(),
                p.pair.gt.rotation.angle().to_degrees(),
                p.pair.gt.translation.norm()
            )
        })
        .collect())
}

/// Prepares every dataset pair for `model` in parallel.
pub fn prepare_dataset(model: &Model, pairs: &[DatasetPair]) -> Result<Vec<PreparedPair>> {
    pairs
        .par_iter()
        .map(|p| Ok(model.prepare(&p.pair.src, &p.pair.tar, Some(&p.pair.gt))?))
        .collect()
}

pub fn format_epoch(s: &EpochStats) -> String {
    format!(
        "epoch {} rot {:.6} trans {:.6} reg {:.6} total {:.6} skipped {}",
        s.epoch, s.rot, s.trans, s.reg, s.total, s.skipped
    )
}

/// Trains for `config.epochs` further epochs, starting from `resume` when
/// given, and writes the checkpoint after every epoch.
pub fn cmd_train(
    config: &Config,
    dataset: &Path,
    out: &Path,
    resume: Option<&Path>,
    mut log: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    let (config, mut model, mut trainer) = match resume {
        Some(path) => {
            let Checkpoint { config: saved, model, train } = load_checkpoint(path)?;
            if saved.model_config()? != config.model_config()? {
                return Err(CliError::Usage("model settings differ from the resumed checkpoint".into()));
            }
            let mut trainer = Trainer::new(&model, config.train_config());
            if let Some(t) = train {
                trainer.state = t.adam;
                trainer.epoch = t.epoch;
            }
            (config.clone(), model, trainer)
        }
        None => {
            let model = Model::new(config.model_config()?, config.seed)?;
            let trainer = Trainer::new(&model, config.train_config());
            (config.clone(), model, trainer)
        }
    };
    let pairs = prepare_dataset(&model, &load_dataset(dataset)?)?;
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("dataset {} is empty", dataset.display())));
    }
    save_checkpoint(out, &config, &model, Some(&trainer))?;
    let mut stats = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let s = trainer.train_epoch(&mut model, &pairs)?;
        log(&s);
        save_checkpoint(out, &config, &model, Some(&trainer))?;
        stats.push(s);
    }
    Ok(stats)
}

/// Registration of one prepared pair plus its metrics when a ground truth
/// is known.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub registration: Registration,
    pub metrics: Option<PairMetrics>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics {
    pub re_deg: f64,
    pub te: f64,
    pub delta: f64,
    pub rmse: f64,
    pub f1: f64,
    pub success: bool,
}

/// Metrics are taken in the normalized frame, with the correspondence set
/// recovered on the prepared clouds.
pub fn evaluate_prepared(model: &Model, pair: &PreparedPair, match_radius: f64, profile: &ThresholdProfile) -> Result<PairResult> {
    let t0 = Instant::now();
    let registration = model.register(pair)?;
    let seconds = t0.elapsed().as_secs_f64();
    let metrics = match &pair.gt {
        Some(gt) => {
            let (src, tar) = (pair.src.cloud.points(), pair.tar.cloud.points());
            let radius = match_radius / pair.normalization.scale;
            let omega = recover_correspondences(&pair.src.cloud, &pair.tar.cloud, gt, radius);
            let est = registration.normalized;
            let (delta, rmse) = if omega.is_empty() {
                (0.0, f64::NAN)
            } else {
                let ev = PairEvaluation {
                    src,
                    tar,
                    correspondences: &omega,
                    estimate: est,
                    ground_truth: *gt,
                };
                (inlier_delta(&ev, profile.tau)?, correspondence_rmse(&ev)?)
            };
            let predicted = predicted_matches(&registration.similarity, &registration.src_provenance, &registration.tar_provenance);
            let f1 = f1_score(&predicted, omega.len(), src, tar, gt, profile.tau)?.f1;
            Some(PairMetrics {
                re_deg: rotation_error_deg(&est, gt),
                te: translation_error(&est, gt),
                delta,
                rmse,
                f1,
                success: profile.success(&est, gt),
            })
        }
        None => None,
    };
    Ok(PairResult {
        registration,
        metrics,
        seconds,
    })
}

pub fn format_transform(label: &str, t: &RigidTransform) -> String {
    let mut s = label.to_string();
    for v in t.to_array() {
        let _ = write!(s, " {v:.16e}");
    }
    s
}

/// Comma-separated rows of the similarity matrix, each led by its 0/1
/// validity flag; invalid rows are zero.
pub fn similarity_csv(r: &Registration) -> String {
    let s = &r.similarity.values;
    let mut out = String::with_capacity(s.rows() * (s.cols() + 1) * 24);
    for i in 0..s.rows() {
        out.push(if r.similarity.row_valid[i] { '1' } else { '0' });
        for j in 0..s.cols() {
            let _ = write!(out, ",{:.16e}", s.get(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn similarity_file(id: usize) -> String {
    format!("pair_{id:05}_similarity.csv")
}

pub struct RegisterInput<'a> {
    pub checkpoint: &'a Path,
    pub src: &'a Path,
    pub tar: &'a Path,
    pub src_descriptors: Option<&'a Path>,
    pub tar_descriptors: Option<&'a Path>,
}

fn load_cloud(path: &Path, descriptors: Option<&Path>) -> Result<PointCloud> {
    let pc = read_ply(path)?;
    match descriptors {
        Some(d) => attach_descriptors(&pc, d),
        None => Ok(pc),
    }
}

/// Registers two PLY files; the second element lists the stdout lines.
pub fn cmd_register(input: &RegisterInput<'_>) -> Result<(Registration, Vec<String>)> {
    let ck = load_checkpoint(input.checkpoint)?;
    let src = load_cloud(input.src, input.src_descriptors)?;
    let tar = load_cloud(input.tar, input.tar_descriptors)?;
    let pair = ck.model.prepare(&src, &tar, None)?;
    let r = ck.model.register(&pair)?;
    let lines = vec![format_transform("normalized", &r.normalized), format_transform("raw", &r.raw)];
    Ok((r, lines))
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: MetricReport,
    /// `id, re_deg, te, delta, f1, rmse, success, registrable` per pair.
    pub per_pair: Vec<(usize, PairMetrics, bool)>,
}

/// Evaluates every pair; with `similarity_dir`, each pair's similarity
/// matrix is written there as well.
pub fn evaluate_dataset(
    model: &Model,
    pairs: &[DatasetPair],
    profile: &ThresholdProfile,
    similarity_dir: Option<&Path>,
) -> Result<EvalOutput> {
    if let Some(d) = similarity_dir {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let results: Vec<(usize, PairResult)> = pairs
        .par_iter()
        .map(|p| {
            let prepared = model.prepare(&p.pair.src, &p.pair.tar, Some(&p.pair.gt))?;
            let r = evaluate_prepared(model, &prepared, p.generator.match_radius(), profile)?;
            if let Some(d) = similarity_dir {
                let path = d.join(similarity_file(p.id));
                std::fs::write(&path, similarity_csv(&r.registration)).map_err(|e| CliError::io(path, e))?;
            }
            Ok((p.id, r))
        })
        .collect::<Result<_>>()?;
    if results.is_empty() {
        return Err(CliError::Usage("dataset is empty".into()));
    }
    let per_pair: Vec<(usize, PairMetrics, bool)> = results
        .iter()
        .map(|(id, r)| (*id, r.metrics.expect("dataset pairs carry a ground truth"), r.registration.rank.registrable))
        .collect();
    let n = per_pair.len() as f64;
    let ok: Vec<&PairMetrics> = per_pair.iter().map(|(_, m, _)| m).filter(|m| m.success).collect();
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
        if c == 0 {
            f64::NAN
        } else {
            s / c as f64
        }
    };
    let re: Vec<f64> = per_pair.iter().map(|(_, m, _)| m.re_deg).collect();
    let te: Vec<f64> = per_pair.iter().map(|(_, m, _)| m.te).collect();
    let report = MetricReport {
        re_deg: mean(&mut ok.iter().map(|m| m.re_deg)),
        te_cm: 100.0 * mean(&mut ok.iter().map(|m| m.te)),
        median_re_deg: median(&re),
        median_te: median(&te),
        rr_percent: 100.0 * ok.len() as f64 / n,
        delta_rr_percent: 100.0 * mean(&mut per_pair.iter().map(|(_, m, _)| m.delta)),
        f1_percent: 100.0 * mean(&mut per_pair.iter().map(|(_, m, _)| m.f1)),
        rmse: mean(&mut per_pair.iter().map(|(_, m, _)| m.rmse).filter(|v| v.is_finite())),
        runtime_s: mean(&mut results.iter().map(|(_, r)| r.seconds)),
    };
    Ok(EvalOutput { report, per_pair })
}

pub fn report_tsv(r: &MetricReport) -> String {
    format!(
        "re_deg\tte_cm\tmedian_re_deg\tmedian_te\trr_percent\tdelta_rr_percent\tf1_percent\trmse\truntime_s\n{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{:.6}\n",
        r.re_deg, r.te_cm, r.median_re_deg, r.median_te, r.rr_percent, r.delta_rr_percent, r.f1_percent, r.rmse, r.runtime_s
    )
}

pub fn per_pair_csv(rows: &[(usize, PairMetrics, bool)]) -> String {
    let mut s = String::from("id,re_deg,te,delta,f1,rmse,success,registrable\n");
    for (id, m, reg) in rows {
        let _ = writeln!(
            s,
            "{id},{:.9},{:.9},{:.9},{:.9},{:.9},{},{}",
            m.re_deg, m.te, m.delta, m.f1, m.rmse, m.success, reg
        );
    }
    s
}

/// Output locations of `eval`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalPaths<'a> {
    pub report: Option<&'a Path>,
    pub pairs: Option<&'a Path>,
    pub similarity_dir: Option<&'a Path>,
}

pub fn cmd_eval(checkpoint: &Path, dataset: &Path, config: &Config, paths: &EvalPaths<'_>) -> Result<EvalOutput> {
    let ck = load_checkpoint(checkpoint)?;
    let out = evaluate_dataset(&ck.model, &load_dataset(dataset)?, &config.thresholds(), paths.similarity_dir)?;
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| CliError::io(p, e));
    if let Some(p) = paths.report {
        write(p, report_tsv(&out.report))?;
    }
    if let Some(p) = paths.pairs {
        write(p, per_pair_csv(&out.per_pair))?;
    }
    Ok(out)
}

