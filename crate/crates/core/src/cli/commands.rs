use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CovariateColumn, RunConfig};
use super::{invalid, runtime, svg, AnalyzeArgs, CliError, IngestArgs, MelArgs, ModeArg, SimulateArgs, SurprisalArgs, TrainArgs};
use crate::denoiser::{init_params, load_checkpoint, save_checkpoint, train as fit_denoiser, Checkpoint};
use crate::diffusion::{ElboMode, Tensor};
use crate::dsp::{chunk_blocks, read_melc, sidecar_path, write_melc, MelClip};
use crate::io::write_atomic;
use crate::stats::{self, AnalysisReport, ComparisonRow};
use crate::surprisal::{
    batch_surprisal, check_unique, load_clip, read_manifest, read_surprisal_table, write_surprisal_table,
    ManifestEntry, SurprisalRow,
};

type CmdResult = Result<(), CliError>;

fn apply_mel(cfg: &mut RunConfig, m: &MelArgs) {
    let s = &mut cfg.mel;
    s.sample_rate = m.sample_rate.or(s.sample_rate);
    s.window_len = m.window_len.or(s.window_len);
    s.hop_len = m.hop_len.or(s.hop_len);
    s.n_mels = m.n_mels.or(s.n_mels);
    s.top_db = m.top_db.or(s.top_db);
    s.block_frames = m.block_frames.or(s.block_frames);
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let m = read_manifest(path).map_err(|e| invalid(format!("cannot read manifest {}: {e}", path.display())))?;
    check_unique(&m).map_err(|e| invalid(format!("manifest has a duplicate clip id: {e}")))?;
    Ok(m)
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn ingest(mut cfg: RunConfig, a: IngestArgs) -> CmdResult {
    apply_mel(&mut cfg, &a.mel);
    cfg.validate()?;
    let entries = manifest(&a.manifest)?;
    if let Some(bad) = entries.iter().find(|e| !safe_id(&e.clip_id)) {
        return Err(invalid(format!("clip id {:?} is not usable as a file name", bad.clip_id)));
    }
    if entries.is_empty() {
        eprintln!("warning: manifest {} lists no clips; nothing to do", a.manifest.display());
        return Ok(());
    }
    let target = |id: &str| a.out.join(format!("{id}.melc"));
    if !a.force {
        let existing: Vec<String> = entries
            .iter()
            .map(|e| target(&e.clip_id))
            .filter(|p| p.exists() || sidecar_path(p).exists())
            .map(|p| p.display().to_string())
            .collect();
        if !existing.is_empty() {
            return Err(invalid(format!(
                "refusing to overwrite {} existing file(s) without --force: {}",
                existing.len(),
                existing.join(", ")
            )));
        }
    }
    ensure_dir(&a.out)?;
    let mel = cfg.mel_config();
    let bf = cfg.block_frames();
    let results: Vec<crate::Result<MelClip>> = entries
        .par_iter()
        .map(|e| {
            let clip = load_clip(e, &mel, bf)?;
            write_melc(&target(&e.clip_id), &clip)?;
            Ok(clip)
        })
        .collect();
    let mut failed = 0;
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(clip) => {
                let blocks = clip.n_frames.div_ceil(bf);
                let padded = usize::from(clip.n_frames % bf != 0);
                println!("{} frames={} blocks={blocks} padded={padded}", e.clip_id, clip.n_frames);
            }
            Err(err) => {
                failed += 1;
                eprintln!("{} FAILED: {err}", e.clip_id);
            }
        }
    }
    if failed > 0 {
        return Err(runtime(format!("{failed} of {} clip(s) failed", entries.len())));
    }
    Ok(())
}

/// Unpadded blocks of every clip (padded ones only if nothing else exists).
fn training_blocks(clips: &[MelClip], bf: usize) -> crate::Result<Vec<Tensor>> {
    let mut full = Vec::new();
    let mut padded = Vec::new();
    for c in clips {
        for b in chunk_blocks(c, bf)? {
            if b.padded {
                padded.push(b.values);
            } else {
                full.push(b.values);
            }
        }
    }
    Ok(if full.is_empty() { padded } else { full })
}

pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    checkpoint.with_file_name(format!("{stem}.loss.csv"))
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> CmdResult {
    apply_mel(&mut cfg, &a.mel);
    cfg.train.steps = a.steps.unwrap_or(cfg.train.steps);
    cfg.train.batch_size = a.batch_size.unwrap_or(cfg.train.batch_size);
    cfg.train.learning_rate = a.learning_rate.unwrap_or(cfg.train.learning_rate);
    cfg.validate()?;

    let mut files: Vec<PathBuf> = fs::read_dir(&a.data)
        .map_err(|e| invalid(format!("cannot read data directory {}: {e}", a.data.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "melc"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(invalid(format!("no .melc files in {}", a.data.display())));
    }
    let clips: Vec<MelClip> = files
        .iter()
        .map(|p| read_melc(p).map_err(|e| runtime(format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;
    let n_mels = cfg.mel_config().n_mels;
    if let Some(c) = clips.iter().find(|c| c.n_mels != n_mels) {
        return Err(invalid(format!(
            "clip {} has {} mel bands but the model expects {n_mels}",
            c.clip_id, c.n_mels
        )));
    }
    let data = training_blocks(&clips, cfg.block_frames())?;
    let tcfg = cfg.train_config();
    let init = init_params(&cfg.architecture(), cfg.init_seed(), true)?;
    let outcome = fit_denoiser(init, &data, &tcfg)?;

    let ckpt = Checkpoint::new(outcome.params, tcfg.schedule, tcfg.steps);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_checkpoint(&a.out, &ckpt)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss"]).map_err(crate::Error::from)?;
    for (i, l) in outcome.losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()]).map_err(crate::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| runtime(e.to_string()))?;
    write_atomic(&loss_csv_path(&a.out), &bytes)?;
    match (outcome.losses.first(), outcome.losses.last()) {
        (Some(f), Some(l)) => println!(
            "trained {} steps on {} blocks: loss {f:.6} -> {l:.6}",
            tcfg.steps,
            data.len()
        ),
        _ => println!("wrote untrained checkpoint ({} blocks available)", data.len()),
    }
    Ok(())
}

pub fn surprisal(mut cfg: RunConfig, a: SurprisalArgs) -> CmdResult {
    apply_mel(&mut cfg, &a.mel);
    if let Some(m) = a.mode {
        cfg.elbo.mode = match m {
            ModeArg::Exact => ElboMode::ExactSum,
            ModeArg::Mc => ElboMode::Mc,
        };
    }
    cfg.elbo.mc_samples = a.mc_samples.unwrap_or(cfg.elbo.mc_samples);

    let ckpt = load_checkpoint(&a.checkpoint)
        .map_err(|e| invalid(format!("cannot load checkpoint {}: {e}", a.checkpoint.display())))?;
    let arch = ckpt.header.arch.clone();
    let (h, w) = match arch.input_shape().as_slice() {
        [h, w] => (*h, *w),
        other => return Err(invalid(format!("checkpoint input shape {other:?} is not a spectrogram block"))),
    };
    // Unset block geometry follows the checkpoint.
    cfg.mel.n_mels.get_or_insert(h);
    cfg.mel.block_frames.get_or_insert(w);
    if let Some(s) = cfg.schedule {
        if s != ckpt.header.schedule {
            return Err(invalid(format!(
                "configured schedule {s:?} differs from the checkpoint's {:?}",
                ckpt.header.schedule
            )));
        }
    }
    cfg.schedule = Some(ckpt.header.schedule);
    if cfg.model.is_some() && cfg.architecture() != arch {
        return Err(invalid(format!(
            "configured model {:?} differs from the checkpoint's {arch:?}",
            cfg.architecture()
        )));
    }
    if (cfg.mel_config().n_mels, cfg.block_frames()) != (h, w) {
        return Err(invalid(format!(
            "mel bands × block frames {}×{} do not match the checkpoint's {h}×{w}",
            cfg.mel_config().n_mels,
            cfg.block_frames()
        )));
    }
    cfg.validate()?;
    let entries = manifest(&a.manifest)?;
    let settings = cfg.elbo_settings();
    let model_id = a
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());

    let mut rows: Vec<SurprisalRow> = Vec::new();
    if a.out.exists() {
        if a.resume {
            rows = read_surprisal_table(&a.out)
                .map_err(|e| invalid(format!("cannot resume from {}: {e}", a.out.display())))?;
            if let Some(r) = rows.iter().find(|r| r.model_id != model_id || r.seed != settings.seed) {
                return Err(invalid(format!(
                    "existing row for {} came from model {} with seed {}; cannot resume",
                    r.clip_id, r.model_id, r.seed
                )));
            }
        } else if !a.force {
            return Err(invalid(format!(
                "{} exists; pass --resume to continue it or --force to replace it",
                a.out.display()
            )));
        }
    }
    let done: BTreeSet<String> = rows.iter().map(|r| r.clip_id.clone()).collect();
    let todo: Vec<ManifestEntry> = entries.iter().filter(|e| !done.contains(&e.clip_id)).cloned().collect();
    if !done.is_empty() {
        println!("resuming: {} clip(s) already scored, {} to go", entries.len() - todo.len(), todo.len());
    }
    if entries.is_empty() {
        eprintln!("warning: manifest {} lists no clips", a.manifest.display());
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    if let Some(dir) = &a.details {
        if let Some(bad) = entries.iter().find(|e| !safe_id(&e.clip_id)) {
            return Err(invalid(format!("clip id {:?} is not usable as a file name", bad.clip_id)));
        }
        ensure_dir(dir)?;
    }
    let sched = ckpt.header.schedule.build()?;
    let mel = cfg.mel_config();
    let bf = cfg.block_frames();
    let chunk = 2 * rayon::current_num_threads().max(1);
    let mut failures = Vec::new();
    // Write after every chunk so an interrupted run can be resumed.
    for part in todo.chunks(chunk) {
        let out = batch_surprisal(
            part,
            |e| load_clip(e, &mel, bf),
            &ckpt.params,
            &sched,
            &settings,
            &model_id,
            &BTreeSet::new(),
        )?;
        for r in &out.records {
            println!(
                "{} blocks={} padded={} total={:.4} normalized={:.4}",
                r.clip_id, r.n_blocks, r.padded_blocks, r.total, r.normalized
            );
            rows.push(r.row());
            if let Some(dir) = &a.details {
                let mut json = serde_json::to_vec_pretty(r).map_err(crate::Error::from)?;
                json.push(b'\n');
                write_atomic(&dir.join(format!("{}.json", r.clip_id)), &json)?;
            }
        }
        failures.extend(out.failures);
        write_surprisal_table(&a.out, &rows)?;
    }
    if todo.is_empty() {
        write_surprisal_table(&a.out, &rows)?;
    }
    for (id, why) in &failures {
        eprintln!("{id} FAILED: {why}");
    }
    if !failures.is_empty() {
        return Err(runtime(format!("{} of {} clip(s) failed", failures.len(), entries.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    covariate: CovariateColumn,
    alpha: f64,
    n_ratings: usize,
    n_clips: usize,
    #[serde(flatten)]
    report: &'a AnalysisReport,
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> CmdResult {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(crate::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| runtime(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn analyze(mut cfg: RunConfig, a: AnalyzeArgs) -> CmdResult {
    cfg.analysis.alpha = a.alpha.unwrap_or(cfg.analysis.alpha);
    cfg.analysis.covariate = a.covariate.unwrap_or(cfg.analysis.covariate);
    cfg.validate()?;
    let ratings = stats::read_ratings(&a.ratings).map_err(|e| runtime(format!("{}: {e}", a.ratings.display())))?;
    let table = read_surprisal_table(&a.surprisal).map_err(|e| runtime(format!("{}: {e}", a.surprisal.display())))?;
    let mut cov = BTreeMap::new();
    for r in &table {
        let v = match cfg.analysis.covariate {
            CovariateColumn::Normalized => r.normalized_nats,
            CovariateColumn::Total => r.total_nats,
        };
        if cov.insert(r.clip_id.clone(), v).is_some() {
            return Err(runtime(format!("surprisal table lists {} twice", r.clip_id)));
        }
    }
    let ratings = match &a.baseline {
        Some(p) => {
            let b = stats::read_covariate(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            ratings.with_baseline(b)?
        }
        None => ratings,
    };
    let report = stats::run_analysis(&ratings, &cov, cfg.analysis.alpha).map_err(|e| runtime(e.to_string()))?;

    ensure_dir(&a.out)?;
    let out = AnalyzeOutput {
        covariate: cfg.analysis.covariate,
        alpha: cfg.analysis.alpha,
        n_ratings: ratings.rows().len(),
        n_clips: ratings.clip_ids().len(),
        report: &report,
    };
    let mut json = serde_json::to_vec_pretty(&out).map_err(crate::Error::from)?;
    json.push(b'\n');
    write_atomic(&a.out.join("report.json"), &json)?;

    let comparison = match &report.comparison {
        Some(c) => c.clone(),
        None => {
            let f = &report.fit;
            vec![ComparisonRow {
                model: "diffusion".into(),
                r2: f.r2,
                loglik: f.loglik,
                aic: f.aic,
                bic: f.bic,
                best_r2: true,
                best_loglik: true,
                best_aic: true,
                best_bic: true,
            }]
        }
    };
    write_csv(&a.out.join("comparison.csv"), &comparison)?;

    #[derive(Serialize)]
    struct CurveRow {
        s: f64,
        y_hat: f64,
    }
    let curve: Vec<CurveRow> = svg::curve(&report.fit, &report.points)
        .into_iter()
        .map(|(s, y_hat)| CurveRow { s, y_hat })
        .collect();
    write_csv(&a.out.join("curve.csv"), &curve)?;
    let label = match cfg.analysis.covariate {
        CovariateColumn::Normalized => "surprisal per block (nats)",
        CovariateColumn::Total => "total surprisal (nats)",
    };
    write_atomic(&a.out.join("plot.svg"), svg::render(&report.fit, &report.points, label).as_bytes())?;

    let v = &report.verdict;
    println!(
        "verdict: {} (c2 = {:.4}, p = {:.3e}, r2 = {:.4}, n = {})",
        serde_json::to_value(v.verdict).map_err(crate::Error::from)?.as_str().unwrap_or("?"),
        v.quadratic_coeff,
        v.quadratic_p,
        report.fit.r2,
        report.fit.n
    );
    if let Some(s) = v.vertex_s {
        println!("peak liking at s = {s:.4}");
    }
    Ok(())
}

pub fn simulate(mut cfg: RunConfig, a: SimulateArgs) -> CmdResult {
    let s = &mut cfg.simulate;
    s.coeffs = [
        a.c0.unwrap_or(s.coeffs[0]),
        a.c1.unwrap_or(s.coeffs[1]),
        a.c2.unwrap_or(s.coeffs[2]),
    ];
    s.sigma_b = a.sigma_b.unwrap_or(s.sigma_b);
    s.sigma_e = a.sigma_e.unwrap_or(s.sigma_e);
    s.n_subjects = a.subjects.unwrap_or(s.n_subjects);
    s.n_clips = a.clips.unwrap_or(s.n_clips);
    cfg.validate()?;
    let ratings_path = a.out.join("ratings.csv");
    let surprisal_path = a.out.join("surprisal.csv");
    if !a.force && (ratings_path.exists() || surprisal_path.exists()) {
        return Err(invalid(format!("{} already holds a study; pass --force", a.out.display())));
    }
    let study = stats::simulate_study(&cfg.simulation())?;
    ensure_dir(&a.out)?;
    stats::write_ratings(&ratings_path, &study.table)?;
    let rows: Vec<SurprisalRow> = study
        .surprisal
        .iter()
        .map(|(clip_id, s)| SurprisalRow {
            clip_id: clip_id.clone(),
            n_blocks: 1,
            total_nats: *s,
            normalized_nats: *s,
            padded_blocks: 0,
            model_id: "simulated".into(),
            seed: cfg.seed,
        })
        .collect();
    write_surprisal_table(&surprisal_path, &rows)?;
    println!(
        "wrote {} ratings from {} subjects over {} clips",
        study.table.rows().len(),
        cfg.simulate.n_subjects,
        cfg.simulate.n_clips
    );
    Ok(())
}
