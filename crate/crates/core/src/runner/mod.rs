//! Orchestration behind the CLI: dataset generation, training, observer
//! runs and reports. Every verb reads and writes one run directory.

mod config;
mod manifest;

pub use config::{
    load_config, parse_plan, DatasetSizes, DepthChoice, ExperimentPlan, ObserverKind, Scale,
};
pub use manifest::{file_sha256, Manifest};

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    alroc, auc, compare_systems, empirical_lroc, empirical_roc, read_report_csv, write_curve_csv,
    write_report_csv, BootstrapConfig, Ranking, ReportRow, SystemFoms,
};
use crate::grid::ImageGrid;
use crate::imaging::{
    compose_measurement, read_dataset, sample_background, DatasetReader, DatasetWriter, NoiseModel,
};
use crate::neuralnet::{
    cnn_io_statistics, load_checkpoint, save_checkpoint, select_depth, train, write_training_log,
    Architecture, LogEntry, NetworkState, TrainingSet, ALLOWED_DEPTHS,
};
use crate::observers::{
    build_hotelling_diagonal, scanning_ho_statistics, write_records_csv, AnalyticLaplacianObserver,
    McmcIoObserver, ObserverRecord,
};
use crate::rng::{derive_seed, item_stream, stream};
use crate::task::{ObjectModel, TaskConfig, TaskKind};

pub const MANIFEST: &str = "manifest.txt";
pub const TRAIN_STORE: &str = "train_backgrounds.lrds";
pub const VAL_SET: &str = "val.lrds";
pub const TEST_SET: &str = "test.lrds";
pub const BEST_CHECKPOINT: &str = "cnn_best.ckpt";
pub const LAST_CHECKPOINT: &str = "cnn_last.ckpt";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const REPORT: &str = "report.csv";
pub const RANKING: &str = "ranking.txt";

/// Images generated in parallel before being written in order.
const GENERATION_CHUNK: usize = 256;

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    Ok(())
}

fn image_hash(img: &ImageGrid) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in img.pixels() {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

/// Writes `count` images produced by `make(i) -> (label, image, background hash)`
/// and returns the background hashes in order.
fn write_split<F>(path: &Path, count: usize, task: &TaskConfig, make: F) -> Result<Vec<[u8; 32]>>
where
    F: Fn(usize) -> Result<(usize, ImageGrid, [u8; 32])> + Sync,
{
    let j = task.location_count()?;
    let mut writer = DatasetWriter::create(path, count as u64, task.width, task.height, j)?;
    let mut hashes = Vec::with_capacity(count);
    for start in (0..count).step_by(GENERATION_CHUNK) {
        let end = (start + GENERATION_CHUNK).min(count);
        let chunk: Result<Vec<_>> = (start..end).into_par_iter().map(&make).collect();
        for (label, img, hash) in chunk? {
            writer.push(label, &img)?;
            hashes.push(hash);
        }
    }
    writer.finish()?;
    Ok(hashes)
}

fn noisy_split(
    path: &Path,
    plan: &ExperimentPlan,
    purpose: &'static str,
    per_class: usize,
    signals: &[ImageGrid],
) -> Result<Vec<[u8; 32]>> {
    let classes = signals.len() + 1;
    write_split(path, per_class * classes, &plan.task, |i| {
        let mut rng = item_stream(plan.seed, purpose, i as u64);
        let label = i % classes;
        let b = sample_background(&plan.task, &mut rng)?;
        let g = compose_measurement(&plan.task, &b, signals, label, &mut rng)?;
        Ok((label, g, image_hash(&b)))
    })
}

/// Writes the noiseless training store, the noisy validation and test sets,
/// and the manifest.
pub fn generate_dataset(plan: &ExperimentPlan, dir: &Path, force: bool) -> Result<Manifest> {
    plan.validate()?;
    std::fs::create_dir_all(dir)?;
    for name in [MANIFEST, TRAIN_STORE, VAL_SET, TEST_SET] {
        guard(&dir.join(name), force)?;
    }
    let task = &plan.task;
    let signals = task.signal_images()?;
    let train_hashes = write_split(&dir.join(TRAIN_STORE), plan.sizes.train_backgrounds, task, |i| {
        let mut rng = item_stream(plan.seed, "train-background", i as u64);
        let b = sample_background(task, &mut rng)?;
        let h = image_hash(&b);
        Ok((0, b, h))
    })?;
    let val_hashes = noisy_split(&dir.join(VAL_SET), plan, "val", plan.sizes.val_per_class, &signals)?;
    let test_hashes = noisy_split(&dir.join(TEST_SET), plan, "test", plan.sizes.test_per_class, &signals)?;

    let overlap = if matches!(task.object, ObjectModel::None) {
        "not applicable (known background)".to_string()
    } else {
        let train: HashSet<_> = train_hashes.iter().collect();
        let val: HashSet<_> = val_hashes.iter().collect();
        let shared = test_hashes
            .iter()
            .filter(|h| train.contains(h) || val.contains(h))
            .count()
            + val_hashes.iter().filter(|h| train.contains(h)).count();
        if shared > 0 {
            return Err(Error::Config {
                key: "data".into(),
                reason: format!("{shared} noiseless backgrounds appear in more than one split"),
            });
        }
        "0".to_string()
    };
    let digest = |hashes: &[[u8; 32]]| {
        let mut h = Sha256::new();
        for x in hashes {
            h.update(x);
        }
        hex::encode(h.finalize())
    };

    let mut m = Manifest::new();
    m.set("format", "lrocsim-manifest 1");
    m.set("task", &task.name);
    m.set("system", &plan.system);
    m.set("seed", plan.seed);
    m.set("width", task.width);
    m.set("height", task.height);
    m.set("locations", signals.len());
    m.set("train_backgrounds.count", plan.sizes.train_backgrounds);
    m.set("train_backgrounds.stream", "train-background");
    m.set("train_backgrounds.sha256", file_sha256(&dir.join(TRAIN_STORE))?);
    m.set("train_backgrounds.content_sha256", digest(&train_hashes));
    for (name, file, per_class, hashes) in [
        ("val", VAL_SET, plan.sizes.val_per_class, &val_hashes),
        ("test", TEST_SET, plan.sizes.test_per_class, &test_hashes),
    ] {
        m.set(format!("{name}.per_class"), per_class);
        m.set(format!("{name}.count"), per_class * (signals.len() + 1));
        m.set(format!("{name}.stream"), name);
        m.set(format!("{name}.sha256"), file_sha256(&dir.join(file))?);
        m.set(format!("{name}.background_sha256"), digest(hashes));
    }
    m.set("split_overlap", overlap);
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    m.set("created_unix", now);
    m.save(&dir.join(MANIFEST))?;
    Ok(m)
}

fn load_split(dir: &Path, name: &str, task: &TaskConfig) -> Result<Vec<(ImageGrid, usize)>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run `generate` first)", path.display())));
    }
    let ds = read_dataset(&path)?;
    if ds.width != task.width || ds.height != task.height || ds.locations != task.location_count()? {
        return Err(Error::Format {
            path,
            reason: format!(
                "dataset is {}x{} with J={}, plan expects {}x{} with J={}",
                ds.width,
                ds.height,
                ds.locations,
                task.width,
                task.height,
                task.location_count()?
            ),
        });
    }
    Ok(ds.records.into_iter().map(|(y, g)| (g, y)).collect())
}

fn load_backgrounds(dir: &Path, task: &TaskConfig, limit: usize) -> Result<Vec<ImageGrid>> {
    let path = dir.join(TRAIN_STORE);
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run `generate` first)", path.display())));
    }
    let mut reader = DatasetReader::open(&path)?;
    if reader.width != task.width || reader.height != task.height {
        return Err(Error::Format {
            path,
            reason: "training store does not match the plan's grid".into(),
        });
    }
    let mut out = Vec::new();
    while out.len() < limit {
        match reader.next_record()? {
            Some((_, img)) => out.push(img),
            None => break,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub conv_layers: usize,
    pub best_val_loss: f64,
    pub steps: u64,
    /// (depth, best validation loss) for each depth trained.
    pub depths: Vec<(usize, f64)>,
}

fn read_training_log(path: &Path, up_to: u64) -> Result<Vec<LogEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", n + 1),
            })
        };
        if f.len() != 3 {
            continue;
        }
        let entry = LogEntry {
            step: parse(f[0])? as u64,
            train_loss: parse(f[1])?,
            val_loss: parse(f[2])?,
        };
        if entry.step <= up_to {
            out.push(entry);
        }
    }
    Ok(out)
}

/// Trains one depth, checkpointing at every validation. Returns the best
/// validation loss.
fn train_depth(
    plan: &ExperimentPlan,
    data: &TrainingSet,
    validation: &[(ImageGrid, usize)],
    depth: usize,
    files: (&Path, &Path, &Path),
    resume: bool,
) -> Result<(f64, u64)> {
    let (best_path, last_path, log_path) = files;
    let task = &plan.task;
    let mut arch = Architecture::new(depth, task.width, task.height, task.location_count()?);
    arch.filters = plan.filters;
    let (state, best, mut log) = if resume && last_path.exists() {
        let last = load_checkpoint(last_path)?;
        if last.state.arch != arch {
            return Err(Error::Format {
                path: last_path.to_path_buf(),
                reason: "checkpoint architecture does not match the plan".into(),
            });
        }
        let best = load_checkpoint(best_path)?;
        let best_loss = best
            .val_loss
            .ok_or_else(|| Error::Missing("validation loss in best checkpoint".into()))?;
        let log = read_training_log(log_path, last.state.step)?;
        (last.state, Some((best.state, best_loss)), log)
    } else {
        let mut state = NetworkState::<f32>::init(arch, &mut stream(plan.seed, &format!("init-depth-{depth}")))?;
        let (mean, std) = data.normalization(50, derive_seed(plan.seed, "normalization"))?;
        state.set_normalization(mean, std)?;
        (state, None, Vec::new())
    };
    let mut hook = |entry: &LogEntry, state: &NetworkState<f32>, improved: bool| -> Result<()> {
        if improved {
            save_checkpoint(best_path, state, Some(entry.val_loss), false)?;
        }
        save_checkpoint(last_path, state, Some(entry.val_loss), true)?;
        log.push(*entry);
        let mut f = BufWriter::new(File::create(log_path)?);
        write_training_log(&mut f, &log)?;
        f.flush()?;
        eprintln!(
            "depth {depth} step {}: train {:.4} val {:.4}{}",
            entry.step,
            entry.train_loss,
            entry.val_loss,
            if improved { " *" } else { "" }
        );
        Ok(())
    };
    let outcome = train(state, best, data, validation, &plan.schedule, &mut hook)?;
    if !best_path.exists() {
        save_checkpoint(best_path, &outcome.best, Some(outcome.best_val_loss), false)?;
    }
    Ok((outcome.best_val_loss, outcome.last.step))
}

/// Trains the plan's CNN (fixed depth or depth search) from the stored
/// training set, writing the best checkpoint, a resumable last checkpoint
/// and the training log.
pub fn run_training(plan: &ExperimentPlan, dir: &Path, force: bool, resume: bool) -> Result<TrainingSummary> {
    plan.validate()?;
    if !resume {
        for name in [BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG] {
            guard(&dir.join(name), force)?;
        }
    }
    let task = &plan.task;
    let backgrounds = load_backgrounds(dir, task, usize::MAX)?;
    let data = TrainingSet::new(task.clone(), backgrounds)?;
    let validation = load_split(dir, VAL_SET, task)?;
    match plan.depth {
        DepthChoice::Fixed(d) => {
            let (loss, steps) = train_depth(
                plan,
                &data,
                &validation,
                d,
                (&dir.join(BEST_CHECKPOINT), &dir.join(LAST_CHECKPOINT), &dir.join(TRAINING_LOG)),
                resume,
            )?;
            Ok(TrainingSummary {
                conv_layers: d,
                best_val_loss: loss,
                steps,
                depths: vec![(d, loss)],
            })
        }
        DepthChoice::Select => {
            let family: Vec<Architecture> = ALLOWED_DEPTHS
                .iter()
                .map(|&d| Architecture::new(d, task.width, task.height, data.classes() - 1))
                .collect();
            let depth_files = |d: usize| {
                (
                    dir.join(format!("cnn_depth{d}_best.ckpt")),
                    dir.join(format!("cnn_depth{d}_last.ckpt")),
                    dir.join(format!("training_log_depth{d}.csv")),
                )
            };
            let selection = select_depth(&family, |arch| {
                let (b, l, g) = depth_files(arch.conv_layers);
                train_depth(plan, &data, &validation, arch.conv_layers, (&b, &l, &g), resume)
            })?;
            let d = selection.chosen.conv_layers;
            let (b, _, g) = depth_files(d);
            std::fs::copy(&b, dir.join(BEST_CHECKPOINT))?;
            std::fs::copy(&g, dir.join(TRAINING_LOG))?;
            Ok(TrainingSummary {
                conv_layers: d,
                best_val_loss: selection
                    .trained
                    .iter()
                    .find(|(depth, _)| *depth == d)
                    .map(|x| x.1)
                    .unwrap_or(f64::NAN),
                steps: selection.chosen_result,
                depths: selection.trained,
            })
        }
    }
}

/// Per-pixel noise variance for the Hotelling covariance, averaged over the
/// background ensemble where the noise depends on the mean image.
fn noise_variance(task: &TaskConfig, backgrounds: &[ImageGrid]) -> Vec<f64> {
    let m = task.pixel_count();
    match task.noise {
        NoiseModel::PoissonGaussian { sigma } => {
            let mut mean = vec![0.0; m];
            let n = backgrounds.len().max(1) as f64;
            for b in backgrounds {
                for (acc, &v) in mean.iter_mut().zip(b.pixels()) {
                    *acc += (v as f64).max(0.0) / n;
                }
            }
            mean.iter().map(|v| v + sigma * sigma).collect()
        }
        other => vec![other.additive_std().powi(2); m],
    }
}

fn score_images<F>(test: &[(ImageGrid, usize)], f: F) -> Result<Vec<ObserverRecord>>
where
    F: Fn(usize, &ImageGrid, usize) -> Result<ObserverRecord> + Sync,
{
    test.par_iter()
        .enumerate()
        .map(|(i, (g, y))| f(i, g, *y))
        .collect()
}

/// Runs one observer over the test set.
pub fn observer_records(
    plan: &ExperimentPlan,
    dir: &Path,
    kind: ObserverKind,
    test: &[(ImageGrid, usize)],
) -> Result<Vec<ObserverRecord>> {
    let task = &plan.task;
    match kind {
        ObserverKind::AnalyticIo => {
            let scale = match (task.kind, &task.object, task.noise) {
                (TaskKind::BkeLaplacian, ObjectModel::None, NoiseModel::Laplacian { scale }) => scale,
                _ => {
                    return Err(Error::Unsupported(format!(
                        "analytic_io needs a known background with Laplacian noise (task `{}`)",
                        task.name
                    )))
                }
            };
            let io = AnalyticLaplacianObserver {
                background: ImageGrid::zeros(task.width, task.height),
                signals: task.signal_images()?,
                scale,
                priors: task.priors.clone(),
            };
            score_images(test, |_, g, y| io.evaluate(g, y))
        }
        ObserverKind::ScanningHo => {
            let backgrounds = if matches!(task.object, ObjectModel::None) {
                Vec::new()
            } else {
                let limit = match plan.hotelling_backgrounds {
                    0 => usize::MAX,
                    n => n,
                };
                load_backgrounds(dir, task, limit)?
            };
            let noise = noise_variance(task, &backgrounds);
            let state = build_hotelling_diagonal(&backgrounds, &task.signal_images()?, &noise)?;
            drop(backgrounds);
            score_images(test, |_, g, y| scanning_ho_statistics(g, &state, y))
        }
        ObserverKind::McmcIo => {
            let io = McmcIoObserver::for_task(task, plan.mcmc)?;
            score_images(test, |i, g, y| {
                io.evaluate(g, y, &mut item_stream(plan.seed, "mcmc", i as u64))
            })
        }
        ObserverKind::CnnIo => {
            let path = dir.join(BEST_CHECKPOINT);
            if !path.exists() {
                return Err(Error::Missing(format!(
                    "{} (cnn_io needs a trained network; run `train` first)",
                    path.display()
                )));
            }
            let ck = load_checkpoint(&path)?;
            score_images(test, |_, g, y| cnn_io_statistics(g, &ck.state, &task.priors, y))
        }
    }
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// FOM row for one observer's records; also writes its record and curve files.
pub fn summarize_records(
    plan: &ExperimentPlan,
    dir: &Path,
    kind: ObserverKind,
    records: &[ObserverRecord],
) -> Result<ReportRow> {
    let name = kind.name();
    write_with(&dir.join(format!("records_{name}.csv")), |w| write_records_csv(w, records))?;
    write_with(&dir.join(format!("lroc_{name}.csv")), |w| {
        write_curve_csv(w, &empirical_lroc(records)?)
    })?;
    write_with(&dir.join(format!("roc_{name}.csv")), |w| {
        write_curve_csv(w, &empirical_roc(records)?)
    })?;
    let boot = |fom: &str| BootstrapConfig {
        resamples: plan.bootstrap,
        seed: derive_seed(plan.seed, &format!("bootstrap-{fom}-{name}")),
    };
    let a = alroc(records, &boot("alroc"))?;
    let b = auc(records, &boot("auc"))?;
    if a.value > b.value {
        eprintln!(
            "warning: {name}: ALROC {:.4} exceeds AUC {:.4}; check the binary statistic",
            a.value, b.value
        );
    }
    Ok(ReportRow {
        observer: name.into(),
        task: plan.task.name.clone(),
        system: plan.system.clone(),
        alroc: a,
        auc: Some(b),
        n_records: records.len(),
    })
}

/// Runs every configured observer over the test set and writes records,
/// curves and `report.csv`.
pub fn run_observers(plan: &ExperimentPlan, dir: &Path, force: bool) -> Result<Vec<ReportRow>> {
    plan.validate()?;
    guard(&dir.join(REPORT), force)?;
    let test = load_split(dir, TEST_SET, &plan.task)?;
    let mut rows = Vec::new();
    for &kind in &plan.observers {
        eprintln!("running {kind} on {} test images", test.len());
        let records = observer_records(plan, dir, kind, &test)?;
        rows.push(summarize_records(plan, dir, kind, &records)?);
    }
    write_with(&dir.join(REPORT), |w| write_report_csv(w, &rows))?;
    Ok(rows)
}

/// Rankings of systems for each observer present in the rows.
pub fn rank_systems(rows: &[ReportRow]) -> Vec<(String, Ranking)> {
    let mut by_observer: BTreeMap<&str, Vec<SystemFoms>> = BTreeMap::new();
    for r in rows {
        if let Some(auc) = r.auc {
            by_observer.entry(&r.observer).or_default().push(SystemFoms {
                system: r.system.clone(),
                alroc: r.alroc,
                auc,
            });
        }
    }
    by_observer
        .into_iter()
        .map(|(obs, systems)| (obs.to_string(), compare_systems(&systems)))
        .collect()
}

/// Merges the reports of several run directories and ranks systems per
/// observer.
pub fn build_report(run_dirs: &[PathBuf], out: &Path, force: bool) -> Result<Vec<(String, Ranking)>> {
    if run_dirs.is_empty() {
        return Err(Error::Missing("at least one run directory".into()));
    }
    std::fs::create_dir_all(out)?;
    guard(&out.join(RANKING), force)?;
    let mut rows = Vec::new();
    for d in run_dirs {
        let path = d.join(REPORT);
        let f = File::open(&path)
            .map_err(|e| Error::Missing(format!("{} ({e}; run `evaluate` first)", path.display())))?;
        rows.extend(read_report_csv(BufReader::new(f))?);
    }
    let merged = out.join(REPORT);
    if !run_dirs.iter().any(|d| d.join(REPORT) == merged) {
        guard(&merged, force)?;
        write_with(&merged, |w| write_report_csv(w, &rows))?;
    }
    let rankings = rank_systems(&rows);
    write_with(&out.join(RANKING), |w| {
        for (obs, r) in &rankings {
            writeln!(w, "observer = {obs}")?;
            writeln!(w, "alroc_ranking = {}", r.by_alroc.join(" > "))?;
            writeln!(w, "auc_ranking = {}", r.by_auc.join(" > "))?;
            writeln!(w, "rankings_disagree = {}", r.disagree)?;
        }
        Ok(())
    })?;
    Ok(rankings)
}
