use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, PipelineConfig};
use crate::dvs::emulate;
use crate::error::{Error, Result};
use crate::events::{
    read_events, segment_by_triggers, write_events_as, write_idx_u8, EventFormat, EventStream, LabeledImageSet,
    SpikeTensor,
};
use crate::metrics::{evaluate_batch, raster_export, write_pgm_grid, EvalReport, EvalSample};
use crate::preprocess::{bin, crop_roi};
use crate::rng::derive_seed;
use crate::scatter::{simulate_frames, PhantomSpec, SceneSpec, TargetFrame, TargetImage};
use crate::snn::write_latent_csv;
use crate::train::{
    load_checkpoint_for, save_checkpoint, write_loss_csv, Checkpoint, EpochLoss, LossKind, Target, TrainSample,
    Trainer,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every artifact set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    pub preprocess_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config: PipelineConfig,
}

impl RunManifest {
    pub fn start(command: &str, cfg: &PipelineConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("pipeline".to_string(), cfg.seed);
        seeds.insert("train".to_string(), cfg.train.seed);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: cfg.digest(),
            preprocess_digest: cfg.preprocess_digest(),
            seeds,
            started_unix_s: unix_now(),
            finished_unix_s: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config: cfg.clone(),
        }
    }

    /// Records a file digest under its path relative to `base`.
    fn record(map: &mut BTreeMap<String, String>, base: &Path, path: &Path) -> Result<()> {
        let key = path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/");
        map.insert(key, sha256_hex(&fs::read(path)?));
        Ok(())
    }

    pub fn add_input(&mut self, base: &Path, path: &Path) -> Result<()> {
        Self::record(&mut self.inputs, base, path)
    }

    pub fn add_output(&mut self, base: &Path, path: &Path) -> Result<()> {
        Self::record(&mut self.outputs, base, path)
    }

    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix_s = unix_now();
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::format(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Thresholded dataset image at its physical pitch.
pub fn target_image(cfg: &PipelineConfig, gray: &[f32], height: usize, width: usize) -> Result<TargetImage> {
    let pitch = cfg.simulate.target_pitch_mm.unwrap_or(cfg.scene.detector.pitch_mm);
    TargetImage::from_gray(gray, height, width, pitch, cfg.simulate.target_threshold)
}

/// Scene with a single flash of `target`.
pub fn scene_for(cfg: &PipelineConfig, target: TargetImage) -> SceneSpec {
    SceneSpec {
        geometry: cfg.scene.geometry,
        source: cfg.scene.source.clone(),
        target_plane_mm: cfg.scene.target_plane_mm,
        detector: cfg.scene.detector.clone(),
        target_frames: vec![TargetFrame {
            image: target,
            onset_us: cfg.simulate.flash_onset_us,
            duration_us: cfg.flash_duration_us(),
        }],
    }
}

/// Events recorded for one flashed image through `phantom`. Seeds depend on
/// the sample index only, so the scattered and clear paths share them.
pub fn simulate_events(
    cfg: &PipelineConfig,
    phantom: &PhantomSpec,
    gray: &[f32],
    height: usize,
    width: usize,
    index: u64,
) -> Result<EventStream> {
    let scene = scene_for(cfg, target_image(cfg, gray, height, width)?);
    let n = cfg.simulate.n_photons;
    let (mut frames, _) = simulate_frames(&scene, phantom, n, derive_seed(cfg.seed, &[index, 1]))?;
    if cfg.simulate.normalize_frames {
        let scale = 1.0 / scene.unobstructed_pixel_weight(n) as f32;
        frames = frames.iter().map(|f| f.scaled(scale)).collect();
    }
    emulate(&frames, &scene.triggers(), &cfg.dvs, derive_seed(cfg.seed, &[index, 2]))
}

/// The target as laid out on the detector grid, 1 for white pixels.
pub fn detector_target(cfg: &PipelineConfig, gray: &[f32], height: usize, width: usize) -> Result<Vec<f32>> {
    let target = target_image(cfg, gray, height, width)?;
    let det = &cfg.scene.detector;
    let mut out = Vec::with_capacity(det.height * det.width);
    for r in 0..det.height {
        for c in 0..det.width {
            let (x, y) = det.pixel_center(r, c);
            out.push(if target.is_white(x, y) { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// Crops a detector-resolution image to the ROI and average-pools it onto
/// the bin grid.
pub fn bin_image(cfg: &PipelineConfig, img: &[f32]) -> Result<Vec<f32>> {
    let det = &cfg.scene.detector;
    if img.len() != det.height * det.width {
        return Err(Error::shape("image does not match the detector grid"));
    }
    let roi = cfg.roi();
    let (bh, bw) = (cfg.preprocess.bin.height, cfg.preprocess.bin.width);
    let (sy, sx) = (roi.h as usize / bh, roi.w as usize / bw);
    let mut out = vec![0.0f32; bh * bw];
    for by in 0..bh {
        for bx in 0..bw {
            let mut acc = 0.0;
            for dy in 0..sy {
                for dx in 0..sx {
                    let (y, x) = (roi.y0 as usize + by * sy + dy, roi.x0 as usize + bx * sx + dx);
                    acc += img[y * det.width + x];
                }
            }
            out[by * bw + bx] = acc / (sy * sx) as f32;
        }
    }
    Ok(out)
}

/// Trigger segmentation, ROI crop, filter chain and binning. Only the first
/// flash of a recording is used; recordings without triggers are binned whole.
pub fn preprocess_stream(cfg: &PipelineConfig, stream: &EventStream) -> Result<SpikeTensor> {
    let pp = &cfg.preprocess;
    let segment = if stream.triggers().is_empty() {
        stream.clone()
    } else {
        segment_by_triggers(stream, pp.pairing)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Protocol("recording has no complete trigger window".into()))?
    };
    let cropped = crop_roi(&segment, &cfg.roi())?;
    let filtered = pp.filters.apply_chain(&pp.chain, &cropped);
    let mut spec = pp.bin.clone();
    if spec.duration_us.is_none() && filtered.duration().is_none() {
        spec.duration_us = Some(cfg.flash_duration_us());
    }
    bin(&filtered, &spec)
}

fn load_dataset(cfg: &PipelineConfig) -> Result<LabeledImageSet> {
    let set = LabeledImageSet::load(&cfg.paths.dataset_images, &cfg.paths.dataset_labels)?;
    Ok(match cfg.data.max_samples {
        Some(n) => set.truncated(n),
        None => set,
    })
}

fn sample_name(i: usize) -> String {
    format!("sample_{i:05}.evt")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Simulates scattered and clear recordings of every dataset image into
/// `out/scattered`, `out/clear`, plus detector-resolution targets and labels.
pub fn run_simulate(cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let set = load_dataset(cfg)?;
    if set.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut manifest = RunManifest::start("simulate", cfg);
    manifest.add_input(Path::new(""), &cfg.paths.dataset_images)?;
    manifest.add_input(Path::new(""), &cfg.paths.dataset_labels)?;
    for sub in ["scattered", "clear"] {
        create_dir(&out.join(sub))?;
    }
    let (h, w) = (set.height(), set.width());
    let clear = cfg.phantom.cleared();
    let results: Vec<Result<(EventStream, EventStream, Vec<f32>)>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let img = set.image(i);
            let s = simulate_events(cfg, &cfg.phantom, img, h, w, i as u64)?;
            let c = simulate_events(cfg, &clear, img, h, w, i as u64)?;
            log::debug!("sample {i}: {} scattered, {} clear events", s.len(), c.len());
            Ok((s, c, detector_target(cfg, img, h, w)?))
        })
        .collect();
    let mut targets = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (s, c, t) = r?;
        for (sub, stream) in [("scattered", &s), ("clear", &c)] {
            let p = out.join(sub).join(sample_name(i));
            write_events_as(stream, &p, EventFormat::Binary)?;
            manifest.add_output(out, &p)?;
        }
        targets.extend(t.iter().map(|&v| (v * 255.0).round() as u8));
    }
    let det = &cfg.scene.detector;
    write_output(&mut manifest, out, "targets-idx3-ubyte", &write_idx_u8(&[set.len(), det.height, det.width], &targets)?)?;
    let labels: Vec<u8> = set.labels().iter().map(|&l| l.min(255) as u8).collect();
    write_output(&mut manifest, out, "labels-idx1-ubyte", &write_idx_u8(&[labels.len()], &labels)?)?;
    log::info!("simulated {} samples into {}", set.len(), out.display());
    manifest.finish(out)
}

fn write_output(manifest: &mut RunManifest, out: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = out.join(name);
    fs::write(&p, bytes)?;
    manifest.add_output(out, &p)
}

fn list_events(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "evt" || e == "txt" || e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Preprocesses the recordings of a simulate directory into tensor archives.
pub fn run_preprocess(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::start("preprocess", cfg);
    let targets = LabeledImageSet::load(input.join("targets-idx3-ubyte"), input.join("labels-idx1-ubyte"))?;
    let det = &cfg.scene.detector;
    if targets.height() != det.height || targets.width() != det.width {
        return Err(Error::shape(format!(
            "targets are {}x{}, detector is {}x{}",
            targets.height(),
            targets.width(),
            det.height,
            det.width
        )));
    }
    manifest.add_input(input, &input.join("targets-idx3-ubyte"))?;
    for sub in ["scattered", "clear"] {
        let dir = input.join(sub);
        if !dir.is_dir() {
            if sub == "scattered" {
                return Err(Error::invalid(format!("{} has no scattered recordings", input.display())));
            }
            continue;
        }
        let files = list_events(&dir)?;
        if files.len() != targets.len() {
            return Err(Error::shape(format!("{} recordings in {sub} for {} targets", files.len(), targets.len())));
        }
        let tensors: Vec<Result<SpikeTensor>> = files
            .par_iter()
            .map(|p| preprocess_stream(cfg, &read_events(p)?).map_err(|e| annotate(e, p)))
            .collect();
        let mut archive = Vec::with_capacity(files.len());
        for (k, (t, p)) in tensors.into_iter().zip(&files).enumerate() {
            manifest.add_input(input, p)?;
            archive.push((targets.label(k), t?));
        }
        let name = if sub == "scattered" { "inputs.spt" } else { "clear.spt" };
        let p = out.join(name);
        SpikeTensor::write_archive(&archive, BufWriter::new(fs::File::create(&p)?))?;
        manifest.add_output(out, &p)?;
    }
    let mut binned = Vec::new();
    for i in 0..targets.len() {
        binned.extend(bin_image(cfg, targets.image(i))?.iter().map(|&v| (v * 255.0).round() as u8));
    }
    let bspec = &cfg.preprocess.bin;
    write_output(&mut manifest, out, "targets-idx3-ubyte", &write_idx_u8(&[targets.len(), bspec.height, bspec.width], &binned)?)?;
    let labels: Vec<u8> = targets.labels().iter().map(|&l| l.min(255) as u8).collect();
    write_output(&mut manifest, out, "labels-idx1-ubyte", &write_idx_u8(&[labels.len()], &labels)?)?;
    manifest.finish(out)
}

fn annotate(e: Error, p: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", p.display())),
        Error::Protocol(m) => Error::Protocol(format!("{}: {m}", p.display())),
        other => other,
    }
}

/// Preprocessed tensors with their targets.
#[derive(Clone, Debug)]
pub struct TensorSet {
    pub inputs: Vec<SpikeTensor>,
    pub clear: Option<Vec<SpikeTensor>>,
    pub targets: LabeledImageSet,
    pub preprocess_digest: Option<String>,
}

impl TensorSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<SpikeTensor>> {
            let f = fs::File::open(dir.join(name))?;
            Ok(SpikeTensor::read_archive(BufReader::new(f))?.into_iter().map(|(_, t)| t).collect())
        };
        let inputs = read("inputs.spt")?;
        let clear = if dir.join("clear.spt").exists() { Some(read("clear.spt")?) } else { None };
        let targets = LabeledImageSet::load(dir.join("targets-idx3-ubyte"), dir.join("labels-idx1-ubyte"))?;
        if targets.len() != inputs.len() || clear.as_ref().is_some_and(|c| c.len() != inputs.len()) {
            return Err(Error::shape("tensor archives and targets differ in length"));
        }
        let preprocess_digest = RunManifest::read(dir).ok().map(|m| m.preprocess_digest);
        Ok(Self { inputs, clear, targets, preprocess_digest })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Training samples for `loss`, in dataset order.
    pub fn train_samples(&self, loss: LossKind) -> Result<Vec<TrainSample>> {
        (0..self.len())
            .map(|i| {
                let target = match loss {
                    LossKind::MembraneMse => Target::Image(self.targets.image(i).to_vec()),
                    LossKind::VanRossum => Target::Spikes(
                        self.clear.as_ref().ok_or_else(|| Error::invalid("van Rossum training needs clear.spt"))?[i].clone(),
                    ),
                };
                Ok(TrainSample { input: self.inputs[i].clone(), target })
            })
            .collect()
    }
}

/// Splits off the trailing `holdout` samples.
pub fn split_holdout<T>(items: &[T], holdout: usize) -> Result<(&[T], &[T])> {
    if holdout >= items.len() && !items.is_empty() && holdout > 0 {
        return Err(Error::Config(format!("holdout of {holdout} leaves no training samples out of {}", items.len())));
    }
    Ok(items.split_at(items.len() - holdout.min(items.len())))
}

/// Trains on a preprocess directory, writing per-epoch checkpoints, the
/// final checkpoint and the loss history.
pub fn run_train(cfg: &PipelineConfig, tensors: &Path, out: &Path, resume: Option<&Path>) -> Result<RunManifest> {
    cfg.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::start("train", cfg);
    let set = TensorSet::load(tensors)?;
    for name in ["inputs.spt", "targets-idx3-ubyte"] {
        manifest.add_input(tensors, &tensors.join(name))?;
    }
    if let Some(d) = &set.preprocess_digest {
        if *d != cfg.preprocess_digest() {
            log::warn!("tensors were preprocessed with a different configuration ({d})");
        }
    }
    let samples = set.train_samples(cfg.train.loss)?;
    let (train, val) = split_holdout(&samples, cfg.data.holdout)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint_for(p, &cfg.sae)?;
            manifest.add_input(Path::new(""), p)?;
            log::info!("resuming from epoch {}", ck.epoch);
            ck.into_trainer(cfg.train.clone())?
        }
        None => Trainer::new(cfg.sae.clone(), cfg.train.clone())?,
    };
    let digest = set.preprocess_digest.clone();
    let mut written = Vec::new();
    trainer.fit(train, val, |tr, rec| {
        log::info!(
            "epoch {}: train {:.6}{}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss.map(|v| format!(", val {v:.6}")).unwrap_or_default()
        );
        let p = out.join(format!("epoch_{:03}.nci", rec.epoch));
        save_checkpoint(&Checkpoint::from_trainer(tr, digest.clone()), &p)?;
        written.push(p);
        Ok(())
    })?;
    for p in &written {
        manifest.add_output(out, p)?;
    }
    let final_path = out.join("final.nci");
    save_checkpoint(&Checkpoint::from_trainer(&trainer, digest), &final_path)?;
    manifest.add_output(out, &final_path)?;
    let loss_path = out.join("loss.csv");
    write_loss_csv(trainer.history(), BufWriter::new(fs::File::create(&loss_path)?))?;
    manifest.add_output(out, &loss_path)?;
    manifest.finish(out)
}

/// Reads a loss CSV back.
pub fn read_loss_csv(path: &Path) -> Result<Vec<EpochLoss>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(format!("bad loss row {line:?}"));
        if cells.len() != 3 {
            return Err(bad());
        }
        out.push(EpochLoss {
            epoch: cells[0].parse().map_err(|_| bad())?,
            train_loss: cells[1].parse().map_err(|_| bad())?,
            val_loss: if cells[2].is_empty() { None } else { Some(cells[2].parse().map_err(|_| bad())?) },
        });
    }
    Ok(out)
}

/// Evaluates a checkpoint on the held-out tensors (all tensors when the
/// holdout is zero) and writes the report, image grid, raster and latent
/// activity of the first sample.
pub fn run_evaluate(cfg: &PipelineConfig, checkpoint: &Path, tensors: &Path, out: &Path) -> Result<(RunManifest, EvalReport)> {
    cfg.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::start("evaluate", cfg);
    let ckpt = load_checkpoint_for(checkpoint, &cfg.sae)?;
    manifest.add_input(Path::new(""), checkpoint)?;
    let set = TensorSet::load(tensors)?;
    manifest.add_input(tensors, &tensors.join("inputs.spt"))?;
    let indices: Vec<usize> = (0..set.len()).collect();
    let (_, held) = split_holdout(&indices, cfg.data.holdout)?;
    let held: Vec<usize> = if held.is_empty() { indices.clone() } else { held.to_vec() };
    let samples: Vec<EvalSample> = held
        .iter()
        .map(|&i| EvalSample { id: format!("{i:05}"), input: set.inputs[i].clone(), target: set.targets.image(i).to_vec() })
        .collect();
    let (report, outputs) = evaluate_batch(&ckpt, &samples, set.preprocess_digest.as_deref(), &cfg.eval)?;
    let mean_ms = outputs.iter().map(|o| o.elapsed_ms).sum::<f64>() / outputs.len().max(1) as f64;
    log::info!("mean inference time {mean_ms:.2} ms per sample over {} samples", outputs.len());

    let report_path = out.join("report.csv");
    report.write_csv(BufWriter::new(fs::File::create(&report_path)?))?;
    manifest.add_output(out, &report_path)?;

    let (h, w) = (set.targets.height(), set.targets.width());
    let rows: Vec<Vec<&[f32]>> = samples
        .iter()
        .zip(&outputs)
        .map(|(s, o)| vec![&s.target[..], &o.input_image[..], &o.recon_image[..]])
        .collect();
    let grid_path = out.join("grid.pgm");
    write_pgm_grid(&rows, h, w, BufWriter::new(fs::File::create(&grid_path)?))?;
    manifest.add_output(out, &grid_path)?;

    if let (Some(first), Some(o)) = (held.first(), outputs.first()) {
        let mut sets: Vec<(&str, &SpikeTensor)> = vec![("input", &set.inputs[*first])];
        if let Some(c) = &set.clear {
            sets.push(("clear", &c[*first]));
        }
        sets.push(("recon", &o.output_spikes));
        let raster_path = out.join("raster.csv");
        let mut wtr = BufWriter::new(fs::File::create(&raster_path)?);
        raster_export(&sets, &mut wtr)?;
        wtr.flush()?;
        drop(wtr);
        manifest.add_output(out, &raster_path)?;
        let latent_path = out.join("latent.csv");
        write_latent_csv(&o.latent, BufWriter::new(fs::File::create(&latent_path)?))?;
        manifest.add_output(out, &latent_path)?;
    }
    let m = manifest.finish(out)?;
    Ok((m, report))
}
