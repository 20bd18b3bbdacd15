use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{CacheLine, ScoreCache};
use super::config::RunConfig;
use super::manifest::Manifest;
use crate::detector::{similarity_score, DetectorConfig};
use crate::embedder::{preprocess_tensor, rgb_to_tensor};
use crate::embedder::{Backbone, EmbedderConfig};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::perturbation::stream_for_id;
use crate::types::{ImageTensor, SampleRecord, ScoreRecord};

pub const SCORES_FILE: &str = "scores.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CACHE_DIR: &str = "cache";

/// A manifest entry with its decoded pixels at stored resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: ImageTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    /// Successfully scored samples, in manifest order.
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<SampleFailure>,
    pub computed: usize,
    pub reused: usize,
    pub digest: String,
    pub scores_path: PathBuf,
}

/// Decodes a PNG or JPEG file to a `[0, 1]` tensor.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    rgb_to_tensor(&decoded.to_rgb8())
}

/// Failures tied to one input file rather than to the run as a whole.
fn is_per_sample(e: &Error) -> bool {
    matches!(
        e,
        Error::Decode { .. } | Error::Io { .. } | Error::Image(_) | Error::ImageTooSmall { .. }
    )
}

/// Decodes every entry; undecodable files are reported, not fatal.
pub fn load_samples(manifest: &Manifest) -> (Vec<LoadedSample>, Vec<SampleFailure>) {
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|r| (r, load_image(&manifest.resolve(r))))
        .collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(image) => samples.push(LoadedSample {
                record: r.clone(),
                image,
            }),
            Err(e) => failures.push(failure(manifest, r, &e)),
        }
    }
    (samples, failures)
}

fn failure(manifest: &Manifest, r: &SampleRecord, e: &Error) -> SampleFailure {
    log::warn!("skipping `{}`: {e}", r.id);
    SampleFailure {
        sample_id: r.id.clone(),
        path: manifest.resolve(r),
        message: e.to_string(),
    }
}

fn score_tensor(
    record: &SampleRecord,
    image: &ImageTensor,
    backbone: &Backbone,
    embedder: &EmbedderConfig,
    detector: &DetectorConfig,
) -> Result<f64> {
    let x = preprocess_tensor(image, embedder)?;
    similarity_score(
        &x,
        backbone.for_label(record.label),
        detector,
        stream_for_id(&record.id),
    )
}

/// Scores in-memory samples (no cache). Any error aborts.
pub fn score_images(
    samples: &[LoadedSample],
    backbone: &Backbone,
    embedder: &EmbedderConfig,
    detector: &DetectorConfig,
) -> Result<Vec<ScoreRecord>> {
    detector.validate()?;
    samples
        .par_iter()
        .map(|s| {
            let sim = score_tensor(&s.record, &s.image, backbone, embedder, detector)?;
            Ok(ScoreRecord::new(&s.record, sim))
        })
        .collect()
}

/// Scores a manifest with caching and writes `scores.jsonl` plus the resolved
/// config into `config.output_dir`.
///
/// Work runs on the rayon pool; one writer thread appends finished scores to
/// the cache. Output order follows the manifest.
pub fn score_dataset(manifest: &Manifest, config: &RunConfig, backbone: &Backbone) -> Result<ScoreOutcome> {
    config.embedder.validate()?;
    config.detector.validate()?;
    if let Some(w) = manifest.format_warning() {
        log::warn!("{w}");
    }
    let out = &config.output_dir;
    let digest = config.digest()?;
    config.write_resolved(out)?;
    let cache = ScoreCache::open(&out.join(CACHE_DIR), &digest)?;

    let entries = &manifest.entries;
    let mut slots: Vec<Option<ScoreRecord>> = entries.iter().map(|r| cache.get(r)).collect();
    let todo: Vec<usize> = (0..entries.len()).filter(|&i| slots[i].is_none()).collect();
    let reused = entries.len() - todo.len();
    log::info!("{} samples: {reused} cached, {} to score", entries.len(), todo.len());

    let mut writer = cache.writer()?;
    let (tx, rx) = mpsc::channel::<(usize, Result<f64>)>();
    let finished = std::thread::scope(|scope| {
        let handle = scope.spawn(move || -> Result<Vec<(usize, Result<f64>)>> {
            let mut got = Vec::new();
            for (i, res) in rx {
                if let Ok(sim) = &res {
                    writer.append(&CacheLine::new(&entries[i], *sim))?;
                }
                got.push((i, res));
            }
            Ok(got)
        });
        todo.par_iter().for_each_with(tx, |tx, &i| {
            let r = &entries[i];
            let res = load_image(&manifest.resolve(r))
                .and_then(|img| score_tensor(r, &img, backbone, &config.embedder, &config.detector));
            // A send only fails once the writer has stopped on an error.
            let _ = tx.send((i, res));
        });
        handle.join().expect("cache writer thread panicked")
    })?;

    let mut finished = finished;
    finished.sort_by_key(|(i, _)| *i);
    let mut failures = Vec::new();
    let mut computed = 0;
    for (i, res) in finished {
        match res {
            Ok(sim) => {
                slots[i] = Some(ScoreRecord::new(&entries[i], sim));
                computed += 1;
            }
            Err(e) if is_per_sample(&e) => failures.push(failure(manifest, &entries[i], &e)),
            Err(e) => return Err(e),
        }
    }
    let records: Vec<ScoreRecord> = slots.into_iter().flatten().collect();
    let scores_path = out.join(SCORES_FILE);
    write_scores(&scores_path, &records)?;
    Ok(ScoreOutcome {
        records,
        failures,
        computed,
        reused,
        digest,
        scores_path,
    })
}

/// Writes a file atomically (temp file in the same directory, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidParameter(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_atomic(&dir.join(REPORT_JSON), json.as_bytes())?;
    write_atomic(&dir.join(REPORT_CSV), report.to_csv().as_bytes())
}
