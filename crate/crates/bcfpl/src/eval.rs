//! Evaluation: occupancy scores, accuracy, confusion counts, ROC curves
//! with trapezoidal AUC, multi-resolution sweeps, and a small inference
//! throughput benchmark.

use std::io;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::dataset::{make_batches, DatasetError, Label, Manifest};
use crate::nn::model::{BcfplModel, INPUT_CHANNELS, INPUT_SIDE, NUM_CLASSES};
use crate::nn::ops::softmax_probs;
use crate::nn::tensor::Tensor;
use crate::nn::NnError;
use crate::rng::{derive_seed, domain, rng_from_seed};
use crate::train::{train_run, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("no samples to evaluate")]
    Empty,
    #[error("need both classes, got {occupied} occupied and {empty} empty samples")]
    SingleClass { occupied: usize, empty: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("could not write {path}")]
    Io { path: String, source: io::Error },
    #[error("malformed report: {0}")]
    ReportFormat(String),
}

/// A model's occupancy score for one sample, next to the ground truth.
/// Scores are softmax probabilities of the occupied class, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub label: Label,
}

/// Runs inference over the whole manifest in evaluation mode (no shuffle,
/// no augmentation) and returns one score per sample, in manifest order.
pub fn predict_scores(
    model: &BcfplModel<f32>,
    manifest: &Manifest,
    resolution: usize,
    batch_size: usize,
) -> Result<Vec<ScoredSample>, EvalError> {
    let mut out = Vec::with_capacity(manifest.len());
    for batch in make_batches(manifest, batch_size, resolution, false, 0, 0)? {
        let batch = batch?;
        let logits = model.forward_infer(&batch.inputs)?;
        let probs = softmax_probs(&logits)?;
        for (row, &label) in batch.labels.iter().enumerate() {
            out.push(ScoredSample {
                score: probs.data()[row * NUM_CLASSES + 1] as f64,
                label,
            });
        }
    }
    Ok(out)
}

/// Fraction of samples classified correctly at `threshold`: a sample is
/// called occupied when its score is >= the threshold, so ties go to the
/// occupied class.
pub fn accuracy_of(scored: &[ScoredSample], threshold: f64) -> Result<f64, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = scored
        .iter()
        .filter(|s| (s.score >= threshold) == s.label.is_occupied())
        .count();
    Ok(correct as f64 / scored.len() as f64)
}

/// 2x2 confusion counts at a threshold; occupied is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

pub fn confusion_at(scored: &[ScoredSample], threshold: f64) -> Result<Confusion, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
    };
    for s in scored {
        match (s.score >= threshold, s.label.is_occupied()) {
            (true, true) => c.true_positives += 1,
            (true, false) => c.false_positives += 1,
            (false, true) => c.false_negatives += 1,
            (false, false) => c.true_negatives += 1,
        }
    }
    Ok(c)
}

/// One operating point of the ROC curve. The first point uses an infinite
/// threshold (nothing called positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Sweeps the threshold over the distinct scores (ties grouped into one
/// step) and integrates the curve with the trapezoidal rule. Requires at
/// least one sample of each class. The curve starts at (0, 0) and ends at
/// (1, 1); ROC points and AUC are returned together.
pub fn roc_auc(scored: &[ScoredSample]) -> Result<(Vec<RocPoint>, f64), EvalError> {
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    let positives = scored.iter().filter(|s| s.label.is_occupied()).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass {
            occupied: positives,
            empty: negatives,
        });
    }
    let mut order: Vec<&ScoredSample> = scored.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auc = 0f64;
    let mut i = 0;
    while i < order.len() {
        let score = order[i].score;
        let mut j = i;
        while j < order.len() && order[j].score == score {
            match order[j].label {
                Label::Occupied => tp += 1,
                Label::Empty => fp += 1,
            }
            j += 1;
        }
        let prev = *points.last().expect("seeded with the origin");
        let point = RocPoint {
            threshold: score,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
        i = j;
    }
    Ok((points, auc))
}

/// Everything `evaluate` measures on one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    /// Accuracy at the 0.5 threshold.
    pub accuracy: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(
    model: &BcfplModel<f32>,
    manifest: &Manifest,
    resolution: usize,
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    let scored = predict_scores(model, manifest, resolution, batch_size)?;
    let (roc, auc) = roc_auc(&scored)?;
    Ok(EvalReport {
        n: scored.len(),
        accuracy: accuracy_of(&scored, 0.5)?,
        auc,
        confusion: confusion_at(&scored, 0.5)?,
        roc,
    })
}

/// Plain-text key/value rendering of a report. Floats use the shortest
/// round-trippable form, so [`parse_report`] reproduces the struct
/// exactly.
pub fn write_report<W: io::Write>(mut w: W, report: &EvalReport) -> io::Result<()> {
    writeln!(w, "n: {}", report.n)?;
    writeln!(w, "accuracy: {}", report.accuracy)?;
    writeln!(w, "auc: {}", report.auc)?;
    writeln!(w, "true_positives: {}", report.confusion.true_positives)?;
    writeln!(w, "false_positives: {}", report.confusion.false_positives)?;
    writeln!(w, "false_negatives: {}", report.confusion.false_negatives)?;
    writeln!(w, "true_negatives: {}", report.confusion.true_negatives)?;
    writeln!(w, "roc_points: {}", report.roc.len())?;
    for p in &report.roc {
        writeln!(w, "roc: {} {} {}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}

pub fn report_to_string(report: &EvalReport) -> String {
    let mut buf = Vec::new();
    write_report(&mut buf, report).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("report text is ascii")
}

pub fn parse_report(text: &str) -> Result<EvalReport, EvalError> {
    let bad = |msg: String| EvalError::ReportFormat(msg);
    let mut fields = std::collections::HashMap::new();
    let mut roc = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| bad(format!("line without key: {line:?}")))?;
        let value = value.trim();
        if key == "roc" {
            let parts: Vec<&str> = value.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(format!("roc line needs 3 numbers: {line:?}")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad number {s:?}")))
            };
            roc.push(RocPoint {
                threshold: num(parts[0])?,
                fpr: num(parts[1])?,
                tpr: num(parts[2])?,
            });
        } else {
            fields.insert(key.to_string(), value.to_string());
        }
    }
    let take = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| bad(format!("missing field {key:?}")))
    };
    let int = |key: &str| -> Result<usize, EvalError> {
        take(key)?
            .parse()
            .map_err(|_| bad(format!("bad integer in {key:?}")))
    };
    let float = |key: &str| -> Result<f64, EvalError> {
        take(key)?
            .parse()
            .map_err(|_| bad(format!("bad float in {key:?}")))
    };
    let declared = int("roc_points")?;
    if declared != roc.len() {
        return Err(bad(format!(
            "declared {declared} roc points, found {}",
            roc.len()
        )));
    }
    Ok(EvalReport {
        n: int("n")?,
        accuracy: float("accuracy")?,
        auc: float("auc")?,
        confusion: Confusion {
            true_positives: int("true_positives")?,
            false_positives: int("false_positives")?,
            false_negatives: int("false_negatives")?,
            true_negatives: int("true_negatives")?,
        },
        roc,
    })
}

/// CSV rendering of a ROC curve: `threshold,fpr,tpr`.
pub fn write_roc_csv<W: io::Write>(writer: W, roc: &[RocPoint]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| EvalError::ReportFormat(e.to_string());
    w.write_record(["threshold", "fpr", "tpr"]).map_err(fail)?;
    for p in roc {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
            .map_err(fail)?;
    }
    w.flush().map_err(|e| EvalError::ReportFormat(e.to_string()))
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<RocPoint>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::ReportFormat(e.to_string()))?;
        if record.len() != 3 {
            return Err(EvalError::ReportFormat(format!(
                "expected 3 columns, got {}",
                record.len()
            )));
        }
        let num = |i: usize| -> Result<f64, EvalError> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| EvalError::ReportFormat(format!("bad number {:?}", &record[i])))
        };
        out.push(RocPoint {
            threshold: num(0)?,
            fpr: num(1)?,
            tpr: num(2)?,
        });
    }
    Ok(out)
}

/// One `(resolution, dataset)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub resolution: usize,
    pub dataset: String,
    pub accuracy: f64,
    pub auc: f64,
    pub n: usize,
}

/// For each ladder resolution: train a fresh model from the same seed on
/// `train_manifest` degraded to that resolution, then score every named
/// evaluation set at the same resolution. Rows appear in ladder order,
/// evaluation sets in the order given.
pub fn sweep_resolutions(
    config: &TrainConfig,
    train_manifest: &Manifest,
    eval_sets: &[(String, Manifest)],
    ladder: &[usize],
) -> Result<Vec<SweepRow>, TrainError> {
    if ladder.is_empty() {
        return Err(TrainError::InvalidConfig("empty resolution ladder".into()));
    }
    if eval_sets.is_empty() {
        return Err(TrainError::InvalidConfig("no evaluation sets".into()));
    }
    let mut rows = Vec::with_capacity(ladder.len() * eval_sets.len());
    for &resolution in ladder {
        let run_config = TrainConfig {
            resolution,
            ..config.clone()
        };
        let (model, _) = train_run(&run_config, train_manifest, None)?;
        for (name, manifest) in eval_sets {
            let scored = predict_scores(&model, manifest, resolution, config.batch_size)?;
            let (_, auc) = roc_auc(&scored)?;
            rows.push(SweepRow {
                resolution,
                dataset: name.clone(),
                accuracy: accuracy_of(&scored, 0.5)?,
                auc,
                n: scored.len(),
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of sweep rows: `resolution,dataset,accuracy,auc,n`.
pub fn write_sweep_csv<W: io::Write>(writer: W, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| EvalError::ReportFormat(e.to_string());
    w.write_record(["resolution", "dataset", "accuracy", "auc", "n"])
        .map_err(fail)?;
    for row in rows {
        w.write_record([
            row.resolution.to_string(),
            row.dataset.clone(),
            row.accuracy.to_string(),
            row.auc.to_string(),
            row.n.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| EvalError::ReportFormat(e.to_string()))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::ReportFormat(e.to_string()))?;
        if record.len() != 5 {
            return Err(EvalError::ReportFormat(format!(
                "expected 5 columns, got {}",
                record.len()
            )));
        }
        let bad = |i: usize| EvalError::ReportFormat(format!("bad field {:?}", &record[i]));
        out.push(SweepRow {
            resolution: record[0].trim().parse().map_err(|_| bad(0))?,
            dataset: record[1].to_string(),
            accuracy: record[2].trim().parse().map_err(|_| bad(2))?,
            auc: record[3].trim().parse().map_err(|_| bad(3))?,
            n: record[4].trim().parse().map_err(|_| bad(4))?,
        });
    }
    Ok(out)
}

pub fn write_sweep_csv_path(path: &Path, rows: &[SweepRow]) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_sweep_csv(io::BufWriter::new(file), rows)
}

/// Inference throughput measurement on synthetic batches.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub n_images: usize,
    pub batch_size: usize,
    /// Images per second, one entry per timed repetition.
    pub runs: Vec<f64>,
    pub mean_images_per_sec: f64,
    pub std_images_per_sec: f64,
}

/// Times `repetitions` full passes of `n_images` random images through
/// inference, after one untimed warmup pass. Batches are pregenerated so
/// only the forward pass is measured.
pub fn bench_throughput(
    model: &BcfplModel<f32>,
    n_images: usize,
    batch_size: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchResult, EvalError> {
    if n_images == 0 || batch_size == 0 || repetitions == 0 {
        return Err(EvalError::InvalidArgument(
            "images, batch size, and repetitions must all be at least 1".into(),
        ));
    }
    if n_images < batch_size {
        return Err(EvalError::InvalidArgument(format!(
            "need at least one full batch: {n_images} images < batch size {batch_size}"
        )));
    }
    use rand::Rng;
    let mut rng = rng_from_seed(derive_seed(seed, &[domain::SYNTH]));
    let mut batches = Vec::new();
    let mut remaining = n_images;
    while remaining > 0 {
        let n = remaining.min(batch_size);
        let data = (0..n * INPUT_CHANNELS * INPUT_SIDE * INPUT_SIDE)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        batches.push(
            Tensor::from_vec(&[n, INPUT_CHANNELS, INPUT_SIDE, INPUT_SIDE], data)
                .expect("consistent size"),
        );
        remaining -= n;
    }
    let pass = |()| -> Result<f64, EvalError> {
        let start = Instant::now();
        for batch in &batches {
            let logits = model.forward_infer(batch)?;
            std::hint::black_box(logits.data()[0]);
        }
        Ok(n_images as f64 / start.elapsed().as_secs_f64())
    };
    pass(())?;
    let mut runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        runs.push(pass(())?);
    }
    let mean = runs.iter().sum::<f64>() / runs.len() as f64;
    let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / runs.len() as f64;
    Ok(BenchResult {
        n_images,
        batch_size,
        mean_images_per_sec: mean,
        std_images_per_sec: var.sqrt(),
        runs,
    })
}
