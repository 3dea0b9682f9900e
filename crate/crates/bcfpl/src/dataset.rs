//! Dataset manifests, deterministic splits, and batch assembly.
//!
//! A manifest is an ordered list of (path, label) pairs. Three on-disk
//! layouts are understood: directory trees whose folder names carry the
//! class, plain-text label files with `relative/path label` lines, and
//! two-column CSV files. Images are decoded lazily during batch assembly,
//! degraded to the requested resolution, optionally mirrored for
//! augmentation, and packed into channel-planar tensors.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{degrade, read_image, Image, ImageError, MODEL_INPUT_SIDE};
use crate::nn::tensor::Tensor;
use crate::rng::{derive_seed, domain, rng_from_seed};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error under {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no labeled images found under {0}")]
    EmptyManifest(PathBuf),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot take {requested_train} train + {requested_test} test samples from {total}")]
    InsufficientSamples {
        total: usize,
        requested_train: usize,
        requested_test: usize,
    },
    #[error("failed to load {path}")]
    Image { path: PathBuf, source: ImageError },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Binary occupancy label. `Occupied` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Empty,
    Occupied,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Empty => 0,
            Label::Occupied => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Label::Empty),
            1 => Some(Label::Occupied),
            _ => None,
        }
    }

    pub fn is_occupied(self) -> bool {
        self == Label::Occupied
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Empty => "Empty",
            Label::Occupied => "Occupied",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: Label,
    /// Identifier of the collection the sample was loaded from. Survives
    /// splits and merges, so mixed-origin manifests stay traceable.
    pub source: String,
}

/// An ordered collection of labeled image paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

const IMAGE_EXTENSIONS: [&str; 6] = ["ppm", "pgm", "pnm", "png", "jpg", "jpeg"];

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .map(|e| {
            let e = e.to_string_lossy().to_ascii_lowercase();
            IMAGE_EXTENSIONS.contains(&e.as_str())
        })
        .unwrap_or(false)
}

/// Class of a file judged by its nearest ancestor directory (within
/// `root`) named `occupied` or `empty`, case-insensitively.
fn class_from_ancestors(root: &Path, file: &Path) -> Option<Label> {
    let rel = file.strip_prefix(root).ok()?;
    for dir in rel.parent()?.ancestors() {
        if let Some(name) = dir.file_name() {
            match name.to_string_lossy().to_ascii_lowercase().as_str() {
                "occupied" => return Some(Label::Occupied),
                "empty" => return Some(Label::Empty),
                _ => {}
            }
        }
    }
    None
}

fn manifest_name(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Walks `root` and collects every image that sits somewhere below a
/// directory named for its class. Sample order is lexicographic by path,
/// independent of filesystem iteration order.
pub fn scan_class_folders(root: &Path) -> Result<Manifest, DatasetError> {
    let name = manifest_name(root);
    let mut samples = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            let source = e
                .into_io_error()
                .unwrap_or_else(|| io::Error::other("walk error"));
            DatasetError::Io { path, source }
        })?;
        if !entry.file_type().is_file() || !is_image_path(entry.path()) {
            continue;
        }
        if let Some(label) = class_from_ancestors(root, entry.path()) {
            samples.push(Sample {
                path: entry.path().to_path_buf(),
                label,
                source: name.clone(),
            });
        }
    }
    samples.sort_by(|a, b| a.path.cmp(&b.path));
    if samples.is_empty() {
        return Err(DatasetError::EmptyManifest(root.to_path_buf()));
    }
    Ok(Manifest { name, samples })
}

/// Reads a text file of `relative/path label` lines, one sample per line,
/// labels 0 (empty) or 1 (occupied). Paths resolve against `image_root`.
/// Blank lines are skipped; anything else malformed is an error carrying
/// its 1-based line number.
pub fn load_label_file(file: &Path, image_root: &Path) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(file).map_err(|source| DatasetError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    let name = manifest_name(file);
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (path, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(p), Some(l), None) => (p, l),
            _ => {
                return Err(DatasetError::Parse {
                    file: file.to_path_buf(),
                    line: line_no,
                    message: format!("expected `path label`, got {trimmed:?}"),
                })
            }
        };
        let label = parse_label(label).ok_or_else(|| DatasetError::Parse {
            file: file.to_path_buf(),
            line: line_no,
            message: format!("label must be 0 or 1, got {label:?}"),
        })?;
        samples.push(Sample {
            path: image_root.join(path),
            label,
            source: name.clone(),
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyManifest(file.to_path_buf()));
    }
    Ok(Manifest { name, samples })
}

fn parse_label(text: &str) -> Option<Label> {
    match text.to_ascii_lowercase().as_str() {
        "0" | "empty" => Some(Label::Empty),
        "1" | "occupied" => Some(Label::Occupied),
        _ => None,
    }
}

/// Reads a `path,label` CSV manifest. A header row is recognized by a
/// non-label second column on the first line. Relative paths resolve
/// against `image_root`.
pub fn load_csv_manifest(file: &Path, image_root: &Path) -> Result<Manifest, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(file)
        .map_err(|e| csv_error(file, 0, e))?;
    let name = manifest_name(file);
    let mut samples = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line_no = idx + 1;
        let record = record.map_err(|e| csv_error(file, line_no, e))?;
        if record.len() != 2 {
            return Err(DatasetError::Parse {
                file: file.to_path_buf(),
                line: line_no,
                message: format!("expected 2 columns, got {}", record.len()),
            });
        }
        let (path, label_text) = (record[0].trim(), record[1].trim());
        let label = match parse_label(label_text) {
            Some(l) => l,
            // A first row like `path,label` is a header.
            None if line_no == 1 => continue,
            None => {
                return Err(DatasetError::Parse {
                    file: file.to_path_buf(),
                    line: line_no,
                    message: format!("label must be 0 or 1, got {label_text:?}"),
                })
            }
        };
        let path = Path::new(path);
        let resolved = if path.is_absolute() {
            path.to_path_buf()
        } else {
            image_root.join(path)
        };
        samples.push(Sample {
            path: resolved,
            label,
            source: name.clone(),
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyManifest(file.to_path_buf()));
    }
    Ok(Manifest { name, samples })
}

fn csv_error(file: &Path, line: usize, e: csv::Error) -> DatasetError {
    DatasetError::Parse {
        file: file.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Writes a manifest as `path,label` CSV with a header, labels as 0/1.
pub fn write_csv_manifest(path: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_manifest_to(io::BufWriter::new(file), manifest)
        .map_err(|e| csv_error(path, 0, e))
}

/// [`write_csv_manifest`] to any writer, for streaming to stdout.
pub fn write_csv_manifest_to<W: io::Write>(
    writer: W,
    manifest: &Manifest,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["path", "label"])?;
    for sample in &manifest.samples {
        w.write_record([
            sample.path.to_string_lossy().as_ref(),
            &sample.label.index().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Splits by a seeded uniform shuffle: the first `n_train` shuffled
/// samples become the training set, the next `n_test` the test set.
pub fn split_manifest(
    manifest: &Manifest,
    seed: u64,
    n_train: usize,
    n_test: usize,
) -> Result<(Manifest, Manifest), DatasetError> {
    let total = manifest.len();
    if n_train + n_test > total {
        return Err(DatasetError::InsufficientSamples {
            total,
            requested_train: n_train,
            requested_test: n_test,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = rng_from_seed(derive_seed(seed, &[domain::SPLIT]));
    order.shuffle(&mut rng);
    let pick = |range: std::ops::Range<usize>, suffix: &str| Manifest {
        name: format!("{}-{suffix}", manifest.name),
        samples: order[range]
            .iter()
            .map(|&i| manifest.samples[i].clone())
            .collect(),
    };
    Ok((
        pick(0..n_train, "train"),
        pick(n_train..n_train + n_test, "test"),
    ))
}

/// Decodes, degrades, optionally mirrors, and tensorizes one image.
/// In training mode a fair coin from `rng` decides the horizontal flip;
/// evaluation mode never consumes randomness.
pub fn preprocess_sample<R: Rng>(
    sample: &Sample,
    resolution: usize,
    train_mode: bool,
    rng: &mut R,
) -> Result<Tensor<f32>, DatasetError> {
    let flip = train_mode && rng.random_bool(0.5);
    preprocess_decoded_path(&sample.path, resolution, flip)
}

/// Deterministic core of [`preprocess_sample`] with the flip decision made
/// explicit, so tests can force either branch.
pub(crate) fn preprocess_decoded_path(
    path: &Path,
    resolution: usize,
    flip: bool,
) -> Result<Tensor<f32>, DatasetError> {
    let image = read_image(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let image = image.replicate_to_rgb();
    let image = degrade(&image, resolution).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let image = if flip { image.flip_horizontal() } else { image };
    Ok(to_channel_planar(&image))
}

/// Interleaved HWC image to a planar `[3, side, side]` tensor.
fn to_channel_planar(image: &Image) -> Tensor<f32> {
    let side = MODEL_INPUT_SIDE;
    debug_assert_eq!((image.width(), image.height(), image.channels()), (side, side, 3));
    let mut data = vec![0f32; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                data[(c * side + y) * side + x] = image.get(x, y, c);
            }
        }
    }
    Tensor::from_vec(&[3, side, side], data).expect("fixed size")
}

/// One assembled batch: inputs `[n, 3, 50, 50]` plus labels in row order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor<f32>,
    pub labels: Vec<Label>,
}

/// Lazily assembled batches over a manifest.
///
/// Training mode visits samples in a fresh seeded shuffle each epoch and
/// flips each image under a per-sample RNG derived from `(seed, epoch,
/// original manifest index)`, so results do not depend on how samples are
/// scheduled across threads. Evaluation mode preserves manifest order and
/// uses no randomness. The final batch keeps whatever remains, which may
/// be smaller than `batch_size`.
pub struct BatchIter<'a> {
    manifest: &'a Manifest,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    resolution: usize,
    train_mode: bool,
    seed: u64,
    epoch: u64,
}

pub fn make_batches<'a>(
    manifest: &'a Manifest,
    batch_size: usize,
    resolution: usize,
    train_mode: bool,
    seed: u64,
    epoch: u64,
) -> Result<BatchIter<'a>, DatasetError> {
    if manifest.is_empty() {
        return Err(DatasetError::InvalidArgument(format!(
            "manifest {:?} has no samples",
            manifest.name
        )));
    }
    if batch_size == 0 {
        return Err(DatasetError::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    if train_mode {
        let mut rng = rng_from_seed(derive_seed(seed, &[domain::SHUFFLE, epoch]));
        order.shuffle(&mut rng);
    }
    Ok(BatchIter {
        manifest,
        order,
        cursor: 0,
        batch_size,
        resolution,
        train_mode,
        seed,
        epoch,
    })
}

impl BatchIter<'_> {
    fn assemble(&self, indices: &[usize]) -> Result<Batch, DatasetError> {
        let tensors: Vec<Tensor<f32>> = indices
            .par_iter()
            .map(|&idx| {
                let sample = &self.manifest.samples[idx];
                let mut rng = rng_from_seed(derive_seed(
                    self.seed,
                    &[domain::FLIP, self.epoch, idx as u64],
                ));
                preprocess_sample(sample, self.resolution, self.train_mode, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let n = indices.len();
        let per = 3 * MODEL_INPUT_SIDE * MODEL_INPUT_SIDE;
        let mut data = vec![0f32; n * per];
        for (i, t) in tensors.iter().enumerate() {
            data[i * per..(i + 1) * per].copy_from_slice(t.data());
        }
        Ok(Batch {
            inputs: Tensor::from_vec(&[n, 3, MODEL_INPUT_SIDE, MODEL_INPUT_SIDE], data)
                .expect("fixed size"),
            labels: indices
                .iter()
                .map(|&i| self.manifest.samples[i].label)
                .collect(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(self.assemble(&indices))
    }
}
