//! Shared support for integration tests: independently written reference
//! implementations (kept deliberately naive so they cannot share bugs with
//! the library), plus a synthetic dataset generator.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use bcfpl::dataset::{scan_class_folders, Label, Manifest};
use bcfpl::eval::ScoredSample;
use bcfpl::imaging::{write_pnm, Image};
use bcfpl::rng::rng_from_seed;

/// Serializes the compute-heavy tests (training runs, the benchmark) so
/// wall-clock measurements are not distorted by sibling test threads.
pub static HEAVY: Mutex<()> = Mutex::new(());

pub fn heavy_guard() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

/// Textbook bilinear interpolation, written in weight form (the library
/// uses nested lerps) and accumulated in f64: value = sum of the four
/// neighbor intensities times their area weights.
pub fn bilinear_oracle(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = if x0 + 1 < img.width() { x0 + 1 } else { x0 };
    let y1 = if y0 + 1 < img.height() { y0 + 1 } else { y0 };
    let fx = x - x.floor();
    let fy = y - y.floor();
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    w00 * img.get(x0, y0, c) as f64
        + w10 * img.get(x1, y0, c) as f64
        + w01 * img.get(x0, y1, c) as f64
        + w11 * img.get(x1, y1, c) as f64
}

/// Reference resize with the same origin-aligned mapping contract:
/// output (row, col) samples the source at (col*sw/tw, row*sh/th).
pub fn resize_oracle(img: &Image, target_w: usize, target_h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(target_w * target_h * img.channels());
    for row in 0..target_h {
        let y = row as f64 * img.height() as f64 / target_h as f64;
        for col in 0..target_w {
            let x = col as f64 * img.width() as f64 / target_w as f64;
            for c in 0..img.channels() {
                out.push(bilinear_oracle(img, x, y, c));
            }
        }
    }
    out
}

/// Probability interpretation of the area under the ROC curve, computed
/// the slow way: over all (occupied, empty) pairs, count 1 for a correctly
/// ordered pair and 1/2 for a tie.
pub fn auc_pairwise(scored: &[ScoredSample]) -> f64 {
    let positives: Vec<f64> = scored
        .iter()
        .filter(|s| s.label.is_occupied())
        .map(|s| s.score)
        .collect();
    let negatives: Vec<f64> = scored
        .iter()
        .filter(|s| !s.label.is_occupied())
        .map(|s| s.score)
        .collect();
    assert!(!positives.is_empty() && !negatives.is_empty());
    let mut total = 0.0;
    for &p in &positives {
        for &n in &negatives {
            if p > n {
                total += 1.0;
            } else if p == n {
                total += 0.5;
            }
        }
    }
    total / (positives.len() as f64 * negatives.len() as f64)
}

/// Relative error with an absolute floor, for comparing finite-difference
/// and analytic derivatives.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Side of the bright square in occupied synthetic images. At 13 pixels it
/// straddles the sample grid of every target side from 5 up (grid spacing
/// 50/5 = 10 < 13), while a 3x3 grid (spacing about 17) can miss it
/// entirely, so accuracy must drop at the bottom of the ladder.
pub const BLOB_SIDE: usize = 13;

/// One 50x50 RGB image: noisy near-black background, plus a bright blob
/// when `occupied`, its top-left corner drawn from `positions`. The
/// contrast is deliberately extreme so the class signal survives heavy
/// degradation; the difficulty knob for the resolution ladder is
/// blob-versus-grid geometry, not contrast.
fn synth_image_at<R: Rng>(
    rng: &mut R,
    occupied: bool,
    positions: std::ops::RangeInclusive<usize>,
) -> Image {
    const SIDE: usize = 50;
    let base: f64 = rng.random_range(0.03..0.08);
    let mut data = Vec::with_capacity(SIDE * SIDE * 3);
    for _ in 0..SIDE * SIDE {
        for _ in 0..3 {
            let noise = rng.random_range(-0.02..0.02);
            data.push((base + noise).max(0.0) as f32);
        }
    }
    if occupied {
        let x0 = rng.random_range(positions.clone());
        let y0 = rng.random_range(positions);
        for y in y0..y0 + BLOB_SIDE {
            for x in x0..x0 + BLOB_SIDE {
                for c in 0..3 {
                    data[(y * SIDE + x) * 3 + c] = rng.random_range(0.95..1.0);
                }
            }
        }
    }
    Image::new(SIDE, SIDE, 3, data).expect("synthetic image is valid")
}

/// Blob anywhere on the canvas: the resolution ladder's test case, where a
/// coarse sampling grid can miss the blob entirely.
pub fn synth_image<R: Rng>(rng: &mut R, occupied: bool) -> Image {
    synth_image_at(rng, occupied, 0..=50 - BLOB_SIDE)
}

/// Blob jittered a few pixels around the canvas center: a tight, maximally
/// learnable class geometry for smoke tests that must fit an entire set
/// within a hard optimizer-step budget (one batch per epoch, decaying
/// learning rate leaves roughly a dozen effective steps).
pub fn synth_image_centered<R: Rng>(rng: &mut R, occupied: bool) -> Image {
    let center = (50 - BLOB_SIDE) / 2;
    synth_image_at(rng, occupied, center - 2..=center + 2)
}

pub fn synth_rng(seed: u64) -> ChaCha8Rng {
    rng_from_seed(seed)
}

/// Writes a class-folder tree (`root/occupied/*.ppm`, `root/empty/*.ppm`)
/// of images from `generate` and returns the scanned manifest, so the test
/// data flows through the same directory scanner as real data.
pub fn write_tree_with(
    root: &Path,
    n_occupied: usize,
    n_empty: usize,
    seed: u64,
    mut generate: impl FnMut(&mut ChaCha8Rng, bool) -> Image,
) -> Manifest {
    let mut rng = synth_rng(seed);
    for (label, count) in [(Label::Occupied, n_occupied), (Label::Empty, n_empty)] {
        let dir = root.join(match label {
            Label::Occupied => "occupied",
            Label::Empty => "empty",
        });
        std::fs::create_dir_all(&dir).expect("create class dir");
        for i in 0..count {
            let img = generate(&mut rng, label.is_occupied());
            write_pnm(&dir.join(format!("img_{i:04}.ppm")), &img).expect("write ppm");
        }
    }
    let manifest = scan_class_folders(root).expect("scan synthetic tree");
    assert_eq!(manifest.len(), n_occupied + n_empty);
    manifest
}

/// Class-folder tree of anywhere-on-canvas blob images.
pub fn write_synth_tree(root: &Path, n_occupied: usize, n_empty: usize, seed: u64) -> Manifest {
    write_tree_with(root, n_occupied, n_empty, seed, synth_image)
}

/// Class-folder tree of center-jittered blob images.
pub fn write_centered_tree(root: &Path, n_occupied: usize, n_empty: usize, seed: u64) -> Manifest {
    write_tree_with(root, n_occupied, n_empty, seed, synth_image_centered)
}

/// Random score sets for AUC cross-checks: a mix of continuous scores and
/// coarse grids that force heavy ties.
pub fn random_score_set<R: Rng>(rng: &mut R) -> Vec<ScoredSample> {
    let n_pos = rng.random_range(1..30);
    let n_neg = rng.random_range(1..30);
    let grid: Option<u32> = if rng.random_bool(0.5) {
        Some(rng.random_range(2..6))
    } else {
        None
    };
    let mut draw = |occupied: bool| {
        let raw: f64 = if occupied {
            rng.random_range(0.2..1.0)
        } else {
            rng.random_range(0.0..0.8)
        };
        let score = match grid {
            Some(g) => (raw * g as f64).round() / g as f64,
            None => raw,
        };
        ScoredSample {
            score,
            label: if occupied { Label::Occupied } else { Label::Empty },
        }
    };
    let mut out: Vec<ScoredSample> = (0..n_pos).map(|_| draw(true)).collect();
    out.extend((0..n_neg).map(|_| draw(false)));
    out
}
