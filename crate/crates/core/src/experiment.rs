//! Repeated detection on synthetic pictures with known ground truth.

use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{has_left_right_crossing, ClusterScratch};
use crate::detect::{detect_with, DetectionConfig};
use crate::error::{Error, Result};
use crate::lattice::{BinaryImage, Color, GrayImage};
use crate::noise::NoiseModel;
use crate::rng::stream_rng;

/// Two-sided 95% standard normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// A `side x side` black square with top-left corner at `offset` on an
/// otherwise white `width x height` lattice.
pub fn make_square_object(width: usize, height: usize, side: usize, offset: (usize, usize)) -> Result<BinaryImage> {
    let (row, col) = offset;
    if side == 0 || row + side > height || col + side > width {
        return Err(Error::invalid(format!(
            "square of side {side} at ({row}, {col}) does not fit in {width}x{height}"
        )));
    }
    let mut img = BinaryImage::filled(width, height, Color::White)?;
    for r in row..row + side {
        for c in col..col + side {
            img.set(r, c, Color::Black);
        }
    }
    Ok(img)
}

/// Observations `Y = Im + noise` with independent noise per pixel.
pub fn add_noise(truth: &BinaryImage, model: &NoiseModel, seed: u64) -> GrayImage {
    add_noise_with(truth, model, &mut stream_rng(seed, 0))
}

pub fn add_noise_with<R: Rng + ?Sized>(truth: &BinaryImage, model: &NoiseModel, rng: &mut R) -> GrayImage {
    let values = truth
        .bits()
        .iter()
        .map(|&b| f64::from(b) + model.draw(rng))
        .collect();
    GrayImage::new(truth.width(), truth.height(), values).expect("dimensions come from a valid image")
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// A ground truth together with the detector settings to test on it.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub truth: BinaryImage,
    pub truth_descriptor: String,
    pub model: NoiseModel,
    pub detection: DetectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: usize,
    pub detections: usize,
    pub rate: f64,
    /// 95% Wilson interval for the detection rate.
    pub wilson_ci: (f64, f64),
    pub config: DetectionConfig,
    pub model: NoiseModel,
    pub truth_descriptor: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Wall-clock time per detection. Left out of the JSON report so that
    /// equally seeded reports are byte-identical.
    #[serde(skip)]
    pub mean_elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub detected: bool,
    pub max_cluster: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub records: Vec<RunRecord>,
}

/// Adds fresh noise to the truth `runs` times and runs the detector on each
/// picture. Run `i` uses noise stream `i` of `seed`.
pub fn run_experiment(setup: &ExperimentSetup, runs: usize, seed: u64) -> Result<ExperimentOutcome> {
    if runs == 0 {
        return Err(Error::invalid("need at least one run"));
    }
    let records: Vec<RunRecord> = (0..runs)
        .into_par_iter()
        .map_init(
            || (Vec::new(), ClusterScratch::new()),
            |(bits, scratch), i| {
                let mut rng = stream_rng(seed, i as u64);
                let noisy = add_noise_with(&setup.truth, &setup.model, &mut rng);
                let result = detect_with(&noisy, &setup.detection, bits, scratch)?;
                let max_cluster = scratch.max_cluster_in(bits, noisy.width());
                Ok(RunRecord {
                    run_index: i,
                    detected: result.detected,
                    max_cluster,
                    elapsed_ms: result.elapsed.as_secs_f64() * 1e3,
                })
            },
        )
        .collect::<Result<_>>()?;

    let detections = records.iter().filter(|r| r.detected).count();
    let total_ms: f64 = records.iter().map(|r| r.elapsed_ms).sum();
    let report = ExperimentReport {
        runs,
        detections,
        rate: detections as f64 / runs as f64,
        wilson_ci: wilson_interval(detections, runs, Z95),
        config: setup.detection,
        model: setup.model.clone(),
        truth_descriptor: setup.truth_descriptor.clone(),
        width: setup.truth.width(),
        height: setup.truth.height(),
        seed,
        mean_elapsed: Duration::from_secs_f64(total_ms / runs as f64 / 1e3),
    };
    Ok(ExperimentOutcome { report, records })
}

/// Monte Carlo frequency of a black left-right crossing in `size x size`
/// site percolation at density `p`.
///
/// Replicate `r` uses uniform field `r` of `seed` regardless of `p`, so
/// estimates at different densities are coupled.
pub fn crossing_probability(p: f64, size: usize, replicates: usize, seed: u64) -> Result<f64> {
    let hits = crossing_outcomes(p, size, replicates, seed, |img| usize::from(has_left_right_crossing(img)))?;
    Ok(hits.iter().sum::<usize>() as f64 / replicates as f64)
}

/// Applies `measure` to each replicate lattice and returns the results in
/// replicate order.
pub fn crossing_outcomes<T: Send>(
    p: f64,
    size: usize,
    replicates: usize,
    seed: u64,
    measure: impl Fn(&BinaryImage) -> T + Sync,
) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("site density must lie in [0, 1], got {p}")));
    }
    if replicates == 0 || size == 0 {
        return Err(Error::invalid("need a nonempty lattice and at least one replicate"));
    }
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let img = BinaryImage::random_sites(size, size, p, &mut rng)?;
            Ok(measure(&img))
        })
        .collect()
}
