//! Monte Carlo calibration of the significant cluster size.
//!
//! Pure-noise pictures are simulated, thresholded and reduced to their
//! largest black cluster. The cluster size `phi` is set strictly above the
//! empirical `(1 - alpha)` quantile of those maxima, optionally inflated by a
//! safety margin.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterScratch;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json_atomic};
use crate::noise::NoiseModel;
use crate::rng::stream_rng;

/// Safety factor applied to the null quantile by default.
pub const DEFAULT_MARGIN: f64 = 1.3;

/// Absorbs rounding in products like `0.95 * 100` before taking a ceiling.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub width: usize,
    pub height: usize,
    pub model: NoiseModel,
    pub theta: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Largest black cluster of each null replicate, in replicate order.
    pub samples: Vec<usize>,
    /// Empirical `(1 - alpha)` quantile of `samples`.
    pub quantile: usize,
    pub margin: f64,
    pub phi: usize,
}

/// Largest black cluster of `replicates` thresholded pure-noise pictures.
///
/// Replicate `r` draws its noise from stream `r` of `seed`, so the output
/// does not depend on the number of worker threads.
pub fn simulate_null_max_clusters(
    width: usize,
    height: usize,
    model: &NoiseModel,
    theta: f64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("lattice must be nonempty, got {width}x{height}")));
    }
    if replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let len = width * height;
    let maxima = (0..replicates)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(len), ClusterScratch::new()),
            |(bits, scratch), r| {
                let mut rng = stream_rng(seed, r as u64);
                bits.clear();
                // background pixels observe noise only
                bits.extend((0..len).map(|_| u8::from(model.draw(&mut rng) >= theta)));
                scratch.max_cluster_in(bits, width)
            },
        )
        .collect();
    Ok(maxima)
}

/// Order statistic `X_(k)` with `k = ceil(level * R)`, 1-based.
pub fn empirical_quantile(samples: &[usize], level: f64) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::invalid(format!("quantile level must lie in [0, 1], got {level}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let k = (level * sorted.len() as f64 - CEIL_SLACK).ceil().max(1.0) as usize;
    Ok(sorted[k.min(sorted.len()) - 1])
}

/// `ceil(margin * q) + 1`, where `q` is the empirical `(1 - alpha)` quantile.
pub fn phi_from_quantile(samples: &[usize], alpha: f64, margin: f64) -> Result<usize> {
    check_alpha_margin(alpha, margin)?;
    let q = empirical_quantile(samples, 1.0 - alpha)?;
    Ok(inflate(q, margin))
}

fn inflate(q: usize, margin: f64) -> usize {
    (margin * q as f64 - CEIL_SLACK).ceil().max(0.0) as usize + 1
}

fn check_alpha_margin(alpha: f64, margin: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(margin >= 1.0 && margin.is_finite()) {
        return Err(Error::invalid(format!("margin must be at least 1, got {margin}")));
    }
    Ok(())
}

/// Runs the null simulation and derives `phi`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    width: usize,
    height: usize,
    model: &NoiseModel,
    theta: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
    margin: f64,
) -> Result<CalibrationResult> {
    check_alpha_margin(alpha, margin)?;
    let samples = simulate_null_max_clusters(width, height, model, theta, replicates, seed)?;
    CalibrationResult::from_samples(width, height, model.clone(), theta, alpha, seed, samples, margin)
}

impl CalibrationResult {
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        width: usize,
        height: usize,
        model: NoiseModel,
        theta: f64,
        alpha: f64,
        seed: u64,
        samples: Vec<usize>,
        margin: f64,
    ) -> Result<Self> {
        check_alpha_margin(alpha, margin)?;
        let quantile = empirical_quantile(&samples, 1.0 - alpha)?;
        Ok(Self {
            width,
            height,
            model,
            theta,
            alpha,
            replicates: samples.len(),
            seed,
            quantile,
            phi: inflate(quantile, margin),
            margin,
            samples,
        })
    }
}

#[derive(Serialize)]
struct CacheKey<'a> {
    width: usize,
    height: usize,
    model: &'a NoiseModel,
    theta: f64,
    replicates: usize,
    seed: u64,
}

/// On-disk store of null samples keyed by everything that determines them.
///
/// `alpha` and the margin are not part of the key; they are reapplied to the
/// cached samples on every lookup.
#[derive(Debug, Clone)]
pub struct CalibrationCache {
    dir: PathBuf,
}

impl CalibrationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(
        &self,
        width: usize,
        height: usize,
        model: &NoiseModel,
        theta: f64,
        replicates: usize,
        seed: u64,
    ) -> Result<PathBuf> {
        let key = CacheKey {
            width,
            height,
            model,
            theta,
            replicates,
            seed,
        };
        let digest = Sha256::digest(serde_json::to_vec(&key)?);
        let name = format!("calibration-{}.json", hex_prefix(&digest, 16));
        Ok(self.dir.join(name))
    }

    /// Returns a cached calibration if present, otherwise simulates and
    /// stores one.
    #[allow(clippy::too_many_arguments)]
    pub fn calibrate(
        &self,
        width: usize,
        height: usize,
        model: &NoiseModel,
        theta: f64,
        alpha: f64,
        replicates: usize,
        seed: u64,
        margin: f64,
    ) -> Result<CalibrationResult> {
        let path = self.entry_path(width, height, model, theta, replicates, seed)?;
        if path.exists() {
            let cached: CalibrationResult = read_json(&path)?;
            let matches = cached.width == width
                && cached.height == height
                && &cached.model == model
                && cached.theta.to_bits() == theta.to_bits()
                && cached.replicates == replicates
                && cached.seed == seed;
            if matches {
                return CalibrationResult::from_samples(
                    width,
                    height,
                    cached.model,
                    theta,
                    alpha,
                    seed,
                    cached.samples,
                    margin,
                );
            }
        }
        let result = calibrate(width, height, model, theta, alpha, replicates, seed, margin)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_json_atomic(&result, &path)?;
        Ok(result)
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>()
        .chars()
        .take(chars)
        .collect()
}
