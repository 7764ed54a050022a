//! The detection test: threshold, then look for one significant black cluster.
//!
//! Under the null hypothesis (pure noise) the thresholded picture is
//! subcritical site percolation at density `p_out`, whose cluster sizes have
//! exponential tails. An object puts a supercritical region at density
//! `p_im` into the picture, which grows a large cluster with high
//! probability. The test reports an object iff some black cluster reaches
//! `phi` pixels.
//!
//! Growth conditions on `phi` relative to the screen size are asymptotic
//! modelling assumptions about a sequence of problems; they are not checked
//! on a single picture. Only `1 <= phi <= pixel count` is enforced.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{label_components_with, BoundingBox, Cluster, ClusterScratch, LabelOptions};
use crate::error::{Error, Result};
use crate::lattice::{BinaryImage, Color, GrayImage};
use crate::rng::stream_rng;
use crate::threshold::{threshold_into, ThresholdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiSource {
    /// Taken from a Monte Carlo null quantile.
    Calibrated,
    UserFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub threshold: ThresholdConfig,
    /// Smallest black cluster treated as evidence of an object.
    pub phi: usize,
    /// Target false detection rate.
    pub alpha: f64,
    #[serde(rename = "source_of_phi")]
    pub phi_source: PhiSource,
}

impl DetectionConfig {
    pub fn new(threshold: ThresholdConfig, phi: usize, alpha: f64, phi_source: PhiSource) -> Result<Self> {
        if phi == 0 {
            return Err(Error::invalid("phi must be at least 1"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self {
            threshold,
            phi,
            alpha,
            phi_source,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub detected: bool,
    /// Connected set of at least `phi_used` black pixels, when detected.
    pub witness: Option<Cluster>,
    pub phi_used: usize,
    pub theta_used: f64,
    pub elapsed: Duration,
    pub pixel_count: usize,
    pub width: usize,
    pub height: usize,
    /// Seed behind a calibrated `phi`, if any.
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct WitnessSummary {
    size: usize,
    bbox: BoundingBox,
}

#[derive(Serialize)]
struct DetectionResultJson {
    detected: bool,
    phi_used: usize,
    theta_used: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<WitnessSummary>,
    elapsed_ms: f64,
    width: usize,
    height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl Serialize for DetectionResult {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DetectionResultJson {
            detected: self.detected,
            phi_used: self.phi_used,
            theta_used: self.theta_used,
            witness: self.witness.as_ref().map(|w| WitnessSummary {
                size: w.size,
                bbox: w.bbox,
            }),
            elapsed_ms: self.elapsed.as_secs_f64() * 1e3,
            width: self.width,
            height: self.height,
            seed: self.seed,
        }
        .serialize(serializer)
    }
}

fn check_config(image: &GrayImage, config: &DetectionConfig) -> Result<()> {
    if config.phi == 0 || config.phi > image.len() {
        return Err(Error::invalid(format!(
            "phi = {} must lie in [1, {}] for a {}x{} image",
            config.phi,
            image.len(),
            image.width(),
            image.height()
        )));
    }
    if config.phi_source == PhiSource::Calibrated && !config.threshold.is_feasible() {
        return Err(Error::Infeasible {
            p_c: config.threshold.p_c,
        });
    }
    Ok(())
}

/// Runs the detection test on one picture.
pub fn detect(image: &GrayImage, config: &DetectionConfig) -> Result<DetectionResult> {
    let mut bits = Vec::new();
    detect_with(image, config, &mut bits, &mut ClusterScratch::new())
}

/// As [`detect`], reusing caller-provided buffers. On return `bits` holds
/// the thresholded picture.
pub fn detect_with(
    image: &GrayImage,
    config: &DetectionConfig,
    bits: &mut Vec<u8>,
    scratch: &mut ClusterScratch,
) -> Result<DetectionResult> {
    check_config(image, config)?;
    let start = Instant::now();
    threshold_into(image.values(), config.threshold.theta, bits);
    let binary = BinaryImage::from_bits_unchecked(image.width(), image.height(), std::mem::take(bits));
    let witness = scratch.find_cluster_at_least(&binary, config.phi);
    let elapsed = start.elapsed();
    *bits = binary.into_bits();
    Ok(DetectionResult {
        detected: witness.is_some(),
        witness,
        phi_used: config.phi,
        theta_used: config.threshold.theta,
        elapsed,
        pixel_count: image.len(),
        width: image.width(),
        height: image.height(),
        seed: None,
    })
}

/// Reference verdict from a full labeling of the thresholded picture.
pub fn detect_exhaustive(image: &GrayImage, config: &DetectionConfig) -> Result<bool> {
    check_config(image, config)?;
    let binary = crate::threshold::apply_threshold(image, config.threshold.theta);
    let labeling = label_components_with(&binary, Color::Black, LabelOptions::default());
    Ok(labeling.max_cluster_size() >= config.phi)
}

/// Leading-order union bound `min(1, width * height * exp(-n * lambda))` on
/// the probability that pure noise yields a black cluster of `n` or more
/// pixels, where `lambda` is the subcritical cluster-size decay rate.
pub fn false_detection_bound(width: usize, height: usize, n: usize, lambda: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("cluster size n must be at least 1"));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::invalid(format!("decay rate must be positive, got {lambda}")));
    }
    let pixels = width as f64 * height as f64;
    Ok((pixels * (-(n as f64) * lambda).exp()).min(1.0))
}

/// Least-squares fit of `ln P(|C_max| >= n)` against `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Decay rate: minus the fitted slope.
    pub lambda_hat: f64,
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
    /// `(n, empirical survival probability)` pairs used in the fit.
    pub points: Vec<(usize, f64)>,
    pub replicates: usize,
    pub size: usize,
    pub p: f64,
}

/// Band of survival probabilities used for the tail fit.
pub const TAIL_BAND: (f64, f64) = (0.01, 0.5);

/// Estimates the exponential tail rate of the largest cluster in subcritical
/// site percolation at density `p` on a `size x size` lattice.
///
/// Returns `Ok(None)` when fewer than two sizes fall in the fitting band,
/// which includes the empty lattice at `p = 0`.
pub fn estimate_tail_rate(p: f64, size: usize, replicates: usize, seed: u64, p_c: f64) -> Result<Option<TailFit>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("site density must lie in [0, 1), got {p}")));
    }
    if p >= p_c {
        return Err(Error::invalid(format!(
            "tail fit needs subcritical density, got p = {p} >= p_c = {p_c}"
        )));
    }
    if size < 64 {
        return Err(Error::invalid(format!("lattice size must be at least 64, got {size}")));
    }
    if replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let maxima = site_max_clusters(p, size, replicates, seed)?;
    Ok(fit_tail(&maxima, TAIL_BAND).map(|(slope, intercept, r_squared, points)| TailFit {
        lambda_hat: -slope,
        r_squared,
        slope,
        intercept,
        points,
        replicates,
        size,
        p,
    }))
}

/// Largest black cluster of independent `size x size` site percolation
/// samples, one per replicate, in replicate order.
pub fn site_max_clusters(p: f64, size: usize, replicates: usize, seed: u64) -> Result<Vec<usize>> {
    (0..replicates)
        .into_par_iter()
        .map_init(ClusterScratch::new, |scratch, r| {
            let mut rng = stream_rng(seed, r as u64);
            let img = BinaryImage::random_sites(size, size, p, &mut rng)?;
            Ok(scratch.max_black_cluster(&img))
        })
        .collect()
}

type Fit = (f64, f64, f64, Vec<(usize, f64)>);

/// Fits `ln S(n) = intercept + slope * n` over sizes whose survival
/// probability `S(n) = P(max >= n)` lies in `band`.
pub(crate) fn fit_tail(maxima: &[usize], band: (f64, f64)) -> Option<Fit> {
    let total = maxima.len() as f64;
    let largest = maxima.iter().copied().max().unwrap_or(0);
    let mut sorted = maxima.to_vec();
    sorted.sort_unstable();
    let points: Vec<(usize, f64)> = (1..=largest)
        .filter_map(|n| {
            let at_least = sorted.len() - sorted.partition_point(|&m| m < n);
            let s = at_least as f64 / total;
            (band.0..=band.1).contains(&s).then_some((n, s))
        })
        .collect();
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(n, _)| n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, s)| s.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some((slope, intercept, r_squared, points))
}
