//! Threshold selection and binarization of noisy pictures.
//!
//! After thresholding at `theta`, background pixels turn black with
//! probability `p_out = 1 - F(theta / s)` and object pixels with probability
//! `p_im = 1 - F((theta - 1) / s)`, `s` being the noise scale. Detection
//! relies on `p_out < p_c < p_im`: subcritical site percolation on the
//! background and supercritical percolation inside the object.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BinaryImage, GrayImage};
use crate::noise::NoiseModel;

/// Critical probability for site percolation on the square lattice.
pub const DEFAULT_P_C: f64 = 0.592_746;

/// Default step for the quadratic objective grid search.
pub const DEFAULT_GRID_STEP: f64 = 1e-3;

const MAX_GRID_POINTS: f64 = 5e7;

/// A threshold together with the colour probabilities it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub theta: f64,
    /// Per-pixel false-black rate of the threshold, `P0(Y >= theta)`.
    pub alpha0: f64,
    pub p_c: f64,
    pub p_out: f64,
    pub p_im: f64,
}

impl ThresholdConfig {
    pub fn new(model: &NoiseModel, theta: f64, p_c: f64) -> Result<Self> {
        check_p_c(p_c)?;
        if theta.is_nan() {
            return Err(Error::invalid("theta is NaN"));
        }
        let (p_out, p_im) = percolation_probs(model, theta);
        Ok(Self {
            theta,
            alpha0: p_out,
            p_c,
            p_out,
            p_im,
        })
    }

    pub fn from_alpha(model: &NoiseModel, alpha0: f64, p_c: f64) -> Result<Self> {
        let theta = theta_from_alpha(model, alpha0)?;
        Ok(Self {
            alpha0,
            ..Self::new(model, theta, p_c)?
        })
    }

    /// Both phase conditions hold: `p_out < p_c < p_im`.
    pub fn is_feasible(&self) -> bool {
        self.p_out < self.p_c && self.p_c < self.p_im
    }
}

/// Open interval of thresholds satisfying both phase conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleInterval {
    pub lo: f64,
    pub hi: f64,
}

impl FeasibleInterval {
    pub fn contains(&self, theta: f64) -> bool {
        self.lo < theta && theta < self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Sum of squared distances of `p_out` and `p_im` from `p_c`.
    Quadratic,
    /// Sum of signs of the two phase margins.
    Sign,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(Objective::Quadratic),
            "sign" => Ok(Objective::Sign),
            other => Err(format!("unknown objective {other:?}, expected quadratic or sign")),
        }
    }
}

fn check_p_c(p_c: f64) -> Result<()> {
    if p_c > 0.0 && p_c < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("p_c must lie in (0, 1), got {p_c}")))
    }
}

/// Smallest threshold whose false-black rate `P0(Y >= theta)` is at most
/// `alpha0`.
///
/// `alpha0 = 1` puts no constraint on the threshold and yields `-inf`.
pub fn theta_from_alpha(model: &NoiseModel, alpha0: f64) -> Result<f64> {
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(Error::invalid(format!("alpha0 must lie in (0, 1], got {alpha0}")));
    }
    if alpha0 == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mut theta = model.scale() * model.quantile(1.0 - alpha0)?;
    // scaling can round the quantile down past the level set
    while model.white_exceed_prob(theta) > alpha0 {
        theta = theta.next_up();
    }
    Ok(theta)
}

/// `(p_out, p_im)`: black probabilities of background and object pixels
/// after thresholding at `theta`.
pub fn percolation_probs(model: &NoiseModel, theta: f64) -> (f64, f64) {
    (
        model.white_exceed_prob(theta),
        1.0 - model.black_below_prob(theta),
    )
}

/// Thresholds satisfying `1 - F(theta/s) < p_c < 1 - F((theta-1)/s)`.
///
/// `None` means the noise is too strong for any threshold to separate
/// the two phases.
pub fn feasible_theta_interval(model: &NoiseModel, p_c: f64) -> Result<Option<FeasibleInterval>> {
    check_p_c(p_c)?;
    let level = 1.0 - p_c;
    let s = model.scale();
    // background condition: F(theta/s) > level
    let lo = s * model.upper_quantile(level);
    // object condition: F((theta-1)/s) < level
    let hi = 1.0 + s * model.quantile(level)?;
    Ok((lo < hi).then_some(FeasibleInterval { lo, hi }))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Value of a threshold objective at `theta`.
pub fn objective_value(model: &NoiseModel, p_c: f64, objective: Objective, theta: f64) -> f64 {
    let (p_out, p_im) = percolation_probs(model, theta);
    match objective {
        Objective::Quadratic => (p_out - p_c).powi(2) + (p_im - p_c).powi(2),
        Objective::Sign => sign(p_im - p_c) + sign(p_c - p_out),
    }
}

/// Picks a threshold inside the feasible interval.
///
/// The quadratic objective is maximized over a grid with spacing
/// `grid_step`, kept one step away from both (open) endpoints; ties go to
/// the smaller threshold. The sign objective equals 2 everywhere on the
/// interval, so its midpoint is returned.
pub fn optimize_theta(
    model: &NoiseModel,
    p_c: f64,
    objective: Objective,
    grid_step: f64,
) -> Result<f64> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::invalid(format!("grid step must be positive, got {grid_step}")));
    }
    let interval = feasible_theta_interval(model, p_c)?.ok_or(Error::Infeasible { p_c })?;
    match objective {
        Objective::Sign => Ok(interval.midpoint()),
        Objective::Quadratic => {
            let lo = interval.lo + grid_step;
            let hi = interval.hi - grid_step;
            if lo > hi {
                return Ok(interval.midpoint());
            }
            let steps = ((hi - lo) / grid_step).floor();
            if steps > MAX_GRID_POINTS {
                return Err(Error::invalid(format!(
                    "grid step {grid_step} gives {steps} grid points; use a coarser step"
                )));
            }
            let mut best = (lo, objective_value(model, p_c, objective, lo));
            for k in 1..=steps as u64 {
                let theta = lo + k as f64 * grid_step;
                let value = objective_value(model, p_c, objective, theta);
                if value > best.1 {
                    best = (theta, value);
                }
            }
            Ok(best.0)
        }
    }
}

/// Colours a pixel black iff its observation is at least `theta`.
pub fn apply_threshold(image: &GrayImage, theta: f64) -> BinaryImage {
    let mut bits = Vec::new();
    threshold_into(image.values(), theta, &mut bits);
    BinaryImage::from_bits_unchecked(image.width(), image.height(), bits)
}

pub(crate) fn threshold_into(values: &[f64], theta: f64, bits: &mut Vec<u8>) {
    bits.clear();
    bits.extend(values.iter().map(|&y| u8::from(y >= theta)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::EmpiricalTable;
    use crate::lattice::Color;
    use proptest::prelude::*;

    fn gauss(s: f64) -> NoiseModel {
        NoiseModel::gaussian(s).unwrap()
    }

    // Oracle for the feasible interval: direct evaluation of both phase
    // conditions on a fine grid, independent of the quantile routines.
    fn scan_feasible(model: &NoiseModel, p_c: f64, from: f64, to: f64, step: f64) -> Option<(f64, f64)> {
        let n = ((to - from) / step).round() as i64;
        let mut found: Option<(f64, f64)> = None;
        for k in 0..=n {
            let theta = from + k as f64 * step;
            let (p_out, p_im) = percolation_probs(model, theta);
            if p_out < p_c && p_c < p_im {
                found = Some(match found {
                    None => (theta, theta),
                    Some((a, _)) => (a, theta),
                });
            }
        }
        found
    }

    #[test]
    fn theta_from_alpha_examples() {
        for s in [0.2, 1.0, 1.8] {
            assert!(theta_from_alpha(&gauss(s), 0.5).unwrap().abs() < 1e-11);
        }
        // 1 - Phi(1) = 0.158655...; at 0.1587 the inverse is just below 1
        let t = theta_from_alpha(&gauss(1.0), 0.1587).unwrap();
        assert!((t - 0.999_815_093_614_744).abs() < 1e-9, "{t}");
        let t = theta_from_alpha(&gauss(1.8), 0.3906).unwrap();
        assert!((t - 0.499_960_024_989_425_3).abs() < 1e-9, "{t}");
        assert_eq!(theta_from_alpha(&gauss(1.0), 1.0).unwrap(), f64::NEG_INFINITY);
        assert!(theta_from_alpha(&gauss(1.0), 0.0).is_err());
        assert!(theta_from_alpha(&gauss(1.0), 1.2).is_err());
    }

    #[test]
    fn feasible_interval_matches_scan() {
        let p_c = DEFAULT_P_C;
        let iv = feasible_theta_interval(&gauss(1.8), p_c).unwrap().unwrap();
        // endpoints 1.8 * Phi^{-1}(1 - p_c) and 1 + 1.8 * Phi^{-1}(1 - p_c)
        assert!((iv.lo - -0.422_305_993_967_563_7).abs() < 1e-9, "{iv:?}");
        assert!((iv.hi - 0.577_694_006_032_436_3).abs() < 1e-9, "{iv:?}");
        let (a, b) = scan_feasible(&gauss(1.8), p_c, -2.0, 2.0, 1e-4).unwrap();
        assert!((a - iv.lo).abs() < 2e-4 && (b - iv.hi).abs() < 2e-4);
    }

    #[test]
    fn gaussian_interval_never_vanishes() {
        // For continuous strictly increasing noise the interval always has
        // unit width, whatever sigma is.
        let iv = feasible_theta_interval(&gauss(3.0), DEFAULT_P_C).unwrap().unwrap();
        assert!((iv.lo - -0.703_843_323_279_272_8).abs() < 1e-9, "{iv:?}");
        assert!((iv.hi - 0.296_156_676_720_727_2).abs() < 1e-9, "{iv:?}");
        assert!((iv.width() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_limit() {
        let iv = feasible_theta_interval(&gauss(1e-9), DEFAULT_P_C).unwrap().unwrap();
        assert!(iv.lo.abs() < 1e-8 && (iv.hi - 1.0).abs() < 1e-8, "{iv:?}");
        let (p_out, p_im) = percolation_probs(&gauss(1e-9), 0.5);
        assert_eq!((p_out, p_im), (0.0, 1.0));
    }

    fn flat_at_boundary() -> NoiseModel {
        // symmetric two-point noise at +-0.5; with p_c = 0.5 the background
        // needs theta >= 0.5 while the object needs theta < 0.5
        NoiseModel::empirical(EmpiricalTable::new([(-0.5, 0.5), (0.5, 1.0)], false).unwrap())
    }

    #[test]
    fn infeasible_noise_detected() {
        let m = flat_at_boundary();
        assert_eq!(feasible_theta_interval(&m, 0.5).unwrap(), None);
        assert!(scan_feasible(&m, 0.5, -3.0, 3.0, 1e-3).is_none());
        let err = optimize_theta(&m, 0.5, Objective::Sign, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert!(err.to_string().contains("noise not 1-small"));
    }

    #[test]
    fn table_interval_matches_scan() {
        let t = EmpiricalTable::new([(-1.0, 0.1), (-0.2, 0.45), (0.3, 0.8), (1.5, 1.0)], true).unwrap();
        let m = NoiseModel::empirical(t);
        let iv = feasible_theta_interval(&m, 0.6).unwrap().unwrap();
        let (a, b) = scan_feasible(&m, 0.6, -3.0, 3.0, 1e-4).unwrap();
        assert!((a - iv.lo).abs() < 2e-4 && (b - iv.hi).abs() < 2e-4, "{iv:?} vs ({a}, {b})");
    }

    #[test]
    fn sign_objective_returns_midpoint() {
        let theta = optimize_theta(&gauss(1.8), DEFAULT_P_C, Objective::Sign, 1e-3).unwrap();
        assert!((theta - 0.077_694_006_032_436_3).abs() < 1e-9, "{theta}");
        assert_eq!(objective_value(&gauss(1.8), DEFAULT_P_C, Objective::Sign, theta), 2.0);
    }

    #[test]
    fn quadratic_objective_small_noise() {
        let m = gauss(0.1);
        let theta = optimize_theta(&m, DEFAULT_P_C, Objective::Quadratic, 1e-3).unwrap();
        // independent dense scan of the objective over the feasible range
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for k in 0..=100_000 {
            let t = -0.02 + k as f64 * 1e-5;
            let (p_out, p_im) = percolation_probs(&m, t);
            if p_out < DEFAULT_P_C && DEFAULT_P_C < p_im {
                let v = (p_out - DEFAULT_P_C).powi(2) + (p_im - DEFAULT_P_C).powi(2);
                if v > best.1 {
                    best = (t, v);
                }
            }
        }
        assert!((theta - 0.5).abs() < 0.01, "{theta}");
        assert!((theta - best.0).abs() < 2e-3, "{theta} vs {}", best.0);
    }

    #[test]
    fn quadratic_stays_inside_interval() {
        for s in [0.5, 1.0, 1.8, 3.0] {
            let m = gauss(s);
            let iv = feasible_theta_interval(&m, DEFAULT_P_C).unwrap().unwrap();
            let t = optimize_theta(&m, DEFAULT_P_C, Objective::Quadratic, 1e-3).unwrap();
            assert!(iv.lo < t && t < iv.hi);
        }
        assert!(optimize_theta(&gauss(1.0), DEFAULT_P_C, Objective::Quadratic, 0.0).is_err());
    }

    #[test]
    fn percolation_probs_examples() {
        let (p_out, p_im) = percolation_probs(&gauss(1.8), 0.5);
        assert!((p_out - 0.390_591_475_433_575).abs() < 1e-12);
        assert!((p_im - 0.609_408_524_566_425).abs() < 1e-12);
        let (q, r) = percolation_probs(&gauss(1.0), 0.5);
        assert!((q + r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_config_json_keys() {
        let cfg = ThresholdConfig::new(&gauss(1.8), 0.5, DEFAULT_P_C).unwrap();
        assert!(cfg.is_feasible());
        let v: serde_json::Value = serde_json::to_value(cfg).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["alpha0", "p_c", "p_im", "p_out", "theta"]);
        let back: ThresholdConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        assert!(!ThresholdConfig::new(&gauss(3.0), 0.5, DEFAULT_P_C).unwrap().is_feasible());
        let from_alpha = ThresholdConfig::from_alpha(&gauss(1.8), 0.3906, DEFAULT_P_C).unwrap();
        assert_eq!(from_alpha.alpha0, 0.3906);
        assert!(from_alpha.p_out <= 0.3906);
    }

    #[test]
    fn apply_threshold_examples() {
        let bin = BinaryImage::from_rows(&["1001", "0110"]).unwrap();
        for theta in [1e-9, 0.3, 1.0] {
            assert_eq!(apply_threshold(&bin.to_gray(), theta), bin);
        }
        let flat = GrayImage::filled(3, 2, 0.25).unwrap();
        assert_eq!(apply_threshold(&flat, 0.25).count(Color::Black), 6);
        let g = GrayImage::new(2, 2, vec![0.4, 0.5, 0.6, -0.1]).unwrap();
        assert_eq!(apply_threshold(&g, 0.5), BinaryImage::from_rows(&["01", "10"]).unwrap());
    }

    fn gray_grid() -> impl Strategy<Value = GrayImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(-3.0f64..4.0, w * h)
                .prop_map(move |v| GrayImage::new(w, h, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn threshold_monotone(img in gray_grid(), a in -3.0f64..4.0, b in -3.0f64..4.0) {
            let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
            let low = apply_threshold(&img, t1);
            let high = apply_threshold(&img, t2);
            for (x, y) in low.bits().iter().zip(high.bits()) {
                prop_assert!(y <= x);
            }
            let m_low = crate::cluster::max_black_cluster(&low);
            let m_high = crate::cluster::max_black_cluster(&high);
            prop_assert!(m_high <= m_low);
        }

        #[test]
        fn threshold_idempotent(img in gray_grid(), t in -3.0f64..4.0, t2 in 1e-6f64..=1.0) {
            let once = apply_threshold(&img, t);
            prop_assert_eq!(apply_threshold(&once.to_gray(), t2), once);
        }

        #[test]
        fn alpha_consistency(s in 0.05f64..5.0, alpha0 in 1e-6f64..0.999) {
            let m = gauss(s);
            let theta = theta_from_alpha(&m, alpha0).unwrap();
            let rate = m.white_exceed_prob(theta);
            prop_assert!(rate <= alpha0);
            prop_assert!((rate - alpha0).abs() <= 1e-9);
        }

        #[test]
        fn feasibility_equivalence(s in 0.05f64..6.0, theta in -4.0f64..4.0) {
            let m = gauss(s);
            let iv = feasible_theta_interval(&m, DEFAULT_P_C).unwrap().unwrap();
            prop_assume!((theta - iv.lo).abs() > 1e-9 && (theta - iv.hi).abs() > 1e-9);
            let cfg = ThresholdConfig::new(&m, theta, DEFAULT_P_C).unwrap();
            prop_assert_eq!(iv.contains(theta), cfg.is_feasible());
        }
    }
}
