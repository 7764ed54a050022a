//! Detecting objects in very noisy black-and-white pictures through
//! percolation clusters.
//!
//! A picture is observed as `Y = Im + noise`, with `Im` in {0, 1} per pixel
//! (1 for black). Thresholding the observations turns pure noise into
//! subcritical site percolation, while an object region becomes
//! supercritical. The detector reports an object when the thresholded
//! picture has a black cluster of at least `phi` pixels.
//!
//! ```
//! use percdetect::{
//!     add_noise, detect, make_square_object, DetectionConfig, NoiseModel, PhiSource,
//!     ThresholdConfig, DEFAULT_P_C,
//! };
//!
//! let model = NoiseModel::gaussian(1.8).unwrap();
//! let truth = make_square_object(64, 64, 40, (12, 12)).unwrap();
//! let noisy = add_noise(&truth, &model, 7);
//! let threshold = ThresholdConfig::new(&model, 0.5, DEFAULT_P_C).unwrap();
//! let config = DetectionConfig::new(threshold, 150, 0.05, PhiSource::UserFixed).unwrap();
//! let result = detect(&noisy, &config).unwrap();
//! assert_eq!(result.phi_used, 150);
//! ```

pub mod calibrate;
pub mod cluster;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lattice;
pub mod noise;
pub mod rng;
pub mod threshold;

pub use calibrate::{calibrate, CalibrationCache, CalibrationResult, DEFAULT_MARGIN};
pub use cluster::{
    count_disjoint_crossings, find_cluster_at_least, has_left_right_crossing, label_components,
    max_black_cluster, BoundingBox, Cluster, ClusterLabeling, ClusterScratch,
};
pub use detect::{
    detect, estimate_tail_rate, false_detection_bound, DetectionConfig, DetectionResult, PhiSource,
    TailFit,
};
pub use error::{Error, Result};
pub use experiment::{
    add_noise, crossing_probability, make_square_object, run_experiment, wilson_interval,
    ExperimentReport, ExperimentSetup,
};
pub use lattice::{BinaryImage, Color, GrayImage};
pub use noise::{EmpiricalTable, NoiseModel};
pub use threshold::{
    apply_threshold, feasible_theta_interval, optimize_theta, FeasibleInterval, Objective,
    ThresholdConfig, DEFAULT_P_C,
};
