use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use percdetect::calibrate::{calibrate, CalibrationCache, CalibrationResult, DEFAULT_MARGIN};
use percdetect::cluster::{label_components_with, LabelOptions};
use percdetect::detect::{detect, estimate_tail_rate, DetectionConfig, PhiSource};
use percdetect::error::{Error, Result};
use percdetect::experiment::{crossing_outcomes, make_square_object, run_experiment, ExperimentSetup};
use percdetect::io::{self, ImageFormat};
use percdetect::lattice::{BinaryImage, Color};
use percdetect::noise::{EmpiricalTable, NoiseModel};
use percdetect::rng::parse_seed;
use percdetect::threshold::{
    apply_threshold, feasible_theta_interval, objective_value, optimize_theta, Objective, ThresholdConfig,
    DEFAULT_GRID_STEP, DEFAULT_P_C,
};
use percdetect::{count_disjoint_crossings, has_left_right_crossing};

#[derive(Parser)]
#[command(name = "percdetect", version, about = "Percolation-based object detection in noisy pictures")]
struct Cli {
    /// Critical site density.
    #[arg(long, global = true, env = "PD_PC")]
    pc: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct NoiseArgs {
    /// Noise scale for the gaussian model.
    #[arg(long)]
    sigma: Option<f64>,
    /// `gaussian`, or `table:PATH` for a CSV of (value, cumulative probability) rows.
    #[arg(long, default_value = "gaussian")]
    noise: String,
    /// Interpolate linearly between table points instead of using a step CDF.
    #[arg(long)]
    interpolate: bool,
}

impl NoiseArgs {
    fn model(&self) -> Result<NoiseModel> {
        match self.noise.as_str() {
            "gaussian" => {
                let sigma = self
                    .sigma
                    .ok_or_else(|| Error::invalid("--sigma is required for gaussian noise"))?;
                NoiseModel::gaussian(sigma)
            }
            spec => match spec.strip_prefix("table:") {
                Some(path) => Ok(NoiseModel::empirical(EmpiricalTable::from_csv_path(path, self.interpolate)?)),
                None => Err(Error::invalid(format!(
                    "unknown noise {spec:?}, expected gaussian or table:PATH"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Tail,
    Crossing,
}

#[derive(Subcommand)]
enum Command {
    /// Test one picture for an object.
    Detect {
        #[arg(long)]
        input: PathBuf,
        /// Image format; inferred from the extension when omitted.
        #[arg(long)]
        format: Option<ImageFormat>,
        /// Treat low samples as black.
        #[arg(long)]
        invert: bool,
        #[arg(long, conflicts_with = "auto_theta", required_unless_present = "auto_theta")]
        theta: Option<f64>,
        #[arg(long)]
        auto_theta: Option<Objective>,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        #[arg(long, conflicts_with = "calibrate", required_unless_present = "calibrate")]
        phi: Option<usize>,
        /// Derive phi from a null simulation at the picture's size.
        #[arg(long)]
        calibrate: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value = "0", value_parser = parse_seed)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write all black clusters of the thresholded picture as CSV.
        #[arg(long)]
        clusters_csv: Option<PathBuf>,
        #[arg(long, requires = "clusters_csv")]
        with_pixels: bool,
    },
    /// Monte Carlo null distribution of the largest black cluster.
    Calibrate {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, value_parser = parse_seed)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// One-column CSV of the simulated maxima.
        #[arg(long)]
        samples_csv: Option<PathBuf>,
    },
    /// Choose a threshold inside the feasible interval.
    OptimizeTheta {
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value = "quadratic")]
        objective: Objective,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Repeated detection on noisy copies of a known picture.
    Simulate {
        /// Binary PGM/CSV picture, or `square:SIDE@ROW,COL`.
        #[arg(long)]
        truth: String,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        phi: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        runs: usize,
        #[arg(long, value_parser = parse_seed)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-run outcomes as CSV.
        #[arg(long)]
        runs_csv: Option<PathBuf>,
    },
    /// Empirical checks of site percolation behaviour.
    PercolationCheck {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        replicates: usize,
        #[arg(long, value_parser = parse_seed)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit<T: Serialize>(report: &T, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => io::write_report(report, path),
        None => {
            print!("{}", io::to_canonical_json(report)?);
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_calibration(
    cache_dir: Option<&Path>,
    width: usize,
    height: usize,
    model: &NoiseModel,
    theta: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
    margin: f64,
) -> Result<CalibrationResult> {
    match cache_dir {
        Some(dir) => CalibrationCache::new(dir).calibrate(width, height, model, theta, alpha, replicates, seed, margin),
        None => calibrate(width, height, model, theta, alpha, replicates, seed, margin),
    }
}

/// Parses `square:SIDE@ROW,COL`.
fn parse_square(spec: &str) -> Option<(usize, usize, usize)> {
    let rest = spec.strip_prefix("square:")?;
    let (side, at) = rest.split_once('@')?;
    let (row, col) = at.split_once(',')?;
    Some((side.trim().parse().ok()?, row.trim().parse().ok()?, col.trim().parse().ok()?))
}

fn load_truth(spec: &str, width: Option<usize>, height: Option<usize>) -> Result<BinaryImage> {
    if spec.starts_with("square:") {
        let (side, row, col) = parse_square(spec)
            .ok_or_else(|| Error::invalid(format!("malformed square spec {spec:?}, expected square:SIDE@ROW,COL")))?;
        let (w, h) = match (width, height) {
            (Some(w), Some(h)) => (w, h),
            _ => return Err(Error::invalid("--width and --height are required for square truths")),
        };
        return make_square_object(w, h, side, (row, col));
    }
    let path = Path::new(spec);
    let gray = io::read_image(path, ImageFormat::from_path(path), false)?;
    if width.is_some_and(|w| w != gray.width()) || height.is_some_and(|h| h != gray.height()) {
        return Err(Error::invalid(format!(
            "truth is {}x{}, which contradicts --width/--height",
            gray.width(),
            gray.height()
        )));
    }
    let bits = gray
        .values()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            other => Err(Error::invalid(format!("truth pixel {other} is neither 0 nor 1"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    BinaryImage::new(gray.width(), gray.height(), bits)
}

#[derive(Serialize)]
struct ThetaReport {
    theta: f64,
    objective: Objective,
    objective_value: f64,
    interval: (f64, f64),
    p_c: f64,
    p_out: f64,
    p_im: f64,
    model: NoiseModel,
}

#[derive(Serialize)]
struct CrossingReport {
    p: f64,
    size: usize,
    replicates: usize,
    seed: u64,
    crossing_frequency: f64,
    mean_disjoint_crossings: f64,
}

fn run(cli: Cli) -> Result<()> {
    let p_c = cli.pc.unwrap_or(DEFAULT_P_C);
    match cli.command {
        Command::Detect {
            input,
            format,
            invert,
            theta,
            auto_theta,
            grid_step,
            phi,
            calibrate: _,
            alpha,
            noise,
            seed,
            replicates,
            margin,
            cache_dir,
            output,
            clusters_csv,
            with_pixels,
        } => {
            let model = noise.model()?;
            let format = format.unwrap_or_else(|| ImageFormat::from_path(&input));
            let image = io::read_image(&input, format, invert)?;
            let theta = match (theta, auto_theta) {
                (Some(t), _) => t,
                (None, Some(objective)) => optimize_theta(&model, p_c, objective, grid_step)?,
                (None, None) => unreachable!("clap requires one of --theta and --auto-theta"),
            };
            let threshold = ThresholdConfig::new(&model, theta, p_c)?;
            let (phi, source, calibration_seed) = match phi {
                Some(phi) => (phi, PhiSource::UserFixed, None),
                None => {
                    if !threshold.is_feasible() {
                        return Err(Error::Infeasible { p_c });
                    }
                    let cal = run_calibration(
                        cache_dir.as_deref(),
                        image.width(),
                        image.height(),
                        &model,
                        theta,
                        alpha,
                        replicates,
                        seed,
                        margin,
                    )?;
                    (cal.phi, PhiSource::Calibrated, Some(seed))
                }
            };
            let config = DetectionConfig::new(threshold, phi, alpha, source)?;
            let mut result = detect(&image, &config)?;
            result.seed = calibration_seed;
            if let Some(path) = clusters_csv {
                let binary = apply_threshold(&image, theta);
                let labeling = label_components_with(&binary, Color::Black, LabelOptions { keep_pixels: with_pixels });
                io::write_atomic(path, io::clusters_csv(&labeling, with_pixels).as_bytes())?;
            }
            emit(&result, output.as_deref())
        }
        Command::Calibrate {
            width,
            height,
            noise,
            theta,
            alpha,
            replicates,
            seed,
            margin,
            cache_dir,
            output,
            samples_csv,
        } => {
            let model = noise.model()?;
            if !ThresholdConfig::new(&model, theta, p_c)?.is_feasible() {
                eprintln!("warning: theta = {theta} is outside the feasible interval for p_c = {p_c}");
            }
            let cal = run_calibration(
                cache_dir.as_deref(),
                width,
                height,
                &model,
                theta,
                alpha,
                replicates,
                seed,
                margin,
            )?;
            if let Some(path) = samples_csv {
                io::write_atomic(path, io::samples_csv(&cal.samples).as_bytes())?;
            }
            emit(&cal, output.as_deref())
        }
        Command::OptimizeTheta {
            noise,
            objective,
            grid_step,
            output,
        } => {
            let model = noise.model()?;
            let theta = optimize_theta(&model, p_c, objective, grid_step)?;
            let interval = feasible_theta_interval(&model, p_c)?.ok_or(Error::Infeasible { p_c })?;
            let t = ThresholdConfig::new(&model, theta, p_c)?;
            let report = ThetaReport {
                theta,
                objective,
                objective_value: objective_value(&model, p_c, objective, theta),
                interval: (interval.lo, interval.hi),
                p_c,
                p_out: t.p_out,
                p_im: t.p_im,
                model,
            };
            emit(&report, output.as_deref())
        }
        Command::Simulate {
            truth,
            width,
            height,
            noise,
            theta,
            phi,
            alpha,
            runs,
            seed,
            output,
            runs_csv,
        } => {
            let model = noise.model()?;
            let image = load_truth(&truth, width, height)?;
            let threshold = ThresholdConfig::new(&model, theta, p_c)?;
            let setup = ExperimentSetup {
                truth: image,
                truth_descriptor: truth,
                model,
                detection: DetectionConfig::new(threshold, phi, alpha, PhiSource::UserFixed)?,
            };
            let outcome = run_experiment(&setup, runs, seed)?;
            eprintln!(
                "{} of {} runs detected; mean detect time {:.3} ms",
                outcome.report.detections,
                outcome.report.runs,
                outcome.report.mean_elapsed.as_secs_f64() * 1e3
            );
            if let Some(path) = runs_csv {
                io::write_atomic(path, io::runs_csv(&outcome.records).as_bytes())?;
            }
            emit(&outcome.report, output.as_deref())
        }
        Command::PercolationCheck {
            mode,
            p,
            size,
            replicates,
            seed,
            output,
        } => match mode {
            Mode::Tail => {
                let fit = estimate_tail_rate(p, size, replicates, seed, p_c)?.ok_or_else(|| {
                    Error::invalid(format!(
                        "fewer than two cluster sizes have survival probability in the fitting band at p = {p}"
                    ))
                })?;
                emit(&fit, output.as_deref())
            }
            Mode::Crossing => {
                let outcomes = crossing_outcomes(p, size, replicates, seed, |img| {
                    (has_left_right_crossing(img), count_disjoint_crossings(img))
                })?;
                let n = replicates as f64;
                let report = CrossingReport {
                    p,
                    size,
                    replicates,
                    seed,
                    crossing_frequency: outcomes.iter().filter(|o| o.0).count() as f64 / n,
                    mean_disjoint_crossings: outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / n,
                };
                emit(&report, output.as_deref())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Infeasible { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
