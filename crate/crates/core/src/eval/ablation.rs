//! Data-ablation driver: how much calibration data does the regressor
//! actually need?
//!
//! For each training fraction P the driver draws a split (every fraction
//! shares one validation holdout, so distributions are comparable), scales
//! the epoch budget so each run sees the same number of gradient steps per
//! training sample, trains a fresh model, and scores per-coordinate
//! validation MSE. Each fraction is then tested against the reference
//! (largest) fraction with Welch's t and Mann–Whitney U under the
//! Bonferroni-corrected threshold. Fractions are independent, so their
//! trainings run in parallel.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::probe_plan::split_plan;
use crate::rng::derive_seed;
use crate::touchnet::{train, LossHistory, TouchNetConfig, TouchNetModel, TrainConfig};
use crate::{plot, Error, Result};

use super::stats::{self, mann_whitney_u, welch_t_test, TestResult};
use super::{per_coordinate_mse, MseDistribution, MSE_KDE_BANDWIDTH};

/// Everything one ablation run needs beyond the dataset.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Training fractions, each in (0, 0.8]. The largest is the reference
    /// the others are tested against.
    pub fractions: Vec<f64>,
    /// Base seed: drives the shared validation holdout, the per-fraction
    /// subset draws, and each run's initialization and shuffling.
    pub seed: u64,
    /// Template optimizer settings. `epochs` is the budget at the
    /// reference fraction of 80% and is scaled up for smaller fractions.
    pub train: TrainConfig,
    pub network: TouchNetConfig,
    /// Restrict scoring to probes whose centre lies inside the camera
    /// window.
    pub fov_filter: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            fractions: vec![0.80, 0.40, 0.20, 0.10, 0.05, 0.01],
            seed: 0,
            train: TrainConfig::default(),
            network: TouchNetConfig::default(),
            fov_filter: true,
        }
    }
}

/// Location tests of one fraction's MSE distribution against the
/// reference's.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTests {
    pub welch: TestResult,
    pub mann_whitney: TestResult,
}

/// One trained fraction.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub fraction_p: f64,
    pub epochs: usize,
    /// The seed this row's training actually used.
    pub seed: u64,
    pub model: TouchNetModel<f32>,
    pub history: LossHistory,
    pub distribution: MseDistribution,
    /// `None` on the reference row.
    pub tests: Option<AblationTests>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    /// Rows in the order the fractions were given.
    pub rows: Vec<AblationRow>,
    pub reference_index: usize,
}

impl AblationReport {
    pub fn reference(&self) -> &AblationRow {
        &self.rows[self.reference_index]
    }
}

/// Epoch budget for fraction `p` given the budget at the 80% reference:
/// `round(base · 0.8 / p)`, keeping gradient steps per training sample
/// constant. At the default base of 60 this yields 60, 120, 240, 480, 960,
/// 4800 for 80%, 40%, 20%, 10%, 5%, 1%.
pub fn scaled_epochs(base: usize, p: f64) -> usize {
    ((base as f64 * 0.8 / p).round() as usize).max(1)
}

fn pct(p: f64) -> String {
    let v = p * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}%", v.round() as i64)
    } else {
        format!("{v:.2}%")
    }
}

/// Keeps the error's class (and thus exit code) while recording which
/// fraction failed.
fn annotate(p: f64, e: Error) -> Error {
    let tag = pct(p);
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("P={tag}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("P={tag}: {m}")),
        Error::Format(m) => Error::Format(format!("P={tag}: {m}")),
        other => other,
    }
}

/// Trains and scores every fraction, tests each against the reference, and
/// (when `out_dir` is given) writes the CSV, PNG, and text artifacts.
pub fn run_ablation(
    dataset: &Dataset,
    config: &AblationConfig,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if config.fractions.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one training fraction".into(),
        ));
    }
    for &p in &config.fractions {
        if !(p > 0.0 && p <= 0.8) {
            return Err(Error::InvalidArgument(format!(
                "training fractions must lie in (0, 0.8], got {p}"
            )));
        }
    }
    config.train.validate()?;
    config.network.validate()?;

    let runs: Vec<(usize, f64)> =
        config.fractions.iter().copied().enumerate().collect();
    let mut rows: Vec<AblationRow> = runs
        .par_iter()
        .map(|&(i, p)| -> Result<AblationRow> {
            let split = split_plan(&dataset.plan, p, config.seed).map_err(|e| annotate(p, e))?;
            let run_seed = derive_seed(config.seed, "ablation/run", &[i as u64, p.to_bits()]);
            let cfg = TrainConfig {
                epochs: scaled_epochs(config.train.epochs, p),
                seed: run_seed,
                ..config.train.clone()
            };
            log::info!(
                "ablation P={}: {} training coordinates, {} epochs",
                pct(p),
                split.train_indices.len(),
                cfg.epochs
            );
            let model = TouchNetModel::<f32>::init(&config.network, run_seed)
                .map_err(|e| annotate(p, e))?;
            let (model, history) =
                train(model, dataset, &split, &cfg).map_err(|e| annotate(p, e))?;
            let distribution =
                per_coordinate_mse(&model, dataset, &split.val_indices, config.fov_filter)
                    .map_err(|e| annotate(p, e))?;
            Ok(AblationRow {
                fraction_p: p,
                epochs: cfg.epochs,
                seed: run_seed,
                model,
                history,
                distribution,
                tests: None,
            })
        })
        .collect::<Result<_>>()?;

    // Reference: the largest fraction (first occurrence on ties).
    let reference_index = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.fraction_p.partial_cmp(&b.1.fraction_p).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("validated non-empty");
    let ref_values = rows[reference_index].distribution.values.clone();
    for (i, row) in rows.iter_mut().enumerate() {
        if i == reference_index {
            continue;
        }
        row.tests = Some(AblationTests {
            welch: welch_t_test(&row.distribution.values, &ref_values)
                .map_err(|e| annotate(row.fraction_p, e))?,
            mann_whitney: mann_whitney_u(&row.distribution.values, &ref_values)
                .map_err(|e| annotate(row.fraction_p, e))?,
        });
    }

    let report = AblationReport { rows, reference_index };
    if let Some(dir) = out_dir {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_artifacts(report: &AblationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    // Loss curves, long format.
    let mut s = String::from("fraction,epoch,train_mse,val_mse\n");
    for row in &report.rows {
        for (e, (t, v)) in row.history.train_mse.iter().zip(&row.history.val_mse).enumerate() {
            s.push_str(&format!("{},{},{:.9},{:.9}\n", row.fraction_p, e + 1, t, v));
        }
    }
    write_file(&dir.join("loss_curves.csv"), &s)?;

    // Per-coordinate MSE values.
    let mut s = String::from("fraction,index,mse\n");
    for row in &report.rows {
        for (i, v) in row.distribution.values.iter().enumerate() {
            s.push_str(&format!("{},{},{:.9}\n", row.fraction_p, i, v));
        }
    }
    write_file(&dir.join("mse_values.csv"), &s)?;

    // Distribution summaries.
    let mut s = String::from("fraction,epochs,coordinates,mean_mse,std_mse\n");
    for row in &report.rows {
        s.push_str(&format!(
            "{},{},{},{:.9},{:.9}\n",
            row.fraction_p,
            row.epochs,
            row.distribution.values.len(),
            row.distribution.mean,
            row.distribution.std
        ));
    }
    write_file(&dir.join("mse_summary.csv"), &s)?;

    // KDE curves plus the histogram reading of the same bin width.
    let mut s = String::from("fraction,mse,density\n");
    for row in &report.rows {
        for (x, d) in row.distribution.kde.support.iter().zip(&row.distribution.kde.density) {
            s.push_str(&format!("{},{:.9},{:.6}\n", row.fraction_p, x, d));
        }
    }
    write_file(&dir.join("mse_kde.csv"), &s)?;
    let mut s = String::from("fraction,bin_left,bin_right,count,density\n");
    for row in &report.rows {
        let h = stats::histogram(&row.distribution.values, MSE_KDE_BANDWIDTH)?;
        for (i, (&c, d)) in h.counts.iter().zip(h.density()).enumerate() {
            s.push_str(&format!(
                "{},{:.9},{:.9},{},{:.6}\n",
                row.fraction_p,
                h.edge(i),
                h.edge(i + 1),
                c,
                d
            ));
        }
    }
    write_file(&dir.join("mse_hist.csv"), &s)?;

    // Significance tests.
    let reference_p = report.reference().fraction_p;
    let mut s = String::from("fraction,reference,test,statistic,p_value,significant\n");
    for row in &report.rows {
        if let Some(tests) = &row.tests {
            for (name, t) in [("welch_t", &tests.welch), ("mann_whitney_u", &tests.mann_whitney)] {
                s.push_str(&format!(
                    "{},{},{},{:.6},{:.6e},{}\n",
                    row.fraction_p, reference_p, name, t.statistic, t.p_value, t.significant
                ));
            }
        }
    }
    write_file(&dir.join("significance.csv"), &s)?;

    write_plots(report, dir)?;
    write_file(&dir.join("summary.txt"), &summary_text(report))
}

fn write_plots(report: &AblationReport, dir: &Path) -> Result<()> {
    let val_series: Vec<plot::LineSeries> = report
        .rows
        .iter()
        .map(|row| plot::LineSeries {
            label: format!("P={}", pct(row.fraction_p)),
            xs: (1..=row.history.val_mse.len()).map(|e| e as f64).collect(),
            ys: row.history.val_mse.clone(),
        })
        .collect();
    plot::multi_line(
        &dir.join("loss_curves.png"),
        "validation mse by epoch",
        "epoch",
        "mse",
        &val_series,
        true,
    )?;

    let kde_series: Vec<plot::LineSeries> = report
        .rows
        .iter()
        .map(|row| plot::LineSeries {
            label: format!("P={}", pct(row.fraction_p)),
            xs: row.distribution.kde.support.clone(),
            ys: row.distribution.kde.density.clone(),
        })
        .collect();
    plot::multi_line(
        &dir.join("mse_kde.png"),
        "per-coordinate mse density",
        "mse",
        "density",
        &kde_series,
        false,
    )?;

    // Mean ± σ and σ alone versus fraction, in ascending-P order.
    let mut order: Vec<&AblationRow> = report.rows.iter().collect();
    order.sort_by(|a, b| a.fraction_p.partial_cmp(&b.fraction_p).unwrap());
    let xs: Vec<f64> = order.iter().map(|r| r.fraction_p * 100.0).collect();
    let means: Vec<f64> = order.iter().map(|r| r.distribution.mean).collect();
    let stds: Vec<f64> = order.iter().map(|r| r.distribution.std).collect();
    plot::error_bar_line(
        &dir.join("mse_mean.png"),
        "validation mse vs training fraction",
        "training fraction (%)",
        "mean mse",
        &xs,
        &means,
        &stds,
    )?;
    plot::multi_line(
        &dir.join("mse_sigma.png"),
        "mse spread vs training fraction",
        "training fraction (%)",
        "sigma",
        &[plot::LineSeries { label: "sigma".into(), xs, ys: stds }],
        false,
    )
}

fn summary_text(report: &AblationReport) -> String {
    let reference = report.reference();
    let mut s = String::new();
    s.push_str("data-ablation report\n");
    s.push_str(&format!(
        "reference fraction {} ({} validation coordinates)\n",
        pct(reference.fraction_p),
        reference.distribution.values.len()
    ));
    s.push_str(&format!(
        "significance threshold p < {} (alpha {}, {} comparisons, Bonferroni)\n\n",
        stats::corrected_alpha(),
        stats::SIGNIFICANCE_ALPHA,
        stats::BONFERRONI_M
    ));
    for row in &report.rows {
        s.push_str(&format!(
            "P={:>4}: epochs {:>5}, final val mse {:.6}, per-coordinate mean {:.6}, sigma {:.6}",
            pct(row.fraction_p),
            row.epochs,
            row.history.val_mse.last().copied().unwrap_or(f64::NAN),
            row.distribution.mean,
            row.distribution.std
        ));
        match &row.tests {
            None => s.push_str("  [reference]\n"),
            Some(t) => s.push_str(&format!(
                "  welch p={:.3e}{}, mwu p={:.3e}{}\n",
                t.welch.p_value,
                if t.welch.significant { " *" } else { "" },
                t.mann_whitney.p_value,
                if t.mann_whitney.significant { " *" } else { "" },
            )),
        }
    }
    s.push_str("\n'*' marks a significant difference from the reference.\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GradientMap, TactileImage};
    use crate::probe_plan::{PlanSplit, ProbePlan, ProbePoint};
    use crate::rng::rng_from;
    use crate::sensor_sim::SensorGeometry;
    use crate::touchnet::epochs_for_fraction;
    use rand::Rng;

    #[test]
    fn epoch_scaling_reproduces_the_canonical_budgets() {
        let expect = [(0.80, 60), (0.40, 120), (0.20, 240), (0.10, 480), (0.05, 960), (0.01, 4800)];
        for (p, n) in expect {
            assert_eq!(scaled_epochs(60, p), n, "P = {p}");
            assert_eq!(epochs_for_fraction(p).unwrap(), n);
        }
        // A smaller base budget scales the same way.
        assert_eq!(scaled_epochs(2, 0.4), 4);
        assert_eq!(scaled_epochs(1, 0.8), 1);
    }

    #[test]
    fn percent_labels_trim_cleanly() {
        assert_eq!(pct(0.8), "80%");
        assert_eq!(pct(0.05), "5%");
        assert_eq!(pct(0.125), "12.50%");
    }

    /// A trainable toy dataset: `n` probe coordinates, one 8×8 frame each,
    /// labels drawn from a smooth family so a tiny network can reduce the
    /// loss within a few epochs.
    fn toy_dataset(n: usize) -> crate::dataset::Dataset {
        let geometry = SensorGeometry {
            rows: 8,
            cols: 8,
            pitch_mm: 0.2,
            extent_mm: (16.0, 18.0),
            fov_offset_mm: (0.0, 3.0),
        };
        let mut points = Vec::new();
        let mut samples = Vec::new();
        for i in 0..n {
            let p = ProbePoint {
                x_mm: 0.2 + 1.3 * (i % 4) as f64,
                y_mm: 3.2 + 0.9 * (i / 4) as f64,
                depth_mm: 0.4,
            };
            points.push(p);
            let mut rng = rng_from(derive_seed(17, "ablation-toy", &[i as u64]));
            let pixels: Vec<u8> = (0..8 * 8 * 3).map(|_| rng.gen()).collect();
            let phase = i as f64 * 0.7;
            let gx: Vec<f64> = (0..64).map(|k| 0.05 * ((k as f64 * 0.2 + phase).sin())).collect();
            let gy: Vec<f64> = (0..64).map(|k| 0.05 * ((k as f64 * 0.13 - phase).cos())).collect();
            let mut label = GradientMap::new(8, 8, gx, gy).unwrap();
            label.quantize_f32();
            samples.push(crate::dataset::Sample {
                image: TactileImage::new(8, 8, pixels).unwrap(),
                label,
                probe: p,
                frame_depth_mm: 0.4,
                plan_index: i,
            });
        }
        crate::dataset::Dataset {
            geometry,
            probe_radius_mm: 2.0,
            seed: 0,
            plan: ProbePlan {
                points,
                spacing_mm: 1.0,
                extent_mm: (16.0, 18.0),
                frames_per_indent: 1,
            },
            split: PlanSplit {
                train_indices: vec![],
                val_indices: vec![],
                fraction_p: 0.8,
                seed: 0,
            },
            illumination_sha256: None,
            samples,
        }
    }

    #[test]
    fn two_fraction_run_produces_one_comparison_and_artifacts() {
        let dataset = toy_dataset(20);
        let config = AblationConfig {
            fractions: vec![0.8, 0.4],
            seed: 5,
            train: TrainConfig {
                epochs: 2,
                batch_size: 4,
                val_every: 1,
                ..TrainConfig::default()
            },
            network: TouchNetConfig {
                dropout_p: 0.0,
                ..TouchNetConfig::narrow(2)
            },
            fov_filter: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let report = run_ablation(&dataset, &config, Some(dir.path())).unwrap();

        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.reference_index, 0);
        assert!(report.rows[0].tests.is_none());
        let tests = report.rows[1].tests.as_ref().expect("comparison row");
        assert!((0.0..=1.0).contains(&tests.welch.p_value));
        assert!((0.0..=1.0).contains(&tests.mann_whitney.p_value));
        assert_eq!(report.rows[0].epochs, 2);
        assert_eq!(report.rows[1].epochs, 4);
        // Both rows scored the same holdout coordinates.
        assert_eq!(
            report.rows[0].distribution.values.len(),
            report.rows[1].distribution.values.len()
        );
        // Histories have exactly one entry per epoch.
        assert_eq!(report.rows[1].history.val_mse.len(), 4);

        for f in [
            "loss_curves.csv",
            "mse_values.csv",
            "mse_summary.csv",
            "mse_kde.csv",
            "mse_hist.csv",
            "significance.csv",
            "loss_curves.png",
            "mse_kde.png",
            "mse_mean.png",
            "mse_sigma.png",
            "summary.txt",
        ] {
            assert!(dir.path().join(f).exists(), "missing artifact {f}");
        }
        let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.contains("P= 80%") || summary.contains("P=80%"), "{summary}");
        assert!(summary.contains("[reference]"));
    }

    #[test]
    fn ablation_is_deterministic_across_runs() {
        let dataset = toy_dataset(12);
        let config = AblationConfig {
            fractions: vec![0.8, 0.2],
            seed: 9,
            train: TrainConfig {
                epochs: 1,
                batch_size: 4,
                ..TrainConfig::default()
            },
            network: TouchNetConfig {
                dropout_p: 0.0,
                ..TouchNetConfig::narrow(1)
            },
            fov_filter: false,
        };
        let a = run_ablation(&dataset, &config, None).unwrap();
        let b = run_ablation(&dataset, &config, None).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.history.train_mse, rb.history.train_mse);
            assert_eq!(ra.distribution.values, rb.distribution.values);
            assert_eq!(ra.model.to_bytes(), rb.model.to_bytes());
        }
    }

    #[test]
    fn failures_name_the_fraction() {
        // No samples at all: the first training must fail, annotated.
        let mut dataset = toy_dataset(10);
        dataset.samples.clear();
        let config = AblationConfig {
            fractions: vec![0.8],
            train: TrainConfig { epochs: 1, ..TrainConfig::default() },
            network: TouchNetConfig::narrow(1),
            ..AblationConfig::default()
        };
        let err = run_ablation(&dataset, &config, None).unwrap_err();
        assert!(err.to_string().contains("P=80%"), "{err}");
    }

    #[test]
    fn out_of_range_fractions_are_rejected() {
        let dataset = toy_dataset(4);
        for bad in [0.0, -0.1, 0.81, f64::NAN] {
            let config = AblationConfig {
                fractions: vec![bad],
                ..AblationConfig::default()
            };
            assert!(run_ablation(&dataset, &config, None).is_err(), "fraction {bad}");
        }
    }
}
