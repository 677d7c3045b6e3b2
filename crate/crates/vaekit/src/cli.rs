//! Command-line surface: `train`, `sweep`, `metrics`, `probe`, `traverse`.
//!
//! Every command reads one declarative config file, validates it fully
//! before doing any work, writes all artifacts (plus a copy of the resolved
//! config) into a single output directory, and refuses to reuse a non-empty
//! output directory unless `--force` is passed.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array4, Axis};

use crate::config::{prepare_output_dir, write_resolved_config, ExperimentConfig};
use crate::datasets::gather_images;
use crate::metrics::{compute_metric_report, linear_probe, FactorCodes, MetricParams};
use crate::models::{load_checkpoint, save_checkpoint, Vae};
use crate::plotting;
use crate::rd_analysis::{
    check_lemma1, check_lemma1_median, sandwich_check, sweep, write_rd_table, HyperKind,
    Lemma1Report, SweepOutcome, SweepSpec,
};
use crate::trainer::{
    default_traversal_grid, emit_traversals, mean_per_dim_kl, train, ACTIVE_DIM_THRESHOLD,
};
use crate::{datasets::split_indices, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "vaekit",
    version,
    about = "Train small VAEs, sweep rate/distortion operating points, and score disentanglement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Seed override (training seed, or report seed for metrics/probe).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Allow writing into an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker bound for independent sweep cells.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and emit checkpoint, training log, and plots.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one model per hyperparameter value and seed, then check the
    /// rate/distortion ordering.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Which hyperparameter to sweep: beta or c.
        #[arg(long)]
        hyper: String,
        /// Comma-separated hyperparameter values (at least two).
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Posterior draws per example for distortion measurement.
        #[arg(long, default_value_t = 8)]
        eval_samples: usize,
    },
    /// Encode a factor dataset with a checkpoint and run the six
    /// disentanglement metrics.
    Metrics {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fit a linear classifier on frozen codes of a labeled dataset.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training fraction of the split (the rest is the test set).
        #[arg(long, default_value_t = 0.7)]
        split: f64,
    },
    /// Emit latent traversal frames for one image.
    Traverse {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index of the source image within the configured dataset.
        #[arg(long, default_value_t = 0)]
        image_index: usize,
        /// Comma-separated grid values (default: 11 points over [-2, 2]).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => cmd_train(&common),
        Command::Sweep {
            common,
            hyper,
            values,
            seeds,
            eval_samples,
        } => cmd_sweep(&common, &hyper, &values, &seeds, eval_samples),
        Command::Metrics { common, checkpoint } => cmd_metrics(&common, &checkpoint),
        Command::Probe {
            common,
            checkpoint,
            split,
        } => cmd_probe(&common, &checkpoint, split),
        Command::Traverse {
            common,
            checkpoint,
            image_index,
            grid,
        } => cmd_traverse(&common, &checkpoint, image_index, grid.as_deref()),
    }
}

/// Loads the config, applies overrides, and prepares the output directory.
fn setup(common: &CommonArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    let output_dir = common
        .output
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| {
            Error::Config("no output directory: set output_dir in the config or pass --output".into())
        })?;
    config.output_dir = Some(output_dir.clone());
    prepare_output_dir(&output_dir, common.force)?;
    write_resolved_config(&config, &output_dir)?;
    Ok((config, output_dir))
}

/// Posterior-mean codes for a whole image set, encoded in chunks.
pub fn posterior_mean_codes(vae: &Vae<f32>, images: &Array4<f32>) -> Result<Array2<f64>> {
    let n = images.dim().0;
    let latent = vae.arch().latent_dim;
    let mut codes = Array2::<f64>::zeros((n, latent));
    const CHUNK: usize = 256;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let out = vae.encode(&gather_images(images, &idx))?;
        for (row, i) in (start..end).enumerate() {
            for d in 0..latent {
                codes[[i, d]] = out.mean[[row, d]] as f64;
            }
        }
        start = end;
    }
    Ok(codes)
}

pub fn cmd_train(common: &CommonArgs) -> Result<()> {
    let (config, out_dir) = setup(common)?;
    let dataset = config.dataset.load()?;
    let objective = config.objective.to_config()?;

    let result = train(
        &config.model,
        &objective,
        &config.train,
        dataset.images(),
        Some(&out_dir),
    )?;
    save_checkpoint(&out_dir.join("checkpoint.ckpt"), &result.vae, config.train.steps as u64)?;
    result.log.write_ndjson(&out_dir.join("training_log.ndjson"))?;
    plotting::plot_per_dim_kl(&result.log, &out_dir.join("per_dim_kl.svg"))?;
    plotting::plot_elbo_and_distortion_vs_hyper(&result.log, &out_dir.join("elbo_vs_hyper.svg"))?;

    if let Some(last) = result.log.records.last() {
        println!(
            "trained {} steps: total {:.4}, distortion {:.4}, rate {:.4} (artifacts in {})",
            config.train.steps,
            last.total,
            last.distortion,
            last.rate,
            out_dir.display()
        );
    }
    Ok(())
}

fn write_verdict_file(
    path: &Path,
    report: &Lemma1Report,
    outcome: &SweepOutcome,
    pixel_count: usize,
    likelihood: &crate::distributions::LikelihoodSpec,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "hyper_kind = {}", report.hyper_kind)?;
    writeln!(w, "verdict = {}", if report.holds { "HOLD" } else { "VIOLATED" })?;
    writeln!(w, "aggregated_over_seeds = {}", report.aggregated_over_seeds)?;
    writeln!(w, "curve:")?;
    for (v, r, d) in &report.curve {
        writeln!(w, "  value={v} rate={r} distortion={d}")?;
    }
    writeln!(w, "violations: {}", report.violations.len())?;
    for v in &report.violations {
        writeln!(
            w,
            "  {} not strictly ordered between value {} and {}: magnitude {}",
            v.quantity, v.lower_value, v.higher_value, v.magnitude
        )?;
    }
    writeln!(w, "failed_cells: {}", outcome.failures.len())?;
    for f in &outcome.failures {
        writeln!(w, "  value={} seed={}: {}", f.hyper_value, f.seed, f.message)?;
    }
    writeln!(w, "entropy_sandwich (informational):")?;
    for p in &outcome.points {
        let s = sandwich_check(p, pixel_count, likelihood);
        match (s.entropy_upper_proxy, s.h_minus_d) {
            (Some(h), Some(hd)) => writeln!(
                w,
                "  value={} seed={}: proxy_H={h:.3} H-D={hd:.3} rate={:.3} (H-D <= rate: {})",
                p.hyper_value,
                p.seed,
                p.rate,
                s.inequality_with_proxy_holds.unwrap_or(false)
            )?,
            _ => writeln!(
                w,
                "  value={} seed={}: no entropy proxy for this likelihood",
                p.hyper_value, p.seed
            )?,
        }
    }
    Ok(())
}

pub fn cmd_sweep(
    common: &CommonArgs,
    hyper: &str,
    values: &[f64],
    seeds: &[u64],
    eval_samples: usize,
) -> Result<()> {
    let kind: HyperKind = hyper.parse()?;
    let (config, out_dir) = setup(common)?;
    if kind == HyperKind::C && config.objective.gamma.is_none() {
        return Err(Error::Config(
            "sweeping c needs objective.gamma set in the config".into(),
        ));
    }
    let dataset = config.dataset.load()?;
    let objective = config.objective.to_config()?;

    let spec = SweepSpec {
        kind,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        arch: config.model.clone(),
        objective,
        train: config.train.clone(),
        eval_samples,
        workers: common.workers.max(1),
    };
    let outcome = sweep(&spec, dataset.images())?;
    if outcome.points.is_empty() {
        return Err(Error::Training {
            step: 0,
            reason: format!(
                "every sweep cell failed; first failure: {}",
                outcome.failures.first().map(|f| f.message.as_str()).unwrap_or("none")
            ),
        });
    }

    write_rd_table(&out_dir.join("sweep.csv"), &outcome.points)?;
    let report = if seeds.len() > 1 {
        check_lemma1_median(&outcome.points)?
    } else {
        check_lemma1(&outcome.points)?
    };
    let pixel_count = config.model.pixel_count();
    let likelihood = config.objective.likelihood_spec()?;
    write_verdict_file(
        &out_dir.join("verdict.txt"),
        &report,
        &outcome,
        pixel_count,
        &likelihood,
    )?;
    plotting::plot_rd_scatter(&outcome.points, &out_dir.join("rd_scatter.svg"))?;
    plotting::plot_quantity_vs_value(
        &outcome.points,
        |p| p.elbo,
        "elbo",
        &out_dir.join("elbo_vs_value.svg"),
    )?;
    plotting::plot_quantity_vs_value(
        &outcome.points,
        |p| p.distortion,
        "distortion",
        &out_dir.join("distortion_vs_value.svg"),
    )?;

    println!(
        "sweep complete: {} points, {} failures, ordering {} (artifacts in {})",
        outcome.points.len(),
        outcome.failures.len(),
        if report.holds { "HOLD" } else { "VIOLATED" },
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_metrics(common: &CommonArgs, checkpoint: &Path) -> Result<()> {
    let (config, out_dir) = setup(common)?;
    let dataset = config.dataset.load()?;
    let factor = dataset.require_factors()?;
    let (vae, _) = load_checkpoint(checkpoint)?;
    let (_, _, h, w) = factor.images.dim();
    if h != vae.arch().image_side || w != vae.arch().image_side {
        return Err(Error::shape(
            format!("checkpoint expects {0}x{0} images", vae.arch().image_side),
            format!("dataset provides {h}x{w}"),
        ));
    }

    let codes = posterior_mean_codes(&vae, &factor.images)?;
    let fc = FactorCodes::new(codes, factor.factor_values.clone(), factor.factor_sizes.clone())?;
    let params = MetricParams::with_seed(common.seed.unwrap_or(0));
    let report = compute_metric_report(&fc, &params)?;
    report.write_flat(&out_dir.join("metrics_report.txt"))?;

    for (name, value) in report.scores() {
        println!("{name} = {value:.4}");
    }
    println!("report written to {}", out_dir.join("metrics_report.txt").display());
    Ok(())
}

pub fn cmd_probe(common: &CommonArgs, checkpoint: &Path, split: f64) -> Result<()> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Config(format!(
            "--split must lie strictly between 0 and 1 (got {split}); 1.0 would leave an empty test set"
        )));
    }
    let (config, out_dir) = setup(common)?;
    let dataset = config.dataset.load()?;
    let labeled = dataset.require_labels()?;
    if labeled.n_classes < 2 {
        return Err(Error::Config(
            "probe needs at least 2 classes in the dataset".into(),
        ));
    }
    let (vae, _) = load_checkpoint(checkpoint)?;
    let codes = posterior_mean_codes(&vae, &labeled.images)?;

    let seed = common.seed.unwrap_or(0);
    let n = labeled.len();
    let (train_idx, test_idx) = split_indices(n, 1.0 - split, seed);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config(format!(
            "split {split} left an empty side for {n} examples"
        )));
    }
    let gather = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::<f64>::zeros((idx.len(), codes.ncols()));
        let mut y = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row).assign(&codes.row(i));
            y.push(labeled.labels[i]);
        }
        (x, y)
    };
    let (train_x, train_y) = gather(&train_idx);
    let (test_x, test_y) = gather(&test_idx);
    let outcome = linear_probe(train_x.view(), &train_y, test_x.view(), &test_y, labeled.n_classes)?;

    let report_path = out_dir.join("probe_report.txt");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&report_path)?);
    writeln!(w, "accuracy = {}", outcome.accuracy)?;
    writeln!(w, "n_classes = {}", labeled.n_classes)?;
    writeln!(w, "split = {split}")?;
    writeln!(w, "seed = {seed}")?;
    writeln!(w, "train_examples = {}", train_idx.len())?;
    writeln!(w, "test_examples = {}", test_idx.len())?;
    writeln!(
        w,
        "missing_classes = {:?}  # labels in test but absent from train; counted as errors",
        outcome.missing_classes
    )?;
    drop(w);

    println!(
        "probe accuracy {:.4} over {} classes (report in {})",
        outcome.accuracy,
        labeled.n_classes,
        report_path.display()
    );
    Ok(())
}

pub fn cmd_traverse(
    common: &CommonArgs,
    checkpoint: &Path,
    image_index: usize,
    grid: Option<&[f64]>,
) -> Result<()> {
    let (config, out_dir) = setup(common)?;
    let dataset = config.dataset.load()?;
    let images = dataset.images();
    let n = images.dim().0;
    if image_index >= n {
        return Err(Error::Config(format!(
            "--image-index {image_index} out of range for dataset of {n} examples"
        )));
    }
    let (vae, _) = load_checkpoint(checkpoint)?;

    let default_grid = default_traversal_grid();
    let grid: Vec<f64> = grid.map(|g| g.to_vec()).unwrap_or(default_grid);
    let image = images.index_axis(Axis(0), image_index);
    let frames = emit_traversals(&vae, image, &grid)?;

    // Composite: rows are latent dimensions, columns are grid values.
    let (l, g, _c, h, w) = frames.dim();
    let gap = 2usize;
    let width = g * (w + gap) + gap;
    let height = l * (h + gap) + gap;
    let mut canvas = image::GrayImage::from_pixel(width as u32, height as u32, image::Luma([40u8]));
    for d in 0..l {
        for j in 0..g {
            let x0 = gap + j * (w + gap);
            let y0 = gap + d * (h + gap);
            for y in 0..h {
                for x in 0..w {
                    let v = frames[[d, j, 0, y, x]].clamp(0.0, 1.0);
                    canvas.put_pixel((x0 + x) as u32, (y0 + y) as u32, image::Luma([(v * 255.0) as u8]));
                }
            }
        }
    }
    let composite_path = out_dir.join("traversals.png");
    canvas
        .save(&composite_path)
        .map_err(|e| Error::Plot(format!("cannot write composite: {e}")))?;

    // Raw frames: magic, shape header, little-endian f32 payload.
    let raw_path = out_dir.join("traversals.bin");
    {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&raw_path)?);
        file.write_all(b"VKTR0001")?;
        for dim in [l, g, _c, h, w] {
            file.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in frames.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }

    // Per-dimension KL sidecar so dead dimensions can be identified.
    let probe_count = n.min(256);
    let idx: Vec<usize> = (0..probe_count).collect();
    let kl = mean_per_dim_kl(&vae, &gather_images(images, &idx))?;
    let sidecar_path = out_dir.join("per_dim_kl.txt");
    {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&sidecar_path)?);
        writeln!(
            file,
            "# mean per-dimension kl over {probe_count} images; dead = kl <= {ACTIVE_DIM_THRESHOLD} nats"
        )?;
        for (d, &v) in kl.iter().enumerate() {
            writeln!(
                file,
                "dim_{d} = {v} ({})",
                if v > ACTIVE_DIM_THRESHOLD { "active" } else { "dead" }
            )?;
        }
    }

    println!(
        "traversals for image {image_index}: {l} dims x {} grid values (artifacts in {})",
        grid.len(),
        out_dir.display()
    );
    Ok(())
}
