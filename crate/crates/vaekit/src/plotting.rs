//! Static plot emission (SVG): per-dimension KL trajectories, training
//! curves against the scheduled hyperparameter, and rate/distortion scatter
//! plots for sweeps.

use std::path::Path;

use plotters::prelude::*;

use crate::rd_analysis::RDPoint;
use crate::trainer::TrainingLog;
use crate::{Error, Result};

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn padded(min: f64, max: f64) -> (f64, f64) {
    let span = (max - min).abs();
    let pad = if span < 1e-9 { min.abs().max(1.0) * 0.1 + 0.1 } else { span * 0.05 };
    (min - pad, max + pad)
}

/// Per-dimension KL against the training step, one line per latent unit.
pub fn plot_per_dim_kl(log: &TrainingLog, path: &Path) -> Result<()> {
    if log.records.is_empty() {
        return Err(Error::Plot("training log is empty".into()));
    }
    let latent_dim = log.records[0].per_dim_kl.len();
    let max_step = log.records.last().expect("nonempty").step as f64;
    let max_kl = log
        .records
        .iter()
        .flat_map(|r| r.per_dim_kl.iter().copied())
        .fold(0.0f64, f64::max);
    let (y_lo, y_hi) = padded(0.0, max_kl);

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("per-dimension kl during training", ("sans-serif", 22))
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..max_step.max(1.0), y_lo.min(0.0)..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("kl (nats)")
        .draw()
        .map_err(plot_err)?;

    for d in 0..latent_dim {
        let color = Palette99::pick(d).mix(0.9);
        let series: Vec<(f64, f64)> = log
            .records
            .iter()
            .map(|r| (r.step as f64, r.per_dim_kl[d]))
            .collect();
        chart
            .draw_series(LineSeries::new(series, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("dim {d}"))
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], Palette99::pick(d).stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK.mix(0.4))
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Evidence bound and reconstruction error against the effective
/// hyperparameter over one training run (meaningful for scheduled runs).
pub fn plot_elbo_and_distortion_vs_hyper(log: &TrainingLog, path: &Path) -> Result<()> {
    if log.records.is_empty() {
        return Err(Error::Plot("training log is empty".into()));
    }
    let xs: Vec<f64> = log.records.iter().map(|r| r.hyper).collect();
    let elbo: Vec<f64> = log.records.iter().map(|r| r.elbo).collect();
    let dist: Vec<f64> = log.records.iter().map(|r| r.distortion).collect();
    let (x_lo, x_hi) = padded(
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let y_min = elbo.iter().chain(&dist).cloned().fold(f64::INFINITY, f64::min);
    let y_max = elbo.iter().chain(&dist).cloned().fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = padded(y_min, y_max);

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("evidence bound and reconstruction error vs hyperparameter", ("sans-serif", 20))
        .x_label_area_size(42)
        .y_label_area_size(64)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("effective hyperparameter")
        .y_desc("nats")
        .draw()
        .map_err(plot_err)?;

    let points: Vec<(f64, f64)> = xs.iter().cloned().zip(elbo).collect();
    chart
        .draw_series(LineSeries::new(points, BLUE.stroke_width(2)))
        .map_err(plot_err)?
        .label("elbo")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE.stroke_width(2)));
    let points: Vec<(f64, f64)> = xs.iter().cloned().zip(dist).collect();
    chart
        .draw_series(LineSeries::new(points, RED.stroke_width(2)))
        .map_err(plot_err)?
        .label("reconstruction error")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED.stroke_width(2)));
    chart
        .configure_series_labels()
        .border_style(BLACK.mix(0.4))
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Rate/distortion scatter over sweep points, one color per hyper value.
pub fn plot_rd_scatter(points: &[RDPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Plot("no sweep points to plot".into()));
    }
    let (r_lo, r_hi) = padded(
        points.iter().map(|p| p.rate).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.rate).fold(f64::NEG_INFINITY, f64::max),
    );
    let (d_lo, d_hi) = padded(
        points.iter().map(|p| p.distortion).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.distortion).fold(f64::NEG_INFINITY, f64::max),
    );

    let mut values: Vec<f64> = points.iter().map(|p| p.hyper_value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.dedup();

    let root = SVGBackend::new(path, (800, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let kind = points[0].hyper_kind;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption(format!("rate/distortion operating points ({kind} sweep)"), ("sans-serif", 20))
        .x_label_area_size(42)
        .y_label_area_size(64)
        .build_cartesian_2d(r_lo.min(0.0)..r_hi, d_lo..d_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("rate (nats)")
        .y_desc("distortion (nats)")
        .draw()
        .map_err(plot_err)?;

    for (vi, &value) in values.iter().enumerate() {
        let color = Palette99::pick(vi);
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.hyper_value == value)
            .map(|p| (p.rate, p.distortion))
            .collect();
        chart
            .draw_series(pts.iter().map(|&(x, y)| Circle::new((x, y), 5, color.filled())))
            .map_err(plot_err)?
            .label(format!("{kind} = {value}"))
            .legend(move |(x, y)| Circle::new((x + 8, y), 5, Palette99::pick(vi).filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK.mix(0.4))
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// A per-value summary plot for sweeps: every point plus the per-value
/// median of the chosen quantity.
pub fn plot_quantity_vs_value(
    points: &[RDPoint],
    quantity: fn(&RDPoint) -> f64,
    quantity_name: &str,
    path: &Path,
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Plot("no sweep points to plot".into()));
    }
    let (x_lo, x_hi) = padded(
        points.iter().map(|p| p.hyper_value).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.hyper_value).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_lo, y_hi) = padded(
        points.iter().map(quantity).fold(f64::INFINITY, f64::min),
        points.iter().map(quantity).fold(f64::NEG_INFINITY, f64::max),
    );

    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let kind = points[0].hyper_kind;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption(format!("{quantity_name} vs {kind}"), ("sans-serif", 20))
        .x_label_area_size(42)
        .y_label_area_size(64)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(format!("{kind}"))
        .y_desc(format!("{quantity_name} (nats)"))
        .draw()
        .map_err(plot_err)?;

    chart
        .draw_series(
            points
                .iter()
                .map(|p| Circle::new((p.hyper_value, quantity(p)), 4, BLUE.mix(0.6).filled())),
        )
        .map_err(plot_err)?
        .label("seeds")
        .legend(|(x, y)| Circle::new((x + 8, y), 4, BLUE.filled()));

    // Per-value medians, connected.
    let mut values: Vec<f64> = points.iter().map(|p| p.hyper_value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.dedup();
    let medians: Vec<(f64, f64)> = values
        .iter()
        .map(|&v| {
            let mut ys: Vec<f64> = points
                .iter()
                .filter(|p| p.hyper_value == v)
                .map(quantity)
                .collect();
            ys.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let m = if ys.len() % 2 == 1 {
                ys[ys.len() / 2]
            } else {
                0.5 * (ys[ys.len() / 2 - 1] + ys[ys.len() / 2])
            };
            (v, m)
        })
        .collect();
    chart
        .draw_series(LineSeries::new(medians, RED.stroke_width(2)))
        .map_err(plot_err)?
        .label("median")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED.stroke_width(2)));

    chart
        .configure_series_labels()
        .border_style(BLACK.mix(0.4))
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd_analysis::HyperKind;
    use crate::trainer::TrainRecord;

    fn demo_log() -> TrainingLog {
        TrainingLog {
            records: (0..20)
                .map(|i| TrainRecord {
                    step: i * 10,
                    total: 50.0 - i as f64,
                    distortion: 45.0 - i as f64,
                    rate: 5.0,
                    hyper: 30.0 - i as f64,
                    per_dim_kl: vec![0.1 * i as f64, 0.02, 1.5],
                    elbo: -(50.0 - i as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn plots_render_nonempty_svg() {
        let dir = tempfile::tempdir().unwrap();
        let log = demo_log();

        let kl_path = dir.path().join("kl.svg");
        plot_per_dim_kl(&log, &kl_path).unwrap();
        let text = std::fs::read_to_string(&kl_path).unwrap();
        assert!(text.contains("<svg") && text.contains("dim 0"));

        let hyper_path = dir.path().join("hyper.svg");
        plot_elbo_and_distortion_vs_hyper(&log, &hyper_path).unwrap();
        assert!(std::fs::read_to_string(&hyper_path).unwrap().contains("reconstruction error"));

        let points = vec![
            RDPoint {
                hyper_kind: HyperKind::Beta,
                hyper_value: 0.5,
                rate: 8.0,
                distortion: 20.0,
                elbo: -28.0,
                seed: 0,
            },
            RDPoint {
                hyper_kind: HyperKind::Beta,
                hyper_value: 4.0,
                rate: 2.0,
                distortion: 48.0,
                elbo: -50.0,
                seed: 1,
            },
        ];
        let rd_path = dir.path().join("rd.svg");
        plot_rd_scatter(&points, &rd_path).unwrap();
        assert!(std::fs::read_to_string(&rd_path).unwrap().contains("rate (nats)"));

        let q_path = dir.path().join("dist.svg");
        plot_quantity_vs_value(&points, |p| p.distortion, "distortion", &q_path).unwrap();
        assert!(std::fs::read_to_string(&q_path).unwrap().contains("median"));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let empty = TrainingLog::default();
        assert!(plot_per_dim_kl(&empty, &dir.path().join("a.svg")).is_err());
        assert!(plot_rd_scatter(&[], &dir.path().join("b.svg")).is_err());
    }
}
