//! Procedural desk-scale factor dataset: a white square on a black canvas
//! whose position, size, and orientation are exact deterministic functions of
//! the factor indices. No anti-aliasing, so the factor-to-pixel mapping is
//! noise-free and metric oracles see clean ground truth.

use ndarray::{Array2, Array4};

use crate::{Error, Result};

use super::FactorDataset;

const FACTOR_NAMES: [&str; 4] = ["pos_x", "pos_y", "scale", "rotation"];

/// Generates the full factor grid over 2-4 factors:
/// `(pos_x, pos_y[, scale[, rotation]])` with the given per-factor value
/// counts. Rendering is deterministic; the seed is recorded for provenance
/// but no randomness is involved, so equal inputs give bitwise-equal output.
pub fn generate_synthetic(side: usize, factor_sizes: &[usize], _seed: u64) -> Result<FactorDataset> {
    if side < 16 {
        return Err(Error::Config(format!(
            "synthetic canvas side must be >= 16, got {side}"
        )));
    }
    let k = factor_sizes.len();
    if !(2..=4).contains(&k) {
        return Err(Error::Config(format!(
            "synthetic dataset supports 2 to 4 factors, got {k}"
        )));
    }
    if factor_sizes.iter().any(|&v| v == 0) {
        return Err(Error::Config("factor sizes must be positive".into()));
    }

    let v_x = factor_sizes[0];
    let v_y = factor_sizes[1];
    let v_scale = factor_sizes.get(2).copied().unwrap_or(1);
    let v_rot = factor_sizes.get(3).copied().unwrap_or(1);

    // Square sizes: 4, 6, 8, ... pixels.
    let sizes: Vec<usize> = (0..v_scale).map(|j| 4 + 2 * j).collect();
    let max_size = *sizes.last().expect("at least one size");
    // Rotated squares need the diagonal to fit.
    let extent = if v_rot > 1 {
        ((max_size as f64) * std::f64::consts::SQRT_2).ceil() as usize
    } else {
        max_size
    };
    if extent >= side {
        return Err(Error::Config(format!(
            "largest square (extent {extent}px) does not fit the {side}px canvas"
        )));
    }
    let play = side - extent;
    if v_x > play + 1 || v_y > play + 1 {
        return Err(Error::Config(format!(
            "{v_x}x{v_y} positions do not fit: only {} distinct offsets available",
            play + 1
        )));
    }

    let offset = |i: usize, count: usize| -> f64 {
        let center_span = play as f64;
        let t = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
        extent as f64 / 2.0 + center_span * t
    };

    let n = v_x * v_y * v_scale * v_rot;
    let mut images = Array4::<f32>::zeros((n, 1, side, side));
    let mut factor_values = Array2::<usize>::zeros((n, k));

    let mut idx = 0usize;
    for ix in 0..v_x {
        let cx = offset(ix, v_x);
        for iy in 0..v_y {
            let cy = offset(iy, v_y);
            for is in 0..v_scale {
                let half = sizes[is] as f64 / 2.0;
                for ir in 0..v_rot {
                    // Angles sweep [0, 90) degrees; 0 is axis-aligned.
                    let theta = std::f64::consts::FRAC_PI_2 * ir as f64 / v_rot as f64;
                    let (sin_t, cos_t) = theta.sin_cos();
                    for py in 0..side {
                        for px in 0..side {
                            let dx = px as f64 + 0.5 - cx;
                            let dy = py as f64 + 0.5 - cy;
                            let u = cos_t * dx + sin_t * dy;
                            let v = -sin_t * dx + cos_t * dy;
                            if u.abs() <= half && v.abs() <= half {
                                images[[idx, 0, py, px]] = 1.0;
                            }
                        }
                    }
                    let mut row = vec![ix, iy];
                    if k >= 3 {
                        row.push(is);
                    }
                    if k == 4 {
                        row.push(ir);
                    }
                    for (col, v) in row.into_iter().enumerate() {
                        factor_values[[idx, col]] = v;
                    }
                    idx += 1;
                }
            }
        }
    }

    let ds = FactorDataset {
        images,
        factor_values,
        factor_sizes: factor_sizes.to_vec(),
        factor_names: FACTOR_NAMES[..k].iter().map(|s| s.to_string()).collect(),
    };
    ds.validate()?;
    Ok(ds)
}
