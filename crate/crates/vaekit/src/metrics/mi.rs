//! Equal-count discretization and discrete mutual information, the shared
//! machinery behind the information-theoretic disentanglement metrics.

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

use super::FactorCodes;

/// Equal-count (quantile) binning into at most `n_bins` bins.
///
/// Ties always share a bin, and bin assignment depends only on the ordering
/// of values, so any strictly monotone per-dimension transform leaves the
/// result unchanged.
pub fn equal_count_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    assert!(n_bins >= 1);
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite codes"));
    let mut bins = vec![0usize; n];
    let mut prev_value = f64::NAN;
    let mut prev_bin = 0usize;
    for (pos, &idx) in order.iter().enumerate() {
        let provisional = pos * n_bins / n;
        let bin = if values[idx] == prev_value { prev_bin } else { provisional };
        bins[idx] = bin;
        prev_value = values[idx];
        prev_bin = bin;
    }
    bins
}

/// Joint histogram of two discrete sequences as probabilities.
pub fn joint_probabilities(a: &[usize], b: &[usize], na: usize, nb: usize) -> Array2<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut counts = Array2::<f64>::zeros((na, nb));
    for (&x, &y) in a.iter().zip(b.iter()) {
        counts[[x, y]] += 1.0;
    }
    counts / n
}

/// Mutual information (nats) of two discrete sequences via their joint
/// histogram.
pub fn discrete_mi(a: &[usize], b: &[usize], na: usize, nb: usize) -> f64 {
    let joint = joint_probabilities(a, b, na, nb);
    let pa: Vec<f64> = (0..na).map(|i| joint.row(i).sum()).collect();
    let pb: Vec<f64> = (0..nb).map(|j| joint.column(j).sum()).collect();
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let p = joint[[i, j]];
            if p > 0.0 {
                mi += p * (p.ln() - pa[i].ln() - pb[j].ln());
            }
        }
    }
    mi.max(0.0)
}

/// Entropy (nats) of a discrete sequence.
pub fn discrete_entropy(labels: &[usize], n_values: usize) -> f64 {
    let n = labels.len() as f64;
    let mut counts = vec![0.0f64; n_values];
    for &v in labels {
        counts[v] += 1.0;
    }
    -counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mutual-information matrix between binned code dimensions (rows) and
/// ground-truth factors (columns).
pub fn mi_matrix(codes: ArrayView2<'_, f64>, fc: &FactorCodes, n_bins: usize) -> Array2<f64> {
    let l = codes.ncols();
    let k = fc.n_factors();
    let binned: Vec<Vec<usize>> = (0..l)
        .map(|j| equal_count_bins(codes.column(j).to_vec().as_slice(), n_bins))
        .collect();
    let mut m = Array2::<f64>::zeros((l, k));
    for j in 0..l {
        for f in 0..k {
            let factor_col: Vec<usize> = fc.factors.column(f).to_vec();
            m[[j, f]] = discrete_mi(&binned[j], &factor_col, n_bins, fc.factor_sizes[f]);
        }
    }
    m
}

/// Mutual Information Gap: for each factor, the gap between the two largest
/// code MIs, normalized by the factor entropy; averaged over factors with
/// nonzero entropy.
pub fn mig(fc: &FactorCodes, n_bins: usize) -> Result<f64> {
    if n_bins < 2 {
        return Err(Error::Metric(format!("mig needs n_bins >= 2, got {n_bins}")));
    }
    fc.validate()?;
    let m = mi_matrix(fc.codes.view(), fc, n_bins);
    let l = fc.codes.ncols();
    let mut total = 0.0;
    let mut included = 0usize;
    for f in 0..fc.n_factors() {
        let col: Vec<usize> = fc.factors.column(f).to_vec();
        let h = discrete_entropy(&col, fc.factor_sizes[f]);
        if h <= 0.0 {
            continue; // zero-entropy factor carries no signal
        }
        let mut top = 0.0;
        let mut second = 0.0;
        for j in 0..l {
            let v = m[[j, f]];
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        total += ((top - second) / h).clamp(0.0, 1.0);
        included += 1;
    }
    if included == 0 {
        return Err(Error::Metric("all factors have zero entropy".into()));
    }
    Ok(total / included as f64)
}

/// Modularity: per code dimension, penalizes off-target mutual information
/// relative to its best factor; averaged over dimensions with nonzero MI.
pub fn modularity(fc: &FactorCodes, n_bins: usize) -> Result<f64> {
    if n_bins < 2 {
        return Err(Error::Metric(format!("modularity needs n_bins >= 2, got {n_bins}")));
    }
    fc.validate()?;
    let m = mi_matrix(fc.codes.view(), fc, n_bins);
    let (l, k) = m.dim();
    let mut total = 0.0;
    let mut included = 0usize;
    for j in 0..l {
        // Lowest index wins ties.
        let mut best = 0usize;
        for f in 1..k {
            if m[[j, f]] > m[[j, best]] {
                best = f;
            }
        }
        let peak = m[[j, best]];
        if peak <= 0.0 {
            continue;
        }
        included += 1;
        if k == 1 {
            total += 1.0; // no off-target factors exist
            continue;
        }
        let mut off = 0.0;
        for f in 0..k {
            if f != best {
                off += m[[j, f]] * m[[j, f]];
            }
        }
        total += 1.0 - off / (peak * peak * (k - 1) as f64);
    }
    if included == 0 {
        return Err(Error::Metric("mutual information matrix is all zero".into()));
    }
    Ok((total / included as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_factors(sizes: &[usize], repeats: usize) -> Array2<usize> {
        let n: usize = sizes.iter().product::<usize>() * repeats;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..repeats {
            let mut idx = vec![0usize; sizes.len()];
            loop {
                rows.push(idx.clone());
                let mut d = sizes.len();
                loop {
                    if d == 0 {
                        break;
                    }
                    d -= 1;
                    idx[d] += 1;
                    if idx[d] < sizes[d] {
                        break;
                    }
                    idx[d] = 0;
                    if d == 0 {
                        break;
                    }
                }
                if idx.iter().all(|&v| v == 0) {
                    break;
                }
            }
        }
        Array2::from_shape_vec((n, sizes.len()), rows.concat()).unwrap()
    }

    fn make_fc(codes: Array2<f64>, factors: Array2<usize>, sizes: Vec<usize>) -> FactorCodes {
        FactorCodes::new(codes, factors, sizes).unwrap()
    }

    #[test]
    fn equal_count_bins_are_balanced_and_tie_safe() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let bins = equal_count_bins(&values, 4);
        for (i, &b) in bins.iter().enumerate() {
            assert_eq!(b, i / 25);
        }

        // All-equal values collapse into a single bin.
        let same = vec![7.0; 50];
        let bins = equal_count_bins(&same, 5);
        assert!(bins.iter().all(|&b| b == 0));
    }

    #[test]
    fn binning_is_invariant_to_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let base = equal_count_bins(&values, 20);
        let shifted: Vec<f64> = values.iter().map(|v| 2.0 * v + 10.0).collect();
        let expd: Vec<f64> = values.iter().map(|v| v.exp()).collect();
        assert_eq!(base, equal_count_bins(&shifted, 20));
        assert_eq!(base, equal_count_bins(&expd, 20));
    }

    #[test]
    fn discrete_mi_matches_exhaustive_joint_computation() {
        // Independent brute-force oracle: enumerate the joint distribution
        // table directly and evaluate the MI sum with scalar loops.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(10..1000);
            let na = rng.random_range(2..=4);
            let nb = rng.random_range(2..=4);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..na)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..nb)).collect();

            let mut table = vec![vec![0usize; nb]; na];
            for i in 0..n {
                table[a[i]][b[i]] += 1;
            }
            let mut oracle = 0.0;
            for x in 0..na {
                for y in 0..nb {
                    let pxy = table[x][y] as f64 / n as f64;
                    if pxy == 0.0 {
                        continue;
                    }
                    let px = table[x].iter().sum::<usize>() as f64 / n as f64;
                    let py = (0..na).map(|r| table[r][y]).sum::<usize>() as f64 / n as f64;
                    oracle += pxy * (pxy / (px * py)).ln();
                }
            }
            let got = discrete_mi(&a, &b, na, nb);
            assert!((got - oracle.max(0.0)).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn mi_of_identical_sequences_is_entropy() {
        let a = vec![0usize, 1, 2, 0, 1, 2, 0, 1, 2];
        let mi = discrete_mi(&a, &a, 3, 3);
        let h = discrete_entropy(&a, 3);
        assert!((mi - h).abs() < 1e-12);
    }

    #[test]
    fn mig_is_one_on_exact_one_to_one_grid() {
        let factors = grid_factors(&[4, 5], 50);
        let n = factors.nrows();
        let codes = Array2::from_shape_fn((n, 2), |(i, j)| factors[[i, j]] as f64 * 1.7 - 3.0);
        let fc = make_fc(codes, factors, vec![4, 5]);
        let v = mig(&fc, 20).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn mig_with_noise_dims_stays_high_and_noise_codes_stay_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let factors = grid_factors(&[5, 5], 400); // N = 10000
        let n = factors.nrows();
        // Informative dims + pure-noise dims.
        let codes = Array2::from_shape_fn((n, 4), |(i, j)| {
            if j < 2 {
                factors[[i, j]] as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let fc = make_fc(codes, factors.clone(), vec![5, 5]);
        assert!(mig(&fc, 20).unwrap() > 0.9);

        let noise = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
        let fc = make_fc(noise, factors, vec![5, 5]);
        assert!(mig(&fc, 20).unwrap() < 0.05);
    }

    #[test]
    fn mig_gap_vanishes_for_duplicated_informative_dims() {
        let factors = grid_factors(&[4, 4], 100);
        let n = factors.nrows();
        // Every code column is a copy of factor 0: top-two MIs tie at H.
        let codes = Array2::from_shape_fn((n, 3), |(i, _)| factors[[i, 0]] as f64);
        let fc = make_fc(codes, factors, vec![4, 4]);
        // Factor 0 contributes gap 0; factor 1 contributes 0 (no MI at all).
        assert!(mig(&fc, 20).unwrap() < 1e-12);
    }

    #[test]
    fn modularity_is_exactly_one_for_one_to_one_codes() {
        let factors = grid_factors(&[4, 5], 30);
        let n = factors.nrows();
        let codes = Array2::from_shape_fn((n, 2), |(i, j)| factors[[i, j]] as f64 + 0.25);
        let fc = make_fc(codes, factors, vec![4, 5]);
        let v = modularity(&fc, 20).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn modularity_zero_for_dim_equally_informative_about_two_factors() {
        // K=2; single code dim encodes both factors identically: factor grid
        // where both factors always agree, so MI(z, v0) == MI(z, v1).
        let n = 600;
        let mut factors = Array2::<usize>::zeros((n, 2));
        for i in 0..n {
            factors[[i, 0]] = i % 3;
            factors[[i, 1]] = i % 3;
        }
        let codes = Array2::from_shape_fn((n, 1), |(i, _)| (i % 3) as f64);
        let fc = make_fc(codes, factors, vec![3, 3]);
        let v = modularity(&fc, 20).unwrap();
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn modularity_matches_scripted_formula_on_mixed_case() {
        // Construct a case with known MI structure and evaluate the formula
        // independently from the implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let factors = grid_factors(&[3, 4], 200);
        let n = factors.nrows();
        let codes = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => factors[[i, 0]] as f64 * 2.0,
            1 => factors[[i, 0]] as f64 + factors[[i, 1]] as f64 * 3.0,
            _ => rng.random_range(0.0..1.0),
        });
        let fc = make_fc(codes.clone(), factors.clone(), vec![3, 4]);

        let m = mi_matrix(codes.view(), &fc, 20);
        let mut expected = 0.0;
        let mut counted = 0;
        for j in 0..3 {
            let (mut best, mut peak) = (0usize, m[[j, 0]]);
            if m[[j, 1]] > peak {
                best = 1;
                peak = m[[j, 1]];
            }
            if peak <= 0.0 {
                continue;
            }
            counted += 1;
            let off: f64 = (0..2).filter(|&f| f != best).map(|f| m[[j, f]] * m[[j, f]]).sum();
            expected += 1.0 - off / (peak * peak);
        }
        let expected = expected / counted as f64;
        let got = modularity(&fc, 20).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn mig_and_modularity_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let factors = grid_factors(&[4, 3], 80);
        let n = factors.nrows();
        let codes = Array2::from_shape_fn((n, 4), |(i, j)| {
            factors[[i, j % 2]] as f64 * (j + 1) as f64 + rng.random_range(-0.2..0.2)
        });
        let fc = make_fc(codes.clone(), factors.clone(), vec![4, 3]);
        let base_mig = mig(&fc, 20).unwrap();
        let base_mod = modularity(&fc, 20).unwrap();

        // Permute code dimensions.
        let perm = [2usize, 0, 3, 1];
        let permuted = Array2::from_shape_fn((n, 4), |(i, j)| codes[[i, perm[j]]]);
        let fc_p = make_fc(permuted, factors.clone(), vec![4, 3]);
        assert_eq!(mig(&fc_p, 20).unwrap(), base_mig);
        assert_eq!(modularity(&fc_p, 20).unwrap(), base_mod);

        // Strictly monotone per-dimension maps.
        let mapped = Array2::from_shape_fn((n, 4), |(i, j)| {
            let v: f64 = codes[[i, j]];
            match j {
                0 => v.exp(),
                1 => 3.0 * v - 7.0,
                2 => v.powi(3),
                _ => v.atan(),
            }
        });
        let fc_m = make_fc(mapped, factors, vec![4, 3]);
        assert_eq!(mig(&fc_m, 20).unwrap(), base_mig);
        assert_eq!(modularity(&fc_m, 20).unwrap(), base_mod);
    }

    #[test]
    fn zero_entropy_factors_are_excluded() {
        let n = 100;
        let factors = Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { 0 } else { i % 2 });
        // One informative dimension, one constant (zero-MI) dimension.
        let codes =
            Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { (i % 2) as f64 } else { 0.0 });
        let fc = make_fc(codes, factors, vec![1, 2]);
        // Factor 0 has zero entropy; metric still works through factor 1.
        assert!(mig(&fc, 4).unwrap() > 0.9);

        let flat = Array2::<usize>::zeros((n, 1));
        let codes = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let fc = make_fc(codes, flat, vec![1]);
        assert!(mig(&fc, 4).is_err());
    }
}
