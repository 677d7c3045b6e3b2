//! Data ingestion: a procedurally generated desk-scale factor dataset, the
//! published binary-sprites archive format, and a generic labeled
//! image-folder ingester for spectrogram-style data.
//!
//! All loaders emit images in `[0, 1]` with the configured shape and reject
//! violations at load time rather than clipping silently. Datasets are
//! immutable after load; samplers hold private RNG state.

mod dsprites;
mod labeled;
mod synthetic;

pub use dsprites::{load_dsprites, DSPRITES_FACTOR_NAMES, DSPRITES_FACTOR_SIZES};
pub use labeled::load_labeled_folder;
pub use synthetic::generate_synthetic;

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Images paired with discrete ground-truth generative factors.
#[derive(Debug, Clone)]
pub struct FactorDataset {
    /// (N, C, H, W), values in [0, 1].
    pub images: Array4<f32>,
    /// (N, K); entry `[n, k]` in `0..factor_sizes[k]`.
    pub factor_values: Array2<usize>,
    pub factor_sizes: Vec<usize>,
    pub factor_names: Vec<String>,
}

impl FactorDataset {
    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_factors(&self) -> usize {
        self.factor_sizes.len()
    }

    /// Checks the dataset contract: matching lengths, factor values within
    /// range, pixels in [0, 1].
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.factor_values.nrows() != n {
            return Err(Error::Dataset(format!(
                "factor rows {} != image count {n}",
                self.factor_values.nrows()
            )));
        }
        if self.factor_values.ncols() != self.factor_sizes.len()
            || self.factor_names.len() != self.factor_sizes.len()
        {
            return Err(Error::Dataset("factor arity mismatch".into()));
        }
        for (i, row) in self.factor_values.rows().into_iter().enumerate() {
            for (k, (&v, &size)) in row.iter().zip(&self.factor_sizes).enumerate() {
                if v >= size {
                    return Err(Error::Dataset(format!(
                        "example {i}: factor {k} value {v} out of range 0..{size}"
                    )));
                }
            }
        }
        if let Some(bad) = self.images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Dataset(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(())
    }

    /// True when every factor tuple appears exactly once (a full grid).
    pub fn is_full_grid(&self) -> bool {
        let expected: usize = self.factor_sizes.iter().product();
        if self.len() != expected {
            return false;
        }
        let mut seen = vec![false; expected];
        for row in self.factor_values.rows() {
            let mut idx = 0usize;
            for (&v, &size) in row.iter().zip(&self.factor_sizes) {
                idx = idx * size + v;
            }
            if seen[idx] {
                return false;
            }
            seen[idx] = true;
        }
        true
    }
}

/// Images with a single integer label per example.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    /// (N, C, H, W), values in [0, 1].
    pub images: Array4<f32>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Class names in label order (directory names for folder ingestion).
    pub class_names: Vec<String>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Disjoint, covering, reproducible train/holdout split: a pure function of
/// `(n, holdout_fraction, seed)`.
pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!((0.0..1.0).contains(&holdout_fraction), "fraction in [0, 1)");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_holdout = ((n as f64) * holdout_fraction).round() as usize;
    let holdout = order[..n_holdout].to_vec();
    let train = order[n_holdout..].to_vec();
    (train, holdout)
}

/// Copies the selected examples into a contiguous image tensor.
pub fn gather_images(images: &Array4<f32>, indices: &[usize]) -> Array4<f32> {
    let (_, c, h, w) = images.dim();
    let mut out = Array4::zeros((indices.len(), c, h, w));
    for (row, &i) in indices.iter().enumerate() {
        out.index_axis_mut(Axis(0), row).assign(&images.index_axis(Axis(0), i));
    }
    out
}

/// Example indices grouped by (factor, value), shared by the image-pair
/// sampler here and the code sampler in the metrics module.
#[derive(Debug, Clone)]
pub struct FactorGroups {
    /// Factors with at least two observed values (eligible for fixing).
    pub eligible: Vec<usize>,
    /// `groups[k][v]` = indices of examples with factor k equal to v.
    groups: Vec<BTreeMap<usize, Vec<usize>>>,
}

impl FactorGroups {
    pub fn new(factor_values: &Array2<usize>, factor_sizes: &[usize]) -> Self {
        let k = factor_sizes.len();
        let mut groups: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); k];
        for (i, row) in factor_values.rows().into_iter().enumerate() {
            for (f, &v) in row.iter().enumerate() {
                groups[f].entry(v).or_default().push(i);
            }
        }
        let eligible = (0..k).filter(|&f| groups[f].len() >= 2).collect();
        FactorGroups { eligible, groups }
    }

    /// Uniformly picks an eligible factor, then a value of it, then `count`
    /// example indices sharing that value (with replacement).
    pub fn sample_fixed(&self, count: usize, rng: &mut ChaCha8Rng) -> (usize, Vec<usize>) {
        assert!(!self.eligible.is_empty(), "no eligible factors");
        let factor = self.eligible[rng.random_range(0..self.eligible.len())];
        let values: Vec<&Vec<usize>> = self.groups[factor].values().collect();
        let group = values[rng.random_range(0..values.len())];
        let picks = (0..count).map(|_| group[rng.random_range(0..group.len())]).collect();
        (factor, picks)
    }

    /// Picks an eligible factor, then `n_pairs` index pairs where each pair
    /// shares its own (independently drawn) value of that factor.
    pub fn sample_pairs(&self, n_pairs: usize, rng: &mut ChaCha8Rng) -> (usize, Vec<(usize, usize)>) {
        assert!(!self.eligible.is_empty(), "no eligible factors");
        let factor = self.eligible[rng.random_range(0..self.eligible.len())];
        let values: Vec<&Vec<usize>> = self.groups[factor].values().collect();
        let pairs = (0..n_pairs)
            .map(|_| {
                let group = values[rng.random_range(0..values.len())];
                (
                    group[rng.random_range(0..group.len())],
                    group[rng.random_range(0..group.len())],
                )
            })
            .collect();
        (factor, pairs)
    }
}

/// A batch of same-factor image pairs from [`FactorConditionalSampler`].
#[derive(Debug, Clone)]
pub struct PairBatch {
    /// Index of the factor held fixed within each pair.
    pub factor_index: usize,
    /// Example index pairs; both elements share the fixed factor's value.
    pub pair_indices: Vec<(usize, usize)>,
}

/// Seeded sampler yielding batches of image pairs that share one factor's
/// value, with the fixed factor chosen uniformly among eligible factors.
pub struct FactorConditionalSampler<'d> {
    dataset: &'d FactorDataset,
    groups: FactorGroups,
    rng: ChaCha8Rng,
}

/// Builds a reproducible factor-conditional sampler over a dataset.
/// Factors with a single value are excluded from fixing.
pub fn factor_conditional_sampler(ds: &FactorDataset, seed: u64) -> Result<FactorConditionalSampler<'_>> {
    let groups = FactorGroups::new(&ds.factor_values, &ds.factor_sizes);
    if groups.eligible.is_empty() {
        return Err(Error::Dataset(
            "no factor has two or more observed values; nothing can be held fixed".into(),
        ));
    }
    Ok(FactorConditionalSampler {
        dataset: ds,
        groups,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl<'d> FactorConditionalSampler<'d> {
    pub fn eligible_factors(&self) -> &[usize] {
        &self.groups.eligible
    }

    pub fn next_batch(&mut self, n_pairs: usize) -> PairBatch {
        let (factor_index, pair_indices) = self.groups.sample_pairs(n_pairs, &mut self.rng);
        PairBatch {
            factor_index,
            pair_indices,
        }
    }

    /// Materializes a pair batch as two aligned image tensors.
    pub fn images(&self, batch: &PairBatch) -> (Array4<f32>, Array4<f32>) {
        let first: Vec<usize> = batch.pair_indices.iter().map(|p| p.0).collect();
        let second: Vec<usize> = batch.pair_indices.iter().map(|p| p.1).collect();
        (
            gather_images(&self.dataset.images, &first),
            gather_images(&self.dataset.images, &second),
        )
    }
}

const CACHE_MAGIC: &[u8; 8] = b"VKFD0001";

/// Caches a factor dataset to a single binary file: shape header, raw f32
/// pixels, then the factor table.
pub fn save_factor_dataset(path: &Path, ds: &FactorDataset) -> Result<()> {
    ds.validate()?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    let (n, c, h, wd) = ds.images.dim();
    for v in [n, c, h, wd, ds.n_factors()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for &s in &ds.factor_sizes {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for name in &ds.factor_names {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    for &px in ds.images.iter() {
        w.write_all(&px.to_le_bytes())?;
    }
    for &fv in ds.factor_values.iter() {
        w.write_all(&(fv as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset cached by [`save_factor_dataset`].
pub fn load_factor_dataset(path: &Path) -> Result<FactorDataset> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Dataset(format!(
            "bad cache magic: expected {CACHE_MAGIC:?}, found {magic:?}"
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<std::fs::File>| -> Result<usize> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf) as usize)
    };
    let n = read_u32(&mut r)?;
    let c = read_u32(&mut r)?;
    let h = read_u32(&mut r)?;
    let w = read_u32(&mut r)?;
    let k = read_u32(&mut r)?;
    let mut factor_sizes = Vec::with_capacity(k);
    for _ in 0..k {
        factor_sizes.push(read_u32(&mut r)?);
    }
    let mut factor_names = Vec::with_capacity(k);
    for _ in 0..k {
        let len = read_u32(&mut r)?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        factor_names.push(String::from_utf8(buf).map_err(|e| Error::Dataset(e.to_string()))?);
    }
    let mut pixels = vec![0f32; n * c * h * w];
    let mut f32buf = [0u8; 4];
    for px in pixels.iter_mut() {
        r.read_exact(&mut f32buf)?;
        *px = f32::from_le_bytes(f32buf);
    }
    let mut factors = vec![0usize; n * k];
    for fv in factors.iter_mut() {
        r.read_exact(&mut f32buf)?;
        *fv = u32::from_le_bytes(f32buf) as usize;
    }
    let ds = FactorDataset {
        images: Array4::from_shape_vec((n, c, h, w), pixels)
            .map_err(|e| Error::Dataset(e.to_string()))?,
        factor_values: Array2::from_shape_vec((n, k), factors)
            .map_err(|e| Error::Dataset(e.to_string()))?,
        factor_sizes,
        factor_names,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_dataset() -> FactorDataset {
        generate_synthetic(16, &[3, 3, 2], 0).unwrap()
    }

    #[test]
    fn split_is_disjoint_covering_and_reproducible() {
        let (train, holdout) = split_indices(100, 0.1, 42);
        assert_eq!(train.len(), 90);
        assert_eq!(holdout.len(), 10);
        let mut all: Vec<usize> = train.iter().chain(&holdout).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let (train2, holdout2) = split_indices(100, 0.1, 42);
        assert_eq!(train, train2);
        assert_eq!(holdout, holdout2);
        let (train3, _) = split_indices(100, 0.1, 43);
        assert_ne!(train, train3);
    }

    #[test]
    fn sampler_pairs_share_the_fixed_factor() {
        let ds = demo_dataset();
        let mut sampler = factor_conditional_sampler(&ds, 7).unwrap();
        for _ in 0..50 {
            let batch = sampler.next_batch(8);
            for &(a, b) in &batch.pair_indices {
                assert_eq!(
                    ds.factor_values[[a, batch.factor_index]],
                    ds.factor_values[[b, batch.factor_index]]
                );
            }
        }
    }

    #[test]
    fn sampler_fixes_each_eligible_factor_uniformly() {
        let ds = demo_dataset();
        let mut sampler = factor_conditional_sampler(&ds, 3).unwrap();
        let k = sampler.eligible_factors().len() as f64;
        let n = 10_000;
        let mut counts = vec![0usize; ds.n_factors()];
        for _ in 0..n {
            counts[sampler.next_batch(1).factor_index] += 1;
        }
        let p = 1.0 / k;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for &f in sampler.eligible_factors() {
            let freq = counts[f] as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * sigma + 1e-9, "factor {f}: {freq}");
        }
    }

    #[test]
    fn sampler_is_reproducible_and_excludes_singleton_factors() {
        let ds = demo_dataset();
        let mut a = factor_conditional_sampler(&ds, 11).unwrap();
        let mut b = factor_conditional_sampler(&ds, 11).unwrap();
        for _ in 0..10 {
            let x = a.next_batch(4);
            let y = b.next_batch(4);
            assert_eq!(x.factor_index, y.factor_index);
            assert_eq!(x.pair_indices, y.pair_indices);
        }

        // A dataset with one singleton factor: it must never be fixed.
        let mut ds2 = demo_dataset();
        ds2.factor_sizes.push(1);
        ds2.factor_names.push("color".into());
        let n = ds2.len();
        let mut with_extra = Array2::zeros((n, 4));
        with_extra
            .slice_mut(ndarray::s![.., ..3])
            .assign(&ds2.factor_values);
        ds2.factor_values = with_extra;
        let mut s = factor_conditional_sampler(&ds2, 0).unwrap();
        assert!(!s.eligible_factors().contains(&3));
        for _ in 0..20 {
            assert_ne!(s.next_batch(2).factor_index, 3);
        }
    }

    #[test]
    fn cache_file_round_trips() {
        let ds = demo_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic.vkfd");
        save_factor_dataset(&path, &ds).unwrap();
        let loaded = load_factor_dataset(&path).unwrap();
        assert_eq!(ds.images, loaded.images);
        assert_eq!(ds.factor_values, loaded.factor_values);
        assert_eq!(ds.factor_sizes, loaded.factor_sizes);
        assert_eq!(ds.factor_names, loaded.factor_names);
    }

    #[test]
    fn validate_rejects_out_of_range_values() {
        let mut ds = demo_dataset();
        ds.factor_values[[0, 0]] = 99;
        assert!(ds.validate().is_err());

        let mut ds = demo_dataset();
        ds.images[[0, 0, 0, 0]] = 1.5;
        assert!(ds.validate().is_err());
    }
}
