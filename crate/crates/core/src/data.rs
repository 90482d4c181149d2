//! Datasets, semi-supervised splits and batch iteration.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Per-channel mean and standard deviation (channel = last tensor dimension).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics of `x`. A channel with zero spread gets std 1 so
    /// standardizing never divides by zero.
    pub fn compute(x: &Tensor) -> Self {
        let ch = *x.shape().last().expect("tensors have rank >= 1");
        let count = (x.numel() / ch) as f64;
        let mut mean = vec![0.0; ch];
        for (i, v) in x.data().iter().enumerate() {
            mean[i % ch] += v;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; ch];
        for (i, v) in x.data().iter().enumerate() {
            let d = v - mean[i % ch];
            var[i % ch] += d * d;
        }
        let std = var
            .into_iter()
            .map(|v| libm::sqrt(v / count))
            .map(|s| if s > 1e-12 { s } else { 1.0 })
            .collect();
        Self { mean, std }
    }
}

/// Samples (`n x d` or `n x h x w x ch`), labels and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
    /// Statistics of `x` as constructed (before any standardization).
    pub stats: ChannelStats,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rank() < 2 {
            return Err(Error::Config(format!(
                "samples need rank >= 2, got {:?}",
                x.shape()
            )));
        }
        if y.len() != x.rows() {
            return Err(Error::Config(format!(
                "{} labels for {} samples",
                y.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("dataset samples".to_string()));
        }
        let stats = ChannelStats::compute(&x);
        Ok(Self {
            x,
            y,
            classes,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn is_image(&self) -> bool {
        self.x.rank() == 4
    }

    /// Flattened width of one sample.
    pub fn sample_width(&self) -> usize {
        self.x.cols()
    }

    /// `(x - mean) / std` per channel.
    pub fn standardize(&mut self, stats: &ChannelStats) -> Result<()> {
        let ch = *self.x.shape().last().expect("rank >= 2");
        if stats.mean.len() != ch || stats.std.len() != ch {
            return Err(Error::Config(format!(
                "stats for {} channels applied to {ch}-channel data",
                stats.mean.len()
            )));
        }
        for (i, v) in self.x.data_mut().iter_mut().enumerate() {
            *v = (*v - stats.mean[i % ch]) / stats.std[i % ch];
        }
        Ok(())
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(idx)?;
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let mut out = Self::new(x, y, self.classes)?;
        out.stats = self.stats.clone();
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of the Gaussian blob generator.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Distance between any two class centers, in units of `spread`. Must be >= 4.
    pub separation: f64,
}

impl BlobSpec {
    pub fn new(classes: usize, per_class: usize, dim: usize, spread: f64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            spread,
            separation: DEFAULT_SEPARATION,
        }
    }
}

pub const DEFAULT_SEPARATION: f64 = 6.0;

/// Vertices of a regular simplex, centered and scaled so that every pair of
/// centers is `separation * spread` apart.
pub fn blob_centers(spec: &BlobSpec) -> Result<Vec<Vec<f64>>> {
    let BlobSpec {
        classes: c,
        per_class,
        dim: d,
        spread,
        separation,
    } = *spec;
    if c < 2 || per_class < 1 || d < 2 || !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::Config(format!(
            "blobs need classes >= 2, per_class >= 1, dim >= 2, spread > 0 (got {spec:?})"
        )));
    }
    if !(separation >= 4.0) {
        return Err(Error::Config(format!(
            "blob separation must be >= 4, got {separation}"
        )));
    }
    if c > d + 1 {
        return Err(Error::Config(format!(
            "{c} simplex-placed centers do not fit in {d} dimensions (need classes <= dim + 1)"
        )));
    }
    // e_1..e_d plus a*(1,..,1) are d+1 points pairwise sqrt(2) apart
    let a = (1.0 - libm::sqrt((d + 1) as f64)) / d as f64;
    let mut verts: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            if i < d {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                v
            } else {
                vec![a; d]
            }
        })
        .collect();
    let centroid: Vec<f64> = (0..d)
        .map(|k| verts.iter().map(|v| v[k]).sum::<f64>() / c as f64)
        .collect();
    let scale = separation * spread / core::f64::consts::SQRT_2;
    for v in verts.iter_mut() {
        for (x, m) in v.iter_mut().zip(&centroid) {
            *x = (*x - m) * scale;
        }
    }
    Ok(verts)
}

/// Isotropic Gaussian blobs around [`blob_centers`]; samples are class-major.
pub fn synth_blobs(rng: &mut Rng, spec: &BlobSpec) -> Result<Dataset> {
    let centers = blob_centers(spec)?;
    let n = spec.classes * spec.per_class;
    let mut x = Vec::with_capacity(n * spec.dim);
    let mut y = Vec::with_capacity(n);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            x.extend(center.iter().map(|m| m + spec.spread * rng.normal()));
            y.push(label);
        }
    }
    Dataset::new(Tensor::new(&[n, spec.dim], x)?, y, spec.classes)
}

/// Labeled / unlabeled partition of a training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemiSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl SemiSplit {
    /// Every sample labeled.
    pub fn fully_labeled(n: usize) -> Self {
        Self {
            labeled: (0..n).collect(),
            unlabeled: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks `labels_per_class` samples of every class uniformly at random as the
/// labeled set; all other samples are unlabeled. Both lists are sorted.
pub fn split_semi(ds: &Dataset, labels_per_class: usize, rng: &mut Rng) -> Result<SemiSplit> {
    if labels_per_class == 0 {
        return Err(Error::Config("labels_per_class must be >= 1".to_string()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.y.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut labeled = Vec::with_capacity(labels_per_class * ds.classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < labels_per_class {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than {labels_per_class} labels per class",
                members.len()
            )));
        }
        rng.shuffle(members);
        labeled.extend_from_slice(&members[..labels_per_class]);
    }
    labeled.sort_unstable();
    let mut is_labeled = vec![false; ds.len()];
    labeled.iter().for_each(|&i| is_labeled[i] = true);
    let unlabeled = (0..ds.len()).filter(|&i| !is_labeled[i]).collect();
    Ok(SemiSplit { labeled, unlabeled })
}

/// Sample indices of one step: labeled first, then unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl BatchIndices {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All indices in batch order.
    pub fn all(&self) -> Vec<usize> {
        self.labeled
            .iter()
            .chain(&self.unlabeled)
            .copied()
            .collect()
    }
}

/// One epoch of batches over the pool `split.labeled + split.unlabeled`.
///
/// Labeled and unlabeled indices are shuffled separately; batch `b` takes a
/// share of the labeled list proportional to its size, so every batch holds
/// roughly `batch * |labeled| / |pool|` labeled samples and every pool index
/// appears exactly once. The last batch carries the remainder. If the labeled
/// set is too small to give every batch a labeled sample, batches that would
/// get none receive one extra labeled sample drawn cyclically from a second
/// shuffle of the labeled list.
pub struct BatchIter {
    batches: alloc::vec::IntoIter<BatchIndices>,
}

impl Iterator for BatchIter {
    type Item = BatchIndices;

    fn next(&mut self) -> Option<BatchIndices> {
        self.batches.next()
    }
}

impl ExactSizeIterator for BatchIter {
    fn len(&self) -> usize {
        self.batches.len()
    }
}

pub fn batch_iter(split: &SemiSplit, batch: usize, rng: &mut Rng) -> Result<BatchIter> {
    if batch < 2 {
        return Err(Error::Config(format!(
            "batch size must be >= 2, got {batch}"
        )));
    }
    let pool = split.len();
    if batch > pool {
        return Err(Error::Config(format!(
            "batch size {batch} exceeds the {pool} training samples"
        )));
    }
    if split.labeled.is_empty() {
        return Err(Error::Config("the labeled set is empty".to_string()));
    }
    let mut labeled = split.labeled.clone();
    let mut unlabeled = split.unlabeled.clone();
    rng.shuffle(&mut labeled);
    rng.shuffle(&mut unlabeled);

    let n_batches = pool.div_ceil(batch);
    let n_lab = labeled.len();
    let labeled_before = |end: usize| end * n_lab / pool;
    let mut spare = split.labeled.clone();
    rng.shuffle(&mut spare);
    let mut spare_pos = 0;

    let mut out = Vec::with_capacity(n_batches);
    let (mut lab_pos, mut unl_pos) = (0, 0);
    for b in 0..n_batches {
        let start = b * batch;
        let end = (start + batch).min(pool);
        let lab_end = labeled_before(end);
        let take_lab = lab_end - lab_pos;
        let take_unl = (end - start) - take_lab;
        let mut lab = labeled[lab_pos..lab_end].to_vec();
        if lab.is_empty() {
            lab.push(spare[spare_pos % spare.len()]);
            spare_pos += 1;
        }
        out.push(BatchIndices {
            labeled: lab,
            unlabeled: unlabeled[unl_pos..unl_pos + take_unl].to_vec(),
        });
        lab_pos = lab_end;
        unl_pos += take_unl;
    }
    debug_assert_eq!((lab_pos, unl_pos), (n_lab, unlabeled.len()));
    Ok(BatchIter {
        batches: out.into_iter(),
    })
}
