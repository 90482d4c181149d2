//! Second-view construction: quarter-turn rotation, Gaussian blur and
//! additive noise.
//!
//! Images are `h x w x ch` tensors (batches `n x h x w x ch`). Each sample's
//! augmentation is drawn from its own stream, derived from the caller's rng
//! and the sample id, so a sample is augmented the same way whatever batch it
//! lands in.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    Identity,
    Rotate90,
    GaussianBlur,
    AdditiveNoise,
    /// Random rotation followed by random blur.
    Compose,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Identity => "identity",
            AugmentKind::Rotate90 => "rotate90",
            AugmentKind::GaussianBlur => "gaussian_blur",
            AugmentKind::AdditiveNoise => "additive_noise",
            AugmentKind::Compose => "compose",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            AugmentKind::Identity,
            AugmentKind::Rotate90,
            AugmentKind::GaussianBlur,
            AugmentKind::AdditiveNoise,
            AugmentKind::Compose,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn needs_images(self) -> bool {
        matches!(
            self,
            AugmentKind::Rotate90 | AugmentKind::GaussianBlur | AugmentKind::Compose
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    /// Quarter-turn counts to choose from, each in `0..=3`.
    pub turns: Vec<u8>,
    /// Blur sigma drawn uniformly from `[sigma.0, sigma.1]`.
    pub sigma: (f64, f64),
    pub ksize: usize,
    pub noise_std: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            kind: AugmentKind::AdditiveNoise,
            turns: vec![1, 2, 3],
            sigma: (0.1, 1.5),
            ksize: 5,
            noise_std: 0.1,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            kind: AugmentKind::Identity,
            ..Self::default()
        }
    }

    pub fn noise(std: f64) -> Self {
        Self {
            kind: AugmentKind::AdditiveNoise,
            noise_std: std,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!(
                "noise std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if matches!(self.kind, AugmentKind::Rotate90 | AugmentKind::Compose) {
            if self.turns.is_empty() || self.turns.iter().any(|&t| t > 3) {
                return Err(Error::Config(format!(
                    "rotation turns must be a non-empty subset of 0..=3, got {:?}",
                    self.turns
                )));
            }
        }
        if matches!(self.kind, AugmentKind::GaussianBlur | AugmentKind::Compose) {
            let (lo, hi) = self.sigma;
            if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "blur sigma range invalid: {:?}",
                    self.sigma
                )));
            }
            if self.ksize % 2 == 0 {
                return Err(Error::Config(format!(
                    "blur kernel size must be odd, got {}",
                    self.ksize
                )));
            }
        }
        Ok(())
    }
}

fn image_dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, ch] => Ok((h, w, ch)),
        _ => Err(Error::Contract(format!(
            "expected an h x w x ch image, got shape {:?}",
            img.shape()
        ))),
    }
}

/// Counter-clockwise rotation by `quarter_turns * 90` degrees.
pub fn rotate90(img: &Tensor, quarter_turns: u8) -> Result<Tensor> {
    let (h, w, ch) = image_dims(img)?;
    if h != w {
        return Err(Error::Contract(format!(
            "rotation needs a square image, got {h} x {w}"
        )));
    }
    if quarter_turns > 3 {
        return Err(Error::Contract(format!(
            "quarter turns must be 0..=3, got {quarter_turns}"
        )));
    }
    let mut cur = img.clone();
    for _ in 0..quarter_turns {
        let src = cur.data();
        let mut out = vec![0.0; src.len()];
        // out[i][j] = in[j][w - 1 - i]
        for i in 0..h {
            for j in 0..w {
                let from = (j * w + (w - 1 - i)) * ch;
                let to = (i * w + j) * ch;
                out[to..to + ch].copy_from_slice(&src[from..from + ch]);
            }
        }
        cur = Tensor::new(img.shape(), out)?;
    }
    Ok(cur)
}

/// Normalized 1-D Gaussian weights for offsets `-r..=r`, `r = ksize / 2`.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    if ksize % 2 == 0 {
        return Err(Error::Domain(format!(
            "blur kernel size must be odd, got {ksize}"
        )));
    }
    let r = (ksize / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|o| libm::exp(-((o * o) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Half-sample symmetric extension: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur with reflect padding, applied per channel.
pub fn gaussian_blur(img: &Tensor, sigma: f64, ksize: usize) -> Result<Tensor> {
    let (h, w, ch) = image_dims(img)?;
    if ksize > h.min(w) {
        return Err(Error::Domain(format!(
            "kernel size {ksize} exceeds image side {}",
            h.min(w)
        )));
    }
    let k = gaussian_kernel(sigma, ksize)?;
    let r = (ksize / 2) as isize;
    let src = img.data();
    let at = |y: usize, x: usize, c: usize| (y * w + x) * ch + c;

    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                horiz[at(y, x, c)] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * src[at(y, reflect(x as isize + t as isize - r, w), c)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[at(y, x, c)] = k
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * horiz[at(reflect(y as isize + t as isize - r, h), x, c)])
                    .sum();
            }
        }
    }
    Tensor::new(img.shape(), out)
}

fn augment_sample(sample: &Tensor, rng: &mut Rng, policy: &AugmentPolicy) -> Result<Tensor> {
    let pick_turn = |rng: &mut Rng| policy.turns[rng.below(policy.turns.len())];
    let pick_sigma = |rng: &mut Rng| rng.uniform_in(policy.sigma.0, policy.sigma.1);
    match policy.kind {
        AugmentKind::Identity => Ok(sample.clone()),
        AugmentKind::Rotate90 => rotate90(sample, pick_turn(rng)),
        AugmentKind::GaussianBlur => gaussian_blur(sample, pick_sigma(rng), policy.ksize),
        AugmentKind::Compose => {
            let turned = rotate90(sample, pick_turn(rng))?;
            gaussian_blur(&turned, pick_sigma(rng), policy.ksize)
        }
        AugmentKind::AdditiveNoise => Ok(sample.map(|v| v + policy.noise_std * rng.normal())),
    }
}

/// Returns `(x, x')` with `x'` augmented per sample; sample `i` uses stream `ids[i]`.
pub fn make_view_pair_indexed(
    x: &Tensor,
    ids: &[usize],
    rng: &Rng,
    policy: &AugmentPolicy,
) -> Result<(Tensor, Tensor)> {
    policy.validate()?;
    if ids.len() != x.rows() {
        return Err(Error::Contract(format!(
            "{} ids for {} samples",
            ids.len(),
            x.rows()
        )));
    }
    if policy.kind.needs_images() && x.rank() != 4 {
        return Err(Error::Contract(format!(
            "{} needs n x h x w x ch images, got shape {:?}",
            policy.kind.name(),
            x.shape()
        )));
    }
    let sample_shape = &x.shape()[1..];
    let mut out = Vec::with_capacity(x.numel());
    for (i, &id) in ids.iter().enumerate() {
        let sample = Tensor::new(sample_shape, x.row(i).to_vec())?;
        let mut stream = rng.derive(id as u64);
        out.extend_from_slice(augment_sample(&sample, &mut stream, policy)?.data());
    }
    Ok((x.clone(), Tensor::new(x.shape(), out)?))
}

/// [`make_view_pair_indexed`] with ids `0..n`.
pub fn make_view_pair(x: &Tensor, rng: &Rng, policy: &AugmentPolicy) -> Result<(Tensor, Tensor)> {
    let ids: Vec<usize> = (0..x.rows()).collect();
    make_view_pair_indexed(x, &ids, rng, policy)
}
