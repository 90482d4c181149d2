//! Exact checks of the InfoNCE lower bound on mutual information for small
//! discrete joints.
//!
//! With the critic `f(r, r') = k p(r'|r) / p(r')`, one positive pair drawn
//! from the joint and `n - 1` negatives drawn i.i.d. from the marginal of
//! `r'`, the expected contrast loss `L` satisfies `MI(R; R') >= log n - L`.
//! [`exact_infonce`] computes `L` by enumerating every anchor pair and every
//! negative configuration, so the bound can be checked to rounding error.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Upper limit on enumerated terms in [`exact_infonce`].
pub const MAX_ENUMERATION_TERMS: u128 = 10_000_000;

const SUM_TOL: f64 = 1e-12;

/// Finite joint distribution `p(r, r')` with strictly positive marginals.
///
/// Outcomes whose marginal probability is zero are dropped on construction,
/// and the remaining outcomes are renumbered densely.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    m_r: usize,
    m_s: usize,
    probs: Vec<f64>,
    p_r: Vec<f64>,
    p_s: Vec<f64>,
}

impl DiscreteJoint {
    /// `probs` is an `m_r x m_s` row-major table.
    pub fn new(m_r: usize, m_s: usize, probs: Vec<f64>) -> Result<Self> {
        if m_r == 0 || m_s == 0 || probs.len() != m_r * m_s {
            return Err(Error::Config(format!(
                "joint table of {} entries does not match {m_r} x {m_s}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!(
                "joint entries must be finite and >= 0, found {bad}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if libm::fabs(total - 1.0) > SUM_TOL {
            return Err(Error::Config(format!(
                "joint table sums to {total}, expected 1"
            )));
        }
        let row_sum = |r: usize| -> f64 { probs[r * m_s..(r + 1) * m_s].iter().sum() };
        let col_sum = |s: usize| -> f64 { (0..m_r).map(|r| probs[r * m_s + s]).sum() };
        let rows: Vec<usize> = (0..m_r).filter(|&r| row_sum(r) > 0.0).collect();
        let cols: Vec<usize> = (0..m_s).filter(|&s| col_sum(s) > 0.0).collect();
        let mut kept = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &s in &cols {
                kept.push(probs[r * m_s + s]);
            }
        }
        let (m_r, m_s) = (rows.len(), cols.len());
        let p_r = (0..m_r)
            .map(|r| kept[r * m_s..(r + 1) * m_s].iter().sum())
            .collect();
        let p_s = (0..m_s)
            .map(|s| (0..m_r).map(|r| kept[r * m_s + s]).sum())
            .collect();
        Ok(Self {
            m_r,
            m_s,
            probs: kept,
            p_r,
            p_s,
        })
    }

    /// Independent joint `p(r) p(r')`.
    pub fn product(p_r: &[f64], p_s: &[f64]) -> Result<Self> {
        let probs = p_r
            .iter()
            .flat_map(|a| p_s.iter().map(move |b| a * b))
            .collect();
        Self::new(p_r.len(), p_s.len(), probs)
    }

    /// `p(i, i) = 1/m`: perfectly correlated outcomes.
    pub fn diagonal_uniform(m: usize) -> Result<Self> {
        let mut probs = vec![0.0; m * m];
        for i in 0..m {
            probs[i * m + i] = 1.0 / m as f64;
        }
        // 1/m summed m times can miss 1 by a few ulps; renormalize exactly
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(m, m, probs)
    }

    pub fn m_r(&self) -> usize {
        self.m_r
    }

    pub fn m_s(&self) -> usize {
        self.m_s
    }

    pub fn p(&self, r: usize, s: usize) -> f64 {
        self.probs[r * self.m_s + s]
    }

    pub fn marginal_r(&self) -> &[f64] {
        &self.p_r
    }

    pub fn marginal_s(&self) -> &[f64] {
        &self.p_s
    }

    pub fn transpose(&self) -> Self {
        let mut probs = vec![0.0; self.probs.len()];
        for r in 0..self.m_r {
            for s in 0..self.m_s {
                probs[s * self.m_r + r] = self.p(r, s);
            }
        }
        Self {
            m_r: self.m_s,
            m_s: self.m_r,
            probs,
            p_r: self.p_s.clone(),
            p_s: self.p_r.clone(),
        }
    }

    pub fn entropy_r(&self) -> f64 {
        entropy(&self.p_r)
    }

    pub fn entropy_s(&self) -> f64 {
        entropy(&self.p_s)
    }
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * libm::log(v))
        .sum::<f64>()
}

/// `sum p(r, r') log( p(r, r') / (p(r) p(r')) )` in nats.
pub fn mutual_information(j: &DiscreteJoint) -> f64 {
    let mut mi = 0.0;
    for r in 0..j.m_r {
        for s in 0..j.m_s {
            let p = j.p(r, s);
            if p > 0.0 {
                mi += p * libm::log(p / (j.p_r[r] * j.p_s[s]));
            }
        }
    }
    mi.max(0.0)
}

/// `k p(r'|r) / p(r')`.
pub fn critic_value(j: &DiscreteJoint, r: usize, r_prime: usize, k: f64) -> Result<f64> {
    if r >= j.m_r || r_prime >= j.m_s {
        return Err(Error::Contract(format!(
            "outcome ({r}, {r_prime}) outside {} x {} joint",
            j.m_r, j.m_s
        )));
    }
    if !(k > 0.0) {
        return Err(Error::Domain(format!(
            "critic constant k must be positive, got {k}"
        )));
    }
    Ok(k * (j.p(r, r_prime) / j.p_r[r]) / j.p_s[r_prime])
}

fn check_batch(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain(format!(
            "contrast batch size n must be >= 2, got {n}"
        )));
    }
    Ok(())
}

/// Number of terms [`exact_infonce`] would enumerate.
pub fn enumeration_terms(j: &DiscreteJoint, n: usize) -> u128 {
    let anchors = (j.m_r * j.m_s) as u128;
    let negatives = (j.m_s as u128).checked_pow((n - 1) as u32);
    negatives
        .and_then(|neg| anchors.checked_mul(neg))
        .unwrap_or(u128::MAX)
}

/// Exact expected contrast loss for batch size `n` and critic constant `k`.
///
/// Averages `-log( f(r, r') / (f(r, r') + sum_j f(r, r'_j)) )` over the anchor
/// pair `(r, r') ~ p` and the `n - 1` negatives `r'_j ~ p(r')`, weighting every
/// configuration by its exact probability.
pub fn exact_infonce(j: &DiscreteJoint, n: usize, k: f64) -> Result<f64> {
    check_batch(n)?;
    if !(k > 0.0) {
        return Err(Error::Domain(format!(
            "critic constant k must be positive, got {k}"
        )));
    }
    let terms = enumeration_terms(j, n);
    if terms > MAX_ENUMERATION_TERMS {
        return Err(Error::Size {
            terms,
            limit: MAX_ENUMERATION_TERMS,
        });
    }
    let negatives = n - 1;
    let mut config = vec![0usize; negatives];
    let mut expected = 0.0;
    for r in 0..j.m_r {
        let scores: Vec<f64> = (0..j.m_s)
            .map(|s| critic_value(j, r, s, k))
            .collect::<Result<_>>()?;
        for s in 0..j.m_s {
            let p_anchor = j.p(r, s);
            if p_anchor == 0.0 {
                continue;
            }
            let positive = scores[s];
            // odometer over (r'_1, ..., r'_{n-1})
            config.iter_mut().for_each(|c| *c = 0);
            let mut inner = 0.0;
            loop {
                let mut weight = 1.0;
                let mut denom = positive;
                for &c in &config {
                    weight *= j.p_s[c];
                    denom += scores[c];
                }
                inner += weight * -libm::log(positive / denom);
                let mut pos = 0;
                while pos < negatives {
                    config[pos] += 1;
                    if config[pos] < j.m_s {
                        break;
                    }
                    config[pos] = 0;
                    pos += 1;
                }
                if pos == negatives {
                    break;
                }
            }
            expected += p_anchor * inner;
        }
    }
    Ok(expected)
}

/// Monte Carlo estimate of [`exact_infonce`]: returns `(mean, standard error)`.
///
/// Usable where exact enumeration exceeds [`MAX_ENUMERATION_TERMS`].
pub fn monte_carlo_infonce(
    j: &DiscreteJoint,
    n: usize,
    k: f64,
    samples: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    check_batch(n)?;
    if samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let draw = |rng: &mut Rng, weights: &[f64]| -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    };
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let cell = draw(rng, &j.probs);
        let (r, s) = (cell / j.m_s, cell % j.m_s);
        let positive = critic_value(j, r, s, k)?;
        let mut denom = positive;
        for _ in 1..n {
            denom += critic_value(j, r, draw(rng, &j.p_s), k)?;
        }
        let v = -libm::log(positive / denom);
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok((mean, libm::sqrt(var / m)))
}

/// Result of checking `L + MI - log n >= -tol` on one joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    /// Exact expected contrast loss.
    pub infonce: f64,
    pub mi: f64,
    pub log_n: f64,
    /// `infonce + mi - log_n`; the bound holds iff this is non-negative.
    pub gap: f64,
    /// `log(n - 1)`, the additive constant of the approximate derivation,
    /// reported for comparison only.
    pub approx_constant: f64,
    pub pass: bool,
}

pub fn verify_bound(j: &DiscreteJoint, n: usize, tol: f64) -> Result<BoundReport> {
    let infonce = exact_infonce(j, n, 1.0)?;
    let mi = mutual_information(j);
    let log_n = libm::log(n as f64);
    let gap = infonce + mi - log_n;
    Ok(BoundReport {
        infonce,
        mi,
        log_n,
        gap,
        approx_constant: libm::log((n - 1) as f64),
        pass: gap >= -tol,
    })
}

/// How a sweep joint was generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    /// Dirichlet(1) table.
    Random,
    /// Dirichlet table with roughly a third of the cells zeroed.
    Sparse,
    /// Product of two random marginals.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepConfig {
    pub joints: usize,
    pub max_outcomes: usize,
    pub max_n: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            joints: 200,
            max_outcomes: 5,
            max_n: 4,
            tol: 1e-9,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    /// Seed that regenerates this joint through [`random_joint`].
    pub seed: u64,
    pub kind: JointKind,
    pub m_r: usize,
    pub m_s: usize,
    pub n: usize,
    pub report: BoundReport,
}

fn dirichlet(rng: &mut Rng, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| -libm::log(1.0 - rng.uniform())).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Regenerates the joint, its kind and batch size from a per-joint seed.
pub fn random_joint(
    seed: u64,
    max_outcomes: usize,
    max_n: usize,
) -> Result<(DiscreteJoint, JointKind, usize)> {
    if max_outcomes < 2 || max_n < 2 {
        return Err(Error::Config(format!(
            "sweep needs max_outcomes >= 2 and max_n >= 2 (got {max_outcomes}, {max_n})"
        )));
    }
    let mut rng = Rng::new(seed);
    let m_r = 2 + rng.below(max_outcomes - 1);
    let m_s = 2 + rng.below(max_outcomes - 1);
    let n = 2 + rng.below(max_n - 1);
    let kind = match rng.below(10) {
        0..=1 => JointKind::Independent,
        2..=4 => JointKind::Sparse,
        _ => JointKind::Random,
    };
    let joint = match kind {
        JointKind::Independent => {
            let a = dirichlet(&mut rng, m_r);
            let b = dirichlet(&mut rng, m_s);
            DiscreteJoint::product(&a, &b)?
        }
        JointKind::Random => DiscreteJoint::new(m_r, m_s, dirichlet(&mut rng, m_r * m_s))?,
        JointKind::Sparse => {
            let mut p = dirichlet(&mut rng, m_r * m_s);
            for v in p.iter_mut() {
                if rng.below(3) == 0 {
                    *v = 0.0;
                }
            }
            if p.iter().all(|&v| v == 0.0) {
                p[0] = 1.0;
            }
            DiscreteJoint::new(m_r, m_s, renormalize(p))?
        }
    };
    Ok((joint, kind, n))
}

/// Checks the bound on `cfg.joints` seeded random joints.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let root = Rng::new(cfg.seed);
    (0..cfg.joints)
        .map(|i| {
            let seed = root.derive(i as u64).key();
            let (joint, kind, n) = random_joint(seed, cfg.max_outcomes, cfg.max_n)?;
            Ok(SweepRow {
                seed,
                kind,
                m_r: joint.m_r(),
                m_s: joint.m_s(),
                n,
                report: verify_bound(&joint, n, cfg.tol)?,
            })
        })
        .collect()
}
