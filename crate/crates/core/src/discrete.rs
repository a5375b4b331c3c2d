//! Exact discrete diffusion on the hypercube {0,1}^n.
//!
//! Each step flips every bit independently with probability β. Distributions over all
//! 2^n states are held explicitly in a [`ProbabilityTable`], so this tier is limited to
//! small `n`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitmask::{hamming, BitMask};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

/// Largest dimension the exact tier will allocate a table for.
pub const MAX_EXACT_DIM: usize = 24;

const SUM_TOLERANCE: f64 = 1e-9;

/// Explicit distribution over all 2^n masks, indexed by [`BitMask::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    n: usize,
    probs: Vec<f64>,
}

fn check_dim(n: usize) -> Result<()> {
    if n > MAX_EXACT_DIM {
        Err(Error::DimensionTooLarge(n))
    } else {
        Ok(())
    }
}

impl ProbabilityTable {
    /// Validates and renormalizes `probs` (length 2^n, non-negative, summing to 1).
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        if probs.len() != 1 << n {
            return Err(Error::LengthMismatch {
                expected: 1 << n,
                actual: probs.len(),
            });
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "probability {p} is negative or not finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("probabilities sum to {sum}, not 1")));
        }
        let mut table = Self { n, probs };
        table.renormalize();
        Ok(table)
    }

    pub fn delta(x: &BitMask) -> Result<Self> {
        check_dim(x.len())?;
        let mut probs = vec![0.0; 1 << x.len()];
        probs[x.index()] = 1.0;
        Ok(Self { n: x.len(), probs })
    }

    /// Empirical distribution of a list of masks.
    pub fn from_masks(masks: &[BitMask]) -> Result<Self> {
        let first = masks.first().ok_or(Error::EmptyInput("masks"))?;
        let n = first.len();
        check_dim(n)?;
        let mut counts = vec![0u64; 1 << n];
        for m in masks {
            if m.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: m.len(),
                });
            }
            counts[m.index()] += 1;
        }
        Self::from_counts(n, &counts)
    }

    pub fn from_counts(n: usize, counts: &[u64]) -> Result<Self> {
        check_dim(n)?;
        if counts.len() != 1 << n {
            return Err(Error::LengthMismatch {
                expected: 1 << n,
                actual: counts.len(),
            });
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("counts"));
        }
        Ok(Self {
            n,
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &BitMask) -> f64 {
        self.probs[x.index()]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        shannon_entropy(self)
    }

    /// Half the L1 distance.
    pub fn total_variation(&self, other: &ProbabilityTable) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: other.n,
            });
        }
        Ok(0.5
            * self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    fn renormalize(&mut self) {
        let sum: f64 = self.probs.iter().sum();
        self.probs.iter_mut().for_each(|p| *p /= sum);
    }

    /// Applies the independent per-bit flip kernel with flip probability `q`, one axis at a time.
    fn flip_all(&self, q: f64) -> Self {
        let mut probs = self.probs.clone();
        for axis in 0..self.n {
            let bit = 1 << axis;
            for j in 0..probs.len() {
                if j & bit == 0 {
                    let (a, b) = (probs[j], probs[j | bit]);
                    probs[j] = (1.0 - q) * a + q * b;
                    probs[j | bit] = q * a + (1.0 - q) * b;
                }
            }
        }
        let mut out = Self { n: self.n, probs };
        out.renormalize();
        out
    }
}

/// Constant per-bit flip probability over a fixed number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipSchedule {
    pub beta: f64,
    pub steps: usize,
}

impl FlipSchedule {
    /// β outside (0,1) is clamped to [1e-12, 1-1e-12]; values outside [0,1] are rejected.
    pub fn new(beta: f64, steps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!(
                "flip probability must lie in [0,1], got {beta}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        Ok(Self {
            beta: beta.clamp(1e-12, 1.0 - 1e-12),
            steps,
        })
    }

    /// Cumulative flip probability after `t` steps.
    pub fn q(&self, t: usize) -> f64 {
        cumulative_flip(self.beta, t)
    }
}

/// q_t = ½(1 − (1−2β)^t).
pub fn cumulative_flip(beta: f64, t: usize) -> f64 {
    let r = 1.0 - 2.0 * beta;
    let rt = if t <= i32::MAX as usize {
        r.powi(t as i32)
    } else {
        r.powf(t as f64)
    };
    0.5 * (1.0 - rt)
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "flip probability must lie in [0,1], got {beta}"
        )))
    }
}

/// Probability of moving from `x` to `y` in one step: β^d (1−β)^(n−d).
pub fn one_step_prob(x: &BitMask, y: &BitMask, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let d = hamming(x, y)?;
    Ok(flip_prob(beta, d, x.len()))
}

/// Probability that one step moves exactly `d` bits: C(n,d) β^d (1−β)^(n−d).
pub fn distance_class_prob(n: usize, d: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if d > n {
        return Err(Error::InvalidParameter(format!("distance {d} exceeds dimension {n}")));
    }
    let binom = (0..d).fold(1.0, |acc, k| acc * (n - k) as f64 / (k + 1) as f64);
    Ok(binom * flip_prob(beta, d, n))
}

fn flip_prob(q: f64, d: usize, n: usize) -> f64 {
    q.powi(d as i32) * (1.0 - q).powi((n - d) as i32)
}

/// One forward step applied to a whole distribution.
pub fn evolve(p: &ProbabilityTable, beta: f64) -> Result<ProbabilityTable> {
    check_beta(beta)?;
    Ok(p.flip_all(beta))
}

/// p_t(·|x0) in closed form.
pub fn closed_form_marginal(x0: &BitMask, t: usize, beta: f64) -> Result<ProbabilityTable> {
    check_beta(beta)?;
    let n = x0.len();
    check_dim(n)?;
    let q = cumulative_flip(beta, t);
    let origin = x0.index();
    let probs = (0..1usize << n)
        .map(|y| flip_prob(q, (y ^ origin).count_ones() as usize, n))
        .collect();
    let mut table = ProbabilityTable { n, probs };
    table.renormalize();
    Ok(table)
}

/// p_t for an arbitrary starting distribution, as a superposition of closed-form marginals.
pub fn marginal_at(p0: &ProbabilityTable, t: usize, beta: f64) -> Result<ProbabilityTable> {
    check_beta(beta)?;
    Ok(p0.flip_all(cumulative_flip(beta, t)))
}

/// −Σ p ln p with 0 ln 0 = 0.
pub fn shannon_entropy(p: &ProbabilityTable) -> f64 {
    entropy_of(&p.probs)
}

pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn stationary(n: usize) -> Result<ProbabilityTable> {
    check_dim(n)?;
    let size = 1usize << n;
    Ok(ProbabilityTable {
        n,
        probs: vec![1.0 / size as f64; size],
    })
}

fn posterior(xt: usize, beta: f64, prior: &ProbabilityTable) -> Result<ProbabilityTable> {
    let n = prior.n;
    let mut probs: Vec<f64> = prior
        .probs
        .iter()
        .enumerate()
        .map(|(x, &p)| p * flip_prob(beta, (x ^ xt).count_ones() as usize, n))
        .collect();
    let evidence: f64 = probs.iter().sum();
    if !(evidence > 0.0) {
        return Err(Error::Internal(format!(
            "reverse kernel evidence is {evidence} for state {xt}"
        )));
    }
    probs.iter_mut().for_each(|p| *p /= evidence);
    Ok(ProbabilityTable { n, probs })
}

/// Bayes posterior over x_{t−1} given x_t, for data distribution `p0`.
pub fn reverse_kernel(xt: &BitMask, t: usize, beta: f64, p0: &ProbabilityTable) -> Result<ProbabilityTable> {
    if t == 0 {
        return Err(Error::InvalidParameter("reverse kernel needs t >= 1".into()));
    }
    if xt.len() != p0.n {
        return Err(Error::LengthMismatch {
            expected: p0.n,
            actual: xt.len(),
        });
    }
    let prior = marginal_at(p0, t - 1, beta)?;
    posterior(xt.index(), beta, &prior)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum; take the last state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// One forward step on an integer-encoded state.
pub(crate) fn forward_step<R: Rng + ?Sized>(state: usize, n: usize, beta: f64, rng: &mut R) -> usize {
    let mut s = state;
    for i in 0..n {
        if rng.gen::<f64>() < beta {
            s ^= 1 << i;
        }
    }
    s
}

/// Forward trajectory of length `steps + 1`, starting at `x0`.
pub fn sample_forward_trajectory(x0: &BitMask, schedule: &FlipSchedule, seed: u64) -> Vec<BitMask> {
    let mut rng = stream(seed, 0);
    forward_trajectory_with(x0, schedule, &mut rng)
}

pub fn forward_trajectory_with<R: Rng + ?Sized>(x0: &BitMask, schedule: &FlipSchedule, rng: &mut R) -> Vec<BitMask> {
    let n = x0.len();
    let mut state = x0.clone();
    let mut out = Vec::with_capacity(schedule.steps + 1);
    out.push(state.clone());
    for _ in 0..schedule.steps {
        for i in 0..n {
            if rng.gen::<f64>() < schedule.beta {
                state.set(i, !state.get(i));
            }
        }
        out.push(state.clone());
    }
    out
}

/// Precomputed priors p_{t−1} for every reverse step, shared across an ensemble.
#[derive(Debug, Clone)]
pub struct ReverseSampler {
    schedule: FlipSchedule,
    priors: Vec<ProbabilityTable>,
}

impl ReverseSampler {
    pub fn new(p0: &ProbabilityTable, schedule: FlipSchedule) -> Result<Self> {
        let mut priors = Vec::with_capacity(schedule.steps);
        let mut p = p0.clone();
        for _ in 0..schedule.steps {
            priors.push(p.clone());
            p = p.flip_all(schedule.beta);
        }
        Ok(Self { schedule, priors })
    }

    pub fn n(&self) -> usize {
        self.priors[0].n
    }

    pub fn schedule(&self) -> &FlipSchedule {
        &self.schedule
    }

    /// Posterior over x_{t−1} given x_t, using the cached prior.
    pub fn kernel(&self, xt: usize, t: usize) -> Result<ProbabilityTable> {
        if t == 0 || t > self.schedule.steps {
            return Err(Error::InvalidParameter(format!(
                "reverse step {t} outside 1..={}",
                self.schedule.steps
            )));
        }
        posterior(xt, self.schedule.beta, &self.priors[t - 1])
    }

    /// Integer-encoded states for t = T, T−1, …, 0.
    pub fn trajectory_indices<R: Rng + ?Sized>(&self, xt: usize, rng: &mut R) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.schedule.steps + 1);
        let mut state = xt;
        out.push(state);
        for t in (1..=self.schedule.steps).rev() {
            let post = self.kernel(state, t)?;
            state = sample_index(&post.probs, rng);
            out.push(state);
        }
        Ok(out)
    }

    pub fn trajectory<R: Rng + ?Sized>(&self, xt: &BitMask, rng: &mut R) -> Result<Vec<BitMask>> {
        let n = self.n();
        if xt.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: xt.len(),
            });
        }
        Ok(self
            .trajectory_indices(xt.index(), rng)?
            .into_iter()
            .map(|i| BitMask::from_index(i, n))
            .collect())
    }

    /// Per-step state counts of an ensemble started from the uniform distribution.
    /// `counts[k]` holds the histogram after `k` reverse steps (time T−k).
    pub fn ensemble_counts(&self, trajectories: u64, seed: u64) -> Result<Vec<Vec<u64>>> {
        let size = 1usize << self.n();
        let steps = self.schedule.steps;
        let zero = || vec![vec![0u64; size]; steps + 1];
        (0..trajectories)
            .into_par_iter()
            .try_fold(zero, |mut acc, i| {
                let mut rng: StreamRng = stream(seed, i);
                let start = rng.gen_range(0..size);
                for (k, s) in self.trajectory_indices(start, &mut rng)?.into_iter().enumerate() {
                    acc[k][s] += 1;
                }
                Ok(acc)
            })
            .try_reduce(zero, |mut a, b| {
                for (ra, rb) in a.iter_mut().zip(b) {
                    ra.iter_mut().zip(rb).for_each(|(x, y)| *x += y);
                }
                Ok(a)
            })
    }
}

/// Reverse trajectory x_T, …, x_0 sampled from the exact Bayes kernel.
pub fn sample_reverse_trajectory(
    xt: &BitMask,
    schedule: &FlipSchedule,
    p0: &ProbabilityTable,
    seed: u64,
) -> Result<Vec<BitMask>> {
    let sampler = ReverseSampler::new(p0, *schedule)?;
    let mut rng = stream(seed, 0);
    sampler.trajectory(xt, &mut rng)
}

/// Exact forward propagation for `steps` steps, including the start (length steps+1).
pub fn forward_sweep(p0: &ProbabilityTable, beta: f64, steps: usize) -> Result<Vec<ProbabilityTable>> {
    check_beta(beta)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p0.clone());
    for _ in 0..steps {
        let next = out.last().expect("non-empty").flip_all(beta);
        out.push(next);
    }
    Ok(out)
}

/// Exact data distribution of the three-ingredient fixture: ½ cheeseburger, ½ hamburger.
pub fn fixture_distribution() -> ProbabilityTable {
    let masks = [
        BitMask::new(vec![1, 1, 1]).expect("valid"),
        BitMask::new(vec![1, 1, 0]).expect("valid"),
    ];
    ProbabilityTable::from_masks(&masks).expect("valid")
}
