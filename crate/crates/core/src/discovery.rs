//! Discovery experiments: how often forward diffusion visits or ends at a target.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitmask::BitMask;
use crate::continuous::{NoiseSchedule, TrainingCloud};
use crate::discrete::{forward_step, FlipSchedule, ProbabilityTable};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::vocab::Normalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetState {
    Mask(BitMask),
    /// Raw grams with per-ingredient tolerance half-widths.
    Grams {
        grams: Vec<f64>,
        tolerance: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryTarget {
    pub name: String,
    #[serde(flatten)]
    pub state: TargetState,
}

impl DiscoveryTarget {
    pub fn mask(name: impl Into<String>, mask: BitMask) -> Self {
        Self {
            name: name.into(),
            state: TargetState::Mask(mask),
        }
    }

    pub fn grams(name: impl Into<String>, grams: Vec<f64>, tolerance: Vec<f64>) -> Result<Self> {
        if grams.len() != tolerance.len() {
            return Err(Error::LengthMismatch {
                expected: grams.len(),
                actual: tolerance.len(),
            });
        }
        if tolerance.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidParameter(
                "tolerance half-widths must be non-negative".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            state: TargetState::Grams { grams, tolerance },
        })
    }
}

/// Tolerance box used for the burger benchmark: 20% of the reference bun, patty and cheese.
pub const BURGER_TOLERANCE_GRAMS: [f64; 3] = [11.0, 9.0, 2.8];

/// The six burgers of the benchmark, in raw grams of [bun, patty, cheese].
pub fn burger_targets() -> Vec<DiscoveryTarget> {
    [
        ("Hamburger", [55.0, 45.0, 0.0]),
        ("Cheeseburger", [55.0, 45.0, 14.0]),
        ("Mc Double", [55.0, 90.0, 14.0]),
        ("Big Mac", [78.0, 90.0, 14.0]),
        ("Double Cheeseburger", [55.0, 90.0, 28.0]),
        ("Quarter Pounder", [72.0, 120.0, 14.0]),
    ]
    .into_iter()
    .map(|(name, g)| DiscoveryTarget::grams(name, g.to_vec(), BURGER_TOLERANCE_GRAMS.to_vec()).expect("valid"))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub p_path: f64,
    pub p_end: f64,
    /// `None` when the probability estimate is zero (no discovery observed).
    pub n95_path: Option<u64>,
    pub n95_end: Option<u64>,
    pub trials: u64,
    pub hits_path: u64,
    pub hits_end: u64,
    /// Three binomial standard errors of each estimate.
    pub ci_path: f64,
    pub ci_end: f64,
}

impl DiscoveryReport {
    pub fn from_counts(hits_path: u64, hits_end: u64, trials: u64) -> Self {
        let p_path = hits_path as f64 / trials as f64;
        let p_end = hits_end as f64 / trials as f64;
        Self {
            p_path,
            p_end,
            n95_path: n95(p_path),
            n95_end: n95(p_end),
            trials,
            hits_path,
            hits_end,
            ci_path: binomial_3sigma(p_path, trials),
            ci_end: binomial_3sigma(p_end, trials),
        }
    }
}

pub fn binomial_3sigma(p: f64, trials: u64) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Samples needed for a 95% chance of at least one discovery: ⌈ln 0.05 / ln(1−p)⌉.
/// Returns `None` for p ≤ 0 (never discovered).
pub fn n95(p: f64) -> Option<u64> {
    if !(p > 0.0) {
        None
    } else if p >= 1.0 {
        Some(1)
    } else {
        // The guard keeps exact ratios such as p = 0.95 from rounding up past an integer.
        Some(((0.05f64.ln() / (-p).ln_1p()) - 1e-9).ceil().max(1.0) as u64)
    }
}

fn check_trials(trials: u64) -> Result<()> {
    if trials == 0 {
        Err(Error::InvalidParameter("trials must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn sample_state<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn merge(mut a: Vec<(u64, u64)>, b: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    for (x, y) in a.iter_mut().zip(b) {
        x.0 += y.0;
        x.1 += y.1;
    }
    a
}

/// Forward trajectories on the hypercube from `x0_distribution`; counts visits to each target.
pub fn discrete_discovery_many(
    x0_distribution: &ProbabilityTable,
    targets: &[BitMask],
    schedule: &FlipSchedule,
    trials: u64,
    seed: u64,
) -> Result<Vec<DiscoveryReport>> {
    check_trials(trials)?;
    let n = x0_distribution.n();
    for t in targets {
        if t.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: t.len(),
            });
        }
    }
    let idx: Vec<usize> = targets.iter().map(BitMask::index).collect();
    let cdf: Vec<f64> = x0_distribution
        .probs()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let zero = || vec![(0u64, 0u64); idx.len()];
    let counts = (0..trials)
        .into_par_iter()
        .fold(zero, |mut acc, i| {
            let mut rng = stream(seed, i);
            let mut s = sample_state(&cdf, &mut rng);
            let mut seen = vec![false; idx.len()];
            for (v, &t) in seen.iter_mut().zip(&idx) {
                *v = s == t;
            }
            for _ in 0..schedule.steps {
                s = forward_step(s, n, schedule.beta, &mut rng);
                for (v, &t) in seen.iter_mut().zip(&idx) {
                    *v |= s == t;
                }
            }
            for ((a, &v), &t) in acc.iter_mut().zip(&seen).zip(&idx) {
                a.0 += v as u64;
                a.1 += (s == t) as u64;
            }
            acc
        })
        .reduce(zero, merge);
    Ok(counts
        .into_iter()
        .map(|(p, e)| DiscoveryReport::from_counts(p, e, trials))
        .collect())
}

pub fn discrete_discovery(
    x0_distribution: &ProbabilityTable,
    target: &BitMask,
    schedule: &FlipSchedule,
    trials: u64,
    seed: u64,
) -> Result<DiscoveryReport> {
    discrete_discovery_many(x0_distribution, std::slice::from_ref(target), schedule, trials, seed)
        .map(|mut v| v.remove(0))
}

struct GramBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl GramBox {
    fn contains(&self, grams: &[f64]) -> bool {
        grams
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(g, (lo, hi))| g >= lo && g <= hi)
    }
}

/// Forward OU trajectories from uniformly chosen cloud points, with hits evaluated in raw
/// grams. All targets share the same trajectories.
pub fn continuous_discovery_many(
    cloud: &TrainingCloud,
    normalization: &Normalization,
    targets: &[DiscoveryTarget],
    schedule: &NoiseSchedule,
    trials: u64,
    seed: u64,
) -> Result<Vec<DiscoveryReport>> {
    check_trials(trials)?;
    let n = cloud.dim();
    if normalization.n() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: normalization.n(),
        });
    }
    let mut boxes = Vec::with_capacity(targets.len());
    for t in targets {
        match &t.state {
            TargetState::Grams { grams, tolerance } if grams.len() == n => boxes.push(GramBox {
                lo: grams.iter().zip(tolerance).map(|(g, d)| g - d).collect(),
                hi: grams.iter().zip(tolerance).map(|(g, d)| g + d).collect(),
            }),
            TargetState::Grams { grams, .. } => {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: grams.len(),
                })
            }
            TargetState::Mask(_) => {
                return Err(Error::InvalidParameter(format!(
                    "target '{}' has no gram tolerance box",
                    t.name
                )))
            }
        }
    }
    let transitions = schedule.transitions();
    let zero = || vec![(0u64, 0u64); boxes.len()];
    let counts = (0..trials)
        .into_par_iter()
        .fold(zero, |mut acc, i| {
            let mut rng = stream(seed, i);
            let start = rng.gen_range(0..cloud.len());
            let mut w = cloud.points()[start].clone();
            let mut grams = normalization.to_grams(&w);
            let mut seen: Vec<bool> = boxes.iter().map(|b| b.contains(&grams)).collect();
            for &(a, s) in &transitions {
                let sd = s.sqrt();
                for v in w.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v = a * *v + sd * e;
                }
                grams = normalization.to_grams(&w);
                for (v, b) in seen.iter_mut().zip(&boxes) {
                    *v = *v || b.contains(&grams);
                }
            }
            for ((a, &v), b) in acc.iter_mut().zip(&seen).zip(&boxes) {
                a.0 += v as u64;
                a.1 += b.contains(&grams) as u64;
            }
            acc
        })
        .reduce(zero, merge);
    Ok(counts
        .into_iter()
        .map(|(p, e)| DiscoveryReport::from_counts(p, e, trials))
        .collect())
}

pub fn continuous_discovery(
    cloud: &TrainingCloud,
    normalization: &Normalization,
    target: &DiscoveryTarget,
    schedule: &NoiseSchedule,
    trials: u64,
    seed: u64,
) -> Result<DiscoveryReport> {
    continuous_discovery_many(
        cloud,
        normalization,
        std::slice::from_ref(target),
        schedule,
        trials,
        seed,
    )
    .map(|mut v| v.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopePoint {
    pub d_squared: f64,
    pub n95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through (d², log10 N95).
pub fn slope_fit(points: &[SlopePoint]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points"));
    }
    if points
        .iter()
        .any(|p| !(p.n95 > 0.0 && p.n95.is_finite() && p.d_squared.is_finite()))
    {
        return Err(Error::DegenerateFit("N95 must be finite and positive"));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.d_squared).sum::<f64>() / k;
    let my = points.iter().map(|p| p.n95.log10()).sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in points {
        let dx = p.d_squared - mx;
        sxy += dx * (p.n95.log10() - my);
        sxx += dx * dx;
    }
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(Error::DegenerateFit("all points share the same d²"));
    }
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Euclidean distance to the training set: to the segment joining the two points of a
/// two-point cloud, otherwise to the nearest point.
pub fn distance_to_manifold(target: &[f64], cloud: &TrainingCloud) -> Result<f64> {
    if target.len() != cloud.dim() {
        return Err(Error::LengthMismatch {
            expected: cloud.dim(),
            actual: target.len(),
        });
    }
    let pts = cloud.points();
    if pts.len() == 2 {
        let (a, b) = (&pts[0], &pts[1]);
        let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let len2: f64 = ab.iter().map(|v| v * v).sum();
        let s = if len2 > 0.0 {
            let dot: f64 = target.iter().zip(a).zip(&ab).map(|((t, a), d)| (t - a) * d).sum();
            (dot / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let proj: Vec<f64> = a.iter().zip(&ab).map(|(a, d)| a + s * d).collect();
        return Ok(dist(target, &proj));
    }
    Ok(pts.iter().map(|p| dist(target, p)).fold(f64::INFINITY, f64::min))
}
