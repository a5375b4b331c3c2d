//! Exact continuous diffusion: a variance-preserving Ornstein–Uhlenbeck process on
//! weight vectors, its Gaussian-mixture score, and Euler–Maruyama reverse sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Linear rate schedule β(t) = β_min + (t/T)(β_max − β_min) on [0, T], discretized into `steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub total_time: f64,
    pub steps: usize,
}

/// Closed-form OU moments at one time: w_t | w_0 ~ N(μ w_0, σ I).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuMoments {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64, total_time: f64, steps: usize) -> Result<Self> {
        let finite = beta_min.is_finite() && beta_max.is_finite() && total_time.is_finite();
        if !finite || beta_min < 0.0 || beta_max < beta_min || beta_max <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= beta_min <= beta_max, beta_max > 0; got [{beta_min}, {beta_max}]"
            )));
        }
        if !(total_time > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "total time must be positive, got {total_time}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        Ok(Self {
            beta_min,
            beta_max,
            total_time,
            steps,
        })
    }

    pub fn constant(beta: f64, total_time: f64, steps: usize) -> Result<Self> {
        Self::new(beta, beta, total_time, steps)
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.steps as f64
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (t / self.total_time) * (self.beta_max - self.beta_min)
    }

    /// α(t) = ∫₀ᵗ β(s) ds.
    pub fn alpha(&self, t: f64) -> f64 {
        self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.total_time)
    }

    pub fn moments(&self, t: f64) -> Result<OuMoments> {
        ou_moments(self, t)
    }

    /// Time of grid point `k`, counting forward from 0.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.total_time
        } else {
            k as f64 * self.dt()
        }
    }

    /// Exact per-step transition coefficients `(a_k, s_k)` so that
    /// w_{k+1} = a_k w_k + √s_k ε on the forward grid.
    pub fn transitions(&self) -> Vec<(f64, f64)> {
        (0..self.steps)
            .map(|k| {
                let d = self.alpha(self.time(k + 1)) - self.alpha(self.time(k));
                ((-0.5 * d).exp(), -(-d).exp_m1())
            })
            .collect()
    }
}

pub fn ou_moments(schedule: &NoiseSchedule, t: f64) -> Result<OuMoments> {
    let total = schedule.total_time;
    let slack = 1e-12 * total;
    if !(t >= -slack && t <= total + slack) {
        return Err(Error::TimeOutOfRange { t, total });
    }
    let t = t.clamp(0.0, total);
    let alpha = schedule.alpha(t);
    Ok(OuMoments {
        mu: (-0.5 * alpha).exp(),
        sigma: -(-alpha).exp_m1(),
        alpha,
    })
}

/// Non-empty set of training points sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCloud {
    points: Vec<Vec<f64>>,
}

impl TrainingCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyInput("training cloud"))?.len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite training point".into()));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cheeseburger [0,0,0] and hamburger [0,0,−1] in reference-normalized units.
pub fn fixture_cloud() -> TrainingCloud {
    TrainingCloud::new(vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, -1.0]]).expect("valid")
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// w_t = μ(t) w_0 + √σ(t) ε.
pub fn forward_sample(w0: &[f64], schedule: &NoiseSchedule, t: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream(seed, 0);
    forward_sample_with(w0, schedule, t, &mut rng)
}

pub fn forward_sample_with<R: Rng + ?Sized>(
    w0: &[f64],
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let eps = standard_normal(rng, w0.len());
    forward_sample_with_noise(w0, schedule, t, &eps)
}

pub fn forward_sample_with_noise(w0: &[f64], schedule: &NoiseSchedule, t: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != w0.len() {
        return Err(Error::LengthMismatch {
            expected: w0.len(),
            actual: eps.len(),
        });
    }
    let m = ou_moments(schedule, t)?;
    let s = m.sigma.sqrt();
    Ok(w0.iter().zip(eps).map(|(w, e)| m.mu * w + s * e).collect())
}

/// Forward path on the schedule grid using exact OU transitions; length steps+1.
pub fn forward_trajectory_with<R: Rng + ?Sized>(w0: &[f64], schedule: &NoiseSchedule, rng: &mut R) -> Vec<Vec<f64>> {
    let mut w = w0.to_vec();
    let mut out = Vec::with_capacity(schedule.steps + 1);
    out.push(w.clone());
    for (a, s) in schedule.transitions() {
        let sd = s.sqrt();
        for v in w.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = a * *v + sd * e;
        }
        out.push(w.clone());
    }
    out
}

/// Posterior component weights γ_i(w,t), a log-sum-exp softmax.
pub fn mixture_weights(w: &[f64], t: f64, schedule: &NoiseSchedule, cloud: &TrainingCloud) -> Result<Vec<f64>> {
    let m = ou_moments(schedule, t)?;
    if m.sigma <= 0.0 {
        return Err(Error::ScoreUndefined);
    }
    weights_at(w, m, cloud)
}

fn weights_at(w: &[f64], m: OuMoments, cloud: &TrainingCloud) -> Result<Vec<f64>> {
    if w.len() != cloud.dim() {
        return Err(Error::LengthMismatch {
            expected: cloud.dim(),
            actual: w.len(),
        });
    }
    let mut logits: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            let d2: f64 = w.iter().zip(p).map(|(a, b)| (a - m.mu * b).powi(2)).sum();
            -d2 / (2.0 * m.sigma)
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    logits.iter_mut().for_each(|l| *l /= total);
    Ok(logits)
}

/// ∇_w log p_t(w) for the empirical mixture Σ_i N(μ w_i, σ I) / N.
pub fn mixture_score(w: &[f64], t: f64, schedule: &NoiseSchedule, cloud: &TrainingCloud) -> Result<Vec<f64>> {
    let m = ou_moments(schedule, t)?;
    if m.sigma <= 0.0 {
        return Err(Error::ScoreUndefined);
    }
    let gamma = weights_at(w, m, cloud)?;
    let mut score = vec![0.0; w.len()];
    for (g, p) in gamma.iter().zip(&cloud.points) {
        for ((s, wi), pi) in score.iter_mut().zip(w).zip(p) {
            *s += g * (m.mu * pi - wi);
        }
    }
    score.iter_mut().for_each(|s| *s /= m.sigma);
    Ok(score)
}

/// One explicit Euler–Maruyama step of the reverse SDE from time `t` to `t − dt`:
/// w′ = w + [½β(t)w + β(t)·score]dt + √(β(t)dt)·noise.
pub fn reverse_step(
    w: &[f64],
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
    score: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if t - dt < -1e-12 * schedule.total_time {
        return Err(Error::TimeOutOfRange {
            t: t - dt,
            total: schedule.total_time,
        });
    }
    for len in [score.len(), noise.len()] {
        if len != w.len() {
            return Err(Error::LengthMismatch {
                expected: w.len(),
                actual: len,
            });
        }
    }
    let b = schedule.beta(t);
    let sd = (b * dt).sqrt();
    Ok(w.iter()
        .zip(score)
        .zip(noise)
        .map(|((wi, si), ni)| wi + (0.5 * b * wi + b * si) * dt + sd * ni)
        .collect())
}

/// Starting point of a reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ReverseInit {
    /// Draw from the exact terminal marginal p_T of the cloud.
    FromPt,
    Explicit(Vec<f64>),
}

/// Reverse pass driven by an arbitrary score function. Evaluates the score at
/// t_k = T − k·dt for k = 0..steps and returns steps+1 states ending at t = 0;
/// the score is never queried at t = 0.
pub fn reverse_trajectory_with<R, F>(
    schedule: &NoiseSchedule,
    init: Vec<f64>,
    rng: &mut R,
    mut score: F,
) -> Result<Vec<Vec<f64>>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    let dt = schedule.dt();
    let mut out = Vec::with_capacity(schedule.steps + 1);
    let mut w = init;
    out.push(w.clone());
    for k in 0..schedule.steps {
        let t = schedule.time(schedule.steps - k);
        let s = score(&w, t)?;
        let noise = standard_normal(rng, w.len());
        w = reverse_step(&w, t, dt.min(t), schedule, &s, &noise)?;
        out.push(w.clone());
    }
    Ok(out)
}

/// Draw from p_T: a uniformly chosen cloud point pushed through the closed-form forward map.
pub fn sample_terminal<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    cloud: &TrainingCloud,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let i = rng.gen_range(0..cloud.len());
    forward_sample_with(&cloud.points[i], schedule, schedule.total_time, rng)
}

/// Reverse pass with the exact mixture score.
pub fn reverse_trajectory(
    schedule: &NoiseSchedule,
    cloud: &TrainingCloud,
    seed: u64,
    init: ReverseInit,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(seed, 0);
    reverse_trajectory_rng(schedule, cloud, &mut rng, init)
}

pub fn reverse_trajectory_rng<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    cloud: &TrainingCloud,
    rng: &mut R,
    init: ReverseInit,
) -> Result<Vec<Vec<f64>>> {
    let start = match init {
        ReverseInit::FromPt => sample_terminal(schedule, cloud, rng)?,
        ReverseInit::Explicit(w) => {
            if w.len() != cloud.dim() {
                return Err(Error::LengthMismatch {
                    expected: cloud.dim(),
                    actual: w.len(),
                });
            }
            w
        }
    };
    reverse_trajectory_with(schedule, start, rng, |w, t| mixture_score(w, t, schedule, cloud))
}

/// Entropy (nats) of the normalized histogram of `samples` over `range` with `bins`
/// equal-width bins. Samples outside the range are counted in the edge bins.
pub fn histogram_entropy(samples: &[f64], bins: usize, range: (f64, f64)) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    let (lo, hi) = range;
    if bins < 2 || !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "need bins >= 2 and a finite range, got {bins} bins over [{lo}, {hi}]"
        )));
    }
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &s in samples {
        let b = ((s - lo) / width).floor();
        let b = if b.is_nan() {
            0
        } else {
            b.clamp(0.0, (bins - 1) as f64) as usize
        };
        counts[b] += 1;
    }
    let total = samples.len() as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(crate::discrete::entropy_of(&probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn log_density(w: &[f64], t: f64, s: &NoiseSchedule, cloud: &TrainingCloud) -> f64 {
        // Direct (non-log-sum-exp) evaluation of the mixture density as an independent oracle.
        let m = ou_moments(s, t).unwrap();
        let d = w.len() as f64;
        let dens: f64 = cloud
            .points()
            .iter()
            .map(|p| {
                let d2: f64 = w.iter().zip(p).map(|(a, b)| (a - m.mu * b).powi(2)).sum();
                (-d2 / (2.0 * m.sigma)).exp() / (2.0 * std::f64::consts::PI * m.sigma).powf(d / 2.0)
            })
            .sum::<f64>()
            / cloud.len() as f64;
        dens.ln()
    }

    #[test]
    fn moments_examples() {
        let s = NoiseSchedule::constant(1.0, 1.0, 100).unwrap();
        let m = ou_moments(&s, 2f64.ln()).unwrap();
        assert_abs_diff_eq!(m.mu, 0.707, epsilon = 1e-3);
        assert_abs_diff_eq!(m.sigma, 0.5, epsilon = 1e-3);
        let m0 = ou_moments(&s, 0.0).unwrap();
        assert_eq!((m0.mu, m0.sigma), (1.0, 0.0));
        assert!(matches!(ou_moments(&s, 1.5), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn alpha_matches_trapezoid() {
        for s in [
            NoiseSchedule::constant(2.5, 1.0, 10).unwrap(),
            NoiseSchedule::new(0.1, 20.0, 2.0, 10).unwrap(),
        ] {
            let t = 0.77 * s.total_time;
            let n = 10_000;
            let h = t / n as f64;
            let trap: f64 = (0..n)
                .map(|k| 0.5 * h * (s.beta(k as f64 * h) + s.beta((k + 1) as f64 * h)))
                .sum();
            assert_abs_diff_eq!(s.alpha(t), trap, epsilon = 1e-10);
        }
    }

    #[test]
    fn forward_sample_examples() {
        let s = NoiseSchedule::constant(1.0, 1.0, 100).unwrap();
        let w = forward_sample_with_noise(&[0.0, 0.0, -1.0], &s, 2f64.ln(), &[0.0, 2f64.sqrt(), 1.0]).unwrap();
        for (a, b) in w.iter().zip([0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let w0 = [0.3, -0.2];
        assert_eq!(forward_sample(&w0, &s, 0.0, 9).unwrap(), w0.to_vec());
    }

    #[test]
    fn single_point_score_is_gaussian() {
        let s = NoiseSchedule::constant(3.0, 1.0, 100).unwrap();
        let cloud = TrainingCloud::new(vec![vec![0.4, -1.2]]).unwrap();
        let w = [0.1, 0.9];
        let t = 0.3;
        let m = ou_moments(&s, t).unwrap();
        let sc = mixture_score(&w, t, &s, &cloud).unwrap();
        for ((si, wi), pi) in sc.iter().zip(w).zip([0.4, -1.2]) {
            assert_abs_diff_eq!(*si, (m.mu * pi - wi) / m.sigma, epsilon = 1e-14);
        }
    }

    #[test]
    fn equidistant_point_points_to_midpoint() {
        let s = NoiseSchedule::constant(5.0, 1.0, 100).unwrap();
        let cloud = fixture_cloud();
        let t = 0.4;
        let m = ou_moments(&s, t).unwrap();
        let w = [0.3, -0.6, -0.5 * m.mu];
        let g = mixture_weights(&w, t, &s, &cloud).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-12);
        let sc = mixture_score(&w, t, &s, &cloud).unwrap();
        assert_abs_diff_eq!(sc[0], -w[0] / m.sigma, epsilon = 1e-12);
        assert_abs_diff_eq!(sc[1], -w[1] / m.sigma, epsilon = 1e-12);
        assert_abs_diff_eq!(sc[2], (-0.5 * m.mu - w[2]) / m.sigma, epsilon = 1e-12);
    }

    #[test]
    fn score_undefined_at_zero() {
        let s = NoiseSchedule::constant(5.0, 1.0, 100).unwrap();
        assert!(matches!(
            mixture_score(&[0.0, 0.0, 0.0], 0.0, &s, &fixture_cloud()),
            Err(Error::ScoreUndefined)
        ));
    }

    #[test]
    fn score_matches_finite_differences() {
        let s = NoiseSchedule::new(0.5, 8.0, 1.0, 100).unwrap();
        let mut rng = stream(42, 0);
        for n in [1usize, 3, 5] {
            let pts: Vec<Vec<f64>> = (0..4).map(|_| standard_normal(&mut rng, n)).collect();
            let cloud = TrainingCloud::new(pts).unwrap();
            for _ in 0..30 {
                let t = rng.gen_range(0.05..1.0);
                let w = standard_normal(&mut rng, n);
                let sc = mixture_score(&w, t, &s, &cloud).unwrap();
                let h = 1e-5;
                for i in 0..n {
                    let (mut wp, mut wm) = (w.clone(), w.clone());
                    wp[i] += h;
                    wm[i] -= h;
                    let fd = (log_density(&wp, t, &s, &cloud) - log_density(&wm, t, &s, &cloud)) / (2.0 * h);
                    assert!(
                        (fd - sc[i]).abs() <= 1e-4 * sc[i].abs().max(1.0),
                        "fd {fd} vs {}",
                        sc[i]
                    );
                }
            }
        }
    }

    #[test]
    fn drift_only_step() {
        let s = NoiseSchedule::constant(2.0, 1.0, 10).unwrap();
        let w = reverse_step(&[1.0, -2.0], 0.5, 0.1, &s, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 * (1.0 + 0.5 * 2.0 * 0.1), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], -2.0 * (1.0 + 0.5 * 2.0 * 0.1), epsilon = 1e-15);
        assert!(reverse_step(&[1.0], 0.05, 0.1, &s, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn reverse_pass_is_deterministic_and_ends_at_zero() {
        let s = NoiseSchedule::constant(5.0, 1.0, 100).unwrap();
        let a = reverse_trajectory(&s, &fixture_cloud(), 7, ReverseInit::FromPt).unwrap();
        assert_eq!(a.len(), 101);
        assert_eq!(
            a,
            reverse_trajectory(&s, &fixture_cloud(), 7, ReverseInit::FromPt).unwrap()
        );
    }

    #[test]
    fn weak_noise_stays_at_mode() {
        let s = NoiseSchedule::constant(1e-3, 1.0, 100).unwrap();
        for seed in 0..10 {
            let traj =
                reverse_trajectory(&s, &fixture_cloud(), seed, ReverseInit::Explicit(vec![0.0, 0.0, -1.0])).unwrap();
            let end = traj.last().unwrap();
            let d: f64 = end
                .iter()
                .zip([0.0, 0.0, -1.0])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d < 0.1, "endpoint drifted {d}");
        }
    }

    #[test]
    fn histogram_entropy_examples() {
        assert_eq!(histogram_entropy(&[0.3; 50], 10, (-1.0, 1.0)).unwrap(), 0.0);
        let mut rng = stream(1, 0);
        let u: Vec<f64> = (0..200_000).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let h = histogram_entropy(&u, 60, (-3.0, 3.0)).unwrap();
        assert!((h - 60f64.ln()).abs() < 0.05 * 60f64.ln());
        assert!(histogram_entropy(&[], 10, (0.0, 1.0)).is_err());
        assert!(histogram_entropy(&[1.0], 1, (0.0, 1.0)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn variance_preserving(bmin in 0.0f64..5.0, extra in 0.0f64..20.0, frac in 0.0f64..=1.0) {
                let s = NoiseSchedule::new(bmin, bmin + extra + 1e-3, 1.0, 10).unwrap();
                let m = ou_moments(&s, frac).unwrap();
                prop_assert!((m.sigma - (1.0 - m.mu * m.mu)).abs() < 1e-12);
            }

            #[test]
            fn gamma_is_softmax(seed in any::<u64>(), t in 0.01f64..1.0, shift in -50.0f64..50.0) {
                let s = NoiseSchedule::constant(4.0, 1.0, 10).unwrap();
                let mut rng = stream(seed, 0);
                let pts: Vec<Vec<f64>> = (0..6).map(|_| standard_normal(&mut rng, 3)).collect();
                let cloud = TrainingCloud::new(pts).unwrap();
                let w: Vec<f64> = standard_normal(&mut rng, 3).iter().map(|v| v * 4.0 + shift).collect();
                let g = mixture_weights(&w, t, &s, &cloud).unwrap();
                prop_assert!(g.iter().all(|&v| v >= 0.0));
                prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
