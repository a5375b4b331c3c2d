//! Conditional score model for ingredient weights given a mask.
//!
//! The network reads the ±1-coded mask, the noisy weights w_t and time features, and
//! outputs a denoised estimate D ≈ E[w_0 | w_t, x]. The score follows from the Gaussian
//! forward kernel, s = (μ(t)·D − w_t)/σ(t).
//!
//! Training minimizes ‖D − w_0‖² over present coordinates. Since
//! s − ∇log p(w_t|w_0) = μ(D − w_0)/σ, this is denoising score matching weighted by
//! σ²/μ²: same minimizer, but its target variance stays bounded as t → 0.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitmask::BitMask;
use crate::continuous::{ou_moments, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::{real, Activation, Adam, AdamConfig, Mlp, MlpSpec, Parameters, Real};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::training::{check_loss, split_indices, BatchStream, Ema, LossRecord, TrainConfig, TrainingLog};
use crate::vocab::{Dataset, IngredientVocabulary, Normalization};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueArchitecture {
    pub n: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Number of sin/cos frequency pairs in the time features.
    pub time_frequencies: usize,
}

impl ValueArchitecture {
    /// Four hidden layers of 256 SiLU units, eight time frequencies.
    pub fn standard(n: usize) -> Self {
        Self {
            n,
            hidden: vec![256; 4],
            activation: Activation::Silu,
            time_frequencies: 8,
        }
    }

    fn time_features(&self) -> usize {
        1 + 2 * self.time_frequencies
    }

    fn trunk_spec(&self) -> MlpSpec {
        MlpSpec {
            input: 2 * self.n + self.time_features(),
            hidden: self.hidden.clone(),
            output: self.n,
            activation: self.activation,
        }
    }
}

/// The noise schedule used for weights: β from 0.001 to 3 over unit time, 1,000 steps.
pub fn default_value_schedule() -> NoiseSchedule {
    NoiseSchedule::new(0.001, 3.0, 1.0, 1000).expect("valid default schedule")
}

/// ∇ log p(w_t | w_0) = (μ(t)·w_0 − w_t)/σ(t).
pub fn score_target(w_t: &[f64], w0: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let m = ou_moments(schedule, t)?;
    if m.sigma <= 0.0 {
        return Err(Error::ScoreUndefined);
    }
    if w_t.len() != w0.len() {
        return Err(Error::LengthMismatch {
            expected: w0.len(),
            actual: w_t.len(),
        });
    }
    Ok(w_t.iter().zip(w0).map(|(w, x)| (m.mu * x - w) / m.sigma).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel<F = f32> {
    arch: ValueArchitecture,
    trunk: Mlp<F>,
}

pub const VALUE_CHECKPOINT_KIND: &str = "value-model";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueCheckpointMeta {
    pub schedule: NoiseSchedule,
    pub vocabulary: IngredientVocabulary,
    pub normalization: Normalization,
    pub config: Option<TrainConfig>,
}

/// One training or query batch: ±1 mask, noisy weights, times.
pub struct ValueBatch<F> {
    pub mask: Array2<F>,
    pub w_t: Array2<F>,
    pub t: Vec<f64>,
}

impl<F: Real> ValueModel<F> {
    /// Fan-in uniform trunk with a zero output layer.
    pub fn new<R: Rng + ?Sized>(arch: ValueArchitecture, rng: &mut R) -> Result<Self> {
        if arch.n == 0 {
            return Err(Error::InvalidParameter("value architecture needs n > 0".into()));
        }
        let mut trunk = Mlp::he_uniform(arch.trunk_spec(), rng)?;
        trunk.zero_output_layer();
        Ok(Self { arch, trunk })
    }

    pub fn architecture(&self) -> &ValueArchitecture {
        &self.arch
    }

    pub fn trunk(&self) -> &Mlp<F> {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp<F> {
        &mut self.trunk
    }

    fn inputs(&self, batch: &ValueBatch<F>, total_time: f64) -> Result<Array2<F>> {
        let n = self.arch.n;
        let b = batch.t.len();
        if batch.mask.dim() != (b, n) || batch.w_t.dim() != (b, n) {
            return Err(Error::LengthMismatch {
                expected: b * n,
                actual: batch.mask.len().min(batch.w_t.len()),
            });
        }
        let mut x = Array2::zeros((b, self.trunk.spec().input));
        x.slice_mut(s![.., ..n]).assign(&batch.mask);
        x.slice_mut(s![.., n..2 * n]).assign(&batch.w_t);
        for (r, &t) in batch.t.iter().enumerate() {
            let tau = t / total_time;
            x[[r, 2 * n]] = real(tau);
            for k in 1..=self.arch.time_frequencies {
                let phase = 2.0 * std::f64::consts::PI * k as f64 * tau;
                x[[r, 2 * n + 2 * k - 1]] = real(phase.sin());
                x[[r, 2 * n + 2 * k]] = real(phase.cos());
            }
        }
        Ok(x)
    }

    /// Denoised estimate D of w_0 for each row.
    pub fn denoise(&self, batch: &ValueBatch<F>, total_time: f64) -> Result<Array2<F>> {
        let x = self.inputs(batch, total_time)?;
        self.trunk.forward(x.view())
    }

    /// Mean over the batch of Σ_present (D − w_0)², with its gradient.
    pub fn loss_and_grad(
        &self,
        batch: &ValueBatch<F>,
        w0: ArrayView2<F>,
        presence: ArrayView2<F>,
        total_time: f64,
    ) -> Result<(f64, Self)> {
        let x = self.inputs(batch, total_time)?;
        let (d, tape) = self.trunk.forward_recorded(x.view())?;
        let b = batch.t.len() as f64;
        let mut resid = &d - &w0;
        resid.zip_mut_with(&presence, |r, &p| *r *= p);
        let loss = resid.iter().map(|v| v.to_f64().expect("finite").powi(2)).sum::<f64>() / b;
        let scale: F = real(2.0 / b);
        resid.mapv_inplace(|v| v * scale);
        let (trunk, _) = self.trunk.backward(&tape, resid.view())?;
        Ok((
            loss,
            Self {
                arch: self.arch.clone(),
                trunk,
            },
        ))
    }

    pub fn loss(
        &self,
        batch: &ValueBatch<F>,
        w0: ArrayView2<F>,
        presence: ArrayView2<F>,
        total_time: f64,
    ) -> Result<f64> {
        let d = self.denoise(batch, total_time)?;
        let mut resid = &d - &w0;
        resid.zip_mut_with(&presence, |r, &p| *r *= p);
        Ok(resid.iter().map(|v| v.to_f64().expect("finite").powi(2)).sum::<f64>() / batch.t.len() as f64)
    }

    pub fn cast<G: Real>(&self) -> ValueModel<G> {
        ValueModel {
            arch: self.arch.clone(),
            trunk: self.trunk.cast(),
        }
    }
}

impl<F: Real> Parameters<F> for ValueModel<F> {
    fn tensors(&self) -> Vec<&[F]> {
        self.trunk.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.trunk.tensors_mut()
    }
}

impl ValueModel<f32> {
    /// Learned score s_θ(x, w, t); absent coordinates get the exact score of the zero
    /// sentinel, −w/σ.
    pub fn score(&self, mask: &BitMask, w: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let n = self.arch.n;
        if mask.len() != n || w.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: if mask.len() != n { mask.len() } else { w.len() },
            });
        }
        let batch = ValueBatch {
            mask: Array2::from_shape_fn((1, n), |(_, c)| if mask.get(c) { 1.0 } else { -1.0 }),
            w_t: Array2::from_shape_fn((1, n), |(_, c)| w[c] as f32),
            t: vec![t],
        };
        let d = self.denoise(&batch, schedule.total_time)?;
        let m = ou_moments(schedule, t)?;
        if m.sigma <= 0.0 {
            return Err(Error::ScoreUndefined);
        }
        Ok((0..n)
            .map(|c| {
                let target = if mask.get(c) { m.mu * d[[0, c]] as f64 } else { 0.0 };
                (target - w[c]) / m.sigma
            })
            .collect())
    }

    pub fn save(&self, path: &Path, seed: u64, meta: &ValueCheckpointMeta) -> Result<()> {
        checkpoint::save(path, VALUE_CHECKPOINT_KIND, &self.arch, seed, meta, &self.to_flat())
    }

    pub fn load(path: &Path) -> Result<(Self, ValueCheckpointMeta)> {
        let (header, params) = checkpoint::load(path, VALUE_CHECKPOINT_KIND)?;
        let arch: ValueArchitecture = serde_json::from_value(header.architecture.clone())?;
        checkpoint::require_architecture(&header, &arch)?;
        let meta: ValueCheckpointMeta = serde_json::from_value(header.metadata)?;
        let mut model = Self::new(arch, &mut stream(0, 0))?;
        model.load_flat(&params)?;
        Ok((model, meta))
    }
}

struct Example<'a> {
    mask: &'a BitMask,
    w0: &'a [f64],
}

fn noisy_batch<F: Real, R: Rng + ?Sized>(
    examples: &[Example<'_>],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(ValueBatch<F>, Array2<F>, Array2<F>)> {
    let b = examples.len();
    let n = examples[0].w0.len();
    let mut mask = Array2::zeros((b, n));
    let mut w_t = Array2::zeros((b, n));
    let mut w0 = Array2::zeros((b, n));
    let mut presence = Array2::zeros((b, n));
    let mut ts = Vec::with_capacity(b);
    for (r, ex) in examples.iter().enumerate() {
        // t uniform on (0, T]
        let t = schedule.total_time * (1.0 - rng.gen::<f64>());
        let m = ou_moments(schedule, t)?;
        let sd = m.sigma.sqrt();
        for c in 0..n {
            let present = ex.mask.get(c);
            let e: f64 = rng.sample(StandardNormal);
            mask[[r, c]] = if present { F::one() } else { -F::one() };
            presence[[r, c]] = if present { F::one() } else { F::zero() };
            w0[[r, c]] = real(ex.w0[c]);
            w_t[[r, c]] = real(m.mu * ex.w0[c] + sd * e);
        }
        ts.push(t);
    }
    Ok((ValueBatch { mask, w_t, t: ts }, w0, presence))
}

/// Trains the conditional denoiser on the dataset's normalized weights.
pub fn train_value_model(
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    arch: ValueArchitecture,
    config: &TrainConfig,
) -> Result<(ValueModel<f32>, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoRecipes);
    }
    if arch.n != dataset.n() {
        return Err(Error::VocabularyMismatch(format!(
            "architecture expects n={}, data has n={}",
            arch.n,
            dataset.n()
        )));
    }
    let weights = dataset.normalized_weights()?;
    let masks = dataset.masks();
    let (train_idx, val_idx) = split_indices(
        masks.len(),
        config.validation_fraction,
        derive_seed(config.seed, "value-split"),
    );
    let mut model = ValueModel::<f32>::new(arch, &mut stream(derive_seed(config.seed, "value-init"), 0))?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &model);
    let mut ema = config.ema_decay.map(|d| Ema::new(d, &model));
    let mut batches = BatchStream::new(train_idx.clone(), derive_seed(config.seed, "value-batches"));
    let mut noise = stream(derive_seed(config.seed, "value-noise"), 0);
    let steps = config.total_steps(train_idx.len());
    let per_epoch = train_idx.len() as f64 / config.batch as f64;
    let mut log = TrainingLog {
        steps,
        train_indices: train_idx.clone(),
        validation_indices: val_idx.clone(),
        records: Vec::new(),
    };
    let example = |i: usize| Example {
        mask: &masks[i],
        w0: &weights[i],
    };
    let (mut running, mut count) = (0.0, 0usize);
    for step in 1..=steps {
        let picked: Vec<Example> = batches.next_batch(config.batch).into_iter().map(example).collect();
        let (batch, w0, presence) = noisy_batch::<f32, _>(&picked, schedule, &mut noise)?;
        let (loss, grads) = model.loss_and_grad(&batch, w0.view(), presence.view(), schedule.total_time)?;
        let epoch = step as f64 / per_epoch;
        check_loss(loss, step, epoch)?;
        adam.step(&mut model, &grads)?;
        if let Some(ema) = ema.as_mut() {
            ema.update(&model);
        }
        running += loss;
        count += 1;
        if step % config.log_every == 0 || step == steps {
            let validation_loss = if val_idx.is_empty() {
                None
            } else {
                let mut rng = stream(derive_seed(config.seed, "value-validation"), 0);
                let reps = 1024usize.div_ceil(val_idx.len());
                let picked: Vec<Example> = (0..reps).flat_map(|_| val_idx.iter().map(|&i| example(i))).collect();
                let (vb, vw0, vp) = noisy_batch::<f32, _>(&picked, schedule, &mut rng)?;
                Some(model.loss(&vb, vw0.view(), vp.view(), schedule.total_time)?)
            };
            let rec = LossRecord {
                step,
                epoch,
                train_loss: running / count as f64,
                validation_loss,
            };
            log::info!(
                "value step {step}/{steps} epoch {epoch:.1}: train {:.5} val {}",
                rec.train_loss,
                validation_loss.map_or("-".into(), |v| format!("{v:.5}"))
            );
            log.records.push(rec);
            running = 0.0;
            count = 0;
        }
    }
    if let Some(ema) = ema {
        ema.apply(&mut model)?;
    }
    Ok((model, log))
}

/// Generated weights in grams, plus how many negative coordinates were clamped to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSamples {
    pub grams: Vec<Vec<f64>>,
    pub clamped: usize,
}

const CHAINS_PER_CHUNK: usize = 256;

/// Reverse-SDE sampling for each mask, started from N(0, σ(T)·I). Absent coordinates are
/// zeroed, the rest denormalized to grams and clamped at zero.
pub fn sample_weights_batch(
    model: &ValueModel<f32>,
    masks: &[BitMask],
    schedule: &NoiseSchedule,
    normalization: &Normalization,
    seed: u64,
) -> Result<WeightSamples> {
    let n = model.arch.n;
    if normalization.n() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: normalization.n(),
        });
    }
    if let Some(m) = masks.iter().find(|m| m.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: m.len(),
        });
    }
    let chunks: Vec<Result<Vec<Vec<f64>>>> = masks
        .par_chunks(CHAINS_PER_CHUNK)
        .enumerate()
        .map(|(c, chunk)| reverse_chunk(model, chunk, c * CHAINS_PER_CHUNK, schedule, seed))
        .collect();
    let mut grams = Vec::with_capacity(masks.len());
    let mut clamped = 0;
    for (w, m) in chunks
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .zip(masks)
    {
        let mut g = normalization.denormalize(&w, m);
        for v in g.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        grams.push(g);
    }
    if clamped > 0 {
        log::info!("clamped {clamped} negative generated weights to zero");
    }
    Ok(WeightSamples { grams, clamped })
}

pub fn sample_weights(
    model: &ValueModel<f32>,
    mask: &BitMask,
    schedule: &NoiseSchedule,
    normalization: &Normalization,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(
        sample_weights_batch(model, std::slice::from_ref(mask), schedule, normalization, seed)?
            .grams
            .remove(0),
    )
}

fn reverse_chunk(
    model: &ValueModel<f32>,
    masks: &[BitMask],
    first_chain: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = model.arch.n;
    let b = masks.len();
    let mut rngs: Vec<StreamRng> = (0..b).map(|i| stream(seed, (first_chain + i) as u64)).collect();
    let sd_t = ou_moments(schedule, schedule.total_time)?.sigma.sqrt();
    let mut w: Array2<f64> = Array2::zeros((b, n));
    for (r, rng) in rngs.iter_mut().enumerate() {
        for c in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            w[[r, c]] = sd_t * e;
        }
    }
    let signed: Array2<f32> = Array2::from_shape_fn((b, n), |(r, c)| if masks[r].get(c) { 1.0 } else { -1.0 });
    let dt = schedule.dt();
    for k in 0..schedule.steps {
        let t = schedule.time(schedule.steps - k);
        let m = ou_moments(schedule, t)?;
        let batch = ValueBatch {
            mask: signed.clone(),
            w_t: w.mapv(|v| v as f32),
            t: vec![t; b],
        };
        let d = model.denoise(&batch, schedule.total_time)?;
        let beta = schedule.beta(t);
        let h = dt.min(t);
        let sd = (beta * h).sqrt();
        for (r, rng) in rngs.iter_mut().enumerate() {
            for c in 0..n {
                let wc = w[[r, c]];
                let target = if masks[r].get(c) { m.mu * d[[r, c]] as f64 } else { 0.0 };
                let score = (target - wc) / m.sigma;
                let e: f64 = rng.sample(StandardNormal);
                w[[r, c]] = wc + (0.5 * beta * wc + beta * score) * h + sd * e;
            }
        }
    }
    Ok((0..b)
        .map(|r| (0..n).map(|c| if masks[r].get(c) { w[[r, c]] } else { 0.0 }).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuous::{mixture_score, TrainingCloud};
    use approx::assert_abs_diff_eq;

    #[test]
    fn score_target_is_single_gaussian_score() {
        let s = default_value_schedule();
        let cloud = TrainingCloud::new(vec![vec![0.3, -0.7, 1.1]]).unwrap();
        let w = [0.5, 0.1, -0.4];
        for t in [0.05, 0.4, 1.0] {
            let a = score_target(&w, &[0.3, -0.7, 1.1], t, &s).unwrap();
            let b = mixture_score(&w, t, &s, &cloud).unwrap();
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(*x, y, epsilon = 1e-10);
            }
        }
        assert!(score_target(&w, &w, 0.0, &s).is_err());
    }

    #[test]
    fn all_zero_mask_gives_zero_vector() {
        let arch = ValueArchitecture {
            n: 3,
            hidden: vec![8],
            activation: Activation::Silu,
            time_frequencies: 2,
        };
        let model = ValueModel::<f32>::new(arch, &mut stream(0, 0)).unwrap();
        let norm = crate::vocab::three_ingredient_fixture().normalization.unwrap();
        let s = NoiseSchedule::new(0.001, 3.0, 1.0, 50).unwrap();
        let g = sample_weights(&model, &BitMask::zeros(3), &s, &norm, 1).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn untrained_score_uses_zero_denoiser() {
        let arch = ValueArchitecture {
            n: 2,
            hidden: vec![8, 8],
            activation: Activation::Silu,
            time_frequencies: 3,
        };
        let model = ValueModel::<f32>::new(arch, &mut stream(0, 0)).unwrap();
        let s = default_value_schedule();
        let m = ou_moments(&s, 0.5).unwrap();
        let sc = model
            .score(&BitMask::new(vec![1, 0]).unwrap(), &[0.4, -0.2], 0.5, &s)
            .unwrap();
        assert_abs_diff_eq!(sc[0], -0.4 / m.sigma, epsilon = 1e-12);
        assert_abs_diff_eq!(sc[1], 0.2 / m.sigma, epsilon = 1e-12);
    }
}
