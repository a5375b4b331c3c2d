//! Learned discrete diffusion over ingredient masks.
//!
//! Forward corruption keeps each bit with probability 1−β_t and otherwise resamples it
//! uniformly, so p(x_t = 1 | x_0) = ᾱ_t·x_0 + ½(1−ᾱ_t). A network predicts x̂₀ from
//! (x_t, t); reverse steps use the exact per-bit Bayes posterior averaged over x̂₀.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitmask::BitMask;
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::{real, sigmoid, Activation, Adam, AdamConfig, Mlp, MlpSpec, Parameters, Real, TimeEmbedding};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::training::{check_loss, split_indices, BatchStream, Ema, LossRecord, TrainConfig, TrainingLog};
use crate::vocab::{Dataset, IngredientVocabulary};

/// Per-step resampling probabilities β_1..β_T and their cumulative retention ᾱ_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RetentionSchedule {
    betas: Vec<f64>,
    alphabar: Vec<f64>,
}

impl RetentionSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter(
                "retention schedule needs at least one step".into(),
            ));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidParameter(format!("β_t must lie in (0,1), got {b}")));
        }
        let mut alphabar = Vec::with_capacity(betas.len() + 1);
        alphabar.push(1.0);
        for b in &betas {
            let prev = *alphabar.last().expect("non-empty");
            alphabar.push(prev * (1.0 - b));
        }
        Ok(Self { betas, alphabar })
    }

    /// β_t rising linearly from `start` to `end` over `steps` steps.
    pub fn linear(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        let betas = (0..steps)
            .map(|k| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::new(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for t in 0..=T.
    pub fn alphabar(&self, t: usize) -> f64 {
        self.alphabar[t]
    }

    /// p(x_t = 1 | x_0).
    pub fn on_prob(&self, t: usize, x0: bool) -> f64 {
        let a = self.alphabar[t];
        a * (x0 as u8 as f64) + 0.5 * (1.0 - a)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::InvalidParameter(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }
}

impl Default for RetentionSchedule {
    /// 1,000 steps with β_t from 1e-4 to 0.02; ᾱ_T ≈ 4e-5, so x_T is close to Bernoulli(½).
    fn default() -> Self {
        Self::linear(1e-4, 0.02, 1000).expect("valid default schedule")
    }
}

impl TryFrom<Vec<f64>> for RetentionSchedule {
    type Error = Error;

    fn try_from(betas: Vec<f64>) -> Result<Self> {
        Self::new(betas)
    }
}

impl From<RetentionSchedule> for Vec<f64> {
    fn from(s: RetentionSchedule) -> Self {
        s.betas
    }
}

pub fn corrupt_mask(x0: &BitMask, t: usize, schedule: &RetentionSchedule, seed: u64) -> Result<BitMask> {
    let mut rng = stream(seed, 0);
    corrupt_mask_with(x0, t, schedule, &mut rng)
}

pub fn corrupt_mask_with<R: Rng + ?Sized>(
    x0: &BitMask,
    t: usize,
    schedule: &RetentionSchedule,
    rng: &mut R,
) -> Result<BitMask> {
    schedule.check_t(t)?;
    let (p1, p0) = (schedule.on_prob(t, true), schedule.on_prob(t, false));
    Ok(BitMask::from_bools((0..x0.len()).map(|i| {
        let p = if x0.get(i) { p1 } else { p0 };
        rng.gen::<f64>() < p
    })))
}

/// p(x_{t−1,i} = 1 | x_{t,i}, x_{0,i}).
pub fn posterior_bit(xt: bool, x0: bool, t: usize, schedule: &RetentionSchedule) -> Result<f64> {
    schedule.check_t(t)?;
    Ok(posterior_unchecked(xt, x0, t, schedule))
}

fn posterior_unchecked(xt: bool, x0: bool, t: usize, schedule: &RetentionSchedule) -> f64 {
    let prior1 = schedule.on_prob(t - 1, x0);
    let b = schedule.beta(t);
    let like = |v: bool| if v == xt { 1.0 - b + 0.5 * b } else { 0.5 * b };
    let on = like(true) * prior1;
    let off = like(false) * (1.0 - prior1);
    on / (on + off)
}

/// Posterior with x̂₀ as a soft label: the expectation of [`posterior_bit`] over x_0 ~ Bernoulli(p_x0).
pub fn posterior_soft(xt: bool, p_x0: f64, t: usize, schedule: &RetentionSchedule) -> Result<f64> {
    schedule.check_t(t)?;
    Ok(p_x0 * posterior_unchecked(xt, true, t, schedule) + (1.0 - p_x0) * posterior_unchecked(xt, false, t, schedule))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskArchitecture {
    pub n: usize,
    pub timesteps: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MaskArchitecture {
    /// Three hidden layers of 512 ReLU units and a 32-wide time embedding.
    pub fn standard(n: usize, timesteps: usize) -> Self {
        Self {
            n,
            timesteps,
            embed_dim: 32,
            hidden: vec![512; 3],
            activation: Activation::Relu,
        }
    }

    fn trunk_spec(&self) -> MlpSpec {
        MlpSpec {
            input: self.embed_dim + self.n,
            hidden: self.hidden.clone(),
            output: self.n,
            activation: self.activation,
        }
    }
}

/// x̂₀ predictor: time embedding and ±1-coded noisy mask in, one logit per ingredient out.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskModel<F = f32> {
    arch: MaskArchitecture,
    embedding: TimeEmbedding<F>,
    trunk: Mlp<F>,
}

pub const MASK_CHECKPOINT_KIND: &str = "mask-model";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskCheckpointMeta {
    pub schedule: RetentionSchedule,
    pub vocabulary: IngredientVocabulary,
    pub config: Option<TrainConfig>,
}

impl<F: Real> MaskModel<F> {
    /// Fresh model: sinusoidal embedding rows, fan-in uniform trunk, zero output layer (so
    /// every initial prediction is ½).
    pub fn new<R: Rng + ?Sized>(arch: MaskArchitecture, rng: &mut R) -> Result<Self> {
        if arch.n == 0 || arch.timesteps == 0 || arch.embed_dim == 0 {
            return Err(Error::InvalidParameter(
                "mask architecture sizes must be positive".into(),
            ));
        }
        let mut trunk = Mlp::he_uniform(arch.trunk_spec(), rng)?;
        trunk.zero_output_layer();
        Ok(Self {
            embedding: TimeEmbedding::sinusoidal(arch.timesteps, arch.embed_dim),
            trunk,
            arch,
        })
    }

    fn zeros_like(&self) -> Result<Self> {
        Ok(Self {
            arch: self.arch.clone(),
            embedding: TimeEmbedding::zeros(self.arch.timesteps, self.arch.embed_dim),
            trunk: Mlp::zeros(self.arch.trunk_spec())?,
        })
    }

    pub fn architecture(&self) -> &MaskArchitecture {
        &self.arch
    }

    pub fn trunk(&self) -> &Mlp<F> {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp<F> {
        &mut self.trunk
    }

    fn inputs(&self, xt_signed: ArrayView2<F>, t: &[usize]) -> Result<(Array2<F>, Vec<usize>)> {
        if xt_signed.ncols() != self.arch.n || xt_signed.nrows() != t.len() {
            return Err(Error::LengthMismatch {
                expected: self.arch.n,
                actual: xt_signed.ncols(),
            });
        }
        let rows: Vec<usize> = t
            .iter()
            .map(|&ti| {
                if ti == 0 || ti > self.arch.timesteps {
                    Err(Error::InvalidParameter(format!(
                        "timestep {ti} outside 1..={}",
                        self.arch.timesteps
                    )))
                } else {
                    Ok(ti - 1)
                }
            })
            .collect::<Result<_>>()?;
        let emb = self.embedding.lookup(&rows)?;
        let d = self.arch.embed_dim;
        let mut x = Array2::zeros((t.len(), d + self.arch.n));
        x.slice_mut(s![.., ..d]).assign(&emb);
        x.slice_mut(s![.., d..]).assign(&xt_signed);
        Ok((x, rows))
    }

    /// Logits of x̂₀ for a batch of ±1-coded noisy masks at timesteps `t` (1-based).
    pub fn logits(&self, xt_signed: ArrayView2<F>, t: &[usize]) -> Result<Array2<F>> {
        let (x, _) = self.inputs(xt_signed, t)?;
        self.trunk.forward(x.view())
    }

    /// Mean over the batch of the summed per-bit cross-entropy, with its gradient.
    pub fn loss_and_grad(&self, xt_signed: ArrayView2<F>, t: &[usize], x0: ArrayView2<F>) -> Result<(f64, Self)> {
        let (x, rows) = self.inputs(xt_signed, t)?;
        let (logits, tape) = self.trunk.forward_recorded(x.view())?;
        let batch = t.len() as f64;
        let loss = bce_sum(&logits, &x0) / batch;
        let inv: F = real(1.0 / batch);
        let mut dl = logits.clone();
        dl.zip_mut_with(&x0, |l, &y| *l = (sigmoid(*l) - y) * inv);
        let (trunk_grad, dx) = self.trunk.backward(&tape, dl.view())?;
        let mut grads = self.zeros_like()?;
        grads.trunk = trunk_grad;
        grads
            .embedding
            .accumulate(&rows, dx.slice(s![.., ..self.arch.embed_dim]));
        Ok((loss, grads))
    }

    pub fn loss(&self, xt_signed: ArrayView2<F>, t: &[usize], x0: ArrayView2<F>) -> Result<f64> {
        let logits = self.logits(xt_signed, t)?;
        Ok(bce_sum(&logits, &x0) / t.len() as f64)
    }

    pub fn cast<G: Real>(&self) -> MaskModel<G> {
        MaskModel {
            arch: self.arch.clone(),
            embedding: self.embedding.cast(),
            trunk: self.trunk.cast(),
        }
    }
}

fn bce_sum<F: Real>(logits: &Array2<F>, y: &ArrayView2<F>) -> f64 {
    logits
        .iter()
        .zip(y.iter())
        .map(|(&l, &y)| {
            let (l, y) = (l.to_f64().expect("finite"), y.to_f64().expect("finite"));
            l.max(0.0) - l * y + (-l.abs()).exp().ln_1p()
        })
        .sum()
}

impl<F: Real> Parameters<F> for MaskModel<F> {
    fn tensors(&self) -> Vec<&[F]> {
        let mut t = self.embedding.tensors();
        t.extend(self.trunk.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut t = self.embedding.tensors_mut();
        t.extend(self.trunk.tensors_mut());
        t
    }
}

impl MaskModel<f32> {
    pub fn save(&self, path: &Path, seed: u64, meta: &MaskCheckpointMeta) -> Result<()> {
        checkpoint::save(path, MASK_CHECKPOINT_KIND, &self.arch, seed, meta, &self.to_flat())
    }

    pub fn load(path: &Path) -> Result<(Self, MaskCheckpointMeta)> {
        let (header, params) = checkpoint::load(path, MASK_CHECKPOINT_KIND)?;
        let arch: MaskArchitecture = serde_json::from_value(header.architecture.clone())?;
        checkpoint::require_architecture(&header, &arch)?;
        let meta: MaskCheckpointMeta = serde_json::from_value(header.metadata)?;
        let mut model = Self::new(arch, &mut stream(0, 0))?;
        model.load_flat(&params)?;
        Ok((model, meta))
    }
}

fn signed_row<F: Real>(m: &BitMask) -> impl Iterator<Item = F> + '_ {
    m.bits().iter().map(|&b| if b == 1 { F::one() } else { -F::one() })
}

/// Noisy training batch: (±1 x_t, t, 0/1 x_0).
fn corrupted_batch<F: Real, R: Rng + ?Sized>(
    masks: &[&BitMask],
    schedule: &RetentionSchedule,
    rng: &mut R,
) -> Result<(Array2<F>, Vec<usize>, Array2<F>)> {
    let n = masks[0].len();
    let b = masks.len();
    let mut xt = Array2::zeros((b, n));
    let mut x0 = Array2::zeros((b, n));
    let mut ts = Vec::with_capacity(b);
    for (r, m) in masks.iter().enumerate() {
        let t = rng.gen_range(1..=schedule.steps());
        let noisy = corrupt_mask_with(m, t, schedule, rng)?;
        for (c, v) in signed_row::<F>(&noisy).enumerate() {
            xt[[r, c]] = v;
        }
        for c in 0..n {
            x0[[r, c]] = if m.get(c) { F::one() } else { F::zero() };
        }
        ts.push(t);
    }
    Ok((xt, ts, x0))
}

/// Trains the x̂₀ predictor with per-bit cross-entropy over uniformly drawn timesteps.
pub fn train_mask_model(
    dataset: &Dataset,
    schedule: &RetentionSchedule,
    arch: MaskArchitecture,
    config: &TrainConfig,
) -> Result<(MaskModel<f32>, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoRecipes);
    }
    if arch.n != dataset.n() || arch.timesteps != schedule.steps() {
        return Err(Error::VocabularyMismatch(format!(
            "architecture expects n={} and {} timesteps; data has n={} and schedule {} steps",
            arch.n,
            arch.timesteps,
            dataset.n(),
            schedule.steps()
        )));
    }
    let masks = dataset.masks();
    let (train_idx, val_idx) = split_indices(
        masks.len(),
        config.validation_fraction,
        derive_seed(config.seed, "mask-split"),
    );
    let mut model = MaskModel::<f32>::new(arch, &mut stream(derive_seed(config.seed, "mask-init"), 0))?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &model);
    let mut ema = config.ema_decay.map(|d| Ema::new(d, &model));
    let mut batches = BatchStream::new(train_idx.clone(), derive_seed(config.seed, "mask-batches"));
    let mut noise = stream(derive_seed(config.seed, "mask-noise"), 0);
    let steps = config.total_steps(train_idx.len());
    let per_epoch = train_idx.len() as f64 / config.batch as f64;
    let mut log = TrainingLog {
        steps,
        train_indices: train_idx.clone(),
        validation_indices: val_idx.clone(),
        records: Vec::new(),
    };
    let (mut running, mut count) = (0.0, 0usize);
    for step in 1..=steps {
        let idx = batches.next_batch(config.batch);
        let picked: Vec<&BitMask> = idx.iter().map(|&i| &masks[i]).collect();
        let (xt, ts, x0) = corrupted_batch::<f32, _>(&picked, schedule, &mut noise)?;
        let (loss, grads) = model.loss_and_grad(xt.view(), &ts, x0.view())?;
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
                Some(mask_validation_loss(&model, &masks, &val_idx, schedule, config.seed)?)
            };
            let rec = LossRecord {
                step,
                epoch,
                train_loss: running / count as f64,
                validation_loss,
            };
            log::info!(
                "mask step {step}/{steps} epoch {epoch:.1}: train {:.5} val {}",
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

/// Loss on the validation split with fixed noise, so successive records are comparable.
fn mask_validation_loss(
    model: &MaskModel<f32>,
    masks: &[BitMask],
    val_idx: &[usize],
    schedule: &RetentionSchedule,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream(derive_seed(seed, "mask-validation"), 0);
    let reps = 1024usize.div_ceil(val_idx.len());
    let picked: Vec<&BitMask> = (0..reps).flat_map(|_| val_idx.iter().map(|&i| &masks[i])).collect();
    let (xt, ts, x0) = corrupted_batch::<f32, _>(&picked, schedule, &mut rng)?;
    model.loss(xt.view(), &ts, x0.view())
}

const CHAINS_PER_CHUNK: usize = 256;

/// Ancestral sampling from Bernoulli(½)^n down to x_0. Chain `i` draws from its own
/// stream, so results do not depend on chunking or thread count.
pub fn sample_masks(
    model: &MaskModel<f32>,
    schedule: &RetentionSchedule,
    count: usize,
    seed: u64,
) -> Result<Vec<BitMask>> {
    if model.arch.timesteps != schedule.steps() {
        return Err(Error::InvalidParameter(format!(
            "model trained for {} timesteps, schedule has {}",
            model.arch.timesteps,
            schedule.steps()
        )));
    }
    let chunks: Vec<Result<Vec<BitMask>>> = (0..count.div_ceil(CHAINS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHAINS_PER_CHUNK;
            let end = (start + CHAINS_PER_CHUNK).min(count);
            sample_chunk(model, schedule, start..end, seed)
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn sample_chunk(
    model: &MaskModel<f32>,
    schedule: &RetentionSchedule,
    chains: std::ops::Range<usize>,
    seed: u64,
) -> Result<Vec<BitMask>> {
    let n = model.arch.n;
    let mut rngs: Vec<StreamRng> = chains.clone().map(|i| stream(seed, i as u64)).collect();
    let b = rngs.len();
    let mut x: Array2<f32> =
        Array2::from_shape_fn((b, n), |(r, _)| if rngs[r].gen::<f64>() < 0.5 { 1.0 } else { -1.0 });
    for t in (1..=schedule.steps()).rev() {
        let logits = model.logits(x.view(), &vec![t; b])?;
        for (r, rng) in rngs.iter_mut().enumerate() {
            for c in 0..n {
                let p0 = sigmoid(logits[[r, c]] as f64);
                let p = posterior_soft(x[[r, c]] > 0.0, p0, t, schedule)?;
                x[[r, c]] = if rng.gen::<f64>() < p { 1.0 } else { -1.0 };
            }
        }
    }
    Ok((0..b)
        .map(|r| BitMask::from_bools(x.row(r).iter().map(|&v| v > 0.0)))
        .collect())
}
