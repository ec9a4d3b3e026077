//! Minibatch training with Adam on the masked MSE objective.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use umesh_core::datagen::Dataset;

use crate::adam::{Adam, AdamConfig};
use crate::error::{NnError, Result};
use crate::loss::masked_mse;
use crate::tensor::Tensor;
use crate::unet::{Gradients, UNet, UNetConfig};

fn default_batch_size() -> usize {
    4
}

/// Learning-rate policy over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warmup over `warmup` iterations, then cosine decay from the
    /// base rate to `base * final_fraction`.
    Cosine {
        final_fraction: f64,
        #[serde(default)]
        warmup: usize,
    },
}

/// How minibatch members are drawn from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// Uniform draws with replacement.
    #[default]
    WithReplacement,
    /// Shuffled epochs; a batch may straddle two epochs.
    Epochs,
}

impl LrSchedule {
    pub fn rate(&self, base: f64, iteration: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_fraction, warmup } => {
                if iteration <= warmup {
                    return base * iteration as f64 / (warmup + 1) as f64;
                }
                let span = total.saturating_sub(warmup);
                let p = if span > 1 {
                    (iteration - warmup - 1) as f64 / (span - 1) as f64
                } else {
                    1.0
                };
                let w = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
                base * (final_fraction + (1.0 - final_fraction) * w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(flatten, default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub sampling: BatchSampling,
    /// Seeds both weight initialisation and batch sampling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            batch_size: default_batch_size(),
            iterations,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Constant,
            sampling: BatchSampling::WithReplacement,
            seed,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(NnError::Config("batch_size and iterations must be at least 1".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(NnError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub wall_time_s: f64,
}

/// Normalised network inputs and targets of a training split.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Vec<Tensor<f32>>,
    pub targets: Vec<Tensor<f32>>,
    /// Per-voxel flag of the loss support.
    pub mask: Vec<bool>,
    pub force_scale: f64,
    pub disp_scale: f64,
}

fn nonzero_or_one(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

impl TrainingSet {
    /// Train split of `ds`, scaled by its largest absolute force and
    /// displacement entries.
    pub fn from_dataset(ds: &Dataset, mask: &[bool]) -> Result<Self> {
        let train: Vec<_> = ds.train().collect();
        if train.is_empty() {
            return Err(NnError::Config("dataset has no training samples".into()));
        }
        let fs = train.iter().map(|s| s.force.max_abs() as f64).fold(0.0, f64::max);
        let ds_ = train.iter().map(|s| s.displacement.max_abs() as f64).fold(0.0, f64::max);
        let (fs, dsc) = (nonzero_or_one(fs), nonzero_or_one(ds_));
        Self::new(
            train.iter().map(|s| Tensor::from_field(&s.force, fs)).collect(),
            train.iter().map(|s| Tensor::from_field(&s.displacement, dsc)).collect(),
            mask.to_vec(),
            fs,
            dsc,
        )
    }

    pub fn new(
        inputs: Vec<Tensor<f32>>,
        targets: Vec<Tensor<f32>>,
        mask: Vec<bool>,
        force_scale: f64,
        disp_scale: f64,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(NnError::Config("need matching, non-empty inputs and targets".into()));
        }
        let dims = inputs[0].dims();
        if inputs.iter().chain(&targets).any(|t| t.dims() != dims || t.channels() != 3) {
            return Err(NnError::Shape("training tensors differ in shape".into()));
        }
        if mask.len() != inputs[0].voxels() {
            return Err(NnError::Shape("mask does not match the tensor grid".into()));
        }
        Ok(Self {
            inputs,
            targets,
            mask,
            force_scale,
            disp_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean loss and summed gradients over a batch; per-sample work may run in
/// parallel but the reduction follows batch order.
pub fn batch_gradients(net: &UNet<f32>, set: &TrainingSet, batch: &[usize]) -> Result<(f64, Gradients<f32>)> {
    let per_sample: Vec<(f64, Gradients<f32>)> = batch
        .par_iter()
        .map(|&i| {
            let (pred, cache) = net.forward_cached(&set.inputs[i])?;
            let (loss, grad) = masked_mse(&pred, &set.targets[i], &set.mask)?;
            let mut g = net.zero_gradients();
            net.backward(&cache, &grad, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for ((tw, tb), (gw, gb)) in total.iter_mut().zip(g) {
            tw.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
            tb.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
        }
    }
    let inv = 1.0 / batch.len() as f32;
    for (w, b) in &mut total {
        w.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= inv);
    }
    Ok((loss / batch.len() as f64, total))
}

/// Trains a freshly initialised network. `on_checkpoint` is called every
/// `checkpoint_every` iterations with the current weights.
pub fn train_on(
    set: &TrainingSet,
    net_config: UNetConfig,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &UNet<f32>) -> Result<()>,
) -> Result<(UNet<f32>, Vec<LossRecord>)> {
    cfg.validate()?;
    if set.inputs[0].dims() != net_config.dims {
        return Err(NnError::Shape(format!(
            "training tensors are {:?}, network expects {:?}",
            set.inputs[0].dims(),
            net_config.dims
        )));
    }
    let mut net = UNet::<f32>::new(net_config, cfg.seed)?;
    net.force_scale = set.force_scale;
    net.disp_scale = set.disp_scale;
    let sizes: Vec<usize> = net
        .layer_params()
        .iter()
        .flat_map(|(w, b)| [w.len(), b.len()])
        .collect();
    let mut adam = Adam::<f32>::new(cfg.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for it in 1..=cfg.iterations {
        batch.clear();
        match cfg.sampling {
            BatchSampling::WithReplacement => {
                batch.extend((0..cfg.batch_size).map(|_| rng.random_range(0..set.len())));
            }
            BatchSampling::Epochs => {
                while batch.len() < cfg.batch_size.min(set.len()) {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    batch.push(order[cursor]);
                    cursor += 1;
                }
            }
        }
        let (loss, grads) = batch_gradients(&net, set, &batch)?;
        if !loss.is_finite() {
            return Err(NnError::Diverged { iteration: it, loss });
        }
        let flat: Vec<&[f32]> = grads.iter().flat_map(|(w, b)| [w.as_slice(), b.as_slice()]).collect();
        let lr = cfg.lr_schedule.rate(cfg.adam.learning_rate, it, cfg.iterations);
        let params: Vec<&mut Vec<f32>> = net.layer_params_mut().into_iter().flat_map(|(w, b)| [w, b]).collect();
        adam.step(params, &flat, lr);
        trace.push(LossRecord {
            iteration: it,
            loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if it % 500 == 0 {
            log::info!("iteration {it}: loss {loss:.4e}");
        }
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && it % every == 0 {
                on_checkpoint(it, &net)?;
            }
        }
    }
    Ok((net, trace))
}

pub fn train(
    ds: &Dataset,
    mask: &[bool],
    net_config: UNetConfig,
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(usize, &UNet<f32>) -> Result<()>,
) -> Result<(UNet<f32>, Vec<LossRecord>)> {
    if ds.padded_dims != net_config.dims {
        return Err(NnError::Shape(format!(
            "dataset grid {:?} differs from network dims {:?}",
            ds.padded_dims, net_config.dims
        )));
    }
    train_on(&TrainingSet::from_dataset(ds, mask)?, net_config, cfg, on_checkpoint)
}

/// Writes `iteration,loss,wall_time_s` rows.
pub fn write_loss_csv(trace: &[LossRecord], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "iteration,loss,wall_time_s")?;
    for r in trace {
        writeln!(w, "{},{:e},{:.6}", r.iteration, r.loss, r.wall_time_s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(n: usize) -> TrainingSet {
        let dims = [4, 4, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = || Tensor::from_vec(3, dims, (0..192).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        let inputs: Vec<_> = (0..n).map(|_| t()).collect();
        let targets: Vec<_> = (0..n).map(|_| t()).collect();
        let mask = (0..64).map(|i| i % 5 != 0).collect();
        TrainingSet::new(inputs, targets, mask, 1.0, 1.0).unwrap()
    }

    #[test]
    fn deterministic_trace() {
        let set = toy_set(3);
        let cfg = UNetConfig::new(2, 1, [4, 4, 4]).unwrap();
        let tc = TrainConfig::new(20, 5);
        let (a, ta) = train_on(&set, cfg, &tc, |_, _| Ok(())).unwrap();
        let (b, tb) = train_on(&set, cfg, &tc, |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        let la: Vec<f64> = ta.iter().map(|r| r.loss).collect();
        let lb: Vec<f64> = tb.iter().map(|r| r.loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn one_iteration_moves_every_tensor() {
        let set = toy_set(2);
        let cfg = UNetConfig::new(2, 2, [4, 4, 4]).unwrap();
        let init = UNet::<f32>::new(cfg, 9).unwrap();
        let (net, _) = train_on(&set, cfg, &TrainConfig::new(1, 9), |_, _| Ok(())).unwrap();
        for ((w0, b0), (w1, b1)) in init.layer_params().iter().zip(net.layer_params()) {
            assert_ne!(*w0, w1);
            assert_ne!(*b0, b1);
        }
    }

    #[test]
    fn single_sample_loss_falls() {
        let set = toy_set(1);
        let cfg = UNetConfig::new(4, 1, [4, 4, 4]).unwrap();
        let (_, trace) = train_on(&set, cfg, &TrainConfig::new(1000, 2), |_, _| Ok(())).unwrap();
        assert!(trace[999].loss < trace[9].loss);
    }

    #[test]
    fn checkpoints_fire() {
        let set = toy_set(1);
        let cfg = UNetConfig::new(2, 1, [4, 4, 4]).unwrap();
        let mut tc = TrainConfig::new(10, 1);
        tc.checkpoint_every = Some(4);
        let mut seen = vec![];
        train_on(&set, cfg, &tc, |it, _| {
            seen.push(it);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![4, 8]);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine { final_fraction: 0.01, warmup: 0 };
        assert!((s.rate(1e-3, 1, 100) - 1e-3).abs() < 1e-18);
        assert!((s.rate(1e-3, 100, 100) - 1e-5).abs() < 1e-18);
        let w = LrSchedule::Cosine { final_fraction: 0.01, warmup: 9 };
        assert!((w.rate(1e-3, 1, 100) - 1e-4).abs() < 1e-18);
        assert!((w.rate(1e-3, 10, 100) - 1e-3).abs() < 1e-18);
        assert!((w.rate(1e-3, 100, 100) - 1e-5).abs() < 1e-18);
        assert_eq!(LrSchedule::Constant.rate(0.5, 7, 9), 0.5);
    }
}
