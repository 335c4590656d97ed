use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SodSample;
use crate::losses::{hybrid_loss, softmax_cross_entropy};
use crate::net::{ClassifierNetwork, SodNetwork};
use crate::ops::BnMode;
use crate::tensor::{Parameterized, Tensor};

use super::augment::{augment_classifier, augment_sod, fit_mask, fit_resolution};
use super::checkpoint::save_checkpoint;
use super::optim::Optimizer;
use super::recipe::Recipe;
use super::schedule::schedule_lr;

/// Runs `f` on a one-thread pool in strict mode, else on the global pool.
pub fn with_threads<R: Send>(strict: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    if !strict {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SodTrainReport {
    /// Mean batch loss per epoch run; a truncated last epoch counts.
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub checkpoints: Vec<PathBuf>,
}

struct CheckpointPolicy<'a> {
    dir: Option<&'a Path>,
    every: Option<usize>,
    best: f64,
    written: Vec<PathBuf>,
    best_epoch: Option<usize>,
}

impl<'a> CheckpointPolicy<'a> {
    fn new(dir: Option<&'a Path>, every: Option<usize>) -> Self {
        CheckpointPolicy { dir, every, best: f64::INFINITY, written: Vec::new(), best_epoch: None }
    }

    /// Periodic and best-loss checkpoints after `epoch` (0-based).
    fn after_epoch<M: Parameterized<f64>>(
        &mut self,
        model: &M,
        config: &crate::net::NetworkConfig,
        optim: &Optimizer<f64>,
        epoch: usize,
        loss: f64,
        last: bool,
    ) -> Result<()> {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = Some(epoch);
        }
        let Some(dir) = self.dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut write = |name: String| -> Result<()> {
            let path = dir.join(name);
            save_checkpoint(&path, config, model, Some(optim), epoch + 1)?;
            log::info!("wrote {}", path.display());
            if !self.written.contains(&path) {
                self.written.push(path);
            }
            Ok(())
        };
        if self.every.is_some_and(|k| (epoch + 1) % k == 0) {
            write(format!("epoch_{:04}.lmfc", epoch + 1))?;
        }
        if improved {
            write("best.lmfc".into())?;
        }
        if last {
            write("final.lmfc".into())?;
        }
        Ok(())
    }
}

fn epoch_order(n: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

/// Trains a saliency network on paired samples with the recipe's loss,
/// optimizer and schedule. Samples are resized to the network resolution.
pub fn train_sod(
    net: &mut SodNetwork<f64>,
    samples: &[SodSample],
    recipe: &Recipe,
    out_dir: Option<&Path>,
) -> Result<SodTrainReport> {
    recipe.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("empty saliency dataset".into()));
    }
    let parts = recipe.loss_components()?;
    let input = net.config().input;
    let data: Vec<(Tensor<f64>, Tensor<f64>)> = samples
        .iter()
        .map(|s| (fit_resolution(&s.image, input.height, input.width), fit_mask(&s.mask, input.height, input.width)))
        .collect();
    with_threads(recipe.strict_deterministic, || {
        let mut optim = Optimizer::new(recipe.optimizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
        let mut report = SodTrainReport::default();
        let mut policy = CheckpointPolicy::new(out_dir, recipe.checkpoint_every);
        let config = net.config().clone();
        let limit = recipe.max_steps.unwrap_or(usize::MAX);
        for epoch in 0..recipe.epochs {
            if report.steps >= limit {
                break;
            }
            let lr = schedule_lr(&recipe.schedule, epoch);
            let order = epoch_order(data.len(), recipe.shuffle, &mut rng);
            let mut losses = Vec::new();
            for batch in order.chunks(recipe.batch_size) {
                if report.steps >= limit {
                    break;
                }
                let mut images = Vec::with_capacity(batch.len());
                let mut masks = Vec::with_capacity(batch.len());
                for &i in batch {
                    let (img, msk) = if recipe.augment {
                        augment_sod(&data[i].0, &data[i].1, &mut rng)?
                    } else {
                        data[i].clone()
                    };
                    images.push(img);
                    masks.push(msk);
                }
                let (images, masks) = (Tensor::stack_batch(&images)?, Tensor::stack_batch(&masks)?);
                net.zero_grad();
                let out = net.forward(&images, BnMode::Train)?;
                let (value, grad) = hybrid_loss(&out.map, &masks, parts)?;
                if !value.total.is_finite() {
                    return Err(Error::NonFinite { batch: report.steps, value: value.total });
                }
                net.backward(&grad)?;
                optim.step(net, lr)?;
                report.steps += 1;
                report.step_losses.push(value.total);
                losses.push(value.total);
            }
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            log::info!("epoch {} lr {lr:.3e} loss {mean:.6}", epoch + 1);
            report.epoch_losses.push(mean);
            let last = epoch + 1 == recipe.epochs || report.steps >= limit;
            policy.after_epoch(net, &config, &optim, epoch, mean, last)?;
        }
        report.best_epoch = policy.best_epoch;
        report.checkpoints = policy.written;
        Ok(report)
    })?
}

/// Eval-mode saliency maps for `(1, 3, h, w)` images, batched.
pub fn predict_sod(net: &mut SodNetwork<f64>, images: &[Tensor<f64>], batch_size: usize) -> Result<Vec<Tensor<f64>>> {
    let input = net.config().input;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let fitted: Vec<Tensor<f64>> = chunk.iter().map(|x| fit_resolution(x, input.height, input.width)).collect();
        let maps = net.forward(&Tensor::stack_batch(&fitted)?, BnMode::Eval)?.map;
        out.extend(maps.split_batch(chunk.len())?);
    }
    Ok(out)
}

/// Number of samples whose label is among the `k` largest logits. Ties are
/// broken towards the lower class index.
pub fn top_k_correct(logits: &Tensor<f64>, labels: &[usize], k: usize) -> Result<usize> {
    let s = logits.shape();
    if s.n != labels.len() || s.h != 1 || s.w != 1 {
        return Err(Error::shape("top_k_correct", format!("logits {s} for {} labels", labels.len())));
    }
    let mut correct = 0;
    for (n, &label) in labels.iter().enumerate() {
        if label >= s.c {
            return Err(Error::InvalidArgument(format!("label {label} out of range for {} classes", s.c)));
        }
        let row = logits.item(n);
        let target = row[label];
        let ahead = row.iter().enumerate().filter(|&(c, &v)| v > target || (v == target && c < label)).count();
        if ahead < k {
            correct += 1;
        }
    }
    Ok(correct)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
}

fn check_labels(labels: &[usize], classes: usize, images: &Tensor<f64>) -> Result<()> {
    if images.shape().n != labels.len() {
        return Err(Error::Dataset(format!("{} images but {} labels", images.shape().n, labels.len())));
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Dataset(format!("label {l} of sample {i} out of range for {classes} classes")));
    }
    Ok(())
}

/// Eval-mode accuracy and mean cross-entropy over a labeled set.
pub fn evaluate_classifier(
    net: &mut ClassifierNetwork<f64>,
    images: &Tensor<f64>,
    labels: &[usize],
    batch_size: usize,
) -> Result<Accuracy> {
    check_labels(labels, net.num_classes(), images)?;
    if labels.is_empty() {
        return Err(Error::Dataset("empty evaluation set".into()));
    }
    let k = 5.min(net.num_classes());
    let (mut c1, mut c5, mut loss) = (0, 0, 0.0);
    let idx: Vec<usize> = (0..labels.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = images.select_batch(chunk)?;
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let logits = net.forward(&x, BnMode::Eval)?;
        c1 += top_k_correct(&logits, &y, 1)?;
        c5 += top_k_correct(&logits, &y, k)?;
        loss += softmax_cross_entropy(&logits, &y)?.0 * chunk.len() as f64;
    }
    let n = labels.len() as f64;
    Ok(Accuracy { top1: c1 as f64 / n, top5: c5 as f64 / n, loss: loss / n })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainReport {
    pub epoch_losses: Vec<f64>,
    /// Accuracy of the train-mode forward passes seen during each epoch.
    pub train_accuracy: Vec<Accuracy>,
    /// Eval-mode accuracy on the held-out set after each epoch.
    pub eval_accuracy: Vec<Accuracy>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains a classifier with softmax cross-entropy.
pub fn train_classifier(
    net: &mut ClassifierNetwork<f64>,
    images: &Tensor<f64>,
    labels: &[usize],
    recipe: &Recipe,
    eval: Option<(&Tensor<f64>, &[usize])>,
    out_dir: Option<&Path>,
) -> Result<ClassifierTrainReport> {
    recipe.validate()?;
    check_labels(labels, net.num_classes(), images)?;
    if labels.is_empty() {
        return Err(Error::Dataset("empty classification dataset".into()));
    }
    if let Some((x, y)) = eval {
        check_labels(y, net.num_classes(), x)?;
    }
    let k = 5.min(net.num_classes());
    with_threads(recipe.strict_deterministic, || {
        let mut optim = Optimizer::new(recipe.optimizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
        let mut report = ClassifierTrainReport::default();
        let mut policy = CheckpointPolicy::new(out_dir, recipe.checkpoint_every);
        let config = net.config().clone();
        let limit = recipe.max_steps.unwrap_or(usize::MAX);
        for epoch in 0..recipe.epochs {
            if report.steps >= limit {
                break;
            }
            let lr = schedule_lr(&recipe.schedule, epoch);
            let order = epoch_order(labels.len(), recipe.shuffle, &mut rng);
            let (mut loss_sum, mut seen, mut c1, mut c5, mut batches) = (0.0, 0usize, 0, 0, 0usize);
            for batch in order.chunks(recipe.batch_size) {
                if report.steps >= limit {
                    break;
                }
                let mut x = images.select_batch(batch)?;
                if recipe.augment {
                    let parts: Vec<Tensor<f64>> =
                        x.split_batch(batch.len())?.iter().map(|im| augment_classifier(im, &mut rng)).collect();
                    x = Tensor::stack_batch(&parts)?;
                }
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                net.zero_grad();
                let logits = net.forward(&x, BnMode::Train)?;
                let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite { batch: report.steps, value: loss });
                }
                c1 += top_k_correct(&logits, &y, 1)?;
                c5 += top_k_correct(&logits, &y, k)?;
                net.backward(&grad)?;
                optim.step(net, lr)?;
                report.steps += 1;
                loss_sum += loss * batch.len() as f64;
                seen += batch.len();
                batches += 1;
            }
            if batches == 0 {
                break;
            }
            let mean = loss_sum / seen as f64;
            let train = Accuracy { top1: c1 as f64 / seen as f64, top5: c5 as f64 / seen as f64, loss: mean };
            report.epoch_losses.push(mean);
            report.train_accuracy.push(train);
            let mut track = mean;
            if let Some((ex, ey)) = eval {
                let acc = evaluate_classifier(net, ex, ey, recipe.batch_size)?;
                log::info!("epoch {} lr {lr:.3e} loss {mean:.4} train top1 {:.4} eval top1 {:.4}", epoch + 1, train.top1, acc.top1);
                track = acc.loss;
                report.eval_accuracy.push(acc);
            } else {
                log::info!("epoch {} lr {lr:.3e} loss {mean:.4} train top1 {:.4}", epoch + 1, train.top1);
            }
            let last = epoch + 1 == recipe.epochs || report.steps >= limit;
            policy.after_epoch(net, &config, &optim, epoch, track, last)?;
        }
        report.best_epoch = policy.best_epoch;
        report.checkpoints = policy.written;
        Ok(report)
    })?
}
