//! Cross-entropy loss, Adam, the training loop and binary classification
//! metrics.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::dataset::{batch_tensor, Label, LabeledImage};
use crate::error::{Error, Result};
use crate::layers::{Mode, Param};
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits, `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[label] - max);
        for (j, v) in row.iter().enumerate() {
            let p = (v - max - log_sum).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push((p - target) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::from_vec(&[n, k], grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, one pair per parameter, in the order the
/// parameters are passed to [`AdamState::step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> Option<&[f64]> {
        self.m.get(i).map(Vec::as_slice)
    }

    pub fn second_moment(&self, i: usize) -> Option<&[f64]> {
        self.v.get(i).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.grad().is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value().len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value().len()) {
            return Err(Error::InvalidArgument("parameter set changed between Adam steps".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (values, grad) = p.value_and_grad();
            for (((w, g), m), v) in values.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 25, batch_size: 32, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

fn label_indices(images: &[&LabeledImage]) -> Vec<usize> {
    images.iter().map(|i| i.label.index()).collect()
}

/// Train with mini-batch Adam on cross-entropy. Each epoch reshuffles the
/// sample order from the `shuffle` stream of `seed`; batches are consecutive
/// chunks of `batch_size` (the last may be short). Leaves the model in eval
/// mode.
pub fn train_model(
    model: &mut Model,
    train_set: &[LabeledImage],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = Rng::new(seed, "shuffle").child(model.arch());
    let mut adam = AdamState::new(config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    model.set_mode(Mode::Train);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &train_set[i]).collect();
            let labels = label_indices(&batch);
            let x = batch_tensor(batch.iter().copied())?;
            let logits = model.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += argmax_labels(&logits).iter().zip(&labels).filter(|(p, &l)| p.index() == l).count();
            model.backward(&grad)?;
            adam.step(&mut model.params_mut())?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
        };
        debug!("{} epoch {:>2}: loss {:.4} acc {:.4}", model.arch(), epoch + 1, stats.loss, stats.train_accuracy);
        history.push(stats);
    }
    model.clear_caches();
    model.set_mode(Mode::Eval);
    Ok(history)
}

/// Row-wise argmax of `[N, 2]` logits; ties go to `Natural`.
pub fn argmax_labels(logits: &Tensor) -> Vec<Label> {
    logits.data().chunks_exact(2).map(|r| if r[1] > r[0] { Label::Artificial } else { Label::Natural }).collect()
}

const INFER_CHUNK: usize = 64;

/// Eval-mode predictions, in input order.
pub fn predict(model: &Model, images: &[LabeledImage]) -> Result<Vec<Label>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_CHUNK) {
        let logits = model.infer(&batch_tensor(chunk)?)?;
        if logits.shape() != [chunk.len(), 2] {
            return Err(Error::ShapeMismatch { left: logits.shape().to_vec(), right: vec![chunk.len(), 2] });
        }
        out.extend(argmax_labels(&logits));
    }
    Ok(out)
}

/// Binary confusion counts with `Artificial` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when a ratio had an empty denominator and was reported as 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let total = tp + fp + fn_ + tn;
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision: precision.unwrap_or(0.0),
            recall: recall.unwrap_or(0.0),
            f1: f1.unwrap_or(0.0),
            accuracy: ratio(tp + tn, total).unwrap_or(0.0),
            degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (Label::Artificial, Label::Artificial) => tp += 1,
                (Label::Natural, Label::Artificial) => fp += 1,
                (Label::Artificial, Label::Natural) => fn_ += 1,
                (Label::Natural, Label::Natural) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn samples(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Images predicted positive.
    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<Label>,
}

pub fn evaluate(model: &Model, test_set: &[LabeledImage]) -> Result<Evaluation> {
    let predictions = predict(model, test_set)?;
    let truth: Vec<Label> = test_set.iter().map(|i| i.label).collect();
    Ok(Evaluation { metrics: Metrics::from_predictions(&truth, &predictions), predictions })
}

/// Shuffle with `rng`, then split off the first `round(n * train_fraction)`
/// items as the training set.
pub fn split_dataset<T>(mut samples: Vec<T>, train_fraction: f64, rng: &mut Rng) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    rng.shuffle(&mut samples);
    let n_train = (samples.len() as f64 * train_fraction).round() as usize;
    let test = samples.split_off(n_train.min(samples.len()));
    Ok((samples, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_ln2() {
        let logits = Tensor::create(&[3, 2], 0.7).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_prediction() {
        let logits = Tensor::from_vec(&[1, 2], vec![10.0, -10.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-8, "{loss}");
        assert!(grad.data().iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn out_of_range_label() {
        let logits = Tensor::create(&[1, 2], 0.0).unwrap();
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::new("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value().data(), &[1.0, -2.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Param::new("w", Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap());
        p.set_grad(Tensor::from_vec(&[3], vec![0.5, -3.0, 1e-3]).unwrap());
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        for (w, s) in p.value().data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - s * 0.001).abs() < 1e-7, "{w}");
        }
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut p = Param::new("3.conv.weight", Tensor::create(&[2], 1.0).unwrap());
        p.set_grad(Tensor::from_vec(&[2], vec![0.0, f64::NAN]).unwrap());
        let err = AdamState::new(AdamConfig::default()).step(&mut [&mut p]).unwrap_err();
        assert!(err.to_string().contains("3.conv.weight"));
        assert_eq!(p.value().data(), &[1.0, 1.0]);
    }

    #[test]
    fn metrics_examples() {
        let m = Metrics::from_counts(5, 0, 0, 5);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert!(!m.degenerate);

        // constant "natural" predictor on 5 positives / 5 negatives
        let m = Metrics::from_counts(0, 0, 5, 5);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.degenerate);

        let m = Metrics::from_counts(265, 7, 8, 140);
        assert!((m.precision - 0.9743).abs() < 5e-5, "{}", m.precision);
        assert!((m.recall - 0.9707).abs() < 5e-5, "{}", m.recall);
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split_dataset((0..2100).collect(), 0.8, &mut Rng::new(1, "split")).unwrap();
        assert_eq!((tr.len(), te.len()), (1680, 420));

        let (tr, te) = split_dataset((0..10).collect::<Vec<i32>>(), 0.8, &mut Rng::new(1, "split")).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut all: Vec<i32> = tr.into_iter().chain(te).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(split_dataset(vec![1, 2, 3], bad, &mut Rng::new(1, "split")).is_err());
        }
    }

    #[test]
    fn split_is_seeded() {
        let run = |seed| split_dataset((0..100).collect::<Vec<u32>>(), 0.8, &mut Rng::new(seed, "split")).unwrap();
        assert_eq!(run(4), run(4));
        assert_ne!(run(4).0, run(5).0);
    }
}
