//! Minimal differentiable model: softmax regression or a tanh MLP over a flat
//! parameter vector, with mean cross-entropy loss and analytic gradients.
//!
//! Parameter layout, per layer in order: the weight matrix row-major with
//! shape `(out, in)`, followed by the `out` biases.

use std::ops::{Deref, DerefMut};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Empty means softmax regression.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn softmax(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new(), num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be >= 2".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec("hidden dims must be >= 1".into()));
        }
        Ok(())
    }

    /// `(in, out)` for every dense layer, input to output.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Flat model parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_len(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_count();
        if self.0.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.0.len(),
            });
        }
        Ok(())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dim must be >= 1".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        Ok(LabeledDataset {
            features,
            dim,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledDataset {
            features: Vec::new(),
            dim,
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Copies the given rows, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            features,
            dim: self.dim,
            labels,
        }
    }

    /// Smallest and largest feature value; `(0, 0)` when empty.
    pub fn feature_range(&self) -> (f64, f64) {
        if self.features.is_empty() {
            return (0.0, 0.0);
        }
        self.features
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}

/// Weights drawn from N(0, 1/fan_in), biases zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = seed::rng_from(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for (fan_in, out) in spec.layers() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * out {
            let z: f64 = rng.sample(StandardNormal);
            values.push(z * scale);
        }
        values.extend(std::iter::repeat_n(0.0, out));
    }
    ParamVector(values)
}

/// Activations of every layer for one sample; the last entry holds logits.
fn forward_layers(params: &[f64], spec: &ModelSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let layers = spec.layers();
    let last = layers.len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    let mut offset = 0;
    for (l, &(fan_in, out)) in layers.iter().enumerate() {
        let w = &params[offset..offset + fan_in * out];
        let b = &params[offset + fan_in * out..offset + fan_in * out + out];
        offset += fan_in * out + out;
        let input = &acts[l];
        let mut z: Vec<f64> = (0..out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + b[o]
            })
            .collect();
        if l != last {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    acts
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for a single input.
pub fn forward(params: &ParamVector, spec: &ModelSpec, x: &[f64]) -> Result<Vec<f64>> {
    params.check_len(spec)?;
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: x.len(),
        });
    }
    let acts = forward_layers(params, spec, x);
    Ok(softmax(acts.last().expect("at least one layer")))
}

pub fn predict(params: &ParamVector, spec: &ModelSpec, x: &[f64]) -> Result<usize> {
    params.check_len(spec)?;
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: x.len(),
        });
    }
    let acts = forward_layers(params, spec, x);
    Ok(argmax(acts.last().expect("at least one layer")))
}

fn check_batch(params: &ParamVector, spec: &ModelSpec, data: &LabeledDataset) -> Result<()> {
    params.check_len(spec)?;
    if data.dim() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: data.dim(),
        });
    }
    data.check_labels(spec.num_classes)
}

/// Mean loss and gradient over `rows` of `data`, accumulated in the order given.
fn loss_and_grad_rows(
    params: &[f64],
    spec: &ModelSpec,
    data: &LabeledDataset,
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let layers = spec.layers();
    let mut grad = vec![0.0; params.len()];
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for &(fan_in, out) in &layers {
        offsets.push(off);
        off += fan_in * out + out;
    }

    let mut total_loss = 0.0;
    for &r in rows {
        let acts = forward_layers(params, spec, data.row(r));
        let logits = acts.last().expect("at least one layer");
        let y = data.label(r);
        let lse = log_sum_exp(logits);
        total_loss += lse - logits[y];

        // dL/dz for the output layer: softmax - onehot
        let mut delta: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
        delta[y] -= 1.0;

        for l in (0..layers.len()).rev() {
            let (fan_in, out) = layers[l];
            let base = offsets[l];
            let input = &acts[l];
            for o in 0..out {
                let d = delta[o];
                let g = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[base + fan_in * out + o] += d;
            }
            if l > 0 {
                let w = &params[base..base + fan_in * out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..out {
                    let d = delta[o];
                    for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wv;
                    }
                }
                // tanh'(z) = 1 - tanh(z)^2
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
    let scale = 1.0 / rows.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (total_loss * scale, grad)
}

/// Mean cross-entropy over the batch and its gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &LabeledDataset,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    check_batch(params, spec, batch)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let (loss, grad) = loss_and_grad_rows(params, spec, batch, &rows);
    Ok((loss, ParamVector(grad)))
}

/// Mean cross-entropy only.
pub fn loss(params: &ParamVector, spec: &ModelSpec, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    check_batch(params, spec, data)?;
    let total: f64 = (0..data.len())
        .map(|r| {
            let acts = forward_layers(params, spec, data.row(r));
            let logits = acts.last().expect("at least one layer");
            log_sum_exp(logits) - logits[data.label(r)]
        })
        .sum();
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

/// Mini-batch SGD: `local_epochs` shuffled passes over `data`.
///
/// Rows inside each mini-batch are accumulated in ascending index order, so a
/// single full-batch epoch is exactly one gradient step.
pub fn sgd_train(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &LabeledDataset,
    sgd: &SgdConfig,
    rng_seed: u64,
) -> Result<ParamVector> {
    if !(sgd.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("learning rate must be > 0".into()));
    }
    if sgd.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    check_batch(params, spec, data)?;

    let mut current = params.clone();
    let mut rng = seed::rng_from(rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..sgd.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(sgd.batch_size) {
            let mut rows = chunk.to_vec();
            rows.sort_unstable();
            let (_, grad) = loss_and_grad_rows(&current, spec, data, &rows);
            for (p, g) in current.iter_mut().zip(&grad) {
                *p -= sgd.learning_rate * g;
            }
        }
    }
    Ok(current)
}

/// `a·b / (|a| |b|)`, or 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    // single sqrt so that identical inputs give exactly 1
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Percentage of rows whose argmax prediction equals the label.
pub fn accuracy(params: &ParamVector, spec: &ModelSpec, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyData);
    }
    check_batch(params, spec, test)?;
    let correct = (0..test.len())
        .filter(|&r| {
            let acts = forward_layers(params, spec, test.row(r));
            argmax(acts.last().expect("at least one layer")) == test.label(r)
        })
        .count();
    Ok(correct as f64 / test.len() as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> LabeledDataset {
        let mut rng = seed::rng_from(seed);
        let features = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        LabeledDataset::new(features, dim, labels).unwrap()
    }

    fn random_params(spec: &ModelSpec, seed: u64) -> ParamVector {
        let mut rng = seed::rng_from(seed);
        ParamVector::new(
            (0..spec.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    /// Straightforward softmax regression written without the layer machinery.
    fn naive_softmax_regression(params: &[f64], d: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; c];
        for k in 0..c {
            let mut s = params[d * c + k];
            for j in 0..d {
                s += params[k * d + j] * x[j];
            }
            logits[k] = s;
        }
        let exps: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    fn finite_difference(params: &ParamVector, spec: &ModelSpec, data: &LabeledDataset) -> Vec<f64> {
        let h = 1e-5;
        (0..params.len())
            .map(|i| {
                let mut plus = params.clone();
                plus[i] += h;
                let mut minus = params.clone();
                minus[i] -= h;
                (loss(&plus, spec, data).unwrap() - loss(&minus, spec, data).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn param_count_softmax() {
        let spec = ModelSpec::softmax(4, 3).unwrap();
        assert_eq!(spec.param_count(), 15);
        assert_eq!(init_model(&spec, 1).len(), 15);
        let mlp = ModelSpec::new(4, vec![5], 3).unwrap();
        assert_eq!(mlp.param_count(), 4 * 5 + 5 + 5 * 3 + 3);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::softmax(0, 3).is_err());
        assert!(ModelSpec::softmax(3, 1).is_err());
        assert!(ModelSpec::new(3, vec![0], 3).is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = ModelSpec::new(6, vec![4], 3).unwrap();
        assert_eq!(init_model(&spec, 9), init_model(&spec, 9));
        assert_ne!(init_model(&spec, 9), init_model(&spec, 10));
        // biases of the first layer are zero
        let p = init_model(&spec, 9);
        assert!(p[24..28].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let spec = ModelSpec::new(3, vec![4], 5).unwrap();
        let p = ParamVector::zeros(spec.param_count());
        let probs = forward(&p, &spec, &[0.3, -1.0, 2.0]).unwrap();
        for v in probs {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_naive_softmax_regression() {
        let spec = ModelSpec::softmax(4, 3).unwrap();
        for s in 0..20 {
            let p = random_params(&spec, s);
            let x = [0.5, -1.5, 2.0, 0.1 * s as f64];
            let got = forward(&p, &spec, &x).unwrap();
            let want = naive_softmax_regression(&p, 4, 3, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let spec = ModelSpec::softmax(4, 3).unwrap();
        let p = ParamVector::zeros(15);
        assert!(forward(&p, &spec, &[1.0; 3]).is_err());
        assert!(forward(&ParamVector::zeros(14), &spec, &[1.0; 4]).is_err());
    }

    #[test]
    fn zero_params_loss_is_ln_c() {
        let spec = ModelSpec::new(3, vec![2], 7).unwrap();
        let data = random_dataset(9, 3, 7, 4);
        let (l, g) = loss_and_grad(&ParamVector::zeros(spec.param_count()), &spec, &data).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-9);
        assert_eq!(g.len(), spec.param_count());
    }

    #[test]
    fn empty_batch_is_an_error() {
        let spec = ModelSpec::softmax(3, 2).unwrap();
        let p = ParamVector::zeros(8);
        assert_eq!(
            loss_and_grad(&p, &spec, &LabeledDataset::empty(3)).unwrap_err(),
            Error::EmptyData
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 3 inputs, 2 hidden, 2 classes -> 3*2+2+2*2+2 = 14 params; softmax(4,4) = 20 params
        for spec in [
            ModelSpec::softmax(4, 4).unwrap(),
            ModelSpec::new(3, vec![2], 2).unwrap(),
        ] {
            let data = random_dataset(5, spec.input_dim, spec.num_classes, 11);
            let p = random_params(&spec, 12);
            let (_, g) = loss_and_grad(&p, &spec, &data).unwrap();
            let fd = finite_difference(&p, &spec, &data);
            for (a, n) in g.iter().zip(&fd) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn duplicated_rows_leave_mean_loss_unchanged() {
        let spec = ModelSpec::new(3, vec![4], 3).unwrap();
        let data = random_dataset(6, 3, 3, 2);
        let doubled_idx: Vec<usize> = (0..6).chain(0..6).collect();
        let doubled = data.subset(&doubled_idx);
        let p = random_params(&spec, 5);
        let (l1, g1) = loss_and_grad(&p, &spec, &data).unwrap();
        let (l2, g2) = loss_and_grad(&p, &spec, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_local_epochs_is_identity() {
        let spec = ModelSpec::softmax(3, 2).unwrap();
        let data = random_dataset(10, 3, 2, 1);
        let p = random_params(&spec, 3);
        let sgd = SgdConfig {
            learning_rate: 0.1,
            batch_size: 4,
            local_epochs: 0,
        };
        assert_eq!(sgd_train(&p, &spec, &data, &sgd, 0).unwrap(), p);
    }

    #[test]
    fn single_full_batch_epoch_is_one_step() {
        let spec = ModelSpec::new(3, vec![3], 3).unwrap();
        let data = random_dataset(12, 3, 3, 8);
        let p = random_params(&spec, 3);
        let eta = 0.05;
        let sgd = SgdConfig {
            learning_rate: eta,
            batch_size: data.len(),
            local_epochs: 1,
        };
        let trained = sgd_train(&p, &spec, &data, &sgd, 77).unwrap();
        let (_, g) = loss_and_grad(&p, &spec, &data).unwrap();
        let expected: Vec<f64> = p.iter().zip(g.iter()).map(|(a, b)| a - eta * b).collect();
        assert_eq!(trained.into_inner(), expected);
    }

    #[test]
    fn sgd_reduces_loss_on_separable_data() {
        let spec = ModelSpec::softmax(2, 2).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let y = i % 2;
            let s = if y == 0 { -1.0 } else { 1.0 };
            features.extend([s * (1.0 + 0.01 * i as f64), 0.3 * s]);
            labels.push(y);
        }
        let data = LabeledDataset::new(features, 2, labels).unwrap();
        let p = init_model(&spec, 3);
        let sgd = SgdConfig {
            learning_rate: 0.1,
            batch_size: 8,
            local_epochs: 5,
        };
        let trained = sgd_train(&p, &spec, &data, &sgd, 5).unwrap();
        assert!(loss(&trained, &spec, &data).unwrap() < loss(&p, &spec, &data).unwrap());
        assert_eq!(trained, sgd_train(&p, &spec, &data, &sgd, 5).unwrap());
    }

    #[test]
    fn sgd_rejects_empty_data_and_bad_hyperparameters() {
        let spec = ModelSpec::softmax(2, 2).unwrap();
        let p = ParamVector::zeros(6);
        let sgd = SgdConfig {
            learning_rate: 0.1,
            batch_size: 8,
            local_epochs: 1,
        };
        assert!(sgd_train(&p, &spec, &LabeledDataset::empty(2), &sgd, 0).is_err());
        let data = random_dataset(4, 2, 2, 0);
        let bad = SgdConfig {
            learning_rate: 0.0,
            ..sgd
        };
        assert!(sgd_train(&p, &spec, &data, &bad, 0).is_err());
    }

    #[test]
    fn cosine_examples() {
        let v = [1.0, -2.0, 3.5];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let two: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let five: Vec<f64> = v.iter().map(|x| 5.0 * x).collect();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&two, &five).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v, &[0.0; 3]).unwrap(), 0.0);
        assert!(cosine_similarity(&v, &[1.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let spec = ModelSpec::softmax(2, 3).unwrap();
        // Balanced three-class set: zero params predict class 0 everywhere.
        let data = LabeledDataset::new(vec![0.0; 12], 2, vec![0, 1, 2, 0, 1, 2]).unwrap();
        let zero = ParamVector::zeros(spec.param_count());
        assert!((accuracy(&zero, &spec, &data).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!(accuracy(&zero, &spec, &LabeledDataset::empty(2)).is_err());
    }

    #[test]
    fn accuracy_matches_independent_recount() {
        let spec = ModelSpec::new(4, vec![3], 3).unwrap();
        let data = random_dataset(50, 4, 3, 21);
        let p = random_params(&spec, 22);
        let mut correct = 0;
        for r in 0..50 {
            let probs = forward(&p, &spec, data.row(r)).unwrap();
            let mut best = 0;
            for k in 1..3 {
                if probs[k] > probs[best] {
                    best = k;
                }
            }
            if best == data.label(r) {
                correct += 1;
            }
        }
        assert_eq!(accuracy(&p, &spec, &data).unwrap(), correct as f64 / 50.0 * 100.0);
    }

    proptest! {
        #[test]
        fn softmax_output_is_normalized(seed in 0u64..1000, x in prop::collection::vec(-50.0f64..50.0, 5)) {
            let spec = ModelSpec::new(5, vec![3], 4).unwrap();
            let p = random_params(&spec, seed);
            let probs = forward(&p, &spec, &x).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn cosine_is_bounded_and_symmetric(
            a in prop::collection::vec(-1e3f64..1e3, 8),
            b in prop::collection::vec(-1e3f64..1e3, 8),
        ) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn relabeling_to_predictions_gives_full_accuracy(seed in 0u64..500) {
            let spec = ModelSpec::new(3, vec![4], 3).unwrap();
            let p = random_params(&spec, seed);
            let mut data = random_dataset(30, 3, 3, seed + 1);
            for r in 0..data.len() {
                let y = predict(&p, &spec, data.row(r)).unwrap();
                data.labels_mut()[r] = y;
            }
            prop_assert_eq!(accuracy(&p, &spec, &data).unwrap(), 100.0);
        }
    }
}
