//! Reference backend: hashed character n-grams feeding a linear softmax
//! layer, trained by seeded mini-batch gradient descent.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{HyperParams, PaddedBatch, Predictor};
use crate::error::{Error, Result};
use crate::label::{ClassProbs, Label, NUM_CLASSES};

pub const DEFAULT_BUCKETS_LOG2: u32 = 16;
const MIN_N: usize = 3;
const MAX_N: usize = 5;
const WEIGHTS_MAGIC: &[u8; 8] = b"AHTOY\x00\x00\x01";

/// Sparse feature vector, sorted by bucket, unit L2 norm (or empty).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features(pub Vec<(u32, f64)>);

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Character 3- to 5-grams of the space-joined tokens, with one space of
/// padding on each side, hashed into `2^buckets_log2` buckets.
pub fn featurize(tokens: &[&str], buckets_log2: u32) -> Features {
    let mut text = String::from(" ");
    for t in tokens {
        text.push_str(t);
        text.push(' ');
    }
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let chars = bounds.len() - 1;
    let mask = (1u64 << buckets_log2) - 1;

    let mut hits: Vec<u32> = Vec::new();
    for n in MIN_N..=MAX_N {
        for start in 0..chars.saturating_sub(n - 1) {
            let gram = &text.as_bytes()[bounds[start]..bounds[start + n]];
            hits.push((fnv1a(gram) & mask) as u32);
        }
    }
    hits.sort_unstable();

    let mut feats: Vec<(u32, f64)> = Vec::new();
    for b in hits {
        match feats.last_mut() {
            Some((last, v)) if *last == b => *v += 1.0,
            _ => feats.push((b, 1.0)),
        }
    }
    let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut feats {
            *v /= norm;
        }
    }
    Features(feats)
}

/// Linear layer parameters. `weights[bucket * NUM_CLASSES + class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub buckets_log2: u32,
    pub weights: Vec<f64>,
    pub bias: ClassProbs,
}

impl ToyParams {
    pub fn zeros(buckets_log2: u32) -> ToyParams {
        ToyParams {
            buckets_log2,
            weights: vec![0.0; (1usize << buckets_log2) * NUM_CLASSES],
            bias: [0.0; NUM_CLASSES],
        }
    }

    pub fn buckets(&self) -> usize {
        1 << self.buckets_log2
    }

    /// Flat view: weights followed by bias.
    pub fn len(&self) -> usize {
        self.weights.len() + NUM_CLASSES
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        if i < self.weights.len() {
            self.weights[i] = v;
        } else {
            self.bias[i - self.weights.len()] = v;
        }
    }

    fn check_finite(&self) -> Result<()> {
        match (0..self.len()).find(|&i| !self.get(i).is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    fn logits(&self, x: &Features) -> ClassProbs {
        let mut z = self.bias;
        for &(b, v) in &x.0 {
            let row = &self.weights[b as usize * NUM_CLASSES..][..NUM_CLASSES];
            for c in 0..NUM_CLASSES {
                z[c] += row[c] * v;
            }
        }
        z
    }

    pub fn probabilities(&self, x: &Features) -> ClassProbs {
        softmax(&self.logits(x))
    }
}

fn log_sum_exp(z: &ClassProbs) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &ClassProbs) -> ClassProbs {
    let lse = log_sum_exp(z);
    let mut p = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        p[c] = (z[c] - lse).exp();
    }
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}

/// Gradient with respect to [`ToyParams`], stored sparsely by bucket.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyGradient {
    pub weights: Vec<(u32, ClassProbs)>,
    pub bias: ClassProbs,
}

impl ToyGradient {
    /// Entry at a flat parameter index (same layout as [`ToyParams::get`]).
    pub fn get(&self, i: usize, params: &ToyParams) -> f64 {
        let wlen = params.weights.len();
        if i >= wlen {
            return self.bias[i - wlen];
        }
        let (bucket, class) = ((i / NUM_CLASSES) as u32, i % NUM_CLASSES);
        self.weights
            .binary_search_by_key(&bucket, |(b, _)| *b)
            .map_or(0.0, |k| self.weights[k].1[class])
    }
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn forward_backward(params: &ToyParams, batch: &[(Features, Label)]) -> Result<(f64, ToyGradient)> {
    params.check_finite()?;
    Ok(forward_backward_unchecked(params, batch.iter().map(|(x, y)| (x, *y))))
}

fn mean_loss(params: &ToyParams, examples: &[(Features, Label)]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let total: f64 = examples
        .iter()
        .map(|(x, y)| {
            let z = params.logits(x);
            log_sum_exp(&z) - z[y.index()]
        })
        .sum();
    total / examples.len() as f64
}

fn forward_backward_unchecked<'a>(
    params: &ToyParams,
    batch: impl ExactSizeIterator<Item = (&'a Features, Label)>,
) -> (f64, ToyGradient) {
    if batch.len() == 0 {
        return (0.0, ToyGradient::default());
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut bias = [0.0; NUM_CLASSES];
    let mut entries: Vec<(u32, ClassProbs)> = Vec::new();
    for (x, y) in batch {
        let z = params.logits(x);
        let lse = log_sum_exp(&z);
        loss += lse - z[y.index()];
        let mut g = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            g[c] = (z[c] - lse).exp() * scale;
        }
        g[y.index()] -= scale;
        for c in 0..NUM_CLASSES {
            bias[c] += g[c];
        }
        for &(b, v) in &x.0 {
            entries.push((b, g.map(|gc| gc * v)));
        }
    }
    entries.sort_by_key(|(b, _)| *b);
    let mut weights: Vec<(u32, ClassProbs)> = Vec::with_capacity(entries.len());
    for (b, g) in entries {
        match weights.last_mut() {
            Some((last, acc)) if *last == b => {
                for c in 0..NUM_CLASSES {
                    acc[c] += g[c];
                }
            }
            _ => weights.push((b, g)),
        }
    }
    (loss * scale, ToyGradient { weights, bias })
}

fn apply_step(params: &mut ToyParams, grad: &ToyGradient, lr: f64) {
    for (b, g) in &grad.weights {
        let row = &mut params.weights[*b as usize * NUM_CLASSES..][..NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            row[c] -= lr * g[c];
        }
    }
    for c in 0..NUM_CLASSES {
        params.bias[c] -= lr * grad.bias[c];
    }
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    pub params: ToyParams,
}

/// Outcome of [`train`]: the model and the full-training-set loss measured
/// after each epoch.
#[derive(Debug, Clone)]
pub struct ToyTraining {
    pub model: ToyModel,
    pub epoch_losses: Vec<f64>,
}

pub fn train(examples: &[(Features, Label)], hp: &HyperParams, buckets_log2: u32) -> Result<ToyTraining> {
    let mut params = ToyParams::zeros(buckets_log2);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);

    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let batch = chunk.iter().map(|&i| (&examples[i].0, examples[i].1));
            let (_, grad) = forward_backward_unchecked(&params, batch);
            apply_step(&mut params, &grad, hp.learning_rate);
        }
        let loss = mean_loss(&params, examples);
        if !loss.is_finite() {
            return Err(Error::Invalid(format!(
                "training diverged (loss {loss}); lower the learning rate"
            )));
        }
        epoch_losses.push(loss);
    }
    Ok(ToyTraining {
        model: ToyModel { params },
        epoch_losses,
    })
}

impl ToyModel {
    pub fn load(path: &Path) -> Result<ToyModel> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != WEIGHTS_MAGIC {
            return Err(bad("not a toy weights file"));
        }
        let buckets_log2 = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if buckets_log2 > 24 {
            return Err(bad("bucket count out of range"));
        }
        let mut params = ToyParams::zeros(buckets_log2);
        let body = &bytes[12..];
        if body.len() != params.len() * 8 {
            return Err(bad("weights file has the wrong length"));
        }
        for (i, chunk) in body.chunks_exact(8).enumerate() {
            params.set(i, f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        params.check_finite()?;
        Ok(ToyModel { params })
    }
}

impl Predictor for ToyModel {
    fn predict_batch(&self, batch: &PaddedBatch<'_>) -> Vec<ClassProbs> {
        batch
            .rows()
            .map(|tokens| self.params.probabilities(&featurize(tokens, self.params.buckets_log2)))
            .collect()
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.params.len() * 8);
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&self.params.buckets_log2.to_le_bytes());
        for i in 0..self.params.len() {
            buf.extend_from_slice(&self.params.get(i).to_le_bytes());
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }
}
