//! Minibatch training with Adam, plus the per-epoch report.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, Activations, Scratch};
use super::{LmModel, ModelError, Scalar, Weights};
use crate::codec::{make_training_sequences, CodecSettings, PaddingLayout, PaddingStrategy, TrainingSequence};
use crate::table::DataTable;
use crate::tokenizer::{TokenRegistry, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of all optimizer steps spent on linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 10,
            batch_size: 32,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_frac: 0.05,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Token-weighted mean training loss over the epoch.
    pub mean_loss: f64,
    pub seconds: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Evaluation loss over the epoch-0 sequences before the first update.
    pub initial_loss: f64,
    /// The same evaluation after the last update.
    pub final_loss: f64,
    /// Checkpoint the run started from, if any.
    pub warm_start: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,seconds,tokens\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.mean_loss, e.seconds, e.tokens);
        }
        out
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

/// Supplies the training sequences of each epoch.
pub trait SequenceSource {
    fn sequences(&mut self, epoch: usize) -> Result<Vec<TrainingSequence>, ModelError>;

    /// Whether short sequences are padded on the left when batched.
    fn left_padded(&self) -> bool {
        false
    }
}

/// The same sequences every epoch.
#[derive(Debug, Clone)]
pub struct FixedSequences {
    pub sequences: Vec<TrainingSequence>,
    pub left_padded: bool,
}

impl FixedSequences {
    pub fn new(sequences: Vec<TrainingSequence>) -> Self {
        FixedSequences { sequences, left_padded: false }
    }
}

impl SequenceSource for FixedSequences {
    fn sequences(&mut self, _epoch: usize) -> Result<Vec<TrainingSequence>, ModelError> {
        Ok(self.sequences.clone())
    }

    fn left_padded(&self) -> bool {
        self.left_padded
    }
}

/// Encodes a table each epoch; a fresh column order per row when permuting.
#[derive(Debug, Clone)]
pub struct TableSequences<'a> {
    pub table: &'a DataTable,
    pub registry: &'a TokenRegistry,
    pub settings: CodecSettings,
    pub layout: Option<&'a PaddingLayout>,
    pub seed: u64,
    cache: Option<Vec<TrainingSequence>>,
}

impl<'a> TableSequences<'a> {
    pub fn new(
        table: &'a DataTable,
        registry: &'a TokenRegistry,
        settings: CodecSettings,
        layout: Option<&'a PaddingLayout>,
        seed: u64,
    ) -> Self {
        TableSequences { table, registry, settings, layout, seed, cache: None }
    }
}

impl SequenceSource for TableSequences<'_> {
    fn sequences(&mut self, epoch: usize) -> Result<Vec<TrainingSequence>, ModelError> {
        if !self.settings.permute {
            if let Some(c) = &self.cache {
                return Ok(c.clone());
            }
        }
        let seqs =
            make_training_sequences(self.table, self.registry, self.settings, self.layout, self.seed, epoch as u64)
                .map_err(|e| ModelError::Data(e.to_string()))?;
        if !self.settings.permute {
            self.cache = Some(seqs.clone());
        }
        Ok(seqs)
    }

    fn left_padded(&self) -> bool {
        self.settings.strategy == PaddingStrategy::Left
    }
}

/// A collated batch: `b` rows of `t` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub b: usize,
    pub t: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

/// Pads sequences to the longest one and shifts targets by one position.
pub fn collate(seqs: &[&TrainingSequence], left: bool) -> Result<Batch, ModelError> {
    let len = seqs.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    if len < 2 {
        return Err(ModelError::BadBatch("sequences need at least two tokens".into()));
    }
    let t = len - 1;
    let mut batch = Batch {
        b: seqs.len(),
        t,
        inputs: Vec::with_capacity(seqs.len() * t),
        targets: Vec::with_capacity(seqs.len() * t),
        mask: Vec::with_capacity(seqs.len() * t),
    };
    for s in seqs {
        if s.mask.len() + 1 != s.ids.len() {
            return Err(ModelError::BadBatch("mask length must be one less than the sequence".into()));
        }
        let pad = len - s.ids.len();
        let (lead, trail) = if left { (pad, 0) } else { (0, pad) };
        batch.inputs.extend(std::iter::repeat_n(PAD, lead));
        batch.targets.extend(std::iter::repeat_n(PAD, lead));
        batch.mask.extend(std::iter::repeat_n(false, lead));
        batch.inputs.extend_from_slice(&s.ids[..s.ids.len() - 1]);
        batch.targets.extend_from_slice(&s.ids[1..]);
        batch.mask.extend_from_slice(&s.mask);
        batch.inputs.extend(std::iter::repeat_n(PAD, trail));
        batch.targets.extend(std::iter::repeat_n(PAD, trail));
        batch.mask.extend(std::iter::repeat_n(false, trail));
    }
    Ok(batch)
}

/// Mean loss and gradient for one batch. `grads` is accumulated into.
pub fn loss_and_grad<T: Scalar>(
    model: &LmModel<T>,
    batch: &Batch,
    grads: &mut Weights<T>,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(T, usize), ModelError> {
    let mut acts = Activations::new(&model.config, batch.b, batch.t);
    let mut scratch = Scratch::default();
    kernels::forward(model, &batch.inputs, &mut acts, dropout)?;
    let (loss, count) = kernels::cross_entropy(&acts.logits, model.config.vocab_size, &batch.targets, &batch.mask)?;
    kernels::backward(model, grads, &mut acts, &mut scratch, &batch.inputs, &batch.targets, &batch.mask)?;
    Ok((loss, count))
}

/// Mean loss of a batch without dropout or gradients.
pub fn batch_loss<T: Scalar>(model: &LmModel<T>, batch: &Batch) -> Result<(T, usize), ModelError> {
    let mut acts = Activations::new(&model.config, batch.b, batch.t);
    kernels::forward(model, &batch.inputs, &mut acts, None)?;
    kernels::cross_entropy(&acts.logits, model.config.vocab_size, &batch.targets, &batch.mask)
}

/// Token-weighted mean loss over sequences, in input order.
pub fn evaluate(
    model: &LmModel<f32>,
    seqs: &[TrainingSequence],
    batch_size: usize,
    left: bool,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in seqs.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainingSequence> = chunk.iter().collect();
        let batch = collate(&refs, left)?;
        match batch_loss(model, &batch) {
            Ok((loss, n)) => {
                total += loss as f64 * n as f64;
                count += n;
            }
            Err(ModelError::AllMasked) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(ModelError::AllMasked);
    }
    Ok(total / count as f64)
}

/// Per-tensor relative error `|g - g_fd| / max(|g|, |g_fd|)` between the
/// analytic gradient and central finite differences with step `h`.
pub fn gradient_check(model: &LmModel<f64>, batch: &Batch, h: f64) -> Result<Vec<(String, f64)>, ModelError> {
    let mut grads = Weights::zeros(&model.config);
    loss_and_grad(model, batch, &mut grads, None)?;
    let mut probe = model.clone();
    let names: Vec<String> = model.weights.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let analytic = grads.tensors()[ti].1.clone();
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nf = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.weights.tensors_mut()[ti][i];
            probe.weights.tensors_mut()[ti][i] = orig + h;
            let (up, _) = batch_loss(&probe, batch)?;
            probe.weights.tensors_mut()[ti][i] = orig - h;
            let (down, _) = batch_loss(&probe, batch)?;
            probe.weights.tensors_mut()[ti][i] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
        let scale = na.sqrt().max(nf.sqrt());
        out.push((name, if scale > 0.0 { diff.sqrt() / scale } else { 0.0 }));
    }
    Ok(out)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, model: &mut LmModel<f32>, grads: &Weights<f32>, lr: f64, s: &TrainSettings) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - s.beta1.powi(t);
        let bc2 = 1.0 - s.beta2.powi(t);
        let (b1, b2, eps) = (s.beta1 as f32, s.beta2 as f32, s.eps as f32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let mut i = 0;
        for (w, (_, g)) in model.weights.tensors_mut().into_iter().zip(grads.tensors()) {
            for (p, &gi) in w.iter_mut().zip(g.iter()) {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
                i += 1;
            }
        }
    }
}

fn grad_norm(grads: &Weights<f32>) -> f64 {
    grads.tensors().iter().flat_map(|(_, t)| t.iter()).map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
}

fn scale_grads(grads: &mut Weights<f32>, k: f32) {
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= k);
    }
}

/// Linear warmup over the first `warmup_frac` of steps, constant afterwards.
pub fn learning_rate(s: &TrainSettings, step: usize, total_steps: usize) -> f64 {
    let warmup = (s.warmup_frac * total_steps as f64).ceil() as usize;
    if warmup == 0 || step >= warmup {
        s.lr
    } else {
        s.lr * (step + 1) as f64 / warmup as f64
    }
}

/// Trains `model` in place. Deterministic for a fixed seed.
pub fn train(
    model: &mut LmModel<f32>,
    source: &mut dyn SequenceSource,
    settings: &TrainSettings,
) -> Result<TrainReport, ModelError> {
    if settings.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let left = source.left_padded();
    let first = source.sequences(0)?;
    if first.is_empty() {
        return Err(ModelError::NoData);
    }
    let longest = first.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    if longest > model.config.context_length + 1 {
        return Err(ModelError::TooLong { len: longest - 1, context: model.config.context_length });
    }
    let initial_loss = evaluate(model, &first, settings.batch_size, left)?;

    let batches_per_epoch = first.len().div_ceil(settings.batch_size);
    let total_steps = batches_per_epoch * settings.epochs;
    let mut adam = Adam::new(model.num_params());
    let mut grads = Weights::zeros(&model.config);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0xD409_0D7F);
    let mut acts: Option<Activations<f32>> = None;
    let mut scratch = Scratch::default();
    let mut report = TrainReport { epochs: Vec::new(), initial_loss, final_loss: initial_loss, warm_start: None };
    let mut step = 0;
    let mut seqs = first;

    for epoch in 0..settings.epochs {
        if epoch > 0 {
            seqs = source.sequences(epoch)?;
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            settings.seed.wrapping_add(epoch as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
        ));
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        let mut tokens = 0usize;
        for (bi, idx) in order.chunks(settings.batch_size).enumerate() {
            let refs: Vec<&TrainingSequence> = idx.iter().map(|&i| &seqs[i]).collect();
            let batch = collate(&refs, left)?;
            tokens += batch.b * batch.t;
            let lr = learning_rate(settings, step, total_steps);
            step += 1;
            let a = match &mut acts {
                Some(a) if a.fits(batch.b, batch.t) => a,
                slot => slot.insert(Activations::new(&model.config, batch.b, batch.t)),
            };
            let rng = (model.config.dropout > 0.0).then_some(&mut dropout_rng);
            kernels::forward(model, &batch.inputs, a, rng)?;
            let (loss, n) =
                match kernels::cross_entropy(&a.logits, model.config.vocab_size, &batch.targets, &batch.mask) {
                    Ok(r) => r,
                    Err(ModelError::AllMasked) => continue,
                    Err(e) => return Err(e),
                };
            if !loss.is_finite() {
                return Err(ModelError::NonFinite { loss: loss as f64, epoch, batch: bi, lr });
            }
            grads.fill_zero();
            kernels::backward(model, &mut grads, a, &mut scratch, &batch.inputs, &batch.targets, &batch.mask)?;
            if let Some(clip) = settings.grad_clip {
                let norm = grad_norm(&grads);
                if !norm.is_finite() {
                    return Err(ModelError::NonFinite { loss: norm, epoch, batch: bi, lr });
                }
                if norm > clip {
                    scale_grads(&mut grads, (clip / norm) as f32);
                }
            }
            adam.update(model, &grads, lr, settings);
            loss_sum += loss as f64 * n as f64;
            counted += n;
        }
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: if counted > 0 { loss_sum / counted as f64 } else { f64::NAN },
            seconds: start.elapsed().as_secs_f64(),
            tokens,
        });
    }
    report.final_loss =
        if settings.epochs == 0 { initial_loss } else { evaluate(model, &seqs, settings.batch_size, left)? };
    Ok(report)
}
