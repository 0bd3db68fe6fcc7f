//! A small decoder-only transformer written against flat `Vec` tensors.
//!
//! Pre-norm GPT-2 style blocks: learned token and position embeddings,
//! causal multi-head attention, a GELU MLP, final layer norm and an output
//! projection tied to the token embedding. Forward and backward passes are
//! hand-written in [`kernels`]; the model is generic over `f32` (training)
//! and `f64` (gradient checks).

pub mod infer;
pub mod kernels;
pub mod train;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use kernels::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds the context length {context}")]
    TooLong { len: usize, context: usize },
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    BadToken { id: u32, vocab: usize },
    #[error("every target position is masked out")]
    AllMasked,
    #[error("batch is malformed: {0}")]
    BadBatch(String),
    #[error("no training data")]
    NoData,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFinite { loss: f64, epoch: usize, batch: usize, lr: f64 },
    #[error("training data: {0}")]
    Data(String),
}

/// Where the weights of a model came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitSpec {
    Random { seed: u64 },
    FromCheckpoint(String),
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Random { seed } => write!(f, "random(seed={seed})"),
            InitSpec::FromCheckpoint(r) => write!(f, "checkpoint({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f32,
    pub init: InitSpec,
}

impl LmConfig {
    /// 4 layers, 4 heads, width 128, MLP 512, context 256.
    pub fn desk(vocab_size: usize) -> Self {
        LmConfig {
            vocab_size,
            context_length: 256,
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            dropout: 0.0,
            init: InitSpec::Random { seed: 0 },
        }
    }

    /// 2 layers, 2 heads, width 64: the smallest preset, used by the smoke
    /// and end-to-end suites.
    pub fn tiny(vocab_size: usize) -> Self {
        LmConfig { context_length: 128, n_layers: 2, n_heads: 2, d_model: 64, d_ff: 256, ..LmConfig::desk(vocab_size) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init = InitSpec::Random { seed };
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("context_length", self.context_length),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_size(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn num_params(&self) -> usize {
        let (v, t, c, f) = (self.vocab_size, self.context_length, self.d_model, self.d_ff);
        let per_block = 2 * c + (3 * c * c + 3 * c) + (c * c + c) + 2 * c + (f * c + f) + (c * f + c);
        v * c + t * c + self.n_layers * per_block + 2 * c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_w: Vec<T>,
    pub ln1_b: Vec<T>,
    pub qkv_w: Vec<T>,
    pub qkv_b: Vec<T>,
    pub attn_proj_w: Vec<T>,
    pub attn_proj_b: Vec<T>,
    pub ln2_w: Vec<T>,
    pub ln2_b: Vec<T>,
    pub fc_w: Vec<T>,
    pub fc_b: Vec<T>,
    pub fc_proj_w: Vec<T>,
    pub fc_proj_b: Vec<T>,
}

impl<T: Scalar> Block<T> {
    fn zeros(c: usize, f: usize) -> Self {
        let z = |n: usize| vec![T::zero(); n];
        Block {
            ln1_w: z(c),
            ln1_b: z(c),
            qkv_w: z(3 * c * c),
            qkv_b: z(3 * c),
            attn_proj_w: z(c * c),
            attn_proj_b: z(c),
            ln2_w: z(c),
            ln2_b: z(c),
            fc_w: z(f * c),
            fc_b: z(f),
            fc_proj_w: z(c * f),
            fc_proj_b: z(c),
        }
    }

    fn tensors(&self) -> [(&'static str, &Vec<T>); 12] {
        [
            ("ln1_w", &self.ln1_w),
            ("ln1_b", &self.ln1_b),
            ("qkv_w", &self.qkv_w),
            ("qkv_b", &self.qkv_b),
            ("attn_proj_w", &self.attn_proj_w),
            ("attn_proj_b", &self.attn_proj_b),
            ("ln2_w", &self.ln2_w),
            ("ln2_b", &self.ln2_b),
            ("fc_w", &self.fc_w),
            ("fc_b", &self.fc_b),
            ("fc_proj_w", &self.fc_proj_w),
            ("fc_proj_b", &self.fc_proj_b),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<T>; 12] {
        [
            &mut self.ln1_w,
            &mut self.ln1_b,
            &mut self.qkv_w,
            &mut self.qkv_b,
            &mut self.attn_proj_w,
            &mut self.attn_proj_b,
            &mut self.ln2_w,
            &mut self.ln2_b,
            &mut self.fc_w,
            &mut self.fc_b,
            &mut self.fc_proj_w,
            &mut self.fc_proj_b,
        ]
    }
}

/// All parameters. The output projection reuses `wte`, so tying is structural.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub wte: Vec<T>,
    pub wpe: Vec<T>,
    pub blocks: Vec<Block<T>>,
    pub lnf_w: Vec<T>,
    pub lnf_b: Vec<T>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(cfg: &LmConfig) -> Self {
        let c = cfg.d_model;
        Weights {
            wte: vec![T::zero(); cfg.vocab_size * c],
            wpe: vec![T::zero(); cfg.context_length * c],
            blocks: (0..cfg.n_layers).map(|_| Block::zeros(c, cfg.d_ff)).collect(),
            lnf_w: vec![T::zero(); c],
            lnf_b: vec![T::zero(); c],
        }
    }

    /// Named tensors in the fixed serialization order.
    pub fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = vec![("wte".to_owned(), &self.wte), ("wpe".to_owned(), &self.wpe)];
        for (l, b) in self.blocks.iter().enumerate() {
            out.extend(b.tensors().into_iter().map(|(n, t)| (format!("h{l}.{n}"), t)));
        }
        out.push(("lnf_w".to_owned(), &self.lnf_w));
        out.push(("lnf_b".to_owned(), &self.lnf_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.wte, &mut self.wpe];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.lnf_w);
        out.push(&mut self.lnf_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    /// Inverse of [`Weights::flatten`]; `flat` must have exactly the closed-form length.
    pub fn from_flat(cfg: &LmConfig, flat: &[T]) -> Result<Self, ModelError> {
        let mut w = Weights::zeros(cfg);
        if flat.len() != w.num_params() {
            return Err(ModelError::Config(format!(
                "{} parameters supplied, configuration needs {}",
                flat.len(),
                w.num_params()
            )));
        }
        let mut pos = 0;
        for t in w.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(w)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmModel<T = f32> {
    pub config: LmConfig,
    pub weights: Weights<T>,
}

const INIT_STD: f64 = 0.02;

fn fill_normal<T: Scalar>(t: &mut [T], std: f64, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, std).expect("std is positive");
    for x in t {
        *x = T::from_f64(normal.sample(rng)).expect("finite");
    }
}

impl<T: Scalar> LmModel<T> {
    /// Normal(0, 0.02) weights, residual projections scaled by
    /// `1/sqrt(2 * n_layers)`, unit layer-norm gains, zero biases.
    pub fn init(config: LmConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let seed = match config.init {
            InitSpec::Random { seed } => seed,
            InitSpec::FromCheckpoint(_) => {
                return Err(ModelError::Config("use the checkpoint loader for warm starts".into()))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Weights::zeros(&config);
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        fill_normal(&mut w.wte, INIT_STD, &mut rng);
        fill_normal(&mut w.wpe, INIT_STD, &mut rng);
        for b in &mut w.blocks {
            b.ln1_w.iter_mut().for_each(|x| *x = T::one());
            b.ln2_w.iter_mut().for_each(|x| *x = T::one());
            fill_normal(&mut b.qkv_w, INIT_STD, &mut rng);
            fill_normal(&mut b.attn_proj_w, resid_std, &mut rng);
            fill_normal(&mut b.fc_w, INIT_STD, &mut rng);
            fill_normal(&mut b.fc_proj_w, resid_std, &mut rng);
        }
        w.lnf_w.iter_mut().for_each(|x| *x = T::one());
        Ok(LmModel { config, weights: w })
    }

    pub fn num_params(&self) -> usize {
        self.weights.num_params()
    }

    /// Copies this model into a configuration with a larger vocabulary
    /// and/or context. New embedding rows are drawn from Normal(0, 0.02).
    pub fn resized(&self, vocab_size: usize, context_length: usize, seed: u64) -> Result<Self, ModelError> {
        if vocab_size < self.config.vocab_size || context_length < self.config.context_length {
            return Err(ModelError::Config("embeddings can only grow".into()));
        }
        let mut config = self.config.clone();
        config.vocab_size = vocab_size;
        config.context_length = context_length;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = self.weights.clone();
        let c = config.d_model;
        let mut grow = |t: &mut Vec<T>, rows: usize| {
            let old = t.len();
            t.resize(rows * c, T::zero());
            fill_normal(&mut t[old..], INIT_STD, &mut rng);
        };
        grow(&mut w.wte, vocab_size);
        grow(&mut w.wpe, context_length);
        Ok(LmModel { config, weights: w })
    }

    pub fn cast<U: Scalar>(&self) -> LmModel<U> {
        let conv = |t: &Vec<T>| t.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect::<Vec<U>>();
        let b = |b: &Block<T>| Block {
            ln1_w: conv(&b.ln1_w),
            ln1_b: conv(&b.ln1_b),
            qkv_w: conv(&b.qkv_w),
            qkv_b: conv(&b.qkv_b),
            attn_proj_w: conv(&b.attn_proj_w),
            attn_proj_b: conv(&b.attn_proj_b),
            ln2_w: conv(&b.ln2_w),
            ln2_b: conv(&b.ln2_b),
            fc_w: conv(&b.fc_w),
            fc_b: conv(&b.fc_b),
            fc_proj_w: conv(&b.fc_proj_w),
            fc_proj_b: conv(&b.fc_proj_b),
        };
        LmModel {
            config: self.config.clone(),
            weights: Weights {
                wte: conv(&self.weights.wte),
                wpe: conv(&self.weights.wpe),
                blocks: self.weights.blocks.iter().map(b).collect(),
                lnf_w: conv(&self.weights.lnf_w),
                lnf_b: conv(&self.weights.lnf_b),
            },
        }
    }

    /// Logits for a batch of equal-length sequences, shape `b × t × vocab`.
    pub fn forward(&self, batch: &[Vec<u32>]) -> Result<Vec<T>, ModelError> {
        let t = batch.first().map_or(0, Vec::len);
        if t == 0 || batch.iter().any(|s| s.len() != t) {
            return Err(ModelError::BadBatch("sequences must be non-empty and of equal length".into()));
        }
        let inputs: Vec<u32> = batch.iter().flatten().copied().collect();
        let mut acts = kernels::Activations::new(&self.config, batch.len(), t);
        kernels::forward(self, &inputs, &mut acts, None)?;
        Ok(acts.logits)
    }
}
