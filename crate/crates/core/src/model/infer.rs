//! Incremental decoding with a per-layer key/value cache.

use super::kernels::{gelu_forward, layernorm_forward, matmul_forward};
use super::{LmModel, ModelError, Scalar};

/// Feeds one token at a time and returns next-token logits. Matches the
/// full-sequence forward pass position by position.
#[derive(Debug, Clone)]
pub struct Generator<'a, T: Scalar = f32> {
    model: &'a LmModel<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pos: usize,
    x: Vec<T>,
    ln: Vec<T>,
    qkv: Vec<T>,
    y: Vec<T>,
    proj: Vec<T>,
    h: Vec<T>,
    hg: Vec<T>,
    scores: Vec<T>,
    logits: Vec<T>,
}

impl<'a, T: Scalar> Generator<'a, T> {
    pub fn new(model: &'a LmModel<T>) -> Self {
        let cfg = &model.config;
        let (c, ctx) = (cfg.d_model, cfg.context_length);
        let z = |n: usize| vec![T::zero(); n];
        Generator {
            model,
            keys: (0..cfg.n_layers).map(|_| z(ctx * c)).collect(),
            values: (0..cfg.n_layers).map(|_| z(ctx * c)).collect(),
            pos: 0,
            x: z(c),
            ln: z(c),
            qkv: z(3 * c),
            y: z(c),
            proj: z(c),
            h: z(cfg.d_ff),
            hg: z(cfg.d_ff),
            scores: z(ctx),
            logits: z(cfg.vocab_size),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn context_length(&self) -> usize {
        self.model.config.context_length
    }

    pub fn reset(&mut self) {
        self.pos = 0;
    }

    /// Appends `token` at the next position and returns the logits for the
    /// position after it.
    pub fn step(&mut self, token: u32) -> Result<&[T], ModelError> {
        let cfg = &self.model.config;
        let w = &self.model.weights;
        let (c, f, nh) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let hs = c / nh;
        if self.pos >= cfg.context_length {
            return Err(ModelError::TooLong { len: self.pos + 1, context: cfg.context_length });
        }
        if token as usize >= cfg.vocab_size {
            return Err(ModelError::BadToken { id: token, vocab: cfg.vocab_size });
        }
        let p = self.pos;
        let tok = token as usize;
        for j in 0..c {
            self.x[j] = w.wte[tok * c + j] + w.wpe[p * c + j];
        }
        let scale = T::one() / T::from_usize(hs).unwrap().sqrt();
        let (mut mean, mut rstd) = ([T::zero()], [T::zero()]);
        for (l, bw) in w.blocks.iter().enumerate() {
            layernorm_forward(&mut self.ln, &mut mean, &mut rstd, &self.x, &bw.ln1_w, &bw.ln1_b, c);
            matmul_forward(&mut self.qkv, &self.ln, &bw.qkv_w, Some(&bw.qkv_b), 1, c, 3 * c);
            self.keys[l][p * c..(p + 1) * c].copy_from_slice(&self.qkv[c..2 * c]);
            self.values[l][p * c..(p + 1) * c].copy_from_slice(&self.qkv[2 * c..]);
            for head in 0..nh {
                let q = &self.qkv[head * hs..(head + 1) * hs];
                let mut maxval = T::neg_infinity();
                for t2 in 0..=p {
                    let k = &self.keys[l][t2 * c + head * hs..][..hs];
                    let s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    self.scores[t2] = s;
                    maxval = maxval.max(s);
                }
                let mut sum = T::zero();
                for s in &mut self.scores[..=p] {
                    *s = (*s - maxval).exp();
                    sum += *s;
                }
                let y = &mut self.y[head * hs..(head + 1) * hs];
                y.iter_mut().for_each(|v| *v = T::zero());
                for t2 in 0..=p {
                    let a = self.scores[t2] / sum;
                    let v = &self.values[l][t2 * c + head * hs..][..hs];
                    for j in 0..hs {
                        y[j] += a * v[j];
                    }
                }
            }
            matmul_forward(&mut self.proj, &self.y, &bw.attn_proj_w, Some(&bw.attn_proj_b), 1, c, c);
            for j in 0..c {
                self.x[j] += self.proj[j];
            }
            layernorm_forward(&mut self.ln, &mut mean, &mut rstd, &self.x, &bw.ln2_w, &bw.ln2_b, c);
            matmul_forward(&mut self.h, &self.ln, &bw.fc_w, Some(&bw.fc_b), 1, c, f);
            gelu_forward(&mut self.hg, &self.h);
            matmul_forward(&mut self.proj, &self.hg, &bw.fc_proj_w, Some(&bw.fc_proj_b), 1, f, c);
            for j in 0..c {
                self.x[j] += self.proj[j];
            }
        }
        layernorm_forward(&mut self.ln, &mut mean, &mut rstd, &self.x, &w.lnf_w, &w.lnf_b, c);
        matmul_forward(&mut self.logits, &self.ln, &w.wte, None, 1, c, cfg.vocab_size);
        self.pos += 1;
        Ok(&self.logits)
    }

    /// Feeds a prompt and returns the logits after its last token.
    pub fn feed(&mut self, tokens: &[u32]) -> Result<&[T], ModelError> {
        let Some((&last, head)) = tokens.split_last() else {
            return Err(ModelError::BadBatch("empty prompt".into()));
        };
        for &t in head {
            self.step(t)?;
        }
        self.step(last)
    }
}
