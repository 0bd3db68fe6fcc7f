//! Forward and backward kernels over flat row-major buffers.
//!
//! Shapes use `n = batch * time` rows of width `c`. Matrix products go through
//! `matrixmultiply`; everything else is plain loops.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{LmConfig, LmModel, ModelError, Weights};

pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + DivAssign + Sum
{
    /// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` m×k and `op(b)` k×n,
    /// all row-major. With `beta == 0`, `c` is not read.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Logical rows×cols; stored cols×rows when transposed.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the assertion above bounds every index the strided
                // views can touch: a[(m-1)*rsa + (k-1)*csa] < m*k and likewise
                // for b and c.
                unsafe {
                    $f(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub struct LayerActs<T> {
    pub ln1: Vec<T>,
    pub ln1_mean: Vec<T>,
    pub ln1_rstd: Vec<T>,
    pub qkv: Vec<T>,
    pub att: Vec<T>,
    pub atty: Vec<T>,
    pub attproj: Vec<T>,
    pub drop1: Vec<T>,
    pub res2: Vec<T>,
    pub ln2: Vec<T>,
    pub ln2_mean: Vec<T>,
    pub ln2_rstd: Vec<T>,
    pub fch: Vec<T>,
    pub fch_gelu: Vec<T>,
    pub fcproj: Vec<T>,
    pub drop2: Vec<T>,
    pub res3: Vec<T>,
}

/// Saved forward state for one batch shape.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    pub b: usize,
    pub t: usize,
    pub encoded: Vec<T>,
    pub layers: Vec<LayerActs<T>>,
    pub lnf: Vec<T>,
    pub lnf_mean: Vec<T>,
    pub lnf_rstd: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> Activations<T> {
    pub fn new(cfg: &LmConfig, b: usize, t: usize) -> Self {
        let n = b * t;
        let (c, f, v, h) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
        let z = |len: usize| vec![T::zero(); len];
        let layer = || LayerActs {
            ln1: z(n * c),
            ln1_mean: z(n),
            ln1_rstd: z(n),
            qkv: z(n * 3 * c),
            att: z(b * h * t * t),
            atty: z(n * c),
            attproj: z(n * c),
            drop1: z(n * c),
            res2: z(n * c),
            ln2: z(n * c),
            ln2_mean: z(n),
            ln2_rstd: z(n),
            fch: z(n * f),
            fch_gelu: z(n * f),
            fcproj: z(n * c),
            drop2: z(n * c),
            res3: z(n * c),
        };
        Activations {
            b,
            t,
            encoded: z(n * c),
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
            lnf: z(n * c),
            lnf_mean: z(n),
            lnf_rstd: z(n),
            logits: z(n * v),
            probs: z(n * v),
        }
    }

    pub fn fits(&self, b: usize, t: usize) -> bool {
        self.b == b && self.t == t
    }
}

fn encoder_forward<T: Scalar>(out: &mut [T], inputs: &[u32], wte: &[T], wpe: &[T], t: usize, c: usize) {
    for (i, &tok) in inputs.iter().enumerate() {
        let pos = i % t;
        let o = &mut out[i * c..(i + 1) * c];
        let te = &wte[tok as usize * c..(tok as usize + 1) * c];
        let pe = &wpe[pos * c..(pos + 1) * c];
        for j in 0..c {
            o[j] = te[j] + pe[j];
        }
    }
}

fn encoder_backward<T: Scalar>(dwte: &mut [T], dwpe: &mut [T], dout: &[T], inputs: &[u32], t: usize, c: usize) {
    for (i, &tok) in inputs.iter().enumerate() {
        let pos = i % t;
        let d = &dout[i * c..(i + 1) * c];
        let te = &mut dwte[tok as usize * c..(tok as usize + 1) * c];
        for j in 0..c {
            te[j] += d[j];
        }
        let pe = &mut dwpe[pos * c..(pos + 1) * c];
        for j in 0..c {
            pe[j] += d[j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layernorm_forward<T: Scalar>(
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    inp: &[T],
    w: &[T],
    b: &[T],
    c: usize,
) {
    let cf = T::from_usize(c).unwrap();
    let eps = T::lit(LN_EPS);
    for (i, x) in inp.chunks_exact(c).enumerate() {
        let m = x.iter().copied().sum::<T>() / cf;
        let v = x.iter().map(|&xi| (xi - m) * (xi - m)).sum::<T>() / cf;
        let s = T::one() / (v + eps).sqrt();
        let o = &mut out[i * c..(i + 1) * c];
        for j in 0..c {
            o[j] = (x[j] - m) * s * w[j] + b[j];
        }
        mean[i] = m;
        rstd[i] = s;
    }
}

#[allow(clippy::too_many_arguments)]
fn layernorm_backward<T: Scalar>(
    dinp: &mut [T],
    dw: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    w: &[T],
    mean: &[T],
    rstd: &[T],
    c: usize,
) {
    let cf = T::from_usize(c).unwrap();
    for i in 0..mean.len() {
        let d = &dout[i * c..(i + 1) * c];
        let x = &inp[i * c..(i + 1) * c];
        let (m, s) = (mean[i], rstd[i]);
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for j in 0..c {
            let norm = (x[j] - m) * s;
            let dnorm = w[j] * d[j];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= cf;
        dnorm_norm_mean /= cf;
        let di = &mut dinp[i * c..(i + 1) * c];
        for j in 0..c {
            let norm = (x[j] - m) * s;
            let dnorm = w[j] * d[j];
            db[j] += d[j];
            dw[j] += norm * d[j];
            di[j] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
        }
    }
}

/// `out[n, oc] = inp[n, c] · w[oc, c]^T + bias`.
pub(super) fn matmul_forward<T: Scalar>(
    out: &mut [T],
    inp: &[T],
    w: &[T],
    bias: Option<&[T]>,
    n: usize,
    c: usize,
    oc: usize,
) {
    T::gemm(n, c, oc, T::one(), inp, false, w, true, T::zero(), out);
    if let Some(bias) = bias {
        for row in out.chunks_exact_mut(oc) {
            for (o, &b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
    }
}

/// Accumulates `dw`, `dbias`; writes (or accumulates, with `acc_dinp`) `dinp`.
#[allow(clippy::too_many_arguments)]
fn matmul_backward<T: Scalar>(
    dinp: &mut [T],
    dw: &mut [T],
    dbias: Option<&mut [T]>,
    dout: &[T],
    inp: &[T],
    w: &[T],
    n: usize,
    c: usize,
    oc: usize,
    acc_dinp: bool,
) {
    let beta = if acc_dinp { T::one() } else { T::zero() };
    T::gemm(n, oc, c, T::one(), dout, false, w, false, beta, dinp);
    T::gemm(oc, n, c, T::one(), dout, true, inp, false, T::one(), dw);
    if let Some(db) = dbias {
        for row in dout.chunks_exact(oc) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
    }
}

fn attention_forward<T: Scalar>(out: &mut [T], att: &mut [T], qkv: &[T], b: usize, t: usize, c: usize, nh: usize) {
    let hs = c / nh;
    let c3 = 3 * c;
    let scale = T::one() / T::from_usize(hs).unwrap().sqrt();
    for bi in 0..b {
        for ti in 0..t {
            for h in 0..nh {
                let q = &qkv[(bi * t + ti) * c3 + h * hs..][..hs];
                let row = &mut att[((bi * nh + h) * t + ti) * t..][..t];
                let mut maxval = T::neg_infinity();
                for t2 in 0..=ti {
                    let k = &qkv[(bi * t + t2) * c3 + c + h * hs..][..hs];
                    let s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    row[t2] = s;
                    if s > maxval {
                        maxval = s;
                    }
                }
                let mut sum = T::zero();
                for v in row.iter_mut().take(ti + 1) {
                    *v = (*v - maxval).exp();
                    sum += *v;
                }
                let inv = T::one() / sum;
                for v in row.iter_mut().take(ti + 1) {
                    *v *= inv;
                }
                for v in row.iter_mut().skip(ti + 1) {
                    *v = T::zero();
                }
                let o = &mut out[(bi * t + ti) * c + h * hs..][..hs];
                o.iter_mut().for_each(|x| *x = T::zero());
                for t2 in 0..=ti {
                    let v = &qkv[(bi * t + t2) * c3 + 2 * c + h * hs..][..hs];
                    let a = row[t2];
                    for j in 0..hs {
                        o[j] += a * v[j];
                    }
                }
            }
        }
    }
}

/// Writes `dqkv` (overwritten) from `dout` and the saved attention weights.
#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    dqkv: &mut [T],
    dout: &[T],
    qkv: &[T],
    att: &[T],
    b: usize,
    t: usize,
    c: usize,
    nh: usize,
) {
    let hs = c / nh;
    let c3 = 3 * c;
    let scale = T::one() / T::from_usize(hs).unwrap().sqrt();
    dqkv.iter_mut().for_each(|x| *x = T::zero());
    let mut datt = vec![T::zero(); t];
    for bi in 0..b {
        for ti in 0..t {
            for h in 0..nh {
                let row = &att[((bi * nh + h) * t + ti) * t..][..t];
                let d = &dout[(bi * t + ti) * c + h * hs..][..hs];
                for t2 in 0..=ti {
                    let vo = (bi * t + t2) * c3 + 2 * c + h * hs;
                    let v = &qkv[vo..vo + hs];
                    datt[t2] = v.iter().zip(d).map(|(&a, &b)| a * b).sum();
                    let a = row[t2];
                    let dv = &mut dqkv[vo..vo + hs];
                    for j in 0..hs {
                        dv[j] += a * d[j];
                    }
                }
                let dot: T = (0..=ti).map(|t2| row[t2] * datt[t2]).sum();
                let qo = (bi * t + ti) * c3 + h * hs;
                for t2 in 0..=ti {
                    let dpre = row[t2] * (datt[t2] - dot) * scale;
                    let ko = (bi * t + t2) * c3 + c + h * hs;
                    for j in 0..hs {
                        let (qj, kj) = (qkv[qo + j], qkv[ko + j]);
                        dqkv[qo + j] += dpre * kj;
                        dqkv[ko + j] += dpre * qj;
                    }
                }
            }
        }
    }
}

fn gelu_constants<T: Scalar>() -> (T, T) {
    (T::lit((2.0 / std::f64::consts::PI).sqrt()), T::lit(0.044715))
}

pub(super) fn gelu_forward<T: Scalar>(out: &mut [T], inp: &[T]) {
    let (s, k) = gelu_constants::<T>();
    let half = T::lit(0.5);
    for (o, &x) in out.iter_mut().zip(inp) {
        *o = half * x * (T::one() + (s * (x + k * x * x * x)).tanh());
    }
}

fn gelu_backward<T: Scalar>(dinp: &mut [T], inp: &[T], dout: &[T]) {
    let (s, k) = gelu_constants::<T>();
    let half = T::lit(0.5);
    let three = T::lit(3.0);
    for ((di, &x), &d) in dinp.iter_mut().zip(inp).zip(dout) {
        let u = s * (x + k * x * x * x);
        let th = u.tanh();
        let sech2 = T::one() - th * th;
        let grad = half * (T::one() + th) + half * x * sech2 * s * (T::one() + three * k * x * x);
        *di = grad * d;
    }
}

fn dropout_mask<T: Scalar>(mask: &mut [T], p: f32, rng: &mut ChaCha8Rng) {
    let keep = T::one() / T::lit(1.0 - p as f64);
    for m in mask {
        *m = if rng.random::<f32>() < p { T::zero() } else { keep };
    }
}

fn check_inputs<T: Scalar>(model: &LmModel<T>, inputs: &[u32], b: usize, t: usize) -> Result<(), ModelError> {
    let cfg = &model.config;
    if inputs.len() != b * t || t == 0 {
        return Err(ModelError::BadBatch(format!("{} inputs for shape {b}×{t}", inputs.len())));
    }
    if t > cfg.context_length {
        return Err(ModelError::TooLong { len: t, context: cfg.context_length });
    }
    if let Some(&id) = inputs.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::BadToken { id, vocab: cfg.vocab_size });
    }
    Ok(())
}

/// Runs the model and leaves logits in `acts.logits`. Dropout is applied only
/// when an rng is supplied and the configured rate is positive.
pub fn forward<T: Scalar>(
    model: &LmModel<T>,
    inputs: &[u32],
    acts: &mut Activations<T>,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(), ModelError> {
    let (b, t) = (acts.b, acts.t);
    check_inputs(model, inputs, b, t)?;
    let cfg = &model.config;
    let w = &model.weights;
    let (n, c, f, v, nh) = (b * t, cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let p = cfg.dropout;

    encoder_forward(&mut acts.encoded, inputs, &w.wte, &w.wpe, t, c);
    for l in 0..cfg.n_layers {
        let (before, rest) = acts.layers.split_at_mut(l);
        let la = &mut rest[0];
        let residual: &[T] = if l == 0 { &acts.encoded } else { &before[l - 1].res3 };
        let bw = &w.blocks[l];

        layernorm_forward(&mut la.ln1, &mut la.ln1_mean, &mut la.ln1_rstd, residual, &bw.ln1_w, &bw.ln1_b, c);
        matmul_forward(&mut la.qkv, &la.ln1, &bw.qkv_w, Some(&bw.qkv_b), n, c, 3 * c);
        attention_forward(&mut la.atty, &mut la.att, &la.qkv, b, t, c, nh);
        matmul_forward(&mut la.attproj, &la.atty, &bw.attn_proj_w, Some(&bw.attn_proj_b), n, c, c);
        match dropout.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                dropout_mask(&mut la.drop1, p, rng);
                la.attproj.iter_mut().zip(&la.drop1).for_each(|(x, &m)| *x *= m);
            }
            _ => la.drop1.iter_mut().for_each(|m| *m = T::one()),
        }
        for i in 0..n * c {
            la.res2[i] = residual[i] + la.attproj[i];
        }
        layernorm_forward(&mut la.ln2, &mut la.ln2_mean, &mut la.ln2_rstd, &la.res2, &bw.ln2_w, &bw.ln2_b, c);
        matmul_forward(&mut la.fch, &la.ln2, &bw.fc_w, Some(&bw.fc_b), n, c, f);
        gelu_forward(&mut la.fch_gelu, &la.fch);
        matmul_forward(&mut la.fcproj, &la.fch_gelu, &bw.fc_proj_w, Some(&bw.fc_proj_b), n, f, c);
        match dropout.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                dropout_mask(&mut la.drop2, p, rng);
                la.fcproj.iter_mut().zip(&la.drop2).for_each(|(x, &m)| *x *= m);
            }
            _ => la.drop2.iter_mut().for_each(|m| *m = T::one()),
        }
        for i in 0..n * c {
            la.res3[i] = la.res2[i] + la.fcproj[i];
        }
    }
    let last: &[T] = acts.layers.last().map_or(&acts.encoded, |l| &l.res3);
    layernorm_forward(&mut acts.lnf, &mut acts.lnf_mean, &mut acts.lnf_rstd, last, &w.lnf_w, &w.lnf_b, c);
    matmul_forward(&mut acts.logits, &acts.lnf, &w.wte, None, n, c, v);
    Ok(())
}

/// Row-wise softmax of `logits` (rows of width `v`) into `probs`.
pub fn softmax_rows<T: Scalar>(probs: &mut [T], logits: &[T], v: usize) {
    for (p, l) in probs.chunks_exact_mut(v).zip(logits.chunks_exact(v)) {
        let m = l.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (pi, &li) in p.iter_mut().zip(l) {
            *pi = (li - m).exp();
            sum += *pi;
        }
        let inv = T::one() / sum;
        p.iter_mut().for_each(|x| *x *= inv);
    }
}

/// Mean cross-entropy over unmasked positions, plus the count of those positions.
pub fn cross_entropy<T: Scalar>(
    logits: &[T],
    vocab: usize,
    targets: &[u32],
    mask: &[bool],
) -> Result<(T, usize), ModelError> {
    if logits.len() != targets.len() * vocab || mask.len() != targets.len() {
        return Err(ModelError::BadBatch("logits, targets and mask disagree in shape".into()));
    }
    let mut total = T::zero();
    let mut count = 0;
    for (i, (&tgt, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if tgt as usize >= vocab {
            return Err(ModelError::BadToken { id: tgt, vocab });
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
        total += lse - row[tgt as usize];
        count += 1;
    }
    if count == 0 {
        return Err(ModelError::AllMasked);
    }
    Ok((total / T::from_usize(count).unwrap(), count))
}

/// Reusable backward buffers.
#[derive(Debug, Clone, Default)]
pub struct Scratch<T> {
    dlogits: Vec<T>,
    dres: Vec<T>,
    dln: Vec<T>,
    dbranch: Vec<T>,
    dqkv: Vec<T>,
    datty: Vec<T>,
    dfch: Vec<T>,
    dfch_gelu: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn ensure(&mut self, n: usize, cfg: &LmConfig) {
        let (c, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let fit = |buf: &mut Vec<T>, len: usize| buf.resize(len, T::zero());
        fit(&mut self.dlogits, n * v);
        fit(&mut self.dres, n * c);
        fit(&mut self.dln, n * c);
        fit(&mut self.dbranch, n * c);
        fit(&mut self.dqkv, n * 3 * c);
        fit(&mut self.datty, n * c);
        fit(&mut self.dfch, n * f);
        fit(&mut self.dfch_gelu, n * f);
    }
}

/// Backpropagates the masked mean cross-entropy and accumulates into `grads`.
/// Expects `forward` to have filled `acts` for the same inputs.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    model: &LmModel<T>,
    grads: &mut Weights<T>,
    acts: &mut Activations<T>,
    scratch: &mut Scratch<T>,
    inputs: &[u32],
    targets: &[u32],
    mask: &[bool],
) -> Result<(), ModelError> {
    let cfg = &model.config;
    let w = &model.weights;
    let (b, t) = (acts.b, acts.t);
    let (n, c, f, v, nh) = (b * t, cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(ModelError::AllMasked);
    }
    scratch.ensure(n, cfg);
    let inv = T::one() / T::from_usize(count).unwrap();

    softmax_rows(&mut acts.probs, &acts.logits, v);
    for i in 0..n {
        let d = &mut scratch.dlogits[i * v..(i + 1) * v];
        if mask[i] {
            let p = &acts.probs[i * v..(i + 1) * v];
            for j in 0..v {
                d[j] = p[j] * inv;
            }
            d[targets[i] as usize] -= inv;
        } else {
            d.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    // Tied output projection: logits = lnf · wte^T.
    matmul_backward(&mut scratch.dln, &mut grads.wte, None, &scratch.dlogits, &acts.lnf, &w.wte, n, c, v, false);
    scratch.dres.iter_mut().for_each(|x| *x = T::zero());
    let last: &[T] = acts.layers.last().map_or(&acts.encoded, |l| &l.res3);
    layernorm_backward(
        &mut scratch.dres,
        &mut grads.lnf_w,
        &mut grads.lnf_b,
        &scratch.dln,
        last,
        &w.lnf_w,
        &acts.lnf_mean,
        &acts.lnf_rstd,
        c,
    );

    for l in (0..cfg.n_layers).rev() {
        let la = &acts.layers[l];
        let residual: &[T] = if l == 0 { &acts.encoded } else { &acts.layers[l - 1].res3 };
        let bw = &w.blocks[l];
        let gb = &mut grads.blocks[l];

        // res3 = res2 + fcproj: the residual gradient passes through unchanged.
        for i in 0..n * c {
            scratch.dbranch[i] = scratch.dres[i] * la.drop2[i];
        }
        matmul_backward(
            &mut scratch.dfch_gelu,
            &mut gb.fc_proj_w,
            Some(&mut gb.fc_proj_b),
            &scratch.dbranch,
            &la.fch_gelu,
            &bw.fc_proj_w,
            n,
            f,
            c,
            false,
        );
        gelu_backward(&mut scratch.dfch, &la.fch, &scratch.dfch_gelu);
        matmul_backward(
            &mut scratch.dln,
            &mut gb.fc_w,
            Some(&mut gb.fc_b),
            &scratch.dfch,
            &la.ln2,
            &bw.fc_w,
            n,
            c,
            f,
            false,
        );
        layernorm_backward(
            &mut scratch.dres,
            &mut gb.ln2_w,
            &mut gb.ln2_b,
            &scratch.dln,
            &la.res2,
            &bw.ln2_w,
            &la.ln2_mean,
            &la.ln2_rstd,
            c,
        );

        // res2 = residual + attproj.
        for i in 0..n * c {
            scratch.dbranch[i] = scratch.dres[i] * la.drop1[i];
        }
        matmul_backward(
            &mut scratch.datty,
            &mut gb.attn_proj_w,
            Some(&mut gb.attn_proj_b),
            &scratch.dbranch,
            &la.atty,
            &bw.attn_proj_w,
            n,
            c,
            c,
            false,
        );
        attention_backward(&mut scratch.dqkv, &scratch.datty, &la.qkv, &la.att, b, t, c, nh);
        matmul_backward(
            &mut scratch.dln,
            &mut gb.qkv_w,
            Some(&mut gb.qkv_b),
            &scratch.dqkv,
            &la.ln1,
            &bw.qkv_w,
            n,
            c,
            3 * c,
            false,
        );
        layernorm_backward(
            &mut scratch.dres,
            &mut gb.ln1_w,
            &mut gb.ln1_b,
            &scratch.dln,
            residual,
            &bw.ln1_w,
            &la.ln1_mean,
            &la.ln1_rstd,
            c,
        );
    }
    encoder_backward(&mut grads.wte, &mut grads.wpe, &scratch.dres, inputs, t, c);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitSpec;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        f64::gemm(2, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        f64::gemm(2, 2, 2, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        f64::gemm(2, 2, 2, 1.0, &a, false, &b, true, 1.0, &mut c);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = vec![0.0f64; 3 * 16];
        let (loss, n) = cross_entropy(&logits, 16, &[1, 2, 3], &[true, true, true]).unwrap();
        assert_eq!(n, 3);
        assert!((loss - 16f64.ln()).abs() < 1e-12);
        assert!((loss - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn dominant_correct_logit_gives_near_zero_loss() {
        let mut logits = vec![0.0f64; 8];
        logits[5] = 60.0;
        let (loss, _) = cross_entropy(&logits, 8, &[5], &[true]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn all_masked_is_an_error() {
        let logits = vec![0.0f64; 8];
        assert_eq!(cross_entropy(&logits, 4, &[0, 1], &[false, false]), Err(ModelError::AllMasked));
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let logits = [0.3f64, -1.2, 2.0, 0.5, 0.1, 0.0, -0.7, 1.1, 0.9];
        let targets = [2u32, 0, 1];
        let mask = [true, false, true];
        // Oracle: -log(exp(l_t) / sum exp(l)) per kept row, averaged.
        let row_loss = |r: &[f64], t: usize| -> f64 {
            let z: f64 = r.iter().map(|x| x.exp()).sum();
            -(r[t].exp() / z).ln()
        };
        let expected = (row_loss(&logits[0..3], 2) + row_loss(&logits[6..9], 1)) / 2.0;
        let (loss, _) = cross_entropy(&logits, 3, &targets, &mask).unwrap();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    fn one_layer_one_head() -> LmModel<f64> {
        let cfg = LmConfig {
            vocab_size: 3,
            context_length: 2,
            n_layers: 1,
            n_heads: 1,
            d_model: 2,
            d_ff: 2,
            dropout: 0.0,
            init: InitSpec::Random { seed: 0 },
        };
        let mut m = LmModel::<f64>::init(cfg).unwrap();
        let w = &mut m.weights;
        w.wte = vec![0.5, -0.2, 0.1, 0.4, -0.3, 0.2];
        w.wpe = vec![0.05, 0.0, 0.0, -0.05];
        let blk = &mut w.blocks[0];
        blk.ln1_w = vec![1.0, 0.8];
        blk.ln1_b = vec![0.1, -0.1];
        blk.qkv_w = vec![0.2, 0.1, -0.1, 0.3, 0.4, -0.2, 0.1, 0.1, 0.3, 0.2, -0.4, 0.5];
        blk.qkv_b = vec![0.0, 0.1, 0.0, -0.1, 0.05, 0.0];
        blk.attn_proj_w = vec![0.3, -0.1, 0.2, 0.4];
        blk.attn_proj_b = vec![0.01, 0.02];
        blk.ln2_w = vec![0.9, 1.1];
        blk.ln2_b = vec![0.0, 0.05];
        blk.fc_w = vec![0.5, -0.3, 0.2, 0.6];
        blk.fc_b = vec![0.1, -0.2];
        blk.fc_proj_w = vec![0.3, 0.1, -0.2, 0.4];
        blk.fc_proj_b = vec![0.0, 0.03];
        w.lnf_w = vec![1.2, 0.7];
        w.lnf_b = vec![-0.05, 0.1];
        m
    }

    /// Independent scalar re-derivation of the block for a length-2 sequence.
    fn oracle_logits(m: &LmModel<f64>, tokens: [usize; 2]) -> Vec<[f64; 3]> {
        let w = &m.weights;
        let blk = &w.blocks[0];
        let ln = |x: [f64; 2], g: &[f64], b: &[f64]| -> [f64; 2] {
            let mu = (x[0] + x[1]) / 2.0;
            let var = ((x[0] - mu).powi(2) + (x[1] - mu).powi(2)) / 2.0;
            let s = 1.0 / (var + 1e-5).sqrt();
            [(x[0] - mu) * s * g[0] + b[0], (x[1] - mu) * s * g[1] + b[1]]
        };
        let lin = |x: &[f64], wt: &[f64], b: &[f64], out: usize| -> Vec<f64> {
            (0..out).map(|o| b[o] + (0..x.len()).map(|i| wt[o * x.len() + i] * x[i]).sum::<f64>()).collect()
        };
        let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let x: Vec<[f64; 2]> = (0..2)
            .map(|p| [w.wte[tokens[p] * 2] + w.wpe[p * 2], w.wte[tokens[p] * 2 + 1] + w.wpe[p * 2 + 1]])
            .collect();
        let qkv: Vec<Vec<f64>> =
            x.iter().map(|&xi| lin(&ln(xi, &blk.ln1_w, &blk.ln1_b), &blk.qkv_w, &blk.qkv_b, 6)).collect();
        let scale = 1.0 / 2f64.sqrt();
        let mut out = Vec::new();
        for p in 0..2 {
            let scores: Vec<f64> = (0..=p).map(|s| (qkv[p][0] * qkv[s][2] + qkv[p][1] * qkv[s][3]) * scale).collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let mut y = [0.0; 2];
            for (s, sc) in scores.iter().enumerate() {
                let a = sc.exp() / z;
                y[0] += a * qkv[s][4];
                y[1] += a * qkv[s][5];
            }
            let proj = lin(&y, &blk.attn_proj_w, &blk.attn_proj_b, 2);
            let r2 = [x[p][0] + proj[0], x[p][1] + proj[1]];
            let h = lin(&ln(r2, &blk.ln2_w, &blk.ln2_b), &blk.fc_w, &blk.fc_b, 2);
            let h: Vec<f64> = h.into_iter().map(gelu).collect();
            let mlp = lin(&h, &blk.fc_proj_w, &blk.fc_proj_b, 2);
            let r3 = [r2[0] + mlp[0], r2[1] + mlp[1]];
            let f = ln(r3, &w.lnf_w, &w.lnf_b);
            let mut logits = [0.0; 3];
            for (v, l) in logits.iter_mut().enumerate() {
                *l = f[0] * w.wte[v * 2] + f[1] * w.wte[v * 2 + 1];
            }
            out.push(logits);
        }
        out
    }

    #[test]
    fn forward_matches_hand_oracle() {
        let m = one_layer_one_head();
        let logits = m.forward(&[vec![2, 1]]).unwrap();
        let oracle = oracle_logits(&m, [2, 1]);
        for p in 0..2 {
            for v in 0..3 {
                assert!((logits[p * 3 + v] - oracle[p][v]).abs() < 1e-6, "pos {p} vocab {v}");
            }
        }
    }
}
