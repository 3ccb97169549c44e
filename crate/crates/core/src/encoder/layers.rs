//! Forward and reverse-mode passes for one token sequence.
//!
//! Sequences are processed one at a time as `[len × hidden]` row-major blocks.
//! Keys at PAD positions get exactly zero attention weight, so trimming the PAD
//! tail before the call changes nothing at the unpadded positions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderParams, LayerParams, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{accumulate_col_sums, add_row_bias, matmul, Op, Real, Tensor};
use crate::tokenizer::TokenSequence;

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    drop1: Option<Vec<T>>,
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    y1: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    drop2: Option<Vec<T>>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
}

/// Intermediates retained for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    ids: Vec<u32>,
    key_mask: Vec<bool>,
    emb_xhat: Vec<T>,
    emb_rstd: Vec<T>,
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    /// `[len × hidden]`
    pub hidden_states: Tensor<T>,
    /// Tanh-affine transform of the first position's final state.
    pub pooled: Vec<T>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> EncoderOutput<T> {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn drop_cache(&mut self) {
        self.cache = None;
    }

    /// Attention probabilities `[heads × len × len]` of a layer, when cached.
    pub fn attention_probs(&self, layer: usize) -> Option<&[T]> {
        self.cache
            .as_ref()
            .and_then(|c| c.layers.get(layer))
            .map(|l| l.probs.as_slice())
    }
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Returns `(y, xhat, rstd)` for row-wise layer norm over `h` columns.
fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], h: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / h;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let hf = T::from_usize(h).unwrap();
    let eps = T::from_f64_lossy(LN_EPS);
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().copied().sum::<T>() / hf;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / hf;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..h {
            let xh = (row[c] - mean) * rs;
            xhat[r * h + c] = xh;
            y[r * h + c] = gamma[c] * xh + beta[c];
        }
    }
    (y, xhat, rstd)
}

fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    h: usize,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / h;
    let hf = T::from_usize(h).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); h];
    for r in 0..rows {
        let dyr = &dy[r * h..(r + 1) * h];
        let xr = &xhat[r * h..(r + 1) * h];
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for c in 0..h {
            dgamma[c] = dgamma[c] + dyr[c] * xr[c];
            dbeta[c] = dbeta[c] + dyr[c];
            dxhat[c] = dyr[c] * gamma[c];
            sum_d = sum_d + dxhat[c];
            sum_dx = sum_dx + dxhat[c] * xr[c];
        }
        let mean_d = sum_d / hf;
        let mean_dx = sum_dx / hf;
        for c in 0..h {
            dx[r * h + c] = rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
        }
    }
    dx
}

fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v = *v * *k;
        }
    }
}

fn affine<T: Real>(x: &[T], w: &Tensor<T>, b: &Tensor<T>, rows: usize) -> Vec<T> {
    let (k, n) = (w.rows(), w.cols());
    let mut out = vec![T::zero(); rows * n];
    matmul(x, Op::N, &w.data, Op::N, rows, k, n, &mut out, false);
    add_row_bias(&mut out, &b.data);
    out
}

/// Accumulates grads of `y = x·W + b` and returns `dx`.
fn affine_backward<T: Real>(
    x: &[T],
    dy: &[T],
    w: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    rows: usize,
) -> Vec<T> {
    let (k, n) = (w.rows(), w.cols());
    matmul(x, Op::T, dy, Op::N, k, rows, n, &mut dw.data, true);
    accumulate_col_sums(&mut db.data, dy);
    let mut dx = vec![T::zero(); rows * k];
    matmul(dy, Op::N, &w.data, Op::T, rows, n, k, &mut dx, false);
    dx
}

fn layer_forward<T: Real>(
    p: &LayerParams<T>,
    cfg: &ModelConfig,
    x: Vec<T>,
    key_mask: &[bool],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<T>, LayerCache<T>) {
    let h = cfg.hidden_dim;
    let nh = cfg.n_heads;
    let dh = cfg.head_dim();
    let l = key_mask.len();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());

    let q = affine(&x, &p.query_w, &p.query_b, l);
    let k = affine(&x, &p.key_w, &p.key_b, l);
    let v = affine(&x, &p.value_w, &p.value_b, l);

    let mut probs = vec![T::zero(); nh * l * l];
    let mut ctx = vec![T::zero(); l * h];
    let hs = h as isize;
    let ls = l as isize;
    for head in 0..nh {
        let off = head * dh;
        let pr = &mut probs[head * l * l..(head + 1) * l * l];
        T::gemm(l, dh, l, scale, &q[off..], hs, 1, &k[off..], 1, hs, T::zero(), pr, ls, 1);
        for i in 0..l {
            let row = &mut pr[i * l..(i + 1) * l];
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, m)| **m)
                .map(|(v, _)| *v)
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (v, m) in row.iter_mut().zip(key_mask) {
                *v = if *m { (*v - max).exp() } else { T::zero() };
                sum = sum + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        T::gemm(l, l, dh, T::one(), pr, ls, 1, &v[off..], hs, 1, T::zero(), &mut ctx[off..], hs, 1);
    }

    let mut attn = affine(&ctx, &p.out_w, &p.out_b, l);
    let drop1 = rng
        .as_deref_mut()
        .filter(|_| cfg.dropout_rate > 0.0)
        .map(|r| dropout_mask(l * h, cfg.dropout_rate, r));
    apply_mask(&mut attn, &drop1);
    let r1: Vec<T> = x.iter().zip(&attn).map(|(a, b)| *a + *b).collect();
    let (y1, xhat1, rstd1) = layer_norm(&r1, &p.ln1_gamma.data, &p.ln1_beta.data, h);

    let ff_pre = affine(&y1, &p.ff1_w, &p.ff1_b, l);
    let ff_act: Vec<T> = ff_pre.iter().map(|v| gelu(*v)).collect();
    let mut f2 = affine(&ff_act, &p.ff2_w, &p.ff2_b, l);
    let drop2 = rng
        .as_deref_mut()
        .filter(|_| cfg.dropout_rate > 0.0)
        .map(|r| dropout_mask(l * h, cfg.dropout_rate, r));
    apply_mask(&mut f2, &drop2);
    let r2: Vec<T> = y1.iter().zip(&f2).map(|(a, b)| *a + *b).collect();
    let (y2, xhat2, rstd2) = layer_norm(&r2, &p.ln2_gamma.data, &p.ln2_beta.data, h);

    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        ctx,
        drop1,
        xhat1,
        rstd1,
        y1,
        ff_pre,
        ff_act,
        drop2,
        xhat2,
        rstd2,
    };
    (y2, cache)
}

fn layer_backward<T: Real>(
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    cfg: &ModelConfig,
    c: &LayerCache<T>,
    dy2: &[T],
) -> Vec<T> {
    let h = cfg.hidden_dim;
    let nh = cfg.n_heads;
    let dh = cfg.head_dim();
    let l = c.rstd1.len();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let hs = h as isize;
    let ls = l as isize;

    let dr2 = layer_norm_backward(
        dy2,
        &c.xhat2,
        &c.rstd2,
        &p.ln2_gamma.data,
        h,
        &mut g.ln2_gamma.data,
        &mut g.ln2_beta.data,
    );
    let mut df2 = dr2.clone();
    apply_mask(&mut df2, &c.drop2);
    let dact = affine_backward(&c.ff_act, &df2, &p.ff2_w, &mut g.ff2_w, &mut g.ff2_b, l);
    let dpre: Vec<T> = dact
        .iter()
        .zip(&c.ff_pre)
        .map(|(d, x)| *d * gelu_grad(*x))
        .collect();
    let dy1_ff = affine_backward(&c.y1, &dpre, &p.ff1_w, &mut g.ff1_w, &mut g.ff1_b, l);
    let dy1: Vec<T> = dr2.iter().zip(&dy1_ff).map(|(a, b)| *a + *b).collect();

    let dr1 = layer_norm_backward(
        &dy1,
        &c.xhat1,
        &c.rstd1,
        &p.ln1_gamma.data,
        h,
        &mut g.ln1_gamma.data,
        &mut g.ln1_beta.data,
    );
    let mut dattn = dr1.clone();
    apply_mask(&mut dattn, &c.drop1);
    let dctx = affine_backward(&c.ctx, &dattn, &p.out_w, &mut g.out_w, &mut g.out_b, l);

    let mut dq = vec![T::zero(); l * h];
    let mut dk = vec![T::zero(); l * h];
    let mut dv = vec![T::zero(); l * h];
    let mut dp = vec![T::zero(); l * l];
    for head in 0..nh {
        let off = head * dh;
        let pr = &c.probs[head * l * l..(head + 1) * l * l];
        // dP = dctx_h · V_hᵀ
        T::gemm(l, dh, l, T::one(), &dctx[off..], hs, 1, &c.v[off..], 1, hs, T::zero(), &mut dp, ls, 1);
        // dV_h = Pᵀ · dctx_h
        T::gemm(l, l, dh, T::one(), pr, 1, ls, &dctx[off..], hs, 1, T::zero(), &mut dv[off..], hs, 1);
        // Softmax Jacobian, then the score scale.
        for i in 0..l {
            let prow = &pr[i * l..(i + 1) * l];
            let drow = &mut dp[i * l..(i + 1) * l];
            let dot: T = prow.iter().zip(drow.iter()).map(|(a, b)| *a * *b).sum();
            for (d, pv) in drow.iter_mut().zip(prow) {
                *d = *pv * (*d - dot) * scale;
            }
        }
        T::gemm(l, l, dh, T::one(), &dp, ls, 1, &c.k[off..], hs, 1, T::zero(), &mut dq[off..], hs, 1);
        T::gemm(l, l, dh, T::one(), &dp, 1, ls, &c.q[off..], hs, 1, T::zero(), &mut dk[off..], hs, 1);
    }

    let mut dx = dr1;
    for (dproj, w, dw, db) in [
        (&dq, &p.query_w, &mut g.query_w, &mut g.query_b),
        (&dk, &p.key_w, &mut g.key_w, &mut g.key_b),
        (&dv, &p.value_w, &mut g.value_w, &mut g.value_b),
    ] {
        let part = affine_backward(&c.input, dproj, w, dw, db, l);
        for (a, b) in dx.iter_mut().zip(&part) {
            *a = *a + *b;
        }
    }
    dx
}

/// Runs the encoder on one sequence. Passing `dropout_rng` selects train mode.
pub fn forward<T: Real>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    seq: &TokenSequence,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    keep_cache: bool,
) -> Result<EncoderOutput<T>> {
    let l = seq.ids.len();
    let h = config.hidden_dim;
    if l == 0 {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    if l > config.max_seq_len {
        return Err(Error::OutOfRange {
            what: "sequence length",
            index: l,
            limit: config.max_seq_len,
        });
    }
    if seq.attention_mask.len() != l {
        return Err(Error::Dimension {
            expected: l,
            actual: seq.attention_mask.len(),
        });
    }
    for &id in &seq.ids {
        if id as usize >= config.vocab_size {
            return Err(Error::OutOfRange {
                what: "token id",
                index: id as usize,
                limit: config.vocab_size,
            });
        }
    }
    let key_mask: Vec<bool> = seq.attention_mask.iter().map(|m| *m != 0).collect();
    if !key_mask.iter().any(|m| *m) {
        return Err(Error::InvalidInput("attention mask has no active position".into()));
    }

    let mut emb = vec![T::zero(); l * h];
    for (pos, &id) in seq.ids.iter().enumerate() {
        let tok = params.token_emb.row(id as usize);
        let p = params.position_emb.row(pos);
        for c in 0..h {
            emb[pos * h + c] = tok[c] + p[c];
        }
    }
    let (mut x, emb_xhat, emb_rstd) =
        layer_norm(&emb, &params.emb_ln_gamma.data, &params.emb_ln_beta.data, h);
    let emb_drop = dropout_rng
        .as_deref_mut()
        .filter(|_| config.dropout_rate > 0.0)
        .map(|r| dropout_mask(l * h, config.dropout_rate, r));
    apply_mask(&mut x, &emb_drop);

    let mut layer_caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (y, cache) = layer_forward(layer, config, x, &key_mask, dropout_rng.as_deref_mut());
        x = y;
        layer_caches.push(cache);
    }

    let mut pooled = vec![T::zero(); h];
    matmul(&x[..h], Op::N, &params.pooler_w.data, Op::N, 1, h, h, &mut pooled, false);
    for (p, b) in pooled.iter_mut().zip(&params.pooler_b.data) {
        *p = (*p + *b).tanh();
    }

    let cache = keep_cache.then(|| ForwardCache {
        ids: seq.ids.clone(),
        key_mask,
        emb_xhat,
        emb_rstd,
        emb_drop,
        layers: layer_caches,
    });
    Ok(EncoderOutput {
        hidden_states: Tensor::from_vec(&[l, h], x),
        pooled,
        cache,
    })
}

/// Eval-mode forward over many sequences; no caches are kept.
pub fn forward_batch<T: Real>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
) -> Result<Vec<EncoderOutput<T>>> {
    batch
        .iter()
        .map(|s| forward(params, config, s, None, false))
        .collect()
}

/// Accumulates parameter gradients into `grads` given upstream gradients on
/// the hidden states and/or the pooled vector.
pub fn backward<T: Real>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    output: &EncoderOutput<T>,
    d_hidden: Option<&[T]>,
    d_pooled: Option<&[T]>,
    grads: &mut EncoderParams<T>,
) -> Result<()> {
    let cache = output.cache.as_ref().ok_or(Error::MissingCache)?;
    let h = config.hidden_dim;
    let l = cache.ids.len();
    let mut dx = match d_hidden {
        Some(d) => {
            if d.len() != l * h {
                return Err(Error::Dimension {
                    expected: l * h,
                    actual: d.len(),
                });
            }
            d.to_vec()
        }
        None => vec![T::zero(); l * h],
    };

    if let Some(dp) = d_pooled {
        if dp.len() != h {
            return Err(Error::Dimension {
                expected: h,
                actual: dp.len(),
            });
        }
        let dpre: Vec<T> = dp
            .iter()
            .zip(&output.pooled)
            .map(|(d, y)| *d * (T::one() - *y * *y))
            .collect();
        let first = &output.hidden_states.data[..h];
        matmul(first, Op::T, &dpre, Op::N, h, 1, h, &mut grads.pooler_w.data, true);
        for (g, d) in grads.pooler_b.data.iter_mut().zip(&dpre) {
            *g = *g + *d;
        }
        let mut dfirst = vec![T::zero(); h];
        matmul(&params.pooler_w.data, Op::N, &dpre, Op::N, h, h, 1, &mut dfirst, false);
        for (a, b) in dx[..h].iter_mut().zip(&dfirst) {
            *a = *a + *b;
        }
    }

    for (i, lc) in cache.layers.iter().enumerate().rev() {
        dx = layer_backward(&params.layers[i], &mut grads.layers[i], config, lc, &dx);
    }

    apply_mask(&mut dx, &cache.emb_drop);
    let demb = layer_norm_backward(
        &dx,
        &cache.emb_xhat,
        &cache.emb_rstd,
        &params.emb_ln_gamma.data,
        h,
        &mut grads.emb_ln_gamma.data,
        &mut grads.emb_ln_beta.data,
    );
    for (pos, &id) in cache.ids.iter().enumerate() {
        let src = &demb[pos * h..(pos + 1) * h];
        for (g, d) in grads.token_emb.row_mut(id as usize).iter_mut().zip(src) {
            *g = *g + *d;
        }
        for (g, d) in grads.position_emb.row_mut(pos).iter_mut().zip(src) {
            *g = *g + *d;
        }
    }
    let _ = &cache.key_mask;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::params::ParamSet;
    use crate::tokenizer::{TokenSequence, PAD};
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            max_seq_len: 8,
            hidden_dim: 12,
            n_layers: 2,
            n_heads: 3,
            ff_dim: 20,
            dropout_rate: 0.1,
            seed: 4,
        }
    }

    fn seq(ids: &[u32], len: usize) -> TokenSequence {
        TokenSequence::from_ids(ids, len)
    }

    #[test]
    fn shapes_and_pooled_range() {
        let c = cfg();
        let p: EncoderParams<f64> = init_params(&c).unwrap();
        let out = forward(&p, &c, &seq(&[7, 8, 9], 8), None, false).unwrap();
        assert_eq!(out.hidden_states.shape, vec![8, 12]);
        assert_eq!(out.pooled.len(), 12);
        assert!(out.pooled.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn attention_rows_sum_to_one_and_ignore_pad() {
        let c = cfg();
        let p: EncoderParams<f64> = init_params(&c).unwrap();
        let s = seq(&[5, 6], 8);
        let out = forward(&p, &c, &s, None, true).unwrap();
        let l = 8;
        for layer in 0..2 {
            let probs = out.attention_probs(layer).unwrap();
            for row in probs.chunks(l) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                for (j, v) in row.iter().enumerate() {
                    if s.attention_mask[j] == 0 {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn pad_content_does_not_leak() {
        let c = cfg();
        let p: EncoderParams<f64> = init_params(&c).unwrap();
        let a = seq(&[5, 6, 7], 8);
        let mut b = a.clone();
        for (id, m) in b.ids.iter_mut().zip(&b.attention_mask) {
            if *m == 0 {
                *id = 11;
            }
        }
        assert_ne!(a.ids[6], b.ids[6]);
        let oa = forward(&p, &c, &a, None, false).unwrap();
        let ob = forward(&p, &c, &b, None, false).unwrap();
        assert_eq!(oa.pooled, ob.pooled);
        let active = a.active_len();
        assert_eq!(
            &oa.hidden_states.data[..active * 12],
            &ob.hidden_states.data[..active * 12]
        );
        // Trimming the PAD tail is equivalent at active positions.
        let ot = forward(&p, &c, &a.trimmed(), None, false).unwrap();
        for (x, y) in ot.pooled.iter().zip(&oa.pooled) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_changes_train_mode() {
        let c = cfg();
        let p: EncoderParams<f32> = init_params(&c).unwrap();
        let s = seq(&[5, 6, 7], 8);
        let a = forward(&p, &c, &s, None, false).unwrap();
        let b = forward(&p, &c, &s, None, false).unwrap();
        assert_eq!(a.pooled, b.pooled);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = forward(&p, &c, &s, Some(&mut rng), false).unwrap();
        assert_ne!(a.pooled, t.pooled);
    }

    #[test]
    fn rejects_out_of_range_ids_and_lengths() {
        let c = cfg();
        let p: EncoderParams<f32> = init_params(&c).unwrap();
        assert!(matches!(
            forward(&p, &c, &seq(&[30], 8), None, false),
            Err(Error::OutOfRange { .. })
        ));
        assert!(forward(&p, &c, &seq(&[5], 9), None, false).is_err());
        let all_pad = TokenSequence {
            ids: vec![PAD; 4],
            attention_mask: vec![0; 4],
        };
        assert!(forward(&p, &c, &all_pad, None, false).is_err());
    }

    #[test]
    fn backward_needs_cache_and_is_linear_in_upstream() {
        let c = cfg();
        let p: EncoderParams<f64> = init_params(&c).unwrap();
        let s = seq(&[5, 6, 7], 8);
        let no_cache = forward(&p, &c, &s, None, false).unwrap();
        let mut g = p.zeros_like();
        assert!(matches!(
            backward(&p, &c, &no_cache, None, Some(&[0.0; 12]), &mut g),
            Err(Error::MissingCache)
        ));
        let out = forward(&p, &c, &s, None, true).unwrap();
        let zeros = vec![0.0; 8 * 12];
        backward(&p, &c, &out, Some(&zeros), Some(&[0.0; 12]), &mut g).unwrap();
        assert!(g.named_tensors().iter().all(|(_, t)| t.data.iter().all(|v| *v == 0.0)));
        let up: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        backward(&p, &c, &out, None, Some(&up), &mut g).unwrap();
        assert!(g.all_finite());
        assert!(g.pooler_w.data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for x in [-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let e = 1e-6;
            let fd = (gelu(x + e) - gelu(x - e)) / (2.0 * e);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
