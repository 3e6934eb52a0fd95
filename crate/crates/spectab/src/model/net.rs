//! Forward and backward passes of the tokenized transformer.
//!
//! Activations are stored as 2-D arrays of shape (batch * seq, dim); token
//! `s` of sample `b` lives at row `b * seq + s`, with the CLS token at
//! position 0. The backward pass is hand-derived reverse mode over this
//! fixed computation graph and is validated against finite differences.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::params::ParamSet;

/// Static shape and rate information shared by forward and backward.
#[derive(Debug, Clone)]
pub(crate) struct Dims {
    pub n_features: usize,
    pub d_token: usize,
    pub d_pe: usize,
    pub d_content: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub attn_dropout: f64,
    pub ffn_dropout: f64,
    pub learnable_pe: bool,
}

impl Dims {
    pub fn seq_len(&self) -> usize {
        self.n_features + 1
    }
}

/// Parameter indices within the `ParamSet`, fixed by construction order.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_w: usize,
    pub tok_b: usize,
    pub cls: usize,
    pub pe: Option<usize>,
    layer_base: usize,
    pub head_w: usize,
    pub head_b: usize,
}

/// Per-layer parameter slots, in storage order.
pub(crate) const PER_LAYER: usize = 16;
pub(crate) const WQ: usize = 0;
pub(crate) const BQ: usize = 1;
pub(crate) const WK: usize = 2;
pub(crate) const BK: usize = 3;
pub(crate) const WV: usize = 4;
pub(crate) const BV: usize = 5;
pub(crate) const WO: usize = 6;
pub(crate) const BO: usize = 7;
pub(crate) const LN1G: usize = 8;
pub(crate) const LN1B: usize = 9;
pub(crate) const LN2G: usize = 10;
pub(crate) const LN2B: usize = 11;
pub(crate) const W1: usize = 12;
pub(crate) const B1: usize = 13;
pub(crate) const W2: usize = 14;
pub(crate) const B2: usize = 15;

impl Layout {
    pub fn new(dims: &Dims) -> Self {
        let pe = dims.learnable_pe.then_some(3);
        let layer_base = 3 + usize::from(dims.learnable_pe);
        Layout {
            tok_w: 0,
            tok_b: 1,
            cls: 2,
            pe,
            layer_base,
            head_w: layer_base + PER_LAYER * dims.n_layers,
            head_b: layer_base + PER_LAYER * dims.n_layers + 1,
        }
    }

    pub fn layer(&self, l: usize, slot: usize) -> usize {
        self.layer_base + PER_LAYER * l + slot
    }
}

const LN_EPS: f64 = 1e-5;

fn param_matrix(params: &ParamSet, idx: usize) -> Array2<f64> {
    params.params[idx].view().to_owned()
}

/// y = x W + b (b broadcast over rows).
fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &[f64]) -> Array2<f64> {
    let mut y = x.dot(w);
    for mut row in y.rows_mut() {
        for (v, bi) in row.iter_mut().zip(b.iter()) {
            *v += bi;
        }
    }
    y
}

fn column_sums(m: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    for row in m.rows() {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

fn layer_norm(x: &Array2<f64>, gamma: &[f64], beta: &[f64]) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut invstd = vec![0.0; x.nrows()];
    for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        invstd[r] = inv;
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * gamma[j] + beta[j];
        }
    }
    (y, xhat, invstd)
}

/// Returns (dx, dgamma, dbeta).
fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    invstd: &[f64],
    gamma: &[f64],
) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let (n, d) = (dy.nrows(), dy.ncols());
    let df = d as f64;
    let mut dx = Array2::<f64>::zeros((n, d));
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for r in 0..n {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let dyv = dy[[r, j]];
            dgamma[j] += dyv * xhat[[r, j]];
            dbeta[j] += dyv;
            let dxhat = dyv * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat[[r, j]];
        }
        let m1 = sum_dxhat / df;
        let m2 = sum_dxhat_xhat / df;
        for j in 0..d {
            let dxhat = dy[[r, j]] * gamma[j];
            dx[[r, j]] = invstd[r] * (dxhat - m1 - xhat[[r, j]] * m2);
        }
    }
    (dx, dgamma, dbeta)
}

fn sample_mask(rng: &mut ChaCha12Rng, rows: usize, cols: usize, p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    let mut m = Array2::<f64>::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = if rng.gen::<f64>() < p { 0.0 } else { keep };
    }
    m
}

/// Single-head scaled dot-product attention on one sample's token block.
/// Returns (context, probabilities); rows of `probs` sum to 1.
pub fn single_head_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    softmax_rows(&mut scores);
    (scores.dot(v), scores)
}

pub(crate) struct LayerCache {
    ln1_xhat: Array2<f64>,
    ln1_invstd: Vec<f64>,
    y1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// (batch * heads * seq, seq), post-softmax, pre-dropout.
    probs: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ctx: Array2<f64>,
    ln2_xhat: Array2<f64>,
    ln2_invstd: Vec<f64>,
    y2: Array2<f64>,
    ffn_a: Array2<f64>,
    ffn_g: Array2<f64>,
    ffn_z: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

pub(crate) struct FwdCache {
    pub layers: Vec<LayerCache>,
    pub cls_emb: Array2<f64>,
    batch: usize,
}

/// Initial token embeddings: CLS first, then one token per feature, each
/// `[x_i * w_i + b_i ; pe_i]`; the CLS PE block is zero.
pub(crate) fn build_tokens(
    dims: &Dims,
    layout: &Layout,
    params: &ParamSet,
    x: &Array2<f64>,
    fixed_pe: &Array2<f64>,
) -> Array2<f64> {
    let (batch, f) = (x.nrows(), dims.n_features);
    let seq = dims.seq_len();
    let (d, dc) = (dims.d_token, dims.d_content);
    let tok_w = &params.params[layout.tok_w];
    let tok_b = &params.params[layout.tok_b];
    let cls = &params.params[layout.cls];
    let pe_param = layout.pe.map(|idx| &params.params[idx]);

    let mut h = Array2::<f64>::zeros((batch * seq, d));
    for b in 0..batch {
        let base = b * seq;
        for j in 0..dc {
            h[[base, j]] = cls.data[j];
        }
        for i in 0..f {
            let row = base + 1 + i;
            let xi = x[[b, i]];
            for j in 0..dc {
                h[[row, j]] = xi * tok_w.data[i * dc + j] + tok_b.data[i * dc + j];
            }
            for j in 0..dims.d_pe {
                h[[row, dc + j]] = match pe_param {
                    Some(pe) => pe.data[i * dims.d_pe + j],
                    None => fixed_pe[[i, j]],
                };
            }
        }
    }
    h
}

/// Full forward pass. `train_rng` enables dropout; pass `None` for
/// evaluation. Returns (outputs, cache).
pub(crate) fn forward(
    dims: &Dims,
    layout: &Layout,
    params: &ParamSet,
    x: &Array2<f64>,
    fixed_pe: &Array2<f64>,
    mut train_rng: Option<&mut ChaCha12Rng>,
) -> (Array2<f64>, FwdCache) {
    let batch = x.nrows();
    let seq = dims.seq_len();
    let (d, heads, dh) = (dims.d_token, dims.n_heads, dims.d_head);
    let ff = dims.d_ff;

    let mut h = build_tokens(dims, layout, params, x, fixed_pe);
    let mut layers = Vec::with_capacity(dims.n_layers);

    for l in 0..dims.n_layers {
        let wq = param_matrix(params, layout.layer(l, WQ));
        let wk = param_matrix(params, layout.layer(l, WK));
        let wv = param_matrix(params, layout.layer(l, WV));
        let wo = param_matrix(params, layout.layer(l, WO));
        let w1 = param_matrix(params, layout.layer(l, W1));
        let w2 = param_matrix(params, layout.layer(l, W2));
        let bq = &params.params[layout.layer(l, BQ)].data;
        let bk = &params.params[layout.layer(l, BK)].data;
        let bv = &params.params[layout.layer(l, BV)].data;
        let bo = &params.params[layout.layer(l, BO)].data;
        let b1 = &params.params[layout.layer(l, B1)].data;
        let b2 = &params.params[layout.layer(l, B2)].data;
        let ln1g = &params.params[layout.layer(l, LN1G)].data;
        let ln1b = &params.params[layout.layer(l, LN1B)].data;
        let ln2g = &params.params[layout.layer(l, LN2G)].data;
        let ln2b = &params.params[layout.layer(l, LN2B)].data;

        let (y1, ln1_xhat, ln1_invstd) = layer_norm(&h, ln1g, ln1b);
        let q = linear(&y1, &wq, bq);
        let k = linear(&y1, &wk, bk);
        let v = linear(&y1, &wv, bv);

        let mut probs = Array2::<f64>::zeros((batch * heads * seq, seq));
        let scale = 1.0 / (dh as f64).sqrt();
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                let qh = q.slice(ndarray::s![rows.clone(), cols.clone()]);
                let kh = k.slice(ndarray::s![rows.clone(), cols.clone()]);
                let mut sc = qh.dot(&kh.t());
                sc *= scale;
                softmax_rows(&mut sc);
                let block = (b * heads + hd) * seq;
                probs
                    .slice_mut(ndarray::s![block..block + seq, ..])
                    .assign(&sc);
            }
        }
        let attn_mask = match (&mut train_rng, dims.attn_dropout > 0.0) {
            (Some(rng), true) => {
                Some(sample_mask(rng, batch * heads * seq, seq, dims.attn_dropout))
            }
            _ => None,
        };
        let mut ctx = Array2::<f64>::zeros((batch * seq, d));
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                let vh = v.slice(ndarray::s![rows.clone(), cols.clone()]).to_owned();
                let block = (b * heads + hd) * seq;
                let mut pd = probs.slice(ndarray::s![block..block + seq, ..]).to_owned();
                if let Some(mask) = &attn_mask {
                    pd *= &mask.slice(ndarray::s![block..block + seq, ..]);
                }
                let ctxh = pd.dot(&vh);
                ctx.slice_mut(ndarray::s![rows.clone(), cols.clone()]).assign(&ctxh);
            }
        }
        let att_out = linear(&ctx, &wo, bo);
        let h_mid = &h + &att_out;

        let (y2, ln2_xhat, ln2_invstd) = layer_norm(&h_mid, ln2g, ln2b);
        let pre = linear(&y2, &w1, b1);
        let mut ffn_a = Array2::<f64>::zeros((batch * seq, ff));
        let mut ffn_g = Array2::<f64>::zeros((batch * seq, ff));
        for r in 0..batch * seq {
            for c in 0..ff {
                ffn_a[[r, c]] = pre[[r, c]];
                ffn_g[[r, c]] = pre[[r, ff + c]];
            }
        }
        let mut ffn_z = ffn_a.clone();
        for (z, g) in ffn_z.iter_mut().zip(ffn_g.iter()) {
            *z *= g.max(0.0);
        }
        let ffn_mask = match (&mut train_rng, dims.ffn_dropout > 0.0) {
            (Some(rng), true) => Some(sample_mask(rng, batch * seq, ff, dims.ffn_dropout)),
            _ => None,
        };
        let zd = match &ffn_mask {
            Some(mask) => &ffn_z * mask,
            None => ffn_z.clone(),
        };
        let ffn_out = linear(&zd, &w2, b2);
        let h_out = &h_mid + &ffn_out;

        layers.push(LayerCache {
            ln1_xhat,
            ln1_invstd,
            y1,
            q,
            k,
            v,
            probs,
            attn_mask,
            ctx,
            ln2_xhat,
            ln2_invstd,
            y2,
            ffn_a,
            ffn_g,
            ffn_z,
            ffn_mask,
        });
        h = h_out;
    }

    let mut cls_emb = Array2::<f64>::zeros((batch, d));
    for b in 0..batch {
        for j in 0..d {
            cls_emb[[b, j]] = h[[b * seq, j]];
        }
    }
    let head_w = param_matrix(params, layout.head_w);
    let head_b = &params.params[layout.head_b].data;
    let out = linear(&cls_emb, &head_w, head_b);
    (out, FwdCache { layers, cls_emb, batch })
}

/// Reverse pass; `dout` is the loss gradient w.r.t. the head outputs.
/// Returns gradients in parameter order.
pub(crate) fn backward(
    dims: &Dims,
    layout: &Layout,
    params: &ParamSet,
    x: &Array2<f64>,
    cache: &FwdCache,
    dout: &Array2<f64>,
) -> Vec<Vec<f64>> {
    let batch = cache.batch;
    let seq = dims.seq_len();
    let (d, heads, dh, ff, dc) = (
        dims.d_token,
        dims.n_heads,
        dims.d_head,
        dims.d_ff,
        dims.d_content,
    );
    let mut grads = params.zeros_like();

    // Head.
    let head_w = param_matrix(params, layout.head_w);
    let dhead_w = cache.cls_emb.t().dot(dout);
    grads[layout.head_w].copy_from_slice(dhead_w.as_slice().expect("contiguous"));
    grads[layout.head_b].copy_from_slice(&column_sums(dout));
    let dcls_emb = dout.dot(&head_w.t());

    let mut dh_cur = Array2::<f64>::zeros((batch * seq, d));
    for b in 0..batch {
        for j in 0..d {
            dh_cur[[b * seq, j]] = dcls_emb[[b, j]];
        }
    }

    for l in (0..dims.n_layers).rev() {
        let cachel = &cache.layers[l];
        let wq = param_matrix(params, layout.layer(l, WQ));
        let wk = param_matrix(params, layout.layer(l, WK));
        let wv = param_matrix(params, layout.layer(l, WV));
        let wo = param_matrix(params, layout.layer(l, WO));
        let w1 = param_matrix(params, layout.layer(l, W1));
        let w2 = param_matrix(params, layout.layer(l, W2));
        let ln1g = &params.params[layout.layer(l, LN1G)].data;
        let ln2g = &params.params[layout.layer(l, LN2G)].data;

        // FFN block: h_out = h_mid + W2(dropout(a*relu(g))) with [a|g] = W1 y2 + b1.
        let dffn_out = &dh_cur;
        let zd = match &cachel.ffn_mask {
            Some(mask) => &cachel.ffn_z * mask,
            None => cachel.ffn_z.clone(),
        };
        let dw2 = zd.t().dot(dffn_out);
        grads[layout.layer(l, W2)].copy_from_slice(dw2.as_slice().expect("contiguous"));
        grads[layout.layer(l, B2)].copy_from_slice(&column_sums(dffn_out));
        let mut dz = dffn_out.dot(&w2.t());
        if let Some(mask) = &cachel.ffn_mask {
            dz *= mask;
        }
        let mut dpre = Array2::<f64>::zeros((batch * seq, 2 * ff));
        for r in 0..batch * seq {
            for c in 0..ff {
                let relu_g = cachel.ffn_g[[r, c]].max(0.0);
                dpre[[r, c]] = dz[[r, c]] * relu_g;
                dpre[[r, ff + c]] = if cachel.ffn_g[[r, c]] > 0.0 {
                    dz[[r, c]] * cachel.ffn_a[[r, c]]
                } else {
                    0.0
                };
            }
        }
        let dw1 = cachel.y2.t().dot(&dpre);
        grads[layout.layer(l, W1)].copy_from_slice(dw1.as_slice().expect("contiguous"));
        grads[layout.layer(l, B1)].copy_from_slice(&column_sums(&dpre));
        let dy2 = dpre.dot(&w1.t());
        let (dh_mid_ln, dg2, db2g) =
            layer_norm_backward(&dy2, &cachel.ln2_xhat, &cachel.ln2_invstd, ln2g);
        grads[layout.layer(l, LN2G)].copy_from_slice(&dg2);
        grads[layout.layer(l, LN2B)].copy_from_slice(&db2g);
        let dh_mid = &dh_cur + &dh_mid_ln;

        // Attention block: h_mid = h_in + Wo(ctx) + bo.
        let dwo = cachel.ctx.t().dot(&dh_mid);
        grads[layout.layer(l, WO)].copy_from_slice(dwo.as_slice().expect("contiguous"));
        grads[layout.layer(l, BO)].copy_from_slice(&column_sums(&dh_mid));
        let dctx = dh_mid.dot(&wo.t());

        let mut dq = Array2::<f64>::zeros((batch * seq, d));
        let mut dk = Array2::<f64>::zeros((batch * seq, d));
        let mut dv = Array2::<f64>::zeros((batch * seq, d));
        let scale = 1.0 / (dh as f64).sqrt();
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                let block = (b * heads + hd) * seq;
                let probs = cachel.probs.slice(ndarray::s![block..block + seq, ..]);
                let mask = cachel
                    .attn_mask
                    .as_ref()
                    .map(|m| m.slice(ndarray::s![block..block + seq, ..]));
                let vh = cachel.v.slice(ndarray::s![rows.clone(), cols.clone()]);
                let qh = cachel.q.slice(ndarray::s![rows.clone(), cols.clone()]);
                let kh = cachel.k.slice(ndarray::s![rows.clone(), cols.clone()]);
                let dctxh = dctx.slice(ndarray::s![rows.clone(), cols.clone()]);

                let pd = match &mask {
                    Some(m) => &probs.to_owned() * m,
                    None => probs.to_owned(),
                };
                let mut dpd = dctxh.dot(&vh.t());
                let dvh = pd.t().dot(&dctxh);
                dv.slice_mut(ndarray::s![rows.clone(), cols.clone()]).assign(&dvh);
                if let Some(m) = &mask {
                    dpd *= m;
                }
                // Softmax backward: ds = p * (dp - rowsum(dp * p)).
                let mut dscores = dpd.clone();
                for r in 0..seq {
                    let dot: f64 =
                        (0..seq).map(|c| dpd[[r, c]] * probs[[r, c]]).sum();
                    for c in 0..seq {
                        dscores[[r, c]] = probs[[r, c]] * (dpd[[r, c]] - dot);
                    }
                }
                let dqh = dscores.dot(&kh) * scale;
                let dkh = dscores.t().dot(&qh) * scale;
                dq.slice_mut(ndarray::s![rows.clone(), cols.clone()]).assign(&dqh);
                dk.slice_mut(ndarray::s![rows.clone(), cols.clone()]).assign(&dkh);
            }
        }
        let dwq = cachel.y1.t().dot(&dq);
        let dwk = cachel.y1.t().dot(&dk);
        let dwv = cachel.y1.t().dot(&dv);
        grads[layout.layer(l, WQ)].copy_from_slice(dwq.as_slice().expect("contiguous"));
        grads[layout.layer(l, WK)].copy_from_slice(dwk.as_slice().expect("contiguous"));
        grads[layout.layer(l, WV)].copy_from_slice(dwv.as_slice().expect("contiguous"));
        grads[layout.layer(l, BQ)].copy_from_slice(&column_sums(&dq));
        grads[layout.layer(l, BK)].copy_from_slice(&column_sums(&dk));
        grads[layout.layer(l, BV)].copy_from_slice(&column_sums(&dv));
        let dy1 = dq.dot(&wq.t()) + dk.dot(&wk.t()) + dv.dot(&wv.t());
        let (dh_in_ln, dg1, db1g) =
            layer_norm_backward(&dy1, &cachel.ln1_xhat, &cachel.ln1_invstd, ln1g);
        grads[layout.layer(l, LN1G)].copy_from_slice(&dg1);
        grads[layout.layer(l, LN1B)].copy_from_slice(&db1g);
        dh_cur = &dh_mid + &dh_in_ln;
    }

    // Token embedding gradients.
    let f = dims.n_features;
    for b in 0..batch {
        let base = b * seq;
        for j in 0..dc {
            grads[layout.cls][j] += dh_cur[[base, j]];
        }
        for i in 0..f {
            let row = base + 1 + i;
            let xi = x[[b, i]];
            for j in 0..dc {
                grads[layout.tok_w][i * dc + j] += xi * dh_cur[[row, j]];
                grads[layout.tok_b][i * dc + j] += dh_cur[[row, j]];
            }
            if let Some(pe_idx) = layout.pe {
                for j in 0..dims.d_pe {
                    grads[pe_idx][i * dims.d_pe + j] += dh_cur[[row, dc + j]];
                }
            }
        }
    }
    grads
}

/// Mean squared error over a column of outputs; returns (loss, dout).
pub(crate) fn mse_loss(out: &Array2<f64>, targets: &[f64]) -> (f64, Array2<f64>) {
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut dout = Array2::<f64>::zeros(out.raw_dim());
    for (b, &t) in targets.iter().enumerate() {
        let diff = out[[b, 0]] - t;
        loss += diff * diff;
        dout[[b, 0]] = 2.0 * diff / n;
    }
    (loss / n, dout)
}

/// Class-weighted cross entropy; returns (loss, dlogits).
pub(crate) fn weighted_ce_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let c = logits.ncols();
    let mut loss = 0.0;
    let mut dout = Array2::<f64>::zeros(logits.raw_dim());
    for (b, &y) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..c {
            total += (row[j] - max).exp();
        }
        let log_total = total.ln() + max;
        let w = weights[y];
        loss += w * (log_total - row[y]);
        for j in 0..c {
            let p = (row[j] - max).exp() / total;
            dout[[b, j]] = w * (p - f64::from(j == y)) / n;
        }
    }
    (loss / n, dout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn uniform_scores_average_values() {
        let q = Array2::<f64>::zeros((1, 4));
        let k = Array2::<f64>::ones((3, 4));
        let v = array![[1.0, 0.0], [2.0, 2.0], [3.0, 4.0]];
        let (ctx, probs) = single_head_attention(&q, &k, &v);
        for p in probs.row(0) {
            assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(ctx[[0, 0]], 2.0, epsilon = 1e-12);
        assert_relative_eq!(ctx[[0, 1]], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dominant_score_selects_argmax_value() {
        // One key aligned with the query and scaled so the pre-temperature
        // score gap is +40; softmax saturates onto its value row.
        let q = array![[40.0, 0.0, 0.0, 0.0]];
        let mut k = Array2::<f64>::zeros((3, 4));
        k[[1, 0]] = 1.0;
        let v = array![[1.0, -1.0], [5.0, 7.0], [0.0, 3.0]];
        let (ctx, probs) = single_head_attention(&q, &k, &v);
        assert!((probs[[0, 1]] - 1.0).abs() < 1e-8);
        assert_relative_eq!(ctx[[0, 0]], 5.0, epsilon = 1e-7);
        assert_relative_eq!(ctx[[0, 1]], 7.0, epsilon = 1e-7);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let q = array![[0.3, -1.2], [2.0, 0.5], [0.0, 0.0]];
        let k = array![[1.0, 0.0], [0.5, -0.5], [-1.0, 2.0]];
        let v = Array2::<f64>::ones((3, 2));
        let (_, probs) = single_head_attention(&q, &k, &v);
        for row in probs.rows() {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = array![[0.5, -1.0, 2.0, 0.1], [1.5, 0.3, -0.7, 0.0]];
        let gamma = vec![1.1, 0.9, 1.3, 0.8];
        let beta = vec![0.1, -0.2, 0.0, 0.3];
        let loss = |xv: &Array2<f64>| -> f64 {
            let (y, _, _) = layer_norm(xv, &gamma, &beta);
            y.iter().enumerate().map(|(i, v)| v * (i as f64 * 0.37 - 1.0)).sum()
        };
        let (_, xhat, invstd) = layer_norm(&x, &gamma, &beta);
        let mut dy = Array2::<f64>::zeros(x.raw_dim());
        for (i, v) in dy.iter_mut().enumerate() {
            *v = i as f64 * 0.37 - 1.0;
        }
        let (dx, _, _) = layer_norm_backward(&dy, &xhat, &invstd, &gamma);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!(
                    (fd - dx[[r, c]]).abs() < 1e-5,
                    "({r},{c}): fd {fd}, analytic {}",
                    dx[[r, c]]
                );
            }
        }
    }

    #[test]
    fn mse_loss_and_gradient() {
        let out = array![[1.0], [3.0]];
        let (loss, dout) = mse_loss(&out, &[0.0, 1.0]);
        assert_relative_eq!(loss, (1.0 + 4.0) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(dout[[0, 0]], 1.0, epsilon = 1e-12);
        assert_relative_eq!(dout[[1, 0]], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_ce_on_balanced_classes_is_plain_ce() {
        let logits = array![[2.0, 0.0], [0.0, 2.0]];
        let (loss, _) = weighted_ce_loss(&logits, &[0, 1], &[1.0, 1.0]);
        let expected = -((2.0f64.exp()) / (2.0f64.exp() + 1.0)).ln();
        assert_relative_eq!(loss, expected, epsilon = 1e-12);
    }

    #[test]
    fn perfect_one_hot_predictions_drive_loss_to_zero() {
        let logits = array![[60.0, 0.0], [0.0, 60.0]];
        let (loss, _) = weighted_ce_loss(&logits, &[0, 1], &[0.5556, 5.0]);
        assert!(loss < 1e-12, "loss {loss}");
    }
}
