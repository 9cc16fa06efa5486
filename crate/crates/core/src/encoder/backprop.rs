//! Forward pass with activation caching, exact reverse-mode gradients for
//! every parameter, and the two loss heads (masked-token and CLS
//! classification). All math is plain f64 ndarray; no approximation beyond
//! the tanh form of GELU.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::head::{HeadLayer, HeadSpec};
use super::tokenizer::PAD;
use super::{EncoderModel, LayerNorm, Linear, Params};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
/// Additive score mask for PAD keys; exp(-1e30) underflows to exactly 0.
const MASK_SCORE: f64 = -1e30;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Row-wise layer-norm cache: normalized activations and inverse std-dev.
pub(crate) struct LnCache {
    xhat: Array2<f64>,
    r: Array1<f64>,
}

fn layer_norm_forward(x: &Array2<f64>, ln: &LayerNorm, eps: f64) -> (Array2<f64>, LnCache) {
    let (t, h) = x.dim();
    let mut xhat = Array2::zeros((t, h));
    let mut r = Array1::zeros(t);
    let mut y = Array2::zeros((t, h));
    for row in 0..t {
        let xr = x.row(row);
        let mean = xr.sum() / h as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let rinv = 1.0 / (var + eps).sqrt();
        r[row] = rinv;
        for col in 0..h {
            let norm = (xr[col] - mean) * rinv;
            xhat[[row, col]] = norm;
            y[[row, col]] = ln.gain[col] * norm + ln.bias[col];
        }
    }
    (y, LnCache { xhat, r })
}

/// Backward through layer norm: accumulates gain/bias gradients, returns
/// the gradient at the pre-norm input.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    ln: &LayerNorm,
    grads: &mut LayerNorm,
) -> Array2<f64> {
    let (t, h) = dy.dim();
    let mut dx = Array2::zeros((t, h));
    for row in 0..t {
        let mut m1 = 0.0; // mean of dxhat
        let mut m2 = 0.0; // mean of dxhat ⊙ xhat
        for col in 0..h {
            let dxhat = dy[[row, col]] * ln.gain[col];
            let xh = cache.xhat[[row, col]];
            grads.gain[col] += dy[[row, col]] * xh;
            grads.bias[col] += dy[[row, col]];
            m1 += dxhat;
            m2 += dxhat * xh;
        }
        m1 /= h as f64;
        m2 /= h as f64;
        let rinv = cache.r[row];
        for col in 0..h {
            let dxhat = dy[[row, col]] * ln.gain[col];
            dx[[row, col]] = rinv * (dxhat - m1 - cache.xhat[[row, col]] * m2);
        }
    }
    dx
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// d(softmax)/d(scores): `p ⊙ (dp − rowsum(dp ⊙ p))`.
fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut ds = Array2::zeros(p.dim());
    for row in 0..p.dim().0 {
        let dot: f64 = p.row(row).iter().zip(dp.row(row)).map(|(a, b)| a * b).sum();
        for col in 0..p.dim().1 {
            ds[[row, col]] = p[[row, col]] * (dp[[row, col]] - dot);
        }
    }
    ds
}

/// Per-block activation cache for the backward pass.
pub(crate) struct BlockCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln1: LnCache,
    x1: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    ln2: LnCache,
}

/// Forward-pass result: all layer outputs plus (optionally) the caches the
/// backward pass needs.
pub(crate) struct Forward {
    pub layer_outputs: Vec<Array2<f64>>,
    embed_ln: LnCache,
    blocks: Vec<BlockCache>,
}

/// Run the full encoder stack. `keep_cache` retains per-block activations
/// for [`backward`]; inference callers pass `false`.
pub(crate) fn forward(model: &EncoderModel, tokens: &[u32], keep_cache: bool) -> Result<Forward> {
    model.validate_tokens(tokens)?;
    let cfg = &model.config;
    let p = &model.params;
    let (t, h) = (tokens.len(), cfg.hidden_dim);
    let (heads, dh) = (cfg.num_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x0 = Array2::zeros((t, h));
    for (row, &id) in tokens.iter().enumerate() {
        for col in 0..h {
            x0[[row, col]] = p.tok[[id as usize, col]] + p.pos[[row, col]];
        }
    }
    let (embedded, embed_ln) = layer_norm_forward(&x0, &p.embed_ln, cfg.layer_norm_eps);

    let pad_key: Vec<bool> = tokens.iter().map(|&id| id == PAD).collect();
    let mut layer_outputs = vec![embedded];
    let mut blocks = Vec::new();

    for block in &p.blocks {
        let x = layer_outputs.last().expect("embedding layer present");
        let q = block.q.forward(x);
        let k = block.k.forward(x);
        let v = block.v.forward(x);

        let mut ctx = Array2::zeros((t, h));
        let mut probs = Vec::with_capacity(heads);
        for head in 0..heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            for (j, &is_pad) in pad_key.iter().enumerate() {
                if is_pad {
                    scores.column_mut(j).fill(MASK_SCORE);
                }
            }
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            if keep_cache {
                probs.push(scores);
            }
        }
        let attn_out = block.o.forward(&ctx);

        let r1 = x + &attn_out;
        let (x1, ln1) = layer_norm_forward(&r1, &block.ln1, cfg.layer_norm_eps);

        let u = block.ffn1.forward(&x1);
        let g = u.mapv(gelu);
        let ffn_out = block.ffn2.forward(&g);

        let r2 = &x1 + &ffn_out;
        let (x2, ln2) = layer_norm_forward(&r2, &block.ln2, cfg.layer_norm_eps);

        if keep_cache {
            blocks.push(BlockCache {
                x_in: x.clone(),
                q,
                k,
                v,
                probs,
                ctx,
                ln1,
                x1,
                u,
                g,
                ln2,
            });
        }
        layer_outputs.push(x2);
    }

    Ok(Forward {
        layer_outputs,
        embed_ln,
        blocks,
    })
}

/// Backpropagate `d_last` (gradient at the final layer output) through the
/// whole stack, accumulating parameter gradients into `grads`.
pub(crate) fn backward(
    model: &EncoderModel,
    tokens: &[u32],
    fwd: &Forward,
    d_last: Array2<f64>,
    grads: &mut Params,
) {
    assert_eq!(
        fwd.blocks.len(),
        model.params.blocks.len(),
        "backward needs a cached forward pass"
    );
    let cfg = &model.config;
    let (heads, dh) = (cfg.num_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = d_last;
    for (bi, cache) in fwd.blocks.iter().enumerate().rev() {
        let block = &model.params.blocks[bi];
        let gb = &mut grads.blocks[bi];

        // x2 = LN2(x1 + ffn_out)
        let dr2 = layer_norm_backward(&dx, &cache.ln2, &block.ln2, &mut gb.ln2);
        let mut dx1 = dr2.clone();

        // ffn_out = gelu(x1·W1ᵀ+b1)·W2ᵀ+b2
        let dfo = dr2;
        gb.ffn2.w += &dfo.t().dot(&cache.g);
        gb.ffn2.b += &dfo.sum_axis(Axis(0));
        let dg = dfo.dot(&block.ffn2.w);
        let du = &dg * &cache.u.mapv(gelu_prime);
        gb.ffn1.w += &du.t().dot(&cache.x1);
        gb.ffn1.b += &du.sum_axis(Axis(0));
        dx1 += &du.dot(&block.ffn1.w);

        // x1 = LN1(x_in + attn_out)
        let dr1 = layer_norm_backward(&dx1, &cache.ln1, &block.ln1, &mut gb.ln1);
        let mut dx_in = dr1.clone();

        // attn_out = ctx·Woᵀ+bo
        let da = dr1;
        gb.o.w += &da.t().dot(&cache.ctx);
        gb.o.b += &da.sum_axis(Axis(0));
        let dctx = da.dot(&block.o.w);

        let (t, h) = dctx.dim();
        let mut dq = Array2::zeros((t, h));
        let mut dk = Array2::zeros((t, h));
        let mut dv = Array2::zeros((t, h));
        for head in 0..heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let p = &cache.probs[head];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&cache.v.slice(cols).t());
            {
                let mut dv_h = dv.slice_mut(cols);
                dv_h += &p.t().dot(&dctx_h);
            }
            let mut ds = softmax_backward(p, &dp);
            ds *= scale;
            {
                let mut dq_h = dq.slice_mut(cols);
                dq_h += &ds.dot(&cache.k.slice(cols));
            }
            {
                let mut dk_h = dk.slice_mut(cols);
                dk_h += &ds.t().dot(&cache.q.slice(cols));
            }
        }

        for (lin, glin, dout) in [
            (&block.q, &mut gb.q, &dq),
            (&block.k, &mut gb.k, &dk),
            (&block.v, &mut gb.v, &dv),
        ] {
            glin.w += &dout.t().dot(&cache.x_in);
            glin.b += &dout.sum_axis(Axis(0));
            dx_in += &dout.dot(&lin.w);
        }

        dx = dx_in;
    }

    // embedding output = LN_embed(tok[id] + pos[t])
    let dx0 = layer_norm_backward(&dx, &fwd.embed_ln, &model.params.embed_ln, &mut grads.embed_ln);
    for (row, &id) in tokens.iter().enumerate() {
        let mut tok_row = grads.tok.row_mut(id as usize);
        tok_row += &dx0.row(row);
        let mut pos_row = grads.pos.row_mut(row);
        pos_row += &dx0.row(row);
    }
}

/// Numerically stable cross-entropy over one logit row; returns the loss
/// and writes `softmax − onehot` (times `scale`) into `dlogits`.
fn cross_entropy(logits: &Array1<f64>, target: usize, scale: f64, dlogits: &mut Array1<f64>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &z in logits {
        sum += (z - max).exp();
    }
    let lse = max + sum.ln();
    for i in 0..logits.len() {
        let p = (logits[i] - lse).exp();
        dlogits[i] = scale * (p - f64::from(i == target));
    }
    lse - logits[target]
}

/// Masked-token loss: sum of cross-entropies at `targets` positions of the
/// (already masked) `tokens`, with gradients of `scale · sum` accumulated
/// when `grads` is given.
pub(crate) fn mlm_loss_and_grad(
    model: &EncoderModel,
    tokens: &[u32],
    targets: &[(usize, u32)],
    scale: f64,
    grads: Option<&mut Params>,
) -> Result<f64> {
    let fwd = forward(model, tokens, grads.is_some())?;
    let last = fwd.layer_outputs.last().expect("layers present");
    let mut loss = 0.0;
    let mut d_last = Array2::zeros(last.dim());
    let mut dlogits = Array1::zeros(model.config.vocab_size);
    let mut accum: Option<(&mut Params, Array2<f64>, Array1<f64>)> = grads.map(|g| {
        let dw = Array2::zeros(model.params.mlm.w.dim());
        let db = Array1::zeros(model.params.mlm.b.len());
        (g, dw, db)
    });
    for &(pos, original) in targets {
        let hrow = last.row(pos).to_owned();
        let logits = model.params.mlm.w.dot(&hrow) + &model.params.mlm.b;
        loss += cross_entropy(&logits, original as usize, scale, &mut dlogits);
        if let Some((_, dw, db)) = accum.as_mut() {
            for i in 0..dlogits.len() {
                let d = dlogits[i];
                if d != 0.0 {
                    let mut row = dw.row_mut(i);
                    row.scaled_add(d, &hrow);
                }
            }
            *db += &dlogits;
            let mut drow = d_last.row_mut(pos);
            drow += &model.params.mlm.w.t().dot(&dlogits);
        }
    }
    if let Some((g, dw, db)) = accum {
        g.mlm.w += &dw;
        g.mlm.b += &db;
        backward(model, tokens, &fwd, d_last, g);
    }
    Ok(loss)
}

/// One classification-head layer's parameters (`None` ↦ dropout gate).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum HeadPiece {
    Dense(Linear),
    Dropout(f64),
}

/// Instantiated classification head: the spec's layers plus the implicit
/// terminal projection to 2 logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub(crate) pieces: Vec<HeadPiece>,
    pub(crate) out: Linear,
}

impl HeadParams {
    /// Deterministic initialization for `input_dim`-wide CLS vectors.
    pub fn init(spec: &HeadSpec, input_dim: usize, seed: u64) -> crate::error::Result<HeadParams> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dim = input_dim;
        let mut pieces = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            match *layer {
                HeadLayer::Dense(w) => {
                    pieces.push(HeadPiece::Dense(Linear::init(w, dim, &mut rng)));
                    dim = w;
                }
                HeadLayer::Dropout(p) => pieces.push(HeadPiece::Dropout(p)),
            }
        }
        Ok(HeadParams {
            pieces,
            out: Linear::init(2, dim, &mut rng),
        })
    }

    pub(crate) fn zeros_like(&self) -> HeadParams {
        HeadParams {
            pieces: self
                .pieces
                .iter()
                .map(|p| match p {
                    HeadPiece::Dense(l) => {
                        HeadPiece::Dense(Linear::zeros(l.w.dim().0, l.w.dim().1))
                    }
                    HeadPiece::Dropout(p) => HeadPiece::Dropout(*p),
                })
                .collect(),
            out: Linear::zeros(self.out.w.dim().0, self.out.w.dim().1),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, piece) in self.pieces.iter().enumerate() {
            if let HeadPiece::Dense(l) = piece {
                out.push((format!("head.dense{i}.w"), l.w.as_slice().unwrap()));
                out.push((format!("head.dense{i}.b"), l.b.as_slice().unwrap()));
            }
        }
        out.push(("head.out.w".into(), self.out.w.as_slice().unwrap()));
        out.push(("head.out.b".into(), self.out.b.as_slice().unwrap()));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (i, piece) in self.pieces.iter_mut().enumerate() {
            if let HeadPiece::Dense(l) = piece {
                out.push((format!("head.dense{i}.w"), l.w.as_slice_mut().unwrap()));
                out.push((format!("head.dense{i}.b"), l.b.as_slice_mut().unwrap()));
            }
        }
        out.push(("head.out.w".into(), self.out.w.as_slice_mut().unwrap()));
        out.push(("head.out.b".into(), self.out.b.as_slice_mut().unwrap()));
        out
    }

    pub(crate) fn apply_gradients(&mut self, grads: &HeadParams, lr: f64) {
        let g = grads.tensors();
        for ((name, p), (gname, gv)) in self.tensors_mut().into_iter().zip(g) {
            debug_assert_eq!(name, gname);
            for (pi, gi) in p.iter_mut().zip(gv) {
                *pi -= lr * gi;
            }
        }
    }
}

/// Classification loss over the final-layer CLS vector. Dropout fires only
/// when `dropout_rng` is given (training); gradients of `scale · loss`
/// accumulate when `grads` is given. Returns (loss, prediction-correct).
pub(crate) fn cls_loss_and_grad(
    model: &EncoderModel,
    head: &HeadParams,
    tokens: &[u32],
    label: u8,
    scale: f64,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    grads: Option<(&mut Params, &mut HeadParams)>,
) -> Result<(f64, bool)> {
    if label > 1 {
        return Err(Error::InvalidParameter(format!(
            "label must be 0 or 1, got {label}"
        )));
    }
    let keep = grads.is_some();
    let fwd = forward(model, tokens, keep)?;
    let last = fwd.layer_outputs.last().expect("layers present");

    // Head forward over a 1×d activation row, caching pre-activations and
    // dropout masks.
    let mut act = last.slice(s![0..1, ..]).to_owned();
    let mut inputs: Vec<Array2<f64>> = Vec::new(); // input to each dense
    let mut pre: Vec<Array2<f64>> = Vec::new(); // dense pre-activations
    let mut masks: Vec<Option<Array2<f64>>> = Vec::new(); // dropout masks
    for piece in &head.pieces {
        match piece {
            HeadPiece::Dense(lin) => {
                inputs.push(act.clone());
                let z = lin.forward(&act);
                pre.push(z.clone());
                act = z.mapv(gelu);
                masks.push(None);
            }
            HeadPiece::Dropout(p) => {
                inputs.push(Array2::zeros((0, 0)));
                pre.push(Array2::zeros((0, 0)));
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep_p = 1.0 - p;
                    let mask = act.mapv(|_| {
                        if rng.gen_range(0.0..1.0) < keep_p {
                            1.0 / keep_p
                        } else {
                            0.0
                        }
                    });
                    act = &act * &mask;
                    masks.push(Some(mask));
                } else {
                    masks.push(None);
                }
            }
        }
    }
    let head_input = act.clone();
    let logits2 = head.out.forward(&act);
    let logits = logits2.row(0).to_owned();
    let mut dlogits = Array1::zeros(2);
    let loss = cross_entropy(&logits, label as usize, scale, &mut dlogits);
    let predicted = u8::from(logits[1] > logits[0]);

    if let Some((enc_grads, head_grads)) = grads {
        // Terminal projection.
        let dlog2 = dlogits.clone().insert_axis(Axis(0));
        head_grads.out.w += &dlog2.t().dot(&head_input);
        head_grads.out.b += &dlogits;
        let mut dact = dlog2.dot(&head.out.w);

        for (i, piece) in head.pieces.iter().enumerate().rev() {
            match piece {
                HeadPiece::Dense(lin) => {
                    let HeadPiece::Dense(glin) = &mut head_grads.pieces[i] else {
                        unreachable!("gradient head mirrors parameter head");
                    };
                    let dz = &dact * &pre[i].mapv(gelu_prime);
                    glin.w += &dz.t().dot(&inputs[i]);
                    glin.b += &dz.sum_axis(Axis(0));
                    dact = dz.dot(&lin.w);
                }
                HeadPiece::Dropout(_) => {
                    if let Some(mask) = &masks[i] {
                        dact = &dact * mask;
                    }
                }
            }
        }

        let mut d_last = Array2::zeros(last.dim());
        d_last.slice_mut(s![0..1, ..]).assign(&dact);
        backward(model, tokens, &fwd, d_last, enc_grads);
    }

    Ok((loss, predicted == label))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{toy_config, toy_vocab};
    use super::super::{init_encoder, parse_head_spec};
    use super::*;

    #[test]
    fn gelu_matches_reference_points() {
        assert!((gelu(0.0)).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841192).abs() < 1e-5);
        assert!((gelu(-1.0) + 0.158808).abs() < 1e-5);
        // Derivative against central differences.
        for x in [-2.0, -0.5, 0.0, 0.3, 1.7] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_prime(x) - fd).abs() < 1e-8, "gelu'({x})");
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut s = ndarray::arr2(&[[1.0, 2.0, 3.0], [-1e30, 0.0, 0.0]]);
        softmax_rows(&mut s);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(s[[1, 0]], 0.0);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let x = ndarray::arr2(&[[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]]);
        let ln = LayerNorm::identity(4);
        let (y, _) = layer_norm_forward(&x, &ln, 0.0);
        for row in y.rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_keys_get_no_attention() {
        let vocab = toy_vocab();
        let model = init_encoder(toy_config(&vocab), vocab).unwrap();
        let tokens = [2u32, 6, 7, 3, 0, 0]; // CLS w1 w2 SEP PAD PAD
        let fwd = forward(&model, &tokens, true).unwrap();
        for cache in &fwd.blocks {
            for p in &cache.probs {
                for row in p.rows() {
                    assert_eq!(row[4], 0.0);
                    assert_eq!(row[5], 0.0);
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mlm_loss_is_finite_and_positive() {
        let vocab = toy_vocab();
        let model = init_encoder(toy_config(&vocab), vocab).unwrap();
        let tokens = [2u32, 4, 6, 3]; // CLS MASK w1 SEP
        let loss = mlm_loss_and_grad(&model, &tokens, &[(1, 7)], 1.0, None).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        // With gradients requested, the loss value is identical.
        let mut grads = Params::zeros(&model.config);
        let loss2 = mlm_loss_and_grad(&model, &tokens, &[(1, 7)], 1.0, Some(&mut grads)).unwrap();
        assert_eq!(loss, loss2);
        // Untouched positions produce no mlm-bias gradient mass beyond the
        // masked row's softmax (which sums to ~0 per row of dlogits).
        assert!(grads.mlm.b.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn cls_loss_reports_correctness() {
        let vocab = toy_vocab();
        let model = init_encoder(toy_config(&vocab), vocab).unwrap();
        let head = HeadParams::init(&parse_head_spec("Dense(6)").unwrap(), 8, 3).unwrap();
        let tokens = model.tokenize("w1 w2");
        let (loss, _) = cls_loss_and_grad(&model, &head, &tokens, 1, 1.0, None, None).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        // Loss for the two labels differs (the head is not degenerate).
        let (loss0, _) = cls_loss_and_grad(&model, &head, &tokens, 0, 1.0, None, None).unwrap();
        assert_ne!(loss, loss0);
    }

    #[test]
    fn dropout_fires_only_with_rng() {
        let vocab = toy_vocab();
        let model = init_encoder(toy_config(&vocab), vocab).unwrap();
        let head = HeadParams::init(&parse_head_spec("Dense(16)+dr(0.5)").unwrap(), 8, 3).unwrap();
        let tokens = model.tokenize("w1 w2 w3");
        let (a, _) = cls_loss_and_grad(&model, &head, &tokens, 1, 1.0, None, None).unwrap();
        let (b, _) = cls_loss_and_grad(&model, &head, &tokens, 1, 1.0, None, None).unwrap();
        assert_eq!(a, b, "inference path must be deterministic");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, _) =
            cls_loss_and_grad(&model, &head, &tokens, 1, 1.0, Some(&mut rng), None).unwrap();
        // With p=0.5 over 16 units the dropped activation almost surely
        // changes the loss.
        assert_ne!(a, c, "dropout should perturb the training loss");
    }
}
