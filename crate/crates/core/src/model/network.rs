use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BlockParams, Inception, Params};
use super::periods::{amplitude_gradient, detect_periods, PeriodSet};
use super::{ModelConfig, ProbSequence};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Eval disables dropout. Train draws dropout masks from the given stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub(crate) fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        }
    }
}

/// Fixed sinusoidal encoding, row `t` for timestep `t` (0-based).
pub fn positional_encoding(len: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, width), |(t, j)| {
        let i = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / width as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

// ---- convolution on a period grid ----
//
// A grid of `rows × cols` cells is stored as a (rows*cols) × channels
// matrix, cell (r, c) at row r*cols + c. Padding is zero ("same" size).

fn im2col(input: ArrayView2<f64>, rows: usize, cols: usize, k: usize) -> Array2<f64> {
    let c_in = input.ncols();
    let h = (k / 2) as isize;
    let mut out = Array2::zeros((rows * cols, k * k * c_in));
    for r in 0..rows {
        for c in 0..cols {
            let cell = r * cols + c;
            for dr in 0..k {
                let rr = r as isize + dr as isize - h;
                if rr < 0 || rr >= rows as isize {
                    continue;
                }
                for dc in 0..k {
                    let cc = c as isize + dc as isize - h;
                    if cc < 0 || cc >= cols as isize {
                        continue;
                    }
                    let src = rr as usize * cols + cc as usize;
                    let off = (dr * k + dc) * c_in;
                    out.slice_mut(s![cell, off..off + c_in]).assign(&input.row(src));
                }
            }
        }
    }
    out
}

fn col2im(dpatch: ArrayView2<f64>, rows: usize, cols: usize, k: usize, c_in: usize) -> Array2<f64> {
    let h = (k / 2) as isize;
    let mut out = Array2::zeros((rows * cols, c_in));
    for r in 0..rows {
        for c in 0..cols {
            let cell = r * cols + c;
            for dr in 0..k {
                let rr = r as isize + dr as isize - h;
                if rr < 0 || rr >= rows as isize {
                    continue;
                }
                for dc in 0..k {
                    let cc = c as isize + dc as isize - h;
                    if cc < 0 || cc >= cols as isize {
                        continue;
                    }
                    let dst = rr as usize * cols + cc as usize;
                    let off = (dr * k + dc) * c_in;
                    let mut row = out.row_mut(dst);
                    row += &dpatch.slice(s![cell, off..off + c_in]);
                }
            }
        }
    }
    out
}

fn inception_forward(inc: &Inception, input: ArrayView2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let scale = 1.0 / inc.convs.len() as f64;
    let mut out = Array2::zeros((input.nrows(), inc.convs[0].c_out()));
    for conv in &inc.convs {
        let mut y = if conv.kernel == 1 {
            input.dot(&conv.weight)
        } else {
            im2col(input, rows, cols, conv.kernel).dot(&conv.weight)
        };
        y += &conv.bias;
        out.scaled_add(scale, &y);
    }
    out
}

fn inception_backward(
    inc: &Inception,
    grads: &mut Inception,
    input: ArrayView2<f64>,
    rows: usize,
    cols: usize,
    dout: ArrayView2<f64>,
) -> Array2<f64> {
    let scale = 1.0 / inc.convs.len() as f64;
    let d = dout.mapv(|v| v * scale);
    let mut din = Array2::zeros(input.raw_dim());
    for (conv, g) in inc.convs.iter().zip(grads.convs.iter_mut()) {
        g.bias += &d.sum_axis(Axis(0));
        if conv.kernel == 1 {
            g.weight += &input.t().dot(&d);
            din += &d.dot(&conv.weight.t());
        } else {
            let patches = im2col(input, rows, cols, conv.kernel);
            g.weight += &patches.t().dot(&d);
            let dpatch = d.dot(&conv.weight.t());
            din += &col2im(dpatch.view(), rows, cols, conv.kernel, conv.c_in());
        }
    }
    din
}

// ---- TimesBlock ----

pub(crate) struct BranchTrace {
    period: usize,
    padded: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    out: Array2<f64>,
}

pub(crate) struct BlockTrace {
    pub(crate) periods: PeriodSet,
    weights: Vec<f64>,
    branches: Vec<BranchTrace>,
}

fn block_forward(x: ArrayView2<f64>, bp: &BlockParams, cfg: &ModelConfig) -> Result<(Array2<f64>, BlockTrace)> {
    let (l, d) = x.dim();
    if d != cfg.d_model {
        return Err(Error::shape("times_block", format!("L × {}", cfg.d_model), format!("{l} × {d}")));
    }
    let periods = detect_periods(x, cfg.top_k)?;
    let amps = periods.amplitudes();
    let m = amps.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = amps.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let weights: Vec<f64> = e.iter().map(|v| v / z).collect();

    let mut y = x.to_owned();
    let mut branches = Vec::with_capacity(periods.0.len());
    for (entry, &w) in periods.0.iter().zip(&weights) {
        let p = entry.period;
        let rows = l.div_ceil(p);
        let mut padded = Array2::zeros((rows * p, d));
        padded.slice_mut(s![..l, ..]).assign(&x);
        let pre = inception_forward(&bp.conv_in, padded.view(), rows, p);
        let act = pre.mapv(|v| cfg.inner_activation.apply(v));
        let full = inception_forward(&bp.conv_out, act.view(), rows, p);
        let out = full.slice(s![..l, ..]).to_owned();
        y.scaled_add(w, &out);
        branches.push(BranchTrace {
            period: p,
            padded,
            pre,
            act,
            out,
        });
    }
    Ok((
        y,
        BlockTrace {
            periods,
            weights,
            branches,
        },
    ))
}

fn block_backward(
    x: ArrayView2<f64>,
    bp: &BlockParams,
    grads: &mut BlockParams,
    cfg: &ModelConfig,
    trace: &BlockTrace,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let (l, d) = x.dim();
    let mut dx = dy.to_owned();
    let mut dw = Vec::with_capacity(trace.branches.len());
    for (br, &w) in trace.branches.iter().zip(&trace.weights) {
        dw.push((&dy * &br.out).sum());
        let rows = l.div_ceil(br.period);
        let mut dfull = Array2::zeros((rows * br.period, d));
        dfull.slice_mut(s![..l, ..]).assign(&dy.mapv(|v| v * w));
        let dact = inception_backward(&bp.conv_out, &mut grads.conv_out, br.act.view(), rows, br.period, dfull.view());
        let dpre = &dact * &br.pre.mapv(|v| cfg.inner_activation.derivative(v));
        let dpad = inception_backward(&bp.conv_in, &mut grads.conv_in, br.padded.view(), rows, br.period, dpre.view());
        dx += &dpad.slice(s![..l, ..]);
    }
    // softmax over amplitudes, then amplitudes back to x
    let mean: f64 = trace.weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
    for ((entry, &w), g) in trace.periods.0.iter().zip(&trace.weights).zip(&dw) {
        if let Some(f) = entry.frequency {
            let da = w * (g - mean);
            if da != 0.0 {
                dx.scaled_add(da, &amplitude_gradient(x, f));
            }
        }
    }
    dx
}

/// One TimesBlock with its residual connection. Output shape equals input.
pub fn times_block_forward(x: ArrayView2<f64>, block: &BlockParams, cfg: &ModelConfig) -> Result<Array2<f64>> {
    block_forward(x, block, cfg).map(|(y, _)| y)
}

// ---- layer norm ----

struct NormTrace {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(y: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, NormTrace) {
    let d = y.ncols() as f64;
    let mut xhat = y.clone();
    let mut inv_std = Array1::zeros(y.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mu = row.sum() / d;
        row.mapv_inplace(|v| v - mu);
        let var = row.fold(0.0, |a, v| a + v * v) / d;
        *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let out = &xhat * gamma + beta;
    (out, NormTrace { xhat, inv_std })
}

fn layer_norm_backward(
    trace: &NormTrace,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
    dout: &Array2<f64>,
) -> Array2<f64> {
    *dgamma += &(dout * &trace.xhat).sum_axis(Axis(0));
    *dbeta += &dout.sum_axis(Axis(0));
    let dxhat = dout * gamma;
    let d = dout.ncols() as f64;
    let mut dy = Array2::zeros(dout.raw_dim());
    for (i, mut row) in dy.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(i);
        let xh = trace.xhat.row(i);
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        let inv = trace.inv_std[i];
        for j in 0..row.len() {
            row[j] = inv / d * (d * g[j] - sum_g - xh[j] * sum_gx);
        }
    }
    dy
}

// ---- full network ----

pub(crate) struct Trace {
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
    block_inputs: Vec<Array2<f64>>,
    pub(crate) blocks: Vec<BlockTrace>,
    norms: Vec<NormTrace>,
    enc: Array2<f64>,
    z: Array2<f64>,
    pub(crate) probs: Array2<f64>,
}

fn check_input(x: ArrayView2<f64>, cfg: &ModelConfig, exact_len: bool) -> Result<()> {
    let (l, f) = x.dim();
    if f != cfg.input_dim || (exact_len && l != cfg.lookback) {
        let rows = if exact_len { cfg.lookback.to_string() } else { "L".into() };
        return Err(Error::shape("embed", format!("{rows} × {}", cfg.input_dim), format!("{l} × {f}")));
    }
    Ok(())
}

fn embed_parts(
    x: ArrayView2<f64>,
    params: &Params,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> (Array2<f64>, Option<Array2<f64>>, Array2<f64>) {
    let mut u = x.dot(&params.embed_w);
    u += &params.embed_b;
    let act = u.mapv(f64::tanh);
    let mask = match mode.rng() {
        Some(rng) if cfg.dropout > 0.0 => {
            let keep = 1.0 / (1.0 - cfg.dropout);
            Some(act.map(|_| if rng.random::<f64>() < cfg.dropout { 0.0 } else { keep }))
        }
        _ => None,
    };
    let mut enc = match &mask {
        Some(m) => &act * m,
        None => act.clone(),
    };
    enc += &positional_encoding(x.nrows(), cfg.d_model);
    (act, mask, enc)
}

/// `Dropout(tanh(x W + b)) + E`, one row per timestep.
pub fn embed(x: ArrayView2<f64>, params: &Params, cfg: &ModelConfig, mut mode: Mode) -> Result<Array2<f64>> {
    check_input(x, cfg, false)?;
    Ok(embed_parts(x, params, cfg, &mut mode).2)
}

pub(crate) fn forward_trace(x: ArrayView2<f64>, params: &Params, cfg: &ModelConfig, mode: &mut Mode) -> Result<Trace> {
    check_input(x, cfg, true)?;
    let (act, mask, mut h) = embed_parts(x, params, cfg, mode);
    let mut block_inputs = Vec::with_capacity(params.blocks.len());
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let mut norms = Vec::with_capacity(params.blocks.len());
    for bp in &params.blocks {
        let (y, bt) = block_forward(h.view(), bp, cfg)?;
        let (out, nt) = layer_norm(&y, &bp.norm_gamma, &bp.norm_beta);
        block_inputs.push(std::mem::replace(&mut h, out));
        blocks.push(bt);
        norms.push(nt);
    }
    let mut z = params.proj_w.dot(&h);
    z += &params.proj_b.view().insert_axis(Axis(1));
    let mut logits = z.dot(&params.head_w);
    logits += &params.head_b;
    let probs = softmax_rows(logits.view());
    Ok(Trace {
        act,
        mask,
        block_inputs,
        blocks,
        norms,
        enc: h,
        z,
        probs,
    })
}

/// Accumulates parameter gradients into `grads` given d loss / d logits.
pub(crate) fn backward(
    x: ArrayView2<f64>,
    params: &Params,
    cfg: &ModelConfig,
    trace: &Trace,
    dlogits: &Array2<f64>,
    grads: &mut Params,
) {
    grads.head_w += &trace.z.t().dot(dlogits);
    grads.head_b += &dlogits.sum_axis(Axis(0));
    let dz = dlogits.dot(&params.head_w.t());
    grads.proj_w += &dz.dot(&trace.enc.t());
    grads.proj_b += &dz.sum_axis(Axis(1));
    let mut dh = params.proj_w.t().dot(&dz);
    for i in (0..params.blocks.len()).rev() {
        let bp = &params.blocks[i];
        let g = &mut grads.blocks[i];
        let dy = layer_norm_backward(&trace.norms[i], &bp.norm_gamma, &mut g.norm_gamma, &mut g.norm_beta, &dh);
        dh = block_backward(trace.block_inputs[i].view(), bp, g, cfg, &trace.blocks[i], dy.view());
    }
    if let Some(m) = &trace.mask {
        dh *= m;
    }
    let du = &dh * &trace.act.mapv(|a| 1.0 - a * a);
    grads.embed_w += &x.t().dot(&du);
    grads.embed_b += &du.sum_axis(Axis(0));
}

/// Window features (L × input_dim) to per-step camera probabilities.
pub fn forward(x: ArrayView2<f64>, params: &Params, cfg: &ModelConfig, mut mode: Mode) -> Result<ProbSequence> {
    forward_trace(x, params, cfg, &mut mode).map(|t| ProbSequence(t.probs))
}
