//! The trainable encoder-decoder network: an optional conv/max-pool raw
//! signal front end, one or two GRU layers, a per-timestep dense + softmax
//! decoder, full backpropagation through time and an Adam optimizer.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network config: {0}")]
    Config(String),
}

/// Encoder layout; the raw front end adds conv1d -> maxpool -> conv1d ->
/// maxpool in front of the GRU stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub use_raw_front_end: bool,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub input_dim: usize,
    pub vocab_size_with_blank: usize,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, gru_hidden: usize, gru_layers: usize, vocab: usize) -> Self {
        Self {
            use_raw_front_end: false,
            conv_filters: 100,
            conv_kernel: 3,
            pool_size: 2,
            pool_stride: 1,
            gru_layers,
            gru_hidden,
            input_dim,
            vocab_size_with_blank: vocab,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let all_positive = self.conv_filters > 0
            && self.conv_kernel > 0
            && self.pool_size > 0
            && self.pool_stride > 0
            && self.gru_layers > 0
            && self.gru_hidden > 0
            && self.input_dim > 0;
        if !all_positive {
            return Err(NetError::Config("all sizes must be positive".into()));
        }
        if self.vocab_size_with_blank < 2 {
            return Err(NetError::Config("vocab (with blank) must be >= 2".into()));
        }
        Ok(())
    }

    fn gru_input_dim(&self, layer: usize) -> usize {
        if layer > 0 {
            self.gru_hidden
        } else if self.use_raw_front_end {
            self.conv_filters
        } else {
            self.input_dim
        }
    }
}

pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    /// `[filters x kernel*d_in]`, patch laid out time-major.
    pub w: Tensor,
    /// `[filters x 1]`.
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub w: Tensor,
    pub b: Tensor,
}

/// Every trainable tensor of the model, without optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub conv: Vec<ConvWeights>,
    pub gru: Vec<GruWeights>,
    pub dense: DenseWeights,
}

impl ParamSet {
    /// Named tensors in a fixed serialization order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.w"), &c.w));
            out.push((format!("conv{i}.b"), &c.b));
        }
        for (i, g) in self.gru.iter().enumerate() {
            for (name, t) in [
                ("wz", &g.wz),
                ("uz", &g.uz),
                ("bz", &g.bz),
                ("wr", &g.wr),
                ("ur", &g.ur),
                ("br", &g.br),
                ("wh", &g.wh),
                ("uh", &g.uh),
                ("bh", &g.bh),
            ] {
                out.push((format!("gru{i}.{name}"), t));
            }
        }
        out.push(("dense.w".into(), &self.dense.w));
        out.push(("dense.b".into(), &self.dense.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{i}.w"), &mut c.w));
            out.push((format!("conv{i}.b"), &mut c.b));
        }
        for (i, g) in self.gru.iter_mut().enumerate() {
            for (name, t) in [
                ("wz", &mut g.wz),
                ("uz", &mut g.uz),
                ("bz", &mut g.bz),
                ("wr", &mut g.wr),
                ("ur", &mut g.ur),
                ("br", &mut g.br),
                ("wh", &mut g.wh),
                ("uh", &mut g.uh),
                ("bh", &mut g.bh),
            ] {
                out.push((format!("gru{i}.{name}"), t));
            }
        }
        out.push(("dense.w".into(), &mut self.dense.w));
        out.push(("dense.b".into(), &mut self.dense.b));
        out
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            conv: self
                .conv
                .iter()
                .map(|c| ConvWeights {
                    w: Array2::zeros(c.w.raw_dim()),
                    b: Array2::zeros(c.b.raw_dim()),
                })
                .collect(),
            gru: self
                .gru
                .iter()
                .map(|g| GruWeights {
                    wz: Array2::zeros(g.wz.raw_dim()),
                    uz: Array2::zeros(g.uz.raw_dim()),
                    bz: Array2::zeros(g.bz.raw_dim()),
                    wr: Array2::zeros(g.wr.raw_dim()),
                    ur: Array2::zeros(g.ur.raw_dim()),
                    br: Array2::zeros(g.br.raw_dim()),
                    wh: Array2::zeros(g.wh.raw_dim()),
                    uh: Array2::zeros(g.uh.raw_dim()),
                    bh: Array2::zeros(g.bh.raw_dim()),
                })
                .collect(),
            dense: DenseWeights {
                w: Array2::zeros(self.dense.w.raw_dim()),
                b: Array2::zeros(self.dense.b.raw_dim()),
            },
        }
    }
}

/// Adam first/second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

/// Trainable tensors plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: ParamSet,
    pub adam: AdamState,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

/// Glorot-uniform weights, zero biases; deterministic in the seed.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams, NetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Vec::new();
    if config.use_raw_front_end {
        for layer in 0..2 {
            let d_in = if layer == 0 {
                config.input_dim
            } else {
                config.conv_filters
            };
            let cols = config.conv_kernel * d_in;
            conv.push(ConvWeights {
                w: glorot(&mut rng, config.conv_filters, cols, cols, config.conv_filters),
                b: Array2::zeros((config.conv_filters, 1)),
            });
        }
    }
    let mut gru = Vec::new();
    for layer in 0..config.gru_layers {
        let d_in = config.gru_input_dim(layer);
        let h = config.gru_hidden;
        let mut gate = |ins: usize| glorot(&mut rng, h, ins, ins, h);
        let (wz, uz) = (gate(d_in), gate(h));
        let (wr, ur) = (gate(d_in), gate(h));
        let (wh, uh) = (gate(d_in), gate(h));
        gru.push(GruWeights {
            wz,
            uz,
            bz: Array2::zeros((h, 1)),
            wr,
            ur,
            br: Array2::zeros((h, 1)),
            wh,
            uh,
            bh: Array2::zeros((h, 1)),
        });
    }
    let v = config.vocab_size_with_blank;
    let dense = DenseWeights {
        w: glorot(&mut rng, v, config.gru_hidden, config.gru_hidden, v),
        b: Array2::zeros((v, 1)),
    };
    let weights = ParamSet { conv, gru, dense };
    let zeros = weights.zeros_like();
    Ok(NetworkParams {
        adam: AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        },
        weights,
    })
}

/// Same-padded temporal convolution followed by ReLU; output length equals
/// input length.
pub fn conv1d_same(input: &Array2<f64>, kernels: &Tensor, biases: &Tensor) -> Array2<f64> {
    let (pre, _) = conv1d_same_pre(input, kernels, biases);
    pre.mapv(|v| v.max(0.0))
}

/// Pre-activation convolution plus the ReLU output, for the backward pass.
fn conv1d_same_pre(
    input: &Array2<f64>,
    kernels: &Tensor,
    biases: &Tensor,
) -> (Array2<f64>, Array2<f64>) {
    let t_len = input.nrows();
    let d_in = input.ncols();
    let filters = kernels.nrows();
    let k = kernels.ncols() / d_in;
    let left = (k - 1) / 2;
    let mut pre = Array2::zeros((t_len, filters));
    for t in 0..t_len {
        for f in 0..filters {
            let mut acc = biases[(f, 0)];
            for j in 0..k {
                let src = t as isize + j as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue; // zero padding
                }
                for d in 0..d_in {
                    acc += kernels[(f, j * d_in + d)] * input[(src as usize, d)];
                }
            }
            pre[(t, f)] = acc;
        }
    }
    let out = pre.mapv(|v: f64| v.max(0.0));
    (pre, out)
}

/// Same-padded temporal max pooling; padding positions are excluded from the
/// max, so the window at t covers `[t*stride, min(t*stride+pool, T))`.
pub fn maxpool1d_same(input: &Array2<f64>, pool: usize, stride: usize) -> Array2<f64> {
    maxpool1d_same_traced(input, pool, stride).0
}

fn maxpool1d_same_traced(
    input: &Array2<f64>,
    pool: usize,
    stride: usize,
) -> (Array2<f64>, Vec<Vec<usize>>) {
    let t_len = input.nrows();
    let d = input.ncols();
    let out_len = t_len.div_ceil(stride);
    let mut out = Array2::zeros((out_len, d));
    let mut src = vec![vec![0usize; d]; out_len];
    for o in 0..out_len {
        let start = o * stride;
        let end = (start + pool).min(t_len);
        for c in 0..d {
            let (mut best_t, mut best) = (start, input[(start, c)]);
            for t in start + 1..end {
                if input[(t, c)] > best {
                    best = input[(t, c)];
                    best_t = t;
                }
            }
            out[(o, c)] = best;
            src[o][c] = best_t;
        }
    }
    (out, src)
}

struct FrontTrace {
    input: Array2<f64>,
    conv1_pre: Array2<f64>,
    conv1_out: Array2<f64>,
    pool1_src: Vec<Vec<usize>>,
    pool1_out: Array2<f64>,
    conv2_pre: Array2<f64>,
    conv2_out: Array2<f64>,
    pool2_src: Vec<Vec<usize>>,
}

struct GruTrace {
    /// Layer input `[T x d_in]`.
    input: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

/// Per-timestep logits plus every intermediate needed for BPTT.
pub struct ForwardTrace {
    pub logits: Array2<f64>,
    front: Option<FrontTrace>,
    gru: Vec<GruTrace>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru_layer_forward(weights: &GruWeights, input: &Array2<f64>) -> GruTrace {
    let t_len = input.nrows();
    let h_dim = weights.uz.nrows();
    let mut z = Array2::zeros((t_len, h_dim));
    let mut r = Array2::zeros((t_len, h_dim));
    let mut c = Array2::zeros((t_len, h_dim));
    let mut h = Array2::zeros((t_len, h_dim));
    let mut h_prev: Array1<f64> = Array1::zeros(h_dim);
    for t in 0..t_len {
        let x = input.row(t);
        let az = weights.wz.dot(&x) + weights.uz.dot(&h_prev) + weights.bz.column(0);
        let ar = weights.wr.dot(&x) + weights.ur.dot(&h_prev) + weights.br.column(0);
        let zt = az.mapv(sigmoid);
        let rt = ar.mapv(sigmoid);
        let gated = &rt * &h_prev;
        let ac = weights.wh.dot(&x) + weights.uh.dot(&gated) + weights.bh.column(0);
        let ct = ac.mapv(f64::tanh);
        let ht = (1.0 - &zt) * &h_prev + &zt * &ct;
        z.row_mut(t).assign(&zt);
        r.row_mut(t).assign(&rt);
        c.row_mut(t).assign(&ct);
        h.row_mut(t).assign(&ht);
        h_prev = ht;
    }
    GruTrace {
        input: input.clone(),
        z,
        r,
        c,
        h,
    }
}

/// Run the encoder-decoder; logits keep one row per input frame under the
/// default same-padding settings.
pub fn forward(
    params: &ParamSet,
    config: &NetworkConfig,
    features: &Array2<f64>,
) -> Result<ForwardTrace, NetError> {
    if features.ncols() != config.input_dim {
        return Err(NetError::Shape(format!(
            "features dim {} != configured input dim {}",
            features.ncols(),
            config.input_dim
        )));
    }
    if features.nrows() == 0 {
        return Err(NetError::Shape("empty feature sequence".into()));
    }
    let (front, gru_input) = if config.use_raw_front_end {
        let (conv1_pre, conv1_out) =
            conv1d_same_pre(features, &params.conv[0].w, &params.conv[0].b);
        let (pool1_out, pool1_src) =
            maxpool1d_same_traced(&conv1_out, config.pool_size, config.pool_stride);
        let (conv2_pre, conv2_out) =
            conv1d_same_pre(&pool1_out, &params.conv[1].w, &params.conv[1].b);
        let (pool2_out, pool2_src) =
            maxpool1d_same_traced(&conv2_out, config.pool_size, config.pool_stride);
        (
            Some(FrontTrace {
                input: features.clone(),
                conv1_pre,
                conv1_out,
                pool1_src,
                pool1_out,
                conv2_pre,
                conv2_out,
                pool2_src,
            }),
            pool2_out,
        )
    } else {
        (None, features.clone())
    };

    let mut gru_traces = Vec::with_capacity(config.gru_layers);
    let mut layer_input = gru_input;
    for layer in params.gru.iter() {
        let trace = gru_layer_forward(layer, &layer_input);
        layer_input = trace.h.clone();
        gru_traces.push(trace);
    }

    let t_len = layer_input.nrows();
    let vocab = config.vocab_size_with_blank;
    let mut logits = Array2::zeros((t_len, vocab));
    for t in 0..t_len {
        let out = params.dense.w.dot(&layer_input.row(t)) + params.dense.b.column(0);
        logits.row_mut(t).assign(&out);
    }
    Ok(ForwardTrace {
        logits,
        front,
        gru: gru_traces,
    })
}

fn gru_layer_backward(
    weights: &GruWeights,
    trace: &GruTrace,
    dh_out: &Array2<f64>,
    grads: &mut GruWeights,
) -> Array2<f64> {
    let t_len = trace.input.nrows();
    let h_dim = weights.uz.nrows();
    let mut dx = Array2::zeros(trace.input.raw_dim());
    let mut dh_next: Array1<f64> = Array1::zeros(h_dim);
    for t in (0..t_len).rev() {
        let dh = &dh_out.row(t) + &dh_next;
        let h_prev: Array1<f64> = if t == 0 {
            Array1::zeros(h_dim)
        } else {
            trace.h.row(t - 1).to_owned()
        };
        let z = trace.z.row(t);
        let r = trace.r.row(t);
        let c = trace.c.row(t);
        let x = trace.input.row(t);

        let dz = (&c.to_owned() - &h_prev) * &dh;
        let daz = &dz * &z.mapv(|v| v * (1.0 - v));
        let dc = &z.to_owned() * &dh;
        let dac = &dc * &c.mapv(|v| 1.0 - v * v);
        let dgated = weights.uh.t().dot(&dac);
        let dr = &dgated * &h_prev;
        let dar = &dr * &r.mapv(|v| v * (1.0 - v));

        let mut dh_prev = (1.0 - &z.to_owned()) * &dh;
        dh_prev = dh_prev + &dgated * &r;
        dh_prev = dh_prev + weights.uz.t().dot(&daz) + weights.ur.t().dot(&dar);

        let dxt =
            weights.wz.t().dot(&daz) + weights.wr.t().dot(&dar) + weights.wh.t().dot(&dac);
        dx.row_mut(t).assign(&dxt);

        let gated = &r.to_owned() * &h_prev;
        for i in 0..h_dim {
            grads.bz[(i, 0)] += daz[i];
            grads.br[(i, 0)] += dar[i];
            grads.bh[(i, 0)] += dac[i];
            for j in 0..x.len() {
                grads.wz[(i, j)] += daz[i] * x[j];
                grads.wr[(i, j)] += dar[i] * x[j];
                grads.wh[(i, j)] += dac[i] * x[j];
            }
            for j in 0..h_dim {
                grads.uz[(i, j)] += daz[i] * h_prev[j];
                grads.ur[(i, j)] += dar[i] * h_prev[j];
                grads.uh[(i, j)] += dac[i] * gated[j];
            }
        }
        dh_next = dh_prev;
    }
    dx
}

fn maxpool_backward(
    d_out: &Array2<f64>,
    src: &[Vec<usize>],
    input_rows: usize,
) -> Array2<f64> {
    let d = d_out.ncols();
    let mut dx = Array2::zeros((input_rows, d));
    for (o, row) in src.iter().enumerate() {
        for c in 0..d {
            dx[(row[c], c)] += d_out[(o, c)];
        }
    }
    dx
}

fn conv_backward(
    input: &Array2<f64>,
    pre: &Array2<f64>,
    kernels: &Tensor,
    d_out: &Array2<f64>,
    grads: &mut ConvWeights,
) -> Array2<f64> {
    let t_len = input.nrows();
    let d_in = input.ncols();
    let filters = kernels.nrows();
    let k = kernels.ncols() / d_in;
    let left = (k - 1) / 2;
    let mut dx = Array2::zeros(input.raw_dim());
    for t in 0..t_len {
        for f in 0..filters {
            if pre[(t, f)] <= 0.0 {
                continue; // ReLU gate
            }
            let g = d_out[(t, f)];
            grads.b[(f, 0)] += g;
            for j in 0..k {
                let src = t as isize + j as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let s = src as usize;
                for d in 0..d_in {
                    grads.w[(f, j * d_in + d)] += g * input[(s, d)];
                    dx[(s, d)] += g * kernels[(f, j * d_in + d)];
                }
            }
        }
    }
    dx
}

/// Exact gradients of `sum_t <logit_grad_t, logits_t>` w.r.t. every
/// parameter, by backpropagation through time.
pub fn backward(
    params: &ParamSet,
    _config: &NetworkConfig,
    trace: &ForwardTrace,
    logit_grad: &Array2<f64>,
) -> Result<ParamSet, NetError> {
    if logit_grad.raw_dim() != trace.logits.raw_dim() {
        return Err(NetError::Shape(format!(
            "logit_grad {:?} vs logits {:?}",
            logit_grad.shape(),
            trace.logits.shape()
        )));
    }
    let mut grads = params.zeros_like();
    let top = trace.gru.last().expect("at least one GRU layer");
    let t_len = trace.logits.nrows();

    // Dense layer.
    let mut dh_top = Array2::zeros(top.h.raw_dim());
    for t in 0..t_len {
        let dl = logit_grad.row(t);
        let h = top.h.row(t);
        for v in 0..dl.len() {
            grads.dense.b[(v, 0)] += dl[v];
            for j in 0..h.len() {
                grads.dense.w[(v, j)] += dl[v] * h[j];
            }
        }
        dh_top.row_mut(t).assign(&params.dense.w.t().dot(&dl));
    }

    // GRU stack, top to bottom.
    let mut dh = dh_top;
    for (layer, ltrace) in params.gru.iter().zip(&trace.gru).rev() {
        let lgrads = &mut grads.gru[trace
            .gru
            .iter()
            .position(|t| std::ptr::eq(t, ltrace))
            .expect("trace layer")];
        dh = gru_layer_backward(layer, ltrace, &dh, lgrads);
    }

    // Front end.
    if let Some(front) = &trace.front {
        let d_pool2 = dh;
        let d_conv2 = maxpool_backward(&d_pool2, &front.pool2_src, front.conv2_out.nrows());
        let d_pool1 = conv_backward(
            &front.pool1_out,
            &front.conv2_pre,
            &params.conv[1].w,
            &d_conv2,
            &mut grads.conv[1],
        );
        let d_conv1 = maxpool_backward(&d_pool1, &front.pool1_src, front.conv1_out.nrows());
        conv_backward(
            &front.input,
            &front.conv1_pre,
            &params.conv[0].w,
            &d_conv1,
            &mut grads.conv[0],
        );
    }
    Ok(grads)
}

/// One Adam update with bias correction; increments the step counter.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &ParamSet,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    params.adam.step += 1;
    let t = params.adam.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let mut w = params.weights.tensors_mut();
    let mut m = params.adam.m.tensors_mut();
    let mut v = params.adam.v.tensors_mut();
    let g = grads.tensors();
    for i in 0..w.len() {
        let (wt, mt, vt, gt) = (&mut w[i].1, &mut m[i].1, &mut v[i].1, g[i].1);
        ndarray::Zip::from(&mut **wt)
            .and(&mut **mt)
            .and(&mut **vt)
            .and(gt)
            .for_each(|w, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

/// Optional global max-norm gradient clip; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm: f64 = grads
        .tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(front: bool) -> NetworkConfig {
        NetworkConfig {
            use_raw_front_end: front,
            conv_filters: 5,
            conv_kernel: 3,
            pool_size: 2,
            pool_stride: 1,
            gru_layers: 2,
            gru_hidden: 3,
            input_dim: 2,
            vocab_size_with_blank: 4,
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_config(true);
        let a = init_params(&cfg, 1).unwrap();
        let b = init_params(&cfg, 1).unwrap();
        let c = init_params(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.weights.tensors() {
            if name.ends_with(".b") || name.starts_with("gru") && name.contains(".b") {
                if name.contains(".b") {
                    assert!(t.iter().all(|&v| v == 0.0), "{name} biases must be 0");
                }
            }
        }
        assert_eq!(a.adam.step, 0);
    }

    #[test]
    fn conv_same_padding_preserves_length() {
        let input = Array2::from_shape_fn((5, 2), |(t, d)| (t + d) as f64);
        let kernels = Array2::zeros((3, 6));
        let biases = Array2::zeros((3, 1));
        let out = conv1d_same(&input, &kernels, &biases);
        assert_eq!(out.nrows(), 5);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel_passes_nonnegative_input() {
        // Single filter [0,1,0] over d_in = 1 copies the input.
        let input = Array2::from_shape_fn((6, 1), |(t, _)| t as f64);
        let kernels = Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 0.0]).unwrap();
        let biases = Array2::zeros((1, 1));
        let out = conv1d_same(&input, &kernels, &biases);
        for t in 0..6 {
            assert_eq!(out[(t, 0)], input[(t, 0)]);
        }
    }

    #[test]
    fn maxpool_same_examples() {
        let input = Array2::from_shape_vec((3, 1), vec![1.0, 3.0, 2.0]).unwrap();
        let out = maxpool1d_same(&input, 2, 1);
        assert_eq!(out.column(0).to_vec(), vec![3.0, 3.0, 2.0]);
        let input7 = Array2::ones((7, 2));
        let out7 = maxpool1d_same(&input7, 2, 1);
        assert_eq!(out7.nrows(), 7);
        assert!(out7.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let cfg = tiny_config(false);
        let params = init_params(&cfg, 0).unwrap().weights.zeros_like();
        let features = Array2::zeros((4, 2));
        let trace = forward(&params, &cfg, &features).unwrap();
        assert!(trace.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_set_gru_with_zero_input_stays_zero() {
        // 1x1 GRU, all weights 1, biases 0, x = 0: candidate tanh(0) = 0 and
        // h0 = 0, so h1 = 0.
        let mut cfg = tiny_config(false);
        cfg.gru_layers = 1;
        cfg.gru_hidden = 1;
        cfg.input_dim = 1;
        let mut params = init_params(&cfg, 0).unwrap().weights;
        for (name, t) in params.tensors_mut() {
            if name.starts_with("gru") && !name.contains('.') {
                continue;
            }
            if name.starts_with("gru") && !name.contains(".b") {
                t.fill(1.0);
            }
        }
        let trace = forward(&params, &cfg, &Array2::zeros((1, 1))).unwrap();
        assert_eq!(trace.gru[0].h[(0, 0)], 0.0);
    }

    #[test]
    fn forward_preserves_time_length_with_front_end() {
        let cfg = tiny_config(true);
        let params = init_params(&cfg, 3).unwrap().weights;
        for t_len in [1, 2, 7, 13] {
            let features = Array2::from_shape_fn((t_len, 2), |(t, d)| (t * 2 + d) as f64 * 0.1);
            let trace = forward(&params, &cfg, &features).unwrap();
            assert_eq!(trace.logits.nrows(), t_len);
            assert_eq!(trace.logits.ncols(), 4);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let cfg = tiny_config(false);
        let params = init_params(&cfg, 3).unwrap().weights;
        assert!(matches!(
            forward(&params, &cfg, &Array2::zeros((4, 5))),
            Err(NetError::Shape(_))
        ));
    }

    #[test]
    fn hidden_states_bounded() {
        let cfg = tiny_config(false);
        let params = init_params(&cfg, 5).unwrap().weights;
        let features = Array2::from_shape_fn((20, 2), |(t, d)| ((t * 7 + d) as f64).sin() * 3.0);
        let trace = forward(&params, &cfg, &features).unwrap();
        for layer in &trace.gru {
            assert!(layer.h.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_logit_grad_gives_zero_parameter_grads() {
        let cfg = tiny_config(true);
        let params = init_params(&cfg, 5).unwrap().weights;
        let features = Array2::from_shape_fn((4, 2), |(t, d)| (t + d) as f64 * 0.3);
        let trace = forward(&params, &cfg, &features).unwrap();
        let grads = backward(&params, &cfg, &trace, &Array2::zeros((4, 4))).unwrap();
        for (name, t) in grads.tensors() {
            assert!(t.iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn dense_bias_grad_is_column_sum_of_logit_grad() {
        let cfg = tiny_config(false);
        let params = init_params(&cfg, 8).unwrap().weights;
        let features = Array2::from_shape_fn((5, 2), |(t, d)| (t as f64 - d as f64) * 0.2);
        let trace = forward(&params, &cfg, &features).unwrap();
        let lg = Array2::from_shape_fn((5, 4), |(t, v)| ((t + 1) * (v + 2)) as f64 * 0.01);
        let grads = backward(&params, &cfg, &trace, &lg).unwrap();
        for v in 0..4 {
            let expect: f64 = (0..5).map(|t| lg[(t, v)]).sum();
            assert!((grads.dense.b[(v, 0)] - expect).abs() < 1e-12);
        }
    }

    fn finite_difference_check(cfg: &NetworkConfig, seed: u64) {
        use rand::prelude::*;
        let mut params = init_params(cfg, seed).unwrap().weights;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 100);
        let features =
            Array2::from_shape_fn((4, cfg.input_dim), |_| rng.gen_range(-1.0..1.0));
        let lg = Array2::from_shape_fn((4, cfg.vocab_size_with_blank), |_| {
            rng.gen_range(-1.0..1.0)
        });
        let trace = forward(&params, cfg, &features).unwrap();
        let analytic = backward(&params, cfg, &trace, &lg).unwrap();
        let loss = |p: &ParamSet| -> f64 {
            let t = forward(p, cfg, &features).unwrap();
            (&t.logits * &lg).sum()
        };
        let h = 1e-6;
        let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
        for (ti, name) in names.iter().enumerate() {
            let dims = {
                let t = params.tensors()[ti].1;
                (t.nrows(), t.ncols())
            };
            for i in 0..dims.0 {
                for j in 0..dims.1 {
                    let orig = params.tensors()[ti].1[(i, j)];
                    params.tensors_mut()[ti].1[(i, j)] = orig + h;
                    let up = loss(&params);
                    params.tensors_mut()[ti].1[(i, j)] = orig - h;
                    let dn = loss(&params);
                    params.tensors_mut()[ti].1[(i, j)] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let an = analytic.tensors()[ti].1[(i, j)];
                    assert!(
                        (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
                        "{name}[{i},{j}]: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences_plain() {
        let mut cfg = tiny_config(false);
        cfg.gru_layers = 2;
        finite_difference_check(&cfg, 11);
    }

    #[test]
    fn bptt_matches_finite_differences_with_front_end() {
        let cfg = tiny_config(true);
        finite_difference_check(&cfg, 12);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_fixed() {
        let cfg = tiny_config(false);
        let mut params = init_params(&cfg, 4).unwrap();
        let before = params.weights.clone();
        let zeros = params.weights.zeros_like();
        adam_step(&mut params, &zeros, 1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(params.weights, before);
        assert_eq!(params.adam.step, 1);
    }

    #[test]
    fn adam_first_step_approximates_sign_update() {
        let cfg = tiny_config(false);
        let mut params = init_params(&cfg, 4).unwrap();
        let before = params.weights.clone();
        let mut grads = params.weights.zeros_like();
        for (_, t) in grads.tensors_mut() {
            t.fill(0.5); // |g| >> eps
        }
        let lr = 1e-3;
        adam_step(&mut params, &grads, lr, 0.9, 0.999, 1e-8);
        let before_t = before.tensors();
        for (i, (name, t)) in params.weights.tensors().iter().enumerate() {
            for (a, b) in t.iter().zip(before_t[i].1.iter()) {
                let delta = b - a; // positive gradient decreases weights
                assert!(delta >= 0.99 * lr && delta <= lr, "{name}: {delta}");
            }
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = tiny_config(false);
        let mut p1 = init_params(&cfg, 4).unwrap();
        let mut p2 = init_params(&cfg, 4).unwrap();
        let mut grads = p1.weights.zeros_like();
        for (_, t) in grads.tensors_mut() {
            t.fill(-0.25);
        }
        adam_step(&mut p1, &grads, 1e-3, 0.9, 0.999, 1e-8);
        adam_step(&mut p2, &grads, 1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(p1, p2);
    }

    #[test]
    fn clip_grad_norm_scales_down() {
        let cfg = tiny_config(false);
        let mut grads = init_params(&cfg, 4).unwrap().weights.zeros_like();
        grads.dense.w.fill(10.0);
        let pre = clip_grad_norm(&mut grads, 1.0);
        assert!(pre > 1.0);
        let post: f64 = grads
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!((post - 1.0).abs() < 1e-9);
    }
}
