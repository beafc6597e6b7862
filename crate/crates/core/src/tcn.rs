//! Temporal convolutional network with hand-written backpropagation.
//!
//! Residual block `i` (0-based) applies two causal convolutions with
//! dilation `base^i`, each weight-normalized per output filter. Hidden
//! blocks compute `relu(relu(conv2(relu(conv1 x))) + res(x))`; the last
//! block is linear after `conv2` so that the output can take any sign.
//! `res` is the identity or a 1x1 convolution when channel counts differ.
//!
//! Parameters live in one flat vector. Per block the order is
//! `v1 [o][c][m], g1 [o], b1 [o], v2, g2, b2`, then `res_w [o][c],
//! res_b [o]` when a projection is present. Tap `m = k-1` of a kernel sees
//! the current time step, tap `m` sees `(k-1-m)·d` steps back.
//!
//! Sequences are row-major `[t][channel]`, batches `[b][t][channel]`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kinematics::{JointConfig, JointLimits, NUM_JOINTS};

pub const CHECKPOINT_FORMAT: &str = "samkit-tcn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `⌈log₂((L-1)/(2k-2)) + 1⌉`, at least 1.
pub fn num_blocks(seq_len: usize, kernel_size: usize) -> Result<usize> {
    if seq_len < 2 || kernel_size < 2 {
        return Err(domain(format!(
            "need L >= 2 and k >= 2, got L = {seq_len}, k = {kernel_size}"
        )));
    }
    let x = (seq_len - 1) as f64 / (2 * kernel_size - 2) as f64;
    Ok(((x.log2() + 1.0).ceil() as i64).max(1) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcnConfig {
    pub seq_len: usize,
    pub kernel_size: usize,
    pub dilation_base: usize,
    pub channels_in: usize,
    pub channels_hidden: usize,
    pub channels_out: usize,
    pub num_blocks: usize,
    pub seed: u64,
}

impl TcnConfig {
    /// Config with dilation base 2 and the block count derived from `L`, `k`.
    pub fn new(
        seq_len: usize,
        kernel_size: usize,
        channels_in: usize,
        channels_hidden: usize,
        channels_out: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = TcnConfig {
            seq_len,
            kernel_size,
            dilation_base: 2,
            channels_in,
            channels_hidden,
            channels_out,
            num_blocks: num_blocks(seq_len, kernel_size)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Joint-space model: 7 channels in and out, 64 hidden.
    pub fn joint_model(seq_len: usize, seed: u64) -> Result<Self> {
        TcnConfig::new(seq_len, 3, NUM_JOINTS, 64, NUM_JOINTS, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = num_blocks(self.seq_len, self.kernel_size)?;
        if self.num_blocks != expected {
            return Err(Error::Config(format!(
                "num_blocks = {} but L = {}, k = {} require {expected}",
                self.num_blocks, self.seq_len, self.kernel_size
            )));
        }
        if self.dilation_base < 2 {
            return Err(domain("dilation base must be >= 2"));
        }
        if self.channels_in == 0 || self.channels_hidden == 0 || self.channels_out == 0 {
            return Err(domain("channel counts must be positive"));
        }
        if self.receptive_field() < self.seq_len {
            return Err(Error::Config(format!(
                "receptive field {} shorter than L = {}",
                self.receptive_field(),
                self.seq_len
            )));
        }
        Ok(())
    }

    /// Dilation of block `i`, counting from 0.
    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_base.pow(block as u32)
    }

    pub fn receptive_field(&self) -> usize {
        1 + 2
            * (self.kernel_size - 1)
            * (0..self.num_blocks)
                .map(|i| self.dilation(i))
                .sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self, false).len
    }
}

#[derive(Debug, Clone)]
struct Conv {
    c_in: usize,
    c_out: usize,
    k: usize,
    dil: usize,
    v: usize,
    g: usize,
    b: usize,
    /// Output time steps that are evaluated.
    rows: Vec<usize>,
}

impl Conv {
    fn fan_in(&self) -> usize {
        self.c_in * self.k
    }

    /// Input time steps read by `rows`.
    fn inputs_needed(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .rows
            .iter()
            .flat_map(|&t| {
                (0..self.k).filter_map(move |m| t.checked_sub((self.k - 1 - m) * self.dil))
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    /// Offsets of the projection weight and bias.
    res: Option<(usize, usize)>,
    last: bool,
}

#[derive(Debug, Clone)]
struct Layout {
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    /// With `pruned`, each convolution evaluates only the time steps that
    /// feed the last output step; otherwise all of them.
    fn new(cfg: &TcnConfig, pruned: bool) -> Layout {
        let k = cfg.kernel_size;
        let all: Vec<usize> = (0..cfg.seq_len).collect();
        let conv = |off: usize, c_in: usize, c_out: usize, dil: usize| Conv {
            c_in,
            c_out,
            k,
            dil,
            v: off,
            g: off + c_out * c_in * k,
            b: off + c_out * c_in * k + c_out,
            rows: all.clone(),
        };
        let mut off = 0;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for i in 0..cfg.num_blocks {
            let last = i + 1 == cfg.num_blocks;
            let c_in = if i == 0 {
                cfg.channels_in
            } else {
                cfg.channels_hidden
            };
            let c_out = if last {
                cfg.channels_out
            } else {
                cfg.channels_hidden
            };
            let dil = cfg.dilation(i);
            let conv1 = conv(off, c_in, c_out, dil);
            let conv2 = conv(conv1.b + c_out, c_out, c_out, dil);
            off = conv2.b + c_out;
            let res = (c_in != c_out).then(|| (off, off + c_out * c_in));
            if res.is_some() {
                off += c_out * c_in + c_out;
            }
            blocks.push(Block {
                conv1,
                conv2,
                res,
                last,
            });
        }
        if pruned {
            let mut needed = vec![cfg.seq_len - 1];
            for block in blocks.iter_mut().rev() {
                block.conv2.rows = needed.clone();
                block.conv1.rows = block.conv2.inputs_needed();
                needed = merge(&block.conv1.inputs_needed(), &needed);
            }
        }
        Layout { blocks, len: off }
    }
}

fn merge(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Per-channel affine map `x_norm = (x - center) / half_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
}

impl Scaling {
    pub fn identity(channels: usize) -> Self {
        Scaling {
            center: vec![0.0; channels],
            half_range: vec![1.0; channels],
        }
    }

    /// Maps each joint's limit interval onto `[-1, 1]`.
    pub fn from_limits(limits: &JointLimits) -> Self {
        Scaling {
            center: (0..NUM_JOINTS).map(|j| limits.mid(j)).collect(),
            half_range: (0..NUM_JOINTS).map(|j| limits.half_range(j)).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.center.len()
    }

    pub fn normalize(&self, ch: usize, v: f64) -> f64 {
        (v - self.center[ch]) / self.half_range[ch]
    }

    pub fn denormalize(&self, ch: usize, v: f64) -> f64 {
        v * self.half_range[ch] + self.center[ch]
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.center.len() != channels || self.half_range.len() != channels {
            return Err(Error::Shape {
                expected: format!("{channels} scaling channels"),
                got: format!("{}/{}", self.center.len(), self.half_range.len()),
            });
        }
        if self.half_range.iter().any(|h| !(h.is_finite() && *h > 0.0))
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(domain("scaling ranges must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnModel {
    pub config: TcnConfig,
    pub input_scale: Scaling,
    pub output_scale: Scaling,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    /// Padding convention for windows shorter than `L`.
    padding: String,
    #[serde(flatten)]
    model: TcnModel,
}

const PADDING: &str = "zeros in normalized space, prepended";

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the debug assertions above state the bounds every caller
    // satisfies by construction; `c` is row-major m x n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows of `col` are `(b, conv.rows[i])` pairs, `b` major.
fn im2col(x: &[f64], batch: usize, len: usize, conv: &Conv, col: &mut Vec<f64>) {
    let (c, k) = (conv.c_in, conv.k);
    let n_rows = conv.rows.len();
    col.clear();
    col.resize(batch * n_rows * c * k, 0.0);
    for b in 0..batch {
        for (i, &t) in conv.rows.iter().enumerate() {
            let r = b * n_rows + i;
            let row = &mut col[r * c * k..(r + 1) * c * k];
            for m in 0..k {
                let shift = (k - 1 - m) * conv.dil;
                if t < shift {
                    continue;
                }
                let src = &x[(b * len + t - shift) * c..(b * len + t - shift + 1) * c];
                for (ch, v) in src.iter().enumerate() {
                    row[ch * k + m] = *v;
                }
            }
        }
    }
}

fn col2im(dcol: &[f64], batch: usize, len: usize, conv: &Conv, dx: &mut [f64]) {
    let (c, k) = (conv.c_in, conv.k);
    let n_rows = conv.rows.len();
    for b in 0..batch {
        for (i, &t) in conv.rows.iter().enumerate() {
            let r = b * n_rows + i;
            let row = &dcol[r * c * k..(r + 1) * c * k];
            for m in 0..k {
                let shift = (k - 1 - m) * conv.dil;
                if t < shift {
                    continue;
                }
                let dst = &mut dx[(b * len + t - shift) * c..(b * len + t - shift + 1) * c];
                for (ch, d) in dst.iter_mut().enumerate() {
                    *d += row[ch * k + m];
                }
            }
        }
    }
}

/// Effective weights `g·v/‖v‖` and the filter norms. A zero direction
/// gives a zero filter.
fn effective_weights(conv: &Conv, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let fan = conv.fan_in();
    let mut w = vec![0.0; conv.c_out * fan];
    let mut norms = vec![0.0; conv.c_out];
    for o in 0..conv.c_out {
        let v = &p[conv.v + o * fan..conv.v + (o + 1) * fan];
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        norms[o] = n;
        if n > 0.0 {
            let s = p[conv.g + o] / n;
            for (wi, vi) in w[o * fan..(o + 1) * fan].iter_mut().zip(v) {
                *wi = s * vi;
            }
        }
    }
    (w, norms)
}

struct ConvTape {
    w: Vec<f64>,
    norms: Vec<f64>,
    col: Vec<f64>,
    pre: Vec<f64>,
}

/// Index into a full `[b][t]` buffer of compact row `r`.
fn full_row(conv: &Conv, len: usize, r: usize) -> usize {
    let n_rows = conv.rows.len();
    (r / n_rows) * len + conv.rows[r % n_rows]
}

/// `pre` is laid out over all `L` steps; rows not in `conv.rows` stay zero.
fn conv_forward(conv: &Conv, p: &[f64], x: &[f64], batch: usize, len: usize) -> ConvTape {
    let (w, norms) = effective_weights(conv, p);
    let mut col = Vec::new();
    im2col(x, batch, len, conv, &mut col);
    let rows = batch * conv.rows.len();
    let fan = conv.fan_in();
    let o_n = conv.c_out;
    let mut compact = vec![0.0; rows * o_n];
    for r in 0..rows {
        compact[r * o_n..(r + 1) * o_n].copy_from_slice(&p[conv.b..conv.b + o_n]);
    }
    gemm(
        rows,
        fan,
        o_n,
        &col,
        (fan, 1),
        &w,
        (1, fan),
        1.0,
        &mut compact,
    );
    let mut pre = vec![0.0; batch * len * o_n];
    for r in 0..rows {
        let f = full_row(conv, len, r);
        pre[f * o_n..(f + 1) * o_n].copy_from_slice(&compact[r * o_n..(r + 1) * o_n]);
    }
    ConvTape { w, norms, col, pre }
}

/// Accumulates parameter gradients of `conv` into `grad` and returns the
/// gradient with respect to its input when `need_dx`.
fn conv_backward(
    conv: &Conv,
    p: &[f64],
    tape: &ConvTape,
    dpre: &[f64],
    batch: usize,
    len: usize,
    grad: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let rows = batch * conv.rows.len();
    let fan = conv.fan_in();
    let o_n = conv.c_out;
    let mut dpre_c = vec![0.0; rows * o_n];
    for r in 0..rows {
        let f = full_row(conv, len, r);
        dpre_c[r * o_n..(r + 1) * o_n].copy_from_slice(&dpre[f * o_n..(f + 1) * o_n]);
    }
    let dpre = &dpre_c;
    let mut dw = vec![0.0; o_n * fan];
    gemm(
        o_n,
        rows,
        fan,
        dpre,
        (1, o_n),
        &tape.col,
        (fan, 1),
        0.0,
        &mut dw,
    );
    for r in 0..rows {
        for o in 0..o_n {
            grad[conv.b + o] += dpre[r * o_n + o];
        }
    }
    for o in 0..o_n {
        let n = tape.norms[o];
        if n == 0.0 {
            continue;
        }
        let v = &p[conv.v + o * fan..conv.v + (o + 1) * fan];
        let dw_o = &dw[o * fan..(o + 1) * fan];
        let dot = dw_o.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        grad[conv.g + o] += dot / n;
        let g = p[conv.g + o];
        let gv = &mut grad[conv.v + o * fan..conv.v + (o + 1) * fan];
        for ((gi, dwi), vi) in gv.iter_mut().zip(dw_o).zip(v) {
            *gi += g / n * dwi - g * dot / (n * n * n) * vi;
        }
    }
    if !need_dx {
        return None;
    }
    let mut dcol = vec![0.0; rows * fan];
    gemm(
        rows,
        o_n,
        fan,
        dpre,
        (o_n, 1),
        &tape.w,
        (fan, 1),
        0.0,
        &mut dcol,
    );
    let mut dx = vec![0.0; batch * len * conv.c_in];
    col2im(&dcol, batch, len, conv, &mut dx);
    Some(dx)
}

struct BlockTape {
    x: Vec<f64>,
    c1: ConvTape,
    c2: ConvTape,
    /// Pre-activation of the block output (hidden blocks only).
    out_pre: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn block_forward(
    block: &Block,
    p: &[f64],
    x: Vec<f64>,
    batch: usize,
    len: usize,
) -> (Vec<f64>, BlockTape) {
    let rows = batch * len;
    let c1 = conv_forward(&block.conv1, p, &x, batch, len);
    let h1 = relu(&c1.pre);
    let c2 = conv_forward(&block.conv2, p, &h1, batch, len);
    let o_n = block.conv2.c_out;
    let mut out = if block.last {
        c2.pre.clone()
    } else {
        relu(&c2.pre)
    };
    match block.res {
        Some((w, b)) => {
            let c_in = block.conv1.c_in;
            for r in 0..rows {
                for o in 0..o_n {
                    out[r * o_n + o] += p[b + o];
                }
            }
            gemm(
                rows,
                c_in,
                o_n,
                &x,
                (c_in, 1),
                &p[w..w + o_n * c_in],
                (1, c_in),
                1.0,
                &mut out,
            );
        }
        None => out.iter_mut().zip(&x).for_each(|(o, xi)| *o += xi),
    }
    let out_pre = if block.last { Vec::new() } else { out.clone() };
    if !block.last {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    (out, BlockTape { x, c1, c2, out_pre })
}

fn block_backward(
    block: &Block,
    p: &[f64],
    tape: &BlockTape,
    dout: &[f64],
    batch: usize,
    len: usize,
    grad: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let rows = batch * len;
    let o_n = block.conv2.c_out;
    let dsum: Vec<f64> = if block.last {
        dout.to_vec()
    } else {
        dout.iter()
            .zip(&tape.out_pre)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect()
    };
    let dpre2: Vec<f64> = if block.last {
        dsum.clone()
    } else {
        dsum.iter()
            .zip(&tape.c2.pre)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect()
    };
    let dh1 = conv_backward(&block.conv2, p, &tape.c2, &dpre2, batch, len, grad, true)
        .expect("requested");
    let dpre1: Vec<f64> = dh1
        .iter()
        .zip(&tape.c1.pre)
        .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
        .collect();
    let dx_conv = conv_backward(&block.conv1, p, &tape.c1, &dpre1, batch, len, grad, need_dx);
    let c_in = block.conv1.c_in;
    match block.res {
        Some((w, b)) => {
            gemm(
                o_n,
                rows,
                c_in,
                &dsum,
                (1, o_n),
                &tape.x,
                (c_in, 1),
                1.0,
                &mut grad[w..w + o_n * c_in],
            );
            for r in 0..rows {
                for o in 0..o_n {
                    grad[b + o] += dsum[r * o_n + o];
                }
            }
            let mut dx = dx_conv?;
            gemm(
                rows,
                o_n,
                c_in,
                &dsum,
                (o_n, 1),
                &p[w..w + o_n * c_in],
                (c_in, 1),
                1.0,
                &mut dx,
            );
            Some(dx)
        }
        None => {
            let mut dx = dx_conv?;
            dx.iter_mut().zip(&dsum).for_each(|(a, b)| *a += b);
            Some(dx)
        }
    }
}

fn forward_all(
    layout: &Layout,
    p: &[f64],
    x: &[f64],
    batch: usize,
    len: usize,
) -> (Vec<f64>, Vec<BlockTape>) {
    let mut h = x.to_vec();
    let mut tapes = Vec::with_capacity(layout.blocks.len());
    for block in &layout.blocks {
        let (out, tape) = block_forward(block, p, h, batch, len);
        tapes.push(tape);
        h = out;
    }
    (h, tapes)
}

/// Mean squared error over the last time step of every sequence in the
/// batch, its gradient with respect to `params` and the per-channel sums
/// of squared errors.
fn loss_and_grad(
    cfg: &TcnConfig,
    layout: &Layout,
    params: &[f64],
    x: &[f64],
    y: &[f64],
    batch: usize,
) -> (f64, Vec<f64>, Vec<f64>) {
    let len = cfg.seq_len;
    let c_out = cfg.channels_out;
    let (out, tapes) = forward_all(layout, params, x, batch, len);
    let scale = 1.0 / (batch * c_out) as f64;
    let mut sq = vec![0.0; c_out];
    let mut dout = vec![0.0; batch * len * c_out];
    for b in 0..batch {
        let row = (b * len + len - 1) * c_out;
        for o in 0..c_out {
            let e = out[row + o] - y[b * c_out + o];
            sq[o] += e * e;
            dout[row + o] = 2.0 * e * scale;
        }
    }
    let mut grad = vec![0.0; layout.len];
    for (i, block) in layout.blocks.iter().enumerate().rev() {
        match block_backward(
            block,
            params,
            &tapes[i],
            &dout,
            batch,
            len,
            &mut grad,
            i > 0,
        ) {
            Some(dx) => dout = dx,
            None => break,
        }
    }
    (sq.iter().sum::<f64>() * scale, grad, sq)
}

impl TcnModel {
    /// Random initialization: directions uniform in `±1/√fan_in`, magnitudes
    /// equal to the direction norms, biases uniform in the same range.
    pub fn new(config: TcnConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, false);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.len];
        for block in &layout.blocks {
            for conv in [&block.conv1, &block.conv2] {
                let fan = conv.fan_in();
                let bound = 1.0 / (fan as f64).sqrt();
                for o in 0..conv.c_out {
                    let v = &mut params[conv.v + o * fan..conv.v + (o + 1) * fan];
                    v.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    params[conv.g + o] = n;
                    params[conv.b + o] = rng.gen_range(-bound..bound);
                }
            }
            if let Some((w, b)) = block.res {
                let bound = 1.0 / (block.conv1.c_in as f64).sqrt();
                for x in &mut params[w..b + block.conv2.c_out] {
                    *x = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(TcnModel {
            config,
            input_scale: Scaling::identity(config.channels_in),
            output_scale: Scaling::identity(config.channels_out),
            params,
        })
    }

    pub fn with_scaling(mut self, input: Scaling, output: Scaling) -> Result<Self> {
        input.validate(self.config.channels_in)?;
        output.validate(self.config.channels_out)?;
        self.input_scale = input;
        self.output_scale = output;
        Ok(self)
    }

    /// Joint-space model scaled by `limits` on both sides.
    pub fn joint_model(config: TcnConfig, limits: &JointLimits) -> Result<Self> {
        let s = Scaling::from_limits(limits);
        TcnModel::new(config)?.with_scaling(s.clone(), s)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.input_scale.validate(self.config.channels_in)?;
        self.output_scale.validate(self.config.channels_out)?;
        let n = self.config.param_count();
        if self.params.len() != n {
            return Err(Error::Shape {
                expected: format!("{n} parameters"),
                got: self.params.len().to_string(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Effective convolution weights of every layer, in layout order
    /// (`conv1`, `conv2` per block), each `[o][c][m]`.
    pub fn effective_weights(&self) -> Vec<Vec<f64>> {
        let layout = Layout::new(&self.config, false);
        layout
            .blocks
            .iter()
            .flat_map(|b| [&b.conv1, &b.conv2])
            .map(|c| effective_weights(c, &self.params).0)
            .collect()
    }

    /// Named parameter groups (`block0.conv1.v`, `block0.res.b`, ...) and
    /// their index ranges in `params`.
    pub fn param_groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let layout = Layout::new(&self.config, false);
        let mut out = Vec::new();
        for (i, b) in layout.blocks.iter().enumerate() {
            for (name, c) in [("conv1", &b.conv1), ("conv2", &b.conv2)] {
                out.push((format!("block{i}.{name}.v"), c.v..c.g));
                out.push((format!("block{i}.{name}.g"), c.g..c.b));
                out.push((format!("block{i}.{name}.b"), c.b..c.b + c.c_out));
            }
            if let Some((w, bias)) = b.res {
                out.push((format!("block{i}.res.w"), w..bias));
                out.push((format!("block{i}.res.b"), bias..bias + b.conv2.c_out));
            }
        }
        out
    }

    /// Runs one normalized `L x channels_in` sequence; returns all output
    /// features (`L x channels_out`) and the last one.
    pub fn forward(&self, seq: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = &self.config;
        if seq.len() != cfg.seq_len * cfg.channels_in {
            return Err(Error::Shape {
                expected: format!("{} x {}", cfg.seq_len, cfg.channels_in),
                got: format!("{} values", seq.len()),
            });
        }
        let layout = Layout::new(cfg, true);
        let (out, _) = forward_all(&layout, &self.params, seq, 1, cfg.seq_len);
        let last = out[(cfg.seq_len - 1) * cfg.channels_out..].to_vec();
        Ok((out, last))
    }

    /// Last-step outputs of `batch` normalized sequences, `batch x channels_out`.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if x.len() != batch * cfg.seq_len * cfg.channels_in {
            return Err(Error::Shape {
                expected: format!("{batch} x {} x {}", cfg.seq_len, cfg.channels_in),
                got: format!("{} values", x.len()),
            });
        }
        let layout = Layout::new(cfg, true);
        let (out, _) = forward_all(&layout, &self.params, x, batch, cfg.seq_len);
        let (len, c) = (cfg.seq_len, cfg.channels_out);
        Ok((0..batch)
            .flat_map(|b| {
                out[(b * len + len - 1) * c..(b * len + len) * c]
                    .iter()
                    .copied()
            })
            .collect())
    }

    /// Normalizes a window of joint configurations (oldest first), pads it
    /// at the front with normalized zeros to `L` steps and maps the
    /// estimate back to joint units.
    pub fn predict(&self, window: &[JointConfig]) -> Result<JointConfig> {
        let mut x = Vec::new();
        self.encode_window(window, &mut x)?;
        let (_, est) = self.forward(&x)?;
        Ok(self.decode(&est))
    }

    pub(crate) fn encode_window(&self, window: &[JointConfig], out: &mut Vec<f64>) -> Result<()> {
        let cfg = &self.config;
        if cfg.channels_in != NUM_JOINTS || cfg.channels_out != NUM_JOINTS {
            return Err(Error::Config(
                "joint-space prediction needs 7 input and output channels".into(),
            ));
        }
        if window.len() > cfg.seq_len {
            return Err(Error::Shape {
                expected: format!("at most {} steps", cfg.seq_len),
                got: window.len().to_string(),
            });
        }
        let pad = cfg.seq_len - window.len();
        out.extend(std::iter::repeat(0.0).take(pad * NUM_JOINTS));
        for q in window {
            out.extend((0..NUM_JOINTS).map(|j| self.input_scale.normalize(j, q[j])));
        }
        Ok(())
    }

    pub(crate) fn decode(&self, est: &[f64]) -> JointConfig {
        JointConfig(std::array::from_fn(|j| {
            self.output_scale.denormalize(j, est[j])
        }))
    }

    /// Mean squared error and parameter gradient on a normalized batch.
    pub fn loss_and_grad(&self, x: &[f64], y: &[f64], batch: usize) -> Result<(f64, Vec<f64>)> {
        let cfg = &self.config;
        if x.len() != batch * cfg.seq_len * cfg.channels_in || y.len() != batch * cfg.channels_out {
            return Err(Error::Shape {
                expected: format!("{batch} sequences and targets"),
                got: format!("{} inputs, {} targets", x.len(), y.len()),
            });
        }
        let (loss, grad, _) =
            loss_and_grad(cfg, &Layout::new(cfg, true), &self.params, x, y, batch);
        Ok((loss, grad))
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            padding: PADDING.into(),
            model: self.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.padding != PADDING {
            return Err(Error::Config(format!(
                "unsupported padding convention '{}'",
                ck.padding
            )));
        }
        ck.model.validate()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        TcnModel::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Inference-only form of a [`TcnModel`]: effective weights are computed
/// once, and only the time steps that reach the final estimate are
/// evaluated.
#[derive(Debug, Clone)]
pub struct CompiledTcn {
    seq_len: usize,
    c_in: usize,
    c_out: usize,
    layers: Vec<CompiledBlock>,
}

#[derive(Debug, Clone)]
struct CompiledConv {
    c_in: usize,
    c_out: usize,
    k: usize,
    dil: usize,
    /// Weights reordered to `[o][m][c]`.
    w: Vec<f64>,
    b: Vec<f64>,
    /// Output time steps to evaluate.
    rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct CompiledBlock {
    conv1: CompiledConv,
    conv2: CompiledConv,
    res: Option<(Vec<f64>, Vec<f64>)>,
    last: bool,
}

/// Scratch buffers reused across [`CompiledTcn::estimate`] calls.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    a: Vec<f64>,
    h: Vec<f64>,
    b: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl CompiledConv {
    fn new(conv: &Conv, p: &[f64], rows: Vec<usize>) -> Self {
        let (w, _) = effective_weights(conv, p);
        let (c, k) = (conv.c_in, conv.k);
        let mut wr = vec![0.0; w.len()];
        for o in 0..conv.c_out {
            for ch in 0..c {
                for m in 0..k {
                    wr[(o * k + m) * c + ch] = w[(o * c + ch) * k + m];
                }
            }
        }
        CompiledConv {
            c_in: c,
            c_out: conv.c_out,
            k,
            dil: conv.dil,
            w: wr,
            b: p[conv.b..conv.b + conv.c_out].to_vec(),
            rows,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64], relu: bool) {
        let (c, k) = (self.c_in, self.k);
        for &t in &self.rows {
            let out = &mut y[t * self.c_out..(t + 1) * self.c_out];
            out.copy_from_slice(&self.b);
            for m in 0..k {
                let Some(src) = t.checked_sub((k - 1 - m) * self.dil) else {
                    continue;
                };
                let xs = &x[src * c..(src + 1) * c];
                for (o, v) in out.iter_mut().enumerate() {
                    *v += dot(&self.w[(o * k + m) * c..(o * k + m + 1) * c], xs);
                }
            }
            if relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }
}

impl CompiledTcn {
    pub fn new(model: &TcnModel) -> Result<Self> {
        model.validate()?;
        let cfg = &model.config;
        let layout = Layout::new(cfg, true);
        let mut layers = Vec::with_capacity(layout.blocks.len());
        for block in &layout.blocks {
            let conv2 = CompiledConv::new(&block.conv2, &model.params, block.conv2.rows.clone());
            let conv1 = CompiledConv::new(&block.conv1, &model.params, block.conv1.rows.clone());
            let res = block.res.map(|(w, b)| {
                let n = block.conv2.c_out * block.conv1.c_in;
                (
                    model.params[w..w + n].to_vec(),
                    model.params[b..b + block.conv2.c_out].to_vec(),
                )
            });
            layers.push(CompiledBlock {
                conv1,
                conv2,
                res,
                last: block.last,
            });
        }
        Ok(CompiledTcn {
            seq_len: cfg.seq_len,
            c_in: cfg.channels_in,
            c_out: cfg.channels_out,
            layers,
        })
    }

    /// The last-step estimate for one normalized `L x channels_in` sequence.
    pub fn estimate<'s>(&self, x: &[f64], s: &'s mut Scratch) -> Result<&'s [f64]> {
        if x.len() != self.seq_len * self.c_in {
            return Err(Error::Shape {
                expected: format!("{} x {}", self.seq_len, self.c_in),
                got: format!("{} values", x.len()),
            });
        }
        s.a.clear();
        s.a.extend_from_slice(x);
        for layer in &self.layers {
            let width = layer.conv2.c_out;
            s.h.clear();
            s.h.resize(self.seq_len * width, 0.0);
            layer.conv1.apply(&s.a, &mut s.h, true);
            s.b.clear();
            s.b.resize(self.seq_len * width, 0.0);
            layer.conv2.apply(&s.h, &mut s.b, !layer.last);
            let c_in = layer.conv1.c_in;
            for &t in &layer.conv2.rows {
                let xs = &s.a[t * c_in..(t + 1) * c_in];
                let out = &mut s.b[t * width..(t + 1) * width];
                match &layer.res {
                    Some((w, b)) => {
                        for (o, v) in out.iter_mut().enumerate() {
                            *v += b[o] + dot(&w[o * c_in..(o + 1) * c_in], xs);
                        }
                    }
                    None => out.iter_mut().zip(xs).for_each(|(v, x)| *v += x),
                }
                if !layer.last {
                    out.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            std::mem::swap(&mut s.a, &mut s.b);
        }
        let t = self.seq_len - 1;
        Ok(&s.a[t * self.c_out..(t + 1) * self.c_out])
    }
}

/// Normalized training windows: inputs `n x L x channels_in`, targets
/// `n x channels_out`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowSet {
    pub seq_len: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len() / self.channels_out.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One window per time step of each sequence: the `L` most recent
    /// inputs (front-padded with normalized zeros) and the current target.
    pub fn from_sequences<'a>(
        model: &TcnModel,
        sequences: impl IntoIterator<Item = (&'a [JointConfig], &'a [JointConfig])>,
    ) -> Result<Self> {
        let cfg = &model.config;
        let mut set = WindowSet {
            seq_len: cfg.seq_len,
            channels_in: cfg.channels_in,
            channels_out: cfg.channels_out,
            ..WindowSet::default()
        };
        for (inputs, targets) in sequences {
            if inputs.len() != targets.len() {
                return Err(domain("input and target sequences differ in length"));
            }
            for t in 0..inputs.len() {
                let start = (t + 1).saturating_sub(cfg.seq_len);
                model.encode_window(&inputs[start..=t], &mut set.inputs)?;
                set.targets.extend(
                    (0..NUM_JOINTS).map(|j| model.output_scale.normalize(j, targets[t][j])),
                );
            }
        }
        Ok(set)
    }

    fn input(&self, i: usize) -> &[f64] {
        let n = self.seq_len * self.channels_in;
        &self.inputs[i * n..(i + 1) * n]
    }

    fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.channels_out..(i + 1) * self.channels_out]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Seed of the minibatch shuffle.
    pub shuffle_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 1e-3,
            epochs: 1500,
            batch: 256,
            shuffle_seed: 0,
        }
    }
}

/// Losses of one epoch, in squared output units (not normalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: TcnModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Model after the final epoch.
    pub last: TcnModel,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean over channels of the squared error in output units.
fn physical_mse(model: &TcnModel, pred: &[f64], target: &[f64]) -> f64 {
    let c = model.config.channels_out;
    let mut s = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        let h = model.output_scale.half_range[i % c];
        s += (p - t) * (p - t) * h * h;
    }
    s / pred.len() as f64
}

fn gather(set: &WindowSet, idx: &[usize], x: &mut Vec<f64>, y: &mut Vec<f64>) {
    x.clear();
    y.clear();
    for &i in idx {
        x.extend_from_slice(set.input(i));
        y.extend_from_slice(set.target(i));
    }
}

/// Last-step predictions for every window, normalized.
pub fn predict_set(model: &TcnModel, set: &WindowSet) -> Result<Vec<f64>> {
    let chunk = 512;
    let n = set.len();
    let mut out = Vec::with_capacity(n * set.channels_out);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let w = set.seq_len * set.channels_in;
        out.extend(model.forward_batch(&set.inputs[start * w..end * w], end - start)?);
        start = end;
    }
    Ok(out)
}

fn check_set(model: &TcnModel, set: &WindowSet, name: &str) -> Result<()> {
    let cfg = &model.config;
    if set.seq_len != cfg.seq_len
        || set.channels_in != cfg.channels_in
        || set.channels_out != cfg.channels_out
    {
        return Err(Error::Shape {
            expected: format!(
                "{name} windows of {} x {} -> {}",
                cfg.seq_len, cfg.channels_in, cfg.channels_out
            ),
            got: format!(
                "{} x {} -> {}",
                set.seq_len, set.channels_in, set.channels_out
            ),
        });
    }
    if set.is_empty() {
        return Err(domain(format!("{name} set is empty")));
    }
    Ok(())
}

/// Adam on the MSE of normalized outputs. Returns the parameters with the
/// lowest validation loss. Deterministic given the model seed and
/// `opts.shuffle_seed`.
pub fn train(
    init: TcnModel,
    train_set: &WindowSet,
    valid_set: &WindowSet,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    init.validate()?;
    check_set(&init, train_set, "training")?;
    check_set(&init, valid_set, "validation")?;
    if opts.batch == 0 || !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(domain("batch must be positive and lr positive and finite"));
    }
    let layout = Layout::new(&init.config, true);
    let mut model = init;
    let mut adam = Adam::new(layout.len);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut log = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut sq = vec![0.0; model.config.channels_out];
        for idx in order.chunks(opts.batch) {
            gather(train_set, idx, &mut x, &mut y);
            let (loss, grad, batch_sq) =
                loss_and_grad(&model.config, &layout, &model.params, &x, &y, idx.len());
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!(
                        "loss {loss}; lower the learning rate or check the data for outliers"
                    ),
                });
            }
            sq.iter_mut().zip(&batch_sq).for_each(|(a, b)| *a += b);
            adam.step(&mut model.params, &grad, opts.lr);
        }
        let pred = predict_set(&model, valid_set)?;
        let valid_mse = physical_mse(&model, &pred, &valid_set.targets);
        if !valid_mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite validation loss".into(),
            });
        }
        let train_mse = sq
            .iter()
            .zip(&model.output_scale.half_range)
            .map(|(s, h)| s * h * h)
            .sum::<f64>()
            / (train_set.len() * model.config.channels_out) as f64;
        let entry = EpochLog {
            epoch,
            train_mse,
            valid_mse,
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().map_or(true, |b| valid_mse < b.0) {
            best = Some((valid_mse, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| domain("at least one epoch is required"))?;
    let last = model.clone();
    model.params = params;
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
        last,
    })
}

/// Per-channel MAE and SD of `|prediction - target|` in output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub mae: Vec<f64>,
    pub sd: Vec<f64>,
    /// MAE and SD pooled over the channels after the first (q2 onwards).
    pub pooled_mae: f64,
    pub pooled_sd: f64,
}

pub fn evaluate(model: &TcnModel, set: &WindowSet) -> Result<ModelEval> {
    check_set(model, set, "test")?;
    let pred = predict_set(model, set)?;
    let c = model.config.channels_out;
    let n = set.len();
    let err = |i: usize, ch: usize| {
        let s = &model.output_scale;
        (s.denormalize(ch, pred[i * c + ch]) - s.denormalize(ch, set.targets[i * c + ch])).abs()
    };
    let stats = |vals: Vec<f64>| {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len().max(2) - 1) as f64;
        (m, var.sqrt())
    };
    let (mut mae, mut sd) = (Vec::with_capacity(c), Vec::with_capacity(c));
    for ch in 0..c {
        let (m, s) = stats((0..n).map(|i| err(i, ch)).collect());
        mae.push(m);
        sd.push(s);
    }
    let first = if c > 2 { 1 } else { 0 };
    let (pooled_mae, pooled_sd) = stats(
        (0..n)
            .flat_map(|i| (first..c).map(move |ch| (i, ch)))
            .map(|(i, ch)| err(i, ch))
            .collect(),
    );
    Ok(ModelEval {
        mae,
        sd,
        pooled_mae,
        pooled_sd,
    })
}

/// Training log as CSV with header `epoch,train_mse,valid_mse`.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_mse,valid_mse\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, e.valid_mse));
    }
    s
}
