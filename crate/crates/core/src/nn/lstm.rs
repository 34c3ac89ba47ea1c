use rand::Rng;

use super::kernels::gemm;
use super::params::{ParamId, ParamStore};

/// Weights of one LSTM direction. Gate order is input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_ih: store.add_uniform(format!("{name}.w_ih"), &[4 * hidden, input], hidden, rng),
            w_hh: store.add_uniform(format!("{name}.w_hh"), &[4 * hidden, hidden], hidden, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[4 * hidden], hidden, rng),
            input,
            hidden,
        }
    }
}

/// Activations kept for the backward pass, indexed by step (not time).
#[derive(Debug, Default)]
pub(crate) struct DirCache {
    gates: Vec<f64>,
    cells: Vec<f64>,
    hs: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SeqDims {
    pub batch: usize,
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn time_of(step: usize, steps: usize, reverse: bool) -> usize {
    if reverse {
        steps - 1 - step
    } else {
        step
    }
}

/// Runs one direction over `x` (`[B, T, In]`); writes `h_t` into `out`
/// (`[B, T, out_stride]` starting at column `out_col`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_dir(
    x: &[f64],
    d: SeqDims,
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    reverse: bool,
    out: &mut [f64],
    out_stride: usize,
    out_col: usize,
) -> DirCache {
    let (b, t, h) = (d.batch, d.steps, d.hidden);
    let g4 = 4 * h;
    let mut pre = vec![0.0; b * t * g4];
    for row in pre.chunks_exact_mut(g4) {
        row.copy_from_slice(bias);
    }
    gemm(b * t, d.input, g4, x, d.input, 1, w_ih, 1, d.input, 1.0, &mut pre, g4, 1);

    let mut cache = DirCache {
        gates: vec![0.0; t * b * g4],
        cells: vec![0.0; t * b * h],
        hs: vec![0.0; t * b * h],
    };
    let zeros = vec![0.0; b * h];
    for s in 0..t {
        let tt = time_of(s, t, reverse);
        let gates = &mut cache.gates[s * b * g4..(s + 1) * b * g4];
        for bi in 0..b {
            gates[bi * g4..(bi + 1) * g4].copy_from_slice(&pre[(bi * t + tt) * g4..(bi * t + tt + 1) * g4]);
        }
        let h_prev = if s == 0 { &zeros[..] } else { &cache.hs[(s - 1) * b * h..s * b * h] };
        gemm(b, h, g4, h_prev, h, 1, w_hh, 1, h, 1.0, gates, g4, 1);
        for bi in 0..b {
            let g = &mut gates[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                g[j] = sigmoid(g[j]);
                g[h + j] = sigmoid(g[h + j]);
                g[2 * h + j] = g[2 * h + j].tanh();
                g[3 * h + j] = sigmoid(g[3 * h + j]);
            }
            for j in 0..h {
                let c_prev = if s == 0 { 0.0 } else { cache.cells[((s - 1) * b + bi) * h + j] };
                let c = g[h + j] * c_prev + g[j] * g[2 * h + j];
                let hv = g[3 * h + j] * c.tanh();
                cache.cells[(s * b + bi) * h + j] = c;
                cache.hs[(s * b + bi) * h + j] = hv;
                out[(bi * t + tt) * out_stride + out_col + j] = hv;
            }
        }
    }
    cache
}

pub(crate) struct DirGrads {
    pub dx: Vec<f64>,
    pub dw_ih: Vec<f64>,
    pub dw_hh: Vec<f64>,
    pub dbias: Vec<f64>,
}

/// Backpropagation through time for one direction. `dout` is read from
/// columns `out_col..out_col + H` of rows with stride `out_stride`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_dir(
    x: &[f64],
    d: SeqDims,
    w_ih: &[f64],
    w_hh: &[f64],
    cache: &DirCache,
    reverse: bool,
    dout: &[f64],
    out_stride: usize,
    out_col: usize,
) -> DirGrads {
    let (b, t, h) = (d.batch, d.steps, d.hidden);
    let g4 = 4 * h;
    let mut dpre = vec![0.0; b * t * g4];
    let mut dw_hh = vec![0.0; g4 * h];
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    let mut dstep = vec![0.0; b * g4];
    for s in (0..t).rev() {
        let tt = time_of(s, t, reverse);
        let gates = &cache.gates[s * b * g4..(s + 1) * b * g4];
        for bi in 0..b {
            let g = &gates[bi * g4..(bi + 1) * g4];
            let ds = &mut dstep[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                let c = cache.cells[(s * b + bi) * h + j];
                let c_prev = if s == 0 { 0.0 } else { cache.cells[((s - 1) * b + bi) * h + j] };
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = c.tanh();
                let dh = dout[(bi * t + tt) * out_stride + out_col + j] + dh_next[bi * h + j];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[bi * h + j];
                ds[j] = dc * gg * i * (1.0 - i);
                ds[h + j] = dc * c_prev * f * (1.0 - f);
                ds[2 * h + j] = dc * i * (1.0 - gg * gg);
                ds[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[bi * h + j] = dc * f;
            }
            dpre[(bi * t + tt) * g4..(bi * t + tt + 1) * g4].copy_from_slice(ds);
        }
        if s > 0 {
            let h_prev = &cache.hs[(s - 1) * b * h..s * b * h];
            gemm(g4, b, h, &dstep, 1, g4, h_prev, h, 1, 1.0, &mut dw_hh, h, 1);
        }
        gemm(b, g4, h, &dstep, g4, 1, w_hh, h, 1, 0.0, &mut dh_next, h, 1);
    }
    let mut dw_ih = vec![0.0; g4 * d.input];
    gemm(g4, b * t, d.input, &dpre, 1, g4, x, d.input, 1, 0.0, &mut dw_ih, d.input, 1);
    let mut dx = vec![0.0; b * t * d.input];
    gemm(b * t, g4, d.input, &dpre, g4, 1, w_ih, d.input, 1, 0.0, &mut dx, d.input, 1);
    let mut dbias = vec![0.0; g4];
    for row in dpre.chunks_exact(g4) {
        dbias.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    DirGrads { dx, dw_ih, dw_hh, dbias }
}
