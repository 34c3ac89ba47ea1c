//! The detector, noise estimator and noise remover, their layer specs, and
//! the composed model that owns all weights.

mod checkpoint;
mod pipeline;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Conv2dGeom, Graph, LstmParams, ParamId, ParamStore, Var};
use crate::segments::segment_bounds;
use crate::spectro::StftConfig;

pub use checkpoint::{ModelCheckpoint, CHECKPOINT_VERSION};
pub use pipeline::{
    apply_mask, confidences_to_mask, noise_profile, ComplexRatioMask, DenoiseOptions, DenoiseOutput,
    MaskMode, MaskSource, Removal,
};

/// One convolution layer. Kernel, dilation and stride are (time, frequency).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub stride: (usize, usize),
    #[serde(default)]
    pub transposed: bool,
}

impl ConvLayer {
    pub const fn conv(channels: usize, kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Self { channels, kernel, dilation, stride: (1, 1), transposed: false }
    }

    /// Square kernel, isotropic dilation and stride.
    pub const fn square(channels: usize, k: usize, dilation: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel: (k, k),
            dilation: (dilation, dilation),
            stride: (stride, stride),
            transposed: false,
        }
    }

    pub const fn up(channels: usize, k: usize, stride: usize) -> Self {
        Self { channels, kernel: (k, k), dilation: (1, 1), stride: (stride, stride), transposed: true }
    }

    pub fn geom(&self) -> Conv2dGeom {
        Conv2dGeom {
            kernel: self.kernel,
            stride: self.stride,
            dilation: self.dilation,
            padding: (
                self.dilation.0 * (self.kernel.0 - 1) / 2,
                self.dilation.1 * (self.kernel.1 - 1) / 2,
            ),
        }
    }

    fn halved(&self) -> Self {
        Self { channels: (self.channels / 2).max(1), ..*self }
    }
}

/// Detector: conv stack, BiLSTM over frames, two dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidNetworkSpec {
    pub convs: Vec<ConvLayer>,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
}

/// Noise estimator: two encoders, a decoder, and skip connections given as
/// 1-based layer ids `(from, to)` counted across encoder then decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimatorSpec {
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub skips: Vec<(usize, usize)>,
}

/// Noise remover: encoder on the noisy spectrogram, a half-width encoder on
/// the noise estimate, BiLSTM, dense head ending in `2F` sigmoid outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRemovalSpec {
    pub encoder: Vec<ConvLayer>,
    pub lstm_hidden: usize,
    pub fc: Vec<usize>,
}

const fn c(ch: usize, k: (usize, usize), d: (usize, usize)) -> ConvLayer {
    ConvLayer::conv(ch, k, d)
}

impl SidNetworkSpec {
    pub fn paper() -> Self {
        let mut convs = vec![c(48, (1, 7), (1, 1)), c(48, (7, 1), (1, 1))];
        for d in [(1, 1), (2, 1), (4, 1), (8, 1), (16, 1), (32, 1), (1, 1), (2, 2), (4, 4)] {
            convs.push(c(48, (5, 5), d));
        }
        convs.push(c(8, (1, 1), (1, 1)));
        Self { convs, lstm_hidden: 100, fc_hidden: 100 }
    }

    pub fn desk() -> Self {
        Self {
            convs: vec![
                c(8, (1, 7), (1, 1)),
                c(8, (7, 1), (1, 1)),
                c(8, (5, 5), (2, 1)),
                c(4, (1, 1), (1, 1)),
            ],
            lstm_hidden: 16,
            fc_hidden: 16,
        }
    }
}

impl NoiseEstimatorSpec {
    pub fn paper() -> Self {
        let s = ConvLayer::square;
        let mut decoder = vec![s(256, 3, 1, 2)];
        for d in [1, 2, 4, 8, 16, 1, 1] {
            decoder.push(s(256, 3, d, 1));
        }
        decoder.extend([
            ConvLayer::up(128, 3, 2),
            s(128, 3, 1, 1),
            ConvLayer::up(64, 3, 2),
            s(64, 3, 1, 1),
            s(2, 3, 1, 1),
        ]);
        Self {
            encoder: vec![s(64, 5, 1, 1), s(128, 5, 1, 2), s(128, 5, 1, 1)],
            decoder,
            skips: vec![(2, 14), (4, 12)],
        }
    }

    pub fn desk() -> Self {
        let s = ConvLayer::square;
        Self {
            encoder: vec![s(4, 5, 1, 1), s(8, 5, 1, 2), s(8, 5, 1, 1)],
            decoder: vec![
                s(16, 3, 1, 2),
                s(16, 3, 2, 1),
                s(16, 3, 4, 1),
                ConvLayer::up(8, 3, 2),
                s(8, 3, 1, 1),
                ConvLayer::up(4, 3, 2),
                s(4, 3, 1, 1),
                s(2, 3, 1, 1),
            ],
            skips: vec![(2, 9), (4, 7)],
        }
    }
}

impl NoiseRemovalSpec {
    pub fn paper() -> Self {
        let mut encoder = vec![c(96, (1, 7), (1, 1)), c(96, (7, 1), (1, 1))];
        for d in [
            (1, 1), (2, 1), (4, 1), (8, 1), (16, 1), (32, 1), (1, 1), (2, 2), (4, 4), (8, 8), (16, 16), (32, 32),
        ] {
            encoder.push(c(96, (5, 5), d));
        }
        encoder.push(c(8, (1, 1), (1, 1)));
        Self { encoder, lstm_hidden: 200, fc: vec![600, 600] }
    }

    pub fn desk() -> Self {
        Self {
            encoder: vec![
                c(8, (1, 7), (1, 1)),
                c(8, (7, 1), (1, 1)),
                c(8, (5, 5), (2, 1)),
                c(4, (1, 1), (1, 1)),
            ],
            lstm_hidden: 24,
            fc: vec![48, 48],
        }
    }

    pub fn noise_encoder(&self) -> Vec<ConvLayer> {
        self.encoder.iter().map(ConvLayer::halved).collect()
    }
}

/// Architecture of all three components plus the analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub sid: SidNetworkSpec,
    pub ne: NoiseEstimatorSpec,
    pub nr: NoiseRemovalSpec,
    pub stft: StftConfig,
    pub mask_mode: MaskMode,
}

impl ModelSpec {
    pub fn paper() -> Self {
        Self {
            sid: SidNetworkSpec::paper(),
            ne: NoiseEstimatorSpec::paper(),
            nr: NoiseRemovalSpec::paper(),
            stft: StftConfig::default(),
            mask_mode: MaskMode::Complex,
        }
    }

    /// Narrow, shallow networks that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            sid: SidNetworkSpec::desk(),
            ne: NoiseEstimatorSpec::desk(),
            nr: NoiseRemovalSpec::desk(),
            stft: StftConfig::default(),
            mask_mode: MaskMode::Complex,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    layer: ConvLayer,
    w: ParamId,
    b: Option<ParamId>,
    bn: Option<BatchNorm>,
}

impl ConvBlock {
    /// With `bn`, the block is conv, batch norm, ReLU (no conv bias);
    /// otherwise a plain conv with bias.
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, layer: ConvLayer, bn: bool, rng: &mut ChaCha8Rng) -> Self {
        let (kh, kw) = layer.kernel;
        let fan_in = in_ch * kh * kw;
        let shape = if layer.transposed {
            [in_ch, layer.channels, kh, kw]
        } else {
            [layer.channels, in_ch, kh, kw]
        };
        let w = store.add_uniform(format!("{name}.weight"), &shape, fan_in, rng);
        let (b, bn) = if bn {
            let ch = layer.channels;
            let bn = BatchNorm {
                gamma: store.add_const(format!("{name}.bn.gamma"), &[ch], 1.0, true),
                beta: store.add_const(format!("{name}.bn.beta"), &[ch], 0.0, true),
                mean: store.add_const(format!("{name}.bn.running_mean"), &[ch], 0.0, false),
                var: store.add_const(format!("{name}.bn.running_var"), &[ch], 1.0, false),
            };
            (None, Some(bn))
        } else {
            (Some(store.add_uniform(format!("{name}.bias"), &[layer.channels], fan_in, rng)), None)
        };
        Self { layer, w, b, bn }
    }

    fn forward(&self, g: &mut Graph, x: Var, out_hw: Option<(usize, usize)>) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        let geom = self.layer.geom();
        let y = if self.layer.transposed {
            let s = g.shape(x);
            let target = out_hw.unwrap_or((s[2] * geom.stride.0, s[3] * geom.stride.1));
            g.conv_transpose2d(x, w, b, geom, target)
        } else {
            g.conv2d(x, w, b, geom)
        };
        match self.bn {
            Some(bn) => {
                let (gamma, beta) = (g.param(bn.gamma), g.param(bn.beta));
                let y = g.batch_norm(y, gamma, beta, bn.mean, bn.var);
                g.relu(y)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: store.add_uniform(format!("{name}.weight"), &[out, inp], inp, rng),
            b: store.add_uniform(format!("{name}.bias"), &[out], inp, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, b)
    }
}

fn conv_stack(store: &mut ParamStore, prefix: &str, in_ch: usize, layers: &[ConvLayer], rng: &mut ChaCha8Rng) -> Vec<ConvBlock> {
    let mut ch = in_ch;
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let b = ConvBlock::new(store, &format!("{prefix}.conv{}", i + 1), ch, *l, true, rng);
            ch = l.channels;
            b
        })
        .collect()
}

/// Frames whose analysis-window centre falls in each 1/30 s segment; a
/// segment containing no centre takes the nearest frame.
pub fn frame_groups(n_frames: usize, n_samples: usize, cfg: &StftConfig, rate: u32) -> Vec<Vec<usize>> {
    let center = |t: usize| t * cfg.hop + cfg.n_fft / 2;
    segment_bounds(n_samples, rate)
        .into_iter()
        .map(|r| {
            let inside: Vec<usize> = (0..n_frames).filter(|&t| r.contains(&center(t))).collect();
            if !inside.is_empty() {
                return inside;
            }
            let mid = (r.start + r.end) as f64 / 2.0;
            let nearest = (0..n_frames)
                .min_by(|&a, &b| {
                    let da = (center(a) as f64 - mid).abs();
                    let db = (center(b) as f64 - mid).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap_or(0);
            vec![nearest]
        })
        .collect()
}

/// The silent interval detector.
#[derive(Debug, Clone)]
pub struct SidNet {
    convs: Vec<ConvBlock>,
    fwd: LstmParams,
    bwd: LstmParams,
    fc1: Dense,
    fc2: Dense,
}

impl SidNet {
    fn new(store: &mut ParamStore, spec: &SidNetworkSpec, n_freq: usize, rng: &mut ChaCha8Rng) -> Self {
        let convs = conv_stack(store, "sid", 2, &spec.convs, rng);
        let feat = spec.convs.last().map_or(2, |l| l.channels) * n_freq;
        let h = spec.lstm_hidden;
        Self {
            convs,
            fwd: LstmParams::new(store, "sid.lstm.fwd", feat, h, rng),
            bwd: LstmParams::new(store, "sid.lstm.bwd", feat, h, rng),
            fc1: Dense::new(store, "sid.fc1", 2 * h, spec.fc_hidden, rng),
            fc2: Dense::new(store, "sid.fc2", spec.fc_hidden, 1, rng),
        }
    }

    /// Per-frame silence probabilities `[B, T]` for spectrograms `[B, 2, T, F]`.
    pub fn frame_probs(&self, g: &mut Graph, spec: Var) -> Var {
        let mut x = spec;
        for c in &self.convs {
            x = c.forward(g, x, None);
        }
        let seq = g.planes_to_seq(x);
        let h = g.bilstm(seq, &self.fwd, &self.bwd);
        let h = self.fc1.forward(g, h);
        let h = g.relu(h);
        let h = self.fc2.forward(g, h);
        let p = g.sigmoid(h);
        let s = g.shape(p).to_vec();
        g.reshape(p, &s[..2])
    }

    /// Segment confidences `[B, S]` for clips of `n_samples` samples.
    pub fn forward(&self, g: &mut Graph, spec: Var, n_samples: usize, cfg: &StftConfig, rate: u32) -> Var {
        let p = self.frame_probs(g, spec);
        let frames = g.shape(p)[1];
        g.segment_mean(p, frame_groups(frames, n_samples, cfg, rate))
    }
}

/// The noise estimator (spectrogram inpainting network).
#[derive(Debug, Clone)]
pub struct NoiseEstimator {
    enc_a: Vec<ConvBlock>,
    enc_b: Vec<ConvBlock>,
    dec: Vec<ConvBlock>,
    skips: Vec<(usize, usize)>,
}

impl NoiseEstimator {
    fn new(store: &mut ParamStore, spec: &NoiseEstimatorSpec, rng: &mut ChaCha8Rng) -> Self {
        let n_enc = spec.encoder.len();
        let enc_a = conv_stack(store, "ne.enc_noisy", 2, &spec.encoder, rng);
        let enc_b = conv_stack(store, "ne.enc_profile", 2, &spec.encoder, rng);
        // Channel count of every layer's output, counting both encoders.
        let mut out_ch: Vec<usize> = spec.encoder.iter().map(|l| 2 * l.channels).collect();
        let mut dec = Vec::with_capacity(spec.decoder.len());
        let mut ch = out_ch.last().copied().unwrap_or(4);
        for (i, l) in spec.decoder.iter().enumerate() {
            let id = n_enc + i + 1;
            let extra: usize = spec.skips.iter().filter(|s| s.1 == id).map(|s| out_ch[s.0 - 1]).sum();
            let last = i + 1 == spec.decoder.len();
            dec.push(ConvBlock::new(store, &format!("ne.dec{id}"), ch + extra, *l, !last, rng));
            ch = l.channels;
            out_ch.push(ch);
        }
        Self { enc_a, enc_b, dec, skips: spec.skips.clone() }
    }

    /// Full noise spectrogram `[B, 2, T, F]` from the noisy spectrogram and
    /// the spectrogram of the exposed noise profile.
    pub fn forward(&self, g: &mut Graph, noisy: Var, profile: Var) -> Var {
        let mut outs: Vec<Var> = Vec::new();
        let (mut a, mut b) = (noisy, profile);
        for (la, lb) in self.enc_a.iter().zip(&self.enc_b) {
            a = la.forward(g, a, None);
            b = lb.forward(g, b, None);
            outs.push(g.concat_channels(&[a, b]));
        }
        let n_enc = self.enc_a.len();
        let mut x = *outs.last().expect("estimator needs an encoder");
        // Spatial size at the input of each layer, used to undo strides.
        let mut sizes: Vec<(usize, usize)> = vec![(g.shape(noisy)[2], g.shape(noisy)[3])];
        for o in &outs {
            sizes.push((g.shape(*o)[2], g.shape(*o)[3]));
        }
        for (i, layer) in self.dec.iter().enumerate() {
            let id = n_enc + i + 1;
            let mut parts = vec![x];
            parts.extend(self.skips.iter().filter(|s| s.1 == id).map(|s| outs[s.0 - 1]));
            if parts.len() > 1 {
                x = g.concat_channels(&parts);
            }
            let target = if layer.layer.transposed {
                let cur = (g.shape(x)[2], g.shape(x)[3]);
                // Upsample to the most recent larger size seen on the way down.
                sizes.iter().rev().find(|s| s.0 > cur.0 || s.1 > cur.1).copied()
            } else {
                None
            };
            x = layer.forward(g, x, target);
            outs.push(x);
            sizes.push((g.shape(x)[2], g.shape(x)[3]));
        }
        x
    }
}

/// The noise remover predicting a complex ratio mask.
#[derive(Debug, Clone)]
pub struct NoiseRemoval {
    enc_a: Vec<ConvBlock>,
    enc_b: Vec<ConvBlock>,
    fwd: LstmParams,
    bwd: LstmParams,
    fcs: Vec<Dense>,
}

impl NoiseRemoval {
    fn new(store: &mut ParamStore, spec: &NoiseRemovalSpec, n_freq: usize, rng: &mut ChaCha8Rng) -> Self {
        let noise_layers = spec.noise_encoder();
        let enc_a = conv_stack(store, "nr.enc_noisy", 2, &spec.encoder, rng);
        let enc_b = conv_stack(store, "nr.enc_noise", 2, &noise_layers, rng);
        let feat = (spec.encoder.last().map_or(2, |l| l.channels) + noise_layers.last().map_or(2, |l| l.channels)) * n_freq;
        let h = spec.lstm_hidden;
        let fwd = LstmParams::new(store, "nr.lstm.fwd", feat, h, rng);
        let bwd = LstmParams::new(store, "nr.lstm.bwd", feat, h, rng);
        let mut fcs = Vec::new();
        let mut inp = 2 * h;
        for (i, &w) in spec.fc.iter().chain(std::iter::once(&(2 * n_freq))).enumerate() {
            fcs.push(Dense::new(store, &format!("nr.fc{}", i + 1), inp, w, rng));
            inp = w;
        }
        Self { enc_a, enc_b, fwd, bwd, fcs }
    }

    /// Mask `[B, 2, T, F]` with entries in `[0, 1]`.
    pub fn forward(&self, g: &mut Graph, noisy: Var, noise: Var) -> Var {
        let (mut a, mut b) = (noisy, noise);
        for l in &self.enc_a {
            a = l.forward(g, a, None);
        }
        for l in &self.enc_b {
            b = l.forward(g, b, None);
        }
        let x = g.concat_channels(&[a, b]);
        let seq = g.planes_to_seq(x);
        let mut h = g.bilstm(seq, &self.fwd, &self.bwd);
        for (i, fc) in self.fcs.iter().enumerate() {
            h = fc.forward(g, h);
            h = if i + 1 == self.fcs.len() { g.sigmoid(h) } else { g.relu(h) };
        }
        g.seq_to_planes(h, 2)
    }
}

/// All weights of the three components plus their architecture.
#[derive(Debug, Clone)]
pub struct SilenceModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub sid: SidNet,
    pub ne: NoiseEstimator,
    pub nr: NoiseRemoval,
    pub seed: u64,
}

pub const SID_PREFIX: &str = "sid.";
pub const NE_PREFIX: &str = "ne.";
pub const NR_PREFIX: &str = "nr.";

impl SilenceModel {
    /// Fresh weights: fan-in scaled uniform draws from a seeded stream.
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = spec.stft.n_freq();
        let sid = SidNet::new(&mut store, &spec.sid, f, &mut rng);
        let ne = NoiseEstimator::new(&mut store, &spec.ne, &mut rng);
        let nr = NoiseRemoval::new(&mut store, &spec.nr, f, &mut rng);
        Self { spec, store, sid, ne, nr, seed }
    }

    pub fn n_params(&self, prefix: &str) -> usize {
        self.store
            .ids_with_prefix(prefix)
            .filter(|&id| self.store.is_trainable(id))
            .map(|id| self.store.get(id).len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn frame_groups_cover_every_segment() {
        let cfg = StftConfig::default();
        for n in [16000usize, 32000, 59200, 700] {
            let frames = cfg.n_frames(n);
            let groups = frame_groups(frames, n, &cfg, 16000);
            assert_eq!(groups.len(), crate::segments::segment_count(n, 16000));
            assert!(groups.iter().all(|g| !g.is_empty() && g.iter().all(|&t| t < frames)));
        }
    }

    #[test]
    fn estimator_restores_input_resolution_for_odd_lengths() {
        let m = SilenceModel::new(ModelSpec::desk(), 1);
        for t in [179usize, 88, 7] {
            let mut g = Graph::new(&m.store, false);
            let x = g.input(Tensor::zeros(&[1, 2, t, 256]));
            let p = g.input(Tensor::zeros(&[1, 2, t, 256]));
            let y = m.ne.forward(&mut g, x, p);
            assert_eq!(g.shape(y), [1, 2, t, 256]);
            assert!(g.value(y).all_finite());
        }
    }

    #[test]
    fn paper_specs_follow_the_layer_tables() {
        let s = SidNetworkSpec::paper();
        assert_eq!(s.convs.len(), 12);
        assert!(s.convs.iter().all(|l| l.stride == (1, 1)));
        assert_eq!(s.convs[11].channels, 8);
        assert_eq!(s.convs[7].dilation, (32, 1));
        let n = NoiseEstimatorSpec::paper();
        assert_eq!(n.encoder.len() + n.decoder.len(), 16);
        assert!(n.decoder[8].transposed && n.decoder[10].transposed);
        let r = NoiseRemovalSpec::paper();
        assert_eq!(r.encoder.len(), 15);
        assert_eq!(r.noise_encoder()[0].channels, 48);
        assert_eq!(r.noise_encoder()[14].channels, 4);
    }

    #[test]
    fn paper_estimator_skip_channels_line_up() {
        // Skip sources: layer 2 (two 128-channel encoders) into layer 14, and
        // layer 4 (256 channels) into layer 12.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ne = NoiseEstimator::new(&mut store, &NoiseEstimatorSpec::paper(), &mut rng);
        let w12 = store.get(ne.dec[8].w).shape().to_vec();
        let w14 = store.get(ne.dec[10].w).shape().to_vec();
        assert_eq!(w12, [256 + 256, 128, 3, 3]);
        assert_eq!(w14, [128 + 256, 64, 3, 3]);
    }
}
