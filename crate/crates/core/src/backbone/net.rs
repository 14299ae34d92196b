use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{init_normal, sigmoid, ConvGeom, Graph, ParamId, ParamSet, Tensor, Var};
use crate::scanio::{RangeImage, SegMask, SensorConfig};

/// How the segmentation branch is supervised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegVariant {
    /// H_seg only feeds the attention gates.
    #[default]
    AttentionOnly,
    /// H_seg also drives a mask decoder trained with Dice loss.
    Dice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub sensor: SensorConfig,
    pub latent_dim: usize,
    /// Output channels of each stride-2 encoder block.
    pub widths: Vec<usize>,
    /// Segmentation attention on/off. Off gives a plain range-image autoencoder
    /// that never sees the mask.
    pub attention: bool,
    pub seg_variant: SegVariant,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            sensor: SensorConfig::default(),
            latent_dim: 128,
            widths: vec![8, 16, 32, 32],
            attention: true,
            seg_variant: SegVariant::AttentionOnly,
        }
    }
}

/// Spatial geometry of one encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub geom: ConvGeom,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("widths must be nonempty and positive, got {:?}", self.widths));
        }
        let (mut h, mut w) = (self.sensor.beams, self.sensor.azimuth_bins);
        for i in 0..self.widths.len() {
            if h > 1 && h % 2 != 0 {
                return bad(format!("block {i}: {h} rows cannot be halved"));
            }
            if w < 2 || w % 2 != 0 {
                return bad(format!("block {i}: {w} columns cannot be halved"));
            }
            h = if h > 1 { h / 2 } else { 1 };
            w /= 2;
        }
        if self.seg_variant == SegVariant::Dice && !self.attention {
            return bad("the dice variant needs attention enabled".into());
        }
        Ok(())
    }

    pub fn stages(&self) -> Vec<Stage> {
        let (mut h, mut w) = (self.sensor.beams, self.sensor.azimuth_bins);
        self.widths
            .iter()
            .map(|_| {
                let geom = if h > 1 {
                    ConvGeom { kh: 4, kw: 4, sh: 2, sw: 2, ph: 1, pw: 1 }
                } else {
                    ConvGeom { kh: 1, kw: 4, sh: 1, sw: 2, ph: 0, pw: 1 }
                };
                let (h_out, w_out) = geom.conv_out(h, w);
                let s = Stage { geom, h_in: h, w_in: w, h_out, w_out };
                (h, w) = (h_out, w_out);
                s
            })
            .collect()
    }

    /// Encoder input channels: normalised range, validity and, with attention, the mask.
    pub fn in_channels(&self) -> usize {
        if self.attention {
            3
        } else {
            2
        }
    }

    pub fn seg_widths(&self) -> Vec<usize> {
        self.widths.iter().map(|&w| (w / 2).max(1)).collect()
    }

    fn bottleneck(&self) -> usize {
        let last = *self.stages().last().expect("validated");
        self.widths[self.widths.len() - 1] * last.h_out * last.w_out
    }

    /// Every parameter as `(name, shape, fan_in)`, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let stages = self.stages();
        let n = self.widths.len();
        let seg = self.seg_widths();
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>, usize)>, name: String, o: usize, c: usize, g: ConvGeom| {
            out.push((format!("{name}.w"), vec![o, c, g.kh, g.kw], c * g.kh * g.kw));
            out.push((format!("{name}.b"), vec![o], 0));
        };
        let mut c = self.in_channels();
        for (i, st) in stages.iter().enumerate() {
            conv(&mut out, format!("enc{i}"), self.widths[i], c, st.geom);
            c = self.widths[i];
        }
        if self.attention {
            let mut c = 1;
            for (i, st) in stages.iter().enumerate() {
                conv(&mut out, format!("seg{i}"), seg[i], c, st.geom);
                c = seg[i];
                out.push((format!("att{i}.w"), vec![self.widths[i], seg[i]], seg[i]));
                out.push((format!("att{i}.b"), vec![self.widths[i]], 0));
            }
        }
        let (d, flat) = (self.latent_dim, self.bottleneck());
        out.push(("enc.fc.w".into(), vec![d, flat], flat));
        out.push(("enc.fc.b".into(), vec![d], 0));
        out.push(("dec.fc.w".into(), vec![flat, d], d));
        out.push(("dec.fc.b".into(), vec![flat], 0));
        let convt = |out: &mut Vec<(String, Vec<usize>, usize)>, name: String, c: usize, o: usize, g: ConvGeom| {
            let fan = (c * g.kh * g.kw / (g.sh * g.sw)).max(1);
            out.push((format!("{name}.w"), vec![c, o, g.kh, g.kw], fan));
            out.push((format!("{name}.b"), vec![o], 0));
        };
        for i in (0..n).rev() {
            let o = if i == 0 { 1 } else { self.widths[i - 1] };
            convt(&mut out, format!("dec{i}"), self.widths[i], o, stages[i].geom);
        }
        if self.attention && self.seg_variant == SegVariant::Dice {
            for i in (0..n).rev() {
                let o = if i == 0 { 1 } else { seg[i - 1] };
                convt(&mut out, format!("segdec{i}"), seg[i], o, stages[i].geom);
            }
        }
        out
    }
}

/// Seeded per-parameter initialisation. Each array draws from its own
/// stream keyed by `(seed, name)`, so arrays shared between configurations
/// start identical.
pub fn init_params(layout: &[(String, Vec<usize>, usize)], seed: u64) -> ParamSet {
    let mut set = ParamSet::new();
    for (name, shape, fan_in) in layout {
        let t = if *fan_in == 0 {
            Tensor::zeros(shape)
        } else {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(name.as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            init_normal(&mut rng, shape, *fan_in)
        };
        set.insert(name.clone(), t);
    }
    set
}

/// Fixed-length embedding produced by the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dist2(&self, other: &LatentCode) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn dot(&self, other: &LatentCode) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Unit-length copy (zero codes are returned unchanged).
    pub fn normalized(&self) -> LatentCode {
        let n = self.dot(self).sqrt();
        if n > 0.0 {
            LatentCode(self.0.iter().map(|v| v / n).collect())
        } else {
            self.clone()
        }
    }
}

/// Channel attention from segmentation features: adaptive average pooling,
/// a linear projection and a logistic squash.
#[derive(Clone, Debug, PartialEq)]
pub struct SegAttention {
    /// `[C, C']`
    pub weight: Tensor,
    /// `[C]`
    pub bias: Tensor,
}

impl SegAttention {
    pub fn gates(&self, seg_features: &Tensor) -> Result<Vec<f64>> {
        let (c, cs) = (self.weight.shape()[0], self.weight.shape()[1]);
        if seg_features.shape().len() != 3 || seg_features.shape()[0] != cs {
            return Err(Error::ShapeMismatch(format!(
                "segmentation features {:?} vs projection input width {cs}",
                seg_features.shape()
            )));
        }
        let hw = seg_features.len() / cs;
        let pooled: Vec<f64> = seg_features.data().chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
        let w = self.weight.data();
        Ok((0..c)
            .map(|o| sigmoid(self.bias.data()[o] + (0..cs).map(|i| w[o * cs + i] * pooled[i]).sum::<f64>()))
            .collect())
    }

    pub fn apply(&self, features: &Tensor, seg_features: &Tensor) -> Result<Tensor> {
        let g = self.gates(seg_features)?;
        let c = features.shape()[0];
        if c != g.len() {
            return Err(Error::ShapeMismatch(format!("{} gates for {c} feature channels", g.len())));
        }
        let hw = features.len() / c;
        let data = features.data().iter().enumerate().map(|(i, v)| v * g[i / hw]).collect();
        Ok(Tensor::from_vec(features.shape(), data))
    }
}

/// A scan prepared as network input.
#[derive(Clone, Debug)]
pub struct ScanInput {
    /// `[C_in, H, W]`
    pub x: Tensor,
    /// `[1, H, W]` mask, present when attention is on.
    pub seg: Option<Tensor>,
    /// `[1, H, W]` normalised target ranges.
    pub target: Tensor,
    /// `[1, H, W]` validity weights.
    pub valid: Tensor,
    pub n_valid: usize,
    pub mask: Tensor,
}

/// Parameter handles of one backbone inside a (possibly merged) [`ParamSet`].
#[derive(Clone, Debug)]
pub struct BackboneNet {
    pub config: BackboneConfig,
    stages: Vec<Stage>,
    enc: Vec<(ParamId, ParamId)>,
    seg: Vec<(ParamId, ParamId)>,
    att: Vec<(ParamId, ParamId)>,
    enc_fc: (ParamId, ParamId),
    dec_fc: (ParamId, ParamId),
    dec: Vec<(ParamId, ParamId)>,
    segdec: Vec<(ParamId, ParamId)>,
}

/// Encoder outputs kept for the losses that need them.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub z: Var,
    pub gates: Vec<Var>,
    pub seg_last: Option<Var>,
}

impl BackboneNet {
    /// Resolves every parameter of `config` under `prefix`, checking shapes.
    pub fn bind(config: &BackboneConfig, set: &ParamSet, prefix: &str) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in config.layout() {
            let full = format!("{prefix}{name}");
            let id = set.id(&full).ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {full}")))?;
            if set.get(id).shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{full}: expected {shape:?}, found {:?}",
                    set.get(id).shape()
                )));
            }
        }
        let id = |n: String| set.id(&format!("{prefix}{n}")).expect("checked above");
        let pair = |n: String| (id(format!("{n}.w")), id(format!("{n}.b")));
        let n = config.widths.len();
        let dice = config.attention && config.seg_variant == SegVariant::Dice;
        Ok(Self {
            config: config.clone(),
            stages: config.stages(),
            enc: (0..n).map(|i| pair(format!("enc{i}"))).collect(),
            seg: if config.attention { (0..n).map(|i| pair(format!("seg{i}"))).collect() } else { vec![] },
            att: if config.attention { (0..n).map(|i| pair(format!("att{i}"))).collect() } else { vec![] },
            enc_fc: pair("enc.fc".into()),
            dec_fc: pair("dec.fc".into()),
            dec: (0..n).map(|i| pair(format!("dec{i}"))).collect(),
            segdec: if dice { (0..n).map(|i| pair(format!("segdec{i}"))).collect() } else { vec![] },
        })
    }

    pub fn has_seg_decoder(&self) -> bool {
        !self.segdec.is_empty()
    }

    pub fn prepare(&self, x: &RangeImage, mask: &SegMask) -> Result<ScanInput> {
        let s = &self.config.sensor;
        if x.shape() != (s.beams, s.azimuth_bins) || x.config().max_range != s.max_range {
            return Err(Error::ShapeMismatch(format!(
                "scan {:?} (max range {}) vs model {}x{} (max range {})",
                x.shape(),
                x.config().max_range,
                s.beams,
                s.azimuth_bins,
                s.max_range
            )));
        }
        x.check_mask(mask)?;
        let (h, w) = x.shape();
        let target = x.normalized();
        let valid = x.valid_f64();
        let m = mask.as_f64();
        let mut xin = Vec::with_capacity(self.config.in_channels() * h * w);
        xin.extend_from_slice(&target);
        xin.extend_from_slice(&valid);
        if self.config.attention {
            xin.extend_from_slice(&m);
        }
        Ok(ScanInput {
            x: Tensor::from_vec(&[self.config.in_channels(), h, w], xin),
            seg: self.config.attention.then(|| Tensor::from_vec(&[1, h, w], m.clone())),
            target: Tensor::from_vec(&[1, h, w], target),
            n_valid: x.valid_count(),
            valid: Tensor::from_vec(&[1, h, w], valid),
            mask: Tensor::from_vec(&[1, h, w], m),
        })
    }

    pub fn encode(&self, g: &mut Graph, input: &ScanInput) -> Encoded {
        let mut h = g.input(input.x.clone());
        let mut s = input.seg.as_ref().map(|t| g.input(t.clone()));
        let mut gates = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            let (w, b) = (g.param(self.enc[i].0), g.param(self.enc[i].1));
            let c = g.conv2d(h, w, b, st.geom);
            h = g.elu(c);
            if let Some(sv) = s {
                let (sw, sb) = (g.param(self.seg[i].0), g.param(self.seg[i].1));
                let c = g.conv2d(sv, sw, sb, st.geom);
                let sv = g.elu(c);
                let pooled = g.channel_mean(sv);
                let (aw, ab) = (g.param(self.att[i].0), g.param(self.att[i].1));
                let logits = g.linear(aw, pooled, ab);
                let gate = g.sigmoid(logits);
                h = g.channel_scale(h, gate);
                gates.push(gate);
                s = Some(sv);
            }
        }
        let n = g.value(h).len();
        let flat = g.reshape(h, &[n]);
        let (w, b) = (g.param(self.enc_fc.0), g.param(self.enc_fc.1));
        let z = g.linear(w, flat, b);
        Encoded { z, gates, seg_last: s }
    }

    /// Normalised range prediction `[1, H, W]` in `(0, 1)`.
    pub fn decode(&self, g: &mut Graph, z: Var) -> Var {
        let last = *self.stages.last().expect("validated");
        let c = *self.config.widths.last().expect("validated");
        let (w, b) = (g.param(self.dec_fc.0), g.param(self.dec_fc.1));
        let flat = g.linear(w, z, b);
        let mut h = g.reshape(flat, &[c, last.h_out, last.w_out]);
        h = g.elu(h);
        h = self.up(g, h, &self.dec);
        g.sigmoid(h)
    }

    /// Mask probabilities `[1, H, W]` from the last segmentation features.
    pub fn decode_mask(&self, g: &mut Graph, seg_last: Var) -> Var {
        let h = self.up(g, seg_last, &self.segdec);
        g.sigmoid(h)
    }

    /// Transposed-convolution stack; ELU between blocks, raw logits out.
    fn up(&self, g: &mut Graph, mut h: Var, layers: &[(ParamId, ParamId)]) -> Var {
        for i in (0..self.stages.len()).rev() {
            let (w, b) = (g.param(layers[i].0), g.param(layers[i].1));
            h = g.conv_transpose2d(h, w, b, self.stages[i].geom);
            if i > 0 {
                h = g.elu(h);
            }
        }
        h
    }
}

/// A trained or freshly initialised backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub params: ParamSet,
}

pub const CHECKPOINT_KIND: &str = "backbone";

impl BackboneParams {
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config: config.clone(), params: init_params(&config.layout(), seed) })
    }

    pub fn from_parts(config: BackboneConfig, params: ParamSet) -> Result<Self> {
        BackboneNet::bind(&config, &params, "")?;
        if !params.all_finite() {
            return Err(Error::OutOfRange("non-finite backbone parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn net(&self) -> BackboneNet {
        BackboneNet::bind(&self.config, &self.params, "").expect("consistent by construction")
    }

    pub fn encode(&self, x: &RangeImage, x_seg: &SegMask) -> Result<LatentCode> {
        let net = self.net();
        let input = net.prepare(x, x_seg)?;
        let mut g = Graph::new(&self.params);
        let e = net.encode(&mut g, &input);
        Ok(LatentCode(g.value(e.z).data().to_vec()))
    }

    /// Decoded image; cells below the sensor's minimum range are invalid.
    pub fn decode(&self, z: &LatentCode) -> Result<RangeImage> {
        let ranges = self.decode_ranges(z)?;
        let s = self.config.sensor;
        let img: Vec<f64> = ranges.iter().map(|&r| if r >= s.min_range as f64 { r } else { 0.0 }).collect();
        RangeImage::from_ranges(s, &img)
    }

    /// Raw decoded ranges in metres, within `[0, max_range]`.
    pub fn decode_ranges(&self, z: &LatentCode) -> Result<Vec<f64>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent code of length {} for latent_dim {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let net = self.net();
        let mut g = Graph::new(&self.params);
        let zv = g.input(Tensor::from_vec(&[z.len()], z.0.clone()));
        let out = net.decode(&mut g, zv);
        let max = self.config.sensor.max_range as f64;
        Ok(g.value(out).data().iter().map(|v| (v * max).clamp(0.0, max)).collect())
    }

    /// Encode then decode, keeping the validity pattern of `x`.
    pub fn reconstruct(&self, x: &RangeImage, x_seg: &SegMask) -> Result<RangeImage> {
        let ranges = self.decode_ranges(&self.encode(x, x_seg)?)?;
        Ok(restrict_to(x, &ranges))
    }

    /// Mask probabilities from the Dice decoder, when present.
    pub fn predict_mask(&self, x: &RangeImage, x_seg: &SegMask) -> Result<Option<Vec<f64>>> {
        let net = self.net();
        if !net.has_seg_decoder() {
            return Ok(None);
        }
        let input = net.prepare(x, x_seg)?;
        let mut g = Graph::new(&self.params);
        let e = net.encode(&mut g, &input);
        let m = net.decode_mask(&mut g, e.seg_last.expect("dice implies attention"));
        Ok(Some(g.value(m).data().to_vec()))
    }

    /// The attention module of encoder stage `i`.
    pub fn attention(&self, i: usize) -> Option<SegAttention> {
        let w = self.params.id(&format!("att{i}.w"))?;
        let b = self.params.id(&format!("att{i}.b"))?;
        Some(SegAttention { weight: self.params.get(w).clone(), bias: self.params.get(b).clone() })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::checkpoint::save(path, CHECKPOINT_KIND, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (config, params) = crate::checkpoint::load(path, CHECKPOINT_KIND)?;
        Self::from_parts(config, params)
    }
}

/// Image with `x`'s validity and `ranges` (metres) in the valid cells,
/// clamped into the sensor limits.
pub fn restrict_to(x: &RangeImage, ranges: &[f64]) -> RangeImage {
    let s = x.config();
    let mut out = RangeImage::empty(*s);
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            if x.is_valid(r, c) {
                let v = ranges[r * x.cols() + c].clamp(s.min_range as f64, s.max_range as f64);
                out.set(r, c, v as f32);
            }
        }
    }
    out
}
