use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::{check_finite, init_params};
use crate::error::{Error, Result};
use crate::nn::{Adam, ConvGeom, Gradients, Graph, ParamId, ParamSet, Tensor, Var};
use crate::scanio::{RangeImage, SensorConfig};

pub const LQI_CHECKPOINT_KIND: &str = "lqi";

/// Clamp applied to the curvature channel, in units of `sigma_max`.
const CURVATURE_CLIP: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqiConfig {
    pub sensor: SensorConfig,
    pub widths: [usize; 3],
    /// Largest noise standard deviation seen in training, metres.
    pub sigma_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqiTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub widths: [usize; 3],
    pub seed: u64,
}

impl Default for LqiTrainConfig {
    fn default() -> Self {
        Self { epochs: 15, lr: 2e-3, batch_size: 8, widths: [8, 16, 16], seed: 0 }
    }
}

/// Noise-level regressor over range images.
#[derive(Clone, Debug, PartialEq)]
pub struct LqiModel {
    pub config: LqiConfig,
    pub params: ParamSet,
}

fn stage_geom(h: usize) -> ConvGeom {
    if h > 1 {
        ConvGeom { kh: 4, kw: 4, sh: 2, sw: 2, ph: 1, pw: 1 }
    } else {
        ConvGeom { kh: 1, kw: 4, sh: 1, sw: 2, ph: 0, pw: 1 }
    }
}

fn layout(widths: &[usize; 3]) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut c = 3;
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("c{i}.w"), vec![w, c, 4, 4], c * 16));
        out.push((format!("c{i}.b"), vec![w], 0));
        c = w;
    }
    out.push(("head.w".into(), vec![1, c], c));
    out.push(("head.b".into(), vec![1], 0));
    out
}

/// Input channels: normalised range, validity, and the azimuthal second
/// difference of ranges in units of `sigma_max`, clipped and zero where a
/// neighbour is missing.
pub fn lqi_features(x: &RangeImage, sigma_max: f64) -> Tensor {
    let (h, w) = x.shape();
    let mut out = Vec::with_capacity(3 * h * w);
    out.extend(x.normalized());
    out.extend(x.valid_f64());
    for r in 0..h {
        for c in 0..w {
            let (l, m, rt) = (x.get(r, (c + w - 1) % w), x.get(r, c), x.get(r, (c + 1) % w));
            let v = match (l, m, rt) {
                (Some(a), Some(b), Some(d)) => ((a as f64 - 2.0 * b as f64 + d as f64) / sigma_max).clamp(-CURVATURE_CLIP, CURVATURE_CLIP),
                _ => 0.0,
            };
            out.push(v);
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to valid
/// cells, clamped into the sensor limits.
pub fn add_range_noise(x: &RangeImage, sigma: f64, rng: &mut impl Rng) -> RangeImage {
    let mut out = x.clone();
    if sigma <= 0.0 {
        return out;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    let cfg = *x.config();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            if let Some(v) = x.get(r, c) {
                let y = (v as f64 + n.sample(rng)).clamp(cfg.min_range as f64, cfg.max_range as f64);
                out.set(r, c, y as f32);
            }
        }
    }
    out
}

struct LqiNet {
    convs: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
    geoms: Vec<ConvGeom>,
}

impl LqiNet {
    fn bind(cfg: &LqiConfig, set: &ParamSet) -> Result<Self> {
        for (name, shape, _) in layout(&cfg.widths) {
            match set.id(&name) {
                Some(id) if set.get(id).shape() == shape.as_slice() => {}
                _ => return Err(Error::ShapeMismatch(format!("LQI parameter {name} missing or misshapen"))),
            }
        }
        let pair = |n: &str| (set.id(&format!("{n}.w")).expect("checked"), set.id(&format!("{n}.b")).expect("checked"));
        let mut geoms = Vec::new();
        let mut h = cfg.sensor.beams;
        for _ in 0..3 {
            let g = stage_geom(h);
            geoms.push(g);
            h = g.conv_out(h, cfg.sensor.azimuth_bins).0;
        }
        Ok(Self { convs: (0..3).map(|i| pair(&format!("c{i}"))).collect(), head: pair("head"), geoms })
    }

    /// Predicted `sigma / sigma_max` as a scalar node.
    fn forward(&self, g: &mut Graph, x: &Tensor) -> Var {
        let mut h = g.input(x.clone());
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            let (w, b) = (g.param(w), g.param(b));
            let c = g.conv2d(h, w, b, self.geoms[i]);
            h = g.elu(c);
        }
        let pooled = g.channel_mean(h);
        let (w, b) = (g.param(self.head.0), g.param(self.head.1));
        let y = g.linear(w, pooled, b);
        g.reshape(y, &[])
    }
}

impl LqiModel {
    pub fn init(config: LqiConfig, seed: u64) -> Result<Self> {
        config.sensor.validate()?;
        if !(config.sigma_max > 0.0) || config.widths.contains(&0) {
            return Err(Error::InvalidConfig("LQI needs sigma_max > 0 and positive widths".into()));
        }
        let (mut h, mut w) = (config.sensor.beams, config.sensor.azimuth_bins);
        for _ in 0..3 {
            if (h > 1 && h % 2 != 0) || w % 2 != 0 || w < 2 {
                return Err(Error::InvalidConfig(format!("LQI cannot halve a {h}x{w} grid three times")));
            }
            h = if h > 1 { h / 2 } else { 1 };
            w /= 2;
        }
        let params = init_params(&layout(&config.widths), seed ^ 0x191);
        Ok(Self { config, params })
    }

    fn check(&self, x: &RangeImage) -> Result<()> {
        let s = &self.config.sensor;
        if x.shape() != (s.beams, s.azimuth_bins) || x.config().max_range != s.max_range {
            return Err(Error::ShapeMismatch(format!("scan {:?} vs LQI model {}x{}", x.shape(), s.beams, s.azimuth_bins)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::checkpoint::save(path, LQI_CHECKPOINT_KIND, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (config, params): (LqiConfig, ParamSet) = crate::checkpoint::load(path, LQI_CHECKPOINT_KIND)?;
        LqiNet::bind(&config, &params)?;
        Ok(Self { config, params })
    }
}

/// Regressed noise level in metres; lower means a cleaner scan.
pub fn lqi(scan: &RangeImage, m: &LqiModel) -> Result<f64> {
    m.check(scan)?;
    let net = LqiNet::bind(&m.config, &m.params)?;
    let mut g = Graph::new(&m.params);
    let y = net.forward(&mut g, &lqi_features(scan, m.config.sigma_max));
    Ok(g.value(y).item().max(0.0) * m.config.sigma_max)
}

/// Fits the regressor on noisy copies of `clean`. Each epoch every scan is
/// paired with one noise level from each of `levels` equal strata of
/// `[0, sigma_max]`.
pub fn train_lqi(clean: &[RangeImage], sigma_max: f64, levels: usize, cfg: &LqiTrainConfig) -> Result<LqiModel> {
    let first = clean.first().ok_or(Error::Empty("clean scan set"))?;
    if levels == 0 || cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("LQI training needs levels, epochs, batch size and lr > 0".into()));
    }
    let config = LqiConfig { sensor: *first.config(), widths: cfg.widths, sigma_max };
    let mut model = LqiModel::init(config, cfg.seed)?;
    for x in clean {
        model.check(x)?;
    }
    let net = LqiNet::bind(&model.config, &model.params)?;
    let mut opt = Adam::new(&model.params, cfg.lr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1c1);
    let mut items: Vec<(usize, usize)> = (0..clean.len()).flat_map(|i| (0..levels).map(move |k| (i, k))).collect();
    for epoch in 0..cfg.epochs {
        items.shuffle(&mut rng);
        for batch in items.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&model.params);
            for &(i, k) in batch {
                let sigma = (k as f64 + rng.gen::<f64>()) / levels as f64 * sigma_max;
                let noisy = add_range_noise(&clean[i], sigma, &mut rng);
                let mut g = Graph::new(&model.params);
                let y = net.forward(&mut g, &lqi_features(&noisy, sigma_max));
                let e = g.add_const(y, -sigma / sigma_max);
                let l = g.mul(e, e);
                let grads = g.backward(l);
                check_finite("lqi", epoch, g.value(l).item(), &grads)?;
                acc.accumulate(&grads);
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &acc);
        }
    }
    Ok(model)
}
