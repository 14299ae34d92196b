use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{check_finite, init_params, BCE_CLAMP};
use crate::error::{Error, Result};
use crate::nn::{Adam, ConvGeom, Gradients, Graph, ParamId, ParamSet, Tensor, Var};
use crate::scanio::{RangeImage, ScanPair, SegMask, SensorConfig};

pub const DSR_CHECKPOINT_KIND: &str = "dsr";

const SAME: ConvGeom = ConvGeom { kh: 3, kw: 3, sh: 1, sw: 1, ph: 1, pw: 1 };
const POINT: ConvGeom = ConvGeom { kh: 1, kw: 1, sh: 1, sw: 1, ph: 0, pw: 0 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsrConfig {
    pub sensor: SensorConfig,
    pub widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsrTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub widths: Vec<usize>,
    /// Weight of dynamic cells in the cross entropy; `None` uses the square
    /// root of the static-to-dynamic cell ratio of the training set.
    pub positive_weight: Option<f64>,
    pub seed: u64,
}

impl Default for DsrTrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-2, batch_size: 8, widths: vec![8, 8, 8], positive_weight: None, seed: 0 }
    }
}

/// Per-cell dynamic/static classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct DsrModel {
    pub config: DsrConfig,
    pub params: ParamSet,
}

fn layout(widths: &[usize]) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut c = 3;
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("c{i}.w"), vec![w, c, 3, 3], c * 9));
        out.push((format!("c{i}.b"), vec![w], 0));
        c = w;
    }
    out.push(("head.w".into(), vec![1, c, 1, 1], c));
    out.push(("head.b".into(), vec![1], 0));
    out
}

/// Normalised range, validity and normalised row index.
fn features(x: &RangeImage) -> Tensor {
    let (h, w) = x.shape();
    let mut out = Vec::with_capacity(3 * h * w);
    out.extend(x.normalized());
    out.extend(x.valid_f64());
    for r in 0..h {
        let v = if h > 1 { r as f64 / (h - 1) as f64 } else { 0.0 };
        out.extend(std::iter::repeat(v).take(w));
    }
    Tensor::from_vec(&[3, h, w], out)
}

struct DsrNet {
    convs: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

impl DsrNet {
    fn bind(cfg: &DsrConfig, set: &ParamSet) -> Result<Self> {
        for (name, shape, _) in layout(&cfg.widths) {
            match set.id(&name) {
                Some(id) if set.get(id).shape() == shape.as_slice() => {}
                _ => return Err(Error::ShapeMismatch(format!("DSR parameter {name} missing or misshapen"))),
            }
        }
        let pair = |n: &str| (set.id(&format!("{n}.w")).expect("checked"), set.id(&format!("{n}.b")).expect("checked"));
        Ok(Self { convs: (0..cfg.widths.len()).map(|i| pair(&format!("c{i}"))).collect(), head: pair("head") })
    }

    /// Dynamic probabilities `[1, H, W]`.
    fn forward(&self, g: &mut Graph, x: &Tensor) -> Var {
        let mut h = g.input(x.clone());
        for &(w, b) in &self.convs {
            let (w, b) = (g.param(w), g.param(b));
            let c = g.conv2d(h, w, b, SAME);
            h = g.elu(c);
        }
        let (w, b) = (g.param(self.head.0), g.param(self.head.1));
        let logits = g.conv2d(h, w, b, POINT);
        g.sigmoid(logits)
    }
}

impl DsrModel {
    pub fn init(config: DsrConfig, seed: u64) -> Result<Self> {
        config.sensor.validate()?;
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::InvalidConfig("DSR widths must be nonempty and positive".into()));
        }
        let params = init_params(&layout(&config.widths), seed ^ 0xd5);
        Ok(Self { config, params })
    }

    fn check(&self, x: &RangeImage) -> Result<()> {
        let s = &self.config.sensor;
        if x.shape() != (s.beams, s.azimuth_bins) || x.config().max_range != s.max_range {
            return Err(Error::ShapeMismatch(format!("scan {:?} vs DSR model {}x{}", x.shape(), s.beams, s.azimuth_bins)));
        }
        Ok(())
    }

    /// Per-cell dynamic probabilities, row-major.
    pub fn probabilities(&self, x: &RangeImage) -> Result<Vec<f64>> {
        self.check(x)?;
        let net = DsrNet::bind(&self.config, &self.params)?;
        let mut g = Graph::new(&self.params);
        let p = net.forward(&mut g, &features(x));
        Ok(g.value(p).data().to_vec())
    }

    /// Predicted mask restricted to valid cells.
    pub fn predict(&self, x: &RangeImage) -> Result<SegMask> {
        let p = self.probabilities(x)?;
        let labels = p.iter().zip(x.valid()).map(|(&p, &v)| v && p > 0.5).collect();
        SegMask::from_labels(x.rows(), x.cols(), labels)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::checkpoint::save(path, DSR_CHECKPOINT_KIND, &self.config, &self.params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (config, params): (DsrConfig, ParamSet) = crate::checkpoint::load(path, DSR_CHECKPOINT_KIND)?;
        DsrNet::bind(&config, &params)?;
        Ok(Self { config, params })
    }
}

/// Fraction of valid cells the classifier calls dynamic.
pub fn dsr(scan: &RangeImage, m: &DsrModel) -> Result<f64> {
    let pred = m.predict(scan)?;
    Ok(pred.count() as f64 / scan.valid_count().max(1) as f64)
}

/// Fraction of valid cells marked dynamic by a given mask.
pub fn dsr_from_mask(scan: &RangeImage, mask: &SegMask) -> Result<f64> {
    scan.check_mask(mask)?;
    let k = mask.labels().iter().zip(scan.valid()).filter(|(&m, &v)| m && v).count();
    Ok(k as f64 / scan.valid_count().max(1) as f64)
}

/// Per-cell accuracy over the valid cells of every static and dynamic scan.
pub fn dsr_accuracy(pairs: &[ScanPair], m: &DsrModel) -> Result<f64> {
    let (mut ok, mut n) = (0usize, 0usize);
    for p in pairs {
        for (x, mask) in [(&p.dynamic, &p.dynamic_mask), (&p.static_scan, &p.static_mask)] {
            let pred = m.predict(x)?;
            for i in 0..x.valid().len() {
                if x.valid()[i] {
                    n += 1;
                    ok += (pred.labels()[i] == mask.labels()[i]) as usize;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::Empty("no valid cells"));
    }
    Ok(ok as f64 / n as f64)
}

struct Sample {
    x: Tensor,
    pos: Tensor,
    neg: Tensor,
    norm: f64,
}

/// Trains on the static and dynamic scans of `pairs` with their masks.
pub fn train_dsr_classifier(pairs: &[ScanPair], cfg: &DsrTrainConfig) -> Result<DsrModel> {
    let first = pairs.first().ok_or(Error::Empty("training set"))?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("DSR training needs epochs, batch size and lr > 0".into()));
    }
    let mut model = DsrModel::init(DsrConfig { sensor: *first.dynamic.config(), widths: cfg.widths.clone() }, cfg.seed)?;
    let scans: Vec<(&RangeImage, &SegMask)> =
        pairs.iter().flat_map(|p| [(&p.dynamic, &p.dynamic_mask), (&p.static_scan, &p.static_mask)]).collect();
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (x, m) in &scans {
        model.check(x)?;
        x.check_mask(m)?;
        for i in 0..x.valid().len() {
            if x.valid()[i] {
                if m.labels()[i] {
                    n_pos += 1
                } else {
                    n_neg += 1
                }
            }
        }
    }
    let wp = match cfg.positive_weight {
        Some(w) if w > 0.0 => w,
        Some(w) => return Err(Error::InvalidConfig(format!("positive weight {w} must be > 0"))),
        None if n_pos == 0 => 1.0,
        None => (n_neg as f64 / n_pos as f64).sqrt().max(1.0),
    };
    let samples: Vec<Sample> = scans
        .iter()
        .map(|(x, m)| {
            let (h, w) = x.shape();
            let pos: Vec<f64> = (0..h * w).map(|i| if x.valid()[i] && m.labels()[i] { wp } else { 0.0 }).collect();
            let neg: Vec<f64> = (0..h * w).map(|i| if x.valid()[i] && !m.labels()[i] { 1.0 } else { 0.0 }).collect();
            let norm = pos.iter().sum::<f64>() + neg.iter().sum::<f64>();
            Sample { x: features(x), pos: Tensor::from_vec(&[1, h, w], pos), neg: Tensor::from_vec(&[1, h, w], neg), norm }
        })
        .filter(|s| s.norm > 0.0)
        .collect();
    if samples.is_empty() {
        return Err(Error::Empty("no valid cells in the training set"));
    }
    let net = DsrNet::bind(&model.config, &model.params)?;
    let mut opt = Adam::new(&model.params, cfg.lr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd5d5);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&model.params);
            for &i in batch {
                let s = &samples[i];
                let mut g = Graph::new(&model.params);
                let p = net.forward(&mut g, &s.x);
                let pc = g.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP);
                let lp = g.log(pc);
                let q = g.scale(pc, -1.0);
                let q = g.add_const(q, 1.0);
                let lq = g.log(q);
                let a = g.mul_const(lp, s.pos.clone());
                let b = g.mul_const(lq, s.neg.clone());
                let sa = g.sum(a);
                let sb = g.sum(b);
                let t = g.add(sa, sb);
                let loss = g.scale(t, -1.0 / s.norm);
                let grads = g.backward(loss);
                check_finite("dsr", epoch, g.value(loss).item(), &grads)?;
                acc.accumulate(&grads);
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &acc);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanio::{synth_sequence, WorldSpec};

    fn sensor() -> SensorConfig {
        SensorConfig { beams: 8, azimuth_bins: 32, ..SensorConfig::default() }
    }

    #[test]
    fn ratio_from_ground_truth_mask() {
        let ps = synth_sequence(&WorldSpec { frame_count: 3, sensor: sensor(), ..WorldSpec::default() }).unwrap();
        for p in &ps {
            assert_eq!(dsr_from_mask(&p.static_scan, &p.static_mask).unwrap(), 0.0);
            let d = dsr_from_mask(&p.dynamic, &p.dynamic_mask).unwrap();
            assert!((0.0..=1.0).contains(&d));
        }
        assert!(dsr_from_mask(&ps[0].dynamic, &SegMask::empty(4, 4)).is_err());
    }

    #[test]
    fn dsr_in_unit_interval_and_round_trip() {
        let ps = synth_sequence(&WorldSpec { frame_count: 2, sensor: sensor(), ..WorldSpec::default() }).unwrap();
        let m = DsrModel::init(DsrConfig { sensor: sensor(), widths: vec![2] }, 3).unwrap();
        let d = dsr(&ps[0].dynamic, &m).unwrap();
        assert!((0.0..=1.0).contains(&d));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dsr.slkc");
        m.save(&path).unwrap();
        assert_eq!(DsrModel::load(&path).unwrap(), m);
    }

    #[test]
    fn training_is_deterministic_and_improves_accuracy() {
        let ps = synth_sequence(&WorldSpec { frame_count: 12, seed: 4, sensor: sensor(), ..WorldSpec::default() }).unwrap();
        let cfg = DsrTrainConfig { epochs: 40, widths: vec![6, 6], ..DsrTrainConfig::default() };
        let a = train_dsr_classifier(&ps, &cfg).unwrap();
        assert_eq!(a, train_dsr_classifier(&ps, &cfg).unwrap());
        let before = dsr_accuracy(&ps, &DsrModel::init(a.config.clone(), cfg.seed).unwrap()).unwrap();
        let after = dsr_accuracy(&ps, &a).unwrap();
        assert!(after > before, "{before} -> {after}");
        let hits: usize = ps.iter().map(|p| {
            let pred = a.predict(&p.dynamic).unwrap();
            pred.labels().iter().zip(p.dynamic_mask.labels()).filter(|(&x, &y)| x && y).count()
        }).sum();
        assert!(hits > 0);
    }
}
