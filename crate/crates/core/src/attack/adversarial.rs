use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{bce, check_finite, init_params, loss_graph as lg, BackboneNet, BackboneParams, LatentCode, Prepared, ScanInput};
use crate::error::{Error, Result};
use crate::nn::{Adam, Gradients, Graph, ParamId, ParamSet, Tensor, Var};
use crate::pretext::{pd_score, PdNet, PdParams};
use crate::scanio::{RangeImage, ScanPair, SegMask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discriminator {
    /// The frozen pretext head scoring `(r(d_j), r(s_j'))`.
    #[default]
    Pretext,
    /// A single-code real/fake classifier trained on dynamic vs static codes.
    Vanilla,
}

impl std::str::FromStr for Discriminator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretext" => Ok(Self::Pretext),
            "vanilla" => Ok(Self::Vanilla),
            _ => Err(Error::Parse(format!("unknown discriminator {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Weight of the reconstruction-toward-dynamic term.
    pub recon_weight: f64,
    pub discriminator: Discriminator,
    /// Epochs spent fitting the vanilla discriminator before the attack.
    pub vanilla_epochs: usize,
    pub seed: u64,
}

impl Default for AdvTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 3e-4,
            weight_decay: 0.0,
            batch_size: 8,
            recon_weight: 1.0,
            discriminator: Discriminator::Pretext,
            vanilla_epochs: 30,
            seed: 0,
        }
    }
}

impl AdvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("adversarial training needs epochs, batch size and lr > 0".into()));
        }
        if !(self.recon_weight >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weights must be >= 0".into()));
        }
        if self.discriminator == Discriminator::Vanilla && self.vanilla_epochs == 0 {
            return Err(Error::InvalidConfig("vanilla discriminator needs vanilla_epochs > 0".into()));
        }
        Ok(())
    }
}

/// Terms of the adversarial objective. `recon` is the mean squared error
/// of normalised ranges between the attacked reconstruction and `d_j`;
/// `literal_mse` is the same error between the raw inputs `s_j` and `d_j`,
/// which no parameter influences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvLoss {
    pub score: f64,
    pub bce: f64,
    pub recon: f64,
    pub literal_mse: f64,
}

impl AdvLoss {
    pub fn total(&self) -> f64 {
        self.bce + self.recon
    }
}

/// Graph form of the objective for one `(d_j, s_j')` pair, where `s_j'`
/// carries the corrupted mask.
pub fn adv_objective(g: &mut Graph, bb: &BackboneNet, pd: &PdNet, d: &ScanInput, s_corrupt: &ScanInput, recon_weight: f64) -> (Var, Var, Var) {
    let zd = bb.encode(g, d).z;
    let zs = bb.encode(g, s_corrupt).z;
    let p = pd.score(g, zd, zs);
    let b = lg::bce(g, p, 1.0);
    let out = bb.decode(g, zs);
    let r = lg::recon(g, out, &d.target, &d.valid, d.n_valid);
    let rw = g.scale(r, recon_weight);
    (g.add(b, rw), p, r)
}

/// Evaluates the adversarial objective. `s_j.1` is the (corrupted) mask the
/// static scan is encoded with.
pub fn adv_loss(d_j: (&RangeImage, &SegMask), s_j: (&RangeImage, &SegMask), bp: &BackboneParams, pp: &PdParams) -> Result<AdvLoss> {
    if pp.latent_dim != bp.config.latent_dim {
        return Err(Error::ShapeMismatch("pretext head and backbone latent widths differ".into()));
    }
    if !d_j.0.same_shape(s_j.0) {
        return Err(Error::ShapeMismatch("static and dynamic scans differ in shape".into()));
    }
    let merged = ParamSet::merged(&[("bb.", &bp.params), ("pd.", &pp.params)]);
    let bb = BackboneNet::bind(&bp.config, &merged, "bb.")?;
    let pd = PdNet::bind(pp.latent_dim, &merged, "pd.")?;
    let (d, s) = (bb.prepare(d_j.0, d_j.1)?, bb.prepare(s_j.0, s_j.1)?);
    if d.n_valid == 0 {
        return Err(Error::Empty("dynamic scan without valid cells"));
    }
    let mut g = Graph::new(&merged);
    let (_, p, r) = adv_objective(&mut g, &bb, &pd, &d, &s, 1.0);
    let score = g.value(p).item();
    let out = AdvLoss { score, bce: bce(score, 1.0), recon: g.value(r).item(), literal_mse: literal_mse(s_j.0, d_j.0) };
    if !out.total().is_finite() {
        return Err(Error::Divergence { stage: "attack", epoch: 0, detail: "non-finite adversarial loss".into() });
    }
    Ok(out)
}

/// Mean squared difference of normalised ranges over cells valid in both.
pub fn literal_mse(a: &RangeImage, b: &RangeImage) -> f64 {
    let max = a.config().max_range as f64;
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..a.ranges().len() {
        if a.valid()[i] && b.valid()[i] {
            let d = (a.ranges()[i] as f64 - b.ranges()[i] as f64) / max;
            s += d * d;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn vanilla_layout(d: usize) -> Vec<(String, Vec<usize>, usize)> {
    vec![
        ("v0.w".into(), vec![d, d], d),
        ("v0.b".into(), vec![d], 0),
        ("v1.w".into(), vec![1, d], d),
        ("v1.b".into(), vec![1], 0),
    ]
}

/// Single-code real/fake head `z -> D -> 1`, real meaning dynamic.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaParams {
    pub latent_dim: usize,
    pub params: ParamSet,
}

struct VanillaNet {
    layers: [(ParamId, ParamId); 2],
}

impl VanillaNet {
    fn bind(set: &ParamSet, prefix: &str) -> Result<Self> {
        let pair = |i: usize| -> Result<(ParamId, ParamId)> {
            let w = set.id(&format!("{prefix}v{i}.w"));
            let b = set.id(&format!("{prefix}v{i}.b"));
            w.zip(b).ok_or_else(|| Error::ShapeMismatch(format!("vanilla discriminator layer {i} missing")))
        };
        Ok(Self { layers: [pair(0)?, pair(1)?] })
    }

    fn score(&self, g: &mut Graph, z: Var) -> Var {
        let mut h = z;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (g.param(w), g.param(b));
            h = g.linear(w, h, b);
            if i == 0 {
                h = g.elu(h);
            }
        }
        let logit = g.reshape(h, &[]);
        g.sigmoid(logit)
    }
}

impl VanillaParams {
    pub fn init(latent_dim: usize, seed: u64) -> Self {
        Self { latent_dim, params: init_params(&vanilla_layout(latent_dim), seed ^ 0xd15c) }
    }

    pub fn score(&self, z: &LatentCode) -> Result<f64> {
        if z.len() != self.latent_dim {
            return Err(Error::ShapeMismatch(format!("code of length {} for width {}", z.len(), self.latent_dim)));
        }
        let net = VanillaNet::bind(&self.params, "")?;
        let mut g = Graph::new(&self.params);
        let zv = g.input(Tensor::from_vec(&[z.len()], z.0.clone()));
        let p = net.score(&mut g, zv);
        Ok(g.value(p).item())
    }
}

/// Fits a vanilla discriminator on fixed codes: dynamic scans labelled 1,
/// static scans 0.
pub fn train_vanilla(pairs: &[ScanPair], bp: &BackboneParams, epochs: usize, lr: f64, seed: u64) -> Result<VanillaParams> {
    if pairs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut codes = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        codes.push((bp.encode(&p.dynamic, &p.dynamic_mask)?, 1.0));
        codes.push((bp.encode(&p.static_scan, &p.static_mask)?, 0.0));
    }
    let mut v = VanillaParams::init(bp.config.latent_dim, seed);
    let net = VanillaNet::bind(&v.params, "")?;
    let mut opt = Adam::new(&v.params, lr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11);
    for epoch in 0..epochs {
        codes.shuffle(&mut rng);
        for batch in codes.chunks(8) {
            let mut acc = Gradients::zeros_like(&v.params);
            for (z, label) in batch {
                let mut g = Graph::new(&v.params);
                let zv = g.input(Tensor::from_vec(&[z.len()], z.0.clone()));
                let p = net.score(&mut g, zv);
                let l = lg::bce(&mut g, p, *label);
                let grads = g.backward(l);
                check_finite("vanilla-discriminator", epoch, g.value(l).item(), &grads)?;
                acc.accumulate(&grads);
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut v.params, &acc);
        }
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvEpoch {
    pub epoch: usize,
    pub bce: f64,
    pub recon: f64,
    pub mean_score: f64,
}

#[derive(Clone, Debug)]
pub struct AdvOutcome {
    pub backbone: BackboneParams,
    pub history: Vec<AdvEpoch>,
}

/// Trains an attack backbone against the frozen pretext head.
pub fn train_adversarial(pairs: &[ScanPair], bp: &BackboneParams, pp: &PdParams, cfg: &AdvTrainConfig) -> Result<BackboneParams> {
    Ok(train_adversarial_with_history(pairs, bp, pp, cfg)?.backbone)
}

/// [`train_adversarial`] with per-epoch loss terms. Each static scan is
/// encoded under its partner dynamic scan's mask; the backbone is pushed to
/// make the discriminator accept the result as dynamic while its decoding
/// approaches the dynamic scan.
pub fn train_adversarial_with_history(pairs: &[ScanPair], bp: &BackboneParams, pp: &PdParams, cfg: &AdvTrainConfig) -> Result<AdvOutcome> {
    cfg.validate()?;
    if pp.latent_dim != bp.config.latent_dim {
        return Err(Error::ShapeMismatch("pretext head and backbone latent widths differ".into()));
    }
    let vanilla = match cfg.discriminator {
        Discriminator::Pretext => None,
        Discriminator::Vanilla => Some(train_vanilla(pairs, bp, cfg.vanilla_epochs, 1e-3, cfg.seed)?),
    };
    let head: (&str, &ParamSet) = match &vanilla {
        None => ("pd.", &pp.params),
        Some(v) => ("vd.", &v.params),
    };
    let mut params = ParamSet::merged(&[("bb.", &bp.params), head]);
    let bb = BackboneNet::bind(&bp.config, &params, "bb.")?;
    let pd = PdNet::bind(pp.latent_dim, &params, "pd.").ok();
    let vd = VanillaNet::bind(&params, "vd.").ok();
    let mut opt = Adam::new(&params, cfg.lr, cfg.weight_decay);
    let frozen: Vec<ParamId> = params.iter().filter(|(_, n, _)| !n.starts_with("bb.")).map(|(id, _, _)| id).collect();
    frozen.into_iter().for_each(|id| opt.freeze(id));

    let data = Prepared::new(&bb, pairs)?;
    let corrupted: Vec<Vec<ScanInput>> = data
        .seqs
        .iter()
        .map(|q| q.iter().map(|p| bb.prepare(&p.static_scan, &p.dynamic_mask)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut items: Vec<(usize, usize)> = data.items().into_iter().filter(|&(s, i)| data.dynm[s][i].n_valid > 0).collect();
    if items.is_empty() {
        return Err(Error::Empty("no dynamic scan with valid cells"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xadd5);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        items.shuffle(&mut rng);
        let (mut sb, mut sr, mut sp) = (0.0, 0.0, 0.0);
        for batch in items.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&params);
            for &(s, i) in batch {
                let mut g = Graph::new(&params);
                let (d, sc) = (&data.dynm[s][i], &corrupted[s][i]);
                let (root, p, r) = match (&pd, &vd) {
                    (Some(pd), _) => adv_objective(&mut g, &bb, pd, d, sc, cfg.recon_weight),
                    (None, Some(vd)) => {
                        let zs = bb.encode(&mut g, sc).z;
                        let p = vd.score(&mut g, zs);
                        let b = lg::bce(&mut g, p, 1.0);
                        let out = bb.decode(&mut g, zs);
                        let r = lg::recon(&mut g, out, &d.target, &d.valid, d.n_valid);
                        let rw = g.scale(r, cfg.recon_weight);
                        (g.add(b, rw), p, r)
                    }
                    (None, None) => unreachable!("one head is always bound"),
                };
                let (pv, rv) = (g.value(p).item(), g.value(r).item());
                let total = g.value(root).item();
                let grads = g.backward(root);
                check_finite("attack", epoch, total, &grads)?;
                acc.accumulate(&grads);
                sb += bce(pv, 1.0);
                sr += rv;
                sp += pv;
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &acc);
        }
        let n = items.len() as f64;
        history.push(AdvEpoch { epoch, bce: sb / n, recon: sr / n, mean_score: sp / n });
    }
    let backbone = BackboneParams::from_parts(bp.config.clone(), params.extract("bb."))
        .map_err(|e| Error::Divergence { stage: "attack", epoch: cfg.epochs, detail: e.to_string() })?;
    Ok(AdvOutcome { backbone, history })
}

/// Mean pretext score of `(r(d_j), r(s_j'))` where `s_j'` is the static
/// scan under `d_j`'s mask.
pub fn mean_heterogeneous_score(pairs: &[ScanPair], bp: &BackboneParams, pp: &PdParams) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut s = 0.0;
    for p in pairs {
        let zd = bp.encode(&p.dynamic, &p.dynamic_mask)?;
        let zs = bp.encode(&p.static_scan, &p.dynamic_mask)?;
        s += pd_score(&zd, &zs, pp)?;
    }
    Ok(s / pairs.len() as f64)
}
