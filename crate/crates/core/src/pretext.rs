//! Pretext-task discriminator over pairs of latent codes.
//!
//! Homogeneous pairs `(r(d_i), r(d_j))` of dynamic scans from one sequence
//! are labelled 1, heterogeneous pairs `(r(d_j), r(s_j))` of a dynamic scan
//! and its own static counterpart are labelled 0. Training minimises the two
//! cross-entropy terms together with reconstruction of all three scans.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{bce, check_finite, init_params, loss_graph as lg, BackboneNet, BackboneParams, Prepared, ScanInput};
use crate::backbone::LatentCode;
use crate::error::{Error, Result};
use crate::nn::{Adam, Gradients, Graph, ParamId, ParamSet, Tensor, Var};
use crate::scanio::{RangeImage, ScanPair, SegMask};

pub const CHECKPOINT_KIND: &str = "pretext";

fn layout(d: usize) -> Vec<(String, Vec<usize>, usize)> {
    vec![
        ("l0.w".into(), vec![2 * d, 2 * d], 2 * d),
        ("l0.b".into(), vec![2 * d], 0),
        ("l1.w".into(), vec![d, 2 * d], 2 * d),
        ("l1.b".into(), vec![d], 0),
        ("l2.w".into(), vec![1, d], d),
        ("l2.b".into(), vec![1], 0),
    ]
}

/// Pairwise classifier head: `[z_a; z_b] -> 2D -> D -> 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PdParams {
    pub latent_dim: usize,
    pub params: ParamSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PdHeader {
    latent_dim: usize,
}

impl PdParams {
    pub fn init(latent_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        Ok(Self { latent_dim, params: init_params(&layout(latent_dim), seed ^ 0x9d) })
    }

    pub fn net(&self) -> PdNet {
        PdNet::bind(self.latent_dim, &self.params, "").expect("consistent by construction")
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::checkpoint::save(path, CHECKPOINT_KIND, &PdHeader { latent_dim: self.latent_dim }, &self.params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (h, params): (PdHeader, ParamSet) = crate::checkpoint::load(path, CHECKPOINT_KIND)?;
        PdNet::bind(h.latent_dim, &params, "")?;
        Ok(Self { latent_dim: h.latent_dim, params })
    }
}

/// Parameter handles of a PD head inside a (possibly merged) set.
#[derive(Clone, Debug)]
pub struct PdNet {
    pub latent_dim: usize,
    layers: [(ParamId, ParamId); 3],
}

impl PdNet {
    pub fn bind(latent_dim: usize, set: &ParamSet, prefix: &str) -> Result<Self> {
        for (name, shape, _) in layout(latent_dim) {
            let full = format!("{prefix}{name}");
            match set.id(&full) {
                Some(id) if set.get(id).shape() == shape.as_slice() => {}
                _ => return Err(Error::ShapeMismatch(format!("pretext head parameter {full} missing or misshapen"))),
            }
        }
        let pair = |i: usize| {
            (set.id(&format!("{prefix}l{i}.w")).expect("checked"), set.id(&format!("{prefix}l{i}.b")).expect("checked"))
        };
        Ok(Self { latent_dim, layers: [pair(0), pair(1), pair(2)] })
    }

    /// Probability that `(z_a, z_b)` is a homogeneous pair.
    pub fn score(&self, g: &mut Graph, z_a: Var, z_b: Var) -> Var {
        let mut h = g.concat(&[z_a, z_b]);
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (g.param(w), g.param(b));
            h = g.linear(w, h, b);
            if i < 2 {
                h = g.elu(h);
            }
        }
        let logit = g.reshape(h, &[]);
        g.sigmoid(logit)
    }
}

pub fn pd_score(z_a: &LatentCode, z_b: &LatentCode, p: &PdParams) -> Result<f64> {
    if z_a.len() != p.latent_dim || z_b.len() != p.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "codes of length {} and {} for a head of width {}",
            z_a.len(),
            z_b.len(),
            p.latent_dim
        )));
    }
    let net = p.net();
    let mut g = Graph::new(&p.params);
    let a = g.input(Tensor::from_vec(&[z_a.len()], z_a.0.clone()));
    let b = g.input(Tensor::from_vec(&[z_b.len()], z_b.0.clone()));
    let s = net.score(&mut g, a, b);
    Ok(g.value(s).item())
}

/// The five terms of the pretext objective. Reconstruction terms are mean
/// squared errors of ranges normalised by the sensor's maximum range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdLoss {
    pub recon_di: f64,
    pub recon_dj: f64,
    pub recon_sj: f64,
    pub bce_homogeneous: f64,
    pub bce_heterogeneous: f64,
}

impl PdLoss {
    pub fn total(&self) -> f64 {
        self.recon_di + self.recon_dj + self.recon_sj + self.bce_homogeneous + self.bce_heterogeneous
    }
}

/// Graph nodes of the pretext objective.
pub struct PdObjective {
    pub total: Var,
    pub recon: [Var; 3],
    pub p_homogeneous: Var,
    pub p_heterogeneous: Var,
}

/// Builds the objective for inputs `d_i`, `d_j`, `s_j` on one graph.
pub fn pd_objective(g: &mut Graph, bb: &BackboneNet, pd: &PdNet, inputs: [&ScanInput; 3]) -> PdObjective {
    let mut z = Vec::with_capacity(3);
    let mut recon = Vec::with_capacity(3);
    for inp in inputs {
        let e = bb.encode(g, inp);
        let r = bb.decode(g, e.z);
        recon.push(lg::recon(g, r, &inp.target, &inp.valid, inp.n_valid));
        z.push(e.z);
    }
    let p_hom = pd.score(g, z[0], z[1]);
    let p_het = pd.score(g, z[1], z[2]);
    let b1 = lg::bce(g, p_hom, 1.0);
    let b0 = lg::bce(g, p_het, 0.0);
    let mut total = g.add(recon[0], recon[1]);
    total = g.add(total, recon[2]);
    total = g.add(total, b1);
    total = g.add(total, b0);
    PdObjective { total, recon: [recon[0], recon[1], recon[2]], p_homogeneous: p_hom, p_heterogeneous: p_het }
}

pub fn pd_loss(
    d_i: (&RangeImage, &SegMask),
    d_j: (&RangeImage, &SegMask),
    s_j: (&RangeImage, &SegMask),
    bp: &BackboneParams,
    pp: &PdParams,
) -> Result<PdLoss> {
    if pp.latent_dim != bp.config.latent_dim {
        return Err(Error::ShapeMismatch("pretext head and backbone latent widths differ".into()));
    }
    let bb = bp.net();
    let inputs = [bb.prepare(d_i.0, d_i.1)?, bb.prepare(d_j.0, d_j.1)?, bb.prepare(s_j.0, s_j.1)?];
    if inputs.iter().any(|i| i.n_valid == 0) {
        return Err(Error::Empty("scan without valid cells"));
    }
    let merged = ParamSet::merged(&[("bb.", &bp.params), ("pd.", &pp.params)]);
    let bbn = BackboneNet::bind(&bp.config, &merged, "bb.")?;
    let pdn = PdNet::bind(pp.latent_dim, &merged, "pd.")?;
    let mut g = Graph::new(&merged);
    let o = pd_objective(&mut g, &bbn, &pdn, [&inputs[0], &inputs[1], &inputs[2]]);
    let v = |x: Var| g.value(x).item();
    let out = PdLoss {
        recon_di: v(o.recon[0]),
        recon_dj: v(o.recon[1]),
        recon_sj: v(o.recon[2]),
        bce_homogeneous: bce(v(o.p_homogeneous), 1.0),
        bce_heterogeneous: bce(v(o.p_heterogeneous), 0.0),
    };
    if !out.total().is_finite() {
        return Err(Error::Divergence { stage: "pretext", epoch: 0, detail: "non-finite pretext loss".into() });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Update the backbone together with the head.
    pub co_update: bool,
    pub seed: u64,
}

impl Default for PdTrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 6e-4, weight_decay: 0.0, batch_size: 8, co_update: true, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of the epoch's pairs classified on the correct side of 0.5.
    pub accuracy: f64,
}

pub fn metrics_csv(history: &[PdEpoch]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for h in history {
        let _ = writeln!(s, "{},{},{}", h.epoch, h.loss, h.accuracy);
    }
    s
}

#[derive(Clone, Debug)]
pub struct PdOutcome {
    pub pd: PdParams,
    pub backbone: BackboneParams,
    pub history: Vec<PdEpoch>,
}

/// `(sequence, i, j)` triples: `d_i` drawn uniformly from the other frames
/// of `d_j`'s sequence.
pub fn sample_triples(seq_lens: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (s, &n) in seq_lens.iter().enumerate() {
        if n < 2 {
            continue;
        }
        for j in 0..n {
            let mut i = rng.gen_range(0..n - 1);
            if i >= j {
                i += 1;
            }
            out.push((s, i, j));
        }
    }
    out
}

pub fn train_pd(pairs: &[ScanPair], bp: &BackboneParams, cfg: &PdTrainConfig) -> Result<PdOutcome> {
    train_pd_from(PdParams::init(bp.config.latent_dim, cfg.seed)?, pairs, bp, cfg)
}

pub fn train_pd_from(pd: PdParams, pairs: &[ScanPair], bp: &BackboneParams, cfg: &PdTrainConfig) -> Result<PdOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("pretext training needs epochs, batch size and lr > 0".into()));
    }
    if pd.latent_dim != bp.config.latent_dim {
        return Err(Error::ShapeMismatch("pretext head and backbone latent widths differ".into()));
    }
    let data = Prepared::new(&bp.net(), pairs)?;
    let lens: Vec<usize> = data.seqs.iter().map(Vec::len).collect();
    if lens.iter().all(|&n| n < 2) {
        return Err(Error::Precondition("pretext training needs a sequence with at least two frames".into()));
    }
    let mut params = ParamSet::merged(&[("bb.", &bp.params), ("pd.", &pd.params)]);
    let bbn = BackboneNet::bind(&bp.config, &params, "bb.")?;
    let pdn = PdNet::bind(pd.latent_dim, &params, "pd.")?;
    let mut opt = Adam::new(&params, cfg.lr, cfg.weight_decay);
    if !cfg.co_update {
        let frozen: Vec<ParamId> = params.iter().filter(|(_, n, _)| n.starts_with("bb.")).map(|(id, _, _)| id).collect();
        frozen.into_iter().for_each(|id| opt.freeze(id));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e47);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let triples = sample_triples(&lens, &mut rng);
        let (mut sl, mut correct) = (0.0, 0usize);
        for batch in triples.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&params);
            for &(s, i, j) in batch {
                let mut g = Graph::new(&params);
                let o = pd_objective(&mut g, &bbn, &pdn, [&data.dynm[s][i], &data.dynm[s][j], &data.stat[s][j]]);
                let loss = g.value(o.total).item();
                correct += (g.value(o.p_homogeneous).item() > 0.5) as usize;
                correct += (g.value(o.p_heterogeneous).item() < 0.5) as usize;
                let grads = g.backward(o.total);
                check_finite("pretext", epoch, loss, &grads)?;
                acc.accumulate(&grads);
                sl += loss;
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &acc);
        }
        history.push(PdEpoch {
            epoch,
            loss: sl / triples.len() as f64,
            accuracy: correct as f64 / (2 * triples.len()) as f64,
        });
    }
    let backbone = BackboneParams::from_parts(bp.config.clone(), params.extract("bb."))?;
    let pd = PdParams { latent_dim: pd.latent_dim, params: params.extract("pd.") };
    Ok(PdOutcome { pd, backbone, history })
}

/// Fraction of `(score, label)` pairs on the correct side of 0.5.
pub fn classification_accuracy(scored: &[(f64, bool)]) -> f64 {
    let ok = scored.iter().filter(|(p, l)| (*p > 0.5) == *l).count();
    ok as f64 / scored.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdEval {
    /// `(score, label)` for every evaluated pair.
    pub scored: Vec<(f64, bool)>,
    pub accuracy: f64,
    pub mean_homogeneous: f64,
    pub mean_heterogeneous: f64,
}

/// Held-out pair classification: every frame contributes one homogeneous
/// and one heterogeneous pair.
pub fn pd_evaluate(pairs: &[ScanPair], bp: &BackboneParams, pp: &PdParams, seed: u64) -> Result<PdEval> {
    let seqs = crate::backbone::group_sequences(pairs);
    let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples = sample_triples(&lens, &mut rng);
    if triples.is_empty() {
        return Err(Error::Empty("evaluation set has no multi-frame sequence"));
    }
    let (mut scored, mut hom, mut het) = (Vec::new(), 0.0, 0.0);
    for &(s, i, j) in &triples {
        let q = &seqs[s];
        let zi = bp.encode(&q[i].dynamic, &q[i].dynamic_mask)?;
        let zj = bp.encode(&q[j].dynamic, &q[j].dynamic_mask)?;
        let zs = bp.encode(&q[j].static_scan, &q[j].static_mask)?;
        let (a, b) = (pd_score(&zi, &zj, pp)?, pd_score(&zj, &zs, pp)?);
        scored.push((a, true));
        scored.push((b, false));
        hom += a;
        het += b;
    }
    let n = triples.len() as f64;
    Ok(PdEval { accuracy: classification_accuracy(&scored), scored, mean_homogeneous: hom / n, mean_heterogeneous: het / n })
}
