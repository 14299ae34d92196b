use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{bce, check_finite, loss_graph as lg, BackboneNet, BackboneParams, LatentCode};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, ParamSet, Tensor, Var};
use crate::pretext::{pd_score, PdNet, PdParams};
use crate::scanio::{RangeImage, ScanPair, SegMask};

/// Gaussian-kernel MMD settings. Explicit `bandwidths` win; when empty the
/// bandwidths are `median_scales` times the median pairwise distance of
/// the pooled samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmdConfig {
    pub bandwidths: Vec<f64>,
    pub median_scales: Vec<f64>,
    pub batch_size: usize,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self { bandwidths: vec![], median_scales: vec![0.5, 1.0, 2.0, 4.0], batch_size: 8 }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        let list = if self.bandwidths.is_empty() { &self.median_scales } else { &self.bandwidths };
        if list.is_empty() || list.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("MMD bandwidths must be a nonempty list of positive values".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("MMD batch size must be >= 2".into()));
        }
        Ok(())
    }

    /// Concrete bandwidths for the pooled samples.
    pub fn resolve(&self, za: &[LatentCode], zb: &[LatentCode]) -> Result<Vec<f64>> {
        self.validate()?;
        if !self.bandwidths.is_empty() {
            return Ok(self.bandwidths.clone());
        }
        let pooled: Vec<&LatentCode> = za.iter().chain(zb).collect();
        let mut d: Vec<f64> = Vec::new();
        for i in 0..pooled.len() {
            for j in i + 1..pooled.len() {
                d.push(pooled[i].dist2(pooled[j]).sqrt());
            }
        }
        if d.is_empty() {
            return Err(Error::Empty("median heuristic needs two samples"));
        }
        d.sort_by(f64::total_cmp);
        let med = d[d.len() / 2];
        let med = if med > 0.0 { med } else { 1.0 };
        Ok(self.median_scales.iter().map(|s| s * med).collect())
    }
}

fn kernel(d2: f64, sigmas: &[f64]) -> f64 {
    sigmas.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum()
}

/// Biased MMD² estimate with a sum of Gaussian kernels.
pub fn mmd_with(za: &[LatentCode], zb: &[LatentCode], sigmas: &[f64]) -> Result<f64> {
    if za.is_empty() || zb.is_empty() {
        return Err(Error::Empty("MMD sample set"));
    }
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidConfig("MMD bandwidths must be positive".into()));
    }
    let d = za[0].len();
    if za.iter().chain(zb).any(|z| z.len() != d) {
        return Err(Error::ShapeMismatch("latent codes of different lengths".into()));
    }
    let mean_k = |x: &[LatentCode], y: &[LatentCode]| {
        let mut s = 0.0;
        for a in x {
            for b in y {
                s += kernel(a.dist2(b), sigmas);
            }
        }
        s / (x.len() * y.len()) as f64
    };
    Ok(mean_k(za, za) + mean_k(zb, zb) - 2.0 * mean_k(za, zb))
}

pub fn mmd(za: &[LatentCode], zb: &[LatentCode], cfg: &MmdConfig) -> Result<f64> {
    if za.is_empty() || zb.is_empty() {
        return Err(Error::Empty("MMD sample set"));
    }
    mmd_with(za, zb, &cfg.resolve(za, zb)?)
}

/// Differentiable MMD² between two batches of `[D]` code nodes.
pub fn mmd_graph(g: &mut Graph, za: &[Var], zb: &[Var], sigmas: &[f64]) -> Var {
    let mean_k = |g: &mut Graph, x: &[Var], y: &[Var]| {
        let mut acc: Option<Var> = None;
        for &a in x {
            for &b in y {
                let diff = g.sub(a, b);
                let sq = g.mul(diff, diff);
                let d2 = g.sum(sq);
                for s in sigmas {
                    let e = g.scale(d2, -1.0 / (2.0 * s * s));
                    let k = g.exp(e);
                    acc = Some(match acc {
                        Some(v) => g.add(v, k),
                        None => k,
                    });
                }
            }
        }
        let total = acc.expect("nonempty batches");
        g.scale(total, 1.0 / (x.len() * y.len()) as f64)
    };
    let aa = mean_k(g, za, za);
    let bb = mean_k(g, zb, zb);
    let ab = mean_k(g, za, zb);
    let s = g.add(aa, bb);
    let ab2 = g.scale(ab, 2.0);
    g.sub(s, ab2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UdaConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the MMD term.
    pub mmd_weight: f64,
    pub mmd: MmdConfig,
    pub seed: u64,
}

impl Default for UdaConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 3e-4, mmd_weight: 1.0, mmd: MmdConfig::default(), seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdaEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Full-set MMD between source-dynamic and target codes after the epoch.
    pub mmd: f64,
}

#[derive(Clone, Debug)]
pub struct UdaOutcome {
    pub backbone: BackboneParams,
    pub sigmas: Vec<f64>,
    pub mmd_before: f64,
    pub mmd_after: f64,
    pub history: Vec<UdaEpoch>,
}

/// Adapts the target backbone towards the source attack domain.
pub fn train_mmd_uda(
    source_pairs: &[ScanPair],
    target_scans: &[(RangeImage, SegMask)],
    bp_src: &BackboneParams,
    bp_tgt: &BackboneParams,
    pp: &PdParams,
    cfg: &UdaConfig,
) -> Result<BackboneParams> {
    Ok(train_mmd_uda_with_history(source_pairs, target_scans, bp_src, bp_tgt, pp, cfg)?.backbone)
}

/// [`train_mmd_uda`] with the MMD trace. Source codes come from the frozen
/// source backbone; the kernel bandwidths are fixed once from the initial
/// pooled codes so that the measured MMD is comparable across epochs.
pub fn train_mmd_uda_with_history(
    source_pairs: &[ScanPair],
    target_scans: &[(RangeImage, SegMask)],
    bp_src: &BackboneParams,
    bp_tgt: &BackboneParams,
    pp: &PdParams,
    cfg: &UdaConfig,
) -> Result<UdaOutcome> {
    cfg.mmd.validate()?;
    if cfg.epochs == 0 || !(cfg.lr > 0.0) || !(cfg.mmd_weight >= 0.0) {
        return Err(Error::InvalidConfig("UDA needs epochs and lr > 0 and mmd_weight >= 0".into()));
    }
    if source_pairs.is_empty() || target_scans.is_empty() {
        return Err(Error::Empty("UDA source or target set"));
    }
    let d = pp.latent_dim;
    if bp_src.config.latent_dim != d || bp_tgt.config.latent_dim != d {
        return Err(Error::ShapeMismatch("source, target and pretext latent widths differ".into()));
    }
    let zd: Vec<LatentCode> = source_pairs.iter().map(|p| bp_src.encode(&p.dynamic, &p.dynamic_mask)).collect::<Result<_>>()?;
    let zs: Vec<LatentCode> = source_pairs.iter().map(|p| bp_src.encode(&p.static_scan, &p.dynamic_mask)).collect::<Result<_>>()?;
    let source_bce: Vec<f64> = zd.iter().zip(&zs).map(|(a, b)| Ok(bce(pd_score(a, b, pp)?, 1.0))).collect::<Result<_>>()?;

    let encode_targets = |bp: &BackboneParams| -> Result<Vec<LatentCode>> { target_scans.iter().map(|(x, m)| bp.encode(x, m)).collect() };
    let zt0 = encode_targets(bp_tgt)?;
    let sigmas = cfg.mmd.resolve(&zd, &zt0)?;
    let mmd_before = mmd_with(&zd, &zt0, &sigmas)?;

    let mut params = ParamSet::merged(&[("bb.", &bp_tgt.params), ("pd.", &pp.params)]);
    let bb = BackboneNet::bind(&bp_tgt.config, &params, "bb.")?;
    let pd = PdNet::bind(d, &params, "pd.")?;
    let inputs = target_scans.iter().map(|(x, m)| bb.prepare(x, m)).collect::<Result<Vec<_>>>()?;
    if inputs.iter().any(|i| i.n_valid == 0) {
        return Err(Error::Empty("target scan without valid cells"));
    }
    let mut opt = Adam::new(&params, cfg.lr, 0.0);
    let frozen: Vec<_> = params.iter().filter(|(_, n, _)| n.starts_with("pd.")).map(|(id, _, _)| id).collect();
    frozen.into_iter().for_each(|id| opt.freeze(id));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x33d);
    let b = cfg.mmd.batch_size;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut tgt_order: Vec<usize> = (0..inputs.len()).collect();
    let mut src_order: Vec<usize> = (0..source_pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        tgt_order.shuffle(&mut rng);
        src_order.shuffle(&mut rng);
        let mut sl = 0.0;
        let mut nb = 0;
        for (bi, chunk) in tgt_order.chunks(b).enumerate() {
            let src: Vec<usize> = (0..chunk.len()).map(|k| src_order[(bi * b + k) % src_order.len()]).collect();
            let mut g = Graph::new(&params);
            let mut zt = Vec::with_capacity(chunk.len());
            let mut zsrc = Vec::with_capacity(chunk.len());
            let mut terms: Option<Var> = None;
            for (k, &t) in chunk.iter().enumerate() {
                let inp = &inputs[t];
                let z = bb.encode(&mut g, inp).z;
                let out = bb.decode(&mut g, z);
                let rec = lg::recon(&mut g, out, &inp.target, &inp.valid, inp.n_valid);
                let zdv = g.input(Tensor::from_vec(&[d], zd[src[k]].0.clone()));
                let p = pd.score(&mut g, zdv, z);
                let bt = lg::bce(&mut g, p, 1.0);
                let item = g.add(rec, bt);
                let item = g.add_const(item, source_bce[src[k]]);
                terms = Some(match terms {
                    Some(v) => g.add(v, item),
                    None => item,
                });
                zt.push(z);
                zsrc.push(zdv);
            }
            let mean = g.scale(terms.expect("nonempty chunk"), 1.0 / chunk.len() as f64);
            let root = if cfg.mmd_weight > 0.0 && chunk.len() >= 2 {
                let m = mmd_graph(&mut g, &zsrc, &zt, &sigmas);
                let m = g.scale(m, cfg.mmd_weight);
                g.add(mean, m)
            } else {
                mean
            };
            let loss = g.value(root).item();
            let grads = g.backward(root);
            check_finite("mmd", epoch, loss, &grads)?;
            opt.step(&mut params, &grads);
            sl += loss;
            nb += 1;
        }
        let cur = BackboneParams { config: bp_tgt.config.clone(), params: params.extract("bb.") };
        let m = mmd_with(&zd, &encode_targets(&cur)?, &sigmas)?;
        history.push(UdaEpoch { epoch, loss: sl / nb as f64, mmd: m });
    }
    let backbone = BackboneParams::from_parts(bp_tgt.config.clone(), params.extract("bb."))
        .map_err(|e| Error::Divergence { stage: "mmd", epoch: cfg.epochs, detail: e.to_string() })?;
    let mmd_after = history.last().map(|h| h.mmd).unwrap_or(mmd_before);
    Ok(UdaOutcome { backbone, sigmas, mmd_before, mmd_after, history })
}
