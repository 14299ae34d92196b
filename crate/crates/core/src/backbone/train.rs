use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::graph as lg;
use super::{BackboneConfig, BackboneNet, BackboneParams, ScanInput};
use crate::error::{Error, Result};
use crate::nn::{Adam, Gradients, Graph, ParamSet, Var};
use crate::scanio::{sample_hard_negatives, ScanPair};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastiveMode {
    None,
    Triplet,
    #[default]
    Npair,
}

impl std::str::FromStr for ContrastiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "triplet" => Ok(Self::Triplet),
            "npair" | "n-pair" => Ok(Self::Npair),
            other => Err(Error::Parse(format!("unknown contrastive mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub contrastive: ContrastiveMode,
    /// λ_c
    pub contrastive_weight: f64,
    pub margin: f64,
    /// Hard negatives per anchor.
    pub negatives: usize,
    /// Frame window for positives and hard negatives.
    pub window: usize,
    /// Weight of the Dice term when the model has a mask decoder.
    pub dice_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            contrastive: ContrastiveMode::Npair,
            contrastive_weight: 1e-3,
            margin: 0.5,
            negatives: 2,
            window: 2,
            dice_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be > 0 and weight decay >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.contrastive_weight >= 0.0) || !(self.margin >= 0.0) || !(self.dice_weight >= 0.0) {
            return bad("loss weights and margin must be >= 0");
        }
        if self.negatives == 0 || self.window == 0 {
            return bad("negatives and window must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub recon: f64,
    pub contrastive: f64,
    /// Includes the Dice term when the mask decoder is trained.
    pub total: f64,
}

pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,recon,contrastive,total\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{}", h.epoch, h.recon, h.contrastive, h.total);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub backbone: BackboneParams,
    pub history: Vec<EpochLoss>,
}

/// Pairs grouped by sequence id, each group sorted by frame index.
pub fn group_sequences(pairs: &[ScanPair]) -> Vec<Vec<ScanPair>> {
    let mut sorted: Vec<&ScanPair> = pairs.iter().collect();
    sorted.sort_by_key(|p| (p.sequence_id, p.frame_index));
    let mut out: Vec<Vec<ScanPair>> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some(g) if g[0].sequence_id == p.sequence_id => g.push(p.clone()),
            _ => out.push(vec![p.clone()]),
        }
    }
    out
}

/// Network inputs for every static and dynamic scan of every sequence.
pub(crate) struct Prepared {
    pub seqs: Vec<Vec<ScanPair>>,
    pub stat: Vec<Vec<ScanInput>>,
    pub dynm: Vec<Vec<ScanInput>>,
}

impl Prepared {
    pub fn new(net: &BackboneNet, pairs: &[ScanPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let seqs = group_sequences(pairs);
        let mut stat = Vec::new();
        let mut dynm = Vec::new();
        for s in &seqs {
            stat.push(s.iter().map(|p| net.prepare(&p.static_scan, &p.static_mask)).collect::<Result<Vec<_>>>()?);
            dynm.push(s.iter().map(|p| net.prepare(&p.dynamic, &p.dynamic_mask)).collect::<Result<Vec<_>>>()?);
        }
        Ok(Self { seqs, stat, dynm })
    }

    pub fn items(&self) -> Vec<(usize, usize)> {
        self.seqs.iter().enumerate().flat_map(|(s, q)| (0..q.len()).map(move |i| (s, i))).collect()
    }
}

pub(crate) fn check_finite(stage: &'static str, epoch: usize, loss: f64, grads: &Gradients) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence { stage, epoch, detail: format!("loss became {loss}") });
    }
    if !grads.all_finite() {
        return Err(Error::Divergence { stage, epoch, detail: "non-finite gradient".into() });
    }
    Ok(())
}

struct ItemLoss {
    root: Var,
    recon: f64,
    contrastive: f64,
}

fn item_loss(
    g: &mut Graph,
    net: &BackboneNet,
    data: &Prepared,
    (s, i): (usize, usize),
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ItemLoss> {
    let (si, di) = (&data.stat[s][i], &data.dynm[s][i]);
    let es = net.encode(g, si);
    let ed = net.encode(g, di);
    let rs = net.decode(g, es.z);
    let rd = net.decode(g, ed.z);
    let ls = lg::recon(g, rs, &si.target, &si.valid, si.n_valid);
    let ld = lg::recon(g, rd, &di.target, &di.valid, di.n_valid);
    let sum = g.add(ls, ld);
    let recon = g.scale(sum, 0.5);
    let mut total = recon;

    if net.has_seg_decoder() && cfg.dice_weight > 0.0 && di.mask.data().iter().any(|&m| m > 0.0) {
        let m = net.decode_mask(g, ed.seg_last.expect("dice implies attention"));
        let dice = lg::dice(g, m, &di.mask);
        let w = g.scale(dice, cfg.dice_weight);
        total = g.add(total, w);
    }

    let mut contrastive = 0.0;
    let seq = &data.seqs[s];
    let offsets: Vec<usize> = (1..=cfg.window as isize)
        .flat_map(|d| [-d, d])
        .filter_map(|d| {
            let j = i as isize + d;
            (j >= 0 && (j as usize) < seq.len()).then_some(j as usize)
        })
        .collect();
    if cfg.contrastive != ContrastiveMode::None && cfg.contrastive_weight > 0.0 && !offsets.is_empty() {
        let pos = offsets[rng.gen_range(0..offsets.len())];
        let za = lg::normalize(g, es.z);
        let ep = net.encode(g, &data.stat[s][pos]);
        let zp = lg::normalize(g, ep.z);
        let hn = sample_hard_negatives(seq, i, cfg.negatives, cfg.window)?;
        let mut zn = Vec::with_capacity(hn.len());
        for &j in &hn.frames {
            let z = if j == i { ed.z } else { net.encode(g, &data.dynm[s][j]).z };
            zn.push(lg::normalize(g, z));
        }
        let c = match cfg.contrastive {
            ContrastiveMode::Npair => lg::npair(g, za, zp, &zn),
            ContrastiveMode::Triplet => {
                let terms: Vec<Var> = zn.iter().map(|&n| lg::triplet(g, za, zp, n, cfg.margin)).collect();
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = g.add(acc, t);
                }
                g.scale(acc, 1.0 / terms.len() as f64)
            }
            ContrastiveMode::None => unreachable!(),
        };
        contrastive = g.value(c).item();
        let w = g.scale(c, cfg.contrastive_weight);
        total = g.add(total, w);
    }
    Ok(ItemLoss { root: total, recon: g.value(recon).item(), contrastive })
}

pub fn train_backbone(pairs: &[ScanPair], model: &BackboneConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_backbone_from(BackboneParams::init(model, cfg.seed)?, pairs, cfg)
}

/// Continues training from existing parameters.
pub fn train_backbone_from(init: BackboneParams, pairs: &[ScanPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = init.net();
    let data = Prepared::new(&net, pairs)?;
    let mut params: ParamSet = init.params;
    let mut opt = Adam::new(&params, cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba5e);
    let mut items = data.items();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        items.shuffle(&mut rng);
        let (mut sr, mut sc, mut st) = (0.0, 0.0, 0.0);
        for batch in items.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&params);
            for &item in batch {
                let mut g = Graph::new(&params);
                let l = item_loss(&mut g, &net, &data, item, cfg, &mut rng)?;
                let total = g.value(l.root).item();
                let grads = g.backward(l.root);
                check_finite("backbone", epoch, total, &grads)?;
                acc.accumulate(&grads);
                sr += l.recon;
                sc += l.contrastive;
                st += total;
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &acc);
        }
        let n = items.len() as f64;
        history.push(EpochLoss { epoch, recon: sr / n, contrastive: sc / n, total: st / n });
    }
    if !params.all_finite() {
        return Err(Error::Divergence { stage: "backbone", epoch: cfg.epochs, detail: "non-finite parameters".into() });
    }
    Ok(TrainOutcome { backbone: BackboneParams { config: init.config, params }, history })
}
