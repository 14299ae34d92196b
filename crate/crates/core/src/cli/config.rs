use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AdvTrainConfig, MaskCorruptionSpec, UdaConfig};
use crate::backbone::{BackboneConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::pretext::PdTrainConfig;
use crate::quality::{DsrTrainConfig, LqiTrainConfig};
use crate::scanio::{SensorConfig, WorldSpec};
use crate::slameval::IcpConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Training sequences (source domain).
    pub data: PathBuf,
    /// Held-out sequences for attack and SLAM evaluation.
    pub heldout: PathBuf,
    /// Target-domain sequences for adaptation.
    pub target_data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data/train".into(),
            heldout: "data/heldout".into(),
            target_data: "data/target".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    /// Rebases every relative path onto `root`.
    pub fn under(&self, root: &Path) -> Self {
        let j = |p: &PathBuf| if p.is_absolute() { p.clone() } else { root.join(p) };
        Self {
            data: j(&self.data),
            heldout: j(&self.heldout),
            target_data: j(&self.target_data),
            checkpoints: j(&self.checkpoints),
            reports: j(&self.reports),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    /// Largest noise level the LQI regressor is trained on, metres.
    pub sigma_max: f64,
    pub levels: usize,
    pub lqi: LqiTrainConfig,
    pub dsr: DsrTrainConfig,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { sigma_max: 1.0, levels: 6, lqi: LqiTrainConfig::default(), dsr: DsrTrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub rpe_delta: usize,
    pub parity_tolerance: f64,
    /// Cap on points per cloud for the exact EMD solve.
    pub emd_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rpe_delta: 1, parity_tolerance: 0.05, emd_points: 256 }
    }
}

/// Synthetic data layout produced by `synth` when no explicit flags are
/// given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub heldout_first_id: u32,
    pub heldout_frames: usize,
    pub target_sequences: usize,
    pub target_first_id: u32,
    /// Obstacle and actor counts of the target domain.
    pub target_static_obstacles: usize,
    pub target_dynamic_actors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_sequences: 3,
            heldout_sequences: 2,
            heldout_first_id: 50,
            heldout_frames: 60,
            target_sequences: 2,
            target_first_id: 80,
            target_static_obstacles: 40,
            target_dynamic_actors: 12,
        }
    }
}

/// Everything an experiment run depends on. Stored as TOML; the top-level
/// `sensor` and `seed` are authoritative and are copied into the nested
/// stage sections by [`ExperimentConfig::resolved`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub jobs: usize,
    pub paths: Paths,
    pub sensor: SensorConfig,
    pub synth: SynthConfig,
    pub world: WorldSpec,
    pub backbone: BackboneConfig,
    pub train_ae: TrainConfig,
    pub train_pd: PdTrainConfig,
    pub train_attack: AdvTrainConfig,
    pub train_mmd: UdaConfig,
    pub quality: QualityConfig,
    pub mask: MaskCorruptionSpec,
    pub icp: IcpConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            paths: Paths::default(),
            sensor: SensorConfig::default(),
            synth: SynthConfig::default(),
            world: WorldSpec { frame_count: 40, ..WorldSpec::default() },
            backbone: BackboneConfig { latent_dim: 64, ..BackboneConfig::default() },
            train_ae: TrainConfig { epochs: 30, ..TrainConfig::default() },
            train_pd: PdTrainConfig { epochs: 15, ..PdTrainConfig::default() },
            train_attack: AdvTrainConfig { epochs: 15, ..AdvTrainConfig::default() },
            train_mmd: UdaConfig::default(),
            quality: QualityConfig { lqi: LqiTrainConfig { epochs: 10, ..LqiTrainConfig::default() }, ..QualityConfig::default() },
            mask: MaskCorruptionSpec::default(),
            icp: IcpConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Smallest recipe that still exercises every stage; used by `demo`.
    pub fn demo() -> Self {
        let mut c = Self::default();
        c.synth = SynthConfig {
            train_sequences: 2,
            heldout_sequences: 1,
            heldout_frames: 30,
            target_sequences: 1,
            ..SynthConfig::default()
        };
        c.world.frame_count = 16;
        c.backbone.latent_dim = 32;
        c.train_ae.epochs = 6;
        c.train_pd.epochs = 3;
        c.train_attack.epochs = 3;
        c.train_mmd.epochs = 3;
        c.quality.lqi.epochs = 3;
        c.quality.dsr.epochs = 10;
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Copy of `self` with the global seed and sensor pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = c.seed;
        c.world.sensor = c.sensor;
        c.world.seed = s;
        c.backbone.sensor = c.sensor;
        c.train_ae.seed = s;
        c.train_pd.seed = s;
        c.train_attack.seed = s;
        c.train_mmd.seed = s;
        c.quality.lqi.seed = s;
        c.quality.dsr.seed = s;
        c.mask.seed = s;
        c.jobs = c.jobs.max(1);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.world.validate()?;
        self.backbone.validate()?;
        self.train_ae.validate()?;
        self.train_attack.validate()?;
        self.train_mmd.mmd.validate()?;
        self.mask.validate(self.sensor.beams)?;
        self.icp.validate()?;
        if self.train_pd.epochs == 0 || !(self.train_pd.lr > 0.0) {
            return Err(Error::InvalidConfig("train_pd needs epochs >= 1 and lr > 0".into()));
        }
        if !(self.quality.sigma_max > 0.0) || self.quality.levels < 2 {
            return Err(Error::InvalidConfig("quality needs sigma_max > 0 and levels >= 2".into()));
        }
        if self.eval.rpe_delta == 0 || !(self.eval.parity_tolerance >= 0.0) || self.eval.emd_points == 0 {
            return Err(Error::InvalidConfig("eval needs rpe_delta >= 1, parity_tolerance >= 0, emd_points >= 1".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the serialized config, with
    /// `jobs` and `paths` reset since neither changes results.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.jobs = 0;
        c.paths = Paths::default();
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    /// Comment line stamped on every CSV and text artifact.
    pub fn provenance(&self) -> Result<String> {
        Ok(format!("# seed={} config={}", self.seed, self.hash()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::demo().resolved();
        assert_eq!(ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
        let p = ExperimentConfig::parse("seed = 7\n[train_ae]\nepochs = 2\ncontrastive = \"triplet\"\n").unwrap();
        assert_eq!(p.seed, 7);
        assert_eq!(p.train_ae.epochs, 2);
        assert_eq!(p.train_pd, ExperimentConfig::default().train_pd);
        assert!(ExperimentConfig::parse("seed = \"x\"").is_err());
    }

    #[test]
    fn seed_and_sensor_propagate() {
        let mut c = ExperimentConfig { seed: 42, ..Default::default() };
        c.sensor.azimuth_bins = 128;
        let r = c.resolved();
        assert_eq!((r.world.seed, r.train_attack.seed, r.mask.seed), (42, 42, 42));
        assert_eq!(r.backbone.sensor.azimuth_bins, 128);
        assert_eq!(r.world.sensor, r.sensor);
        r.validate().unwrap();
    }

    #[test]
    fn hash_tracks_content_not_jobs() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig { jobs: 8, ..a.clone() };
        b.paths = b.paths.under(Path::new("/elsewhere"));
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 16);
        assert!(a.provenance().unwrap().starts_with("# seed=0 config="));
    }

    #[test]
    fn validation_rejects_bad_band() {
        let mut c = ExperimentConfig::default().resolved();
        c.mask.row_end = c.sensor.beams;
        assert!(c.validate().is_err());
    }
}
