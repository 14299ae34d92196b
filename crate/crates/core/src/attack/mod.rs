//! Adversarial point injection: mask corruption, the attack trainer against
//! the pretext head, its MMD domain-adaptation variant, and the random
//! baselines used at matched budgets.

mod adversarial;
mod inject;
mod mask;
mod mmd;

pub use adversarial::{
    adv_loss, adv_objective, literal_mse, mean_heterogeneous_score, train_adversarial, train_adversarial_with_history, train_vanilla,
    AdvEpoch, AdvLoss, AdvOutcome, AdvTrainConfig, Discriminator, VanillaParams,
};
pub use inject::{
    attack_scan, baseline_rn, baseline_rn_with, baseline_rr, baseline_rr_count, changed_cells, count_pij, AttackedScan, PIJ_EPS,
};
pub use mask::{corrupt_mask, corrupt_mask_for, CorruptionMode, MaskCorruptionSpec};
pub use mmd::{mmd, mmd_graph, mmd_with, train_mmd_uda, train_mmd_uda_with_history, MmdConfig, UdaConfig, UdaEpoch, UdaOutcome};
pub(crate) use mask::choose;
