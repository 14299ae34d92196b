//! Segmentation-attention range-image autoencoder.
//!
//! The encoder is a stack of stride-2 convolution blocks (circular in
//! azimuth) flattened into a latent code; the decoder mirrors it with
//! transposed convolutions and a sigmoid output scaled to the sensor's
//! maximum range. With attention enabled a half-width segmentation branch
//! runs beside the encoder on the dynamic mask, and after every encoder
//! block its pooled features gate the encoder channels. The mask is also
//! stacked onto the encoder input so the code carries where the dynamic
//! cells are.

mod losses;
mod net;
mod train;

pub use losses::{bce, graph as loss_graph, loss_dice, loss_npair, loss_recon, loss_triplet, BCE_CLAMP, DICE_EPS};
pub use net::{
    init_params, restrict_to, BackboneConfig, BackboneNet, BackboneParams, Encoded, LatentCode, ScanInput,
    SegAttention, SegVariant, Stage, CHECKPOINT_KIND,
};
pub use train::{
    group_sequences, history_csv, train_backbone, train_backbone_from, ContrastiveMode, EpochLoss, TrainConfig,
    TrainOutcome,
};
pub(crate) use train::{check_finite, Prepared};
