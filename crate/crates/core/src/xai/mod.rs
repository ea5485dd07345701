//! Grad-CAM attention at the encoder, transformation-network and critic tap
//! layers, plus heatmap export.

mod cam;
mod registry;
mod render;
mod sites;

pub use cam::{
    field_target, gradcam, ncc, transform_target, ActivationTap, AttentionMap, Normalization, TapSite, TargetKind,
    TargetSpec,
};
pub use registry::{AttentionSite, DiscSite, EncoderSite, ExplainRequest, NamedMap, SiteRegistry, StnSite};
pub use render::{export_overlay, overlay_rgb, read_pgm, write_pgm};
pub use sites::{disc_map, discriminator_attention, encoder_attention, stn_attention, DiscMaps, DiscVariants};
