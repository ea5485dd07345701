//! File formats, phantom data and dataset layout.

mod dataset;
mod npy;
mod phantom;
mod resample;
mod volume;

pub use dataset::{
    build_manifest, load_dataset, read_manifest, write_dataset, Dataset, DatasetManifest, LoadedPair, ManifestPair,
    PairEntry, Preprocessing, Split, SplitCounts, MANIFEST_FILE,
};
pub use npy::{decode_npy, encode_npy, read_tensor, write_tensor};
pub use phantom::{gen_phantom_pair, structure_name, PhantomPair, SUPPRESSED_LABEL};
pub use resample::{resample_isotropic, MIN_EXTENT};
pub use volume::{normalize_intensity, Modality, VolumeRecord};
