//! Deterministic synthetic scenes with eight mutually predictable
//! representations, their tensor container and on-disk datasets.

mod container;
mod dataset;
mod noise;
mod scene;

pub use container::{
    decode_tensor, encode_tensor, is_sealed_path, read_sealed_tensor, read_tensor, write_tensor, SEALED_DIR,
    TENSOR_MAGIC, TENSOR_VERSION,
};
pub use dataset::{
    load_sealed_split, load_split, make_dataset, DatasetManifest, ManifestSplit, SceneFiles, SplitPlan, SplitRole,
    SplitSpec, MANIFEST_FILE,
};
pub use noise::value_noise;
pub use scene::{
    band_of_latent, boundary_map, depth_of_latent, generate_scene, world_nodes, Representation, Scene, WorldConfig,
};
