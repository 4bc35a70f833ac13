//! MNIST ingestion, seeded subsets, synthetic data and model files.

mod dataset;
mod idx;
mod model_file;

pub use dataset::{load_mnist, subset, synthetic_affine_dataset, Dataset, Split};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx_images, load_idx_labels, IdxImages, IMAGE_MAGIC,
    LABEL_MAGIC, MNIST_CLASSES,
};
pub use model_file::{load_model, save_affine, save_network, Model, FORMAT_VERSION};
