//! Dataset ingestion, checkpoint persistence and image export.

mod checkpoint;
mod dataset;
mod image;
mod synthetic;

pub use checkpoint::{
    load_checkpoint, load_pipeline, pipeline_checkpoint, save_checkpoint, save_pipeline,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{
    load_cifar10_file, load_dataset, load_mnist, resolve_cifar10_dir, write_cifar10_file,
    DatasetFormat, LabeledDataset, Split, CIFAR10_ENV, CIFAR_RECORD,
};
pub use image::{encode_pnm, export_image, high_channel_view, read_pnm, to_byte, Pnm};
pub use synthetic::synthetic_dataset;
