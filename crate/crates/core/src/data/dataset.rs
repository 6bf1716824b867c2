use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bytes per CIFAR-10 record: one label byte then 3x32x32 channel-major pixels.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
/// Environment variable naming the directory with the CIFAR-10 `.bin` batches.
pub const CIFAR10_ENV: &str = "WAE_CIFAR10_DIR";

const MNIST_IMAGES_MAGIC: u32 = 0x0000_0803;
const MNIST_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => Err(Error::invalid(format!(
                "unknown split `{s}` (expected train|test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Cifar10Binary,
    MnistIdx,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" | "cifar10-binary" => Ok(Self::Cifar10Binary),
            "mnist" | "mnist-idx" => Ok(Self::MnistIdx),
            _ => Err(Error::invalid(format!("unknown dataset format `{s}`"))),
        }
    }
}

/// Images scaled to `[0, 1]` with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if images.batch() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} images but {} labels", images.batch(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples in file order (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.shape();
        [c, h, w]
    }
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Parses one CIFAR-10 binary batch file.
pub fn load_cifar10_file(path: &Path, split: Split) -> Result<LabeledDataset> {
    let bytes = read_file(path)?;
    if bytes.is_empty() {
        return Err(format_err(path, 0, "empty file"));
    }
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD;
        return Err(format_err(
            path,
            whole * CIFAR_RECORD,
            format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() % CIFAR_RECORD
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(format_err(
                path,
                i * CIFAR_RECORD,
                format!("label {} >= 10", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    LabeledDataset::new(Tensor::from_vec([n, 3, 32, 32], pixels)?, labels, 10, split)
}

/// Writes a dataset of 3x32x32 images in CIFAR-10 binary layout.
pub fn write_cifar10_file(data: &LabeledDataset, path: &Path) -> Result<()> {
    if data.image_shape() != [3, 32, 32] || data.classes > 256 {
        return Err(Error::invalid(
            "CIFAR-10 layout needs 3x32x32 images and < 256 classes",
        ));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for (i, &label) in data.labels.iter().enumerate() {
        out.push(label as u8);
        out.extend(
            data.images
                .sample(i)
                .iter()
                .map(|&v| super::to_byte(f64::from(v))),
        );
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// `$WAE_CIFAR10_DIR`, else `data/cifar-10-batches-bin` under `root`, if it
/// holds the test batch.
pub fn resolve_cifar10_dir(root: &Path) -> Option<PathBuf> {
    let candidates = std::env::var_os(CIFAR10_ENV)
        .map(PathBuf::from)
        .into_iter()
        .chain([root.join("data/cifar-10-batches-bin")]);
    candidates
        .into_iter()
        .find(|d| d.join("test_batch.bin").is_file())
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, offset, "truncated header"))
}

fn mnist_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    if bytes.is_empty() {
        return Err(format_err(path, 0, "empty file"));
    }
    let magic = be_u32(&bytes, 0, path)?;
    if magic != MNIST_IMAGES_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("bad magic {magic:#010x}, expected {MNIST_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let h = be_u32(&bytes, 8, path)? as usize;
    let w = be_u32(&bytes, 12, path)? as usize;
    let need = 16 + n * h * w;
    if bytes.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated pixel data, expected {need} bytes"),
        ));
    }
    Ok((n, h, w, bytes[16..need].to_vec()))
}

fn mnist_labels(path: &Path, classes: usize) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    if bytes.is_empty() {
        return Err(format_err(path, 0, "empty file"));
    }
    let magic = be_u32(&bytes, 0, path)?;
    if magic != MNIST_LABELS_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("bad magic {magic:#010x}, expected {MNIST_LABELS_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated labels, expected {} bytes", 8 + n),
        ));
    }
    bytes[8..8 + n]
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < classes {
                Ok(l as usize)
            } else {
                Err(format_err(path, 8 + i, format!("label {l} >= {classes}")))
            }
        })
        .collect()
}

/// Loads an MNIST IDX image/label pair, replicating the grey channel
/// `channels` times.
pub fn load_mnist(
    images: &Path,
    labels: &Path,
    channels: usize,
    split: Split,
) -> Result<LabeledDataset> {
    if channels == 0 {
        return Err(Error::invalid("channel count must be >= 1"));
    }
    let (n, h, w, px) = mnist_images(images)?;
    let labels = mnist_labels(labels, 10)?;
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * channels * plane);
    for img in px.chunks_exact(plane.max(1)).take(n) {
        for _ in 0..channels {
            data.extend(img.iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    LabeledDataset::new(
        Tensor::from_vec([n, channels, h, w], data)?,
        labels,
        10,
        split,
    )
}

/// Loads a split from a dataset directory in file order.
///
/// CIFAR-10 expects `data_batch_{1..5}.bin` / `test_batch.bin`; MNIST expects
/// `{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
pub fn load_dataset(
    dir: &Path,
    format: DatasetFormat,
    split: Split,
    channels: usize,
) -> Result<LabeledDataset> {
    match format {
        DatasetFormat::Cifar10Binary => {
            let files: Vec<PathBuf> = match split {
                Split::Train => (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .collect(),
                Split::Test => vec![dir.join("test_batch.bin")],
            };
            let parts = files
                .iter()
                .map(|f| load_cifar10_file(f, split))
                .collect::<Result<Vec<_>>>()?;
            let images: Vec<Tensor<f32>> = parts.iter().map(|p| p.images.clone()).collect();
            let labels = parts.into_iter().flat_map(|p| p.labels).collect();
            LabeledDataset::new(Tensor::stack(&images)?, labels, 10, split)
        }
        DatasetFormat::MnistIdx => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            load_mnist(
                &dir.join(format!("{prefix}-images-idx3-ubyte")),
                &dir.join(format!("{prefix}-labels-idx1-ubyte")),
                channels,
                split,
            )
        }
    }
}
