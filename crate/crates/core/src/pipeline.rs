//! Complete image-to-score pipelines: the auto-encoder pipeline and the
//! reference decompositions it is compared against.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::baselines::{downsample_bilinear, dwt97_forward};
use crate::classifier::{ClassifierParams, ClassifierTrace, Scores};
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::tensor::{Real, Tensor};
use crate::wae::WaeParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PipelineKind {
    /// Auto-encoder decomposition into `I_L` / `I_H` plus the two-stream classifier.
    Wae,
    /// 9/7 DWT: `cA` to the standard stream, `cH|cV|cD` to the fusion stream.
    Wavelet,
    /// Auto-encoder topology trained with classification loss only.
    Decomposition,
    /// Bilinearly halved image into a single standard stream.
    Lowres,
    /// Full-resolution image into a single standard stream.
    Fullres,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 5] = [
        Self::Wae,
        Self::Wavelet,
        Self::Decomposition,
        Self::Lowres,
        Self::Fullres,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Wae => "wae",
            Self::Wavelet => "wavelet",
            Self::Decomposition => "decomposition",
            Self::Lowres => "lowres",
            Self::Fullres => "fullres",
        }
    }

    pub fn uses_autoencoder(self) -> bool {
        matches!(self, Self::Wae | Self::Decomposition)
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wae" => Ok(Self::Wae),
            "wavelet" | "wavelet-cnn" => Ok(Self::Wavelet),
            "decomposition" | "decomposition-cnn" => Ok(Self::Decomposition),
            "lowres" | "lowres-cnn" => Ok(Self::Lowres),
            "fullres" | "fullres-cnn" => Ok(Self::Fullres),
            other => Err(Error::invalid(format!(
                "unknown pipeline kind `{other}` (expected wae|wavelet|decomposition|lowres|fullres)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline<T: Real> {
    pub kind: PipelineKind,
    /// Present for [`PipelineKind::Wae`] and [`PipelineKind::Decomposition`].
    pub wae: Option<WaeParams<T>>,
    pub classifier: ClassifierParams<T>,
    /// Highest training stage completed so far (0 = freshly initialised).
    pub completed_stage: u8,
}

/// Classifier inputs produced by a pipeline's front end.
#[derive(Clone, Debug)]
pub struct FrontOutput<T: Real> {
    pub low: Tensor<T>,
    pub high: Option<Tensor<T>>,
}

impl<T: Real> Pipeline<T> {
    /// Freshly initialised pipeline for `channels`-channel images.
    pub fn new<R: Rng>(kind: PipelineKind, channels: usize, classes: usize, rng: &mut R) -> Self {
        let wae = kind
            .uses_autoencoder()
            .then(|| WaeParams::new(channels, rng));
        let classifier = match kind {
            PipelineKind::Wae | PipelineKind::Decomposition => {
                ClassifierParams::two_stream(channels, channels, classes, rng)
            }
            PipelineKind::Wavelet => {
                ClassifierParams::two_stream(channels, 3 * channels, classes, rng)
            }
            PipelineKind::Lowres | PipelineKind::Fullres => {
                ClassifierParams::single_stream(channels, classes, rng)
            }
        };
        Self {
            kind,
            wae,
            classifier,
            completed_stage: 0,
        }
    }

    pub fn image_channels(&self) -> usize {
        match &self.wae {
            Some(w) => w.image_channels(),
            None => self.classifier.standard.convs[0].spec.in_channels,
        }
    }

    pub fn wae(&self) -> Result<&WaeParams<T>> {
        self.wae
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("pipeline `{}` has no auto-encoder", self.kind)))
    }

    /// Runs the (frozen) front end.
    pub fn front(&self, images: &Tensor<T>) -> Result<FrontOutput<T>> {
        match self.kind {
            PipelineKind::Wae | PipelineKind::Decomposition => {
                let (low, high) = crate::wae::encode(images, self.wae()?)?;
                Ok(FrontOutput {
                    low,
                    high: Some(high),
                })
            }
            PipelineKind::Wavelet => {
                let bands = dwt97_forward(images)?;
                let high = bands.details();
                Ok(FrontOutput {
                    low: bands.ca,
                    high: Some(high),
                })
            }
            PipelineKind::Lowres => {
                let [_, _, h, w] = images.shape();
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape(
                        "lowres",
                        format!("spatial size {h}x{w} must be even"),
                    ));
                }
                Ok(FrontOutput {
                    low: downsample_bilinear(images, h / 2, w / 2)?,
                    high: None,
                })
            }
            PipelineKind::Fullres => Ok(FrontOutput {
                low: images.clone(),
                high: None,
            }),
        }
    }

    pub fn classify_front(&self, front: &FrontOutput<T>) -> Result<ClassifierTrace<T>> {
        self.classifier.trace(&front.low, front.high.as_ref())
    }

    /// Score vectors for a batch of images.
    pub fn scores(&self, images: &Tensor<T>) -> Result<Scores<T>> {
        let front = self.front(images)?;
        self.classifier.forward(&front.low, front.high.as_ref())
    }

    /// Named tensors for persistence, prefixed `wae.` and `cls.`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(w) = &self.wae {
            w.visit("wae", &mut out);
        }
        self.classifier.visit("cls", &mut out);
        out
    }

    /// Overwrites parameters from named tensors.
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        if let Some(w) = &mut self.wae {
            w.assign_from(tensors, "wae.")?;
        }
        self.classifier.assign_from(tensors, "cls.")
    }
}
