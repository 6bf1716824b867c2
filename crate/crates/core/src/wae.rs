//! Wavelet-like auto-encoder.
//!
//! The encoder maps an image to two half-resolution channels: `I_L`, which
//! should carry the image content, and `I_H`, a residual whose energy is
//! penalised. Two decoder branches up-sample each channel back to full size
//! and their sum reconstructs the input. Training minimises the transform
//! loss `l_r + lambda * l_e`.
//!
//! Layer layout (all kernels 3x3 with padding 1 unless noted):
//!
//! ```text
//! encoder   C -> 16 -> 16 -> 16        stride 1, ReLU after each
//! branch_l  16 -> C                    stride 2, linear          => I_L
//! branch_h  16 -> C                    stride 2, linear          => I_H
//! decoder_* C -> 16 (4x4 deconv, s2 p1), 16 -> 16, 16 -> 16 (ReLU)
//!           16 -> C (linear)                                     => I'_L / I'_H
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, ConvLayer, ConvStack, Params, StackTrace};
use crate::ops::ConvSpec;
use crate::tensor::{Real, Tensor};

pub const HIDDEN_CHANNELS: usize = 16;

/// How the squared norms of the transform loss are normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EnergyNorm {
    /// Per-element mean: `l_r` over the image, `l_e` over `I_H`.
    #[default]
    Mean,
    /// Raw sums of squares.
    Sum,
}

impl std::str::FromStr for EnergyNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(Error::Config(format!(
                "energy_norm must be mean|sum, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for EnergyNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Sum => "sum",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaeParams<T: Real> {
    pub encoder: ConvStack<T>,
    pub branch_l: ConvLayer<T>,
    pub branch_h: ConvLayer<T>,
    pub decoder_l: ConvStack<T>,
    pub decoder_h: ConvStack<T>,
}

/// Encoder trunk layers for `channels`-channel images.
pub fn encoder_specs(channels: usize) -> [ConvSpec; 3] {
    [
        ConvSpec::conv(channels, HIDDEN_CHANNELS, 3, 1, 1),
        ConvSpec::conv(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 1, 1),
        ConvSpec::conv(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 1, 1),
    ]
}

/// Either stride-2 branch producing `I_L` or `I_H`.
pub fn branch_spec(channels: usize) -> ConvSpec {
    ConvSpec::conv(HIDDEN_CHANNELS, channels, 3, 2, 1)
}

/// One decoder branch: deconv up-sampling then three convs.
pub fn decoder_specs(channels: usize) -> [ConvSpec; 4] {
    [
        ConvSpec::deconv(channels, HIDDEN_CHANNELS, 4, 2, 1),
        ConvSpec::conv(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 1, 1),
        ConvSpec::conv(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 1, 1),
        ConvSpec::conv(HIDDEN_CHANNELS, channels, 3, 1, 1),
    ]
}

impl<T: Real> WaeParams<T> {
    fn build(channels: usize, mut make: impl FnMut(ConvSpec) -> ConvLayer<T>) -> Self {
        let encoder = ConvStack::new(
            encoder_specs(channels).map(&mut make).to_vec(),
            vec![true; 3],
        );
        let branch_l = make(branch_spec(channels));
        let branch_h = make(branch_spec(channels));
        let dec_relu = vec![true, true, true, false];
        let decoder_l = ConvStack::new(
            decoder_specs(channels).map(&mut make).to_vec(),
            dec_relu.clone(),
        );
        let decoder_h = ConvStack::new(decoder_specs(channels).map(&mut make).to_vec(), dec_relu);
        Self {
            encoder,
            branch_l,
            branch_h,
            decoder_l,
            decoder_h,
        }
    }

    /// Xavier-initialised auto-encoder for `channels`-channel images.
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        Self::build(channels, |s| ConvLayer::xavier(s, rng))
    }

    pub fn zeros(channels: usize) -> Self {
        Self::build(channels, ConvLayer::zeros)
    }

    pub fn image_channels(&self) -> usize {
        self.encoder.layers[0].spec.in_channels
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = image.shape();
        if c != self.image_channels() {
            return Err(Error::shape(
                "encode",
                format!(
                    "image has {c} channels, auto-encoder expects {}",
                    self.image_channels()
                ),
            ));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "encode",
                format!("spatial size {h}x{w} must be even; resize upstream"),
            ));
        }
        Ok(())
    }

    /// Forward pass keeping every activation needed by [`WaeParams::backward`].
    ///
    /// With `with_decoder = false` only the encoder runs (the decomposition
    /// baseline trains the encoder on classification loss alone).
    pub fn trace(&self, image: &Tensor<T>, with_decoder: bool) -> Result<WaeTrace<T>> {
        self.check_image(image)?;
        let trunk = self.encoder.forward_trace(image)?;
        let low = self.branch_l.forward(trunk.output())?;
        let high = self.branch_h.forward(trunk.output())?;
        let decoded = if with_decoder {
            let dl = self.decoder_l.forward_trace(&low)?;
            let dh = self.decoder_h.forward_trace(&high)?;
            let recon = dl.output().add(dh.output())?;
            Some(DecoderTrace {
                low: dl,
                high: dh,
                recon,
            })
        } else {
            None
        };
        Ok(WaeTrace {
            trunk,
            low,
            high,
            decoded,
        })
    }

    /// Gradients of `transform_weight * L_t` plus any upstream gradients on
    /// `I_L` / `I_H` (from a classifier) w.r.t. every parameter.
    pub fn backward(
        &self,
        trace: &WaeTrace<T>,
        image: &Tensor<T>,
        loss: &TransformLossConfig,
        upstream_low: Option<&Tensor<T>>,
        upstream_high: Option<&Tensor<T>>,
    ) -> Result<Self> {
        let mut grads = self.clone();
        let mut g_low = trace.low.zeros_like();
        let mut g_high = trace.high.zeros_like();
        match (&trace.decoded, loss.weight != 0.0) {
            (Some(dec), true) => {
                let recon_scale = loss.weight * 2.0 * loss.norm.factor(image.len());
                let g_recon = dec
                    .recon
                    .zip_map(image, |r, x| T::from_f64_lossy(recon_scale) * (r - x))?;
                let (gl, dl) = self.decoder_l.backward(&dec.low, &g_recon)?;
                let (gh, dh) = self.decoder_h.backward(&dec.high, &g_recon)?;
                grads.decoder_l = dl;
                grads.decoder_h = dh;
                g_low.add_assign(&gl)?;
                g_high.add_assign(&gh)?;
                let energy_scale = T::from_f64_lossy(
                    loss.weight * loss.lambda * 2.0 * loss.norm.factor(trace.high.len()),
                );
                for (g, &h) in g_high.data_mut().iter_mut().zip(trace.high.data()) {
                    *g += energy_scale * h;
                }
            }
            (None, true) => {
                return Err(Error::invalid(
                    "wae backward: transform loss requested but trace has no decoder pass",
                ))
            }
            _ => {
                grads.decoder_l.zero_all();
                grads.decoder_h.zero_all();
            }
        }
        if let Some(u) = upstream_low {
            g_low.add_assign(u)?;
        }
        if let Some(u) = upstream_high {
            g_high.add_assign(u)?;
        }
        let trunk_out = trace.trunk.output();
        let (gt_l, bl) = self.branch_l.backward(trunk_out, &g_low)?;
        let (gt_h, bh) = self.branch_h.backward(trunk_out, &g_high)?;
        grads.branch_l = bl;
        grads.branch_h = bh;
        let g_trunk = gt_l.add(&gt_h)?;
        let (_, enc) = self.encoder.backward(&trace.trunk, &g_trunk)?;
        grads.encoder = enc;
        Ok(grads)
    }
}

impl<T: Real> Params<T> for WaeParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.branch_l.visit(&join(prefix, "branch_l"), out);
        self.branch_h.visit(&join(prefix, "branch_h"), out);
        self.decoder_l.visit(&join(prefix, "decoder_l"), out);
        self.decoder_h.visit(&join(prefix, "decoder_h"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        self.encoder.visit_mut(out);
        self.branch_l.visit_mut(out);
        self.branch_h.visit_mut(out);
        self.decoder_l.visit_mut(out);
        self.decoder_h.visit_mut(out);
    }
}

#[derive(Clone, Debug)]
pub struct DecoderTrace<T: Real> {
    low: StackTrace<T>,
    high: StackTrace<T>,
    recon: Tensor<T>,
}

/// Activations of one auto-encoder forward pass.
#[derive(Clone, Debug)]
pub struct WaeTrace<T: Real> {
    trunk: StackTrace<T>,
    pub low: Tensor<T>,
    pub high: Tensor<T>,
    decoded: Option<DecoderTrace<T>>,
}

impl<T: Real> WaeTrace<T> {
    pub fn reconstruction(&self) -> Option<&Tensor<T>> {
        self.decoded.as_ref().map(|d| &d.recon)
    }

    pub fn decoded_low(&self) -> Option<&Tensor<T>> {
        self.decoded.as_ref().map(|d| d.low.output())
    }

    pub fn decoded_high(&self) -> Option<&Tensor<T>> {
        self.decoded.as_ref().map(|d| d.high.output())
    }

    /// Transform loss of this pass against the `image` it was run on.
    pub fn transform_loss(
        &self,
        image: &Tensor<T>,
        lambda: f64,
        norm: EnergyNorm,
    ) -> Result<TransformLossParts> {
        let recon = self
            .reconstruction()
            .ok_or_else(|| Error::invalid("transform loss needs a decoder pass"))?;
        transform_loss_with(image, recon, &self.high, lambda, norm)
    }
}

/// Splits `image` into `(I_L, I_H)`, each at half resolution.
pub fn encode<T: Real>(image: &Tensor<T>, params: &WaeParams<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    params.check_image(image)?;
    let trunk = params.encoder.forward(image)?;
    let (l, h) = (&params.branch_l, &params.branch_h);
    let mut out = crate::ops::conv2d_shared(
        &trunk,
        &[(&l.weight, Some(&l.bias)), (&h.weight, Some(&h.bias))],
        &l.spec,
    )?;
    let high = out.pop().expect("two heads");
    Ok((out.pop().expect("two heads"), high))
}

/// Decoder output: the reconstruction and the two branch contributions.
#[derive(Clone, Debug)]
pub struct Decoded<T: Real> {
    pub image: Tensor<T>,
    pub low: Tensor<T>,
    pub high: Tensor<T>,
}

/// Reconstructs `I' = D_L(I_L) + D_H(I_H)` at twice the channel resolution.
pub fn decode<T: Real>(
    low: &Tensor<T>,
    high: &Tensor<T>,
    params: &WaeParams<T>,
) -> Result<Decoded<T>> {
    if low.shape() != high.shape() {
        return Err(Error::shape(
            "decode",
            format!("I_L {:?} and I_H {:?} differ", low.shape(), high.shape()),
        ));
    }
    let l = params.decoder_l.forward(low)?;
    let h = params.decoder_h.forward(high)?;
    Ok(Decoded {
        image: l.add(&h)?,
        low: l,
        high: h,
    })
}

/// The three terms of the transform loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformLossParts {
    pub l_r: f64,
    pub l_e: f64,
    pub l_t: f64,
    pub lambda: f64,
}

impl EnergyNorm {
    fn factor(self, elements: usize) -> f64 {
        match self {
            Self::Mean => 1.0 / elements.max(1) as f64,
            Self::Sum => 1.0,
        }
    }
}

/// Weighting of the transform loss inside a larger objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformLossConfig {
    /// Multiplier on `L_t` (1 in stage 1, gamma in stage 3, 0 to disable).
    pub weight: f64,
    pub lambda: f64,
    pub norm: EnergyNorm,
}

impl Default for TransformLossConfig {
    fn default() -> Self {
        Self {
            weight: 1.0,
            lambda: 1.0,
            norm: EnergyNorm::Mean,
        }
    }
}

/// `l_r = mean (I - I')^2`, `l_e = mean I_H^2`, `l_t = l_r + lambda * l_e`.
pub fn transform_loss<T: Real>(
    image: &Tensor<T>,
    recon: &Tensor<T>,
    high: &Tensor<T>,
    lambda: f64,
) -> Result<TransformLossParts> {
    transform_loss_with(image, recon, high, lambda, EnergyNorm::Mean)
}

pub fn transform_loss_with<T: Real>(
    image: &Tensor<T>,
    recon: &Tensor<T>,
    high: &Tensor<T>,
    lambda: f64,
    norm: EnergyNorm,
) -> Result<TransformLossParts> {
    image.expect_same_shape("transform_loss", recon)?;
    let sq: f64 = image
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    let l_r = sq * norm.factor(image.len());
    let l_e = high.sum_sq() * norm.factor(high.len());
    Ok(TransformLossParts {
        l_r,
        l_e,
        l_t: l_r + lambda * l_e,
        lambda,
    })
}

/// Transform loss and its gradient w.r.t. every auto-encoder parameter.
pub fn wae_backward<T: Real>(
    image: &Tensor<T>,
    params: &WaeParams<T>,
    lambda: f64,
) -> Result<(TransformLossParts, WaeParams<T>)> {
    let trace = params.trace(image, true)?;
    let cfg = TransformLossConfig {
        lambda,
        ..Default::default()
    };
    let parts = trace.transform_loss(image, lambda, cfg.norm)?;
    let grads = params.backward(&trace, image, &cfg, None, None)?;
    Ok((parts, grads))
}

/// `mean(I_H^2) / (mean(I_L^2) + 1e-12)`.
pub fn energy_ratio<T: Real>(low: &Tensor<T>, high: &Tensor<T>) -> f64 {
    high.mean_sq() / (low.mean_sq() + 1e-12)
}
