//! Two-stream classifier over the decomposed channels.
//!
//! A standard VGG-style backbone consumes `I_L` and a quarter-width copy of
//! it (the fusion backbone) consumes `I_H`. Both end in global average
//! pooling. `head_l` scores the standard features alone, `head_c` scores the
//! concatenation of both, and the final score is their mean.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, ConvLayer, Linear, Params};
use crate::ops::{self, ConvSpec, Pooled};
use crate::tensor::{Real, Tensor};

/// Standard-stream widths of the desk-scale VGG backbone.
pub const STANDARD_WIDTHS: [usize; 6] = [48, 48, 96, 96, 192, 192];
/// Indices of the conv layers followed by a 2x2 max-pool.
pub const POOL_AFTER: [usize; 3] = [1, 3, 5];

/// Conv widths of the fusion stream: every standard width divided by 4,
/// rounded up.
pub fn quarter_widths(widths: &[usize]) -> Vec<usize> {
    widths.iter().map(|w| w.div_ceil(4)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub pool_after: Vec<usize>,
}

impl BackboneSpec {
    pub fn standard(in_channels: usize) -> Self {
        Self {
            in_channels,
            widths: STANDARD_WIDTHS.to_vec(),
            pool_after: POOL_AFTER.to_vec(),
        }
    }

    pub fn fusion(in_channels: usize) -> Self {
        Self {
            in_channels,
            widths: quarter_widths(&STANDARD_WIDTHS),
            pool_after: POOL_AFTER.to_vec(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("non-empty backbone")
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut prev = self.in_channels;
        self.widths
            .iter()
            .map(|&w| {
                let s = ConvSpec::conv(prev, w, 3, 1, 1);
                prev = w;
                s
            })
            .collect()
    }

    /// Smallest multiple of which the input side must be.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.pool_after.len()
    }
}

/// VGG-style conv/ReLU/max-pool stack ending in global average pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T: Real> {
    pub convs: Vec<ConvLayer<T>>,
    pool_after: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct BackboneTrace<T: Real> {
    /// Input of every conv layer.
    inputs: Vec<Tensor<T>>,
    /// Post-ReLU output of every conv layer.
    activations: Vec<Tensor<T>>,
    pools: Vec<Option<Pooled<T>>>,
    last_shape: [usize; 4],
    pub features: Tensor<T>,
}

impl<T: Real> Backbone<T> {
    fn build(spec: &BackboneSpec, mut make: impl FnMut(ConvSpec) -> ConvLayer<T>) -> Self {
        let convs: Vec<_> = spec.conv_specs().into_iter().map(&mut make).collect();
        let pool_after = (0..convs.len())
            .map(|i| spec.pool_after.contains(&i))
            .collect();
        Self { convs, pool_after }
    }

    pub fn new<R: Rng>(spec: &BackboneSpec, rng: &mut R) -> Self {
        Self::build(spec, |s| ConvLayer::xavier(s, rng))
    }

    pub fn zeros(spec: &BackboneSpec) -> Self {
        Self::build(spec, ConvLayer::zeros)
    }

    pub fn spec(&self) -> BackboneSpec {
        BackboneSpec {
            in_channels: self.convs[0].spec.in_channels,
            widths: self.convs.iter().map(|c| c.spec.out_channels).collect(),
            pool_after: (0..self.convs.len())
                .filter(|&i| self.pool_after[i])
                .collect(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().expect("non-empty").spec.out_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let div = 1usize << self.pool_after.iter().filter(|&&p| p).count();
        if c != self.convs[0].spec.in_channels {
            return Err(Error::shape(
                "classifier",
                format!(
                    "input has {c} channels, backbone expects {}",
                    self.convs[0].spec.in_channels
                ),
            ));
        }
        if h < div || w < div || h % div != 0 || w % div != 0 {
            return Err(Error::shape(
                "classifier",
                format!("spatial size {h}x{w} too small or not divisible by {div} for the pooling stages"),
            ));
        }
        Ok(())
    }

    /// Pooled features without keeping anything for the backward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            cur = conv.forward(&cur)?;
            ops::relu_in_place(&mut cur);
            if pool {
                cur = ops::maxpool2d(&cur, 2, 2)?.output;
            }
        }
        Ok(ops::global_avg_pool(&cur))
    }

    pub fn trace(&self, x: &Tensor<T>) -> Result<BackboneTrace<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut activations = Vec::with_capacity(self.convs.len());
        let mut pools = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            let mut y = conv.forward(&cur)?;
            ops::relu_in_place(&mut y);
            inputs.push(cur);
            if pool {
                let p = ops::maxpool2d(&y, 2, 2)?;
                cur = p.output.clone();
                pools.push(Some(p));
            } else {
                cur = y.clone();
                pools.push(None);
            }
            activations.push(y);
        }
        let last_shape = cur.shape();
        let features = ops::global_avg_pool(&cur);
        Ok(BackboneTrace {
            inputs,
            activations,
            pools,
            last_shape,
            features,
        })
    }

    /// Back-propagates a gradient on the pooled features.
    pub fn backward(
        &self,
        trace: &BackboneTrace<T>,
        grad_features: &Tensor<T>,
    ) -> Result<(Tensor<T>, Self)> {
        let mut g = ops::global_avg_pool_grad(grad_features, trace.last_shape)?;
        let mut grads = Vec::with_capacity(self.convs.len());
        for i in (0..self.convs.len()).rev() {
            if let Some(p) = &trace.pools[i] {
                g = ops::maxpool2d_grad(&g, p)?;
            }
            ops::relu_mask_by_output(&mut g, &trace.activations[i]);
            let (gx, gl) = self.convs[i].backward(&trace.inputs[i], &g)?;
            grads.push(gl);
            g = gx;
        }
        grads.reverse();
        Ok((
            g,
            Self {
                convs: grads,
                pool_after: self.pool_after.clone(),
            },
        ))
    }
}

impl<T: Real> Params<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        for c in &mut self.convs {
            c.visit_mut(out);
        }
    }
}

/// Standard stream, optional fusion stream, and the score heads.
///
/// Without a fusion stream the classifier is a plain single-stream network
/// and `s = s_L` (used by the down-sampling and full-resolution baselines).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T: Real> {
    pub standard: Backbone<T>,
    pub fusion: Option<Backbone<T>>,
    pub head_l: Linear<T>,
    pub head_c: Option<Linear<T>>,
}

impl<T: Real> ClassifierParams<T> {
    /// Two-stream classifier: standard stream over `low_channels`, fusion
    /// stream over `high_channels`.
    pub fn two_stream<R: Rng>(
        low_channels: usize,
        high_channels: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let standard = Backbone::new(&BackboneSpec::standard(low_channels), rng);
        let fusion = Backbone::new(&BackboneSpec::fusion(high_channels), rng);
        let head_l = Linear::xavier(standard.feature_dim(), classes, rng);
        let head_c = Linear::xavier(standard.feature_dim() + fusion.feature_dim(), classes, rng);
        Self {
            standard,
            fusion: Some(fusion),
            head_l,
            head_c: Some(head_c),
        }
    }

    pub fn single_stream<R: Rng>(channels: usize, classes: usize, rng: &mut R) -> Self {
        let standard = Backbone::new(&BackboneSpec::standard(channels), rng);
        let head_l = Linear::xavier(standard.feature_dim(), classes, rng);
        Self {
            standard,
            fusion: None,
            head_l,
            head_c: None,
        }
    }

    pub fn classes(&self) -> usize {
        self.head_l.out_dim()
    }

    pub fn is_two_stream(&self) -> bool {
        self.fusion.is_some()
    }

    /// Inference-only scores; matches `trace(..).scores()` exactly.
    pub fn forward(&self, low: &Tensor<T>, high: Option<&Tensor<T>>) -> Result<Scores<T>> {
        let f_l = self.standard.forward(low)?;
        let s_l = self.head_l.forward(&f_l)?;
        let s_c = match (&self.fusion, &self.head_c, high) {
            (Some(fusion), Some(head_c), Some(high)) => {
                check_pair(low, high)?;
                let f_h = fusion.forward(high)?;
                Some(head_c.forward(&Tensor::concat_channels(&[&f_l, &f_h])?)?)
            }
            (None, None, None) => None,
            (Some(_), _, None) => {
                return Err(Error::invalid(
                    "two-stream classifier needs the high-frequency input",
                ))
            }
            _ => {
                return Err(Error::invalid(
                    "single-stream classifier got a high-frequency input",
                ))
            }
        };
        let s = average_scores(&s_l, s_c.as_ref());
        Ok(Scores { s_l, s_c, s })
    }

    pub fn trace(&self, low: &Tensor<T>, high: Option<&Tensor<T>>) -> Result<ClassifierTrace<T>> {
        let std_trace = self.standard.trace(low)?;
        let s_l = self.head_l.forward(&std_trace.features)?;
        let fused = match (&self.fusion, &self.head_c, high) {
            (Some(fusion), Some(head_c), Some(high)) => {
                check_pair(low, high)?;
                let f_trace = fusion.trace(high)?;
                let concat = Tensor::concat_channels(&[&std_trace.features, &f_trace.features])?;
                let s_c = head_c.forward(&concat)?;
                Some((f_trace, concat, s_c))
            }
            (None, None, None) => None,
            (Some(_), _, None) => {
                return Err(Error::invalid(
                    "two-stream classifier needs the high-frequency input",
                ))
            }
            _ => {
                return Err(Error::invalid(
                    "single-stream classifier got a high-frequency input",
                ))
            }
        };
        Ok(ClassifierTrace {
            standard: std_trace,
            s_l,
            fused,
        })
    }

    /// Gradients given upstream gradients on `s_L` and (when two-stream) `s_c`.
    /// Returns parameter gradients and input gradients for `I_L` and `I_H`.
    pub fn backward(
        &self,
        trace: &ClassifierTrace<T>,
        grad_s_l: &Tensor<T>,
        grad_s_c: Option<&Tensor<T>>,
    ) -> Result<(Self, Tensor<T>, Option<Tensor<T>>)> {
        let (mut g_feat_l, head_l) = self.head_l.backward(&trace.standard.features, grad_s_l)?;
        let mut grads = Self {
            standard: self.standard.clone(),
            fusion: None,
            head_l,
            head_c: None,
        };
        let mut g_high = None;
        if let (Some((f_trace, concat, _)), Some(g_sc), Some(head_c), Some(fusion)) =
            (&trace.fused, grad_s_c, &self.head_c, &self.fusion)
        {
            let (g_concat, hc) = head_c.backward(concat, g_sc)?;
            let dl = self.standard.feature_dim();
            let parts = g_concat.split_channels(&[dl, fusion.feature_dim()])?;
            g_feat_l.add_assign(&parts[0])?;
            let (gh, fg) = fusion.backward(f_trace, &parts[1])?;
            grads.head_c = Some(hc);
            grads.fusion = Some(fg);
            g_high = Some(gh);
        } else if let (Some(fusion), Some(head_c)) = (&self.fusion, &self.head_c) {
            let mut fz = fusion.clone();
            fz.zero_all();
            let mut hz = head_c.clone();
            hz.zero_all();
            grads.fusion = Some(fz);
            grads.head_c = Some(hz);
        }
        let (g_low, sg) = self.standard.backward(&trace.standard, &g_feat_l)?;
        grads.standard = sg;
        Ok((grads, g_low, g_high))
    }
}

impl<T: Real> Params<T> for ClassifierParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.standard.visit(&join(prefix, "standard"), out);
        if let Some(f) = &self.fusion {
            f.visit(&join(prefix, "fusion"), out);
        }
        self.head_l.visit(&join(prefix, "head_l"), out);
        if let Some(h) = &self.head_c {
            h.visit(&join(prefix, "head_c"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        self.standard.visit_mut(out);
        if let Some(f) = &mut self.fusion {
            f.visit_mut(out);
        }
        self.head_l.visit_mut(out);
        if let Some(h) = &mut self.head_c {
            h.visit_mut(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierTrace<T: Real> {
    standard: BackboneTrace<T>,
    pub s_l: Tensor<T>,
    fused: Option<(BackboneTrace<T>, Tensor<T>, Tensor<T>)>,
}

impl<T: Real> ClassifierTrace<T> {
    pub fn s_c(&self) -> Option<&Tensor<T>> {
        self.fused.as_ref().map(|f| &f.2)
    }

    pub fn scores(&self) -> Scores<T> {
        let s_c = self.s_c().cloned();
        let s = average_scores(&self.s_l, s_c.as_ref());
        Scores {
            s_l: self.s_l.clone(),
            s_c,
            s,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scores<T: Real> {
    pub s_l: Tensor<T>,
    pub s_c: Option<Tensor<T>>,
    pub s: Tensor<T>,
}

fn check_pair<T: Real>(low: &Tensor<T>, high: &Tensor<T>) -> Result<()> {
    if high.batch() != low.batch() || high.height() != low.height() || high.width() != low.width() {
        return Err(Error::shape(
            "forward_classify",
            format!("I_L {:?} and I_H {:?} differ", low.shape(), high.shape()),
        ));
    }
    Ok(())
}

fn average_scores<T: Real>(s_l: &Tensor<T>, s_c: Option<&Tensor<T>>) -> Tensor<T> {
    match s_c {
        Some(c) => s_l
            .zip_map(c, |a, b| (a + b) * T::from_f64_lossy(0.5))
            .expect("heads share output shape"),
        None => s_l.clone(),
    }
}

/// Score vectors `(s_L, s_c, s)` with `s = (s_L + s_c) / 2`.
pub fn forward_classify<T: Real>(
    low: &Tensor<T>,
    high: &Tensor<T>,
    params: &ClassifierParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if !params.is_two_stream() {
        return Err(Error::invalid(
            "forward_classify needs a two-stream classifier",
        ));
    }
    if low.shape() != high.shape() {
        return Err(Error::shape(
            "forward_classify",
            format!("I_L {:?} and I_H {:?} differ", low.shape(), high.shape()),
        ));
    }
    let scores = params.trace(low, Some(high))?.scores();
    Ok((scores.s_l, scores.s_c.expect("two-stream"), scores.s))
}

/// `L_c = CE(s_L) + CE(s_c)` and the gradients for both score matrices.
/// With no `s_c` only the first term is used.
pub fn classification_loss<T: Real>(
    s_l: &Tensor<T>,
    s_c: Option<&Tensor<T>>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>, Option<Tensor<T>>)> {
    let (loss_l, g_l) = ops::softmax_cross_entropy(s_l, labels)?;
    match s_c {
        Some(sc) => {
            let (loss_c, g_c) = ops::softmax_cross_entropy(sc, labels)?;
            Ok((loss_l + loss_c, g_l, Some(g_c)))
        }
        None => Ok((loss_l, g_l, None)),
    }
}

/// Indices of the `k` largest scores per row, descending, ties to the lower
/// index.
pub fn predict_topk<T: Real>(scores: &Tensor<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    let classes = scores.channels() * scores.height() * scores.width();
    if k == 0 || k > classes {
        return Err(Error::invalid(format!(
            "predict_topk: k = {k} outside 1..={classes}"
        )));
    }
    Ok(scores
        .data()
        .chunks(classes)
        .map(|row| {
            let mut idx: Vec<usize> = (0..classes).collect();
            idx.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            idx.truncate(k);
            idx
        })
        .collect())
}
