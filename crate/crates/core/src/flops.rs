//! Static multiply-accumulate accounting and wall-clock timing.
//!
//! A conv layer costs `n_in * s^2 * n_out * m^2` MACs, with `m` its output
//! side. Linear layers cost `in_dim * out_dim`. Pooling and elementwise work
//! is itemised but left out of the headline total.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::classifier::BackboneSpec;
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::par;
use crate::pipeline::{Pipeline, PipelineKind};
use crate::tensor::{Real, Tensor};
use crate::wae;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Deconv,
    Linear,
    Pool,
    Elementwise,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::Deconv => "deconv",
            Self::Linear => "linear",
            Self::Pool => "pool",
            Self::Elementwise => "elementwise",
        }
    }

    /// Whether the layer counts toward the headline total.
    pub fn is_counted(self) -> bool {
        matches!(self, Self::Conv | Self::Deconv | Self::Linear)
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Self::Conv),
            "deconv" => Ok(Self::Deconv),
            "linear" | "fc" => Ok(Self::Linear),
            "pool" => Ok(Self::Pool),
            "elementwise" => Ok(Self::Elementwise),
            _ => Err(Error::invalid(format!("unrepresentable layer kind `{s}`"))),
        }
    }
}

/// One layer of a model description.
///
/// For conv/deconv, `n_in`/`n_out` are channel counts, `s` the kernel side,
/// `m` the output side and `stride` the (deconv) up-sampling factor. For
/// linear layers `n_in`/`n_out` are the input/output widths and `s = m = 1`.
/// For pooling `s` is the window; elementwise layers use `n_out` and `m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub group: String,
    pub kind: LayerKind,
    pub n_in: usize,
    pub n_out: usize,
    pub s: usize,
    pub m: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn conv(
        name: impl Into<String>,
        group: &str,
        n_in: usize,
        n_out: usize,
        s: usize,
        m: usize,
    ) -> Self {
        Self {
            name: name.into(),
            group: group.into(),
            kind: LayerKind::Conv,
            n_in,
            n_out,
            s,
            m,
            stride: 1,
        }
    }

    pub fn linear(name: impl Into<String>, group: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::Linear,
            ..Self::conv(name, group, in_dim, out_dim, 1, 1)
        }
    }

    pub fn pool(
        name: impl Into<String>,
        group: &str,
        channels: usize,
        window: usize,
        m: usize,
    ) -> Self {
        Self {
            kind: LayerKind::Pool,
            ..Self::conv(name, group, channels, channels, window, m)
        }
    }

    pub fn elementwise(name: impl Into<String>, group: &str, channels: usize, m: usize) -> Self {
        Self {
            kind: LayerKind::Elementwise,
            ..Self::conv(name, group, channels, channels, 1, m)
        }
    }

    /// Layer from a [`ConvSpec`] producing an `m x m` output.
    pub fn from_conv_spec(name: impl Into<String>, group: &str, spec: &ConvSpec, m: usize) -> Self {
        Self {
            kind: if spec.transposed {
                LayerKind::Deconv
            } else {
                LayerKind::Conv
            },
            stride: if spec.transposed { spec.stride } else { 1 },
            ..Self::conv(
                name,
                group,
                spec.in_channels,
                spec.out_channels,
                spec.kernel_h,
                m,
            )
        }
    }

    fn check_positive(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 || self.s == 0 || self.m == 0 || self.stride == 0 {
            return Err(Error::invalid(format!(
                "layer `{}`: counts must all be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Operation count of uncounted (pool / elementwise) layers.
    pub fn aux_ops(&self) -> Result<u64> {
        self.check_positive()?;
        let m2 = (self.m * self.m) as u64;
        match self.kind {
            LayerKind::Pool => Ok(self.n_out as u64 * (self.s * self.s) as u64 * m2),
            LayerKind::Elementwise => Ok(self.n_out as u64 * m2),
            _ => Err(Error::invalid(format!(
                "layer `{}` is counted, not auxiliary",
                self.name
            ))),
        }
    }
}

/// `n_in * s^2 * n_out * m^2` for conv layers. A deconv is charged its
/// input-driven cost, `m / stride` being the input side.
pub fn count_conv_flops(spec: &LayerSpec) -> Result<u64> {
    spec.check_positive()?;
    let side = match spec.kind {
        LayerKind::Conv => spec.m,
        LayerKind::Deconv => {
            if !spec.m.is_multiple_of(spec.stride) {
                return Err(Error::invalid(format!(
                    "deconv `{}`: output side {} not a multiple of stride {}",
                    spec.name, spec.m, spec.stride
                )));
            }
            spec.m / spec.stride
        }
        k => {
            return Err(Error::invalid(format!(
                "count_conv_flops: `{}` is a {} layer",
                spec.name,
                k.name()
            )))
        }
    };
    Ok(spec.n_in as u64 * (spec.s * spec.s) as u64 * spec.n_out as u64 * (side * side) as u64)
}

fn count_layer(spec: &LayerSpec) -> Result<u64> {
    match spec.kind {
        LayerKind::Linear => {
            spec.check_positive()?;
            Ok(spec.n_in as u64 * spec.n_out as u64)
        }
        _ => count_conv_flops(spec),
    }
}

/// One MAC as one FLOP, or as two (a multiply and an add).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlopConvention {
    #[default]
    Mac,
    MulAdd,
}

impl FlopConvention {
    fn factor(self) -> u64 {
        match self {
            Self::Mac => 1,
            Self::MulAdd => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCount {
    pub spec: LayerSpec,
    /// Counted MACs (scaled by the convention); 0 for auxiliary layers.
    pub macs: u64,
    /// Pool/elementwise operations, reported but not totalled.
    pub aux_ops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopReport {
    pub layers: Vec<LayerCount>,
    pub total: u64,
    pub conv_total: u64,
    pub linear_total: u64,
    pub aux_total: u64,
    /// Subtotals per group, in first-appearance order.
    pub groups: Vec<(String, u64)>,
    pub convention: FlopConvention,
}

impl FlopReport {
    pub fn group(&self, name: &str) -> u64 {
        self.groups
            .iter()
            .find(|(g, _)| g == name)
            .map_or(0, |(_, v)| *v)
    }

    /// `layer,kind,n_in,n_out,s,m,macs` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,n_in,n_out,s,m,macs\n");
        for l in &self.layers {
            let s = &l.spec;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.name,
                s.kind.name(),
                s.n_in,
                s.n_out,
                s.s,
                s.m,
                l.macs
            ));
        }
        out
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .layers
            .iter()
            .map(|l| l.spec.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "{:<width$}  {:<11}  {:>6}  {:>6}  {:>2}  {:>4}  {:>15}",
            "layer", "kind", "n_in", "n_out", "s", "m", "macs"
        )?;
        for l in &self.layers {
            let s = &l.spec;
            let count = if s.kind.is_counted() {
                l.macs.to_string()
            } else {
                format!("({})", l.aux_ops)
            };
            writeln!(
                f,
                "{:<width$}  {:<11}  {:>6}  {:>6}  {:>2}  {:>4}  {:>15}",
                s.name,
                s.kind.name(),
                s.n_in,
                s.n_out,
                s.s,
                s.m,
                count
            )?;
        }
        for (g, v) in &self.groups {
            writeln!(f, "group {g}: {v} ({:.4}e9)", *v as f64 / 1e9)?;
        }
        writeln!(
            f,
            "conv total: {} ({:.4}e9)",
            self.conv_total,
            self.conv_total as f64 / 1e9
        )?;
        writeln!(f, "linear total: {}", self.linear_total)?;
        writeln!(f, "excluded pool/elementwise ops: {}", self.aux_total)?;
        write!(
            f,
            "total: {} ({:.4}e9)",
            self.total,
            self.total as f64 / 1e9
        )
    }
}

/// Aggregates a model description.
pub fn count_model_flops(layers: &[LayerSpec], convention: FlopConvention) -> Result<FlopReport> {
    let mut report = FlopReport {
        layers: Vec::with_capacity(layers.len()),
        total: 0,
        conv_total: 0,
        linear_total: 0,
        aux_total: 0,
        groups: Vec::new(),
        convention,
    };
    for spec in layers {
        let (macs, aux) = if spec.kind.is_counted() {
            (count_layer(spec)? * convention.factor(), 0)
        } else {
            (0, spec.aux_ops()?)
        };
        match spec.kind {
            LayerKind::Conv | LayerKind::Deconv => report.conv_total += macs,
            LayerKind::Linear => report.linear_total += macs,
            _ => report.aux_total += aux,
        }
        match report.groups.iter_mut().find(|(g, _)| *g == spec.group) {
            Some((_, v)) => *v += macs,
            None => report.groups.push((spec.group.clone(), macs)),
        }
        report.layers.push(LayerCount {
            spec: spec.clone(),
            macs,
            aux_ops: aux,
        });
    }
    report.total = report.conv_total + report.linear_total;
    Ok(report)
}

/// Parses `layer,kind,n_in,n_out,s,m[,macs]` rows (header optional; any
/// `macs` column is ignored and recomputed). Deconv strides default to 2.
pub fn parse_layer_table(text: &str, group: &str) -> Result<Vec<LayerSpec>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("layer,") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 6 {
            return Err(Error::invalid(format!(
                "layer table line {}: expected 6 fields",
                i + 1
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("layer table line {}: bad count `{s}`", i + 1)))
        };
        let kind: LayerKind = cols[1].parse()?;
        out.push(LayerSpec {
            name: cols[0].to_string(),
            group: group.to_string(),
            kind,
            n_in: num(cols[2])?,
            n_out: num(cols[3])?,
            s: num(cols[4])?,
            m: num(cols[5])?,
            stride: if kind == LayerKind::Deconv { 2 } else { 1 },
        });
    }
    Ok(out)
}

const VGG16_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

/// VGG16 (13 conv + 3 fc) at an `input x input` RGB image. Pooling floors,
/// so a 112 input ends in a 3x3 map.
pub fn vgg16_layers(input: usize, classes: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let (mut c, mut m) = (3, input);
    for (b, &(width, reps)) in VGG16_BLOCKS.iter().enumerate() {
        for r in 0..reps {
            layers.push(LayerSpec::conv(
                format!("conv{}_{}", b + 1, r + 1),
                "conv",
                c,
                width,
                3,
                m,
            ));
            c = width;
        }
        m /= 2;
        layers.push(LayerSpec::pool(
            format!("pool{}", b + 1),
            "conv",
            c,
            2,
            m.max(1),
        ));
    }
    layers.push(LayerSpec::linear("fc6", "fc", c * m * m, 4096));
    layers.push(LayerSpec::linear("fc7", "fc", 4096, 4096));
    layers.push(LayerSpec::linear("fc8", "fc", 4096, classes));
    layers
}

/// A backbone stack at input side `m` plus its global pooling.
pub fn backbone_layers(prefix: &str, spec: &BackboneSpec, mut m: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for (i, cs) in spec.conv_specs().iter().enumerate() {
        layers.push(LayerSpec::from_conv_spec(
            format!("{prefix}.conv{i}"),
            prefix,
            cs,
            m,
        ));
        layers.push(LayerSpec::elementwise(
            format!("{prefix}.relu{i}"),
            prefix,
            cs.out_channels,
            m,
        ));
        if spec.pool_after.contains(&i) {
            m /= 2;
            layers.push(LayerSpec::pool(
                format!("{prefix}.pool{i}"),
                prefix,
                cs.out_channels,
                2,
                m,
            ));
        }
    }
    layers.push(LayerSpec::pool(
        format!("{prefix}.gap"),
        prefix,
        spec.feature_dim(),
        m,
        1,
    ));
    layers
}

/// Encoder trunk and both branches at image side `size`.
pub fn encoder_layers(channels: usize, size: usize) -> Vec<LayerSpec> {
    let mut layers: Vec<LayerSpec> = wae::encoder_specs(channels)
        .iter()
        .enumerate()
        .map(|(i, s)| LayerSpec::from_conv_spec(format!("encoder.conv{i}"), "encoder", s, size))
        .collect();
    let b = wae::branch_spec(channels);
    layers.push(LayerSpec::from_conv_spec(
        "encoder.branch_l",
        "encoder",
        &b,
        size / 2,
    ));
    layers.push(LayerSpec::from_conv_spec(
        "encoder.branch_h",
        "encoder",
        &b,
        size / 2,
    ));
    layers
}

/// Both decoder branches (training only; not part of inference cost).
pub fn decoder_layers(channels: usize, size: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for branch in ["decoder_l", "decoder_h"] {
        for (i, s) in wae::decoder_specs(channels).iter().enumerate() {
            layers.push(LayerSpec::from_conv_spec(
                format!("{branch}.conv{i}"),
                "decoder",
                s,
                size,
            ));
        }
    }
    layers.push(LayerSpec::elementwise(
        "decoder.sum",
        "decoder",
        channels,
        size,
    ));
    layers
}

/// Inference-time description of a pipeline on `channels x size x size`
/// inputs. Groups: `encoder`, `standard`, `fusion`, `heads` (plus `front`
/// for non-learned decompositions).
pub fn pipeline_layers(
    kind: PipelineKind,
    channels: usize,
    classes: usize,
    size: usize,
) -> Result<Vec<LayerSpec>> {
    if size == 0 || !size.is_multiple_of(2) {
        return Err(Error::invalid(format!("input side {size} must be even")));
    }
    let half = size / 2;
    let mut layers = Vec::new();
    let (std_in, std_side, fusion_in) = match kind {
        PipelineKind::Wae | PipelineKind::Decomposition => {
            layers.extend(encoder_layers(channels, size));
            (channels, half, Some(channels))
        }
        PipelineKind::Wavelet => {
            layers.push(LayerSpec::elementwise("dwt97", "front", 4 * channels, half));
            (channels, half, Some(3 * channels))
        }
        PipelineKind::Lowres => {
            layers.push(LayerSpec::elementwise("bilinear", "front", channels, half));
            (channels, half, None)
        }
        PipelineKind::Fullres => (channels, size, None),
    };
    let standard = BackboneSpec::standard(std_in);
    layers.extend(backbone_layers("standard", &standard, std_side));
    layers.push(LayerSpec::linear(
        "head_l",
        "heads",
        standard.feature_dim(),
        classes,
    ));
    if let Some(fc) = fusion_in {
        let fusion = BackboneSpec::fusion(fc);
        layers.extend(backbone_layers("fusion", &fusion, half));
        layers.push(LayerSpec::linear(
            "head_c",
            "heads",
            standard.feature_dim() + fusion.feature_dim(),
            classes,
        ));
        layers.push(LayerSpec::elementwise("score_avg", "heads", classes, 1));
    }
    Ok(layers)
}

/// `1 / (standard_fraction + fusion_fraction)`.
pub fn acceleration_bound(standard_fraction: f64, fusion_fraction: f64) -> Result<f64> {
    for (name, v) in [("standard", standard_fraction), ("fusion", fusion_fraction)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid(format!(
                "{name} fraction must be in (0, 1], got {v}"
            )));
        }
    }
    Ok(1.0 / (standard_fraction + fusion_fraction))
}

/// Robust timing summary of repeated calls, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchStats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub reps: usize,
    pub threads: usize,
}

impl fmt::Display for BenchStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "median {:.3} ms  mean {:.3} ms  std {:.3} ms  min {:.3} ms  reps {}  threads {}",
            self.median * 1e3,
            self.mean * 1e3,
            self.std * 1e3,
            self.min * 1e3,
            self.reps,
            self.threads
        )
    }
}

/// Runs `f` `warmup` times unmeasured, then `reps` times on a monotonic clock.
pub fn time_calls(
    mut f: impl FnMut() -> Result<()>,
    warmup: usize,
    reps: usize,
) -> Result<BenchStats> {
    if reps < 3 {
        return Err(Error::invalid(format!(
            "benchmark needs reps >= 3, got {reps}"
        )));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / reps as f64;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    times.sort_by(|a, b| a.total_cmp(b));
    let median = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        0.5 * (times[reps / 2 - 1] + times[reps / 2])
    };
    Ok(BenchStats {
        median,
        mean,
        std,
        min: times[0],
        reps,
        threads: par::thread_count(),
    })
}

/// Times single-image forward passes (scores only) of `p` on a fixed
/// `channels x size x size` input.
pub fn wall_clock_bench<T: Real>(
    p: &Pipeline<T>,
    size: usize,
    warmup: usize,
    reps: usize,
) -> Result<BenchStats> {
    let input = bench_input(p.image_channels(), size)?;
    let mut stats = time_calls(|| p.scores(&input).map(|_| ()), warmup, reps)?;
    // a batch of one runs on the calling thread
    stats.threads = 1;
    Ok(stats)
}

/// Median over `reps` rounds of `time(slow) / time(fast)`, each round timing
/// one forward of each pipeline back to back so clock drift cancels.
pub fn interleaved_speedup<T: Real>(
    slow: &Pipeline<T>,
    fast: &Pipeline<T>,
    size: usize,
    warmup: usize,
    reps: usize,
) -> Result<f64> {
    if reps < 3 {
        return Err(Error::invalid(format!(
            "benchmark needs reps >= 3, got {reps}"
        )));
    }
    if fast.image_channels() != slow.image_channels() {
        return Err(Error::invalid("pipelines disagree on image channels"));
    }
    let input = bench_input(slow.image_channels(), size)?;
    for _ in 0..warmup {
        slow.scores(&input)?;
        fast.scores(&input)?;
    }
    let mut ratios = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        slow.scores(&input)?;
        let ts = t.elapsed().as_secs_f64();
        let t = Instant::now();
        fast.scores(&input)?;
        ratios.push(ts / t.elapsed().as_secs_f64());
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    Ok(ratios[reps / 2])
}

fn bench_input<T: Real>(channels: usize, size: usize) -> Result<Tensor<T>> {
    let n = channels * size * size;
    let data = (0..n)
        .map(|i| T::from_f64_lossy((i % 97) as f64 / 97.0))
        .collect();
    Tensor::from_vec([1, channels, size, size], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_conv1_1() {
        let l = LayerSpec::conv("conv1_1", "conv", 3, 64, 3, 224);
        assert_eq!(count_conv_flops(&l).unwrap(), 86_704_128);
    }

    #[test]
    fn minimal_and_zero_specs() {
        assert_eq!(
            count_conv_flops(&LayerSpec::conv("a", "g", 1, 1, 1, 1)).unwrap(),
            1
        );
        assert!(count_conv_flops(&LayerSpec::conv("a", "g", 1, 0, 1, 1)).is_err());
        assert!(count_conv_flops(&LayerSpec::linear("fc", "g", 4, 4)).is_err());
    }

    #[test]
    fn deconv_charged_at_input_side() {
        let s = ConvSpec::deconv(3, 16, 4, 2, 1);
        let l = LayerSpec::from_conv_spec("d", "g", &s, 32);
        assert_eq!(count_conv_flops(&l).unwrap(), 3 * 16 * 16 * 16 * 16);
    }

    #[test]
    fn homogeneity() {
        let base = LayerSpec::conv("a", "g", 5, 7, 3, 10);
        let c = count_conv_flops(&base).unwrap();
        let mut l = base.clone();
        l.m = 20;
        assert_eq!(count_conv_flops(&l).unwrap(), 4 * c);
        let mut l = base.clone();
        l.n_in = 10;
        assert_eq!(count_conv_flops(&l).unwrap(), 2 * c);
        let mut l = base;
        l.n_out = 14;
        assert_eq!(count_conv_flops(&l).unwrap(), 2 * c);
    }

    #[test]
    fn mul_add_doubles() {
        let layers = vgg16_layers(32, 10);
        let a = count_model_flops(&layers, FlopConvention::Mac).unwrap();
        let b = count_model_flops(&layers, FlopConvention::MulAdd).unwrap();
        assert_eq!(b.total, 2 * a.total);
    }

    #[test]
    fn total_is_order_invariant_and_sums_layers() {
        let mut layers = pipeline_layers(PipelineKind::Wae, 3, 10, 32).unwrap();
        let a = count_model_flops(&layers, FlopConvention::Mac).unwrap();
        layers.reverse();
        let b = count_model_flops(&layers, FlopConvention::Mac).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(a.total, a.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(a.total, a.groups.iter().map(|g| g.1).sum::<u64>());
    }

    #[test]
    fn bound_examples() {
        assert!((acceleration_bound(0.25, 1.0 / 64.0).unwrap() - 3.7647).abs() < 1e-4);
        assert_eq!(acceleration_bound(1.0, 1.0).unwrap(), 0.5);
        assert_eq!(acceleration_bound(0.25, 0.25).unwrap(), 2.0);
        assert!(acceleration_bound(0.0, 0.5).is_err());
        assert!(acceleration_bound(0.5, 1.5).is_err());
        assert!(acceleration_bound(0.2, 0.1).unwrap() > acceleration_bound(0.3, 0.1).unwrap());
    }

    #[test]
    fn table_round_trip() {
        let layers = vgg16_layers(224, 1000);
        let r = count_model_flops(&layers, FlopConvention::Mac).unwrap();
        let parsed = parse_layer_table(&r.to_csv(), "conv").unwrap();
        let r2 = count_model_flops(&parsed, FlopConvention::Mac).unwrap();
        assert_eq!(r.total, r2.total);
        assert!(parse_layer_table("x,blob,1,1,1,1", "g").is_err());
    }

    #[test]
    fn timing_stats_sane() {
        let s = time_calls(|| Ok(()), 1, 5).unwrap();
        assert!(s.median <= s.mean + s.std + 1e-12);
        assert!(time_calls(|| Ok(()), 0, 2).is_err());
    }
}
