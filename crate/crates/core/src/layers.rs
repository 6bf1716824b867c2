//! Parameterised layers, layer stacks with cached activations, and the
//! parameter-visiting trait shared by models, gradients and optimizer state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Real, Tensor};
use crate::training::xavier_init;

/// A collection of named parameter tensors.
///
/// The same type doubles as its own gradient and momentum buffer, so
/// `visit` and `visit_mut` must enumerate tensors in the same order.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>);

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        self.visit_mut(&mut v);
        v
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattens every tensor into one vector (gradient checking).
    fn flatten(&self) -> Vec<T> {
        self.named()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    fn load_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn zero_all(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    /// Copies tensors by name from `src`; every own tensor must be present.
    fn assign_from(&mut self, src: &[(String, Tensor<T>)], prefix: &str) -> Result<()> {
        let names: Vec<String> = self.named().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(self.tensors_mut()) {
            let full = format!("{prefix}{name}");
            let found = src
                .iter()
                .find(|(n, _)| *n == full)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor `{full}`")))?;
            if found.1.shape() != dst.shape() {
                return Err(Error::shape(
                    "load params",
                    format!(
                        "`{full}` is {:?}, model expects {:?}",
                        found.1.shape(),
                        dst.shape()
                    ),
                ));
            }
            dst.data_mut().copy_from_slice(found.1.data());
        }
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Convolution or transposed convolution with its weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Real> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros([1, spec.out_channels, 1, 1]),
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng>(spec: ConvSpec, rng: &mut R) -> Self {
        let k = spec.kernel_h * spec.kernel_w;
        Self {
            spec,
            weight: xavier_init(
                spec.weight_shape(),
                spec.in_channels * k,
                spec.out_channels * k,
                rng,
            ),
            bias: Tensor::zeros([1, spec.out_channels, 1, 1]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.spec.transposed {
            ops::deconv2d(x, &self.weight, Some(&self.bias), &self.spec)
        } else {
            ops::conv2d(x, &self.weight, Some(&self.bias), &self.spec)
        }
    }

    /// Returns the input gradient and a layer holding parameter gradients.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let g = if self.spec.transposed {
            ops::deconv2d_grad(grad_out, x, &self.weight, &self.spec)?
        } else {
            ops::conv2d_grad(grad_out, x, &self.weight, &self.spec)?
        };
        Ok((
            g.input,
            Self {
                spec: self.spec,
                weight: g.weight,
                bias: Tensor::from_vec([1, self.spec.out_channels, 1, 1], g.bias.into_vec())?,
            },
        ))
    }
}

impl<T: Real> Params<T> for ConvLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Fully connected layer, weight `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros([out_dim, in_dim, 1, 1]),
            bias: Tensor::zeros([1, out_dim, 1, 1]),
        }
    }

    pub fn xavier<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: xavier_init([out_dim, in_dim, 1, 1], in_dim, out_dim, rng),
            bias: Tensor::zeros([1, out_dim, 1, 1]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.channels()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.batch()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let g = ops::linear_grad(grad_out, x, &self.weight)?;
        Ok((
            g.input,
            Self {
                weight: g.weight,
                bias: Tensor::from_vec([1, self.out_dim(), 1, 1], g.bias.into_vec())?,
            },
        ))
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// A chain of conv layers, each optionally followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack<T: Real> {
    pub layers: Vec<ConvLayer<T>>,
    pub relu: Vec<bool>,
}

/// Activations kept from a [`ConvStack`] forward pass.
#[derive(Clone, Debug)]
pub struct StackTrace<T: Real> {
    /// `values[i]` is what layer `i` consumed; the last entry is the output.
    values: Vec<Tensor<T>>,
}

impl<T: Real> StackTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("non-empty trace")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.values.pop().expect("non-empty trace")
    }
}

impl<T: Real> ConvStack<T> {
    pub fn new(layers: Vec<ConvLayer<T>>, relu: Vec<bool>) -> Self {
        assert_eq!(layers.len(), relu.len());
        Self { layers, relu }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (layer, &act) in self.layers.iter().zip(&self.relu) {
            cur = layer.forward(&cur)?;
            if act {
                ops::relu_in_place(&mut cur);
            }
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<StackTrace<T>> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for (layer, &act) in self.layers.iter().zip(&self.relu) {
            let mut y = layer.forward(values.last().expect("seeded"))?;
            if act {
                ops::relu_in_place(&mut y);
            }
            values.push(y);
        }
        Ok(StackTrace { values })
    }

    pub fn backward(
        &self,
        trace: &StackTrace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Self)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.relu[i] {
                ops::relu_mask_by_output(&mut g, &trace.values[i + 1]);
            }
            let (gx, gl) = layer.backward(&trace.values[i], &g)?;
            grads.push(gl);
            g = gx;
        }
        grads.reverse();
        Ok((
            g,
            Self {
                layers: grads,
                relu: self.relu.clone(),
            },
        ))
    }
}

impl<T: Real> Params<T> for ConvStack<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        for l in &mut self.layers {
            l.visit_mut(out);
        }
    }
}
