use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `input > 0`. The gradient at exactly zero is zero.
pub fn relu_grad<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(input, |g, x| if x > T::zero() { g } else { T::zero() })
}

/// In-place variant used by the network stacks. NaN maps to zero.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub(crate) fn relu_in_place<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Masks `grad` by the sign of an already-activated output.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub(crate) fn relu_mask_by_output<T: Real>(grad: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if !(y > T::zero()) {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_clips_negatives() {
        let x = Tensor::<f32>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn gradient_tie_at_zero_is_zero() {
        let x = Tensor::<f32>::from_vec([1, 1, 1, 3], vec![3.0, 0.0, -2.0]).unwrap();
        let g = Tensor::<f32>::full([1, 1, 1, 3], 1.0);
        assert_eq!(relu_grad(&g, &x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }
}
