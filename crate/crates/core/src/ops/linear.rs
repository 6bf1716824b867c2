use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Gradients of [`linear`].
#[derive(Clone, Debug)]
pub struct LinearGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let [rows, in_dim, ih, iw] = input.shape();
    let [out_dim, w_in, wh, ww] = weight.shape();
    if ih * iw != 1 || wh * ww != 1 {
        return Err(Error::shape(
            op,
            "input and weight must be matrices (trailing dims 1x1)",
        ));
    }
    if w_in != in_dim {
        return Err(Error::shape(
            op,
            format!("input width {in_dim} but weight expects {w_in}"),
        ));
    }
    Ok((rows, in_dim, out_dim))
}

/// `input (rows x in) * weight^T (in x out) + bias`, weight stored `(out, in)`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (rows, in_dim, out_dim) = check("linear", input, weight)?;
    if bias.len() != out_dim {
        return Err(Error::shape(
            "linear",
            format!("bias length {} but output width is {out_dim}", bias.len()),
        ));
    }
    let mut out = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        rows,
        in_dim,
        out_dim,
        T::one(),
        (input.data(), in_dim as isize, 1),
        (weight.data(), 1, in_dim as isize),
        T::one(),
        (&mut out, out_dim as isize, 1),
    );
    Tensor::matrix(rows, out_dim, out)
}

pub fn linear_grad<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (rows, in_dim, out_dim) = check("linear_grad", input, weight)?;
    if grad_out.shape() != [rows, out_dim, 1, 1] {
        return Err(Error::shape(
            "linear_grad",
            format!(
                "grad_out {:?} but output is {:?}",
                grad_out.shape(),
                [rows, out_dim, 1, 1]
            ),
        ));
    }
    let g = grad_out.data();
    let mut gx = vec![T::zero(); rows * in_dim];
    T::gemm(
        rows,
        out_dim,
        in_dim,
        T::one(),
        (g, out_dim as isize, 1),
        (weight.data(), in_dim as isize, 1),
        T::zero(),
        (&mut gx, in_dim as isize, 1),
    );
    let mut gw = vec![T::zero(); out_dim * in_dim];
    T::gemm(
        out_dim,
        rows,
        in_dim,
        T::one(),
        (g, 1, out_dim as isize),
        (input.data(), in_dim as isize, 1),
        T::zero(),
        (&mut gw, in_dim as isize, 1),
    );
    let mut gb = vec![T::zero(); out_dim];
    for row in g.chunks(out_dim) {
        for (a, &v) in gb.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(input.shape(), gx)?,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: Tensor::vector(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;

    #[test]
    fn identity_weight_passes_input() {
        let x = random_tensor::<f32>([3, 4, 1, 1], 1);
        let mut eye = vec![0.0f32; 16];
        for i in 0..4 {
            eye[i * 5] = 1.0;
        }
        let w = Tensor::matrix(4, 4, eye).unwrap();
        let y = linear(&x, &w, &Tensor::vector(vec![0.0; 4])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let x = random_tensor::<f32>([2, 3, 1, 1], 2);
        let w = Tensor::zeros([2, 3, 1, 1]);
        let b = Tensor::vector(vec![0.5, -1.5]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn rejects_inner_dim_mismatch() {
        let x = Tensor::<f32>::zeros([2, 3, 1, 1]);
        let w = Tensor::zeros([2, 4, 1, 1]);
        assert!(linear(&x, &w, &Tensor::vector(vec![0.0; 2])).is_err());
    }
}
