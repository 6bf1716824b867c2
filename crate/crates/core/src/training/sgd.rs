use crate::error::{Error, Result};
use crate::layers::Params;
use crate::tensor::{Real, Tensor};

/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_update<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    param.expect_same_shape("sgd_update", grad)?;
    param.expect_same_shape("sgd_update", velocity)?;
    let (lr, mu, wd) = (
        T::from_f64_lossy(lr),
        T::from_f64_lossy(momentum),
        T::from_f64_lossy(weight_decay),
    );
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut().iter_mut())
    {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers mirroring a parameter collection.
#[derive(Clone, Debug)]
pub struct SgdState<P> {
    velocity: P,
}

impl<P> SgdState<P> {
    pub fn velocity(&self) -> &P {
        &self.velocity
    }
}

impl<P: Clone> SgdState<P> {
    pub fn new<T: Real>(params: &P) -> Self
    where
        P: Params<T>,
    {
        let mut velocity = params.clone();
        velocity.zero_all();
        Self { velocity }
    }

    pub fn step<T: Real>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()>
    where
        P: Params<T>,
    {
        let grads = grads.named();
        let params = params.tensors_mut();
        let vel = self.velocity.tensors_mut();
        if grads.len() != params.len() || vel.len() != params.len() {
            return Err(Error::shape(
                "sgd",
                "parameter, gradient and velocity sets differ",
            ));
        }
        for ((p, (_, g)), v) in params.into_iter().zip(grads).zip(vel) {
            sgd_update(p, g, v, lr, momentum, weight_decay)?;
        }
        Ok(())
    }
}
