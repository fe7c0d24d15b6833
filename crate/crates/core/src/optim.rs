//! SGD with Nesterov momentum and L2 weight decay.

use crate::error::{ensure_dim, Result};
use crate::model::Model;
use crate::scalar::Scalar;

/// One in-place update of a flat parameter slice:
///
/// ```text
/// g ← g + wd·θ
/// v ← μ·v + g
/// θ ← θ − lr·(g + μ·v)
/// ```
pub fn sgd_nesterov_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    velocity: &mut [F],
    lr: F,
    momentum: F,
    weight_decay: F,
) -> Result<()> {
    ensure_dim!(
        params.len() == grads.len() && params.len() == velocity.len(),
        "parameter ({}), gradient ({}) and velocity ({}) lengths differ",
        params.len(),
        grads.len(),
        velocity.len()
    );
    for ((theta, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *theta;
        *v = momentum * *v + g;
        *theta -= lr * (g + momentum * *v);
    }
    Ok(())
}

/// Applies [`sgd_nesterov_step`] to every layer; weight decay touches weights, not biases.
pub fn step_model<F: Scalar>(
    model: &mut Model<F>,
    grads: &Model<F>,
    velocity: &mut Model<F>,
    lr: F,
    momentum: F,
    weight_decay: F,
) -> Result<()> {
    let grad_layers = grads.layers();
    let mut vel_layers = velocity.layers_mut();
    let mut layers = model.layers_mut();
    ensure_dim!(
        layers.len() == grad_layers.len() && layers.len() == vel_layers.len(),
        "model, gradient and velocity layer counts differ"
    );
    for ((layer, grad), vel) in layers.iter_mut().zip(&grad_layers).zip(vel_layers.iter_mut()) {
        sgd_nesterov_step(
            layer.weight.as_slice_mut().expect("standard layout"),
            grad.weight.as_slice().expect("standard layout"),
            vel.weight.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            weight_decay,
        )?;
        sgd_nesterov_step(
            layer.bias.as_slice_mut().expect("standard layout"),
            grad.bias.as_slice().expect("standard layout"),
            vel.bias.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            F::zero(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_nesterov_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn hand_computed_step() {
        let mut p = [1.0f64];
        let mut v = [0.0];
        sgd_nesterov_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(v, [1.0]);
        assert!((p[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let mut p = [2.0f64];
        let mut v = [0.0];
        sgd_nesterov_step(&mut p, &[0.0], &mut v, 1.0, 0.0, 0.5).unwrap();
        assert_eq!(p, [1.0]);
    }

    #[test]
    fn identical_states_give_identical_steps() {
        let run = || {
            let mut p = [0.3f64, 0.7, -1.1];
            let mut v = [0.1, 0.0, -0.2];
            sgd_nesterov_step(&mut p, &[0.5, -0.25, 1.0], &mut v, 0.05, 0.9, 2e-4).unwrap();
            (p, v)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn length_mismatch() {
        let mut p = [0.0f64; 2];
        let mut v = [0.0; 3];
        assert!(sgd_nesterov_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).is_err());
    }
}
