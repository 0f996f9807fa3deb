//! Adam with bias correction, applied tensor-by-tensor over the flat
//! parameter store.

use crate::model::ModelParams;
use crate::tensor::Tensor;

use super::{TrainConfig, TrainError};

/// First/second-moment accumulators, one pair per parameter tensor,
/// shapes mirroring the parameters exactly.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Shape integrity against the parameters being optimized.
    pub fn shapes_match(&self, params: &ModelParams) -> bool {
        self.m.len() == params.tensors().len()
            && self
                .m
                .iter()
                .zip(&self.v)
                .zip(params.tensors())
                .all(|((m, v), p)| m.shape() == p.shape() && v.shape() == p.shape())
    }
}

/// One Adam update: m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², and
/// p ← p − lr·m̂/(√v̂ + ε) with bias-corrected m̂, v̂.
///
/// A non-finite gradient aborts with the offending tensor named; nothing
/// is mutated in that case.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.tensors().len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            params.tensors().len()
        )));
    }
    for (slot, grad) in grads.iter().enumerate() {
        if grad.shape() != params.tensors()[slot].shape() {
            return Err(TrainError::InvalidConfig(format!(
                "gradient {slot} has shape {:?}, parameter has {:?}",
                grad.shape(),
                params.tensors()[slot].shape()
            )));
        }
        if let Some(index) = grad.data().iter().position(|g| !g.is_finite()) {
            return Err(TrainError::BadGradient {
                tensor: params.names()[slot].clone(),
                index,
            });
        }
    }

    let t = state.step + 1;
    let (b1, b2, eps, lr) =
        (config.beta1, config.beta2, config.adam_epsilon, config.learning_rate);
    let m_correction = 1.0 - b1.powi(t as i32);
    let v_correction = 1.0 - b2.powi(t as i32);

    for (slot, grad) in grads.iter().enumerate() {
        let m = state.m[slot].data_mut();
        let v = state.v[slot].data_mut();
        let p = params.tensor_data_mut(slot);
        for ((p_i, g_i), (m_i, v_i)) in
            p.iter_mut().zip(grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m_i = b1 * *m_i + (1.0 - b1) * g_i;
            *v_i = b2 * *v_i + (1.0 - b2) * g_i * g_i;
            let m_hat = *m_i / m_correction;
            let v_hat = *v_i / v_correction;
            *p_i -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, generate_synthetic, SynthConfig, VocabCaps};
    use crate::model::{CellKind, DecoderKind, ModelConfig};

    fn tiny_params(seed: u64) -> ModelParams {
        let sessions = generate_synthetic(&SynthConfig::new(20, 8, 2, 3)).unwrap();
        let vocab = build_vocab(&sessions, VocabCaps::default()).unwrap();
        let config = ModelConfig {
            cell: CellKind::Gru,
            layers: 1,
            hidden_dim: 4,
            decoder: DecoderKind::Tied,
            city_dim: 4,
            categorical_dim: 3,
            device_dim: 2,
            numerical_dim: 2,
            input_dropout: 0.0,
            recurrent_dropout: 0.0,
        };
        ModelParams::init(config, &vocab, seed).unwrap()
    }

    fn zero_grads(params: &ModelParams) -> Vec<Tensor> {
        params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = tiny_params(1);
        let before: Vec<Tensor> = params.tensors().to_vec();
        let grads = zero_grads(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(params.tensors(), before.as_slice());
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = tiny_params(2);
        let before: Vec<Tensor> = params.tensors().to_vec();
        let mut grads = zero_grads(&params);
        // A constant gradient of mixed signs on one tensor.
        let shape = grads[0].shape();
        grads[0] = Tensor::from_fn(shape.0, shape.1, |r, c| if (r + c) % 2 == 0 { 0.3 } else { -0.7 });
        let mut state = AdamState::new(&params);
        let config = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &config).unwrap();

        for ((a, b), g) in params.tensors()[0]
            .data()
            .iter()
            .zip(before[0].data())
            .zip(grads[0].data())
        {
            let delta = a - b;
            // Bias-corrected m̂/√v̂ is exactly sign(g) up to ε effects.
            assert!(
                (delta + config.learning_rate * g.signum()).abs() < 1e-9,
                "delta {delta} for gradient {g}"
            );
        }
        for slot in 1..params.tensors().len() {
            assert_eq!(params.tensors()[slot], before[slot], "untouched tensor moved");
        }
    }

    #[test]
    fn identical_tensors_with_identical_gradients_stay_identical() {
        // Two same-shape gate weights set equal, pushed with equal grads.
        let mut params = tiny_params(3);
        let slot_a = params.layer_gates(0)[0].w;
        let slot_b = params.layer_gates(0)[1].w;
        let shared = params.tensor(slot_a).clone();
        params.set_tensor(slot_b, shared);

        let mut grads = zero_grads(&params);
        let shape = grads[slot_a].shape();
        let g = Tensor::from_fn(shape.0, shape.1, |r, c| ((r * 31 + c) % 13) as f64 / 13.0 - 0.4);
        grads[slot_a] = g.clone();
        grads[slot_b] = g;

        let mut state = AdamState::new(&params);
        let config = TrainConfig::default();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &config).unwrap();
            assert_eq!(params.tensor(slot_a), params.tensor(slot_b));
        }
        assert_eq!(state.step(), 5);
    }

    #[test]
    fn nan_gradient_aborts_with_the_tensor_named() {
        let mut params = tiny_params(4);
        let before: Vec<Tensor> = params.tensors().to_vec();
        let mut grads = zero_grads(&params);
        let shape = grads[2].shape();
        grads[2] = Tensor::from_fn(shape.0, shape.1, |r, c| {
            if r == 0 && c == 0 {
                f64::NAN
            } else {
                0.1
            }
        });
        let mut state = AdamState::new(&params);
        let err =
            adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap_err();
        let name = params.names()[2].clone();
        assert!(err.to_string().contains(&name), "{err}");
        assert_eq!(params.tensors(), before.as_slice(), "abort must not mutate");
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn state_shapes_stay_aligned_through_steps() {
        let mut params = tiny_params(5);
        let mut state = AdamState::new(&params);
        assert!(state.shapes_match(&params));
        let grads: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::filled(t.rows(), t.cols(), 0.01))
            .collect();
        for _ in 0..3 {
            adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
            assert!(state.shapes_match(&params));
        }
    }
}
