use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 7e-4,
            decay: 0.99,
            momentum: 0.0,
            epsilon: 1e-5,
        }
    }
}

/// Uncentered RMSProp:
/// `a <- decay*a + (1-decay)*g^2`, `p <- p - lr*g/sqrt(a + eps)`.
#[derive(Clone, Debug)]
pub struct RmsPropState<T: Scalar = f32> {
    pub config: RmsPropConfig,
    accumulators: ParamSet<T>,
    momentum: Option<ParamSet<T>>,
}

impl<T: Scalar> RmsPropState<T> {
    pub fn new(config: RmsPropConfig, params: &ParamSet<T>) -> Self {
        RmsPropState {
            config,
            accumulators: params.zeros_like(),
            momentum: (config.momentum != 0.0).then(|| params.zeros_like()),
        }
    }

    pub fn accumulators(&self) -> &ParamSet<T> {
        &self.accumulators
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        self.step_with_lr(params, grads, self.config.learning_rate)
    }

    /// One update at an explicit learning rate. Rejects non-finite gradients
    /// before touching any state.
    pub fn step_with_lr(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<()> {
        params.check_aligned(grads)?;
        params.check_aligned(&self.accumulators)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        let decay = T::of(self.config.decay);
        let keep = T::of(1.0 - self.config.decay);
        let eps = T::of(self.config.epsilon);
        let lr = T::of(lr);
        let mom = T::of(self.config.momentum);
        for i in 0..params.len() {
            let g = grads.at(i).data();
            let a = self.accumulators.at_mut(i).data_mut();
            let p = params.at_mut(i).data_mut();
            match self.momentum.as_mut() {
                None => {
                    for ((p, a), &g) in p.iter_mut().zip(a.iter_mut()).zip(g) {
                        *a = decay * *a + keep * g * g;
                        *p = *p - lr * g / (*a + eps).sqrt();
                    }
                }
                Some(buffers) => {
                    let m = buffers.at_mut(i).data_mut();
                    for (((p, a), m), &g) in p.iter_mut().zip(a.iter_mut()).zip(m.iter_mut()).zip(g) {
                        *a = decay * *a + keep * g * g;
                        *m = mom * *m + lr * g / (*a + eps).sqrt();
                        *p = *p - *m;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("x", Tensor::from_f64(&[1], &[v]).unwrap());
        p
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut params = single(0.0);
        let grads = single(1.0);
        let mut opt = RmsPropState::new(RmsPropConfig::default(), &params);
        opt.step(&mut params, &grads).unwrap();
        let a = opt.accumulators().at(0).data()[0];
        assert!((a - 0.01).abs() < 1e-15);
        let expected = -7e-4 / 0.01001f64.sqrt();
        assert!((params.at(0).data()[0] - expected).abs() < 1e-15);
        opt.step(&mut params, &grads).unwrap();
        let a2 = opt.accumulators().at(0).data()[0];
        assert!((a2 - (0.99 * 0.01 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = single(3.0);
        let mut opt = RmsPropState::new(RmsPropConfig::default(), &params);
        opt.step(&mut params, &single(2.0)).unwrap();
        let p = params.at(0).data()[0];
        let a = opt.accumulators().at(0).data()[0];
        opt.step(&mut params, &single(0.0)).unwrap();
        assert_eq!(params.at(0).data()[0], p);
        assert!(opt.accumulators().at(0).data()[0] < a);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut params = single(1.0);
        let mut opt = RmsPropState::new(RmsPropConfig::default(), &params);
        let err = opt.step(&mut params, &single(f64::NAN));
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(params.at(0).data()[0], 1.0);
        assert_eq!(opt.accumulators().at(0).data()[0], 0.0);
    }

    #[test]
    fn clip_examples() {
        let mut g = ParamSet::<f64>::new();
        g.push("a", Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
        let n = clip_global_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        let d = g.at(0).data();
        assert!((d[0] - 0.3).abs() < 1e-12 && (d[1] - 0.4).abs() < 1e-12);

        let mut small = g.clone();
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small, g);

        let mut zero = ParamSet::<f64>::new();
        zero.push("z", Tensor::zeros(&[3]));
        assert_eq!(clip_global_norm(&mut zero, 0.5), 0.0);
        assert!(zero.at(0).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn momentum_buffer_only_when_configured() {
        let params = single(0.0);
        assert!(RmsPropState::new(RmsPropConfig::default(), &params).momentum.is_none());
        let cfg = RmsPropConfig {
            momentum: 0.9,
            ..Default::default()
        };
        let mut p = params.clone();
        let mut opt = RmsPropState::new(cfg, &p);
        opt.step(&mut p, &single(1.0)).unwrap();
        opt.step(&mut p, &single(1.0)).unwrap();
        assert!(p.at(0).data()[0] < -2.0 * 7e-4 / 0.01001f64.sqrt() * 0.9);
    }
}
