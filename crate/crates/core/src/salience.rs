//! SmoothGrad salience: the loss gradient averaged over Gaussian-noised copies
//! of the input, reduced to one non-negative value per pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagetensor::{Image, SalienceMap, Tensor};
use crate::microdetect::{DetectorModel, OutputLoss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SalienceConfig {
    /// Number of noisy samples.
    pub samples: usize,
    /// Noise standard deviation in intensity units.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SalienceConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl SalienceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("salience needs at least one sample"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// The noise added for sample `index`: i.i.d. `N(0, sigma²)` per element,
/// drawn from stream `index` of the generator seeded with `seed`.
pub fn sample_noise(shape: (usize, usize, usize), sigma: f64, seed: u64, index: usize) -> Tensor {
    let (h, w, c) = shape;
    let mut out = Tensor::zeros(h, w, c);
    if sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for v in out.data_mut() {
        *v = normal.sample(&mut rng);
    }
    out
}

/// Loss gradient with respect to an input of any resolution: the input is
/// resized to the model's side, differentiated there, and the gradient is
/// carried back through the resize adjoint.
pub fn native_gradient(
    model: &DetectorModel,
    x: &Tensor,
    loss: &impl OutputLoss,
) -> Result<crate::microdetect::InputGradient> {
    let side = model.side();
    if (x.height(), x.width()) == (side, side) {
        return model.input_gradient(x, loss);
    }
    let resized = crate::imagetensor::resize_tensor(x, side, side)?;
    let mut g = model.input_gradient(&resized, loss)?;
    g.grad = crate::imagetensor::resize_bilinear_adjoint(&g.grad, x.height(), x.width())?;
    Ok(g)
}

/// Per-sample signed gradients, in sample order. Noise is added without
/// clamping, so noisy inputs may leave `[0,1]`.
pub fn noisy_gradients(
    model: &DetectorModel,
    x: &Image,
    loss: &(impl OutputLoss + Sync),
    cfg: &SalienceConfig,
) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    let shape = x.as_tensor().shape();
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut noisy = x.as_tensor().clone();
            if cfg.sigma > 0.0 {
                let noise = sample_noise(shape, cfg.sigma, cfg.seed, i);
                for (v, n) in noisy.data_mut().iter_mut().zip(noise.data()) {
                    *v += n;
                }
            }
            native_gradient(model, &noisy, loss).map(|g| g.grad)
        })
        .collect()
}

/// SmoothGrad salience map: the mean of `cfg.samples` noisy gradients,
/// reduced per pixel to the largest absolute value across channels.
pub fn smoothgrad(
    model: &DetectorModel,
    x: &Image,
    loss: &(impl OutputLoss + Sync),
    cfg: &SalienceConfig,
) -> Result<SalienceMap> {
    let grads = noisy_gradients(model, x, loss, cfg)?;
    let (h, w, c) = x.as_tensor().shape();
    let mut mean = Tensor::zeros(h, w, c);
    for g in &grads {
        for (m, v) in mean.data_mut().iter_mut().zip(g.data()) {
            *m += v;
        }
    }
    let n = cfg.samples as f64;
    for m in mean.data_mut() {
        *m /= n;
    }
    Ok(SalienceMap::from_gradient(&mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::LossSpec;
    use crate::microdetect::{generate_scene, DetectorOutput, OutputGradient};

    struct Constant;

    impl OutputLoss for Constant {
        fn evaluate(&self, out: &DetectorOutput) -> (f64, OutputGradient) {
            (3.0, OutputGradient::zeros(out.cells(), out.classes))
        }
    }

    fn fixture() -> (DetectorModel, Image) {
        let model = DetectorModel::init(64, 8, 3, 21).unwrap();
        let scene = generate_scene(21, 64, 8, 3).unwrap();
        (model, scene.image)
    }

    #[test]
    fn zero_samples_is_rejected() {
        let (model, x) = fixture();
        let cfg = SalienceConfig {
            samples: 0,
            ..Default::default()
        };
        assert!(matches!(
            smoothgrad(&model, &x, &LossSpec::default(), &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_loss_gives_zero_map() {
        let (model, x) = fixture();
        let map = smoothgrad(&model, &x, &Constant, &SalienceConfig::default()).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_single_sample_is_reduced_plain_gradient() {
        let (model, x) = fixture();
        let spec = LossSpec::default();
        let cfg = SalienceConfig {
            samples: 1,
            sigma: 0.0,
            seed: 5,
        };
        let map = smoothgrad(&model, &x, &spec, &cfg).unwrap();
        let plain = model.input_gradient(x.as_tensor(), &spec).unwrap().grad;
        assert_eq!(map, SalienceMap::from_gradient(&plain));
    }

    #[test]
    fn noiseless_result_is_independent_of_sample_count() {
        let (model, x) = fixture();
        let spec = LossSpec::default();
        let one = smoothgrad(
            &model,
            &x,
            &spec,
            &SalienceConfig {
                samples: 1,
                sigma: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        let many = smoothgrad(
            &model,
            &x,
            &spec,
            &SalienceConfig {
                samples: 6,
                sigma: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        for (a, b) in one.data().iter().zip(many.data()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn four_samples_equal_explicit_average() {
        let (model, x) = fixture();
        let spec = LossSpec::default();
        let cfg = SalienceConfig {
            samples: 4,
            sigma: 0.1,
            seed: 99,
        };
        let map = smoothgrad(&model, &x, &spec, &cfg).unwrap();

        let shape = x.as_tensor().shape();
        let mut sum = vec![0.0; x.data().len()];
        for i in 0..4 {
            let noise = sample_noise(shape, 0.1, 99, i);
            let noisy: Vec<f64> = x
                .data()
                .iter()
                .zip(noise.data())
                .map(|(a, b)| a + b)
                .collect();
            let noisy = Tensor::from_vec(shape.0, shape.1, shape.2, noisy).unwrap();
            let g = model.input_gradient(&noisy, &spec).unwrap().grad;
            for (s, v) in sum.iter_mut().zip(g.data()) {
                *s += v;
            }
        }
        let mean = Tensor::from_vec(
            shape.0,
            shape.1,
            shape.2,
            sum.iter().map(|s| s / 4.0).collect(),
        )
        .unwrap();
        assert_eq!(map, SalienceMap::from_gradient(&mean));
    }

    #[test]
    fn deterministic_and_non_negative() {
        let (model, x) = fixture();
        let spec = LossSpec::default();
        let cfg = SalienceConfig::default();
        let a = smoothgrad(&model, &x, &spec, &cfg).unwrap();
        assert_eq!(a, smoothgrad(&model, &x, &spec, &cfg).unwrap());
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn noise_streams_differ_per_sample() {
        let a = sample_noise((4, 4, 3), 0.1, 1, 0);
        let b = sample_noise((4, 4, 3), 0.1, 1, 1);
        assert_ne!(a, b);
        assert_eq!(a, sample_noise((4, 4, 3), 0.1, 1, 0));
    }
}
