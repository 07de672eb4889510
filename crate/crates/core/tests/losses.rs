use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srgan_core::losses::{
    adversarial_gen_loss, discriminator_loss, huber_loss, perceptual_loss,
    softmax_reweighed_content_loss, softmax_weights, total_generator_loss, ContentCalibration,
    ContentWeighting, FeatureExtractor, LossTerms, LossWeights, SoftmaxInput,
};

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn t1(v: &[f64]) -> Tensor {
    Tensor::new(v, &Device::Cpu).unwrap()
}

#[test]
fn closed_form_loss_values() {
    let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    close(scalar(&huber_loss(&t1(&[0.5]), &t1(&[0.0])).unwrap()), 0.125);
    close(scalar(&huber_loss(&t1(&[2.0]), &t1(&[0.0])).unwrap()), 1.5);
    close(scalar(&huber_loss(&t1(&[-3.0, 0.0]), &t1(&[0.0, 1.0])).unwrap()), (2.5 + 0.5) / 2.0);
    close(scalar(&adversarial_gen_loss(&t1(&[(-1.0f64).exp()])).unwrap()), 1.0);
    close(scalar(&adversarial_gen_loss(&t1(&[0.5, 0.25])).unwrap()), 1.5 * 2f64.ln());
    close(scalar(&discriminator_loss(&t1(&[0.5]), &t1(&[0.5])).unwrap()), 2.0 * 2f64.ln());
    close(
        scalar(&discriminator_loss(&t1(&[0.25]), &t1(&[0.75])).unwrap()),
        2.0 * (4f64.ln() - 3f64.ln()),
    );
    let terms = LossTerms {
        point: Some(1.0),
        vgg: Some(1.0),
        adv: Some(1.0),
        content: Some(1.0),
    };
    close(total_generator_loss(&terms, vec![], vec![], &LossWeights::default()).total, 1.515);
}

/// Central difference of a scalar function of one variable.
fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[test]
fn huber_gradient_matches_finite_differences() {
    for e in [0.1, 0.99, 1.01, 5.0, -0.1, -0.99, -1.01, -5.0] {
        let v = Var::new(&[e], &Device::Cpu).unwrap();
        let target = t1(&[0.0]);
        let loss = huber_loss(v.as_tensor(), &target).unwrap();
        let g: f64 = loss.backward().unwrap().get(&v).unwrap().to_vec1::<f64>().unwrap()[0];
        let fd = central(|x| scalar(&huber_loss(&t1(&[x]), &target).unwrap()), e, 1e-6);
        let rel = (g - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-5, "e={e}: autograd {g}, fd {fd}, rel {rel}");
    }
}

#[test]
fn huber_target_carries_no_gradient() {
    let est = Var::new(&[0.3, 2.0], &Device::Cpu).unwrap();
    let hr = Var::new(&[0.0, 0.0], &Device::Cpu).unwrap();
    let grads = huber_loss(est.as_tensor(), hr.as_tensor()).unwrap().backward().unwrap();
    assert!(grads.get(&hr).is_none());
    let g = grads.get(&est).unwrap().to_vec1::<f64>().unwrap();
    assert!((g[0] - 0.15).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15, "{g:?}");
}

/// Toy model with 10 parameters and 8 quadratic layer losses of different scales.
struct Toy {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Toy {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (0..8)
            .map(|i| (0..10).map(|_| rng.random_range(0.1..1.0) * (1.0 + i as f64)).collect())
            .collect();
        let b = (0..8).map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        Self { a, b }
    }

    fn layer_tensors(&self, theta: &Tensor) -> Vec<Tensor> {
        (0..8)
            .map(|i| {
                let d = (theta - t1(&self.b[i])).unwrap();
                (d.sqr().unwrap() * t1(&self.a[i])).unwrap().mean_all().unwrap()
            })
            .collect()
    }

    fn layer_values(&self, theta: &[f64]) -> Vec<f64> {
        (0..8)
            .map(|i| {
                (0..10)
                    .map(|j| self.a[i][j] * (theta[j] - self.b[i][j]).powi(2))
                    .sum::<f64>()
                    / 10.0
            })
            .collect()
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn reweighed_gradient_treats_weights_as_constants() {
    let toy = Toy::new(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let theta0: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let calib = ContentCalibration::new(vec![0.5, 0.7, 1.0, 1.3, 1.8, 2.2, 2.9, 3.5]).unwrap();
    let weighting = ContentWeighting::Softmax(SoftmaxInput::Calibrated);

    let theta = Var::new(theta0.as_slice(), &Device::Cpu).unwrap();
    let layers = toy.layer_tensors(theta.as_tensor());
    let r = softmax_reweighed_content_loss(&layers, &calib, weighting).unwrap();
    let grad: Vec<f64> = r.total.backward().unwrap().get(&theta).unwrap().to_vec1().unwrap();

    // oracle: weights frozen at theta0, total = Σ wᵢ Lᵢ(θ)/sᵢ, differentiated numerically
    let w0 = r.weights.clone();
    let frozen = |th: &[f64]| -> f64 {
        toy.layer_values(th)
            .iter()
            .zip(&w0)
            .zip(&calib.scales)
            .map(|((l, w), s)| w * l / s)
            .sum()
    };
    // full softmax dependence, for contrast
    let full = |th: &[f64]| -> f64 {
        let cal: Vec<f64> = toy.layer_values(th).iter().zip(&calib.scales).map(|(l, s)| l / s).collect();
        let w = softmax_weights(&cal).unwrap();
        cal.iter().zip(&w).map(|(c, w)| c * w).sum()
    };
    let fd = |f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
        (0..10)
            .map(|j| {
                let h = 1e-6;
                let (mut p, mut m) = (theta0.clone(), theta0.clone());
                p[j] += h;
                m[j] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    };
    let fd_frozen = fd(&frozen);
    let fd_full = fd(&full);
    let err = rel_err(&grad, &fd_frozen);
    assert!(err < 1e-3, "frozen-weight gradient rel err {err}");
    let gap = rel_err(&grad, &fd_full);
    assert!(gap > 1e-2, "stopped-gradient result should differ from the full derivative, gap {gap}");
}

#[test]
fn softmax_weight_properties_hold_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let w = softmax_weights(&v).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(w.iter().all(|x| *x >= 0.0));
        // monotone: larger loss, larger (or equal) weight
        for i in 0..k {
            for j in 0..k {
                if v[i] > v[j] {
                    assert!(w[i] >= w[j]);
                }
            }
        }
        // permutation equivariance
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pv: Vec<f64> = perm.iter().map(|&p| v[p]).collect();
        let pw = softmax_weights(&pv).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((pw[i] - w[p]).abs() < 1e-12);
        }
        // symmetry
        let c = rng.random_range(-5.0..5.0);
        let eq = softmax_weights(&vec![c; k]).unwrap();
        assert!(eq.iter().all(|x| (x - 1.0 / k as f64).abs() < 1e-12));
    }
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let w = softmax_weights(&[1000.0, 1000.0, 0.0]).unwrap();
    assert!((w[0] - 0.5).abs() < 1e-12 && w[2] < 1e-300);
    assert!(softmax_weights(&[f64::NAN, 1.0]).is_err());
    assert!(softmax_weights(&[]).is_err());
}

/// Two dense layers (ReLU between) applied per pixel to channel vectors.
struct TwoLayer {
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
}

impl TwoLayer {
    fn apply(&self, pix: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .w1
            .iter()
            .map(|row| row.iter().zip(pix).map(|(a, b)| a * b).sum::<f64>().max(0.0))
            .collect();
        self.w2.iter().map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum()).collect()
    }
}

impl FeatureExtractor for TwoLayer {
    fn features(&self, images: &Tensor) -> srgan_core::Result<Tensor> {
        let w1 = Tensor::new(self.w1.clone(), images.device())?.reshape((4, 3, 1, 1))?;
        let w2 = Tensor::new(self.w2.clone(), images.device())?.reshape((2, 4, 1, 1))?;
        let h = images.conv2d(&w1, 0, 1, 1, 1)?.relu()?;
        Ok(h.conv2d(&w2, 0, 1, 1, 1)?)
    }
}

#[test]
fn perceptual_loss_matches_a_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ex = TwoLayer {
        w1: (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        w2: (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
    };
    let (h, w) = (3, 4);
    let a: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    let b: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    let ta = Tensor::from_vec(a.clone(), (1, 3, h, w), &Device::Cpu).unwrap();
    let tb = Tensor::from_vec(b.clone(), (1, 3, h, w), &Device::Cpu).unwrap();
    let got = scalar(&perceptual_loss(&ex, &ta, &tb).unwrap());
    let mut acc = 0.0;
    for p in 0..h * w {
        let pa: Vec<f64> = (0..3).map(|c| a[c * h * w + p]).collect();
        let pb: Vec<f64> = (0..3).map(|c| b[c * h * w + p]).collect();
        for (x, y) in ex.apply(&pa).iter().zip(ex.apply(&pb)) {
            acc += (x - y).powi(2);
        }
    }
    let expected = acc / (2 * h * w) as f64;
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}
