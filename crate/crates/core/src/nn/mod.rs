//! Minimal CPU neural-network engine: dense NCHW tensors, convolutions with
//! hand-written backward passes, residual stacks and Adam.

mod conv;
mod layers;
mod param;
mod tensor;

pub use conv::{Conv2d, ConvTranspose2d};
pub use layers::{sigmoid, Act, ConvLayer, ResidualBlock, SeqCache, Sequential, Stage};
pub use param::{Adam, Param, Parameterized};
pub(crate) use param::join;
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::{Parameterized, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub trait Layer: Parameterized {
        fn fwd(&self, x: &Tensor) -> Tensor;
        fn bwd(&mut self, x: &Tensor, g: &Tensor) -> Tensor;
    }

    fn nudge<L: Layer>(layer: &mut L, which: usize, elem: usize, delta: f32) -> bool {
        let mut idx = 0;
        let mut hit = false;
        layer.visit_mut("", &mut |_, p| {
            if idx == which && elem < p.len() {
                p.value[elem] += delta;
                hit = true;
            }
            idx += 1;
        });
        hit
    }

    fn grad_at<L: Layer>(layer: &L, which: usize, elem: usize) -> f32 {
        let mut idx = 0;
        let mut g = 0.0;
        layer.visit("", &mut |_, p| {
            if idx == which {
                g = p.grad[elem];
            }
            idx += 1;
        });
        g
    }

    /// Compares analytic input and parameter gradients of `<r, layer(x)>` for a
    /// random projection `r` against central differences.
    pub fn check<L: Layer>(layer: &mut L, x: &Tensor, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = layer.fwd(x);
        let r: Vec<f32> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Tensor::from_vec(y.batch(), y.channels(), y.height(), y.width(), r.clone());
        let objective = |t: &Tensor| -> f64 { t.data().iter().zip(&r).map(|(a, b)| *a as f64 * *b as f64).sum() };
        layer.zero_grad();
        let gx = layer.bwd(x, &g);
        let eps = 1e-2f32;
        for i in (0..x.len()).step_by(3) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (objective(&layer.fwd(&xp)) - objective(&layer.fwd(&xm))) / (2.0 * eps as f64);
            let an = gx.data()[i] as f64;
            assert!((fd - an).abs() <= tol * (1.0 + fd.abs()), "input grad {i}: fd {fd} vs analytic {an}");
        }
        let mut count = 0;
        layer.visit("", &mut |_, _| count += 1);
        for which in 0..count {
            for elem in (0..).step_by(4) {
                if !nudge(layer, which, elem, eps) {
                    break;
                }
                let fp = objective(&layer.fwd(x));
                nudge(layer, which, elem, -2.0 * eps);
                let fm = objective(&layer.fwd(x));
                nudge(layer, which, elem, eps);
                let fd = (fp - fm) / (2.0 * eps as f64);
                let an = grad_at(layer, which, elem) as f64;
                assert!((fd - an).abs() <= tol * (1.0 + fd.abs()), "param {which}[{elem}]: fd {fd} vs analytic {an}");
            }
        }
    }
}
