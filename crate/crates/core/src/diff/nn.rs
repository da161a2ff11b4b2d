use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{Tape, Var};
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

/// Anything holding trainable tensors in a fixed order.
pub trait Module {
    /// Named parameters in a stable order.
    fn named_parameters(&self) -> Vec<(String, &Tensor)>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameters(&self) -> Vec<&Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[1, out]`
    pub bias: Tensor,
}

/// Fully connected network with tanh hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Linear>,
}

/// Random matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    // Orthonormalize along the longer axis of a Gaussian matrix.
    let (n, m, transpose) = if rows >= cols {
        (cols, rows, true)
    } else {
        (rows, cols, false)
    };
    let mut vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = vecs.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= dot * y;
            }
        }
        let norm = vecs[i].iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|x| *x *= gain / norm);
    }
    let t = Tensor::from_rows(&vecs).expect("rectangular");
    if transpose {
        t.transpose()
    } else {
        t
    }
}

impl Mlp {
    /// Orthogonal init with gain √2 on hidden layers and `output_gain` on the
    /// last layer; biases start at zero.
    pub fn new(widths: &[usize], output_gain: f64, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let gain = if l + 1 == n { output_gain } else { 2f64.sqrt() };
                Linear {
                    weight: orthogonal(widths[l], widths[l + 1], gain, rng),
                    bias: Tensor::zeros(1, widths[l + 1]),
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// Rebuilds a network from explicit layers.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        let mut widths = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            let [fan_in, fan_out] = l.weight.shape();
            if l.bias.shape() != [1, fan_out] {
                return Err(Error::InvalidArgument("bias shape".into()));
            }
            if i == 0 {
                widths.push(fan_in);
            } else if widths[i] != fan_in {
                return Err(Error::InvalidArgument("layer widths do not chain".into()));
            }
            widths.push(fan_out);
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        Ok(Self { widths, layers })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    /// Σ (w_in·w_out + w_out) over layers.
    pub fn closed_form_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Places the parameters on `tape` as differentiable leaves.
    pub fn bind(&self, tape: &Tape) -> BoundMlp {
        BoundMlp {
            vars: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
        }
    }

    /// Tape-free forward pass for inference.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape {
                op: "mlp",
                lhs: x.shape(),
                rhs: [self.input_width(), self.output_width()],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = matmul(&h, &l.weight);
            let cols = z.cols();
            for (j, v) in z.data_mut().iter_mut().enumerate() {
                *v += l.bias.data()[j % cols];
                if i != last {
                    *v = v.tanh();
                }
            }
            h = z;
        }
        Ok(h)
    }
}

impl Module for Mlp {
    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("l{i}.weight"), &l.weight), (format!("l{i}.bias"), &l.bias)])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// An [`Mlp`]'s parameters as leaves of one tape.
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let last = self.vars.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.vars.iter().enumerate() {
            let z = tape.add(tape.matmul(h, w)?, b)?;
            h = if i == last { z } else { tape.tanh(z) };
        }
        Ok(h)
    }

    /// Leaves in [`Module::parameters`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: impl IntoIterator<Item = [usize; 2]>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|[r, c]| (Tensor::zeros(r, c), Tensor::zeros(r, c)))
            .unzip();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn for_module(lr: f64, module: &impl Module) -> Self {
        Self::new(lr, module.parameters().into_iter().map(|t| t.shape()))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Applies one update. Non-finite gradients reject the whole step and
    /// leave parameters and state untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam expects {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || g.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient passed to adam".into()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm across all tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 64, 64, 2], 1.0, &mut rng).unwrap();
        assert_eq!(mlp.param_count(), 4546);
        assert_eq!(Mlp::closed_form_count(&[3, 64, 64, 2]), 4546);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = orthogonal(8, 3, 1.0, &mut rng);
        let wtw = super::super::tensor::matmul_tn(&w, &w);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((wtw.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[3, 5, 2], 1.0, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.2, 0.3], [1.0, 0.5, -0.5]]).unwrap();
        let tape = Tape::new();
        let bound = mlp.bind(&tape);
        let xv = tape.constant(x.clone());
        let y = bound.forward(&tape, xv).unwrap();
        assert_eq!(tape.value(y), mlp.forward(&x).unwrap());
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let mut p = Tensor::row(&[1.0, -2.0]);
        let mut adam = Adam::new(0.1, [[1, 2]]);
        adam.step(vec![&mut p], &[Tensor::row(&[0.5, 0.5])]).unwrap();
        let (m0, v0) = (adam.moments().0[0].clone(), adam.moments().1[0].clone());
        adam.step(vec![&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        let (m1, v1) = adam.moments();
        for (a, b) in m1[0].data().iter().zip(m0.data()) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        for (a, b) in v1[0].data().iter().zip(v0.data()) {
            assert!((a - 0.999 * b).abs() < 1e-15);
        }
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_untouched_params_with_zero_grad_from_start() {
        let mut p = Tensor::row(&[1.0, -2.0]);
        let mut adam = Adam::new(0.1, [[1, 2]]);
        adam.step(vec![&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::row(&[0.0, 0.0]);
        let mut adam = Adam::new(0.01, [[1, 2]]);
        adam.step(vec![&mut p], &[Tensor::row(&[3.0, -0.2])]).unwrap();
        assert!((p.data()[0] + 0.01).abs() < 1e-8);
        assert!((p.data()[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = Tensor::row(&[1.0]);
        let mut adam = Adam::new(0.1, [[1, 1]]);
        assert!(adam.step(vec![&mut p], &[Tensor::row(&[f64::NAN])]).is_err());
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clip_examples() {
        let mut small = vec![Tensor::row(&[0.3])];
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small[0].data(), &[0.3]);

        let mut g = vec![Tensor::row(&[3.0, 4.0])];
        let n = clip_global_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.3).abs() < 1e-15);
        assert!((g[0].data()[1] - 0.4).abs() < 1e-15);
    }
}
