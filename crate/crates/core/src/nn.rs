//! Minimal dense layers and the Adam optimizer, generic over [`Scalar`].
//!
//! Models own their layers and expose parameters as ordered groups of flat
//! slices; a zeroed clone of a model doubles as its gradient buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Fully connected layer. `weights` is input-major: the outgoing weights of
/// input `i` occupy `weights[i * out_dim .. (i + 1) * out_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(in_dim)`.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || T::from_f64_lossy(rng.gen_range(-bound..bound));
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    pub fn forward(&self, input: &[T], out: &mut [T]) {
        debug_assert_eq!(input.len(), self.in_dim);
        out.copy_from_slice(&self.bias);
        for (i, &x) in input.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + x * w;
            }
        }
    }

    /// Forward pass for a binary input given by its active indices.
    pub fn forward_binary(&self, active: &[usize], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for &i in active {
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + w;
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// writes the gradient with respect to the input.
    pub fn backward(
        &self,
        input: &[T],
        grad_out: &[T],
        grad: &mut Dense<T>,
        grad_in: Option<&mut [T]>,
    ) {
        for (gb, &g) in grad.bias.iter_mut().zip(grad_out) {
            *gb = *gb + g;
        }
        for (i, &x) in input.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            let row = &mut grad.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (gw, &g) in row.iter_mut().zip(grad_out) {
                *gw = *gw + x * g;
            }
        }
        if let Some(gi) = grad_in {
            for (i, slot) in gi.iter_mut().enumerate() {
                let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
                *slot = row
                    .iter()
                    .zip(grad_out)
                    .fold(T::zero(), |acc, (&w, &g)| acc + w * g);
            }
        }
    }

    pub fn backward_binary(&self, active: &[usize], grad_out: &[T], grad: &mut Dense<T>) {
        for (gb, &g) in grad.bias.iter_mut().zip(grad_out) {
            *gb = *gb + g;
        }
        for &i in active {
            let row = &mut grad.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (gw, &g) in row.iter_mut().zip(grad_out) {
                *gw = *gw + g;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub fn relu_in_place<T: Scalar>(xs: &mut [T]) {
    for x in xs {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the post-activation value is not positive.
pub fn relu_backward_in_place<T: Scalar>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Ordered access to a model's trainable parameters.
pub trait Parameters<T: Scalar> {
    fn param_groups(&self) -> Vec<&[T]>;
    fn param_groups_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.param_groups().iter().map(|g| g.len()).sum()
    }

    fn flat_params(&self) -> Vec<T> {
        self.param_groups().concat()
    }

    fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.param_count(), "parameter length mismatch");
        let mut offset = 0;
        for g in self.param_groups_mut() {
            g.copy_from_slice(&flat[offset..offset + g.len()]);
            offset += g.len();
        }
    }

    fn zero_params(&mut self) {
        for g in self.param_groups_mut() {
            g.fill(T::zero());
        }
    }

    fn squared_norm(&self) -> T {
        self.param_groups()
            .iter()
            .flat_map(|g| g.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate: T::from_f64_lossy(learning_rate),
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            epsilon: T::from_f64_lossy(epsilon),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.param_groups();
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .param_groups_mut()
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic {
        x: Vec<f64>,
    }

    impl Parameters<f64> for Quadratic {
        fn param_groups(&self) -> Vec<&[f64]> {
            vec![&self.x]
        }
        fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.x]
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let mut p = Quadratic { x: vec![1.0, -2.0] };
        let g = Quadratic { x: vec![0.5, -4.0] };
        let mut adam = Adam::<f64>::new(0.1, 1e-8);
        adam.step(&mut p, &g);
        assert!((p.x[0] - 0.9).abs() < 1e-6);
        assert!((p.x[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Quadratic { x: vec![3.0, -5.0] };
        let mut adam = Adam::<f64>::new(0.05, 1e-8);
        for _ in 0..2000 {
            let g = Quadratic {
                x: p.x.iter().map(|v| 2.0 * v).collect(),
            };
            adam.step(&mut p, &g);
        }
        assert!(p.x.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn dense_sparse_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Dense::<f64>::uniform(6, 4, &mut rng);
        let input = [0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        layer.forward(&input, &mut a);
        layer.forward_binary(&[1, 4, 5], &mut b);
        assert_eq!(a, b);

        let g = [0.3, -0.2, 0.1, 1.0];
        let mut ga = Dense::zeros(6, 4);
        let mut gb = Dense::zeros(6, 4);
        layer.backward(&input, &g, &mut ga, None);
        layer.backward_binary(&[1, 4, 5], &g, &mut gb);
        assert_eq!(ga, gb);
    }

    #[test]
    fn dense_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Dense::<f64>::uniform(3, 2, &mut rng);
        let x = [0.2, -0.7, 1.1];
        let g = [1.0, -0.5];
        let mut grad = Dense::zeros(3, 2);
        let mut gin = [0.0; 3];
        layer.backward(&x, &g, &mut grad, Some(&mut gin));
        let h = 1e-6;
        for i in 0..3 {
            let f = |delta: f64| {
                let mut xi = x;
                xi[i] += delta;
                let mut out = [0.0; 2];
                layer.forward(&xi, &mut out);
                out[0] * g[0] + out[1] * g[1]
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(2.0f32) - 0.880797).abs() < 1e-5);
    }
}
