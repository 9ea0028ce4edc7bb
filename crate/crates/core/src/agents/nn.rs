//! Layer building blocks shared by the speaker and the listener.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::grad::{Tape, Tensor, Var};
use crate::world::Object;

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform_init<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// `n x n` orthogonal matrix (Gram-Schmidt on a Gaussian draw).
pub(crate) fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Recurrent weight `[h, 3h]` made of three orthogonal `h x h` gate blocks.
pub(crate) fn orthogonal_gates<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Tensor {
    let blocks: Vec<_> = (0..3).map(|_| orthogonal(hidden, rng)).collect();
    let mut data = Vec::with_capacity(hidden * 3 * hidden);
    for r in 0..hidden {
        for block in &blocks {
            data.extend_from_slice(&block[r]);
        }
    }
    Tensor::new(hidden, 3 * hidden, data).expect("sized")
}

/// One-hot-per-attribute encoding of a batch of objects, `[n, A * Va]`.
pub(crate) fn one_hot(objects: &[&Object], values: usize) -> Tensor {
    let attrs = objects.first().map_or(0, |o| o.values.len());
    let width = attrs * values;
    let mut t = Tensor::zeros(objects.len(), width);
    for (r, o) in objects.iter().enumerate() {
        for (a, &v) in o.values.iter().enumerate() {
            t.data_mut()[r * width + a * values + v] = 1.0;
        }
    }
    t
}

/// Gated recurrent unit parameters on a tape. Gate order in the fused
/// weights is reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GruVars {
    pub wx: Var,
    pub wh: Var,
    pub bx: Var,
    pub bh: Var,
    pub hidden: usize,
}

impl GruVars {
    /// `h' = (1 - z) * n + z * h`, with
    /// `r = sigmoid(x Wr + h Ur)`, `z = sigmoid(x Wz + h Uz)`,
    /// `n = tanh(x Wn + r * (h Un))` (biases included in each product).
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let gx = tape.matmul(x, self.wx)?;
        let gx = tape.add_row(gx, self.bx)?;
        let gh = tape.matmul(h, self.wh)?;
        let gh = tape.add_row(gh, self.bh)?;

        let xr = tape.slice_cols(gx, 0, n)?;
        let hr = tape.slice_cols(gh, 0, n)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;

        let xz = tape.slice_cols(gx, n, n)?;
        let hz = tape.slice_cols(gh, n, n)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;

        let xn = tape.slice_cols(gx, 2 * n, n)?;
        let hn = tape.slice_cols(gh, 2 * n, n)?;
        let rh = tape.mul(r, hn)?;
        let cand = tape.add(xn, rh)?;
        let cand = tape.tanh(cand)?;

        let diff = tape.sub(h, cand)?;
        let zd = tape.mul(z, diff)?;
        tape.add(cand, zd)
    }
}

/// Categorical entropy of a probability vector, in nats.
pub fn categorical_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Row-wise entropy `-sum p log p` of a `[n, c]` log-probability matrix, `[n, 1]`.
pub fn row_entropy(tape: &mut Tape, log_probs: Var) -> Result<Var> {
    let p = tape.exp(log_probs)?;
    let plogp = tape.mul(p, log_probs)?;
    let s = tape.sum_cols(plogp)?;
    tape.neg(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let q = orthogonal(6, &mut crate::rng::seeded(0));
        for i in 0..6 {
            for j in 0..6 {
                let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn entropy_examples() {
        assert!((categorical_entropy(&[0.01; 100]) - 100f64.ln()).abs() < 1e-12);
        assert!((categorical_entropy(&[0.1; 10]) - 2.302585092994046).abs() < 1e-12);
        assert_eq!(categorical_entropy(&[0.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn one_hot_layout() {
        let a = Object::new(vec![1, 0]);
        let b = Object::new(vec![2, 2]);
        let t = one_hot(&[&a, &b], 3);
        assert_eq!(t.shape(), [2, 6]);
        assert_eq!(t.data(), &[0., 1., 0., 1., 0., 0., 0., 0., 1., 0., 0., 1.]);
    }
}
