//! Single-head softmax attention, forward only. It exists as the quadratic
//! baseline for scaling measurements: `O(n²·d + n·d²)` time against the
//! scan's `O(n·d·N)`.

use alloc::vec;

use crate::error::Result;
use crate::ops;
use crate::params;
use crate::tensor::Tensor;

/// Fixed random query, key and value projections of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRef {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl AttentionRef {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = crate::seeded_rng(seed);
        Self {
            wq: params::fan_in_uniform([d, d], d, &mut rng),
            wk: params::fan_in_uniform([d, d], d, &mut rng),
            wv: params::fan_in_uniform([d, d], d, &mut rng),
        }
    }

    /// `softmax(Q·Kᵀ/√d)·V` for `x: [n,d]`.
    ///
    /// Scores are produced one query row at a time, so memory stays `O(n·d)`
    /// while time is quadratic in `n`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let q = ops::matmul(x, &self.wq)?;
        let k = ops::matmul(x, &self.wk)?;
        let v = ops::matmul(x, &self.wv)?;
        let (n, d) = q.dims2()?;
        let scale = 1.0 / libm::sqrt(d as f64);
        let mut out = vec![0.0; n * d];
        let mut scores = vec![0.0; n];
        for i in 0..n {
            let qi = &q.data()[i * d..(i + 1) * d];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k.data()[j * d..(j + 1) * d];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            ops::softmax_in_place(&mut scores);
            let oi = &mut out[i * d..(i + 1) * d];
            for (j, &p) in scores.iter().enumerate() {
                let vj = &v.data()[j * d..(j + 1) * d];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += p * vv;
                }
            }
        }
        Tensor::new([n, d], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_returns_its_value_projection() {
        let att = AttentionRef::new(3, 1);
        let x = Tensor::new([1, 3], vec![0.2, -0.4, 0.9]).unwrap();
        let y = att.forward(&x).unwrap();
        let v = ops::matmul(&x, &att.wv).unwrap();
        assert!(y.max_abs_diff(&v).unwrap() < 1e-15);
    }

    #[test]
    fn matches_naive_three_loop_attention() {
        let att = AttentionRef::new(3, 2);
        let mut rng = crate::seeded_rng(3);
        let x = Tensor::uniform([4, 3], -1.0, 1.0, &mut rng).unwrap();
        let proj = |w: &Tensor| {
            let mut m = [[0.0; 3]; 4];
            for i in 0..4 {
                for j in 0..3 {
                    for k in 0..3 {
                        m[i][j] += x.at(&[i, k]) * w.at(&[k, j]);
                    }
                }
            }
            m
        };
        let (q, k, v) = (proj(&att.wq), proj(&att.wk), proj(&att.wv));
        let y = att.forward(&x).unwrap();
        for i in 0..4 {
            let mut s = [0.0; 4];
            for j in 0..4 {
                for c in 0..3 {
                    s[j] += q[i][c] * k[j][c];
                }
                s[j] /= libm::sqrt(3.0);
            }
            let z: f64 = s.iter().map(|v| libm::exp(*v)).sum();
            for c in 0..3 {
                let want: f64 = (0..4).map(|j| libm::exp(s[j]) / z * v[j][c]).sum();
                assert!((y.at(&[i, c]) - want).abs() < 1e-12);
            }
        }
    }
}
