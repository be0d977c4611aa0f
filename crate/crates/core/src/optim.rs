//! Training machinery shared by both models: row-sparse gradients, a lazy
//! adaptive-moment optimizer with L1/L2 penalties, and finite-difference
//! gradient checking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sign;

/// A flat parameter block viewed as rows of `width` values.
pub struct Block<'a> {
    pub values: &'a mut [f64],
    pub width: usize,
}

/// Models expose their parameters as an ordered list of blocks. Gradients
/// use the same order.
pub trait Trainable {
    fn blocks(&mut self) -> Vec<Block<'_>>;

    /// Row widths of every block, in order.
    fn block_widths(&mut self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.width).collect()
    }
}

/// Gradient of one block; only touched rows are stored.
#[derive(Debug, Clone, Default)]
pub struct BlockGrad {
    width: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl BlockGrad {
    pub fn new(width: usize) -> Self {
        BlockGrad {
            width,
            rows: BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let w = self.width;
        self.rows.entry(row).or_insert_with(|| vec![0.0; w])
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        self.row_mut(row)[col] += v;
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows.get(&row).map_or(0.0, |r| r[col])
    }

    fn merge_scaled(&mut self, other: &BlockGrad, scale: f64) {
        for (r, vals) in other.rows() {
            let dst = self.row_mut(r);
            for (d, v) in dst.iter_mut().zip(vals) {
                *d += scale * v;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.rows.values().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Grads {
    pub blocks: Vec<BlockGrad>,
}

impl Grads {
    pub fn zeros(widths: &[usize]) -> Self {
        Grads {
            blocks: widths.iter().map(|&w| BlockGrad::new(w)).collect(),
        }
    }

    pub fn merge_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.merge_scaled(b, scale);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(BlockGrad::all_finite)
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Margin multiplier applied to the per-negative-type margins.
    pub gamma: f64,
    pub learning_rate: f64,
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub word_dropout: f64,
    pub batch_size: usize,
    /// Zero means one pass over all training queries.
    pub triplets_per_epoch: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 1.0,
            learning_rate: 0.001,
            l1_weight: 1e-7,
            l2_weight: 1e-5,
            word_dropout: 0.1,
            batch_size: 256,
            triplets_per_epoch: 0,
            epochs: 10,
            rng_seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("gamma", self.gamma),
            ("learning_rate", self.learning_rate),
            ("l1_weight", self.l1_weight),
            ("l2_weight", self.l2_weight),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(Error::Config(format!(
                "word_dropout must be in [0, 1), got {}",
                self.word_dropout
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Adaptive moment estimation with lazy (touched-rows-only) updates. L1 and
/// L2 penalties are added to the gradient of every updated row.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    l1: f64,
    l2: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: Trainable>(params: &mut P, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.blocks().iter().map(|b| b.values.len()).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            l1: cfg.l1_weight,
            l2: cfg.l2_weight,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step<P: Trainable>(&mut self, params: &mut P, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (bi, (block, grad)) in params.blocks().into_iter().zip(&grads.blocks).enumerate() {
            let m = &mut self.first[bi];
            let v = &mut self.second[bi];
            for (row, g) in grad.rows() {
                let start = row * block.width;
                for (j, &gj) in g.iter().enumerate() {
                    let k = start + j;
                    let theta = block.values[k];
                    let g = gj + 2.0 * self.l2 * theta + self.l1 * sign(theta);
                    m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                    v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                    let mhat = m[k] / c1;
                    let vhat = v[k] / c2;
                    block.values[k] = theta - self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub parameters_checked: usize,
    pub loss: f64,
}

/// Absolute floor of the relative-error denominator, so that gradients that
/// are zero up to rounding are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss` for every
/// scalar parameter of `params`.
pub fn finite_difference_check<P, F>(params: &P, analytic: &Grads, loss: F, eps: f64) -> GradCheck
where
    P: Trainable + Clone,
    F: Fn(&P) -> f64,
{
    let mut work = params.clone();
    let base = loss(&work);
    let shapes: Vec<(usize, usize)> = work
        .blocks()
        .iter()
        .map(|b| (b.values.len(), b.width))
        .collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (bi, &(len, width)) in shapes.iter().enumerate() {
        for k in 0..len {
            let orig = work.blocks()[bi].values[k];
            work.blocks()[bi].values[k] = orig + eps;
            let plus = loss(&work);
            work.blocks()[bi].values[k] = orig - eps;
            let minus = loss(&work);
            work.blocks()[bi].values[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic.blocks[bi].get(k / width, k % width);
            let denom = exact.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max((exact - numeric).abs() / denom);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: worst,
        parameters_checked: checked,
        loss: base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Quad {
        x: Vec<f64>,
    }

    impl Trainable for Quad {
        fn blocks(&mut self) -> Vec<Block<'_>> {
            vec![Block {
                values: &mut self.x,
                width: 1,
            }]
        }
    }

    fn quad_grads(q: &Quad) -> Grads {
        let mut g = Grads::zeros(&[1]);
        for (i, x) in q.x.iter().enumerate() {
            g.blocks[0].add(i, 0, 2.0 * (x - 3.0));
        }
        g
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut q = Quad { x: vec![0.0, 10.0] };
        let cfg = TrainConfig {
            learning_rate: 0.1,
            l1_weight: 0.0,
            l2_weight: 0.0,
            ..Default::default()
        };
        let mut opt = Adam::new(&mut q, &cfg);
        for _ in 0..2000 {
            let g = quad_grads(&q);
            opt.step(&mut q, &g);
        }
        for x in &q.x {
            assert!((x - 3.0).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut q = Quad { x: vec![0.5, -2.0] };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut opt = Adam::new(&mut q, &cfg);
        let g = quad_grads(&q);
        opt.step(&mut q, &g);
        assert_eq!(q.x, vec![0.5, -2.0]);
    }

    #[test]
    fn untouched_rows_are_not_updated() {
        let mut q = Quad { x: vec![1.0, 1.0] };
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut opt = Adam::new(&mut q, &cfg);
        let mut g = Grads::zeros(&[1]);
        g.blocks[0].add(0, 0, 1.0);
        opt.step(&mut q, &g);
        assert!(q.x[0] < 1.0);
        assert_eq!(q.x[1], 1.0);
    }

    #[test]
    fn finite_differences_agree_on_quadratic() {
        let q = Quad { x: vec![0.3, -1.7] };
        let check = finite_difference_check(
            &q,
            &quad_grads(&q),
            |p| p.x.iter().map(|x| (x - 3.0).powi(2)).sum(),
            1e-5,
        );
        assert_eq!(check.parameters_checked, 2);
        assert!(check.max_rel_error < 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            word_dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
