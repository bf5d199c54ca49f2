//! The forcing family `f(x, ω) = n₁ sin(m₁·x) + n₂ cos(m₂·x)` over a
//! compact parameter box, with seeded sampling and batched load vectors.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::LoadAssembler;
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingFamily {
    #[serde(rename = "sin_cos_1d")]
    SinCos1d,
    #[serde(rename = "sin_cos_2d")]
    SinCos2d,
}

/// Uniform distribution on `∏ [lo_i, hi_i]`, ω = (n₁, n₂, m₁, m₂).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingDistribution {
    pub family: ForcingFamily,
    pub boxes: Vec<[f64; 2]>,
    /// Unit directions multiplying m₁ and m₂ in 2D.
    #[serde(default = "default_directions")]
    pub directions: [[f64; 2]; 2],
}

fn default_directions() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSample {
    pub omega: Vec<f64>,
}

impl ForcingDistribution {
    pub fn new(family: ForcingFamily, boxes: Vec<[f64; 2]>) -> Result<Self> {
        let d = Self {
            family,
            boxes,
            directions: default_directions(),
        };
        d.validate()?;
        Ok(d)
    }

    /// n₁, n₂ ∈ [−1, 1] and m₁, m₂ ∈ [0, 2π].
    pub fn standard(family: ForcingFamily) -> Self {
        Self {
            family,
            boxes: vec![[-1.0, 1.0], [-1.0, 1.0], [0.0, 2.0 * PI], [0.0, 2.0 * PI]],
            directions: default_directions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != 4 {
            return Err(invalid(format!(
                "sin/cos forcing has 4 parameters, got {} ranges",
                self.boxes.len()
            )));
        }
        for (i, [lo, hi]) in self.boxes.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(invalid(format!("parameter {i} has invalid range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.boxes.len()
    }

    /// Lebesgue measure of the box within its affine hull: degenerate
    /// coordinates contribute a factor of one instead of zero.
    pub fn volume(&self) -> f64 {
        self.boxes.iter().map(|[lo, hi]| hi - lo).filter(|w| *w > 0.0).product()
    }

    pub fn contains(&self, omega: &[f64]) -> bool {
        omega.len() == self.dim() && omega.iter().zip(&self.boxes).all(|(w, [lo, hi])| lo <= w && w <= hi)
    }

    /// Affine map of the box onto `[−1, 1]^m`; degenerate coordinates map
    /// to zero.
    pub fn normalize(&self, omega: &[f64]) -> Vec<f64> {
        omega
            .iter()
            .zip(&self.boxes)
            .map(|(w, [lo, hi])| if hi > lo { 2.0 * (w - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect()
    }

    pub fn eval(&self, omega: &[f64], x: &[f64]) -> f64 {
        let (n1, n2, m1, m2) = (omega[0], omega[1], omega[2], omega[3]);
        match self.family {
            ForcingFamily::SinCos1d => n1 * (m1 * x[0]).sin() + n2 * (m2 * x[0]).cos(),
            ForcingFamily::SinCos2d => {
                let [d1, d2] = self.directions;
                let t1 = d1[0] * x[0] + d1[1] * x[1];
                let t2 = d2[0] * x[0] + d2[1] * x[1];
                n1 * (m1 * t1).sin() + n2 * (m2 * t2).cos()
            }
        }
    }
}

/// Draw number `index` of the stream keyed by `seed`. Draws are independent
/// of each other, so any subset can be regenerated without the rest.
pub fn sample(dist: &ForcingDistribution, seed: u64, index: u64) -> ForcingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let omega = dist
        .boxes
        .iter()
        .map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    ForcingSample { omega }
}

/// Draws `0..count` of the stream keyed by `seed`.
pub fn sample_many(dist: &ForcingDistribution, seed: u64, count: usize) -> Vec<ForcingSample> {
    (0..count as u64).map(|i| sample(dist, seed, i)).collect()
}

pub fn eval_f(dist: &ForcingDistribution, s: &ForcingSample, x: &[f64]) -> f64 {
    dist.eval(&s.omega, x)
}

/// Load vectors of all samples as the columns of an `N_h × M` matrix.
pub fn load_batch(mesh: &Mesh, dist: &ForcingDistribution, samples: &[ForcingSample]) -> DMatrix<f64> {
    load_batch_with(&LoadAssembler::new(mesh), dist, samples)
}

pub fn load_batch_with(
    assembler: &LoadAssembler,
    dist: &ForcingDistribution,
    samples: &[ForcingSample],
) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| assembler.assemble(&|x: &[f64]| dist.eval(&s.omega, x)))
        .collect();
    let n = assembler.n_dofs();
    DMatrix::from_fn(n, samples.len(), |i, j| cols[j][i])
}
