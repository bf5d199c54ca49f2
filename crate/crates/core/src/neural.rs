//! Feed-forward ReLU networks with hand-written reverse mode, the Adam
//! optimizer, and two-layer networks with the path norm.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const CHECKPOINT_MAGIC: &str = "feonet-checkpoint 1";

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Layer widths `(n₀, …, n_L)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub layer_sizes: Vec<usize>,
}

impl NetworkArchitecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(invalid("a network needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(invalid(format!("layer sizes must be positive: {layer_sizes:?}")));
        }
        Ok(Self { layer_sizes })
    }

    /// `input → hidden × depth → output`.
    pub fn mlp(input: usize, hidden: usize, depth: usize, output: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(output);
        Self::new(sizes)
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// Weights `W^ℓ` (`n_ℓ × n_{ℓ−1}`) and biases `b^ℓ`. Also used to hold
/// gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub arch: NetworkArchitecture,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// `inputs[ℓ]` is what layer `ℓ`'s weights multiply: the raw input for
    /// `ℓ = 0`, otherwise `σ` of the previous pre-activation.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl NetworkParameters {
    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        let s = &arch.layer_sizes;
        Self {
            arch: arch.clone(),
            weights: s.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: s.windows(2).map(|w| DVector::zeros(w[1])).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params()
    }

    /// Parameters in a fixed order: per layer, the weight matrix in
    /// column-major order followed by the bias.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn from_flat(arch: &NetworkArchitecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.n_params() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                arch.n_params(),
                flat.len()
            )));
        }
        let mut p = Self::zeros(arch);
        let mut off = 0;
        for s in p.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(p)
    }

    pub fn norm(&self) -> f64 {
        self.slices().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|x| x.is_finite())
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.arch.input_dim() {
            return Err(invalid(format!(
                "input has dimension {rows}, network expects {}",
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, omega: &[f64]) -> Result<Vec<f64>> {
        self.check_input(omega.len())?;
        let mut z = DVector::from_column_slice(omega);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            z = w * z + b;
            if l < last {
                z.apply(|v| *v = relu(*v));
            }
        }
        Ok(z.as_slice().to_vec())
    }

    /// Forward pass over the columns of `x` (`n₀ × B`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<ForwardTape> {
        self.check_input(x.nrows())?;
        let last = self.weights.len() - 1;
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(last);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &inputs[l];
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l == last {
                return Ok(ForwardTape { inputs, pre, output: z });
            }
            inputs.push(z.map(relu));
            pre.push(z);
        }
        unreachable!("a network has at least one layer")
    }

    /// Gradient of `Σ_j ⟨upstream_j, α̂(x_j)⟩` for the batch recorded in
    /// `tape`; `upstream` is `n_L × B`.
    pub fn backward(&self, tape: &ForwardTape, upstream: &DMatrix<f64>) -> NetworkParameters {
        let mut grad = NetworkParameters::zeros(&self.arch);
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            grad.weights[l] = &delta * tape.inputs[l].transpose();
            grad.biases[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                // subgradient 0 at the kink
                back.zip_apply(&tape.pre[l - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        grad
    }

    /// Gradient of `⟨upstream, α̂(ω)⟩` for one input.
    pub fn gradient(&self, omega: &[f64], upstream: &[f64]) -> Result<NetworkParameters> {
        if upstream.len() != self.arch.output_dim() {
            return Err(invalid("upstream has the wrong length"));
        }
        let x = DMatrix::from_column_slice(omega.len(), 1, omega);
        let tape = self.forward_batch(&x)?;
        Ok(self.backward(&tape, &DMatrix::from_column_slice(upstream.len(), 1, upstream)))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        let sizes: Vec<String> = self.arch.layer_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "layers {}", sizes.join(" ")).unwrap();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            writeln!(out, "W {l}").unwrap();
            for row in w.row_iter() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", vals.join(" ")).unwrap();
            }
            writeln!(out, "b {l}").unwrap();
            let vals: Vec<String> = b.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", vals.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing header"));
        }
        let sizes: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("layers "))
            .ok_or_else(|| bad("missing layer sizes"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad layer size")))
            .collect::<Result<_>>()?;
        let arch = NetworkArchitecture::new(sizes)?;
        let mut p = NetworkParameters::zeros(&arch);
        let parse_row = |line: Option<&str>, len: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .ok_or_else(|| bad("truncated"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(bad("row has the wrong length"));
            }
            Ok(vals)
        };
        for l in 0..arch.depth() {
            if lines.next() != Some(format!("W {l}").as_str()) {
                return Err(bad("expected weight block"));
            }
            let (rows, cols) = p.weights[l].shape();
            for i in 0..rows {
                let row = parse_row(lines.next(), cols)?;
                for (j, v) in row.into_iter().enumerate() {
                    p.weights[l][(i, j)] = v;
                }
            }
            if lines.next() != Some(format!("b {l}").as_str()) {
                return Err(bad("expected bias block"));
            }
            let n = p.biases[l].len();
            p.biases[l] = DVector::from_vec(parse_row(lines.next(), n)?);
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Weights uniform on `±√(3/fan_in)` (variance `1/fan_in`), biases zero.
pub fn init(arch: &NetworkArchitecture, seed: u64) -> NetworkParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParameters::zeros(arch);
    for w in &mut p.weights {
        let bound = (3.0 / w.ncols() as f64).sqrt();
        // row-major draw order, independent of the storage layout
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                w[(i, j)] = rng.random_range(-bound..bound);
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Running first and second moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over parameter slices.
pub fn adam_update<'a>(
    state: &mut AdamState,
    params: impl Iterator<Item = &'a mut [f64]>,
    grads: impl Iterator<Item = &'a [f64]>,
    hyper: &AdamHyper,
) -> Result<()> {
    let grads: Vec<&[f64]> = grads.collect();
    if let Some(bad) = grads.iter().copied().flatten().find(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            epoch: state.step as usize,
            reason: format!("non-finite gradient entry {bad}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let mut k = 0;
    for (p, g) in params.zip(grads) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * gi;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * gi * gi;
            *pi -= hyper.lr * (*m / c1) / ((*v / c2).sqrt() + hyper.eps);
            k += 1;
        }
    }
    Ok(())
}

pub fn optimizer_step(
    state: &mut AdamState,
    params: &mut NetworkParameters,
    grads: &NetworkParameters,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.arch != params.arch {
        return Err(invalid("gradient shape does not match parameters"));
    }
    adam_update(state, params.slices_mut(), grads.slices(), hyper)
}

/// `g(ω) = (1/n) Σ_j a_j σ(b_j·ω + c_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNetwork {
    pub a: DVector<f64>,
    /// Rows are the inner weights `b_j`.
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl TwoLayerNetwork {
    pub fn new(a: DVector<f64>, b: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = a.len();
        if n == 0 || b.nrows() != n || c.len() != n {
            return Err(invalid("two-layer network shapes disagree"));
        }
        Ok(Self { a, b, c })
    }

    /// Same scaling as [`init`] for the inner layer; outer weights uniform
    /// on `[−1, 1]`.
    pub fn init(width: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / input_dim as f64).sqrt();
        let b = DMatrix::from_fn(width, input_dim, |_, _| 0.0);
        let mut net = Self {
            a: DVector::zeros(width),
            b,
            c: DVector::zeros(width),
        };
        for j in 0..width {
            for k in 0..input_dim {
                net.b[(j, k)] = rng.random_range(-bound..bound);
            }
            net.c[j] = rng.random_range(-bound..bound);
            net.a[j] = rng.random_range(-1.0..1.0);
        }
        net
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn eval(&self, omega: &[f64]) -> f64 {
        let n = self.width();
        (0..n)
            .map(|j| {
                let z: f64 = self.b.row(j).iter().zip(omega).map(|(w, x)| w * x).sum::<f64>() + self.c[j];
                self.a[j] * relu(z)
            })
            .sum::<f64>()
            / n as f64
    }

    /// Values at the columns of `x` plus the hidden pre-activations.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut z = &self.b * x;
        for mut col in z.column_iter_mut() {
            col += &self.c;
        }
        let h = z.map(relu);
        let out = h.transpose() * &self.a / self.width() as f64;
        (out, z)
    }

    /// Gradient of `Σ_j w_j g(x_j)` as `(∂a, ∂b, ∂c)`.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        pre: &DMatrix<f64>,
        weights: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let inv_n = 1.0 / self.width() as f64;
        let h = pre.map(relu);
        let da = &h * weights * inv_n;
        let dz = DMatrix::from_fn(pre.nrows(), pre.ncols(), |j, s| {
            if pre[(j, s)] > 0.0 {
                self.a[j] * weights[s] * inv_n
            } else {
                0.0
            }
        });
        let db = &dz * x.transpose();
        let dc = dz.column_sum();
        (da, db, dc)
    }

    /// `(1/n) Σ_j |a_j| (‖b_j‖₁ + |c_j|)`.
    pub fn path_norm(&self) -> f64 {
        let n = self.width();
        (0..n)
            .map(|j| self.a[j].abs() * (self.b.row(j).iter().map(|v| v.abs()).sum::<f64>() + self.c[j].abs()))
            .sum::<f64>()
            / n as f64
    }

    /// Rescales `a` so the path norm does not exceed `bound`. Returns
    /// whether a rescale happened.
    pub fn project_path_norm(&mut self, bound: f64) -> bool {
        let norm = self.path_norm();
        if norm > bound {
            // scaling a is exactly homogeneous; the tiny shrink keeps the
            // result on the feasible side after rounding
            self.a *= bound / norm * (1.0 - 4.0 * f64::EPSILON);
            true
        } else {
            false
        }
    }

    /// An equivalent network one neuron wider.
    pub fn widen(&self) -> Self {
        let n = self.width();
        let scale = (n + 1) as f64 / n as f64;
        let mut a = self.a.clone() * scale;
        a = a.push(0.0);
        let b = self.b.clone().insert_row(n, 0.0);
        let c = self.c.clone().push(0.0);
        Self { a, b, c }
    }
}
