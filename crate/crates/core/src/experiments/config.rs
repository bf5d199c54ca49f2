use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::PdeCoefficients;
use crate::forcing::{ForcingDistribution, ForcingFamily};
use crate::mesh::{build_structured_square, build_uniform_interval, load_mesh, ElementFamily, Mesh, Rect};
use crate::neural::{AdamHyper, NetworkArchitecture};
use crate::spectral::PreconditionerKind;
use crate::training::{LossVariant, DEFAULT_SMOOTHING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[serde(rename = "poisson_2d")]
    Poisson2d,
    #[serde(rename = "conv_diff_1d")]
    ConvDiff1d,
    BarronRate,
    CondStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SweepAxis {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "samples_M")]
    SamplesM,
    #[serde(rename = "width_n")]
    WidthN,
    #[serde(rename = "elements_N")]
    ElementsN,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::SamplesM => "samples_M",
            Self::WidthN => "width_n",
            Self::ElementsN => "elements_N",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshShape {
    Interval,
    Square,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub shape: MeshShape,
    #[serde(default = "default_family")]
    pub family: ElementFamily,
    /// Interval end points.
    #[serde(default = "default_bounds")]
    pub bounds: [f64; 2],
    /// Elements along each axis; the elements sweep overrides it.
    #[serde(default)]
    pub elements: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole: Option<Rect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_family() -> ElementFamily {
    ElementFamily::P1Interval
}

fn default_bounds() -> [f64; 2] {
    [0.0, 1.0]
}

impl MeshConfig {
    /// The mesh with `elements` cells per axis, each split `refine` times.
    pub fn build(&self, elements: usize, refine: usize) -> Result<Mesh> {
        let n = elements * refine.max(1);
        match self.shape {
            MeshShape::Interval => build_uniform_interval(self.bounds[0], self.bounds[1], n, self.family),
            MeshShape::Square => build_structured_square(n, n, self.hole),
            MeshShape::File => {
                if refine > 1 {
                    return Err(Error::Config("file meshes cannot be refined".into()));
                }
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("mesh.path is missing".into()))?;
                load_mesh(path)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub diffusion: f64,
    #[serde(default)]
    pub convection: [f64; 2],
    #[serde(default)]
    pub reaction: f64,
}

impl PdeConfig {
    pub fn coefficients(&self) -> PdeCoefficients {
        PdeCoefficients::constant(self.diffusion, self.convection, self.reaction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing_eps: f64,
    #[serde(default = "default_loss")]
    pub loss: LossVariant,
    #[serde(default = "default_preconditioner")]
    pub preconditioner: PreconditionerKind,
}

fn default_lr() -> f64 {
    AdamHyper::default().lr
}
fn default_beta1() -> f64 {
    AdamHyper::default().beta1
}
fn default_beta2() -> f64 {
    AdamHyper::default().beta2
}
fn default_adam_eps() -> f64 {
    AdamHyper::default().eps
}
fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}
fn default_loss() -> LossVariant {
    LossVariant::Residual
}
fn default_preconditioner() -> PreconditionerKind {
    PreconditionerKind::Spai
}

impl TrainSection {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub size: usize,
    pub seed: u64,
}

/// Two-layer regression onto a teacher network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarronConfig {
    pub input_dim: usize,
    pub teacher_width: usize,
    pub teacher_seed: u64,
    pub widths: Vec<usize>,
    pub points: usize,
    pub test_points: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Projection radius for the student path norm; a multiple of the
    /// teacher's when negative.
    pub path_norm_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub mesh: MeshConfig,
    pub pde: PdeConfig,
    pub forcing: ForcingDistribution,
    pub network: NetworkConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub seeds: Vec<u64>,
    pub test: TestConfig,
    /// Refinement factor of the reference mesh; 0 compares against the
    /// Galerkin solution on the training mesh.
    #[serde(default)]
    pub fine_ratio: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barron: Option<BarronConfig>,
}

fn default_workers() -> usize {
    1
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML, ignoring
    /// where results go and how many workers produce them.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = 1;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.forcing.validate().map_err(|e| bad(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(bad("at least one seed is needed"));
        }
        if self.seeds.contains(&self.test.seed) {
            return Err(bad(format!("test seed {} is also a training seed", self.test.seed)));
        }
        if self.workers == 0 {
            return Err(bad("workers must be positive"));
        }
        let values = &self.sweep.values;
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("sweep values must be strictly increasing"));
        }
        match self.sweep.axis {
            SweepAxis::None if !values.is_empty() => return Err(bad("sweep axis none takes no values")),
            SweepAxis::None => {}
            _ if values.is_empty() => return Err(bad("sweep needs at least one value")),
            _ => {
                if values.iter().any(|v| !(*v >= 1.0) || v.fract() != 0.0) {
                    return Err(bad("sweep values must be positive integers"));
                }
            }
        }
        if self.sweep.axis == SweepAxis::ElementsN && self.mesh.shape == MeshShape::File {
            return Err(bad("an elements sweep needs a generated mesh"));
        }
        if self.sweep.axis != SweepAxis::ElementsN && self.mesh.shape != MeshShape::File && self.mesh.elements == 0 {
            return Err(bad("mesh.elements must be positive"));
        }
        if self.mesh.shape == MeshShape::File && self.fine_ratio > 1 {
            return Err(bad("file meshes have no refined reference"));
        }
        let dim = match self.forcing.family {
            ForcingFamily::SinCos1d => 1,
            ForcingFamily::SinCos2d => 2,
        };
        if self.mesh.shape != MeshShape::File && dim != self.mesh_dim() {
            return Err(bad("forcing family and mesh dimension disagree"));
        }
        if self.train.samples == 0 || self.test.size == 0 {
            return Err(bad("training and test sets must be non-empty"));
        }
        if !(self.train.lr > 0.0) {
            return Err(bad("learning rate must be positive"));
        }
        if self.network.hidden == 0 && self.sweep.axis != SweepAxis::WidthN {
            return Err(bad("network.hidden must be positive"));
        }
        if self.scenario == Scenario::BarronRate {
            let b = self
                .barron
                .as_ref()
                .ok_or_else(|| bad("barron_rate needs a [barron] table"))?;
            if b.widths.is_empty() || b.widths.windows(2).any(|w| w[0] >= w[1]) || b.widths[0] == 0 {
                return Err(bad("barron widths must be positive and strictly increasing"));
            }
            if b.input_dim == 0 || b.teacher_width == 0 || b.points == 0 || b.test_points == 0 {
                return Err(bad("barron sizes must be positive"));
            }
        }
        Ok(())
    }

    fn mesh_dim(&self) -> usize {
        match self.mesh.shape {
            MeshShape::Square => 2,
            _ => self.mesh.family.dim(),
        }
    }

    /// Mesh elements per axis at a sweep value.
    pub fn elements_at(&self, value: f64) -> usize {
        match self.sweep.axis {
            SweepAxis::ElementsN => value as usize,
            _ => self.mesh.elements,
        }
    }

    pub fn samples_at(&self, value: f64) -> usize {
        match self.sweep.axis {
            SweepAxis::SamplesM => value as usize,
            _ => self.train.samples,
        }
    }

    pub fn width_at(&self, value: f64) -> usize {
        match self.sweep.axis {
            SweepAxis::WidthN => value as usize,
            _ => self.network.hidden,
        }
    }

    pub fn architecture(&self, width: usize, n_dofs: usize) -> Result<NetworkArchitecture> {
        NetworkArchitecture::mlp(self.forcing.dim(), width, self.network.depth, n_dofs)
    }

    /// Sweep values, or a single placeholder for an unswept run.
    pub fn points(&self) -> Vec<f64> {
        match self.sweep.axis {
            SweepAxis::None => vec![0.0],
            _ => self.sweep.values.clone(),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["conv_diff_1d", "u_curve", "precond", "poisson_2d", "barron", "cond"]
    }

    pub fn preset(name: &str) -> Option<Self> {
        let conv_diff = Self {
            name: "conv_diff_1d".into(),
            scenario: Scenario::ConvDiff1d,
            mesh: MeshConfig {
                shape: MeshShape::Interval,
                family: ElementFamily::P1Interval,
                bounds: [-1.0, 1.0],
                elements: 32,
                hole: None,
                path: None,
            },
            pde: PdeConfig {
                diffusion: 0.1,
                convection: [-1.0, 0.0],
                reaction: 0.0,
            },
            forcing: ForcingDistribution {
                family: ForcingFamily::SinCos1d,
                boxes: vec![[-1.0, 1.0], [-1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
                directions: [[1.0, 0.0], [0.0, 1.0]],
            },
            network: NetworkConfig { hidden: 64, depth: 2 },
            train: TrainSection {
                samples: 80,
                batch_size: None,
                epochs: 10_000,
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                adam_eps: 1e-8,
                smoothing_eps: DEFAULT_SMOOTHING,
                loss: LossVariant::Residual,
                preconditioner: PreconditionerKind::Spai,
            },
            sweep: SweepConfig::default(),
            seeds: vec![0, 1, 2],
            test: TestConfig { size: 50, seed: 1000 },
            fine_ratio: 8,
            output_dir: None,
            workers: 1,
            barron: None,
        };
        let cfg = match name {
            "conv_diff_1d" => conv_diff,
            "u_curve" => {
                let mut c = conv_diff;
                c.name = "u_curve".into();
                c.train.epochs = 4000;
                c.sweep = SweepConfig {
                    axis: SweepAxis::ElementsN,
                    values: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
                };
                c
            }
            "precond" => {
                let mut c = conv_diff;
                c.name = "precond".into();
                c.mesh.elements = 256;
                c
            }
            "poisson_2d" => Self {
                name: "poisson_2d".into(),
                scenario: Scenario::Poisson2d,
                mesh: MeshConfig {
                    shape: MeshShape::Square,
                    family: ElementFamily::P1Triangle,
                    bounds: default_bounds(),
                    elements: 8,
                    hole: Some(Rect {
                        x0: 0.375,
                        x1: 0.625,
                        y0: 0.375,
                        y1: 0.625,
                    }),
                    path: None,
                },
                pde: PdeConfig {
                    diffusion: 1.0,
                    convection: [0.0, 0.0],
                    reaction: 0.0,
                },
                forcing: ForcingDistribution {
                    family: ForcingFamily::SinCos2d,
                    boxes: vec![[-1.0, 1.0], [-1.0, 1.0], [0.0, 2.0 * PI], [0.0, 2.0 * PI]],
                    directions: [[1.0, 0.0], [0.0, 1.0]],
                },
                sweep: SweepConfig {
                    axis: SweepAxis::SamplesM,
                    values: vec![10.0, 20.0, 40.0, 80.0],
                },
                fine_ratio: 0,
                ..conv_diff
            },
            "barron" => Self {
                name: "barron".into(),
                scenario: Scenario::BarronRate,
                seeds: vec![0, 1, 2],
                barron: Some(BarronConfig {
                    input_dim: 2,
                    teacher_width: 256,
                    teacher_seed: 7,
                    widths: vec![4, 8, 16, 32, 64, 128],
                    points: 1000,
                    test_points: 2000,
                    epochs: 3000,
                    lr: 1e-2,
                    path_norm_bound: -1.0,
                }),
                ..conv_diff
            },
            "cond" => {
                let mut c = conv_diff;
                c.name = "cond".into();
                c.scenario = Scenario::CondStudy;
                c.sweep = SweepConfig {
                    axis: SweepAxis::ElementsN,
                    values: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
                };
                c
            }
            _ => return None,
        };
        Some(cfg)
    }
}
