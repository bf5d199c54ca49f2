//! Configuration-driven studies that wire the other modules together and
//! write plot-ready CSV.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! config.toml                       resolved configuration
//! sweep.csv | precond.csv | cond.csv | barron.csv
//! runs/<axis>_<value>_seed<s>/train.csv, errors.csv
//! timings.log                       wall-clock seconds (not byte-stable)
//! ```

mod barron;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

pub use barron::{barron_experiment, BarronReport, BarronRow};
pub use config::{
    BarronConfig, ExperimentConfig, MeshConfig, MeshShape, NetworkConfig, PdeConfig, Scenario, SweepAxis, SweepConfig,
    TestConfig, TrainSection,
};

use crate::error::{Error, Result};
use crate::evaluation::{fit_rate, RateFit, ReferenceSet};
use crate::fem::{assemble, AssembledSystem, LoadAssembler};
use crate::forcing::{load_batch_with, sample_many};
use crate::spectral::{build_preconditioner, spectral_summary, Preconditioner, PreconditionerKind, SpectralSummary};
use crate::training::{train_on, LossKind, LossVariant, TrainConfig, TrainReport};

/// One trained model evaluated at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub n_h: usize,
    pub elements: usize,
    pub samples: usize,
    pub width: usize,
    pub n_params: usize,
    pub loss: LossVariant,
    pub final_loss: f64,
    /// Against the refined reference when there is one, else against the
    /// Galerkin solution.
    pub mean_rel_l2: f64,
    pub galerkin_rel_l2: f64,
    /// `κ(A)`.
    pub kappa: f64,
    /// Condition number of the matrix inside the loss.
    pub kappa_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Seed-averaged `mean_rel_l2` per sweep value, in sweep order.
    pub fn mean_by_value(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(v, _, _)| *v == r.value) {
                Some(slot) => {
                    slot.1 += r.mean_rel_l2;
                    slot.2 += 1;
                }
                None => out.push((r.value, r.mean_rel_l2, 1)),
            }
        }
        out.into_iter().map(|(v, s, k)| (v, s / k as f64)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "config_hash,axis,value,seed,n_h,elements,samples,width,n_params,loss,final_loss,mean_rel_l2,galerkin_rel_l2,kappa,kappa_loss\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{:e},{:e},{:e},{:e},{:e}",
                self.config_hash,
                r.axis.name(),
                r.value,
                r.seed,
                r.n_h,
                r.elements,
                r.samples,
                r.width,
                r.n_params,
                loss_name(r.loss),
                r.final_loss,
                r.mean_rel_l2,
                r.galerkin_rel_l2,
                r.kappa,
                r.kappa_loss
            )
            .unwrap();
        }
        s
    }
}

fn loss_name(l: LossVariant) -> &'static str {
    match l {
        LossVariant::Residual => "residual",
        LossVariant::NormalEquations => "normal_equations",
        LossVariant::Preconditioned => "preconditioned",
    }
}

/// Everything shared by the seeds of one sweep point.
struct Point {
    value: f64,
    elements: usize,
    system: AssembledSystem,
    loads: LoadAssembler,
    refs: ReferenceSet,
    preconditioner: Option<Preconditioner>,
    kappa: f64,
}

fn with_point<T>(axis: SweepAxis, value: f64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::SweepPoint { .. } => e,
        e => Error::SweepPoint {
            axis: axis.name().into(),
            value,
            source: Box::new(e),
        },
    })
}

fn summary(a: &crate::sparse::CsrMatrix) -> Result<SpectralSummary> {
    spectral_summary(a, a.is_symmetric(1e-12))
}

fn prepare(cfg: &ExperimentConfig, value: f64, precond: Option<PreconditionerKind>) -> Result<Point> {
    let elements = cfg.elements_at(value);
    let mesh = cfg.mesh.build(elements, 1)?;
    let coeffs = cfg.pde.coefficients();
    let system = assemble(&mesh, &coeffs)?;
    let fine = if cfg.fine_ratio > 1 {
        Some(assemble(&cfg.mesh.build(elements, cfg.fine_ratio)?, &coeffs)?)
    } else {
        None
    };
    let test = sample_many(&cfg.forcing, cfg.test.seed, cfg.test.size);
    let refs = ReferenceSet::new(&system, &cfg.forcing, test, fine.as_ref())?;
    let preconditioner = match precond {
        Some(kind) => Some(build_preconditioner(&system.a, kind, None)?),
        None => None,
    };
    let kappa = summary(&system.a)?.kappa;
    Ok(Point {
        value,
        elements,
        loads: LoadAssembler::new(&mesh),
        system,
        refs,
        preconditioner,
        kappa,
    })
}

fn loss_kind(cfg: &ExperimentConfig, variant: LossVariant, p: Option<&Preconditioner>) -> Result<LossKind> {
    let mut kind = match variant {
        LossVariant::Residual => LossKind::residual(),
        LossVariant::NormalEquations => LossKind::normal_equations(),
        LossVariant::Preconditioned => LossKind::preconditioned(
            p.cloned()
                .ok_or_else(|| Error::Config("preconditioned loss without a preconditioner".into()))?,
        ),
    };
    kind.smoothing_eps = cfg.train.smoothing_eps;
    Ok(kind)
}

struct RunOutput {
    row: SweepRow,
    report: TrainReport,
    errors_csv: Vec<u8>,
}

fn train_point(cfg: &ExperimentConfig, point: &Point, seed: u64, variant: LossVariant) -> Result<RunOutput> {
    let start = Instant::now();
    let samples_m = cfg.samples_at(point.value);
    let width = cfg.width_at(point.value);
    let n_h = point.system.n_dofs();
    let arch = cfg.architecture(width, n_h)?;
    let mut tc = TrainConfig::new(arch, samples_m, cfg.train.epochs, seed);
    tc.batch_size = cfg.train.batch_size.map(|b| b.min(samples_m));
    tc.adam = cfg.train.adam();
    tc.loss = loss_kind(cfg, variant, point.preconditioner.as_ref())?;
    let samples = sample_many(&cfg.forcing, seed, samples_m);
    let f = load_batch_with(&point.loads, &cfg.forcing, &samples);
    let report = train_on(&point.system, &cfg.forcing, samples, &f, &tc)?;
    let pred = report.model.predict_batch(&point.refs.samples)?;
    let galerkin = point.refs.galerkin_error(&pred);
    let mut primary = point.refs.total_error(&pred).unwrap_or_else(|| galerkin.clone());
    let kappa_loss = match variant {
        LossVariant::Residual => point.kappa,
        LossVariant::NormalEquations => point.kappa * point.kappa,
        LossVariant::Preconditioned => {
            summary(&tc.loss.preconditioner.as_ref().unwrap().apply_left(&point.system.a))?.kappa
        }
    };
    primary.kappa = point.kappa;
    primary.n_h = n_h;
    primary.n_params = tc.architecture.n_params();
    primary.m = samples_m;
    let mut errors_csv = Vec::new();
    primary.write_csv(&mut errors_csv)?;
    let row = SweepRow {
        axis: cfg.sweep.axis,
        value: point.value,
        seed,
        n_h,
        elements: point.elements,
        samples: samples_m,
        width,
        n_params: tc.architecture.n_params(),
        loss: variant,
        final_loss: report.final_loss,
        mean_rel_l2: primary.mean_rel_l2,
        galerkin_rel_l2: galerkin.mean_rel_l2,
        kappa: point.kappa,
        kappa_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        row,
        report,
        errors_csv,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn prepare_all(cfg: &ExperimentConfig, precond: Option<PreconditionerKind>) -> Result<Vec<Point>> {
    let axis = cfg.sweep.axis;
    pool(cfg.workers)?.install(|| {
        cfg.points()
            .par_iter()
            .map(|&v| with_point(axis, v, prepare(cfg, v, precond)))
            .collect()
    })
}

/// Trains every (point, seed) pair with one loss. Results come back in sweep
/// order regardless of scheduling.
fn train_all(cfg: &ExperimentConfig, points: &[Point], variant: LossVariant) -> Result<Vec<RunOutput>> {
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let axis = cfg.sweep.axis;
    pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| with_point(axis, points[p].value, train_point(cfg, &points[p], s, variant)))
            .collect()
    })
}

/// Puts `config_hash` in front of every line of a CSV.
fn with_hash(hash: &str, csv: &[u8]) -> String {
    let text = String::from_utf8_lossy(csv);
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let key = if i == 0 { "config_hash" } else { hash };
        writeln!(out, "{key},{line}").unwrap();
    }
    out
}

fn run_dir_name(axis: SweepAxis, value: f64, seed: u64, arm: Option<&str>) -> String {
    let base = format!("{}_{}_seed{}", axis.name(), value, seed);
    match arm {
        Some(a) => format!("{a}/{base}"),
        None => base,
    }
}

fn write_runs(dir: &Path, hash: &str, runs: &[RunOutput], arm: Option<&str>) -> Result<String> {
    let mut timings = String::new();
    for r in runs {
        let d = dir
            .join("runs")
            .join(run_dir_name(r.row.axis, r.row.value, r.row.seed, arm));
        fs::create_dir_all(&d)?;
        let mut train = Vec::new();
        r.report.write_csv(&mut train)?;
        fs::write(d.join("train.csv"), with_hash(hash, &train))?;
        fs::write(d.join("errors.csv"), with_hash(hash, &r.errors_csv))?;
        writeln!(
            timings,
            "{} {}={} seed={} seconds={:.3}",
            arm.unwrap_or("run"),
            r.row.axis.name(),
            r.row.value,
            r.row.seed,
            r.row.seconds
        )
        .unwrap();
    }
    Ok(timings)
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut c = cfg.clone();
    c.output_dir = None;
    fs::write(dir.join("config.toml"), c.to_toml())?;
    Ok(())
}

/// Sweep over the configured axis: for each point and seed assemble, train,
/// and evaluate on held-out samples.
pub fn run(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let variant = cfg.train.loss;
    let precond = (variant == LossVariant::Preconditioned).then_some(cfg.train.preconditioner);
    let points = prepare_all(cfg, precond)?;
    let runs = train_all(cfg, &points, variant)?;
    let result = SweepResult {
        config_hash: cfg.hash(),
        rows: runs.iter().map(|r| r.row.clone()).collect(),
    };
    if let Some(dir) = &cfg.output_dir {
        write_config(dir, cfg)?;
        fs::write(dir.join("sweep.csv"), result.to_csv())?;
        let timings = write_runs(dir, &result.config_hash, &runs, None)?;
        fs::write(dir.join("timings.log"), timings)?;
    }
    Ok(result)
}

/// Residual-loss and preconditioned-loss arms on identical samples and seeds.
#[derive(Debug, Clone)]
pub struct PrecondComparison {
    pub residual: SweepResult,
    pub preconditioned: SweepResult,
    /// `(value, κ(A), κ(P⁻¹A))` per sweep point.
    pub kappas: Vec<(f64, f64, f64)>,
    pub loss_histories: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PrecondComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_hash,arm,axis,value,seed,n_h,final_loss,mean_rel_l2,kappa_a,kappa_pa\n");
        for (arm, res) in [("residual", &self.residual), ("preconditioned", &self.preconditioned)] {
            for r in &res.rows {
                let (_, ka, kpa) = self.kappas.iter().find(|k| k.0 == r.value).copied().unwrap_or_default();
                writeln!(
                    s,
                    "{},{arm},{},{},{},{},{:e},{:e},{ka:e},{kpa:e}",
                    res.config_hash,
                    r.axis.name(),
                    r.value,
                    r.seed,
                    r.n_h,
                    r.final_loss,
                    r.mean_rel_l2
                )
                .unwrap();
            }
        }
        s
    }
}

pub fn compare_preconditioning(cfg: &ExperimentConfig) -> Result<PrecondComparison> {
    cfg.validate()?;
    let points = prepare_all(cfg, Some(cfg.train.preconditioner))?;
    let plain = train_all(cfg, &points, LossVariant::Residual)?;
    let pre = train_all(cfg, &points, LossVariant::Preconditioned)?;
    let hash = cfg.hash();
    let kappas = points
        .iter()
        .map(|p| {
            let pa = p.preconditioner.as_ref().unwrap().apply_left(&p.system.a);
            Ok((p.value, p.kappa, summary(&pa)?.kappa))
        })
        .collect::<Result<Vec<_>>>()?;
    let cmp = PrecondComparison {
        residual: SweepResult {
            config_hash: hash.clone(),
            rows: plain.iter().map(|r| r.row.clone()).collect(),
        },
        preconditioned: SweepResult {
            config_hash: hash.clone(),
            rows: pre.iter().map(|r| r.row.clone()).collect(),
        },
        kappas,
        loss_histories: plain
            .iter()
            .zip(&pre)
            .map(|(a, b)| (a.report.loss_history.clone(), b.report.loss_history.clone()))
            .collect(),
    };
    if let Some(dir) = &cfg.output_dir {
        write_config(dir, cfg)?;
        fs::write(dir.join("precond.csv"), cmp.to_csv())?;
        let mut timings = write_runs(dir, &hash, &plain, Some("residual"))?;
        timings += &write_runs(dir, &hash, &pre, Some("preconditioned"))?;
        fs::write(dir.join("timings.log"), timings)?;
    }
    Ok(cmp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondRow {
    pub elements: usize,
    pub n_h: usize,
    pub h: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub kappa_preconditioned: f64,
}

#[derive(Debug, Clone)]
pub struct CondStudy {
    pub config_hash: String,
    pub rows: Vec<CondRow>,
    /// Slope of `κ(A)` against `h`; `None` with fewer than three points.
    pub kappa_fit: Option<RateFit>,
}

impl CondStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_hash,elements,n_h,h,lambda_min,lambda_max,kappa,kappa_preconditioned\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:e},{:e}",
                self.config_hash, r.elements, r.n_h, r.h, r.lambda_min, r.lambda_max, r.kappa, r.kappa_preconditioned
            )
            .unwrap();
        }
        s
    }
}

/// Extreme eigenvalues and condition numbers of `A` and `P⁻¹A` over the
/// sweep points, without any training.
pub fn condition_study(cfg: &ExperimentConfig) -> Result<CondStudy> {
    cfg.validate()?;
    let axis = cfg.sweep.axis;
    let coeffs = cfg.pde.coefficients();
    let rows = pool(cfg.workers)?.install(|| {
        cfg.points()
            .par_iter()
            .map(|&v| {
                with_point(axis, v, {
                    let elements = cfg.elements_at(v);
                    (|| {
                        let mesh = cfg.mesh.build(elements, 1)?;
                        let system = assemble(&mesh, &coeffs)?;
                        let s = summary(&system.a)?;
                        let p = build_preconditioner(&system.a, cfg.train.preconditioner, None)?;
                        let sp = summary(&p.apply_left(&system.a))?;
                        Ok(CondRow {
                            elements,
                            n_h: system.n_dofs(),
                            h: mesh.metrics().h,
                            lambda_min: s.lambda_min,
                            lambda_max: s.lambda_max,
                            kappa: s.kappa,
                            kappa_preconditioned: sp.kappa,
                        })
                    })()
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let kappa_fit = if rows.len() >= 3 {
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let ks: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
        Some(fit_rate(&hs, &ks)?)
    } else {
        None
    };
    let study = CondStudy {
        config_hash: cfg.hash(),
        rows,
        kappa_fit,
    };
    if let Some(dir) = &cfg.output_dir {
        write_config(dir, cfg)?;
        fs::write(dir.join("cond.csv"), study.to_csv())?;
    }
    Ok(study)
}

/// What `feonet run` does for each scenario.
#[derive(Debug, Clone)]
pub enum Outcome {
    Sweep(SweepResult),
    Barron(BarronReport),
    Cond(CondStudy),
}

pub fn run_scenario(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.scenario {
        Scenario::Poisson2d | Scenario::ConvDiff1d => run(cfg).map(Outcome::Sweep),
        Scenario::BarronRate => barron_experiment(cfg).map(Outcome::Barron),
        Scenario::CondStudy => condition_study(cfg).map(Outcome::Cond),
    }
}
