//! Width study for two-layer ReLU networks fitted to a teacher network by
//! least squares, with the student's path norm projected after each step.

use std::fmt::Write as _;
use std::fs;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{BarronConfig, ExperimentConfig};
use super::{pool, write_config};
use crate::error::{Error, Result};
use crate::evaluation::{fit_rate, RateFit};
use crate::neural::{adam_update, AdamHyper, AdamState, TwoLayerNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct BarronRow {
    pub width: usize,
    pub seed: u64,
    /// `‖g − g_n‖²` over `[−1, 1]^d`.
    pub sq_error: f64,
    pub path_norm: f64,
    pub bound: f64,
    /// Largest path norm seen after any projection.
    pub max_path_norm: f64,
    pub projections: usize,
}

#[derive(Debug, Clone)]
pub struct BarronReport {
    pub config_hash: String,
    pub rows: Vec<BarronRow>,
    /// Seed-averaged squared error per width.
    pub means: Vec<(usize, f64)>,
    pub fit: RateFit,
}

impl BarronReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_hash,width,seed,sq_l2_error,path_norm,max_path_norm,bound,projections\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:e},{}",
                self.config_hash, r.width, r.seed, r.sq_error, r.path_norm, r.max_path_norm, r.bound, r.projections
            )
            .unwrap();
        }
        s
    }

    pub fn bound_respected(&self) -> bool {
        self.rows.iter().all(|r| r.max_path_norm <= r.bound)
    }
}

/// Uniform points in `[−1, 1]^d`, one per column.
fn points(d: usize, count: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    DMatrix::from_fn(d, count, |_, _| rng.random_range(-1.0..1.0))
}

pub(crate) fn teacher(b: &BarronConfig) -> TwoLayerNetwork {
    TwoLayerNetwork::init(b.teacher_width, b.input_dim, b.teacher_seed)
}

/// Fits one student; returns the row and the trained network.
pub(crate) fn fit_student(b: &BarronConfig, width: usize, seed: u64) -> (BarronRow, TwoLayerNetwork) {
    let g = teacher(b);
    let bound = if b.path_norm_bound < 0.0 {
        -b.path_norm_bound * g.path_norm()
    } else {
        b.path_norm_bound
    };
    let x = points(b.input_dim, b.points, seed, 0);
    let y = g.forward_batch(&x).0;
    let mut net = TwoLayerNetwork::init(width, b.input_dim, seed ^ 0xba77_0000);
    let hyper = AdamHyper {
        lr: b.lr,
        ..AdamHyper::default()
    };
    let n_params = width * (b.input_dim + 2);
    let mut state = AdamState::new(n_params);
    let scale = 2.0 / b.points as f64;
    let mut projections = 0;
    if net.project_path_norm(bound) {
        projections += 1;
    }
    let mut max_path_norm = net.path_norm();
    for _ in 0..b.epochs {
        let (out, pre) = net.forward_batch(&x);
        let w: DVector<f64> = (out - &y) * scale;
        let (da, db, dc) = net.backward(&x, &pre, &w);
        let params = [net.a.as_mut_slice(), net.b.as_mut_slice(), net.c.as_mut_slice()];
        let grads = [da.as_slice(), db.as_slice(), dc.as_slice()];
        // gradients of a finite MSE are finite; a failure here is a bug
        adam_update(&mut state, params.into_iter(), grads.into_iter(), &hyper).expect("finite gradient");
        if net.project_path_norm(bound) {
            projections += 1;
        }
        max_path_norm = max_path_norm.max(net.path_norm());
    }
    let xt = points(b.input_dim, b.test_points, b.teacher_seed, 1 << 32);
    let diff = net.forward_batch(&xt).0 - g.forward_batch(&xt).0;
    let volume = 2f64.powi(b.input_dim as i32);
    let sq_error = volume * diff.norm_squared() / b.test_points as f64;
    let row = BarronRow {
        width,
        seed,
        sq_error,
        path_norm: net.path_norm(),
        bound,
        max_path_norm,
        projections,
    };
    (row, net)
}

pub fn barron_experiment(cfg: &ExperimentConfig) -> Result<BarronReport> {
    cfg.validate()?;
    let b = cfg
        .barron
        .as_ref()
        .ok_or_else(|| Error::Config("the barron study needs a [barron] table".into()))?;
    let jobs: Vec<(usize, u64)> = b
        .widths
        .iter()
        .flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s)))
        .collect();
    let rows: Vec<BarronRow> =
        pool(cfg.workers)?.install(|| jobs.par_iter().map(|&(w, s)| fit_student(b, w, s).0).collect());
    let means: Vec<(usize, f64)> = b
        .widths
        .iter()
        .map(|&w| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.width == w).map(|r| r.sq_error).collect();
            (w, errs.iter().sum::<f64>() / errs.len() as f64)
        })
        .collect();
    let fit = if means.len() >= 3 {
        let xs: Vec<f64> = means.iter().map(|m| m.0 as f64).collect();
        let ys: Vec<f64> = means.iter().map(|m| m.1).collect();
        fit_rate(&xs, &ys)?
    } else {
        RateFit::default()
    };
    let report = BarronReport {
        config_hash: cfg.hash(),
        rows,
        means,
        fit,
    };
    if let Some(dir) = &cfg.output_dir {
        write_config(dir, cfg)?;
        fs::write(dir.join("barron.csv"), report.to_csv())?;
    }
    Ok(report)
}
