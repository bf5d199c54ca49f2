use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use feonet::experiments::{
    barron_experiment, compare_preconditioning, condition_study, run_scenario, ExperimentConfig, Outcome,
};
use feonet::mesh::{build_structured_square, build_uniform_interval, load_mesh, ElementFamily, Rect};
use feonet::Error;

#[derive(Parser)]
#[command(name = "feonet", version, about = "Finite element operator network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study a config describes and print its main CSV.
    Run(RunArgs),
    /// Residual vs preconditioned loss on the same samples and seeds.
    Precond(RunArgs),
    /// Two-layer width study against a teacher network.
    Barron(RunArgs),
    /// Conditioning of A and P⁻¹A over the sweep points.
    Cond(RunArgs),
    /// Print a built-in config as TOML.
    Preset { name: String },
    #[command(subcommand)]
    Mesh(MeshCommand),
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Interval,
    Square,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    P1,
    P2,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write a generated mesh in the text format.
    Gen {
        #[arg(long, value_enum)]
        shape: Shape,
        #[arg(long)]
        elements: usize,
        #[arg(long, value_enum, default_value = "p1")]
        family: Family,
        #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true, default_values_t = [0.0, 1.0])]
        bounds: Vec<f64>,
        /// Rectangular hole `x0 x1 y0 y1` in the unit square.
        #[arg(long, num_args = 4, value_names = ["X0", "X1", "Y0", "Y1"])]
        hole: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a mesh, verify it and print its metrics.
    Check { path: PathBuf },
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::MeshLoad { .. } => "mesh_load",
        Error::IllPosed(_) => "ill_posed",
        Error::SingularSystem { .. } => "singular_system",
        Error::OutOfDomain { .. } => "out_of_domain",
        Error::Convergence { .. } => "convergence",
        Error::SingularPreconditioner { .. } => "singular_preconditioner",
        Error::Diverged { .. } => "diverged",
        Error::UnsupportedPair(_) => "unsupported_pair",
        Error::Config(_) => "config",
        Error::SweepPoint { source, .. } => kind(source),
        Error::Io(_) => "io",
    }
}

fn load(args: &RunArgs) -> feonet::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> feonet::Result<()> {
    match cli.command {
        Command::Run(args) => match run_scenario(&load(&args)?)? {
            Outcome::Sweep(s) => print!("{}", s.to_csv()),
            Outcome::Barron(b) => print!("{}", b.to_csv()),
            Outcome::Cond(c) => print!("{}", c.to_csv()),
        },
        Command::Precond(args) => print!("{}", compare_preconditioning(&load(&args)?)?.to_csv()),
        Command::Barron(args) => {
            let report = barron_experiment(&load(&args)?)?;
            print!("{}", report.to_csv());
            eprintln!("slope {:.4} (r² {:.4})", report.fit.slope, report.fit.r_squared);
        }
        Command::Cond(args) => {
            let study = condition_study(&load(&args)?)?;
            print!("{}", study.to_csv());
            if let Some(f) = study.kappa_fit {
                eprintln!("kappa ~ h^{:.4}", f.slope);
            }
        }
        Command::Preset { name } => match ExperimentConfig::preset(&name) {
            Some(c) => print!("{}", c.to_toml()),
            None => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}' (known: {})",
                    ExperimentConfig::preset_names().join(", ")
                )))
            }
        },
        Command::Mesh(MeshCommand::Gen {
            shape,
            elements,
            family,
            bounds,
            hole,
            out,
        }) => {
            let mesh = match shape {
                Shape::Interval => {
                    let fam = match family {
                        Family::P1 => ElementFamily::P1Interval,
                        Family::P2 => ElementFamily::P2Interval,
                    };
                    build_uniform_interval(bounds[0], bounds[1], elements, fam)?
                }
                Shape::Square => {
                    let hole = hole.map(|h| Rect {
                        x0: h[0],
                        x1: h[1],
                        y0: h[2],
                        y1: h[3],
                    });
                    build_structured_square(elements, elements, hole)?
                }
            };
            mesh.save(&out)?;
        }
        Command::Mesh(MeshCommand::Check { path }) => {
            let mesh = load_mesh(&path)?;
            let m = mesh.metrics();
            println!("nodes,elements,dofs,h,h_min,gamma");
            println!(
                "{},{},{},{:e},{:e},{:e}",
                mesh.n_nodes(),
                mesh.n_elements(),
                m.n_interior_dofs,
                m.h,
                m.h_min,
                m.gamma
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error\t{}\t{}", kind(&e), msg);
            ExitCode::FAILURE
        }
    }
}
