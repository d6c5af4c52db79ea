use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dimred_core::fermion_det::{amplitude_sweep, write_sweep_csv, Discretization};
use dimred_core::fields::{replica_seed, sample_white_noise};
use dimred_core::gibbs::Observable;
use dimred_core::girsanov::{lambda_u, write_evals_csv, ShiftOperator};
use dimred_core::harness::decorrelation::{run_decorrelation_probe, write_decorrelation_csv};
use dimred_core::harness::density::run_density_route_check;
use dimred_core::harness::output::{write_estimates_csv, write_samples_csv, OutputDir};
use dimred_core::harness::trend::{run_cutoff_removal_trend, write_trend_csv};
use dimred_core::harness::{
    run_reduction_experiment, ExperimentConfig, Sampler, REPORT_SCHEMA_VERSION,
};
use dimred_core::kernels::{
    green_gradient_identity_residual, make_cutoff, CutOffKind, KernelTable,
};
use dimred_core::superspace::{
    reduction_formula_check, susy_check, verify_pol_eq, PolEqQuadrature, Poly, SuperFunction,
};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dimred",
    version,
    about = "Elliptic stochastic quantization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; defaults to the config's `output.dir` or `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero when the run's acceptance check fails.
    #[arg(long)]
    verify: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Weighted φ(0) statistics against the Gibbs targets.
    Reduce {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Unweighted statistics along a decreasing sequence of cut-off rates.
    Trend {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 0.25])]
        b: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Origin/boundary covariance for flat-top cut-offs of growing radius.
    Decorrelate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 2.0, 5.0, 10.0, 20.0])]
        radii: Vec<f64>,
        /// Power of the origin monomial for nonlinear potentials.
        #[arg(long, default_value_t = 2)]
        power: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Density route with Λ_U against the strong-solution route on a coarse grid.
    GirsanovCheck {
        config: PathBuf,
        /// Draws written to `evals.csv`.
        #[arg(long, default_value_t = 100)]
        table_draws: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Kernel identity, superfunction invariance and the superspace reduction formula.
    SusyCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0])]
        chi: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        m2: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Low-order polynomial identity matrix.
    PolEq {
        #[arg(long, default_value_t = 0.5)]
        chi: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fredholm series against the matrix determinant over an amplitude sweep.
    FermionDet {
        #[arg(long, default_value_t = 0.5)]
        chi: f64,
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long, default_value_t = 11)]
        amplitudes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulated Green kernel as CSV.
    KernelsDump {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        m2: f64,
        #[arg(long, default_value_t = 1e-3)]
        r_min: f64,
        #[arg(long, default_value_t = 20.0)]
        r_max: f64,
        #[arg(long, default_value_t = 512)]
        nodes: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>, name: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| Path::new("out").join(name))
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("invalid config {}", path.display()))
}

fn summary(
    out: &mut OutputDir,
    command: &str,
    passed: bool,
    report: serde_json::Value,
) -> Result<()> {
    out.write_json(
        "summary.json",
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "command": command,
            "passed": passed,
            "report": report,
        }),
    )?;
    Ok(())
}

/// Returns whether the run's check passed and whether `--verify` was given.
fn run(cli: Cli) -> Result<(bool, bool)> {
    match cli.command {
        Command::Reduce { config, common } => {
            let cfg = load(&config)?;
            let mut out = OutputDir::create(&out_dir(&common, Some(&cfg), "reduce"))?;
            let (report, samples) = run_reduction_experiment(&cfg)?;
            let passed = report.max_abs_z < 4.0;
            out.write_with("samples.csv", |w| Ok(write_samples_csv(&samples, w)?))?;
            out.write_with("estimates.csv", |w| {
                Ok(write_estimates_csv(&report.estimates, w)?)
            })?;
            if cfg.output.dump_first_field {
                let sampler = Sampler::from_config(&cfg)?;
                let (_, phi) = sampler.replica(0)?;
                out.write_with("phi_0.bin", |w| Ok(phi.write_binary(w)?))?;
            }
            summary(&mut out, "reduce", passed, serde_json::to_value(&report)?)?;
            out.commit();
            Ok((passed, common.verify))
        }
        Command::Trend { config, b, common } => {
            let cfg = load(&config)?;
            let mut out = OutputDir::create(&out_dir(&common, Some(&cfg), "trend"))?;
            let report = run_cutoff_removal_trend(&cfg, &b)?;
            out.write_with("trend.csv", |w| Ok(write_trend_csv(&report, w)?))?;
            summary(
                &mut out,
                "trend",
                report.nonincreasing,
                serde_json::to_value(&report)?,
            )?;
            out.commit();
            Ok((report.nonincreasing, common.verify))
        }
        Command::Decorrelate {
            config,
            radii,
            power,
            common,
        } => {
            let cfg = load(&config)?;
            let mut out = OutputDir::create(&out_dir(&common, Some(&cfg), "decorrelate"))?;
            let report = run_decorrelation_probe(
                &cfg,
                &radii,
                &Observable::Monomial {
                    component: 0,
                    power,
                },
            )?;
            let passed = report
                .rows
                .iter()
                .all(|r| r.z.is_none_or(|z| z.abs() < 4.0));
            out.write_with("decorrelation.csv", |w| {
                Ok(write_decorrelation_csv(&report, w)?)
            })?;
            summary(
                &mut out,
                "decorrelate",
                passed,
                serde_json::to_value(&report)?,
            )?;
            out.commit();
            Ok((passed, common.verify))
        }
        Command::GirsanovCheck {
            config,
            table_draws,
            common,
        } => {
            let cfg = load(&config)?;
            let resolved = cfg.validate()?;
            let mut out = OutputDir::create(&out_dir(&common, Some(&cfg), "girsanov-check"))?;
            let report = run_density_route_check(&cfg)?;
            let passed = report.max_abs_z < 4.0 && report.lambda_z.abs() < 4.0;
            let mut rows = Vec::with_capacity(table_draws);
            for i in 0..table_draws {
                let seed = replica_seed(cfg.master_seed, i as u64);
                let mut shift = ShiftOperator::new(
                    &sample_white_noise(cfg.grid, seed),
                    &resolved.potential,
                    &resolved.cutoff,
                )?;
                rows.push((seed, lambda_u(&mut shift, true)?));
            }
            out.write_with("evals.csv", |w| Ok(write_evals_csv(&rows, w)?))?;
            summary(
                &mut out,
                "girsanov-check",
                passed,
                serde_json::to_value(&report)?,
            )?;
            out.commit();
            Ok((passed, common.verify))
        }
        Command::SusyCheck { chi, m2, common } => {
            let mut out = OutputDir::create(&out_dir(&common, None, "susy-check"))?;
            let mut kernel = Vec::new();
            let mut worst: f64 = 0.0;
            for &c in &chi {
                for i in 0..20 {
                    let r = 0.05 * (100.0f64).powf(i as f64 / 19.0);
                    let res = green_gradient_identity_residual(c, m2, r)?;
                    worst = worst.max(res);
                    kernel.push(json!({ "chi": c, "r": r, "residual": res }));
                }
            }
            let mut reductions = Vec::new();
            let mut functions = Vec::new();
            let mut passed = worst < 1e-5;
            for kind in [CutOffKind::ExpSqrt, CutOffKind::FlatTop { radius: 2.0 }] {
                let f = make_cutoff(kind, 0.5, m2)?;
                for &c in &chi {
                    let r = reduction_formula_check(c, &f)?;
                    passed &= r.relative_gap < 1e-4;
                    reductions.push(json!({ "cutoff": kind.to_string(), "check": r }));
                }
                let s = susy_check(&SuperFunction::of_cutoff(&f), 1e-6, 4.0, 9);
                passed &= s.passed;
                functions.push(s);
            }
            summary(
                &mut out,
                "susy-check",
                passed,
                json!({
                    "kernel_max_residual": worst,
                    "kernel": kernel,
                    "reduction_formula": reductions,
                    "superfunctions": functions,
                }),
            )?;
            out.commit();
            Ok((passed, common.verify))
        }
        Command::PolEq { chi, b, common } => {
            let f = make_cutoff(CutOffKind::ExpSqrt, b, 1.0)?;
            let mut out = OutputDir::create(&out_dir(&common, None, "pol-eq"))?;
            let cases = [
                (Poly::constant(1.0), Poly::monomial(2), 1),
                (Poly::monomial(2), Poly::monomial(2), 1),
                (Poly::constant(1.0), Poly::monomial(4), 1),
                (Poly::constant(1.0), Poly::monomial(2), 2),
            ];
            let mut reports = Vec::new();
            for (p, big_p, n) in &cases {
                reports.push(verify_pol_eq(
                    p,
                    big_p,
                    *n,
                    chi,
                    &f,
                    &PolEqQuadrature::default(),
                )?);
            }
            let passed = reports.iter().all(|r| r.gap < 1e-3);
            out.write_with("pol_eq.csv", |w| {
                writeln!(w, "p,P,n,chi,lhs,rhs,gap,quadrature_error")?;
                for r in &reports {
                    writeln!(
                        w,
                        "{},{},{},{},{:.15e},{:.15e},{:.3e},{:.3e}",
                        r.p, r.big_p, r.n, r.chi, r.lhs, r.rhs, r.gap, r.quadrature_error
                    )?;
                }
                Ok(())
            })?;
            summary(&mut out, "pol-eq", passed, serde_json::to_value(&reports)?)?;
            out.commit();
            Ok((passed, common.verify))
        }
        Command::FermionDet {
            chi,
            order,
            amplitudes,
            common,
        } => {
            if amplitudes < 2 {
                bail!("--amplitudes must be at least 2");
            }
            let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0)?;
            let amps: Vec<f64> = (0..amplitudes)
                .map(|i| i as f64 / (amplitudes - 1) as f64)
                .collect();
            let mut out = OutputDir::create(&out_dir(&common, None, "fermion-det"))?;
            let rows = amplitude_sweep(&f, chi, &amps, order, Discretization::default())?;
            let passed = rows.iter().all(|r| r.within_truncation());
            out.write_with("sweep.csv", |w| Ok(write_sweep_csv(&rows, w)?))?;
            summary(
                &mut out,
                "fermion-det",
                passed,
                serde_json::to_value(&rows)?,
            )?;
            out.commit();
            Ok((passed, common.verify))
        }
        Command::KernelsDump {
            alpha,
            m2,
            r_min,
            r_max,
            nodes,
            common,
        } => {
            let table = KernelTable::new(alpha, m2, r_min, r_max, nodes)?;
            let mut out = OutputDir::create(&out_dir(&common, None, "kernels-dump"))?;
            out.write_with("kernel.csv", |w| Ok(table.write_csv(w)?))?;
            summary(
                &mut out,
                "kernels-dump",
                true,
                json!({ "alpha": alpha, "m2": m2, "nodes": nodes, "origin": table.at_origin() }),
            )?;
            out.commit();
            Ok((true, common.verify))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((passed, verify)) => {
            if verify && !passed {
                eprintln!("verification failed");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
