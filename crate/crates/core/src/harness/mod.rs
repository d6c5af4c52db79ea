//! Experiment orchestration: replica sampling, weighted estimates of `φ(0)` statistics
//! against the Gibbs targets, and the auxiliary verification experiments.

pub mod config;
pub mod decorrelation;
pub mod density;
pub mod estimate;
pub mod output;
pub mod shooting;
pub mod trend;

use crate::fields::{apply_fractional_inverse, replica_seed, sample_white_noise, Field, GridSpec};
use crate::gibbs::{GibbsError, GibbsMeasure, Observable};
use crate::kernels::CutOff;
use crate::potentials::{Potential, Tag};
use crate::solver::{count_solutions_shifted, solve_shifted, SolveConfig, SolveError};
pub use config::{
    ConfigError, CutOffConfig, CutOffName, ExperimentConfig, ObservableSpec, OutputSpec,
};
use estimate::{effective_sample_size, ratio_jackknife, z_score, Estimate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Largest tolerated fraction of non-converged replicas.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "DIMRED_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{failed} of {total} replicas did not converge (limit {limit:.0}%); worst residual {worst_residual:e}")]
    ExcessiveNonConvergence {
        failed: usize,
        total: usize,
        limit: f64,
        worst_residual: f64,
    },
    #[error("replica {index}: {source}")]
    Solve { index: usize, source: SolveError },
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Girsanov(#[from] crate::girsanov::GirsanovError),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
}

/// Rayon pool sized by `DIMRED_WORKERS` when set.
pub fn worker_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// One replica: `φ(0)` with its `Υ_f` exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub index: usize,
    pub seed: u64,
    /// `φ(0) = (𝓘ξ + φ̄)(0)`.
    pub phi0: Vec<f64>,
    /// `4 a² Σ f̃′(|x|²) V(φ(x))`.
    pub log_upsilon: f64,
    /// `a² Σ f̃′(|x|²) φ₀(x)`, component 0.
    pub boundary: f64,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub solution_count: Option<usize>,
    /// Cluster of the zero start (multistart runs).
    pub cluster: Option<usize>,
}

/// Per-replica pipeline: noise, solve, record.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub grid: GridSpec,
    pub potential: Potential,
    pub cutoff: CutOff,
    pub solver: SolveConfig,
    pub master_seed: u64,
    /// `a² f̃′(|x|²)` per cell.
    fprime: Vec<f64>,
}

impl Sampler {
    pub fn new(
        grid: GridSpec,
        potential: Potential,
        cutoff: CutOff,
        solver: SolveConfig,
        master_seed: u64,
    ) -> Self {
        let a2 = grid.spacing().powi(2);
        let fprime = (0..grid.cells())
            .map(|c| a2 * cutoff.f_prime(grid.point(c)))
            .collect();
        Self {
            grid,
            potential,
            cutoff,
            solver,
            master_seed,
            fprime,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let r = cfg.validate()?;
        Ok(Self::new(
            cfg.grid,
            r.potential,
            r.cutoff,
            cfg.solver.clone(),
            cfg.master_seed,
        ))
    }

    /// `(sample, φ)`; non-convergence is recorded, not raised.
    pub fn replica(&self, index: usize) -> Result<(WeightedSample, Field), HarnessError> {
        let seed = replica_seed(self.master_seed, index as u64);
        let i_xi = apply_fractional_inverse(&sample_white_noise(self.grid, seed).field, 1.0);
        let multistart = self.solver.multistart_count >= 2;
        let (phibar, converged, residual, iterations, solution_count, cluster) =
            if self.potential.is_zero() {
                (None, true, 0.0, 0, None, None)
            } else {
                let run = if multistart {
                    count_solutions_shifted(&i_xi, &self.potential, &self.cutoff, &self.solver)
                } else {
                    solve_shifted(&i_xi, &self.potential, &self.cutoff, &self.solver)
                };
                let (rep, ok) = match run {
                    Ok(r) => (r, true),
                    Err(SolveError::NonConvergence(r)) => (*r, false),
                    Err(source) => return Err(HarnessError::Solve { index, source }),
                };
                let count = multistart.then_some(rep.distinct_solutions.len());
                let cluster = rep.start_clusters.iter().flatten().next().copied();
                (
                    Some(rep.solution),
                    ok,
                    rep.residual_norm,
                    rep.iterations,
                    count,
                    cluster,
                )
            };
        let phi = match phibar {
            Some(s) => i_xi.add(&s),
            None => i_xi,
        };
        let m = self.grid.cells();
        let n = self.grid.components;
        let mut y = vec![0.0; n];
        let mut log_upsilon = 0.0;
        let mut boundary = 0.0;
        for (c, w) in self.fprime.iter().enumerate() {
            if *w != 0.0 {
                for (k, yk) in y.iter_mut().enumerate() {
                    *yk = phi.values[k * m + c];
                }
                log_upsilon += w * self.potential.value(&y);
                boundary += w * y[0];
            }
        }
        let sample = WeightedSample {
            index,
            seed,
            phi0: phi.at_origin(),
            log_upsilon: 4.0 * log_upsilon,
            boundary,
            converged,
            residual,
            iterations,
            solution_count,
            cluster,
        };
        Ok((sample, phi))
    }

    /// Replicas `0..count` in parallel, collected in index order.
    pub fn run(&self, count: usize) -> Result<Vec<WeightedSample>, HarnessError> {
        worker_pool().install(|| {
            (0..count)
                .into_par_iter()
                .map(|i| self.replica(i).map(|(s, _)| s))
                .collect()
        })
    }
}

/// Fails when more than [`MAX_FAILURE_FRACTION`] of the replicas did not converge.
pub fn check_convergence(samples: &[WeightedSample]) -> Result<usize, HarnessError> {
    let failed: Vec<&WeightedSample> = samples.iter().filter(|s| !s.converged).collect();
    if failed.len() as f64 > MAX_FAILURE_FRACTION * samples.len() as f64 {
        return Err(HarnessError::ExcessiveNonConvergence {
            failed: failed.len(),
            total: samples.len(),
            limit: 100.0 * MAX_FAILURE_FRACTION,
            worst_residual: failed.iter().map(|s| s.residual).fold(0.0, f64::max),
        });
    }
    Ok(failed.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub tag: String,
    pub observable: Observable,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub target_error: f64,
    pub z: f64,
}

/// Binned comparison of the `φ₀(0)` law with `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSurrogate {
    pub bins: usize,
    pub half_width: f64,
    /// `Σ (p̂ − p)² / (σ̂² + σ²)` over bins with a positive denominator.
    pub chi2: f64,
    pub dof: usize,
    /// `½ Σ |p̂ − p|` including the mass outside the window.
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaDiagnostics {
    pub total: usize,
    pub converged: usize,
    pub excluded: usize,
    pub mean_iterations: f64,
    pub max_residual: f64,
    pub effective_sample_size: f64,
    pub min_log_upsilon: f64,
    /// `f(L/2)/f(0) < 1e−6`.
    pub torus_guard: bool,
    pub max_solution_count: Option<usize>,
    /// Draws on which multistart found more than one solution.
    pub nonunique_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub schema_version: u32,
    pub name: String,
    /// `false` for unweighted runs (all `Υ_f` set to one).
    pub weighted: bool,
    /// `Ê[Υ_f]`.
    pub z_f: Estimate,
    pub weight_sum: f64,
    /// Targets are moments of `κ` with `V` replaced by `coupling·V`: `f̃(0)` when weighted,
    /// one otherwise.
    pub coupling: f64,
    pub estimates: Vec<ObservableEstimate>,
    pub histogram: Option<HistogramSurrogate>,
    /// Largest `|z|` over the monomial list.
    pub max_abs_z: f64,
    /// Some draw had several solution clusters (QC without C).
    pub nonunique: bool,
    pub diagnostics: ReplicaDiagnostics,
    /// `(1/L²) Σ_k (m² + |k|²)^{−2}` when `V = 0`.
    pub lattice_variance: Option<f64>,
    pub warnings: Vec<String>,
}

impl ReductionReport {
    pub fn estimate(&self, h: &Observable) -> Option<&ObservableEstimate> {
        self.estimates.iter().find(|e| &e.observable == h)
    }
}

/// Weighted (or unit-weight) estimates of `cfg`'s observables from finished samples.
pub fn analyze(
    cfg: &ExperimentConfig,
    potential: &Potential,
    cutoff: &CutOff,
    samples: &[WeightedSample],
    weighted: bool,
) -> Result<ReductionReport, HarnessError> {
    let excluded = check_convergence(samples)?;
    let used: Vec<&WeightedSample> = samples.iter().filter(|s| s.converged).collect();
    let weights: Vec<f64> = used
        .iter()
        .map(|s| if weighted { s.log_upsilon.exp() } else { 1.0 })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let z_f = estimate::mean_se(&weights);
    let coupling = if weighted { cutoff.radial(0.0) } else { 1.0 };
    let gibbs = GibbsMeasure::new(potential.scaled(coupling), cfg.grid.m2)?;

    let compare = |h: &Observable| -> Result<ObservableEstimate, HarnessError> {
        let vals: Vec<f64> = used.iter().map(|s| h.eval(&s.phi0)).collect();
        let e = ratio_jackknife(&weights, &vals);
        let t = gibbs.observable(h)?;
        Ok(ObservableEstimate {
            tag: h.tag(),
            observable: h.clone(),
            estimate: e.value,
            se: e.se,
            target: t.value,
            target_error: t.error,
            z: z_score(e.value, e.se, t.value, t.error),
        })
    };
    let moments = cfg.observables.moment_list(cfg.grid.components);
    let estimates = moments.iter().map(compare).collect::<Result<Vec<_>, _>>()?;
    let max_abs_z = estimates
        .iter()
        .filter(|e| matches!(e.observable, Observable::Monomial { .. }))
        .fold(0.0f64, |m, e| m.max(e.z.abs()));

    let bins = cfg.observables.bin_list(cfg.grid.m2);
    let histogram = if bins.is_empty() {
        None
    } else {
        let rows = bins.iter().map(compare).collect::<Result<Vec<_>, _>>()?;
        let mut chi2 = 0.0;
        let mut dof = 0;
        let mut tv = 0.0;
        let (mut inside_hat, mut inside) = (0.0, 0.0);
        for r in &rows {
            let d = r.se * r.se + r.target_error * r.target_error;
            if d > 0.0 {
                chi2 += (r.estimate - r.target).powi(2) / d;
                dof += 1;
            }
            tv += (r.estimate - r.target).abs();
            inside_hat += r.estimate;
            inside += r.target;
        }
        tv += ((1.0 - inside_hat) - (1.0 - inside)).abs();
        Some(HistogramSurrogate {
            bins: bins.len(),
            half_width: cfg.observables.half_width(cfg.grid.m2),
            chi2,
            dof,
            total_variation: 0.5 * tv,
        })
    };

    let counts: Vec<usize> = samples.iter().filter_map(|s| s.solution_count).collect();
    let nonunique_draws = counts.iter().filter(|c| **c > 1).count();
    let torus_guard = cutoff.torus_guard(cfg.grid.l);
    let mut warnings = potential.warnings.clone();
    if !torus_guard {
        warnings.push(format!(
            "torus guard fails: f(L/2)/f(0) = {:e}",
            cutoff.radial(0.5 * cfg.grid.l) / cutoff.radial(0.0)
        ));
    }
    if nonunique_draws > 0 {
        warnings.push(format!(
            "{nonunique_draws} draws have several solutions; estimates follow the branch of the zero start"
        ));
    }
    if !potential.has(Tag::C) {
        warnings.push("potential not tagged C: the strong solution need not be unique".into());
    }
    let diagnostics = ReplicaDiagnostics {
        total: samples.len(),
        converged: used.len(),
        excluded,
        mean_iterations: used.iter().map(|s| s.iterations as f64).sum::<f64>()
            / used.len().max(1) as f64,
        max_residual: used.iter().map(|s| s.residual).fold(0.0, f64::max),
        effective_sample_size: effective_sample_size(&weights),
        min_log_upsilon: used
            .iter()
            .map(|s| s.log_upsilon)
            .fold(f64::INFINITY, f64::min),
        torus_guard,
        max_solution_count: counts.iter().copied().max(),
        nonunique_draws,
    };
    Ok(ReductionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        name: cfg.name.clone(),
        weighted,
        z_f,
        weight_sum,
        coupling,
        estimates,
        histogram,
        max_abs_z,
        nonunique: nonunique_draws > 0,
        diagnostics,
        lattice_variance: potential
            .is_zero()
            .then(|| cfg.grid.lattice_covariance(2.0, 0)),
        warnings,
    })
}

fn require_strong_uniqueness(
    potential: &Potential,
    cfg: &ExperimentConfig,
) -> Result<(), HarnessError> {
    if potential.has(Tag::C) {
        return Ok(());
    }
    if potential.has(Tag::QC) && cfg.solver.multistart_count >= 2 {
        return Ok(());
    }
    Err(HarnessError::Precondition(
        "potential must be tagged C, or QC with multistart_count ≥ 2 so that branches are reported"
            .into(),
    ))
}

/// Monte Carlo over noise draws with `Υ_f`-weighted estimates of `h(φ(0))`.
pub fn run_reduction_experiment(
    cfg: &ExperimentConfig,
) -> Result<(ReductionReport, Vec<WeightedSample>), HarnessError> {
    let sampler = Sampler::from_config(cfg)?;
    require_strong_uniqueness(&sampler.potential, cfg)?;
    let samples = sampler.run(cfg.replicas)?;
    let report = analyze(cfg, &sampler.potential, &sampler.cutoff, &samples, true)?;
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;
    use crate::girsanov::log_upsilon;
    use crate::potentials::PotentialFamily;

    fn small(family: PotentialFamily, replicas: usize) -> ExperimentConfig {
        ExperimentConfig {
            name: "small".into(),
            grid: GridSpec {
                l: 16.0,
                n_side: 32,
                components: 1,
                m2: 1.0,
            },
            potential: family,
            replicas,
            ..ExperimentConfig::quartic_default()
        }
    }

    #[test]
    fn sample_weight_matches_lattice_upsilon() {
        let cfg = small(PotentialFamily::Quartic { lambda: 0.2 }, 100);
        let s = Sampler::from_config(&cfg).unwrap();
        let (sample, phi) = s.replica(3).unwrap();
        let direct = log_upsilon(&phi, &s.potential, &s.cutoff);
        assert!((sample.log_upsilon - direct).abs() < 1e-12 * direct.abs().max(1.0));
        assert!(sample.log_upsilon <= 0.0);
        assert_eq!(sample.phi0, vec![phi.values[0]]);
    }

    #[test]
    fn zero_potential_has_unit_weights() {
        let cfg = small(PotentialFamily::Zero, 200);
        let (r, samples) = run_reduction_experiment(&cfg).unwrap();
        assert!(samples.iter().all(|s| s.log_upsilon == 0.0));
        assert_eq!(r.z_f.value, 1.0);
        assert_eq!(r.weight_sum, 200.0);
        let lv = r.lattice_variance.unwrap();
        let y2 = r
            .estimate(&Observable::Monomial {
                component: 0,
                power: 2,
            })
            .unwrap();
        assert!(((y2.estimate - lv) / y2.se).abs() < 4.0);
    }

    #[test]
    fn self_normalization_is_exact() {
        let cfg = small(PotentialFamily::Quartic { lambda: 0.2 }, 150);
        let (r, _) = run_reduction_experiment(&cfg).unwrap();
        let one = r.estimate(&Observable::One).unwrap();
        assert!((one.estimate - 1.0).abs() < 1e-14);
        assert_eq!(one.z, 0.0);
        assert!((r.weight_sum / r.diagnostics.converged as f64 - r.z_f.value).abs() < 1e-14);
        assert!(r.estimates.iter().all(|e| e.z.is_finite()));
    }

    #[test]
    fn identical_configs_give_identical_reports() {
        let cfg = small(PotentialFamily::Quartic { lambda: 0.2 }, 120);
        let a = serde_json::to_string(&run_reduction_experiment(&cfg).unwrap().0).unwrap();
        let b = serde_json::to_string(&run_reduction_experiment(&cfg).unwrap().0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn excessive_failures_abort() {
        let mut cfg = small(PotentialFamily::Quartic { lambda: 0.2 }, 100);
        cfg.solver.max_iterations = 1;
        assert!(matches!(
            run_reduction_experiment(&cfg),
            Err(HarnessError::ExcessiveNonConvergence { .. })
        ));
    }

    #[test]
    fn nonconvex_potential_needs_multistart() {
        let cfg = small(
            PotentialFamily::DoubleWell {
                amplitude: 2.0,
                freq: 2.0,
            },
            100,
        );
        assert!(matches!(
            run_reduction_experiment(&cfg),
            Err(HarnessError::Precondition(_))
        ));
    }
}
