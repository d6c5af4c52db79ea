//! Density route on coarse grids: `∫ h(𝓘w(0)) Υ_f(𝓘w) Λ_U(w) dμ(w)` against the strong-solution
//! pushforward.

use super::estimate::{mean_se, ratio_jackknife, z_score, Estimate};
use super::{check_convergence, worker_pool, ExperimentConfig, HarnessError, Sampler};
use crate::fields::{replica_seed, sample_white_noise};
use crate::gibbs::Observable;
use crate::girsanov::{lambda_u, ShiftOperator, MAX_MATERIALIZED};
use crate::potentials::Tag;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Offset separating the density-route noise stream from the strong-route stream.
const DENSITY_STREAM: u64 = 0xD1CE_5EED_0000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteComparison {
    pub tag: String,
    pub density: Estimate,
    pub strong: Estimate,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRouteReport {
    pub replicas: usize,
    /// `Ê[Λ_U]`.
    pub lambda_mean: Estimate,
    pub lambda_z: f64,
    pub negative_lambda: usize,
    pub singular: usize,
    pub comparisons: Vec<RouteComparison>,
    pub max_abs_z: f64,
    pub strong_excluded: usize,
}

#[derive(Debug, Clone, Copy)]
struct DensitySample {
    phi0: f64,
    lambda: f64,
    upsilon: f64,
    singular: bool,
}

/// Both routes with `cfg.replicas` draws each, on independent noise streams.
pub fn run_density_route_check(cfg: &ExperimentConfig) -> Result<DensityRouteReport, HarnessError> {
    let sampler = Sampler::from_config(cfg)?;
    if !sampler.potential.has(Tag::C) {
        return Err(HarnessError::Precondition(
            "the density route needs a potential tagged C".into(),
        ));
    }
    if cfg.grid.len() > MAX_MATERIALIZED {
        return Err(HarnessError::Precondition(format!(
            "n·N² = {} exceeds the materialization limit {MAX_MATERIALIZED}",
            cfg.grid.len()
        )));
    }
    if cfg.grid.components != 1 {
        return Err(HarnessError::Precondition(
            "the density route compares scalar fields".into(),
        ));
    }
    let master = cfg.master_seed ^ DENSITY_STREAM;
    let density: Vec<DensitySample> = worker_pool().install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|i| {
                let w = sample_white_noise(cfg.grid, replica_seed(master, i as u64));
                let mut shift = ShiftOperator::new(&w, &sampler.potential, &sampler.cutoff)?;
                let e = lambda_u(&mut shift, true)?;
                Ok(DensitySample {
                    phi0: shift.i_w.values[0],
                    lambda: e.lambda_u,
                    upsilon: e.upsilon_f.expect("requested"),
                    singular: e.singular,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let strong = sampler.run(cfg.replicas)?;
    let strong_excluded = check_convergence(&strong)?;
    let strong: Vec<_> = strong.into_iter().filter(|s| s.converged).collect();

    let lambdas: Vec<f64> = density.iter().map(|d| d.lambda).collect();
    let lambda_mean = mean_se(&lambdas);
    let dw: Vec<f64> = density.iter().map(|d| d.lambda * d.upsilon).collect();
    let sw: Vec<f64> = strong.iter().map(|s| s.log_upsilon.exp()).collect();
    let comparisons: Vec<RouteComparison> = cfg
        .observables
        .moment_list(1)
        .iter()
        .filter(|h| !matches!(h, Observable::One))
        .map(|h| {
            let dv: Vec<f64> = density.iter().map(|d| h.eval(&[d.phi0])).collect();
            let sv: Vec<f64> = strong.iter().map(|s| h.eval(&s.phi0)).collect();
            let d = ratio_jackknife(&dw, &dv);
            let s = ratio_jackknife(&sw, &sv);
            RouteComparison {
                tag: h.tag(),
                density: d,
                strong: s,
                z: z_score(d.value, d.se, s.value, s.se),
            }
        })
        .collect();
    Ok(DensityRouteReport {
        replicas: cfg.replicas,
        lambda_z: z_score(lambda_mean.value, lambda_mean.se, 1.0, 0.0),
        lambda_mean,
        negative_lambda: lambdas.iter().filter(|l| **l < 0.0).count(),
        singular: density.iter().filter(|d| d.singular).count(),
        max_abs_z: comparisons.iter().fold(0.0, |m, c| m.max(c.z.abs())),
        comparisons,
        strong_excluded,
    })
}
