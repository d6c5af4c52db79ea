//! Solution multiplicity: multistart cluster counts and a radial shooting oracle for `ξ = 0`.

use super::{ExperimentConfig, HarnessError, Sampler};
use crate::fields::{Field, GridSpec};
use crate::kernels::CutOff;
use crate::potentials::{Potential, PotentialFamily};
use crate::solver::{count_solutions_shifted, SolveConfig, SolveError};
use serde::{Deserialize, Serialize};

/// Radial solutions of `φ″ + φ′/r = m²φ + f(r) u′(φ)` decaying at infinity, for a separable
/// scalar profile `u`.
#[derive(Debug, Clone)]
pub struct ShootingOracle {
    pub family: PotentialFamily,
    pub cutoff: CutOff,
    pub r_max: f64,
    pub step: f64,
    /// `|φ|` at which a trajectory counts as escaped.
    pub escape: f64,
}

impl ShootingOracle {
    pub fn new(family: PotentialFamily, cutoff: CutOff) -> Self {
        Self {
            family,
            cutoff,
            r_max: 30.0,
            step: 2e-3,
            escape: 50.0,
        }
    }

    fn rhs(&self, r: f64, y: f64, dy: f64) -> f64 {
        let m2 = self.cutoff.m2;
        m2 * y + self.cutoff.radial(r) * self.family.scalar(y).1 - dy / r
    }

    /// Sign of the escaping trajectory started at `φ(0) = c`.
    pub fn terminal_sign(&self, c: f64) -> f64 {
        let h = self.step;
        let s0 = self.cutoff.m2 * c + self.cutoff.radial(0.0) * self.family.scalar(c).1;
        let (mut r, mut y, mut dy) = (h, c + 0.25 * s0 * h * h, 0.5 * s0 * h);
        while r < self.r_max {
            let k1 = (dy, self.rhs(r, y, dy));
            let k2 = (
                dy + 0.5 * h * k1.1,
                self.rhs(r + 0.5 * h, y + 0.5 * h * k1.0, dy + 0.5 * h * k1.1),
            );
            let k3 = (
                dy + 0.5 * h * k2.1,
                self.rhs(r + 0.5 * h, y + 0.5 * h * k2.0, dy + 0.5 * h * k2.1),
            );
            let k4 = (dy + h * k3.1, self.rhs(r + h, y + h * k3.0, dy + h * k3.1));
            y += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            dy += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            r += h;
            if y.abs() > self.escape {
                break;
            }
        }
        (y + dy).signum()
    }

    fn bisect(&self, mut lo: f64, mut hi: f64) -> f64 {
        let slo = self.terminal_sign(lo);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.terminal_sign(mid) == slo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Origin values `φ(0)` of decaying solutions in `[−range, range]`, from sign changes on
    /// a `scan`-point grid refined by bisection. Roots closer than the scan step can cancel.
    pub fn roots(&self, range: f64, scan: usize) -> Vec<f64> {
        let grid: Vec<f64> = (0..scan)
            .map(|i| -range + 2.0 * range * (i as f64 + 0.5) / scan as f64)
            .collect();
        let signs: Vec<f64> = grid.iter().map(|c| self.terminal_sign(*c)).collect();
        let mut out: Vec<f64> = Vec::new();
        for k in 0..scan - 1 {
            if signs[k] != signs[k + 1] {
                let root = self.bisect(grid[k], grid[k + 1]);
                if out.last().is_none_or(|p| (root - p).abs() > 1e-6) {
                    out.push(root);
                }
            }
        }
        out
    }

    /// Root nearest `guess` among sign changes on a fine grid over `[guess − delta, guess + delta]`.
    pub fn root_near(&self, guess: f64, delta: f64) -> Option<f64> {
        let k = 64;
        let grid: Vec<f64> = (0..=k)
            .map(|i| guess - delta + 2.0 * delta * i as f64 / k as f64)
            .collect();
        let signs: Vec<f64> = grid.iter().map(|c| self.terminal_sign(*c)).collect();
        (0..k)
            .filter(|&i| signs[i] != signs[i + 1])
            .map(|i| self.bisect(grid[i], grid[i + 1]))
            .min_by(|a, b| (a - guess).abs().total_cmp(&(b - guess).abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub clusters: usize,
    /// `φ(0)` of every cluster representative.
    pub origin_values: Vec<f64>,
    pub shooting_roots: Vec<f64>,
    /// Shooting root bracketed next to each cluster value.
    pub matched_roots: Vec<Option<f64>>,
    /// Largest distance from a cluster's `φ(0)` to its bracketed root.
    pub max_mismatch: f64,
    pub tolerance: f64,
    pub validated: bool,
}

/// Multistart solve at `ξ = 0`, checked against the shooting oracle.
pub fn zero_noise_multiplicity(
    grid: GridSpec,
    potential: &Potential,
    cutoff: &CutOff,
    solver: &SolveConfig,
    tolerance: f64,
) -> Result<MultiplicityReport, HarnessError> {
    let family = potential.family().cloned().ok_or_else(|| {
        HarnessError::Precondition("the shooting oracle needs a builtin scalar family".into())
    })?;
    if grid.components != 1 {
        return Err(HarnessError::Precondition(
            "the shooting oracle is scalar".into(),
        ));
    }
    let rep = match count_solutions_shifted(&Field::zeros(grid), potential, cutoff, solver) {
        Ok(r) => r,
        Err(SolveError::NonConvergence(r)) => *r,
        Err(source) => return Err(HarnessError::Solve { index: 0, source }),
    };
    let origin_values: Vec<f64> = rep.distinct_solutions.iter().map(|s| s.values[0]).collect();
    let bound = cutoff.radial(0.0)
        * potential
            .qc_bound
            .as_ref()
            .map(|b| b.eval(&[0.0]).max(1.0))
            .unwrap_or(1.0)
        / cutoff.m2;
    let range = 1.0 + origin_values.iter().fold(bound, |m, v| m.max(v.abs()));
    let oracle = ShootingOracle::new(family, *cutoff);
    let shooting_roots = oracle.roots(range, 400);
    let matched_roots: Vec<Option<f64>> = origin_values
        .iter()
        .map(|v| oracle.root_near(*v, 1e-2))
        .collect();
    let max_mismatch = origin_values
        .iter()
        .zip(&matched_roots)
        .map(|(v, r)| r.map_or(f64::INFINITY, |r| (r - v).abs()))
        .fold(0.0, f64::max);
    Ok(MultiplicityReport {
        clusters: origin_values.len(),
        origin_values,
        shooting_roots,
        matched_roots,
        max_mismatch,
        tolerance,
        validated: max_mismatch <= tolerance,
    })
}

/// Multistart cluster count on each of `draws` noise draws.
pub fn uniqueness_scan(cfg: &ExperimentConfig, draws: usize) -> Result<Vec<usize>, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.solver.multistart_count = cfg.solver.multistart_count.max(2);
    let sampler = Sampler::from_config(&cfg)?;
    let samples = sampler.run(draws)?;
    Ok(samples
        .iter()
        .map(|s| s.solution_count.unwrap_or(0))
        .collect())
}
