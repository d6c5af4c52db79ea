//! Strong solutions of `(m² − Δ)φ̄ + f ∂V(φ̄ + 𝓘ξ) = 0` on the periodic lattice.
//!
//! The fixed-point map is `K(φ̄) = −𝓘(f ∂V(φ̄ + 𝓘ξ))` with `𝓘 = (m² − Δ)^{-1}` applied
//! spectrally. Damped iteration works in Fourier space so that one step costs two
//! transforms per component and yields the residual for free via Parseval.

use crate::fields::{
    apply_fractional_inverse, replica_seed, with_spectral, Field, GridSpec, NoiseDraw,
};
use crate::kernels::CutOff;
use crate::potentials::{Potential, PotentialFamily, Tag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    FixedPoint,
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub damping: f64,
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub method: SolveMethod,
    pub multistart_count: usize,
    pub initial_scale: f64,
    /// Seed for the randomized starts of `count_solutions`.
    pub start_seed: u64,
    /// Relative slack of the a-priori sup bound.
    pub apriori_slack: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iterations: 2000,
            residual_tolerance: 1e-9,
            method: SolveMethod::FixedPoint,
            multistart_count: 1,
            initial_scale: 1.0,
            start_seed: 1,
            apriori_slack: 0.1,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(format!("damping = {} must lie in (0, 1]", self.damping));
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(format!(
                "residual_tolerance = {} must be positive",
                self.residual_tolerance
            ));
        }
        if self.multistart_count == 0 {
            return Err("multistart_count must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if !(self.initial_scale >= 0.0) {
            return Err(format!(
                "initial_scale = {} must be non-negative",
                self.initial_scale
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    /// `φ̄`.
    pub solution: Field,
    /// `𝓘ξ`, so that `φ = 𝓘ξ + φ̄`.
    pub i_xi: Field,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sup_x f(x) H(𝓘ξ(x)) / m²` when the potential carries a QC bound.
    pub apriori_bound: Option<f64>,
    pub apriori_satisfied: Option<bool>,
    /// Cluster representatives (multistart runs only).
    pub distinct_solutions: Vec<Field>,
    /// Cluster index of every start, zero start first (multistart runs only).
    pub start_clusters: Vec<Option<usize>>,
}

impl SolveReport {
    /// `φ = 𝓘ξ + φ̄`.
    pub fn phi(&self) -> Field {
        self.i_xi.add(&self.solution)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("no convergence after {} iterations (residual {:e})", .0.iterations, .0.residual_norm)]
    NonConvergence(Box<SolveReport>),
    #[error("Newton iteration requires a potential tagged C")]
    NewtonRequiresC,
    #[error("potential is not tagged QC; strong solutions are not guaranteed")]
    NotQc,
    #[error("non-finite nonlinearity at component {component}, cell ({ix}, {iy}); the potential overflowed")]
    Overflow {
        component: usize,
        ix: usize,
        iy: usize,
    },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

struct Problem<'a> {
    grid: GridSpec,
    eta: &'a Field,
    fcell: Vec<f64>,
    p: &'a Potential,
    scalar: Option<PotentialFamily>,
    /// `m² + |k|²`.
    lap: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(eta: &'a Field, p: &'a Potential, f: &CutOff) -> Result<Self, SolveError> {
        let grid = eta.grid;
        if p.n != grid.components {
            return Err(SolveError::Shape(format!(
                "potential has {} components, grid has {}",
                p.n, grid.components
            )));
        }
        let fcell = (0..grid.cells()).map(|c| f.f(grid.point(c))).collect();
        let lap = grid.k_squared().iter().map(|k2| grid.m2 + k2).collect();
        Ok(Self {
            grid,
            eta,
            fcell,
            p,
            scalar: p.family().cloned(),
            lap,
        })
    }

    fn overflow(&self, idx: usize) -> SolveError {
        let m = self.grid.cells();
        let n = self.grid.n_side;
        SolveError::Overflow {
            component: idx / m,
            ix: (idx % m) % n,
            iy: (idx % m) / n,
        }
    }

    /// `out = f · ∂V(φ̄ + η)`.
    fn nonlinearity(&self, phibar: &[f64], out: &mut [f64]) -> Result<(), SolveError> {
        let m = self.grid.cells();
        let eta = &self.eta.values;
        if let Some(fam) = &self.scalar {
            for i in 0..phibar.len() {
                out[i] = self.fcell[i % m] * fam.scalar(phibar[i] + eta[i]).1;
            }
        } else {
            let n = self.grid.components;
            let mut y = vec![0.0; n];
            let mut g = vec![0.0; n];
            for c in 0..m {
                for k in 0..n {
                    y[k] = phibar[k * m + c] + eta[k * m + c];
                }
                self.p.grad(&y, &mut g);
                for k in 0..n {
                    out[k * m + c] = self.fcell[c] * g[k];
                }
            }
        }
        match out.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(self.overflow(i)),
            None => Ok(()),
        }
    }

    /// Per-cell `f · ∂²V(φ̄ + η)`, `n×n` blocks stored cell-major.
    fn hessian_blocks(&self, phibar: &[f64]) -> Vec<f64> {
        let m = self.grid.cells();
        let n = self.grid.components;
        let mut out = vec![0.0; m * n * n];
        let mut y = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        for c in 0..m {
            for k in 0..n {
                y[k] = phibar[k * m + c] + self.eta.values[k * m + c];
            }
            self.p.hess(&y, &mut h);
            for (o, v) in out[c * n * n..(c + 1) * n * n].iter_mut().zip(&h) {
                *o = self.fcell[c] * v;
            }
        }
        out
    }

    fn lattice_norm_from_fourier(&self, spec_sq_sum: f64) -> f64 {
        let a = self.grid.spacing();
        (a * a * spec_sq_sum / self.grid.cells() as f64).sqrt()
    }

    /// Residual `‖(m² − Δ)φ̄ + f ∂V(φ̄ + η)‖` evaluated in real space from scratch.
    fn residual(&self, phibar: &Field) -> Result<f64, SolveError> {
        let lhs = apply_fractional_inverse(phibar, -1.0);
        let mut g = vec![0.0; phibar.values.len()];
        self.nonlinearity(&phibar.values, &mut g)?;
        let a = self.grid.spacing();
        let s: f64 = lhs
            .values
            .iter()
            .zip(&g)
            .map(|(l, g)| (l + g).powi(2))
            .sum();
        Ok((a * a * s).sqrt())
    }

    fn apriori_bound(&self) -> Option<f64> {
        let h = self.p.qc_bound.as_ref()?;
        let m = self.grid.cells();
        let n = self.grid.components;
        let mut y = vec![0.0; n];
        let mut best = 0.0f64;
        for c in 0..m {
            for k in 0..n {
                y[k] = self.eta.values[k * m + c];
            }
            best = best.max(self.fcell[c] * h.eval(&y));
        }
        Some(best / self.grid.m2)
    }

    fn fixed_point(
        &self,
        start: Field,
        cfg: &SolveConfig,
    ) -> Result<(Field, f64, usize, bool), SolveError> {
        let grid = self.grid;
        let m = grid.cells();
        let n = grid.components;
        let mut phibar = start;
        let mut g = vec![0.0; grid.len()];
        let mut phi_hat: Vec<Vec<Complex64>> = vec![Vec::with_capacity(m); n];
        let mut g_hat: Vec<Complex64> = Vec::with_capacity(m);
        with_spectral(&grid, |s| {
            for k in 0..n {
                s.forward(phibar.component(k), &mut phi_hat[k]);
            }
        });
        let mut rho = cfg.damping;
        let mut prev = f64::INFINITY;
        let mut residual = f64::INFINITY;
        for it in 1..=cfg.max_iterations {
            self.nonlinearity(&phibar.values, &mut g)?;
            let mut sq = 0.0;
            let mut updates = Vec::with_capacity(n);
            with_spectral(&grid, |s| {
                for k in 0..n {
                    s.forward(&g[k * m..(k + 1) * m], &mut g_hat);
                    for ((ph, gh), l) in phi_hat[k].iter().zip(&g_hat).zip(&self.lap) {
                        sq += (ph * l + gh).norm_sqr();
                    }
                    updates.push(g_hat.clone());
                }
            });
            residual = self.lattice_norm_from_fourier(sq);
            if residual <= cfg.residual_tolerance {
                return Ok((phibar, residual, it, true));
            }
            if residual > prev {
                rho = (0.5 * rho).max(1e-6);
            }
            prev = residual;
            with_spectral(&grid, |s| {
                for k in 0..n {
                    for ((ph, gh), l) in phi_hat[k].iter_mut().zip(&updates[k]).zip(&self.lap) {
                        *ph = *ph * (1.0 - rho) - gh * (rho / l);
                    }
                    let mut tmp = phi_hat[k].clone();
                    s.inverse(&mut tmp, phibar.component_mut(k));
                }
            });
        }
        Ok((phibar, residual, cfg.max_iterations, false))
    }

    /// `(m² − Δ)v + D v` with `D` the per-cell Hessian blocks.
    fn apply_jacobian(&self, blocks: &[f64], v: &Field) -> Field {
        let mut out = apply_fractional_inverse(v, -1.0);
        self.add_blocks(blocks, v, &mut out, 1.0);
        out
    }

    fn add_blocks(&self, blocks: &[f64], v: &Field, out: &mut Field, scale: f64) {
        let m = self.grid.cells();
        let n = self.grid.components;
        for c in 0..m {
            let b = &blocks[c * n * n..(c + 1) * n * n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += b[i * n + j] * v.values[j * m + c];
                }
                out.values[i * m + c] += scale * acc;
            }
        }
    }

    fn dot(&self, a: &Field, b: &Field) -> f64 {
        let a2 = self.grid.spacing().powi(2);
        a2 * a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x * y)
            .sum::<f64>()
    }

    /// Preconditioned CG for `J δ = rhs` with `𝓘` as preconditioner.
    fn pcg(&self, blocks: &[f64], rhs: &Field, rel_tol: f64, max_iter: usize) -> Field {
        let mut x = Field::zeros(self.grid);
        let mut r = rhs.clone();
        let mut z = apply_fractional_inverse(&r, 1.0);
        let mut p = z.clone();
        let mut rz = self.dot(&r, &z);
        let r0 = self.dot(&r, &r).sqrt();
        if r0 == 0.0 {
            return x;
        }
        for _ in 0..max_iter {
            let ap = self.apply_jacobian(blocks, &p);
            let pap = self.dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..x.values.len() {
                x.values[i] += alpha * p.values[i];
                r.values[i] -= alpha * ap.values[i];
            }
            if self.dot(&r, &r).sqrt() <= rel_tol * r0 {
                break;
            }
            z = apply_fractional_inverse(&r, 1.0);
            let rz_new = self.dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.values.len() {
                p.values[i] = z.values[i] + beta * p.values[i];
            }
        }
        x
    }

    fn newton(
        &self,
        start: Field,
        cfg: &SolveConfig,
    ) -> Result<(Field, f64, usize, bool), SolveError> {
        let mut phibar = start;
        let mut residual = self.residual(&phibar)?;
        let mut g = vec![0.0; self.grid.len()];
        for it in 1..=cfg.max_iterations {
            if residual <= cfg.residual_tolerance {
                return Ok((phibar, residual, it, true));
            }
            let mut rvec = apply_fractional_inverse(&phibar, -1.0);
            self.nonlinearity(&phibar.values, &mut g)?;
            for (r, gv) in rvec.values.iter_mut().zip(&g) {
                *r = -(*r + gv);
            }
            let blocks = self.hessian_blocks(&phibar.values);
            let delta = self.pcg(&blocks, &rvec, 1e-10, 500);
            let mut step = 1.0;
            loop {
                let trial = phibar.add(&delta.scale(step));
                let r_trial = self.residual(&trial)?;
                if r_trial < residual || step < 1e-4 {
                    phibar = trial;
                    residual = r_trial;
                    break;
                }
                step *= 0.5;
            }
        }
        let converged = residual <= cfg.residual_tolerance;
        Ok((phibar, residual, cfg.max_iterations, converged))
    }

    fn run(&self, start: Field, cfg: &SolveConfig) -> Result<SolveReport, SolveError> {
        let (solution, _, iterations, converged) = match cfg.method {
            SolveMethod::FixedPoint => self.fixed_point(start, cfg)?,
            SolveMethod::Newton => self.newton(start, cfg)?,
        };
        let residual_norm = self.residual(&solution)?;
        let converged = converged && residual_norm <= cfg.residual_tolerance;
        let apriori_bound = self.apriori_bound();
        let apriori_satisfied =
            apriori_bound.map(|b| solution.sup_norm() <= b * (1.0 + cfg.apriori_slack) + 1e-12);
        let report = SolveReport {
            solution,
            i_xi: self.eta.clone(),
            residual_norm,
            iterations,
            converged,
            apriori_bound,
            apriori_satisfied,
            distinct_solutions: Vec::new(),
            start_clusters: Vec::new(),
        };
        if converged {
            Ok(report)
        } else {
            Err(SolveError::NonConvergence(Box::new(report)))
        }
    }
}

fn check_preconditions(p: &Potential, cfg: &SolveConfig) -> Result<(), SolveError> {
    cfg.validate().map_err(SolveError::Config)?;
    if !p.has(Tag::QC) {
        return Err(SolveError::NotQc);
    }
    if cfg.method == SolveMethod::Newton && !p.has(Tag::C) {
        return Err(SolveError::NewtonRequiresC);
    }
    Ok(())
}

/// `K(φ̄) = −𝓘(f ∂V(φ̄ + 𝓘ξ))`.
pub fn fixed_point_map(
    phibar: &Field,
    noise: &NoiseDraw,
    p: &Potential,
    f: &CutOff,
) -> Result<Field, SolveError> {
    let eta = apply_fractional_inverse(&noise.field, 1.0);
    let prob = Problem::new(&eta, p, f)?;
    let mut g = Field::zeros(eta.grid);
    prob.nonlinearity(&phibar.values, &mut g.values)?;
    Ok(apply_fractional_inverse(&g, 1.0).scale(-1.0))
}

/// Lattice `L²` norm of `(m² − Δ)φ̄ + f ∂V(φ̄ + 𝓘ξ)` for a given `𝓘ξ`.
pub fn residual_norm(
    phibar: &Field,
    i_xi: &Field,
    p: &Potential,
    f: &CutOff,
) -> Result<f64, SolveError> {
    Problem::new(i_xi, p, f)?.residual(phibar)
}

/// Solves from the zero start.
pub fn solve(
    noise: &NoiseDraw,
    p: &Potential,
    f: &CutOff,
    cfg: &SolveConfig,
) -> Result<SolveReport, SolveError> {
    let eta = apply_fractional_inverse(&noise.field, 1.0);
    solve_shifted(&eta, p, f, cfg)
}

/// Solves with a precomputed `𝓘ξ`.
pub fn solve_shifted(
    i_xi: &Field,
    p: &Potential,
    f: &CutOff,
    cfg: &SolveConfig,
) -> Result<SolveReport, SolveError> {
    check_preconditions(p, cfg)?;
    let prob = Problem::new(i_xi, p, f)?;
    prob.run(Field::zeros(i_xi.grid), cfg)
}

/// Multistart solve: the zero start plus `multistart_count` Gaussian starts, clustered by
/// sup-distance with radius `1e−3 (1 + ‖φ̄‖_sup)`.
pub fn count_solutions(
    noise: &NoiseDraw,
    p: &Potential,
    f: &CutOff,
    cfg: &SolveConfig,
) -> Result<SolveReport, SolveError> {
    let eta = apply_fractional_inverse(&noise.field, 1.0);
    count_solutions_shifted(&eta, p, f, cfg)
}

pub fn count_solutions_shifted(
    i_xi: &Field,
    p: &Potential,
    f: &CutOff,
    cfg: &SolveConfig,
) -> Result<SolveReport, SolveError> {
    check_preconditions(p, cfg)?;
    if cfg.multistart_count < 2 {
        return Err(SolveError::Config(
            "count_solutions needs multistart_count ≥ 2".into(),
        ));
    }
    let grid = i_xi.grid;
    let prob = Problem::new(i_xi, p, f)?;
    let mut starts = vec![Field::zeros(grid)];
    for s in 0..cfg.multistart_count {
        let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(cfg.start_seed, s as u64));
        let values = (0..grid.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.initial_scale * z
            })
            .collect();
        starts.push(Field { grid, values });
    }
    let mut first: Option<SolveReport> = None;
    let mut reps: Vec<Field> = Vec::new();
    let mut clusters = Vec::with_capacity(starts.len());
    for start in starts {
        let report = match prob.run(start, cfg) {
            Ok(r) => r,
            Err(SolveError::NonConvergence(r)) => {
                clusters.push(None);
                if first.is_none() {
                    first = Some(*r);
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let radius = 1e-3 * (1.0 + report.solution.sup_norm());
        let id = match reps
            .iter()
            .position(|r| r.sup_distance(&report.solution) <= radius)
        {
            Some(i) => i,
            None => {
                reps.push(report.solution.clone());
                reps.len() - 1
            }
        };
        clusters.push(Some(id));
        if first.as_ref().is_none_or(|f| !f.converged) {
            first = Some(report);
        }
    }
    let mut report = first.expect("at least one start");
    report.distinct_solutions = reps;
    report.start_clusters = clusters;
    if report.converged {
        Ok(report)
    } else {
        Err(SolveError::NonConvergence(Box::new(report)))
    }
}
