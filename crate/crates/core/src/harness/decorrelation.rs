//! Covariance between the origin observable and the boundary weight for flat-top cut-offs.

use super::estimate::{covariance, z_score, Estimate};
use super::{CutOffName, ExperimentConfig, HarnessError, Sampler};
use crate::fields::{apply_fractional_inverse, Field, GridSpec};
use crate::gibbs::Observable;
use crate::kernels::CutOff;
use serde::{Deserialize, Serialize};

/// `Σ_x a² f̃′(|x|²) G₂,lat(x)` with `G₂,lat` the lattice kernel of `(m² − Δ)^{−2}`.
pub fn lattice_boundary_covariance(grid: &GridSpec, f: &CutOff) -> f64 {
    let scalar = GridSpec {
        components: 1,
        ..*grid
    };
    let mut e = Field::zeros(scalar);
    e.values[0] = 1.0;
    // (𝓘²e₀)(x) = a² G₂,lat(x)
    let col = apply_fractional_inverse(&e, 2.0);
    (0..grid.cells())
        .map(|c| f.f_prime(grid.point(c)) * col.values[c])
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationRow {
    pub radius: f64,
    /// Exact lattice value (`V = 0` only).
    pub exact: Option<f64>,
    pub sampled: Estimate,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationReport {
    /// `φ₀(0)` against `a² Σ f̃′ φ₀` for `V = 0`; `h(φ(0))` against `log Υ_f` otherwise.
    pub pairing: String,
    pub rows: Vec<DecorrelationRow>,
}

/// One row per flat-top radius; `cfg.cutoff` supplies the skirt rate `b`.
pub fn run_decorrelation_probe(
    cfg: &ExperimentConfig,
    radii: &[f64],
    h: &Observable,
) -> Result<DecorrelationReport, HarnessError> {
    if cfg.cutoff.kind != CutOffName::FlatTop {
        return Err(HarnessError::Precondition(
            "the decorrelation probe needs a flat-top cut-off".into(),
        ));
    }
    let base = cfg.validate()?;
    let linear = base.potential.is_zero();
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let mut stage = cfg.clone();
        stage.cutoff.radius = radius;
        let sampler = Sampler::from_config(&stage)?;
        let samples = sampler.run(stage.replicas)?;
        super::check_convergence(&samples)?;
        let used: Vec<_> = samples.iter().filter(|s| s.converged).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = if linear {
            used.iter().map(|s| (s.phi0[0], s.boundary)).unzip()
        } else {
            used.iter()
                .map(|s| (h.eval(&s.phi0), s.log_upsilon))
                .unzip()
        };
        let sampled = covariance(&x, &y);
        let exact = linear.then(|| lattice_boundary_covariance(&stage.grid, &sampler.cutoff));
        let z = exact.map(|e| z_score(sampled.value, sampled.se, e, 0.0));
        rows.push(DecorrelationRow {
            radius,
            exact,
            sampled,
            z,
        });
    }
    let pairing = if linear {
        "phi(0) vs boundary pairing".to_string()
    } else {
        format!("{} vs log upsilon", h.tag())
    };
    Ok(DecorrelationReport { pairing, rows })
}

pub fn write_decorrelation_csv<W: std::io::Write>(
    r: &DecorrelationReport,
    w: W,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["radius", "exact", "sampled", "se", "z"])?;
    for row in &r.rows {
        out.write_record([
            row.radius.to_string(),
            row.exact.map(|v| format!("{v:.6e}")).unwrap_or_default(),
            format!("{:.6e}", row.sampled.value),
            format!("{:.3e}", row.sampled.se),
            row.z.map(|v| format!("{v:.3}")).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::CutOffConfig;
    use crate::kernels::{make_cutoff, CutOffKind};
    use crate::potentials::PotentialFamily;

    fn grid() -> GridSpec {
        GridSpec {
            l: 80.0,
            n_side: 128,
            components: 1,
            m2: 1.0,
        }
    }

    #[test]
    fn lattice_value_matches_direct_double_sum() {
        let g = GridSpec {
            l: 8.0,
            n_side: 16,
            components: 1,
            m2: 1.0,
        };
        let f = make_cutoff(CutOffKind::FlatTop { radius: 1.0 }, 1.0, 1.0).unwrap();
        let a2 = g.spacing().powi(2);
        let direct: f64 = (0..g.cells())
            .map(|c| a2 * f.f_prime(g.point(c)) * g.lattice_covariance(2.0, c))
            .sum();
        assert!((lattice_boundary_covariance(&g, &f) - direct).abs() < 1e-13);
    }

    #[test]
    fn covariance_decays_with_radius() {
        let g = grid();
        let at = |r: f64| {
            lattice_boundary_covariance(
                &g,
                &make_cutoff(CutOffKind::FlatTop { radius: r }, 1.0, 1.0).unwrap(),
            )
        };
        let c0 = at(0.0);
        assert!(c0 < -1e-3, "{c0}");
        let mut prev = c0.abs();
        for r in [2.0, 5.0, 10.0, 20.0] {
            let c = at(r).abs();
            assert!(c < prev);
            prev = c;
        }
        assert!(prev < 1e-6, "{prev}");
    }

    #[test]
    fn sampled_linear_covariance_matches_lattice_sum() {
        let cfg = ExperimentConfig {
            grid: GridSpec {
                l: 32.0,
                n_side: 64,
                components: 1,
                m2: 1.0,
            },
            potential: PotentialFamily::Zero,
            cutoff: CutOffConfig {
                kind: CutOffName::FlatTop,
                b: 1.0,
                radius: 0.0,
            },
            replicas: 2000,
            ..ExperimentConfig::quartic_default()
        };
        let r = run_decorrelation_probe(
            &cfg,
            &[0.0, 1.0],
            &Observable::Monomial {
                component: 0,
                power: 2,
            },
        )
        .unwrap();
        for row in &r.rows {
            assert!(row.z.unwrap().abs() < 4.0, "{row:?}");
        }
    }
}
