//! Unweighted `φ(0)` statistics along a decreasing sequence of cut-off rates.

use super::{
    analyze, ExperimentConfig, HarnessError, HistogramSurrogate, ObservableEstimate, Sampler,
};
use crate::fields::GridSpec;
use crate::kernels::make_cutoff;
use crate::potentials::Tag;
use serde::{Deserialize, Serialize};

/// Largest side the trend will grow a grid to.
pub const MAX_TREND_SIDE: usize = 1024;

/// Doubles `L` and `N` together (fixed spacing) until the torus guard holds for rate `b`.
pub fn trend_grid(
    base: &GridSpec,
    cfg: &ExperimentConfig,
    b: f64,
) -> Result<GridSpec, HarnessError> {
    let f = make_cutoff(cfg.cutoff.kind(), b, base.m2)
        .map_err(|e| HarnessError::Precondition(format!("b = {b}: {e}")))?;
    let mut g = *base;
    while !f.torus_guard(g.l) {
        if g.n_side * 2 > MAX_TREND_SIDE {
            return Err(HarnessError::Precondition(format!(
                "b = {b} needs a torus wider than N = {MAX_TREND_SIDE} allows"
            )));
        }
        g.l *= 2.0;
        g.n_side *= 2;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub b: f64,
    pub l: f64,
    pub n_side: usize,
    /// Largest `|z|` over the monomials.
    pub distance: f64,
    pub histogram: Option<HistogramSurrogate>,
    pub estimates: Vec<ObservableEstimate>,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    /// Allowed increase between consecutive rows, in standard errors.
    pub tolerance_se: f64,
    /// `distance[k+1] ≤ distance[k] + tolerance_se` for all `k`.
    pub nonincreasing: bool,
}

/// Runs one unweighted experiment per `b` in `b_sequence` (strictly decreasing).
pub fn run_cutoff_removal_trend(
    cfg: &ExperimentConfig,
    b_sequence: &[f64],
) -> Result<TrendReport, HarnessError> {
    if b_sequence.is_empty() || b_sequence.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HarnessError::Precondition(
            "b sequence must be nonempty and strictly decreasing".into(),
        ));
    }
    let base = cfg.validate()?;
    if !base.potential.has(Tag::C) {
        return Err(HarnessError::Precondition(
            "cut-off removal needs a potential tagged C".into(),
        ));
    }
    let mut rows = Vec::with_capacity(b_sequence.len());
    for &b in b_sequence {
        let mut stage = cfg.clone();
        stage.cutoff.b = b;
        stage.grid = trend_grid(&cfg.grid, cfg, b)?;
        let sampler = Sampler::from_config(&stage)?;
        let samples = sampler.run(stage.replicas)?;
        let r = analyze(&stage, &sampler.potential, &sampler.cutoff, &samples, false)?;
        rows.push(TrendRow {
            b,
            l: stage.grid.l,
            n_side: stage.grid.n_side,
            distance: r.max_abs_z,
            histogram: r.histogram,
            estimates: r.estimates,
            excluded: r.diagnostics.excluded,
        });
    }
    let tolerance_se = 2.0;
    let nonincreasing = rows
        .windows(2)
        .all(|w| w[1].distance <= w[0].distance + tolerance_se);
    Ok(TrendReport {
        rows,
        tolerance_se,
        nonincreasing,
    })
}

pub fn write_trend_csv<W: std::io::Write>(r: &TrendReport, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "b",
        "l",
        "n_side",
        "distance",
        "total_variation",
        "chi2",
        "dof",
    ])?;
    for row in &r.rows {
        let h = row.histogram;
        out.write_record([
            row.b.to_string(),
            row.l.to_string(),
            row.n_side.to_string(),
            format!("{:.6}", row.distance),
            h.map(|h| format!("{:.6}", h.total_variation))
                .unwrap_or_default(),
            h.map(|h| format!("{:.4}", h.chi2)).unwrap_or_default(),
            h.map(|h| h.dof.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialFamily;

    fn cfg(family: PotentialFamily) -> ExperimentConfig {
        ExperimentConfig {
            grid: GridSpec {
                l: 8.0,
                n_side: 16,
                components: 1,
                m2: 1.0,
            },
            potential: family,
            replicas: 200,
            ..ExperimentConfig::quartic_default()
        }
    }

    #[test]
    fn grid_grows_until_guard_holds() {
        let c = cfg(PotentialFamily::Zero);
        let g = trend_grid(&c.grid, &c, 1.0).unwrap();
        assert_eq!((g.l, g.n_side), (32.0, 64));
        assert_eq!(g.spacing(), c.grid.spacing());
        assert_eq!(trend_grid(&c.grid, &c, 0.5).unwrap().l, 64.0);
    }

    #[test]
    fn single_b_gives_one_row() {
        let r = run_cutoff_removal_trend(&cfg(PotentialFamily::Zero), &[1.0]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.nonincreasing);
    }

    #[test]
    fn zero_potential_sits_at_noise_floor() {
        let mut c = cfg(PotentialFamily::Zero);
        c.observables.bins = 0;
        let r = run_cutoff_removal_trend(&c, &[1.0, 0.5]).unwrap();
        for row in &r.rows {
            let g = GridSpec {
                l: row.l,
                n_side: row.n_side,
                components: 1,
                m2: 1.0,
            };
            let y2 = row.estimates.iter().find(|e| e.tag == "y0^2").unwrap();
            assert!(((y2.estimate - g.lattice_covariance(2.0, 0)) / y2.se).abs() < 4.0);
        }
    }

    #[test]
    fn rejects_unordered_sequence() {
        assert!(run_cutoff_removal_trend(&cfg(PotentialFamily::Zero), &[0.5, 1.0]).is_err());
    }
}
