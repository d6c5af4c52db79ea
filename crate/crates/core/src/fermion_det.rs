//! Fredholm determinants `det(I + 𝔎_g)` of kernels `𝔎_g(x, x′) = g(x) S(x − x′)` on `ℝ²`,
//! by truncated Fredholm series and by a Nyström matrix determinant.

use crate::kernels::CutOff;
use crate::quadrature::composite_gauss_legendre;
use crate::superspace::{radial_breaks, SuperCovariance, SuperspaceError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Highest Fredholm order accepted by [`fredholm_series`].
pub const MAX_SERIES_ORDER: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum FermionError {
    #[error("series order {order} exceeds the cost guard {max}")]
    OrderTooHigh { order: usize, max: usize },
    #[error("invalid discretization: {0}")]
    Discretization(String),
    #[error(transparent)]
    Superspace(#[from] SuperspaceError),
}

type Radial = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Planar = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Spatial weight `g`.
#[derive(Clone)]
pub enum Weight {
    /// `g(x) = g̃(|x|)`; enables the rotation-symmetric block decomposition.
    Radial(Radial),
    General(Planar),
}

impl Weight {
    fn at(&self, x: [f64; 2]) -> f64 {
        match self {
            Weight::Radial(g) => g(x[0].hypot(x[1])),
            Weight::General(g) => g(x),
        }
    }
}

/// Polar node layout: composite Gauss in `r`, `angles` equispaced angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub radius: f64,
    pub radial_order: usize,
    pub angles: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            radius: 20.0,
            radial_order: 10,
            angles: 48,
        }
    }
}

/// `𝔎_g(x, x′) = g(x) S(|x − x′|)` with its quadrature nodes.
#[derive(Clone)]
pub struct FermionKernel {
    pub label: String,
    pub g: Weight,
    pub s: Radial,
    pub disc: Discretization,
    radii: Vec<f64>,
    /// Node weights per radius (`r dr dφ`).
    ring_weights: Vec<f64>,
}

impl std::fmt::Debug for FermionKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FermionKernel")
            .field("label", &self.label)
            .field("disc", &self.disc)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    /// Magnitude of the last included term.
    pub last_term: f64,
}

impl FermionKernel {
    pub fn new(
        label: impl Into<String>,
        g: Weight,
        s: Radial,
        disc: Discretization,
    ) -> Result<Self, FermionError> {
        if !(disc.radius > 0.0) || disc.radial_order == 0 || disc.angles < 4 {
            return Err(FermionError::Discretization(format!("{disc:?}")));
        }
        let (radii, wr) = composite_gauss_legendre(&radial_breaks(disc.radius), disc.radial_order);
        let dphi = 2.0 * PI / disc.angles as f64;
        let ring_weights = radii.iter().zip(&wr).map(|(r, w)| r * w * dphi).collect();
        Ok(Self {
            label: label.into(),
            g,
            s,
            disc,
            radii,
            ring_weights,
        })
    }

    /// `g = amplitude · f` for a cut-off and `S = ϖ G_{1+2χ}`.
    pub fn cutoff_weighted(
        f: &CutOff,
        amplitude: f64,
        chi: f64,
        disc: Discretization,
    ) -> Result<Self, FermionError> {
        let cov = Arc::new(SuperCovariance::new(chi, f.m2)?);
        let f = f.clone();
        Self::new(
            format!("{amplitude}·f, S=ϖG(χ={chi})"),
            Weight::Radial(Arc::new(move |r| amplitude * f.radial(r))),
            Arc::new(move |r| cov.psi_psibar(r)),
            disc,
        )
    }

    pub fn nodes(&self) -> Vec<([f64; 2], f64)> {
        let dphi = 2.0 * PI / self.disc.angles as f64;
        let mut out = Vec::with_capacity(self.radii.len() * self.disc.angles);
        for (r, w) in self.radii.iter().zip(&self.ring_weights) {
            for j in 0..self.disc.angles {
                let phi = (j as f64 + 0.5) * dphi;
                out.push(([r * phi.cos(), r * phi.sin()], *w));
            }
        }
        out
    }

    /// `Σ |g(xᵢ)| S(0) wᵢ`, the trace-norm surrogate.
    pub fn trace_bound(&self) -> f64 {
        let s0 = (self.s)(0.0).abs();
        self.nodes()
            .iter()
            .map(|(x, w)| self.g.at(*x).abs() * s0 * w)
            .sum()
    }

    /// Symmetrized node matrix `W^{1/2} K W^{1/2}`.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let nodes = self.nodes();
        let n = nodes.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (xi, wi) = nodes[i];
            let (xj, wj) = nodes[j];
            (wi * wj).sqrt() * self.g.at(xi) * (self.s)((xi[0] - xj[0]).hypot(xi[1] - xj[1]))
        })
    }

    /// Diagonal blocks of the matrix in angular Fourier modes (radial `g` only).
    fn angular_blocks(&self, g: &Radial) -> Vec<DMatrix<f64>> {
        let nr = self.radii.len();
        let na = self.disc.angles;
        let dphi = 2.0 * PI / na as f64;
        let gr: Vec<f64> = self.radii.iter().map(|r| g(*r)).collect();
        let sw: Vec<f64> = self.ring_weights.iter().map(|w| w.sqrt()).collect();
        let cosd: Vec<f64> = (0..na).map(|d| (d as f64 * dphi).cos()).collect();
        // m_ab(δ) for every angular offset δ.
        let mut offsets = vec![0.0; nr * nr * na];
        for a in 0..nr {
            for b in 0..nr {
                let (ra, rb) = (self.radii[a], self.radii[b]);
                for (d, c) in cosd.iter().enumerate() {
                    let dist = (ra * ra + rb * rb - 2.0 * ra * rb * c).max(0.0).sqrt();
                    offsets[(a * nr + b) * na + d] = sw[a] * gr[a] * (self.s)(dist) * sw[b];
                }
            }
        }
        (0..na)
            .map(|m| {
                let phase: Vec<f64> = (0..na)
                    .map(|d| (2.0 * PI * (m * d % na) as f64 / na as f64).cos())
                    .collect();
                DMatrix::from_fn(nr, nr, |a, b| {
                    offsets[(a * nr + b) * na..(a * nr + b + 1) * na]
                        .iter()
                        .zip(&phase)
                        .map(|(v, p)| v * p)
                        .sum()
                })
            })
            .collect()
    }

    /// `Tr(M^j)` for `j = 1..=order`.
    pub fn power_traces(&self, order: usize) -> Vec<f64> {
        let blocks = match &self.g {
            Weight::Radial(g) => self.angular_blocks(g),
            Weight::General(_) => vec![self.dense_matrix()],
        };
        let mut traces = vec![0.0; order];
        for b in &blocks {
            let mut p = b.clone();
            for t in traces.iter_mut() {
                *t += p.trace();
                p = &p * b;
            }
        }
        traces
    }
}

/// `Σ_{n ≤ order} (1/n!) ∫ det[g(xᵢ) S(xᵢ − xⱼ)] dx₁⋯dxₙ` on the kernel's nodes.
///
/// The `n`-fold node sums equal the elementary symmetric functions of the node matrix, which
/// Newton's identities produce from `Tr(Mʲ)`.
pub fn fredholm_series(k: &FermionKernel, order: usize) -> Result<SeriesValue, FermionError> {
    if order > MAX_SERIES_ORDER {
        return Err(FermionError::OrderTooHigh {
            order,
            max: MAX_SERIES_ORDER,
        });
    }
    let terms = series_terms(&k.power_traces(order), order);
    Ok(SeriesValue {
        value: terms.iter().sum(),
        last_term: terms.last().copied().unwrap_or(1.0).abs(),
    })
}

/// `e₀ … e_order` from power sums.
pub fn series_terms(traces: &[f64], order: usize) -> Vec<f64> {
    let mut e = vec![1.0];
    for n in 1..=order {
        let mut acc = 0.0;
        for j in 1..=n {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e[n - j] * traces[j - 1];
        }
        e.push(acc / n as f64);
    }
    e
}

/// `det(I + W^{1/2} K W^{1/2})`.
pub fn kernel_determinant(k: &FermionKernel) -> f64 {
    match &k.g {
        Weight::Radial(g) => {
            let mut logabs = 0.0;
            let mut sign = 1.0;
            for b in k.angular_blocks(g) {
                let n = b.nrows();
                let d = (DMatrix::identity(n, n) + b).lu().determinant();
                sign *= d.signum();
                logabs += d.abs().ln();
            }
            sign * logabs.exp()
        }
        Weight::General(_) => {
            let m = k.dense_matrix();
            let n = m.nrows();
            (DMatrix::identity(n, n) + m).lu().determinant()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub amplitude: f64,
    pub series: f64,
    pub determinant: f64,
    pub gap: f64,
    pub truncation: f64,
    pub trace_bound: f64,
}

impl SweepRow {
    /// `|det − series| ≤ 2 · last term`.
    pub fn within_truncation(&self) -> bool {
        self.gap <= 2.0 * self.truncation
    }
}

/// Series against determinant for `g = a·f`, `a` over `amplitudes`.
pub fn amplitude_sweep(
    f: &CutOff,
    chi: f64,
    amplitudes: &[f64],
    order: usize,
    disc: Discretization,
) -> Result<Vec<SweepRow>, FermionError> {
    amplitudes
        .iter()
        .map(|&a| {
            let k = FermionKernel::cutoff_weighted(f, a, chi, disc)?;
            let s = fredholm_series(&k, order)?;
            let d = kernel_determinant(&k);
            Ok(SweepRow {
                amplitude: a,
                series: s.value,
                determinant: d,
                gap: (d - s.value).abs(),
                truncation: s.last_term,
                trace_bound: k.trace_bound(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["amplitude", "series", "determinant", "gap", "truncation"])?;
    for r in rows {
        out.write_record([
            format!("{}", r.amplitude),
            format!("{:.17e}", r.series),
            format!("{:.17e}", r.determinant),
            format!("{:.3e}", r.gap),
            format!("{:.3e}", r.truncation),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_cutoff, CutOffKind};

    fn small_disc() -> Discretization {
        Discretization {
            radius: 3.0,
            radial_order: 2,
            angles: 4,
        }
    }

    fn cutoff() -> CutOff {
        make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_weight_gives_one() {
        let k = FermionKernel::cutoff_weighted(&cutoff(), 0.0, 0.5, small_disc()).unwrap();
        assert_eq!(kernel_determinant(&k), 1.0);
        for order in 0..=5 {
            assert_eq!(fredholm_series(&k, order).unwrap().value, 1.0);
        }
    }

    #[test]
    fn first_order_is_trace() {
        let f = cutoff();
        let k = FermionKernel::cutoff_weighted(&f, 0.7, 0.5, small_disc()).unwrap();
        let s0 = (k.s)(0.0);
        let direct: f64 = k.nodes().iter().map(|(x, w)| 0.7 * f.f(*x) * s0 * w).sum();
        assert!((fredholm_series(&k, 1).unwrap().value - 1.0 - direct).abs() < 1e-14);
    }

    fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
        if n == 0 {
            return vec![(vec![], 1.0)];
        }
        let mut out = Vec::new();
        for (p, s) in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                let sign = if (p.len() - pos) % 2 == 0 { s } else { -s };
                out.push((q, sign));
            }
        }
        out
    }

    #[test]
    fn newton_route_matches_tensor_sums() {
        // (1/n!) Σ_{i₁…iₙ} ∏ w det[g(x_a) S(x_a − x_b)] by brute force over all index tuples.
        let f = cutoff();
        for g in [
            Weight::Radial(Arc::new(move |r| 0.8 * f.radial(r))),
            Weight::General(Arc::new(|x: [f64; 2]| 0.5 + 0.3 * x[0] - 0.1 * x[1] * x[1])),
        ] {
            let k = FermionKernel::new(
                "t",
                g.clone(),
                Arc::new(|r: f64| 0.3 * (-r).exp()),
                small_disc(),
            )
            .unwrap();
            let nodes = k.nodes();
            let p = nodes.len();
            let kern = |i: usize, j: usize| {
                let (xi, _) = nodes[i];
                let (xj, _) = nodes[j];
                g.at(xi) * 0.3 * (-(xi[0] - xj[0]).hypot(xi[1] - xj[1])).exp()
            };
            let terms = series_terms(&k.power_traces(3), 3);
            for n in 1..=3usize {
                let perms = permutations(n);
                let mut total = 0.0;
                for flat in 0..p.pow(n as u32) {
                    let idx: Vec<usize> = (0..n).map(|a| flat / p.pow(a as u32) % p).collect();
                    let w: f64 = idx.iter().map(|i| nodes[*i].1).product();
                    let det: f64 = perms
                        .iter()
                        .map(|(pi, s)| {
                            s * (0..n).map(|a| kern(idx[a], idx[pi[a]])).product::<f64>()
                        })
                        .sum();
                    total += w * det;
                }
                let fact: f64 = (1..=n).map(|v| v as f64).product();
                total /= fact;
                assert!(
                    (total - terms[n]).abs() < 1e-12 * (1.0 + total.abs()),
                    "n={n}: {total} vs {}",
                    terms[n]
                );
            }
        }
    }

    #[test]
    fn block_route_matches_dense_route() {
        let f = cutoff();
        let disc = Discretization {
            radius: 6.0,
            radial_order: 4,
            angles: 12,
        };
        let k = FermionKernel::cutoff_weighted(&f, 0.9, 0.5, disc).unwrap();
        let dense = (DMatrix::identity(k.nodes().len(), k.nodes().len()) + k.dense_matrix())
            .lu()
            .determinant();
        assert!((kernel_determinant(&k) - dense).abs() < 1e-12);
        let m = k.dense_matrix();
        let traces = k.power_traces(3);
        assert!((traces[1] - (&m * &m).trace()).abs() < 1e-12);
    }

    #[test]
    fn rank_one_kernel_is_exact() {
        let f = cutoff();
        let c = 0.37;
        let disc = Discretization {
            radius: 8.0,
            radial_order: 4,
            angles: 8,
        };
        let ff = f.clone();
        let k = FermionKernel::new(
            "const",
            Weight::General(Arc::new(move |x| ff.f(x))),
            Arc::new(move |_| c),
            disc,
        )
        .unwrap();
        let integral: f64 = k.nodes().iter().map(|(x, w)| f.f(*x) * c * w).sum();
        assert!((kernel_determinant(&k) - (1.0 + integral)).abs() < 1e-10);
    }

    #[test]
    fn series_agrees_with_determinant_across_amplitudes() {
        let rows = amplitude_sweep(
            &cutoff(),
            0.5,
            &[0.0, 0.25, 0.5, 0.75, 1.0],
            5,
            Discretization::default(),
        )
        .unwrap();
        for r in &rows {
            assert!(r.within_truncation(), "{r:?}");
            assert!(r.determinant.abs() <= r.trace_bound.exp());
        }
    }

    #[test]
    fn determinant_stable_under_refinement() {
        let f = cutoff();
        let base = kernel_determinant(
            &FermionKernel::cutoff_weighted(&f, 1.0, 0.5, Discretization::default()).unwrap(),
        );
        let fine = Discretization {
            radius: 24.0,
            radial_order: 14,
            angles: 64,
        };
        let refined =
            kernel_determinant(&FermionKernel::cutoff_weighted(&f, 1.0, 0.5, fine).unwrap());
        assert!(
            ((refined - base) / base).abs() < 1e-7,
            "{base} vs {refined}"
        );
    }

    #[test]
    fn order_guard() {
        let k = FermionKernel::cutoff_weighted(&cutoff(), 0.5, 0.5, small_disc()).unwrap();
        assert!(matches!(
            fredholm_series(&k, 7),
            Err(FermionError::OrderTooHigh { .. })
        ));
    }
}
