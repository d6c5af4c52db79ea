//! Grassmann algebra, superfunctions on `ℝ² × {θ, θ̄}`, the supersymmetry generators and
//! the superfield Wick engine used to check the polynomial localization identity.
//!
//! Conventions: `F = f_∅ + θ f_θ + θ̄ f_θ̄ + θθ̄ f_θθ̄`, `∫ θθ̄ dθ dθ̄ = −1`, derivatives in
//! `θ, θ̄` act from the left.

use crate::kernels::{green_kernel, green_kernel_at_origin, CutOff, KernelError, KernelTable};
use crate::quadrature::{
    adaptive_semi_infinite, composite_gauss_legendre, gauss_legendre_interval,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

/// Largest number of superfield insertions accepted by the Wick engine.
pub const MAX_INSERTIONS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum SuperspaceError {
    #[error("{count} insertions exceed the pairing guard of {max}")]
    TooManyInsertions { count: usize, max: usize },
    #[error("generator index {index} out of range for {count} generators")]
    Generator { index: usize, count: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "quadrature did not converge: estimate {estimate}, change under refinement {change:e}"
    )]
    Quadrature { estimate: f64, change: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Element of the real Grassmann algebra on `k ≤ 64` generators, sparse in monomials.
///
/// A monomial is a bitmask; its generators are multiplied in increasing index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannElement {
    k: usize,
    coeffs: BTreeMap<u64, f64>,
}

fn reorder_sign(a: u64, b: u64) -> f64 {
    let mut swaps = 0u32;
    let mut rest = b;
    while rest != 0 {
        let j = rest.trailing_zeros();
        swaps += (a >> (j + 1)).count_ones();
        rest &= rest - 1;
    }
    if swaps % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl GrassmannElement {
    pub fn zero(k: usize) -> Self {
        assert!(k <= 64, "at most 64 generators");
        Self {
            k,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn scalar(k: usize, c: f64) -> Self {
        Self::monomial(k, 0, c)
    }

    pub fn monomial(k: usize, mask: u64, c: f64) -> Self {
        let mut e = Self::zero(k);
        if c != 0.0 {
            e.coeffs.insert(mask, c);
        }
        e
    }

    pub fn generator(k: usize, i: usize) -> Self {
        assert!(i < k, "generator {i} out of range for {k}");
        Self::monomial(k, 1 << i, 1.0)
    }

    pub fn generators(&self) -> usize {
        self.k
    }

    pub fn coefficient(&self, mask: u64) -> f64 {
        self.coeffs.get(&mask).copied().unwrap_or(0.0)
    }

    pub fn body(&self) -> f64 {
        self.coefficient(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.coeffs.iter().map(|(m, c)| (*m, *c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.coeffs {
            *out.coeffs.entry(*m).or_insert(0.0) += c;
        }
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.values_mut().for_each(|c| *c *= s);
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k, "generator counts differ");
        let mut out = Self::zero(self.k);
        for (&a, &ca) in &self.coeffs {
            for (&b, &cb) in &other.coeffs {
                if a & b == 0 {
                    *out.coeffs.entry(a | b).or_insert(0.0) += reorder_sign(a, b) * ca * cb;
                }
            }
        }
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }

    /// Largest coefficient difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other)
            .coeffs
            .values()
            .fold(0.0, |m, c| m.max(c.abs()))
    }

    /// `r(self)` for smooth `r` given its derivatives `r⁽ʲ⁾(body)`, `j = 0, 1, …`.
    /// Terms beyond the supplied derivatives are dropped.
    pub fn apply_smooth(&self, derivatives: &[f64]) -> Self {
        let mut nil = self.clone();
        nil.coeffs.remove(&0);
        let mut out = Self::zero(self.k);
        let mut power = Self::scalar(self.k, 1.0);
        let mut fact = 1.0;
        for (j, d) in derivatives.iter().enumerate() {
            if j > 0 {
                power = power.mul(&nil);
                fact *= j as f64;
            }
            if power.is_zero() {
                break;
            }
            out = out.add(&power.scale(d / fact));
        }
        out
    }
}

type Component = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// `F = f_∅ + θ f_θ + θ̄ f_θ̄ + θθ̄ f_θθ̄` with scalar coefficient functions on `ℝ²`.
#[derive(Clone)]
pub struct SuperFunction {
    pub label: String,
    pub f_empty: Component,
    pub f_theta: Component,
    pub f_thetabar: Component,
    pub f_tt: Component,
}

impl std::fmt::Debug for SuperFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SuperFunction({})", self.label)
    }
}

fn zero_component() -> Component {
    Arc::new(|_| 0.0)
}

/// Fourth-order central difference of `g` along axis `mu`.
fn partial(g: &Component, x: [f64; 2], mu: usize) -> f64 {
    let h = 1e-3;
    let at = |s: f64| {
        let mut y = x;
        y[mu] += s;
        g(y)
    };
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

fn second_partial(g: &Component, x: [f64; 2], mu: usize, nu: usize) -> f64 {
    let h = 1e-3;
    let shifted = |s: f64| {
        let mut y = x;
        y[nu] += s;
        y
    };
    (partial(g, shifted(h), mu) - partial(g, shifted(-h), mu)) / (2.0 * h)
}

impl SuperFunction {
    pub fn new(
        label: impl Into<String>,
        f_empty: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        f_theta: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        f_thetabar: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        f_tt: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            f_empty: Arc::new(f_empty),
            f_theta: Arc::new(f_theta),
            f_thetabar: Arc::new(f_thetabar),
            f_tt: Arc::new(f_tt),
        }
    }

    /// `g̃(|x|² + 4θθ̄) = g̃(|x|²) + 4 g̃′(|x|²) θθ̄`.
    pub fn radial_profile(
        label: impl Into<String>,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            f_empty: Arc::new(move |x: [f64; 2]| g(x[0] * x[0] + x[1] * x[1])),
            f_theta: zero_component(),
            f_thetabar: zero_component(),
            f_tt: Arc::new(move |x: [f64; 2]| 4.0 * g_prime(x[0] * x[0] + x[1] * x[1])),
        }
    }

    /// `|x|² + 4θθ̄`.
    pub fn quadratic_form() -> Self {
        Self::radial_profile("|x|^2+4θθ̄", |s| s, |_| 1.0)
    }

    /// `f̃(|x|² + 4θθ̄)` for a cut-off.
    pub fn of_cutoff(f: &CutOff) -> Self {
        let (a, b) = (f.clone(), f.clone());
        Self::radial_profile("cutoff", move |s| a.f_tilde(s), move |s| b.f_tilde_prime(s))
    }

    pub fn values(&self, x: [f64; 2]) -> [f64; 4] {
        [
            (self.f_empty)(x),
            (self.f_theta)(x),
            (self.f_thetabar)(x),
            (self.f_tt)(x),
        ]
    }

    fn components(&self) -> [&Component; 4] {
        [&self.f_empty, &self.f_theta, &self.f_thetabar, &self.f_tt]
    }

    /// `F` at a point with body `x` as an element on generators `theta`, `thetabar`.
    pub fn at(&self, x: [f64; 2], k: usize, theta: usize, thetabar: usize) -> GrassmannElement {
        let point = SuperPoint {
            x: [
                GrassmannElement::scalar(k, x[0]),
                GrassmannElement::scalar(k, x[1]),
            ],
            theta: GrassmannElement::generator(k, theta),
            thetabar: GrassmannElement::generator(k, thetabar),
        };
        self.evaluate(&point)
    }

    /// `F` at a Grassmann-valued point, Taylor-expanded to second order in the nilpotent
    /// part of `x`.
    pub fn evaluate(&self, p: &SuperPoint) -> GrassmannElement {
        let k = p.theta.generators();
        let x0 = [p.x[0].body(), p.x[1].body()];
        let nil = [
            p.x[0].sub(&GrassmannElement::scalar(k, x0[0])),
            p.x[1].sub(&GrassmannElement::scalar(k, x0[1])),
        ];
        let expand = |g: &Component| {
            let mut out = GrassmannElement::scalar(k, g(x0));
            for mu in 0..2 {
                if nil[mu].is_zero() {
                    continue;
                }
                out = out.add(&nil[mu].scale(partial(g, x0, mu)));
                for nu in 0..2 {
                    let prod = nil[mu].mul(&nil[nu]);
                    if !prod.is_zero() {
                        out = out.add(&prod.scale(0.5 * second_partial(g, x0, mu, nu)));
                    }
                }
            }
            out
        };
        let [fe, ft, ftb, ftt] = self.components();
        expand(fe)
            .add(&p.theta.mul(&expand(ft)))
            .add(&p.thetabar.mul(&expand(ftb)))
            .add(&p.theta.mul(&p.thetabar).mul(&expand(ftt)))
    }
}

/// Point of superspace with Grassmann-valued coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperPoint {
    pub x: [GrassmannElement; 2],
    pub theta: GrassmannElement,
    pub thetabar: GrassmannElement,
}

impl SuperPoint {
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.x[0]
            .max_abs_diff(&other.x[0])
            .max(self.x[1].max_abs_diff(&other.x[1]))
            .max(self.theta.max_abs_diff(&other.theta))
            .max(self.thetabar.max_abs_diff(&other.thetabar))
    }
}

/// Flow generated by `ρ(b̄·Q + b·Q̄)` at time `t` with odd parameter `ρ = θ_rho`:
/// `x ↦ x + 2tρ(b̄θ + bθ̄)`, `θ ↦ θ − t(x·b)ρ`, `θ̄ ↦ θ̄ + t(x·b̄)ρ`.
pub fn tau_flow(p: &SuperPoint, b: [f64; 2], bbar: [f64; 2], t: f64, rho: usize) -> SuperPoint {
    let k = p.theta.generators();
    let r = GrassmannElement::generator(k, rho).scale(t);
    let x = [0, 1].map(|mu| {
        let odd = p.theta.scale(bbar[mu]).add(&p.thetabar.scale(b[mu]));
        p.x[mu].add(&r.mul(&odd).scale(2.0))
    });
    let xb = p.x[0].scale(b[0]).add(&p.x[1].scale(b[1]));
    let xbbar = p.x[0].scale(bbar[0]).add(&p.x[1].scale(bbar[1]));
    SuperPoint {
        x,
        theta: p.theta.sub(&xb.mul(&r)),
        thetabar: p.thetabar.add(&xbbar.mul(&r)),
    }
}

/// `QF` (or `Q̄F`), one superfunction per spatial index.
///
/// `QF = 2θ∇f_∅ + x f_θ̄ + 2∇f_θ̄ θθ̄ − x f_θθ̄ θ`,
/// `Q̄F = 2θ̄∇f_∅ − x f_θ − 2∇f_θ θθ̄ − x f_θθ̄ θ̄`.
pub fn apply_q(f: &SuperFunction, conjugated: bool) -> [SuperFunction; 2] {
    [0usize, 1].map(|mu| {
        let (fe, ft, ftb, ftt) = (
            f.f_empty.clone(),
            f.f_theta.clone(),
            f.f_thetabar.clone(),
            f.f_tt.clone(),
        );
        let label = format!(
            "{}{}[{}]",
            if conjugated { "Q̄" } else { "Q" },
            mu + 1,
            f.label
        );
        let grad_part: Component =
            Arc::new(move |x: [f64; 2]| 2.0 * partial(&fe, x, mu) - x[mu] * ftt(x));
        if !conjugated {
            let ftb2 = ftb.clone();
            SuperFunction {
                label,
                f_empty: Arc::new(move |x: [f64; 2]| x[mu] * ftb(x)),
                f_theta: grad_part,
                f_thetabar: zero_component(),
                f_tt: Arc::new(move |x: [f64; 2]| 2.0 * partial(&ftb2, x, mu)),
            }
        } else {
            let ft2 = ft.clone();
            SuperFunction {
                label,
                f_empty: Arc::new(move |x: [f64; 2]| -x[mu] * ft(x)),
                f_theta: zero_component(),
                f_thetabar: grad_part,
                f_tt: Arc::new(move |x: [f64; 2]| -2.0 * partial(&ft2, x, mu)),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusyReport {
    pub label: String,
    pub passed: bool,
    pub tolerance: f64,
    pub max_q: f64,
    pub max_qbar: f64,
    pub max_rotation: f64,
    pub probe_points: usize,
    pub first_failure: Option<String>,
}

const COMPONENT_NAMES: [&str; 4] = ["∅", "θ", "θ̄", "θθ̄"];

/// Probes `QF`, `Q̄F` and rotation invariance on a square lattice of side `2·extent`.
pub fn susy_check(
    f: &SuperFunction,
    tolerance: f64,
    extent: f64,
    points_per_side: usize,
) -> SusyReport {
    let q = apply_q(f, false);
    let qbar = apply_q(f, true);
    let mut report = SusyReport {
        label: f.label.clone(),
        passed: true,
        tolerance,
        max_q: 0.0,
        max_qbar: 0.0,
        max_rotation: 0.0,
        probe_points: 0,
        first_failure: None,
    };
    let step = 2.0 * extent / (points_per_side - 1).max(1) as f64;
    let angles = [0.37, 1.1, PI / 2.0, 2.6];
    for iy in 0..points_per_side {
        for ix in 0..points_per_side {
            let x = [-extent + ix as f64 * step, -extent + iy as f64 * step];
            report.probe_points += 1;
            let note = |report: &mut SusyReport, what: String, v: f64| {
                if v > tolerance && report.first_failure.is_none() {
                    report.first_failure =
                        Some(format!("{what} = {v:e} at ({:.3}, {:.3})", x[0], x[1]));
                }
            };
            for (gen, slot) in [(&q, 0), (&qbar, 1)] {
                for (mu, g) in gen.iter().enumerate() {
                    for (c, v) in g.values(x).iter().enumerate() {
                        let v = v.abs();
                        if slot == 0 {
                            report.max_q = report.max_q.max(v);
                        } else {
                            report.max_qbar = report.max_qbar.max(v);
                        }
                        note(
                            &mut report,
                            format!(
                                "{}{} component {}",
                                ["Q", "Q̄"][slot],
                                mu + 1,
                                COMPONENT_NAMES[c]
                            ),
                            v,
                        );
                    }
                }
            }
            let base = f.values(x);
            for a in angles {
                let (s, c) = a.sin_cos();
                let rx = [c * x[0] - s * x[1], s * x[0] + c * x[1]];
                for (i, v) in f.values(rx).iter().enumerate() {
                    let d = (v - base[i]).abs();
                    report.max_rotation = report.max_rotation.max(d);
                    note(
                        &mut report,
                        format!("rotation by {a:.3} of component {}", COMPONENT_NAMES[i]),
                        d,
                    );
                }
            }
        }
    }
    report.passed = report.first_failure.is_none();
    report
}

/// Spatial weight of a Berezin integral.
pub enum BerezinWeight<'a> {
    DeltaAtOrigin,
    /// Lebesgue measure on the disk of the given radius.
    Plane {
        radius: f64,
    },
    Function {
        weight: &'a dyn Fn([f64; 2]) -> f64,
        radius: f64,
    },
}

pub(crate) fn radial_breaks(radius: f64) -> Vec<f64> {
    let mut b = vec![0.0, 0.125, 0.25, 0.5];
    let mut r = 1.0;
    while r < radius {
        b.push(r);
        r *= if r < 4.0 { 1.5 } else { 1.35 };
    }
    b.push(radius);
    b.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    b
}

/// Polar composite Gauss rule on a disk: `(points, weights)`.
pub fn disk_rule(radius: f64, radial_order: usize, angles: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (rs, wr) = composite_gauss_legendre(&radial_breaks(radius), radial_order);
    let mut pts = Vec::with_capacity(rs.len() * angles);
    let mut ws = Vec::with_capacity(rs.len() * angles);
    let dphi = 2.0 * PI / angles as f64;
    for (r, w) in rs.iter().zip(&wr) {
        for j in 0..angles {
            let phi = (j as f64 + 0.5) * dphi;
            pts.push([r * phi.cos(), r * phi.sin()]);
            ws.push(w * r * dphi);
        }
    }
    (pts, ws)
}

/// `∫ F w dx dθ dθ̄ = −∫ f_θθ̄ w dx`.
pub fn berezin_integral(f: &SuperFunction, weight: BerezinWeight<'_>) -> f64 {
    let (radius, w): (f64, &dyn Fn([f64; 2]) -> f64) = match weight {
        BerezinWeight::DeltaAtOrigin => return -(f.f_tt)([0.0, 0.0]),
        BerezinWeight::Plane { radius } => (radius, &|_| 1.0),
        BerezinWeight::Function { weight, radius } => (radius, weight),
    };
    let (pts, ws) = disk_rule(radius, 16, 64);
    -pts.iter()
        .zip(&ws)
        .map(|(x, wq)| wq * w(*x) * (f.f_tt)(*x))
        .sum::<f64>()
}

/// `C_Φ(x, θ, θ̄) = G_{2+2χ}(x) − ϖ G_{1+2χ}(x) θθ̄` with `ϖ = 1/(1+2χ)`.
#[derive(Debug, Clone)]
pub struct SuperCovariance {
    pub chi: f64,
    pub varpi: f64,
    pub m2: f64,
    /// `G_{2+2χ}`.
    pub boson: KernelTable,
    /// `G_{1+2χ}`.
    pub fermion: KernelTable,
    pub boson_origin: f64,
    pub fermion_origin: f64,
}

impl SuperCovariance {
    pub fn new(chi: f64, m2: f64) -> Result<Self, SuperspaceError> {
        if !(chi > 0.0) {
            return Err(SuperspaceError::InvalidParameter(format!(
                "chi = {chi} must be positive"
            )));
        }
        let r_max = 60.0 / m2.sqrt();
        Ok(Self {
            chi,
            varpi: 1.0 / (1.0 + 2.0 * chi),
            m2,
            boson: KernelTable::new(2.0 + 2.0 * chi, m2, 1e-4, r_max, 4096)?,
            fermion: KernelTable::new(1.0 + 2.0 * chi, m2, 1e-4, r_max, 4096)?,
            boson_origin: green_kernel_at_origin(2.0 + 2.0 * chi, m2)?,
            fermion_origin: green_kernel_at_origin(1.0 + 2.0 * chi, m2)?,
        })
    }

    /// `⟨φ(x)φ(y)⟩`.
    pub fn phi_phi(&self, r: f64) -> f64 {
        if r == 0.0 {
            self.boson_origin
        } else {
            self.boson.eval(r)
        }
    }

    /// `⟨ψ(x)ψ̄(y)⟩ = −⟨φ(x)ω(y)⟩ = ϖ G_{1+2χ}`.
    pub fn psi_psibar(&self, r: f64) -> f64 {
        self.varpi
            * if r == 0.0 {
                self.fermion_origin
            } else {
                self.fermion.eval(r)
            }
    }

    /// `C_Φ` as a superfunction of `(x, θ, θ̄)`, evaluated with the untabulated kernels.
    pub fn as_superfunction(&self) -> SuperFunction {
        let (chi, m2, varpi) = (self.chi, self.m2, self.varpi);
        SuperFunction::new(
            format!("C_Φ(χ={chi})"),
            move |x: [f64; 2]| {
                green_kernel(2.0 + 2.0 * chi, m2, x[0].hypot(x[1])).unwrap_or(f64::NAN)
            },
            |_| 0.0,
            |_| 0.0,
            move |x: [f64; 2]| {
                -varpi * green_kernel(1.0 + 2.0 * chi, m2, x[0].hypot(x[1])).unwrap_or(f64::NAN)
            },
        )
    }

    /// `C_Φ(x_i − x_j, θ_i − θ_j, θ̄_i − θ̄_j)` between two insertions.
    pub fn pair(&self, a: &Insertion, b: &Insertion, k: usize) -> GrassmannElement {
        let r = (a.x[0] - b.x[0]).hypot(a.x[1] - b.x[1]);
        let dt =
            GrassmannElement::generator(k, a.theta).sub(&GrassmannElement::generator(k, b.theta));
        let dtb = GrassmannElement::generator(k, a.thetabar)
            .sub(&GrassmannElement::generator(k, b.thetabar));
        GrassmannElement::scalar(k, self.phi_phi(r)).sub(&dt.mul(&dtb).scale(self.psi_psibar(r)))
    }
}

/// Superfield insertion `Φ(x, θ_theta, θ̄_thetabar)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub x: [f64; 2],
    pub theta: usize,
    pub thetabar: usize,
}

fn pairings(
    rest: &mut Vec<usize>,
    points: &[Insertion],
    cov: &SuperCovariance,
    k: usize,
) -> GrassmannElement {
    if rest.is_empty() {
        return GrassmannElement::scalar(k, 1.0);
    }
    let first = rest.remove(0);
    let mut total = GrassmannElement::zero(k);
    for idx in 0..rest.len() {
        let partner = rest.remove(idx);
        let c = cov.pair(&points[first], &points[partner], k);
        total = total.add(&c.mul(&pairings(rest, points, cov, k)));
        rest.insert(idx, partner);
    }
    rest.insert(0, first);
    total
}

/// `⟨∏ Φ(xᵢ, θᵢ, θ̄ᵢ)⟩` as a sum over perfect pairings of `C_Φ` factors.
pub fn wick_superfield_expectation(
    points: &[Insertion],
    generators: usize,
    cov: &SuperCovariance,
) -> Result<GrassmannElement, SuperspaceError> {
    if points.len() > MAX_INSERTIONS {
        return Err(SuperspaceError::TooManyInsertions {
            count: points.len(),
            max: MAX_INSERTIONS,
        });
    }
    for p in points {
        for index in [p.theta, p.thetabar] {
            if index >= generators {
                return Err(SuperspaceError::Generator {
                    index,
                    count: generators,
                });
            }
        }
    }
    if points.len() % 2 == 1 {
        return Ok(GrassmannElement::zero(generators));
    }
    let mut rest: Vec<usize> = (0..points.len()).collect();
    Ok(pairings(&mut rest, points, cov, generators))
}

/// Real polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn monomial(degree: usize) -> Self {
        let mut c = vec![0.0; degree + 1];
        c[degree] = 1.0;
        Poly(c)
    }

    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    pub fn derivative(&self) -> Self {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| i as f64 * c)
                .collect(),
        )
    }

    fn terms(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i as u32, *c))
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .terms()
            .map(|(d, c)| match d {
                0 => format!("{c}"),
                1 => format!("{c}y"),
                _ => format!("{c}y^{d}"),
            })
            .collect();
        if parts.is_empty() {
            "0".into()
        } else {
            parts.join("+")
        }
    }
}

/// Gaussian moments of `∏ φ_s^{a_s} ∏_{k∈W} ω_k` with `⟨ωω⟩ = 0`.
struct BosonMoments<'a> {
    sites: usize,
    phiphi: &'a [f64],
    phiomega: &'a [f64],
}

impl BosonMoments<'_> {
    fn moment(&self, a: &mut [u32], omegas: &mut Vec<usize>) -> f64 {
        let total: u32 = a.iter().sum::<u32>() + omegas.len() as u32;
        if total % 2 == 1 {
            return 0.0;
        }
        if let Some(k) = omegas.pop() {
            let mut acc = 0.0;
            for i in 0..self.sites {
                if a[i] > 0 {
                    let mult = a[i] as f64;
                    a[i] -= 1;
                    acc += mult * self.phiomega[i * self.sites + k] * self.moment(a, omegas);
                    a[i] += 1;
                }
            }
            omegas.push(k);
            return acc;
        }
        let Some(i) = a.iter().position(|v| *v > 0) else {
            return 1.0;
        };
        a[i] -= 1;
        let mut acc = 0.0;
        for j in 0..self.sites {
            if a[j] > 0 {
                let mult = a[j] as f64;
                a[j] -= 1;
                acc += mult * self.phiphi[i * self.sites + j] * self.moment(a, omegas);
                a[j] += 1;
            }
        }
        a[i] += 1;
        acc
    }

    /// `E[∏_s R_s(φ_s) ∏_{k∈W} ω_k]`.
    fn poly_moment(&self, polys: &[&Poly], omegas: &[usize]) -> f64 {
        let mut a = vec![0u32; self.sites];
        let mut om = omegas.to_vec();
        self.expand(polys, 0, 1.0, &mut a, &mut om)
    }

    fn expand(
        &self,
        polys: &[&Poly],
        s: usize,
        coeff: f64,
        a: &mut [u32],
        om: &mut Vec<usize>,
    ) -> f64 {
        if s == polys.len() {
            return coeff * self.moment(a, om);
        }
        let mut acc = 0.0;
        for (d, c) in polys[s].terms() {
            a[s] = d;
            acc += self.expand(polys, s + 1, coeff * c, a, om);
        }
        a[s] = 0;
        acc
    }
}

fn small_det(m: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => nalgebra::DMatrix::from_row_slice(n, n, m).determinant(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    /// `f P″(φ) ψψ̄`
    Fermion,
    /// `f P′(φ) ω`
    Omega,
    /// `4 f̃′ P(φ)`
    Boundary,
}

/// Polynomials entering the density of `Q_χ(P, f)`.
struct PolEqTerms<'a> {
    p: &'a Poly,
    big_p: &'a Poly,
    dp: Poly,
    ddp: Poly,
}

impl<'a> PolEqTerms<'a> {
    fn new(p: &'a Poly, big_p: &'a Poly) -> Self {
        let dp = big_p.derivative();
        let ddp = dp.derivative();
        Self { p, big_p, dp, ddp }
    }

    /// Sum over the three local terms at every integration point. `phiphi` and `psi` are the
    /// `⟨φφ⟩` and `⟨ψψ̄⟩` matrices over the sites (origin first); `fx`, `fpx` hold `f` and
    /// `4f̃′` at the integration points.
    fn integrand(&self, sites: usize, phiphi: &[f64], psi: &[f64], fx: &[f64], fpx: &[f64]) -> f64 {
        let n = sites - 1;
        let phiomega: Vec<f64> = psi.iter().map(|v| -v).collect();
        let engine = BosonMoments {
            sites,
            phiphi,
            phiomega: &phiomega,
        };
        let mut total = 0.0;
        let mut polys: Vec<&Poly> = Vec::with_capacity(sites);
        let mut fermions = Vec::with_capacity(n);
        let mut omegas = Vec::with_capacity(n);
        let mut s = [0.0; 9];
        for code in 0..3usize.pow(n as u32) {
            polys.clear();
            polys.push(self.p);
            fermions.clear();
            omegas.clear();
            let mut weight = 1.0;
            let mut c = code;
            for k in 0..n {
                let term = [Term::Fermion, Term::Omega, Term::Boundary][c % 3];
                c /= 3;
                match term {
                    Term::Fermion => {
                        weight *= fx[k];
                        polys.push(&self.ddp);
                        fermions.push(k + 1);
                    }
                    Term::Omega => {
                        weight *= fx[k];
                        polys.push(&self.dp);
                        omegas.push(k + 1);
                    }
                    Term::Boundary => {
                        weight *= fpx[k];
                        polys.push(self.big_p);
                    }
                }
            }
            if weight == 0.0 {
                continue;
            }
            let nf = fermions.len();
            let det = if nf <= 3 {
                for (a, &i) in fermions.iter().enumerate() {
                    for (b, &j) in fermions.iter().enumerate() {
                        s[a * nf + b] = psi[i * sites + j];
                    }
                }
                small_det(&s[..nf * nf], nf)
            } else {
                let m: Vec<f64> = fermions
                    .iter()
                    .flat_map(|&i| fermions.iter().map(move |&j| psi[i * sites + j]))
                    .collect();
                small_det(&m, nf)
            };
            if det == 0.0 {
                continue;
            }
            total += weight * det * engine.poly_moment(&polys, &omegas);
        }
        total
    }
}

/// Integrand of `⟨p(φ(0)) ∏_k q(x_k)⟩` where `q` is the density of `Q_χ(P, f)`,
/// assembled from component two-point functions and the fermionic determinant.
pub fn pol_eq_integrand(
    p: &Poly,
    big_p: &Poly,
    xs: &[[f64; 2]],
    cov: &SuperCovariance,
    f: &CutOff,
) -> f64 {
    let sites = xs.len() + 1;
    let pos: Vec<[f64; 2]> = std::iter::once([0.0, 0.0])
        .chain(xs.iter().copied())
        .collect();
    let mut phiphi = vec![0.0; sites * sites];
    let mut psi = vec![0.0; sites * sites];
    for i in 0..sites {
        for j in 0..sites {
            let r = (pos[i][0] - pos[j][0]).hypot(pos[i][1] - pos[j][1]);
            phiphi[i * sites + j] = cov.phi_phi(r);
            psi[i * sites + j] = cov.psi_psibar(r);
        }
    }
    let fx: Vec<f64> = xs.iter().map(|x| f.f(*x)).collect();
    let fpx: Vec<f64> = xs.iter().map(|x| 4.0 * f.f_prime(*x)).collect();
    PolEqTerms::new(p, big_p).integrand(sites, &phiphi, &psi, &fx, &fpx)
}

/// The same integrand from superfield pairings: the coefficient of `θ₀θ̄₀θ₁θ̄₁⋯` in
/// `⟨p(Φ₀) ∏ P(Φ_k)⟩ θ₀θ̄₀ ∏ f̃(|x_k|² + 4θ_kθ̄_k)`.
pub fn pol_eq_integrand_superfield(
    p: &Poly,
    big_p: &Poly,
    xs: &[[f64; 2]],
    cov: &SuperCovariance,
    f: &CutOff,
) -> Result<f64, SuperspaceError> {
    let sites = xs.len() + 1;
    let k = 2 * sites;
    let pos: Vec<[f64; 2]> = std::iter::once([0.0, 0.0])
        .chain(xs.iter().copied())
        .collect();
    let polys: Vec<&Poly> = std::iter::once(p)
        .chain(std::iter::repeat_n(big_p, xs.len()))
        .collect();
    let mut expectation = GrassmannElement::zero(k);
    let mut degrees = vec![0u32; sites];
    fn walk(
        s: usize,
        coeff: f64,
        polys: &[&Poly],
        degrees: &mut [u32],
        pos: &[[f64; 2]],
        k: usize,
        cov: &SuperCovariance,
        acc: &mut GrassmannElement,
    ) -> Result<(), SuperspaceError> {
        if s == polys.len() {
            let mut ins = Vec::new();
            for (site, d) in degrees.iter().enumerate() {
                for _ in 0..*d {
                    ins.push(Insertion {
                        x: pos[site],
                        theta: 2 * site,
                        thetabar: 2 * site + 1,
                    });
                }
            }
            *acc = acc.add(&wick_superfield_expectation(&ins, k, cov)?.scale(coeff));
            return Ok(());
        }
        for (d, c) in polys[s].terms() {
            degrees[s] = d;
            walk(s + 1, coeff * c, polys, degrees, pos, k, cov, acc)?;
        }
        Ok(())
    }
    walk(0, 1.0, &polys, &mut degrees, &pos, k, cov, &mut expectation)?;
    let mut prod = GrassmannElement::monomial(k, 0b11, 1.0).mul(&expectation);
    for (i, x) in xs.iter().enumerate() {
        let s = x[0] * x[0] + x[1] * x[1];
        let site = i + 1;
        let factor = GrassmannElement::scalar(k, f.f_tilde(s)).add(&GrassmannElement::monomial(
            k,
            0b11 << (2 * site),
            4.0 * f.f_tilde_prime(s),
        ));
        prod = prod.mul(&factor);
    }
    let top = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    Ok(prod.coefficient(top))
}

/// Node layout for the spatial integrals of [`verify_pol_eq`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolEqQuadrature {
    /// Gauss order per radial panel.
    pub radial_order: usize,
    /// Gauss order per angular panel.
    pub angular_order: usize,
    /// The disk radius is chosen where `f/f(0)` drops below this ratio.
    pub tail_ratio: f64,
}

impl Default for PolEqQuadrature {
    fn default() -> Self {
        Self {
            radial_order: 10,
            angular_order: 8,
            tail_ratio: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolEqReport {
    pub p: String,
    #[serde(rename = "P")]
    pub big_p: String,
    pub n: usize,
    pub chi: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / |rhs|`.
    pub gap: f64,
    /// Change of the left side under node refinement.
    pub quadrature_error: f64,
}

fn gaussian_moment(power: u32, variance: f64) -> f64 {
    if power % 2 == 1 {
        return 0.0;
    }
    let mut dfact = 1.0;
    let mut j = power as i64 - 1;
    while j > 1 {
        dfact *= j as f64;
        j -= 2;
    }
    dfact * variance.powi(power as i32 / 2)
}

fn poly_product(a: &Poly, b: &Poly) -> Poly {
    let mut c = vec![0.0; a.0.len() + b.0.len() - 1];
    for (i, x) in a.0.iter().enumerate() {
        for (j, y) in b.0.iter().enumerate() {
            c[i + j] += x * y;
        }
    }
    Poly(c)
}

fn pol_eq_lhs(
    p: &Poly,
    big_p: &Poly,
    n: usize,
    cov: &SuperCovariance,
    f: &CutOff,
    q: &PolEqQuadrature,
) -> f64 {
    let radius = f.support_radius(q.tail_ratio);
    let (rs, wr) = composite_gauss_legendre(&radial_breaks(radius), q.radial_order);
    let terms = PolEqTerms::new(p, big_p);
    match n {
        0 => pol_eq_integrand(p, big_p, &[], cov, f),
        1 => rs
            .iter()
            .zip(&wr)
            .map(|(r, w)| 2.0 * PI * r * w * pol_eq_integrand(p, big_p, &[[*r, 0.0]], cov, f))
            .sum(),
        _ => {
            let angle_breaks = [
                0.0,
                PI / 64.0,
                PI / 32.0,
                PI / 16.0,
                PI / 8.0,
                PI / 4.0,
                PI / 2.0,
                PI,
            ];
            let (ts, wt) = composite_gauss_legendre(&angle_breaks, q.angular_order);
            let g0 = cov.phi_phi(0.0);
            let s0 = cov.psi_psibar(0.0);
            let gr: Vec<f64> = rs.iter().map(|r| cov.phi_phi(*r)).collect();
            let sr: Vec<f64> = rs.iter().map(|r| cov.psi_psibar(*r)).collect();
            let fr: Vec<f64> = rs.iter().map(|r| f.f_tilde(r * r)).collect();
            let fpr: Vec<f64> = rs.iter().map(|r| 4.0 * f.f_tilde_prime(r * r)).collect();
            let cos: Vec<f64> = ts.iter().map(|t| t.cos()).collect();
            let mut acc = 0.0;
            for i in 0..rs.len() {
                for j in 0..rs.len() {
                    let mut inner = 0.0;
                    for (c, wtt) in cos.iter().zip(&wt) {
                        let r12 = (rs[i] * rs[i] + rs[j] * rs[j] - 2.0 * rs[i] * rs[j] * c)
                            .max(0.0)
                            .sqrt();
                        let (g12, s12) = (cov.phi_phi(r12), cov.psi_psibar(r12));
                        let phiphi = [g0, gr[i], gr[j], gr[i], g0, g12, gr[j], g12, g0];
                        let psi = [s0, sr[i], sr[j], sr[i], s0, s12, sr[j], s12, s0];
                        inner += wtt
                            * terms.integrand(3, &phiphi, &psi, &[fr[i], fr[j]], &[fpr[i], fpr[j]]);
                    }
                    acc += wr[i] * wr[j] * rs[i] * rs[j] * inner;
                }
            }
            4.0 * PI * acc
        }
    }
}

/// Compares `⟨p(φ(0)) Q_χ(P, f)ⁿ⟩` with `⟨p(φ(0)) (−4π f̃(0) P(φ(0)))ⁿ⟩`.
pub fn verify_pol_eq(
    p: &Poly,
    big_p: &Poly,
    n: usize,
    chi: f64,
    f: &CutOff,
    quad: &PolEqQuadrature,
) -> Result<PolEqReport, SuperspaceError> {
    if n > 2 {
        return Err(SuperspaceError::InvalidParameter(format!(
            "order n = {n} must be at most 2"
        )));
    }
    let insertions = p.degree() + n * big_p.degree();
    if insertions > MAX_INSERTIONS {
        return Err(SuperspaceError::TooManyInsertions {
            count: insertions,
            max: MAX_INSERTIONS,
        });
    }
    let cov = SuperCovariance::new(chi, f.m2)?;
    let lhs = pol_eq_lhs(p, big_p, n, &cov, f, quad);
    let finer = PolEqQuadrature {
        radial_order: quad.radial_order + 2,
        angular_order: quad.angular_order + 2,
        ..*quad
    };
    let quadrature_error = if n == 0 {
        0.0
    } else {
        (pol_eq_lhs(p, big_p, n, &cov, f, &finer) - lhs).abs()
    };
    let mut integrand = p.clone();
    let scaled = Poly(
        big_p
            .0
            .iter()
            .map(|c| -4.0 * PI * f.f_tilde(0.0) * c)
            .collect(),
    );
    for _ in 0..n {
        integrand = poly_product(&integrand, &scaled);
    }
    let rhs: f64 = integrand
        .terms()
        .map(|(d, c)| c * gaussian_moment(d, cov.boson_origin))
        .sum();
    let gap = if rhs != 0.0 {
        (lhs - rhs).abs() / rhs.abs()
    } else {
        (lhs - rhs).abs()
    };
    if quadrature_error > 1e-2 * rhs.abs().max(1e-300) {
        return Err(SuperspaceError::Quadrature {
            estimate: lhs,
            change: quadrature_error,
        });
    }
    Ok(PolEqReport {
        p: p.label(),
        big_p: big_p.label(),
        n,
        chi,
        lhs,
        rhs,
        gap,
        quadrature_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionCheck {
    pub chi: f64,
    /// `∫ C_Φ f̃(|x|² + 4θθ̄) dx dθ dθ̄ = ∫ (ϖ G_{1+2χ} f̃ − 4 G_{2+2χ} f̃′) dx`.
    pub lhs: f64,
    /// `4π G_{2+2χ}(0) f̃(0)`.
    pub rhs: f64,
    pub relative_gap: f64,
    pub quadrature_error: f64,
}

/// Superspace localization of `∫ C_Φ · f̃(|x|² + 4θθ̄)` to the origin.
pub fn reduction_formula_check(chi: f64, f: &CutOff) -> Result<ReductionCheck, SuperspaceError> {
    if !(chi > 0.0) {
        return Err(SuperspaceError::InvalidParameter(format!(
            "chi = {chi} must be positive"
        )));
    }
    let varpi = 1.0 / (1.0 + 2.0 * chi);
    let m2 = f.m2;
    let integrand = |r: f64| {
        let s = r * r;
        let gb = green_kernel(2.0 + 2.0 * chi, m2, r).unwrap_or(f64::NAN);
        let gf = green_kernel(1.0 + 2.0 * chi, m2, r).unwrap_or(f64::NAN);
        2.0 * PI * r * (varpi * gf * f.f_tilde(s) - 4.0 * gb * f.f_tilde_prime(s))
    };
    // The flat-top family has a kink-free but sharp shoulder; start panels at its radius.
    let first = match f.kind {
        crate::kernels::CutOffKind::FlatTop { radius } if radius > 0.0 => radius,
        _ => 1.0,
    };
    let (xs, ws) = gauss_legendre_interval(40, 0.0, first);
    let head: f64 = xs.iter().zip(&ws).map(|(r, w)| w * integrand(*r)).sum();
    let tail = adaptive_semi_infinite(integrand, first, 1.0, 1e-15, 1e-12);
    let lhs = head + tail.value;
    let rhs = 4.0 * PI * green_kernel_at_origin(2.0 + 2.0 * chi, m2)? * f.f_tilde(0.0);
    Ok(ReductionCheck {
        chi,
        lhs,
        rhs,
        relative_gap: ((lhs - rhs) / rhs).abs(),
        quadrature_error: tail.error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_cutoff, CutOffKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Product of ordered generator words by concatenation and bubble sort.
    fn word_product(a: &[usize], b: &[usize]) -> (f64, Vec<usize>) {
        let mut w: Vec<usize> = a.iter().chain(b).copied().collect();
        let mut sign = 1.0;
        for i in 0..w.len() {
            for j in 0..w.len() - 1 - i {
                if w[j] == w[j + 1] {
                    return (0.0, vec![]);
                }
                if w[j] > w[j + 1] {
                    w.swap(j, j + 1);
                    sign = -sign;
                }
            }
        }
        if w.windows(2).any(|p| p[0] == p[1]) {
            return (0.0, vec![]);
        }
        (sign, w)
    }

    fn word(mask: u64) -> Vec<usize> {
        (0..64).filter(|i| mask >> i & 1 == 1).collect()
    }

    #[test]
    fn sign_table_matches_word_oracle() {
        for k in 1..=6usize {
            let full = 1u64 << k;
            for a in 0..full {
                for b in 0..full {
                    let got = GrassmannElement::monomial(k, a, 1.0)
                        .mul(&GrassmannElement::monomial(k, b, 1.0));
                    let (s, w) = word_product(&word(a), &word(b));
                    let mask: u64 = w.iter().map(|i| 1u64 << i).sum();
                    assert_eq!(got.coefficient(mask), s, "k={k} a={a:b} b={b:b}");
                }
            }
        }
    }

    fn random_element(rng: &mut ChaCha8Rng, k: usize) -> GrassmannElement {
        let mut e = GrassmannElement::zero(k);
        for m in 0..(1u64 << k) {
            if rng.random_bool(0.5) {
                e = e.add(&GrassmannElement::monomial(
                    k,
                    m,
                    rng.random_range(-1.0..1.0),
                ));
            }
        }
        e
    }

    #[test]
    fn algebra_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 6;
        for i in 0..k {
            let gi = GrassmannElement::generator(k, i);
            assert!(gi.mul(&gi).is_zero());
            for j in 0..k {
                let gj = GrassmannElement::generator(k, j);
                assert!(gi.mul(&gj).add(&gj.mul(&gi)).is_zero());
            }
        }
        for _ in 0..20 {
            let (a, b, c) = (
                random_element(&mut rng, k),
                random_element(&mut rng, k),
                random_element(&mut rng, k),
            );
            assert!(a.mul(&b).mul(&c).max_abs_diff(&a.mul(&b.mul(&c))) < 1e-12);
            assert!(a.mul(&b.add(&c)).max_abs_diff(&a.mul(&b).add(&a.mul(&c))) < 1e-12);
        }
    }

    #[test]
    fn smooth_function_of_nilpotent_argument() {
        // exp(1 + θ₀θ₁ + θ₂θ₃) = e(1 + θ₀θ₁)(1 + θ₂θ₃)
        let k = 4;
        let x = GrassmannElement::scalar(k, 1.0)
            .add(&GrassmannElement::monomial(k, 0b0011, 1.0))
            .add(&GrassmannElement::monomial(k, 0b1100, 1.0));
        let e = std::f64::consts::E;
        let got = x.apply_smooth(&[e, e, e, e, e]);
        let expect = GrassmannElement::scalar(k, e)
            .add(&GrassmannElement::monomial(k, 0b0011, e))
            .add(&GrassmannElement::monomial(k, 0b1100, e))
            .add(&GrassmannElement::monomial(k, 0b1111, e));
        assert!(got.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn composition_rule_matches_superfunction_expansion() {
        // r(|x|² + 4θθ̄) with r(s) = s³ equals the radial profile with r′.
        let x = [0.4, -0.7];
        let s = x[0] * x[0] + x[1] * x[1];
        let k = 2;
        let arg = GrassmannElement::scalar(k, s).add(&GrassmannElement::monomial(k, 0b11, 4.0));
        let via_apply = arg.apply_smooth(&[s.powi(3), 3.0 * s * s, 6.0 * s, 6.0]);
        let via_profile =
            SuperFunction::radial_profile("s^3", |s| s.powi(3), |s| 3.0 * s * s).at(x, k, 0, 1);
        assert!(via_apply.max_abs_diff(&via_profile) < 1e-12);
    }

    #[test]
    fn berezin_examples() {
        let tt = SuperFunction::new("θθ̄", |_| 0.0, |_| 0.0, |_| 0.0, |_| 1.0);
        assert_eq!(berezin_integral(&tt, BerezinWeight::DeltaAtOrigin), -1.0);
        let body = SuperFunction::new("1", |_| 1.0, |_| 0.0, |_| 0.0, |_| 0.0);
        assert_eq!(
            berezin_integral(&body, BerezinWeight::Plane { radius: 5.0 }),
            0.0
        );
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let got = berezin_integral(
            &SuperFunction::of_cutoff(&f),
            BerezinWeight::Plane {
                radius: f.support_radius(1e-14),
            },
        );
        let expect = 4.0 * PI * f.f_tilde(0.0);
        assert!(((got - expect) / expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn generators_annihilate_quadratic_form() {
        let qf = SuperFunction::quadratic_form();
        for conj in [false, true] {
            for g in apply_q(&qf, conj) {
                for x in [[0.3, -1.2], [2.0, 0.5]] {
                    assert!(
                        g.values(x).iter().all(|v| v.abs() < 1e-9),
                        "{:?}",
                        g.values(x)
                    );
                }
            }
        }
    }

    #[test]
    fn susy_check_examples() {
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        assert!(susy_check(&SuperFunction::of_cutoff(&f), 1e-8, 3.0, 9).passed);
        let flat = make_cutoff(CutOffKind::FlatTop { radius: 1.0 }, 1.0, 1.0).unwrap();
        assert!(susy_check(&SuperFunction::of_cutoff(&flat), 1e-7, 3.0, 9).passed);
        let cov = SuperCovariance::new(0.5, 1.0).unwrap();
        let r = susy_check(&cov.as_superfunction(), 1e-8, 3.0, 8);
        assert!(r.passed, "{r:?}");
        let rot = susy_check(
            &SuperFunction::new("x1θθ̄", |_| 0.0, |_| 0.0, |_| 0.0, |x| x[0]),
            1e-8,
            2.0,
            5,
        );
        assert!(!rot.passed && rot.max_rotation > 0.1);
        let odd = SuperFunction::new("θg", |_| 0.0, |x| (x[0] - 0.3).exp(), |_| 0.0, |_| 0.0);
        let r = susy_check(&odd, 1e-8, 2.0, 5);
        assert!(!r.passed);
        assert!(r.first_failure.unwrap().contains('Q'));
    }

    fn generic_function() -> SuperFunction {
        SuperFunction::new(
            "generic",
            |x| x[0] * x[0] * x[1] + 0.3 * x[1],
            |x| x[0] - 2.0 * x[1] * x[1],
            |x| 0.5 * x[0] * x[1] + 1.0,
            |x| x[0] * x[0] - x[1],
        )
    }

    fn base_point(x: [f64; 2]) -> SuperPoint {
        let k = 3;
        SuperPoint {
            x: [
                GrassmannElement::scalar(k, x[0]),
                GrassmannElement::scalar(k, x[1]),
            ],
            theta: GrassmannElement::generator(k, 0),
            thetabar: GrassmannElement::generator(k, 1),
        }
    }

    #[test]
    fn tau_flow_is_generated_by_q() {
        let f = generic_function();
        let (b, bbar, t) = ([0.7, -0.4], [0.2, 1.1], 0.8);
        let x = [0.6, -0.9];
        let z = base_point(x);
        let moved = f.evaluate(&tau_flow(&z, b, bbar, t, 2));
        let q = apply_q(&f, false);
        let qbar = apply_q(&f, true);
        let mut gen = GrassmannElement::zero(3);
        for mu in 0..2 {
            gen = gen
                .add(&q[mu].at(x, 3, 0, 1).scale(bbar[mu]))
                .add(&qbar[mu].at(x, 3, 0, 1).scale(b[mu]));
        }
        let expect = f
            .evaluate(&z)
            .add(&GrassmannElement::generator(3, 2).scale(t).mul(&gen));
        assert!(
            moved.max_abs_diff(&expect) < 1e-8,
            "{:?}",
            moved.sub(&expect)
        );
    }

    #[test]
    fn tau_flow_composes_and_preserves_supersymmetric_functions() {
        let (b, bbar) = ([0.3, 0.5], [-0.6, 0.2]);
        let z = base_point([1.2, -0.4]);
        let two = tau_flow(&tau_flow(&z, b, bbar, 0.4, 2), b, bbar, 0.9, 2);
        let one = tau_flow(&z, b, bbar, 1.3, 2);
        assert!(two.max_abs_diff(&one) < 1e-14);
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let sf = SuperFunction::of_cutoff(&f);
        assert!(sf.evaluate(&one).max_abs_diff(&sf.evaluate(&z)) < 1e-9);
        let g = generic_function();
        assert!(g.evaluate(&one).max_abs_diff(&g.evaluate(&z)) > 1e-3);
    }

    #[test]
    fn wick_examples() {
        let cov = SuperCovariance::new(0.5, 1.0).unwrap();
        let k = 4;
        let a = Insertion {
            x: [0.0, 0.0],
            theta: 0,
            thetabar: 1,
        };
        let b = Insertion {
            x: [0.8, 0.3],
            theta: 2,
            thetabar: 3,
        };
        let two = wick_superfield_expectation(&[a, b], k, &cov).unwrap();
        assert_eq!(two, cov.pair(&a, &b, k));
        let r = 0.8f64.hypot(0.3);
        assert!((two.body() - cov.phi_phi(r)).abs() < 1e-15);
        assert!((two.coefficient(0b0011) + cov.psi_psibar(r)).abs() < 1e-15);
        assert!((two.coefficient(0b1001) - cov.psi_psibar(r)).abs() < 1e-15);
        assert!(wick_superfield_expectation(&[a], k, &cov)
            .unwrap()
            .is_zero());
        let many = vec![a; 11];
        assert!(matches!(
            wick_superfield_expectation(&many, k, &cov),
            Err(SuperspaceError::TooManyInsertions { .. })
        ));
    }

    #[test]
    fn wick_four_point_body_is_isserlis() {
        let cov = SuperCovariance::new(0.5, 1.0).unwrap();
        let xs = [[0.0, 0.0], [0.5, 0.1], [-0.3, 0.9], [1.0, -1.0]];
        let ins: Vec<Insertion> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Insertion {
                x: *x,
                theta: 2 * i,
                thetabar: 2 * i + 1,
            })
            .collect();
        let e = wick_superfield_expectation(&ins, 8, &cov).unwrap();
        let g = |i: usize, j: usize| cov.phi_phi((xs[i][0] - xs[j][0]).hypot(xs[i][1] - xs[j][1]));
        let isserlis = g(0, 1) * g(2, 3) + g(0, 2) * g(1, 3) + g(0, 3) * g(1, 2);
        assert!((e.body() - isserlis).abs() < 1e-15);
    }

    #[test]
    fn component_integrand_matches_superfield_pairings() {
        let cov = SuperCovariance::new(0.5, 1.0).unwrap();
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let y2 = Poly::monomial(2);
        let cases: Vec<(Poly, Poly, Vec<[f64; 2]>)> = vec![
            (Poly::constant(1.0), y2.clone(), vec![[0.7, 0.2]]),
            (y2.clone(), y2.clone(), vec![[0.4, -0.5]]),
            (Poly::constant(1.0), Poly::monomial(4), vec![[1.3, 0.0]]),
            (
                Poly::constant(1.0),
                y2.clone(),
                vec![[0.7, 0.2], [-0.2, 0.9]],
            ),
            (
                Poly(vec![0.5, 0.0, 1.0]),
                Poly(vec![0.0, 0.3, 1.0, 0.0, 0.2]),
                vec![[0.3, 0.4], [1.0, -0.2]],
            ),
        ];
        for (p, bp, xs) in cases {
            let a = pol_eq_integrand(&p, &bp, &xs, &cov, &f);
            let b = pol_eq_integrand_superfield(&p, &bp, &xs, &cov, &f).unwrap();
            assert!(
                (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                "{} {}: {a} vs {b}",
                p.label(),
                bp.label()
            );
        }
    }

    #[test]
    fn pol_eq_first_order_hand_expansion() {
        // p = 1, P = y², n = 1: the two local terms cancel and 4 G(0) ∫ f̃′ = −4π G(0) f̃(0) remains.
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let cov = SuperCovariance::new(0.5, 1.0).unwrap();
        let integrand = pol_eq_integrand(
            &Poly::constant(1.0),
            &Poly::monomial(2),
            &[[0.9, 0.0]],
            &cov,
            &f,
        );
        let s0 = cov.psi_psibar(0.0);
        let hand = f.f_tilde(0.81) * (2.0 * s0 - 2.0 * s0)
            + 4.0 * f.f_tilde_prime(0.81) * cov.boson_origin;
        assert!((integrand - hand).abs() < 1e-14);
        let r = verify_pol_eq(
            &Poly::constant(1.0),
            &Poly::monomial(2),
            1,
            0.5,
            &f,
            &PolEqQuadrature::default(),
        )
        .unwrap();
        let rhs = -4.0 * PI * cov.boson_origin * f.f_tilde(0.0);
        assert!((r.rhs - rhs).abs() < 1e-15);
        assert!(r.gap < 1e-4, "{r:?}");
    }

    #[test]
    fn pol_eq_order_zero_is_exact() {
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let r = verify_pol_eq(
            &Poly(vec![1.0, 0.0, 2.0, 0.0, 1.0]),
            &Poly::monomial(4),
            0,
            0.5,
            &f,
            &PolEqQuadrature::default(),
        )
        .unwrap();
        assert_eq!(r.lhs, r.rhs);
    }

    #[test]
    fn pol_eq_second_order_quadratic_times_quadratic() {
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let r = verify_pol_eq(
            &Poly::monomial(2),
            &Poly::monomial(2),
            1,
            0.5,
            &f,
            &PolEqQuadrature::default(),
        )
        .unwrap();
        assert!(r.gap < 1e-3, "{r:?}");
    }

    #[test]
    fn pol_eq_guards() {
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let q = PolEqQuadrature::default();
        assert!(verify_pol_eq(&Poly::constant(1.0), &Poly::monomial(2), 3, 0.5, &f, &q).is_err());
        assert!(matches!(
            verify_pol_eq(&Poly::monomial(4), &Poly::monomial(4), 2, 0.5, &f, &q),
            Err(SuperspaceError::TooManyInsertions { .. })
        ));
    }

    #[test]
    fn reduction_formula_exp_sqrt() {
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        for chi in [0.25, 0.5, 1.0] {
            let r = reduction_formula_check(chi, &f).unwrap();
            assert!(r.relative_gap < 1e-8, "{r:?}");
        }
    }
}
