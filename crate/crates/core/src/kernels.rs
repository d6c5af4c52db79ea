//! Radial Green's functions of `(m² − Δ)^{-α}` on the plane and the radial cut-off family.
//!
//! `green_kernel` evaluates the heat-kernel (proper-time) representation
//!
//! ```text
//! G_α(r) = 1/(4π Γ(α)) ∫₀^∞ t^{α-2} exp(−m² t − r²/(4t)) dt
//! ```
//!
//! with a log-domain trapezoid rule, which keeps full relative accuracy in the
//! exponential tail. `green_kernel_hankel` evaluates the same kernel from its
//! Hankel transform and serves as a cross-check at moderate radii.

use crate::quadrature;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("G_{alpha} diverges at the origin (needs alpha > 1)")]
    DivergentAtOrigin { alpha: f64 },
    #[error("kernel quadrature did not converge: estimate {estimate:e}, achieved relative error {achieved:e}")]
    NonConvergent { estimate: f64, achieved: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cut-off violates CO at x = ({x:.4}, {y:.4}): {what}")]
    CutoffViolation { x: f64, y: f64, what: String },
}

const PROPER_TIME_TOL: f64 = 1e-13;
const LOG_WINDOW: f64 = 46.0;

fn check_params(alpha: f64, m2: f64, r: f64) -> Result<(), KernelError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(KernelError::InvalidParameter(format!(
            "alpha = {alpha} must be positive"
        )));
    }
    if !(m2 > 0.0 && m2.is_finite()) {
        return Err(KernelError::InvalidParameter(format!(
            "m2 = {m2} must be positive"
        )));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(KernelError::InvalidParameter(format!(
            "radius {r} must be non-negative"
        )));
    }
    Ok(())
}

/// `G_α(0) = 1 / (4π (α−1) m^{2(α−1)})`, finite only for `α > 1`.
pub fn green_kernel_at_origin(alpha: f64, m2: f64) -> Result<f64, KernelError> {
    check_params(alpha, m2, 0.0)?;
    if alpha <= 1.0 {
        return Err(KernelError::DivergentAtOrigin { alpha });
    }
    Ok(1.0 / (4.0 * PI * (alpha - 1.0) * m2.powf(alpha - 1.0)))
}

/// Radial kernel of `(m² − Δ)^{-α}` on ℝ² at distance `r`.
pub fn green_kernel(alpha: f64, m2: f64, r: f64) -> Result<f64, KernelError> {
    check_params(alpha, m2, r)?;
    if r == 0.0 {
        return green_kernel_at_origin(alpha, m2);
    }
    proper_time(alpha, m2, r)
}

fn proper_time(alpha: f64, m2: f64, r: f64) -> Result<f64, KernelError> {
    let q = 0.25 * r * r;
    let a1 = alpha - 1.0;
    let g = |s: f64| a1 * s - m2 * s.exp() - q * (-s).exp();
    // g is strictly concave; g'(s) = a1 − m² e^s + q e^{-s}.
    let mut s0 = 0.5 * (q / m2).ln();
    for _ in 0..200 {
        let d1 = a1 - m2 * s0.exp() + q * (-s0).exp();
        let d2 = -m2 * s0.exp() - q * (-s0).exp();
        let step = d1 / d2;
        s0 -= step.clamp(-2.0, 2.0);
        if step.abs() < 1e-14 * (1.0 + s0.abs()) {
            break;
        }
    }
    let g0 = g(s0);
    let mut lo = s0 - 1.0;
    while g(lo) - g0 > -LOG_WINDOW {
        lo -= 1.0;
    }
    let mut hi = s0 + 1.0;
    while g(hi) - g0 > -LOG_WINDOW {
        hi += 1.0;
    }
    let trapezoid = |n: usize| {
        let h = (hi - lo) / n as f64;
        let mut acc = 0.5 * ((g(lo) - g0).exp() + (g(hi) - g0).exp());
        for i in 1..n {
            acc += (g(lo + i as f64 * h) - g0).exp();
        }
        acc * h
    };
    let mut n = ((hi - lo) * 4.0).ceil() as usize;
    let mut prev = trapezoid(n);
    let mut achieved = f64::INFINITY;
    for _ in 0..14 {
        n *= 2;
        let cur = trapezoid(n);
        achieved = ((cur - prev) / cur).abs();
        prev = cur;
        if achieved < PROPER_TIME_TOL {
            let log_value = prev.ln() + g0 - ln_gamma(alpha) - (4.0 * PI).ln();
            return Ok(log_value.exp());
        }
    }
    let estimate = (prev.ln() + g0 - ln_gamma(alpha) - (4.0 * PI).ln()).exp();
    Err(KernelError::NonConvergent { estimate, achieved })
}

/// Bessel `J₀` from its integral representation `(1/π)∫₀^π cos(x cos t) dt`.
///
/// The integrand is periodic and entire, so the trapezoid rule converges geometrically
/// once the node count exceeds `x`.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    let n = 24 + (1.2 * x) as usize;
    let h = PI / n as f64;
    let mut acc = 0.5 * ((x).cos() + (-x).cos());
    for i in 1..n {
        acc += (x * (i as f64 * h).cos()).cos();
    }
    acc / n as f64
}

fn wynn_epsilon(partials: &[f64]) -> f64 {
    let n = partials.len();
    let mut e0 = vec![0.0; n + 1];
    let mut e1: Vec<f64> = partials.to_vec();
    let mut best = *partials.last().unwrap_or(&0.0);
    let mut k = 0;
    while e1.len() > 1 {
        let mut next = Vec::with_capacity(e1.len() - 1);
        for i in 0..e1.len() - 1 {
            let diff = e1[i + 1] - e1[i];
            if diff == 0.0 {
                return e1[i + 1];
            }
            next.push(e0[i + 1] + 1.0 / diff);
        }
        e0 = e1;
        e1 = next;
        k += 1;
        if k % 2 == 0 {
            if let Some(v) = e1.last() {
                best = *v;
            }
        }
    }
    best
}

/// Hankel-transform evaluation `(1/2π)∫₀^∞ k J₀(kr)/(m²+k²)^α dk` for `r > 0`.
///
/// The integral is split at the approximate zeros of `J₀(kr)`, each panel is
/// integrated with Gauss–Legendre, and the alternating tail is accelerated with
/// Wynn's ε-algorithm. Node count doubles until two estimates agree to `1e−9`.
pub fn green_kernel_hankel(alpha: f64, m2: f64, r: f64) -> Result<f64, KernelError> {
    check_params(alpha, m2, r)?;
    if r == 0.0 {
        return green_kernel_at_origin(alpha, m2);
    }
    let integrand = |k: f64| k * bessel_j0(k * r) / (m2 + k * k).powf(alpha);
    let estimate = |order: usize, panels: usize| {
        let (x, w) = quadrature::gauss_legendre(order);
        let mut partials = Vec::with_capacity(panels);
        let mut acc = 0.0;
        let mut lo = 0.0;
        for i in 1..=panels {
            let hi = (i as f64 - 0.25) * PI / r;
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (t, v) in x.iter().zip(&w) {
                acc += v * half * integrand(mid + half * t);
            }
            lo = hi;
            if i > panels / 2 {
                partials.push(acc);
            }
        }
        wynn_epsilon(&partials) / (2.0 * PI)
    };
    let mut order = 16;
    let mut panels = 40;
    let mut prev = estimate(order, panels);
    let mut achieved = f64::INFINITY;
    for _ in 0..5 {
        order *= 2;
        panels *= 2;
        let cur = estimate(order, panels);
        achieved = ((cur - prev) / cur).abs();
        prev = cur;
        if achieved < 1e-9 {
            return Ok(cur);
        }
    }
    Err(KernelError::NonConvergent {
        estimate: prev,
        achieved,
    })
}

/// Relative defect of `∇G_{2+2χ}(x) = −(x ϖ/2) G_{1+2χ}(x)` at radius `r`, `ϖ = 1/(1+2χ)`.
pub fn green_gradient_identity_residual(chi: f64, m2: f64, r: f64) -> Result<f64, KernelError> {
    if !(chi > 0.0) || !(r > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "need chi > 0 and r > 0, got chi={chi}, r={r}"
        )));
    }
    let varpi = 1.0 / (1.0 + 2.0 * chi);
    // Five-point stencil; with kernel values accurate to ~1e-13 the step below
    // balances truncation h⁴ against cancellation ε/h.
    let h = (1e-13f64).powf(0.2) * r.min(1.0).max(0.05) * 0.5;
    let h = h.min(0.25 * r);
    let g = |x: f64| green_kernel(2.0 + 2.0 * chi, m2, x);
    let d = (-g(r + 2.0 * h)? + 8.0 * g(r + h)? - 8.0 * g(r - h)? + g(r - 2.0 * h)?) / (12.0 * h);
    let target = 0.5 * r * varpi * green_kernel(1.0 + 2.0 * chi, m2, r)?;
    Ok((d + target).abs() / target)
}

/// Tabulated `G_α` on a geometric radius grid with cubic interpolation in `(ln r, ln G)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTable {
    pub alpha: f64,
    pub m2: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub interpolation_order: usize,
    origin: Option<f64>,
    log_r0: f64,
    log_step: f64,
    log_values: Vec<f64>,
    tail_slope: f64,
}

impl KernelTable {
    pub fn new(
        alpha: f64,
        m2: f64,
        r_min: f64,
        r_max: f64,
        nodes: usize,
    ) -> Result<Self, KernelError> {
        if !(r_min > 0.0 && r_max > r_min) || nodes < 8 {
            return Err(KernelError::InvalidParameter(format!(
                "table needs 0 < r_min < r_max and at least 8 nodes (got {r_min}, {r_max}, {nodes})"
            )));
        }
        let log_r0 = r_min.ln();
        let log_step = (r_max.ln() - log_r0) / (nodes - 1) as f64;
        let radii: Vec<f64> = (0..nodes)
            .map(|i| (log_r0 + i as f64 * log_step).exp())
            .collect();
        let values = radii
            .iter()
            .map(|&r| green_kernel(alpha, m2, r))
            .collect::<Result<Vec<_>, _>>()?;
        let log_values: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let origin = if alpha > 1.0 {
            Some(green_kernel_at_origin(alpha, m2)?)
        } else {
            None
        };
        let k = nodes - 1;
        let tail_slope = (log_values[k] - log_values[k - 1]) / (radii[k] - radii[k - 1]);
        Ok(Self {
            alpha,
            m2,
            radii,
            values,
            interpolation_order: 3,
            origin,
            log_r0,
            log_step,
            log_values,
            tail_slope,
        })
    }

    /// Table covering every separation on a torus of side `l` with `n` points per side.
    pub fn for_lattice(alpha: f64, m2: f64, l: f64, n: usize) -> Result<Self, KernelError> {
        Self::new(alpha, m2, l / (10.0 * n as f64), 3.0 * l, 512)
    }

    pub fn r_min(&self) -> f64 {
        self.radii[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    pub fn at_origin(&self) -> Option<f64> {
        self.origin
    }

    /// Slope of `ln G` against `r` over the last table interval.
    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r < self.radii[0] {
            return match self.origin {
                Some(g0) => {
                    let t = (r / self.radii[0]).powi(2);
                    g0 + t * (self.values[0] - g0)
                }
                None => green_kernel(self.alpha, self.m2, r.max(1e-300)).unwrap_or(f64::INFINITY),
            };
        }
        if r >= self.radii[n - 1] {
            return (self.log_values[n - 1] + self.tail_slope * (r - self.radii[n - 1])).exp();
        }
        let u = (r.ln() - self.log_r0) / self.log_step;
        let i = (u.floor() as usize).min(n - 2);
        let j0 = i.saturating_sub(1).min(n - 4);
        let t = u - j0 as f64;
        // Four-point Lagrange interpolation at offsets 0..3.
        let y = &self.log_values[j0..j0 + 4];
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        (y[0] * l0 + y[1] * l1 + y[2] * l2 + y[3] * l3).exp()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["radius", "value"])?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            out.write_record([format!("{r:.17e}"), format!("{v:.17e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CutOffKind {
    /// `f(x) = exp(−b √(1+|x|²))`.
    ExpSqrt,
    /// `f(x) = exp(−b ρ(|x|−r))` with `ρ(t) = t − atan t` for `t > 0`, `0` otherwise.
    /// Identically one on the ball of radius `radius`.
    FlatTop { radius: f64 },
}

impl fmt::Display for CutOffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutOffKind::ExpSqrt => write!(f, "exp-sqrt"),
            CutOffKind::FlatTop { radius } => write!(f, "flat-top(r={radius})"),
        }
    }
}

/// Radial cut-off `f(x) = f̃(|x|²)` obeying the CO conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutOff {
    pub kind: CutOffKind,
    pub b: f64,
    pub m2: f64,
}

impl CutOff {
    /// `f` as a function of the radius `|x|`.
    pub fn radial(&self, r: f64) -> f64 {
        match self.kind {
            CutOffKind::ExpSqrt => (-self.b * (1.0 + r * r).sqrt()).exp(),
            CutOffKind::FlatTop { radius } => {
                let t = (r - radius).max(0.0);
                (-self.b * (t - t.atan())).exp()
            }
        }
    }

    /// `df/d|x|`.
    pub fn radial_derivative(&self, r: f64) -> f64 {
        match self.kind {
            CutOffKind::ExpSqrt => {
                let s = (1.0 + r * r).sqrt();
                -self.b * r / s * (-self.b * s).exp()
            }
            CutOffKind::FlatTop { radius } => {
                let t = (r - radius).max(0.0);
                -self.b * t * t / (1.0 + t * t) * self.radial(r)
            }
        }
    }

    pub fn f(&self, x: [f64; 2]) -> f64 {
        self.radial(x[0].hypot(x[1]))
    }

    /// `f̃(s)` with `s = |x|²`.
    pub fn f_tilde(&self, s: f64) -> f64 {
        self.radial(s.max(0.0).sqrt())
    }

    /// `f̃′(s)`, the derivative with respect to `s = |x|²`.
    pub fn f_tilde_prime(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match self.kind {
            CutOffKind::ExpSqrt => {
                let q = (1.0 + s).sqrt();
                -0.5 * self.b / q * (-self.b * q).exp()
            }
            CutOffKind::FlatTop { radius } => {
                let r = s.sqrt();
                let t = (r - radius).max(0.0);
                if t == 0.0 {
                    return 0.0;
                }
                -0.5 * self.b * t * t / ((1.0 + t * t) * r) * self.radial(r)
            }
        }
    }

    /// `f′(x) := f̃′(|x|²)`.
    pub fn f_prime(&self, x: [f64; 2]) -> f64 {
        self.f_tilde_prime(x[0] * x[0] + x[1] * x[1])
    }

    /// Radius beyond which `f/f(0)` stays below `ratio`.
    pub fn support_radius(&self, ratio: f64) -> f64 {
        let f0 = self.radial(0.0);
        let mut r = 1.0;
        while self.radial(r) / f0 > ratio {
            r *= 1.25;
        }
        let (mut lo, mut hi) = (0.0, r);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.radial(mid) / f0 > ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `f(L/2)/f(0) < 1e−6`: the torus of side `l` sees negligible wrap-around.
    pub fn torus_guard(&self, l: f64) -> bool {
        self.radial(0.5 * l) / self.radial(0.0) < 1e-6
    }

    /// `∫_{ℝ²} f̃′(|x|²) dx = π ∫₀^∞ f̃′(s) ds`, by adaptive quadrature.
    pub fn integral_of_f_prime(&self) -> f64 {
        quadrature::adaptive_semi_infinite(|s| PI * self.f_tilde_prime(s), 0.0, 1.0, 1e-15, 1e-12)
            .value
    }

    /// `∫_{ℝ²} f dx`.
    pub fn integral_of_f(&self) -> f64 {
        quadrature::adaptive_semi_infinite(
            |r| 2.0 * PI * r * self.radial(r),
            0.0,
            1.0,
            1e-15,
            1e-12,
        )
        .value
    }

    fn verify_co(&self) -> Result<(), KernelError> {
        let extent = match self.kind {
            CutOffKind::ExpSqrt => 8.0,
            CutOffKind::FlatTop { radius } => radius + 8.0,
        };
        let h = 0.1;
        let steps = (extent / h).round() as i64;
        let b2 = self.b * self.b;
        for i in -steps..=steps {
            for j in -steps..=steps {
                let x = [i as f64 * h, j as f64 * h];
                let fx = self.f(x);
                if !(fx > 0.0) {
                    return Err(KernelError::CutoffViolation {
                        x: x[0],
                        y: x[1],
                        what: format!("f = {fx} is not positive"),
                    });
                }
                let fp = self.f_prime(x);
                if fp > 0.0 {
                    return Err(KernelError::CutoffViolation {
                        x: x[0],
                        y: x[1],
                        what: format!("f' = {fp} is positive"),
                    });
                }
                let lap = (self.f([x[0] + h, x[1]])
                    + self.f([x[0] - h, x[1]])
                    + self.f([x[0], x[1] + h])
                    + self.f([x[0], x[1] - h])
                    - 4.0 * fx)
                    / (h * h);
                let tol = h * h * (1.0 + b2) * (1.0 + b2) * fx;
                if lap > b2 * fx + tol {
                    return Err(KernelError::CutoffViolation {
                        x: x[0],
                        y: x[1],
                        what: format!("discrete Laplacian {lap:e} exceeds b² f = {:e}", b2 * fx),
                    });
                }
            }
        }
        let integral = self.integral_of_f_prime();
        let expected = -PI * self.f_tilde(0.0);
        if (integral - expected).abs() > 1e-8 * expected.abs().max(1e-300) {
            return Err(KernelError::CutoffViolation {
                x: 0.0,
                y: 0.0,
                what: format!("∫f' = {integral:e} differs from −π f(0) = {expected:e}"),
            });
        }
        Ok(())
    }
}

/// Builds a cut-off of the given family and checks the CO conditions on a probe lattice.
pub fn make_cutoff(kind: CutOffKind, b: f64, m2: f64) -> Result<CutOff, KernelError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(KernelError::InvalidParameter(format!(
            "decay rate b = {b} must be positive"
        )));
    }
    if !(m2 > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "m2 = {m2} must be positive"
        )));
    }
    if b * b >= 4.0 * m2 {
        return Err(KernelError::InvalidParameter(format!(
            "b² = {} must be below 4 m² = {}",
            b * b,
            4.0 * m2
        )));
    }
    if let CutOffKind::FlatTop { radius } = kind {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(KernelError::InvalidParameter(format!(
                "flat-top radius {radius} must be non-negative"
            )));
        }
    }
    let c = CutOff { kind, b, m2 };
    c.verify_co()?;
    Ok(c)
}

/// `Γ(α)` re-exported for callers needing the closed-form normalizations.
pub fn gamma_fn(alpha: f64) -> f64 {
    gamma(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent K₀ oracle: ascending series
    // K₀(x) = −(ln(x/2) + γ) I₀(x) + Σ_k (x²/4)^k/(k!)² H_k.
    fn bessel_k0_series(x: f64) -> f64 {
        let euler = 0.577_215_664_901_532_9;
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut i0 = 1.0;
        let mut sum = 0.0;
        let mut harmonic = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            term *= q / (kf * kf);
            harmonic += 1.0 / kf;
            i0 += term;
            sum += term * harmonic;
            if term < 1e-18 * i0 {
                break;
            }
        }
        -((0.5 * x).ln() + euler) * i0 + sum
    }

    #[test]
    fn origin_values() {
        let g = green_kernel(2.0, 1.0, 0.0).unwrap();
        assert!((g - 0.079_577_471_545_947_67).abs() < 1e-15);
        let g = green_kernel(2.0, 4.0, 0.0).unwrap();
        assert!((g - 1.0 / (16.0 * PI)).abs() < 1e-15);
        assert!(matches!(
            green_kernel(1.0, 1.0, 0.0),
            Err(KernelError::DivergentAtOrigin { .. })
        ));
        assert!(matches!(
            green_kernel(0.5, 1.0, 0.0),
            Err(KernelError::DivergentAtOrigin { .. })
        ));
    }

    #[test]
    fn alpha_one_matches_k0_series() {
        let g = green_kernel(1.0, 1.0, 1.0).unwrap();
        let oracle = bessel_k0_series(1.0) / (2.0 * PI);
        assert!((g - oracle).abs() / oracle < 1e-10, "{g} vs {oracle}");
        assert!((g - 0.067_008_120_508).abs() < 1e-11);
        for &(m2, r) in &[(1.0, 0.01), (1.0, 0.3), (2.0, 1.7), (0.5, 3.0), (1.0, 5.0)] {
            let g = green_kernel(1.0, m2, r).unwrap();
            let oracle = bessel_k0_series(f64::sqrt(m2) * r) / (2.0 * PI);
            assert!(
                (g - oracle).abs() / oracle < 1e-9,
                "m2={m2} r={r}: {g} vs {oracle}"
            );
        }
    }

    #[test]
    fn hankel_route_agrees_with_proper_time() {
        for &alpha in &[0.75, 1.0, 1.5, 2.0, 3.0] {
            for &r in &[0.2, 0.7, 1.5, 3.0] {
                let a = green_kernel(alpha, 1.0, r).unwrap();
                let b = green_kernel_hankel(alpha, 1.0, r).unwrap();
                assert!((a - b).abs() / a < 2e-8, "alpha={alpha} r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn j0_known_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j0(10.0) + 0.245_935_764_451_348_3).abs() < 1e-14);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-14);
    }

    #[test]
    fn origin_matches_independent_radial_quadrature() {
        // G_α(0) = (1/2π)∫ k/(m²+k²)^α dk, integrated with Gauss–Legendre after k = tan(u).
        for &(alpha, m2) in &[(1.5, 1.0), (2.0, 1.0), (3.0, 0.7), (2.5, 2.0)] {
            let (x, w) = quadrature::gauss_legendre_interval(400, 0.0, 0.5 * PI);
            let mut acc = 0.0;
            for (u, wt) in x.iter().zip(&w) {
                let k = u.tan();
                let jac = 1.0 / u.cos().powi(2);
                acc += wt * jac * k / (m2 + k * k).powf(alpha);
            }
            let num = acc / (2.0 * PI);
            let g0 = green_kernel(alpha, m2, 0.0).unwrap();
            assert!((num - g0).abs() / g0 < 1e-6, "alpha={alpha}: {num} vs {g0}");
        }
    }

    #[test]
    fn kernel_is_continuous_at_origin() {
        let g0 = green_kernel(2.0, 1.0, 0.0).unwrap();
        let g = green_kernel(2.0, 1.0, 1e-4).unwrap();
        assert!((g - g0).abs() / g0 < 1e-6);
    }

    #[test]
    fn deep_tail_keeps_relative_accuracy() {
        // α = 1: G₁ = K₀(r)/2π ~ sqrt(π/2r) e^{-r}/2π (1 − 1/(8r) + 9/(128 r²) − …).
        let r = 48.0;
        let g = green_kernel(1.0, 1.0, r).unwrap();
        let mut series = 1.0;
        let mut term = 1.0;
        for k in 1..8 {
            let kf = (2 * k - 1) as f64;
            term *= -(kf * kf) / (k as f64 * 8.0 * r);
            series += term;
        }
        let asym = (PI / (2.0 * r)).sqrt() * (-r).exp() * series / (2.0 * PI);
        assert!((g - asym).abs() / asym < 1e-10, "{g} vs {asym}");
    }

    #[test]
    fn gradient_identity_holds() {
        for &chi in &[0.25, 0.5, 1.0] {
            for &r in &[0.05, 0.5, 1.0, 2.0, 6.0] {
                let res = green_gradient_identity_residual(chi, 1.0, r).unwrap();
                assert!(res < 1e-5, "chi={chi} r={r}: {res}");
            }
        }
    }

    #[test]
    fn table_invariants() {
        let t = KernelTable::for_lattice(1.0, 1.0, 16.0, 256).unwrap();
        assert_eq!(t.radii.len(), 512);
        for w in t.values.windows(2) {
            assert!(w[0] > w[1] && w[1] > 0.0);
        }
        for (r, v) in t.radii.iter().zip(&t.values).step_by(17) {
            let oracle = bessel_k0_series(*r) / (2.0 * PI);
            if *r < 6.0 {
                assert!((v - oracle).abs() / oracle < 1e-8, "r={r}");
            }
        }
        assert!(t.tail_slope() < 0.0);
        let t2 = KernelTable::for_lattice(2.0, 1.0, 16.0, 256).unwrap();
        for &r in &[0.0, 0.001, 0.013, 0.3, 1.234, 7.7, 40.0] {
            let exact = green_kernel(2.0, 1.0, r).unwrap();
            assert!(
                (t2.eval(r) - exact).abs() / exact < 1e-6,
                "r={r}: {} vs {exact}",
                t2.eval(r)
            );
        }
    }

    #[test]
    fn cutoff_examples() {
        let c = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        assert!((c.f([0.0, 0.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(
            make_cutoff(CutOffKind::ExpSqrt, 2.1, 1.0),
            Err(KernelError::InvalidParameter(_))
        ));
        let c = make_cutoff(CutOffKind::ExpSqrt, 0.5, 1.0).unwrap();
        let i = c.integral_of_f_prime();
        assert!((i + PI * (-0.5f64).exp()).abs() < 1e-8);
        let c = make_cutoff(CutOffKind::FlatTop { radius: 2.0 }, 1.0, 1.0).unwrap();
        assert_eq!(c.f([1.0, 1.0]), 1.0);
        assert_eq!(c.f_prime([1.0, 1.0]), 0.0);
        assert!((c.integral_of_f_prime() + PI).abs() < 1e-8);
    }

    #[test]
    fn f_tilde_prime_matches_finite_difference() {
        for kind in [CutOffKind::ExpSqrt, CutOffKind::FlatTop { radius: 1.5 }] {
            let c = make_cutoff(kind, 0.8, 1.0).unwrap();
            for &s in &[0.1, 0.9, 2.5, 4.0, 9.0, 30.0] {
                let h = 1e-5;
                let fd = (c.f_tilde(s + h) - c.f_tilde(s - h)) / (2.0 * h);
                assert!((fd - c.f_tilde_prime(s)).abs() < 1e-8, "{kind} s={s}");
                let r = f64::sqrt(s);
                let fd = (c.radial(r + h) - c.radial(r - h)) / (2.0 * h);
                assert!((fd - c.radial_derivative(r)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smaller_decay_rate_dominates() {
        let a = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let b = make_cutoff(CutOffKind::ExpSqrt, 0.5, 1.0).unwrap();
        for i in 0..200 {
            let r = i as f64 * 0.1;
            assert!(b.radial(r) >= a.radial(r));
        }
    }
}
