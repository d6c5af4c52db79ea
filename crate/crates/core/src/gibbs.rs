//! The finite-dimensional target measure `κ(dy) = Z⁻¹ exp(−4π(m²|y|²/2 + V(y))) dy`.

use crate::potentials::Potential;
use crate::quadrature::adaptive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::PI;

/// Tensor quadrature is used up to this many components.
pub const MAX_QUADRATURE_DIM: usize = 3;
/// Sample count of the rejection-sampling fallback.
pub const MC_FALLBACK_SAMPLES: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum GibbsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not stabilize: value {value}, last change {error:e}")]
    NonStabilized { value: f64, error: f64 },
}

/// Test functions `h` used for moments and histogram bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    One,
    /// `y_component^power`.
    Monomial {
        component: usize,
        power: u32,
    },
    /// Indicator of `lo ≤ y_component < hi`.
    Bin {
        component: usize,
        lo: f64,
        hi: f64,
    },
}

impl Observable {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match *self {
            Observable::One => 1.0,
            Observable::Monomial { component, power } => y[component].powi(power as i32),
            Observable::Bin { component, lo, hi } => {
                if y[component] >= lo && y[component] < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            Observable::One => "1".into(),
            Observable::Monomial { component, power } => format!("y{component}^{power}"),
            Observable::Bin { component, lo, hi } => format!("1[{lo},{hi})(y{component})"),
        }
    }

    pub fn component(&self) -> Option<usize> {
        match *self {
            Observable::One => None,
            Observable::Monomial { component, .. } | Observable::Bin { component, .. } => {
                Some(component)
            }
        }
    }

    /// Monomials of degree `1..=max_degree` in every component.
    pub fn monomials(n: usize, max_degree: u32) -> Vec<Observable> {
        (0..n)
            .flat_map(|c| {
                (1..=max_degree).map(move |p| Observable::Monomial {
                    component: c,
                    power: p,
                })
            })
            .collect()
    }

    /// `bins` equal bins of component 0 over `[−width, width]`.
    pub fn bins(component: usize, width: f64, bins: usize) -> Vec<Observable> {
        let step = 2.0 * width / bins as f64;
        (0..bins)
            .map(|i| Observable::Bin {
                component,
                lo: -width + i as f64 * step,
                hi: -width + (i + 1) as f64 * step,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// `κ` with its normalization on a truncated box `[−R, R]ⁿ`.
#[derive(Debug, Clone)]
pub struct GibbsMeasure {
    pub potential: Potential,
    pub m2: f64,
    pub radius: f64,
    /// Trapezoid intervals per axis at which `Z_kappa` stabilized.
    pub nodes: usize,
    pub z_kappa: f64,
    pub z_error: f64,
    /// Bound on the relative mass outside the box, using `V ≥ 0`.
    pub tail_mass: f64,
}

fn exponent(p: &Potential, m2: f64, y: &[f64]) -> f64 {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    4.0 * PI * (0.5 * m2 * r2 + p.value(y))
}

/// Tensor trapezoid of `h·exp(−exponent)` over `[−R, R]ⁿ` with `intervals` per axis.
fn tensor_trapezoid(
    p: &Potential,
    m2: f64,
    radius: f64,
    intervals: usize,
    h: &dyn Fn(&[f64]) -> f64,
) -> f64 {
    let n = p.n;
    let step = 2.0 * radius / intervals as f64;
    let pts = intervals + 1;
    let total = pts.pow(n as u32);
    let mut y = vec![0.0; n];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for yk in y.iter_mut() {
            let j = rem % pts;
            rem /= pts;
            *yk = -radius + j as f64 * step;
            if j == 0 || j == intervals {
                w *= 0.5;
            }
        }
        let e = exponent(p, m2, &y);
        if e < 745.0 {
            sum += w * h(&y) * (-e).exp();
        }
    }
    sum * step.powi(n as i32)
}

impl GibbsMeasure {
    pub fn new(potential: Potential, m2: f64) -> Result<Self, GibbsError> {
        if !(m2 > 0.0) {
            return Err(GibbsError::InvalidParameter(format!(
                "m2 = {m2} must be positive"
            )));
        }
        let n = potential.n;
        // 4π m² R² / 2 ≥ 60
        let radius = (60.0 / (2.0 * PI * m2)).sqrt();
        let sigma = (1.0 / (4.0 * PI * m2)).sqrt();
        let gauss_tail = n as f64 * erfc(radius / (sigma * 2f64.sqrt()));
        let z0 = (2.0 * PI * sigma * sigma).sqrt().powi(n as i32);
        if n > MAX_QUADRATURE_DIM {
            let mut g = Self {
                potential,
                m2,
                radius,
                nodes: 0,
                z_kappa: f64::NAN,
                z_error: f64::NAN,
                tail_mass: gauss_tail,
            };
            let (acc, se) = g.mc_mean(&|_| 1.0, MC_FALLBACK_SAMPLES, 0x6a09e667);
            g.z_kappa = z0 * acc;
            g.z_error = z0 * se;
            g.tail_mass = gauss_tail / acc;
            return Ok(g);
        }
        let (value, error, nodes) = Self::stabilize(&potential, m2, radius, &|_| 1.0, 1e-10)?;
        Ok(Self {
            tail_mass: gauss_tail * z0 / value,
            potential,
            m2,
            radius,
            nodes,
            z_kappa: value,
            z_error: error,
        })
    }

    fn stabilize(
        p: &Potential,
        m2: f64,
        radius: f64,
        h: &dyn Fn(&[f64]) -> f64,
        rel: f64,
    ) -> Result<(f64, f64, usize), GibbsError> {
        let cap = match p.n {
            1 => 1 << 14,
            2 => 1 << 10,
            _ => 1 << 8,
        };
        let mut intervals = 32;
        let mut prev = tensor_trapezoid(p, m2, radius, intervals, h);
        loop {
            intervals *= 2;
            let cur = tensor_trapezoid(p, m2, radius, intervals, h);
            let err = (cur - prev).abs();
            if err <= rel * cur.abs().max(1e-6 * tensor_scale(p, m2)) {
                return Ok((cur, err, intervals));
            }
            if intervals >= cap {
                return Err(GibbsError::NonStabilized {
                    value: cur,
                    error: err,
                });
            }
            prev = cur;
        }
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        (-exponent(&self.potential, self.m2, y)).exp() / self.z_kappa
    }

    /// `∫ h dκ`. Tensor trapezoid with doubling for `n ≤ 3`, rejection sampling otherwise.
    pub fn moment(&self, h: &dyn Fn(&[f64]) -> f64) -> Result<Moment, GibbsError> {
        if self.potential.n > MAX_QUADRATURE_DIM {
            let (acc, se) = self.mc_mean(&|_| 1.0, MC_FALLBACK_SAMPLES, 0x6a09e667);
            let (num, num_se) = self.mc_mean(h, MC_FALLBACK_SAMPLES, 0x6a09e667);
            return Ok(Moment {
                value: num / acc,
                error: num_se / acc + (num / acc) * se / acc,
                converged: true,
            });
        }
        let mut intervals = self.nodes / 2;
        let mut prev = tensor_trapezoid(&self.potential, self.m2, self.radius, intervals, h);
        let cap = self.nodes * 8;
        loop {
            intervals *= 2;
            let cur = tensor_trapezoid(&self.potential, self.m2, self.radius, intervals, h);
            let err = (cur - prev).abs() / self.z_kappa;
            let value = cur / self.z_kappa;
            if err <= 1e-9 * value.abs().max(1e-5) {
                return Ok(Moment {
                    value,
                    error: err,
                    converged: true,
                });
            }
            if intervals >= cap {
                return Ok(Moment {
                    value,
                    error: err,
                    converged: false,
                });
            }
            prev = cur;
        }
    }

    /// Moment of an [`Observable`]. Bins integrate the marginal density adaptively.
    pub fn observable(&self, h: &Observable) -> Result<Moment, GibbsError> {
        match *h {
            Observable::Bin { component, lo, hi } if self.potential.n <= MAX_QUADRATURE_DIM => {
                let lo = lo.max(-self.radius);
                let hi = hi.min(self.radius);
                if hi <= lo {
                    return Ok(Moment {
                        value: 0.0,
                        error: 0.0,
                        converged: true,
                    });
                }
                let r = adaptive(
                    |t| self.marginal_density(component, t),
                    lo,
                    hi,
                    1e-12,
                    1e-10,
                );
                Ok(Moment {
                    value: r.value,
                    error: r.error,
                    converged: r.converged,
                })
            }
            _ => self.moment(&|y| h.eval(y)),
        }
    }

    /// Density of `y_component` under `κ`.
    pub fn marginal_density(&self, component: usize, t: f64) -> f64 {
        let n = self.potential.n;
        if n == 1 {
            return self.density(&[t]);
        }
        let intervals = self.nodes;
        let pts = intervals + 1;
        let step = 2.0 * self.radius / intervals as f64;
        let total = pts.pow((n - 1) as u32);
        let mut y = vec![0.0; n];
        let mut sum = 0.0;
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for k in (0..n).filter(|k| *k != component) {
                let j = rem % pts;
                rem /= pts;
                y[k] = -self.radius + j as f64 * step;
                if j == 0 || j == intervals {
                    w *= 0.5;
                }
            }
            y[component] = t;
            sum += w * (-exponent(&self.potential, self.m2, &y)).exp();
        }
        sum * step.powi((n - 1) as i32) / self.z_kappa
    }

    /// Exact samples from `κ` by rejection from the Gaussian part (valid for `V ≥ 0`).
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = (1.0 / (4.0 * PI * self.m2)).sqrt();
        let n = self.potential.n;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let y: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect();
            let u: f64 = rng.random();
            if u < (-4.0 * PI * self.potential.value(&y)).exp() {
                out.push(y);
            }
        }
        out
    }

    /// Gaussian-proposal mean of `h·e^{−4πV}` and its standard error.
    fn mc_mean(&self, h: &dyn Fn(&[f64]) -> f64, count: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = (1.0 / (4.0 * PI * self.m2)).sqrt();
        let n = self.potential.n;
        let mut y = vec![0.0; n];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = sigma * z;
            }
            let x = h(&y) * (-4.0 * PI * self.potential.value(&y)).exp();
            s += x;
            s2 += x * x;
        }
        let mean = s / count as f64;
        let var = (s2 / count as f64 - mean * mean).max(0.0);
        (mean, (var / count as f64).sqrt())
    }
}

fn tensor_scale(p: &Potential, m2: f64) -> f64 {
    (1.0 / (2.0 * m2)).sqrt().powi(p.n as i32)
}

/// Writes `(h-tag, value, error)` rows.
pub fn write_moments_csv<W: std::io::Write>(rows: &[(String, Moment)], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["h", "value", "error"])?;
    for (tag, m) in rows {
        out.write_record([
            tag.clone(),
            format!("{:.17e}", m.value),
            format!("{:.3e}", m.error),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{builtin_potential, PotentialFamily};

    fn quartic(n: usize, lambda: f64) -> GibbsMeasure {
        GibbsMeasure::new(
            builtin_potential(PotentialFamily::Quartic { lambda }, n, 1.0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn free_measure_density_and_variance() {
        for m2 in [1.0, 2.5] {
            let g = GibbsMeasure::new(builtin_potential(PotentialFamily::Zero, 1, m2).unwrap(), m2)
                .unwrap();
            assert!((g.density(&[0.0]) - (2.0 * m2).sqrt()).abs() < 1e-12);
            let v = g.moment(&|y| y[0] * y[0]).unwrap();
            assert!((v.value - 1.0 / (4.0 * PI * m2)).abs() < 1e-12, "{v:?}");
            assert!(g.tail_mass < 1e-10);
        }
    }

    #[test]
    fn normalization_and_symmetry() {
        let g = quartic(1, 0.2);
        assert!((g.moment(&|_| 1.0).unwrap().value - 1.0).abs() < 1e-12);
        assert!(g.moment(&|y| y[0]).unwrap().value.abs() < 1e-14);
        assert!(g.moment(&|y| y[0].powi(3)).unwrap().value.abs() < 1e-14);
        for y in [0.3, 1.1] {
            assert_eq!(g.density(&[y]), g.density(&[-y]));
            assert!(g.density(&[y]) <= (-2.0 * PI * y * y).exp() / g.z_kappa);
        }
    }

    #[test]
    fn refinement_is_stable() {
        let g = quartic(1, 0.2);
        let base = g.moment(&|y| y[0].powi(4)).unwrap().value;
        let fine = tensor_trapezoid(&g.potential, 1.0, g.radius, g.nodes * 2, &|y| y[0].powi(4))
            / g.z_kappa;
        let wide = tensor_trapezoid(&g.potential, 1.0, 2.0 * g.radius, g.nodes * 2, &|y| {
            y[0].powi(4)
        }) / tensor_trapezoid(&g.potential, 1.0, 2.0 * g.radius, g.nodes * 2, &|_| 1.0);
        assert!(((fine - base) / base).abs() < 1e-7);
        assert!(((wide - base) / base).abs() < 1e-7);
    }

    #[test]
    fn quadrature_matches_rejection_sampling() {
        for n in [1, 2] {
            let g = quartic(n, 0.2);
            let samples = g.sample(1_000_000, 11 + n as u64);
            for power in [2, 4] {
                let xs: Vec<f64> = samples.iter().map(|y| y[0].powi(power)).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var =
                    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
                let se = (var / xs.len() as f64).sqrt();
                let q = g.moment(&|y| y[0].powi(power)).unwrap().value;
                assert!(
                    (mean - q).abs() < 4.0 * se,
                    "n={n} p={power}: mc {mean} ± {se}, quad {q}"
                );
            }
        }
    }

    #[test]
    fn bins_sum_to_one() {
        for n in [1, 2] {
            let g = quartic(n, 0.2);
            let width = g.radius;
            let total: f64 = Observable::bins(0, width, 16)
                .iter()
                .map(|b| g.observable(b).unwrap().value)
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "n={n}: {total}");
        }
    }

    #[test]
    fn marginal_of_separable_matches_one_component() {
        let g1 = quartic(1, 0.2);
        let g2 = quartic(2, 0.2);
        for t in [0.0, 0.2, 0.5] {
            assert!((g1.density(&[t]) - g2.marginal_density(1, t)).abs() < 1e-9);
        }
    }

    #[test]
    fn high_dimension_uses_sampling() {
        let g = GibbsMeasure::new(
            builtin_potential(PotentialFamily::Zero, 4, 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        let m = g.moment(&|y| y[3] * y[3]).unwrap();
        assert!((m.value - 1.0 / (4.0 * PI)).abs() < 4.0 * m.error + 1e-12);
    }

    #[test]
    fn moments_csv() {
        let mut buf = Vec::new();
        write_moments_csv(
            &[(
                "y0^2".into(),
                Moment {
                    value: 0.5,
                    error: 1e-9,
                    converged: true,
                },
            )],
            &mut buf,
        )
        .unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("h,value,error\ny0^2,"));
    }
}
