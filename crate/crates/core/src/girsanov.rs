//! Density of the shifted Gaussian measure on the lattice Wiener space.
//!
//! With `U(w) = f ∂V(𝓘w)` and `T = id + U`, a field `φ = 𝓘w` solves the equation driven by
//! `ξ = T(w)`. The pullback density is
//! `Λ_U = det₂(I + ∇U) exp(−δ(U) − ½‖U‖²)`, `δ(U) = ⟨U, w⟩ − Tr ∇U`,
//! all pairings taken as `a² Σ_cells`.

use crate::fields::{apply_fractional_inverse, Field, GridSpec, NoiseDraw};
use crate::kernels::CutOff;
use crate::potentials::{Potential, PotentialFamily};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest `n·N²` for which `∇U` is materialized.
pub const MAX_MATERIALIZED: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum GirsanovError {
    #[error("∇U would have side {side}, above the materialization limit {limit}")]
    TooLarge { side: usize, limit: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("root search unstable under refinement: {coarse} vs {fine} preimages at ξ = {at:?}")]
    RootSearch {
        coarse: usize,
        fine: usize,
        at: Vec<f64>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Det2 {
    /// `det(I + K) e^{−Tr K}`.
    pub value: f64,
    pub det: f64,
    pub trace: f64,
    pub singular: bool,
}

/// Carleman determinant via LU of `I + K`.
pub fn det2(k: &DMatrix<f64>) -> Det2 {
    assert!(k.is_square(), "det2 needs a square matrix");
    let trace = k.trace();
    let n = k.nrows();
    let a = DMatrix::identity(n, n) + k;
    let lu = a.lu();
    let det = if lu.is_invertible() {
        lu.determinant()
    } else {
        0.0
    };
    let singular = det == 0.0;
    Det2 {
        value: if singular { 0.0 } else { det * (-trace).exp() },
        det,
        trace,
        singular,
    }
}

/// `∏ (1 + λᵢ) e^{−λᵢ}` over the eigenvalues of a symmetric `K`.
pub fn det2_symmetric_eigen(k: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(k.clone())
        .eigenvalues
        .iter()
        .map(|l| (1.0 + l) * (-l).exp())
        .product()
}

/// `U`, `∇U` and the Wiener-space data at one noise field `w`.
#[derive(Debug, Clone)]
pub struct ShiftOperator {
    pub grid: GridSpec,
    pub potential: Potential,
    pub cutoff: CutOff,
    pub w: Field,
    /// `𝓘w`.
    pub i_w: Field,
    /// `U(w)`, component-major.
    pub u: Field,
    /// Materialized `∇U` of side `n·N²`.
    pub matrix: Option<DMatrix<f64>>,
}

/// Column of the lattice `𝓘` for a unit vector at the origin: `(𝓘e₀)(x) = a² G_lat(x)`.
fn inverse_column(grid: &GridSpec) -> Vec<f64> {
    let scalar = GridSpec {
        components: 1,
        ..*grid
    };
    let mut e = Field::zeros(scalar);
    e.values[0] = 1.0;
    apply_fractional_inverse(&e, 1.0).values
}

/// Per-cell `f ∂²V(y)` blocks, cell-major `n×n`.
fn hessian_blocks(grid: &GridSpec, p: &Potential, f: &CutOff, i_w: &Field) -> Vec<f64> {
    let n = grid.components;
    let m = grid.cells();
    let mut out = vec![0.0; m * n * n];
    let mut h = vec![0.0; n * n];
    for c in 0..m {
        p.hess(&i_w.at(c), &mut h);
        let fc = f.f(grid.point(c));
        for (o, v) in out[c * n * n..(c + 1) * n * n].iter_mut().zip(&h) {
            *o = fc * v;
        }
    }
    out
}

impl ShiftOperator {
    pub fn new(w: &NoiseDraw, p: &Potential, f: &CutOff) -> Result<Self, GirsanovError> {
        let grid = w.field.grid;
        if p.n != grid.components {
            return Err(GirsanovError::Shape(format!(
                "potential has {} components, grid has {}",
                p.n, grid.components
            )));
        }
        let i_w = apply_fractional_inverse(&w.field, 1.0);
        let u = shift_field(&i_w, p, f);
        Ok(Self {
            grid,
            potential: p.clone(),
            cutoff: f.clone(),
            w: w.field.clone(),
            i_w,
            u,
            matrix: None,
        })
    }

    /// `∇U[h] = f ∂²V(𝓘w) 𝓘h`, matrix-free.
    pub fn apply_gradient(&self, h: &Field) -> Field {
        let ih = apply_fractional_inverse(h, 1.0);
        let blocks = hessian_blocks(&self.grid, &self.potential, &self.cutoff, &self.i_w);
        let n = self.grid.components;
        let m = self.grid.cells();
        let mut out = Field::zeros(self.grid);
        for c in 0..m {
            for i in 0..n {
                out.values[i * m + c] = (0..n)
                    .map(|j| blocks[c * n * n + i * n + j] * ih.values[j * m + c])
                    .sum();
            }
        }
        out
    }

    /// Fills `matrix` with `∇U`, row `(i, x)`, column `(j, x′)`.
    pub fn materialize(&mut self) -> Result<&DMatrix<f64>, GirsanovError> {
        if self.matrix.is_none() {
            let side = self.grid.len();
            if side > MAX_MATERIALIZED {
                return Err(GirsanovError::TooLarge {
                    side,
                    limit: MAX_MATERIALIZED,
                });
            }
            let n = self.grid.components;
            let ns = self.grid.n_side;
            let m = self.grid.cells();
            let col = inverse_column(&self.grid);
            let blocks = hessian_blocks(&self.grid, &self.potential, &self.cutoff, &self.i_w);
            let mut mat = DMatrix::zeros(side, side);
            for c in 0..m {
                let (cx, cy) = (c % ns, c / ns);
                for c2 in 0..m {
                    let (dx, dy) = ((cx + ns - c2 % ns) % ns, (cy + ns - c2 / ns) % ns);
                    let g = col[dy * ns + dx];
                    for i in 0..n {
                        for j in 0..n {
                            mat[(i * m + c, j * m + c2)] = blocks[c * n * n + i * n + j] * g;
                        }
                    }
                }
            }
            self.matrix = Some(mat);
        }
        Ok(self.matrix.as_ref().expect("materialized"))
    }

    /// `Tr ∇U = a² G_lat(0) Σ_x f(x) tr ∂²V(𝓘w(x))`.
    pub fn trace_gradient(&self) -> f64 {
        let g0 = inverse_column(&self.grid)[0];
        let n = self.grid.components;
        let blocks = hessian_blocks(&self.grid, &self.potential, &self.cutoff, &self.i_w);
        (0..self.grid.cells())
            .map(|c| (0..n).map(|i| blocks[c * n * n + i * n + i]).sum::<f64>())
            .sum::<f64>()
            * g0
    }

    fn pairing(&self, a: &Field, b: &Field) -> f64 {
        self.grid.spacing().powi(2)
            * a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x * y)
                .sum::<f64>()
    }

    pub fn u_norm_sq(&self) -> f64 {
        self.pairing(&self.u, &self.u)
    }
}

/// `U = f ∂V(φ)` pointwise for a given `φ = 𝓘w`.
pub fn shift_field(phi: &Field, p: &Potential, f: &CutOff) -> Field {
    let grid = phi.grid;
    let n = grid.components;
    let m = grid.cells();
    let mut u = Field::zeros(grid);
    let mut g = vec![0.0; n];
    for c in 0..m {
        p.grad(&phi.at(c), &mut g);
        let fc = f.f(grid.point(c));
        for k in 0..n {
            u.values[k * m + c] = fc * g[k];
        }
    }
    u
}

/// `δ(U) = ⟨U, w⟩ − Tr ∇U` with the trace of the materialized gradient.
pub fn skorokhod(shift: &mut ShiftOperator) -> Result<f64, GirsanovError> {
    let tr = shift.materialize()?.trace();
    Ok(shift.pairing(&shift.u, &shift.w) - tr)
}

/// `4 ∫ f̃′(|x|²) V(φ(x)) dx` on the lattice.
pub fn log_upsilon(phi: &Field, p: &Potential, f: &CutOff) -> f64 {
    let grid = phi.grid;
    let a2 = grid.spacing().powi(2);
    let mut acc = 0.0;
    for c in 0..grid.cells() {
        let fp = f.f_prime(grid.point(c));
        if fp != 0.0 {
            acc += fp * p.value(&phi.at(c));
        }
    }
    4.0 * a2 * acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovEval {
    pub det2_value: f64,
    pub det_value: f64,
    pub skorokhod_value: f64,
    pub u_norm_sq: f64,
    pub lambda_u: f64,
    /// `Υ_f(𝓘w)`, when requested.
    pub upsilon_f: Option<f64>,
    pub det2_sign: f64,
    pub singular: bool,
}

/// Assembles `Λ_U` at the noise field of `shift`.
pub fn lambda_u(
    shift: &mut ShiftOperator,
    with_upsilon: bool,
) -> Result<GirsanovEval, GirsanovError> {
    let d = det2(shift.materialize()?);
    let delta = skorokhod(shift)?;
    let norm = shift.u_norm_sq();
    let upsilon_f =
        with_upsilon.then(|| log_upsilon(&shift.i_w, &shift.potential, &shift.cutoff).exp());
    Ok(GirsanovEval {
        det2_value: d.value,
        det_value: d.det,
        skorokhod_value: delta,
        u_norm_sq: norm,
        lambda_u: d.value * (-delta - 0.5 * norm).exp(),
        upsilon_f,
        det2_sign: d.value.signum(),
        singular: d.singular,
    })
}

/// Writes `(seed, det2, delta, norm, lambda, upsilon)` rows.
pub fn write_evals_csv<W: std::io::Write>(rows: &[(u64, GirsanovEval)], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["seed", "det2", "delta", "norm", "lambda", "upsilon"])?;
    for (seed, e) in rows {
        out.write_record([
            seed.to_string(),
            format!("{:.17e}", e.det2_value),
            format!("{:.17e}", e.skorokhod_value),
            format!("{:.17e}", e.u_norm_sq),
            format!("{:.17e}", e.lambda_u),
            e.upsilon_f.map(|v| format!("{v:.17e}")).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Coordinatewise shift `T(w)ᵢ = wᵢ + u(wᵢ)` on `ℝᵈ` with standard Gaussian measure.
#[derive(Clone)]
pub struct ScalarShift {
    pub label: String,
    u: std::sync::Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
}

impl std::fmt::Debug for ScalarShift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label)
    }
}

impl ScalarShift {
    pub fn zero() -> Self {
        Self {
            label: "zero".into(),
            u: std::sync::Arc::new(|_| (0.0, 0.0)),
        }
    }

    /// `u(t) = amplitude · tanh(rate · t)`.
    pub fn tanh(amplitude: f64, rate: f64) -> Self {
        Self {
            label: format!("{amplitude}*tanh({rate}*t)"),
            u: std::sync::Arc::new(move |t: f64| {
                let th = (rate * t).tanh();
                (amplitude * th, amplitude * rate * (1.0 - th * th))
            }),
        }
    }

    /// `u = ∂V` of a separable built-in potential.
    pub fn from_family(family: PotentialFamily) -> Self {
        Self {
            label: family.name().into(),
            u: std::sync::Arc::new(move |t| {
                let (_, d1, d2) = family.scalar(t);
                (d1, d2)
            }),
        }
    }

    /// `(u(t), u′(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        (self.u)(t)
    }

    /// Roots of `t + u(t) = target` on `[−range, range]` from sign changes on a uniform grid,
    /// refined by bisection.
    pub fn preimages(&self, target: f64, range: f64, points: usize) -> Vec<f64> {
        let h = |t: f64| t + self.eval(t).0 - target;
        let step = 2.0 * range / points as f64;
        let mut roots = Vec::new();
        let mut lo = -range;
        let mut flo = h(lo);
        for i in 1..=points {
            let hi = -range + i as f64 * step;
            let fhi = h(hi);
            if flo == 0.0 {
                roots.push(lo);
            } else if flo * fhi < 0.0 {
                let (mut a, mut b, mut fa) = (lo, hi, flo);
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    let fm = h(mid);
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            lo = hi;
            flo = fhi;
        }
        roots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfVariablesReport {
    pub dim: usize,
    pub shift: String,
    pub trials: usize,
    /// `E[g∘T |Λ_U|]`.
    pub abs_weighted: Estimate,
    /// `E[g · #T⁻¹]` by root counting.
    pub multiplicity: Estimate,
    /// `E[g∘T Λ_U]`.
    pub signed_weighted: Estimate,
    /// Exact `E[g]` for the box indicator.
    pub e_g: f64,
    /// `signed_weighted / e_g`.
    pub degree: f64,
    pub abs_matches_multiplicity: bool,
    pub signed_matches_e_g: bool,
}

fn mean_se(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Estimate {
        value: mean,
        se: (var / n).sqrt(),
    }
}

/// Compares the three sides of the finite-dimensional change of variables for
/// `g = 1[lo, hi]ᵈ` and `T(w) = w + u(w)` coordinatewise.
pub fn finite_dim_change_of_variables_check(
    dim: usize,
    shift: &ScalarShift,
    box_lo: f64,
    box_hi: f64,
    trials: usize,
    seed: u64,
) -> Result<ChangeOfVariablesReport, GirsanovError> {
    if !(1..=3).contains(&dim) {
        return Err(GirsanovError::InvalidParameter(format!(
            "dim = {dim} must lie in 1..=3"
        )));
    }
    if trials < 2 {
        return Err(GirsanovError::InvalidParameter(
            "need at least two trials".into(),
        ));
    }
    let in_box = |t: f64| t >= box_lo && t <= box_hi;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut abs_w = Vec::with_capacity(trials);
    let mut signed = Vec::with_capacity(trials);
    let mut mult = Vec::with_capacity(trials);
    let range = 12.0;
    let mut z = vec![0.0; dim];
    for _ in 0..trials {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        // Λ_U at w = z; the same z plays the role of ξ for the root count.
        let mut det = 1.0;
        let mut pair = 0.0;
        let mut norm = 0.0;
        let mut inside = true;
        let mut count = 1usize;
        for &t in &z {
            let (u, du) = shift.eval(t);
            det *= 1.0 + du;
            pair += u * t;
            norm += u * u;
            inside &= in_box(t + u);
        }
        let lambda = det * (-pair - 0.5 * norm).exp();
        let g_t = if inside { 1.0 } else { 0.0 };
        abs_w.push(g_t * lambda.abs());
        signed.push(g_t * lambda);
        if z.iter().all(|&t| in_box(t)) {
            for &t in &z {
                let coarse = shift.preimages(t, range, 4000).len();
                let fine = shift.preimages(t, range, 8000).len();
                if coarse != fine {
                    return Err(GirsanovError::RootSearch {
                        coarse,
                        fine,
                        at: z.clone(),
                    });
                }
                count *= coarse;
            }
            mult.push(count as f64);
        } else {
            mult.push(0.0);
        }
    }
    let normal = Normal::standard();
    let e_g = (normal.cdf(box_hi) - normal.cdf(box_lo)).powi(dim as i32);
    let abs_weighted = mean_se(&abs_w);
    let multiplicity = mean_se(&mult);
    let signed_weighted = mean_se(&signed);
    let combined = (abs_weighted.se.powi(2) + multiplicity.se.powi(2)).sqrt();
    Ok(ChangeOfVariablesReport {
        dim,
        shift: shift.label.clone(),
        trials,
        abs_matches_multiplicity: (abs_weighted.value - multiplicity.value).abs()
            <= 4.0 * combined + 1e-15,
        signed_matches_e_g: (signed_weighted.value - e_g).abs() <= 4.0 * signed_weighted.se + 1e-15,
        degree: signed_weighted.value / e_g,
        abs_weighted,
        multiplicity,
        signed_weighted,
        e_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sample_white_noise;
    use crate::kernels::{make_cutoff, CutOffKind};
    use crate::potentials::builtin_potential;
    use rand::Rng;

    fn small(n: usize) -> (GridSpec, CutOff) {
        (
            GridSpec::new(4.0, n, 1, 1.0).unwrap(),
            make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap(),
        )
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn det2_examples() {
        assert_eq!(det2(&DMatrix::zeros(5, 5)).value, 1.0);
        let one = det2(&DMatrix::from_element(1, 1, 1.0)).value;
        assert!((one - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((one - 0.735_758_882_342_885).abs() < 1e-14);
        let s = det2(&DMatrix::from_element(1, 1, -1.0));
        assert!(s.singular && s.value == 0.0);
    }

    #[test]
    fn det2_lu_matches_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k = random_symmetric(&mut rng, 10);
            let a = det2(&k).value;
            let b = det2_symmetric_eigen(&k);
            assert!(((a - b) / b).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugation_preserves_det_and_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let k = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.3..0.3));
            let p = DMatrix::<f64>::identity(8, 8)
                + DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.2..0.2));
            let pk = &p * &k * p.clone().try_inverse().unwrap();
            let (a, b) = (det2(&k), det2(&pk));
            assert!(((a.det - b.det) / a.det).abs() < 1e-10);
            assert!((a.trace - b.trace).abs() < 1e-10);
            assert!(((a.value - b.value) / a.value).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_potential_gives_unit_density() {
        let (g, f) = small(8);
        let p = builtin_potential(PotentialFamily::Zero, 1, 1.0).unwrap();
        let mut s = ShiftOperator::new(&sample_white_noise(g, 1), &p, &f).unwrap();
        let e = lambda_u(&mut s, true).unwrap();
        assert_eq!(
            (e.det2_value, e.skorokhod_value, e.lambda_u, e.upsilon_f),
            (1.0, 0.0, 1.0, Some(1.0))
        );
    }

    #[test]
    fn materialized_gradient_matches_finite_differences() {
        let (g, f) = small(8);
        let p = builtin_potential(PotentialFamily::Quartic { lambda: 0.3 }, 1, 1.0).unwrap();
        let noise = sample_white_noise(g, 2);
        let mut s = ShiftOperator::new(&noise, &p, &f).unwrap();
        let mat = s.materialize().unwrap().clone();
        for k in 0..5 {
            let h = sample_white_noise(g, 100 + k).field;
            let eps = 1e-5;
            let up = shift_field(
                &apply_fractional_inverse(&noise.field.add(&h.scale(eps)), 1.0),
                &p,
                &f,
            );
            let dn = shift_field(
                &apply_fractional_inverse(&noise.field.add(&h.scale(-eps)), 1.0),
                &p,
                &f,
            );
            let fd = up.add(&dn.scale(-1.0)).scale(0.5 / eps);
            let mv = &mat * nalgebra::DVector::from_column_slice(&h.values);
            let free = s.apply_gradient(&h);
            for i in 0..g.len() {
                assert!((mv[i] - fd.values[i]).abs() <= 1e-5 * (1.0 + fd.values[i].abs()));
                assert!((mv[i] - free.values[i]).abs() <= 1e-12 * (1.0 + mv[i].abs()));
            }
        }
        assert!((mat.trace() - s.trace_gradient()).abs() < 1e-12 * (1.0 + mat.trace().abs()));
    }

    #[test]
    fn too_large_is_refused() {
        let g = GridSpec::new(4.0, 128, 1, 1.0).unwrap();
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let p = builtin_potential(PotentialFamily::Quartic { lambda: 0.3 }, 1, 1.0).unwrap();
        let mut s = ShiftOperator::new(&sample_white_noise(g, 1), &p, &f).unwrap();
        assert!(matches!(
            s.materialize(),
            Err(GirsanovError::TooLarge { .. })
        ));
    }

    #[test]
    fn linear_shift_skorokhod_matches_matrix() {
        let (g, f) = small(8);
        let c = 0.6;
        let p = builtin_potential(PotentialFamily::Quadratic { c }, 1, 1.0).unwrap();
        let noise = sample_white_noise(g, 5);
        let mut s = ShiftOperator::new(&noise, &p, &f).unwrap();
        let delta = skorokhod(&mut s).unwrap();
        // A = c F 𝓘 built column by column from the spectral inverse.
        let m = g.cells();
        let mut a = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = Field::zeros(g);
            e.values[j] = 1.0;
            let col = apply_fractional_inverse(&e, 1.0);
            for i in 0..m {
                a[(i, j)] = c * f.f(g.point(i)) * col.values[i];
            }
        }
        let w = nalgebra::DVector::from_column_slice(&noise.field.values);
        let a2 = g.spacing().powi(2);
        let oracle = a2 * (&a * &w).dot(&w) - a.trace();
        assert!((delta - oracle).abs() < 1e-10 * (1.0 + oracle.abs()));
    }

    #[test]
    fn skorokhod_is_centered() {
        let (g, f) = small(8);
        let p = builtin_potential(PotentialFamily::Quartic { lambda: 0.3 }, 1, 1.0).unwrap();
        let xs: Vec<f64> = (0..1000)
            .map(|k| {
                let mut s = ShiftOperator::new(&sample_white_noise(g, 7000 + k), &p, &f).unwrap();
                skorokhod(&mut s).unwrap()
            })
            .collect();
        let e = mean_se(&xs);
        assert!(e.value.abs() < 4.0 * e.se, "{e:?}");
    }

    #[test]
    fn quadratic_density_matches_gaussian_radon_nikodym() {
        // For linear T = I + A, the law of T⁻¹ξ is N(0, T⁻¹ΣT⁻ᵀ); its density against
        // N(0, Σ) must equal Λ_U.
        let g = GridSpec::new(6.0, 16, 1, 1.0).unwrap();
        let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let c = 0.9;
        let p = builtin_potential(PotentialFamily::Quadratic { c }, 1, 1.0).unwrap();
        let m = g.cells();
        let mut t = DMatrix::<f64>::identity(m, m);
        for j in 0..m {
            let mut e = Field::zeros(g);
            e.values[j] = 1.0;
            let col = apply_fractional_inverse(&e, 1.0);
            for i in 0..m {
                t[(i, j)] += c * f.f(g.point(i)) * col.values[i];
            }
        }
        let var = 1.0 / g.spacing().powi(2);
        let t_inv = t.clone().try_inverse().unwrap();
        let cov = &t_inv * t_inv.transpose() * var;
        let chol = cov.cholesky().unwrap();
        let log_det_cov: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        for seed in 0..3 {
            let noise = sample_white_noise(g, 40 + seed);
            let w = nalgebra::DVector::from_column_slice(&noise.field.values);
            let quad_nu = w.dot(&chol.solve(&w));
            let quad_mu = w.dot(&w) / var;
            let log_rn =
                -0.5 * quad_nu - 0.5 * log_det_cov + 0.5 * quad_mu + 0.5 * m as f64 * var.ln();
            let mut s = ShiftOperator::new(&noise, &p, &f).unwrap();
            let e = lambda_u(&mut s, false).unwrap();
            assert!(
                (e.lambda_u.ln() - log_rn).abs() < 1e-8,
                "{} vs {}",
                e.lambda_u.ln(),
                log_rn
            );
        }
    }

    #[test]
    fn convex_potential_has_positive_det2() {
        let (g, f) = small(8);
        let p = builtin_potential(PotentialFamily::Quartic { lambda: 0.5 }, 1, 1.0).unwrap();
        for k in 0..20 {
            let mut s = ShiftOperator::new(&sample_white_noise(g, k), &p, &f).unwrap();
            let e = lambda_u(&mut s, true).unwrap();
            assert_eq!(e.det2_sign, 1.0);
            let u = e.upsilon_f.unwrap();
            assert!(u > 0.0 && u <= 1.0);
        }
    }

    #[test]
    fn change_of_variables_zero_shift() {
        let r = finite_dim_change_of_variables_check(2, &ScalarShift::zero(), 0.0, 1.0, 2000, 1)
            .unwrap();
        assert_eq!(r.abs_weighted, r.multiplicity);
        assert_eq!(r.abs_weighted, r.signed_weighted);
        assert!((r.abs_weighted.value - r.e_g).abs() < 4.0 * r.abs_weighted.se);
    }

    #[test]
    fn change_of_variables_monotone() {
        let r = finite_dim_change_of_variables_check(
            1,
            &ScalarShift::tanh(1.0, 1.0),
            0.0,
            1.0,
            20_000,
            2,
        )
        .unwrap();
        assert!(r.abs_matches_multiplicity && r.signed_matches_e_g, "{r:?}");
        assert_eq!(r.abs_weighted, r.signed_weighted);
    }

    #[test]
    fn three_preimage_shift() {
        let s = ScalarShift::tanh(-2.5, 2.0);
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(s.preimages(t, 12.0, 4000).len(), 3);
        }
        assert_eq!(s.preimages(3.0, 12.0, 4000).len(), 1);
        let r = finite_dim_change_of_variables_check(1, &s, 0.0, 1.0, 20_000, 3).unwrap();
        assert!(r.abs_matches_multiplicity && r.signed_matches_e_g, "{r:?}");
        assert!((r.multiplicity.value / r.e_g - 3.0).abs() < 0.2);
    }

    #[test]
    fn evals_csv_header() {
        let mut buf = Vec::new();
        write_evals_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "seed,det2,delta,norm,lambda,upsilon"
        );
    }
}
