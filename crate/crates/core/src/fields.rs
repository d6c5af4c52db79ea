//! Periodic lattice fields: white-noise sampling, spectral powers of `m² − Δ`, lattice integrals.
//!
//! Storage is component-major: `values[c·N² + iy·N + ix]`. Cell `(0, 0)` sits at `x = 0` and
//! coordinates wrap to `(−L/2, L/2]`.

use crate::kernels::CutOff;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value {value} at component {component}, cell ({ix}, {iy})")]
    NonFinite {
        component: usize,
        ix: usize,
        iy: usize,
        value: f64,
    },
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub l: f64,
    pub n_side: usize,
    pub components: usize,
    pub m2: f64,
}

impl GridSpec {
    pub fn new(l: f64, n_side: usize, components: usize, m2: f64) -> Result<Self, FieldError> {
        let g = Self {
            l,
            n_side,
            components,
            m2,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(FieldError::InvalidGrid(format!(
                "side length L = {} must be positive",
                self.l
            )));
        }
        if self.n_side < 8 || !self.n_side.is_power_of_two() {
            return Err(FieldError::InvalidGrid(format!(
                "N = {} must be a power of two and at least 8",
                self.n_side
            )));
        }
        if self.components == 0 {
            return Err(FieldError::InvalidGrid(
                "need at least one component".into(),
            ));
        }
        if !(self.m2 > 0.0 && self.m2.is_finite()) {
            return Err(FieldError::InvalidGrid(format!(
                "m2 = {} must be positive",
                self.m2
            )));
        }
        Ok(())
    }

    /// Cell spacing `a = L/N`.
    pub fn spacing(&self) -> f64 {
        self.l / self.n_side as f64
    }

    pub fn cells(&self) -> usize {
        self.n_side * self.n_side
    }

    pub fn len(&self) -> usize {
        self.components * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centered coordinate of lattice index `i`.
    pub fn coord(&self, i: usize) -> f64 {
        let n = self.n_side as i64;
        let i = i as i64;
        let j = if i > n / 2 { i - n } else { i };
        j as f64 * self.spacing()
    }

    pub fn point(&self, cell: usize) -> [f64; 2] {
        [
            self.coord(cell % self.n_side),
            self.coord(cell / self.n_side),
        ]
    }

    /// Wavenumber `2π j/L` of Fourier index `i` with `j` the signed offset.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.n_side as i64;
        let i = i as i64;
        let j = if i > n / 2 { i - n } else { i };
        2.0 * PI * j as f64 / self.l
    }

    /// `|k|²` for every Fourier cell in storage order.
    pub fn k_squared(&self) -> Vec<f64> {
        let n = self.n_side;
        let k: Vec<f64> = (0..n).map(|i| self.wavenumber(i)).collect();
        let mut out = Vec::with_capacity(n * n);
        for ky in &k {
            for kx in &k {
                out.push(kx * kx + ky * ky);
            }
        }
        out
    }

    /// `(1/L²) Σ_k e^{ik·x} (m² + |k|²)^{−power}` with `x` the centered position of `cell`.
    pub fn lattice_covariance(&self, power: f64, cell: usize) -> f64 {
        let n = self.n_side;
        let [x, y] = self.point(cell);
        let mut acc = 0.0;
        for iy in 0..n {
            let ky = self.wavenumber(iy);
            for ix in 0..n {
                let kx = self.wavenumber(ix);
                acc += (kx * x + ky * y).cos() * (self.m2 + kx * kx + ky * ky).powf(-power);
            }
        }
        acc / (self.l * self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::Shape(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let m = self.grid.cells();
        &self.values[c * m..(c + 1) * m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.grid.cells();
        &mut self.values[c * m..(c + 1) * m]
    }

    /// Vector value at one cell.
    pub fn at(&self, cell: usize) -> Vec<f64> {
        let m = self.grid.cells();
        (0..self.grid.components)
            .map(|c| self.values[c * m + cell])
            .collect()
    }

    /// Value at the origin cell.
    pub fn at_origin(&self) -> Vec<f64> {
        self.at(0)
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        let m = self.grid.cells();
        let n = self.grid.n_side;
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(FieldError::NonFinite {
                component: i / m,
                ix: (i % m) % n,
                iy: (i % m) / n,
                value: self.values[i],
            }),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lattice `L²` norm `(a² Σ |v|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let a = self.grid.spacing();
        (a * a * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add(&self, other: &Field) -> Field {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    pub fn scale(&self, s: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        w.write_all(MAGIC)?;
        w.write_all(&[1u8, 0, 0, 0, 0, 0, 0, 0])?;
        w.write_all(&(self.grid.components as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n_side as u64).to_le_bytes())?;
        w.write_all(&self.grid.l.to_le_bytes())?;
        w.write_all(&self.grid.m2.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field, FieldError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FieldError::Format("bad magic".into()));
        }
        let mut flags = [0u8; 8];
        r.read_exact(&mut flags)?;
        if flags[0] != 1 {
            return Err(FieldError::Format(format!(
                "unsupported endianness flag {}",
                flags[0]
            )));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let components = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let n_side = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let l = f64::from_le_bytes(b);
        r.read_exact(&mut b)?;
        let m2 = f64::from_le_bytes(b);
        let grid = GridSpec::new(l, n_side, components, m2)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        Ok(Field { grid, values })
    }

    /// CSV rows `ix,iy,x,y,value` for one component.
    pub fn write_csv_slice<W: Write>(&self, component: usize, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["ix", "iy", "x", "y", "value"])?;
        let n = self.grid.n_side;
        for (cell, v) in self.component(component).iter().enumerate() {
            let [x, y] = self.grid.point(cell);
            out.write_record([
                (cell % n).to_string(),
                (cell / n).to_string(),
                format!("{x}"),
                format!("{y}"),
                format!("{v:.17e}"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"DRFIELD1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub field: Field,
    pub seed: u64,
    pub scheme: String,
}

pub const SEED_SCHEME: &str = "chacha8/splitmix64-counter";

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `index`: the SplitMix64 output at counter `index + 1` of the stream
/// started at `master`, i.e. `mix(master + (index+1)·0x9E3779B97F4A7C15)`.
pub fn replica_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// I.i.d. centered Gaussians per cell with variance `1/a²`.
pub fn sample_white_noise(grid: GridSpec, seed: u64) -> NoiseDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_a = 1.0 / grid.spacing();
    let values = (0..grid.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * inv_a
        })
        .collect();
    NoiseDraw {
        field: Field { grid, values },
        seed,
        scheme: SEED_SCHEME.to_string(),
    }
}

/// Cached FFT plans and `|k|²` table for one lattice size.
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k2: Vec<f64>,
    scratch: Vec<Complex64>,
    column: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: &GridSpec) -> Self {
        let n = grid.n_side;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            k2: grid.k_squared(),
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            column: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.k2
    }

    fn fft2(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse {
            self.inv.clone()
        } else {
            self.fwd.clone()
        };
        plan.process_with_scratch(data, &mut self.scratch);
        for ix in 0..n {
            for iy in 0..n {
                self.column[iy] = data[iy * n + ix];
            }
            plan.process_with_scratch(&mut self.column, &mut self.scratch);
            for iy in 0..n {
                data[iy * n + ix] = self.column[iy];
            }
        }
    }

    /// Unnormalized forward transform of one real component.
    pub fn forward(&mut self, real: &[f64], out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(real.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fft2(out, false);
    }

    /// Inverse transform (including the `1/N²` factor), keeping the real part.
    pub fn inverse(&mut self, spec: &mut [Complex64], out: &mut [f64]) {
        self.fft2(spec, true);
        let norm = 1.0 / (self.n * self.n) as f64;
        for (o, c) in out.iter_mut().zip(spec.iter()) {
            *o = c.re * norm;
        }
    }

    /// Multiplies every component by `symbol(|k|²)` in Fourier space.
    pub fn apply<S: Fn(f64) -> f64>(&mut self, field: &Field, symbol: S) -> Field {
        let mut out = Field::zeros(field.grid);
        let mut buf = Vec::with_capacity(self.n * self.n);
        let mults: Vec<f64> = self.k2.iter().map(|&k2| symbol(k2)).collect();
        for c in 0..field.grid.components {
            self.forward(field.component(c), &mut buf);
            for (z, m) in buf.iter_mut().zip(&mults) {
                *z *= m;
            }
            self.inverse(&mut buf, out.component_mut(c));
        }
        out
    }
}

thread_local! {
    static SPECTRAL_CACHE: RefCell<HashMap<(usize, u64), Spectral>> = RefCell::new(HashMap::new());
}

/// Runs `f` with a per-thread cached `Spectral` for the grid.
pub fn with_spectral<R>(grid: &GridSpec, f: impl FnOnce(&mut Spectral) -> R) -> R {
    SPECTRAL_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let key = (grid.n_side, grid.l.to_bits());
        let s = cache.entry(key).or_insert_with(|| Spectral::new(grid));
        f(s)
    })
}

/// Multiplies by `(m² + |k|²)^{−α}` in Fourier space; negative `α` applies the forward power.
pub fn apply_fractional_inverse(field: &Field, alpha: f64) -> Field {
    let m2 = field.grid.m2;
    with_spectral(&field.grid, |s| s.apply(field, |k2| (m2 + k2).powf(-alpha)))
}

#[derive(Debug, Clone, Copy)]
pub enum Weight<'a> {
    None,
    /// Pointwise `f(x)`.
    CutOff(&'a CutOff),
    /// Pointwise `f̃′(|x|²)`.
    CutOffPrime(&'a CutOff),
}

/// Per-cell weights of a lattice integral, `a²` included.
pub fn weight_table(grid: &GridSpec, weight: Weight<'_>) -> Vec<f64> {
    let a2 = grid.spacing().powi(2);
    (0..grid.cells())
        .map(|cell| {
            let x = grid.point(cell);
            a2 * match weight {
                Weight::None => 1.0,
                Weight::CutOff(c) => c.f(x),
                Weight::CutOffPrime(c) => c.f_prime(x),
            }
        })
        .collect()
}

/// `a² Σ_cells w(x) v(x)` for each component.
pub fn lattice_integral(field: &Field, weight: Weight<'_>) -> Vec<f64> {
    let w = weight_table(&field.grid, weight);
    (0..field.grid.components)
        .map(|c| field.component(c).iter().zip(&w).map(|(v, w)| v * w).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_cutoff, CutOffKind};

    fn grid(n: usize, l: f64) -> GridSpec {
        GridSpec::new(l, n, 1, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(16.0, 12, 1, 1.0).is_err());
        assert!(GridSpec::new(16.0, 4, 1, 1.0).is_err());
        assert!(GridSpec::new(-1.0, 16, 1, 1.0).is_err());
        assert!(GridSpec::new(16.0, 16, 0, 1.0).is_err());
        assert!(GridSpec::new(16.0, 16, 1, 0.0).is_err());
        let g = grid(16, 8.0);
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.coord(0), 0.0);
        assert_eq!(g.coord(15), -0.5);
        assert_eq!(g.coord(8), 4.0);
    }

    #[test]
    fn noise_is_deterministic() {
        let g = grid(256, 16.0);
        let a = sample_white_noise(g, 7);
        let b = sample_white_noise(g, 7);
        assert_eq!(a, b);
        let c = sample_white_noise(g, 8);
        assert_ne!(a.field.values, c.field.values);
    }

    #[test]
    fn noise_moments() {
        let g = grid(256, 16.0);
        let d = sample_white_noise(g, 11);
        let m = d.field.values.len() as f64;
        let mean = d.field.values.iter().sum::<f64>() / m;
        let var = 1.0 / g.spacing().powi(2);
        assert!(mean.abs() < 4.0 * (var / m).sqrt());
        let sample_var = d
            .field
            .values
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (m - 1.0);
        let se = var * (2.0 / m).sqrt();
        assert!((sample_var - var).abs() < 5.0 * se, "{sample_var} vs {var}");
    }

    #[test]
    fn constant_and_mode_eigenfunctions() {
        let g = grid(32, 8.0);
        let c = Field::constant(g, 3.0);
        let out = apply_fractional_inverse(&c, 1.0);
        assert!(out.values.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let g = GridSpec::new(8.0, 32, 1, 2.0).unwrap();
        let (jx, jy) = (3usize, 5usize);
        let kx = g.wavenumber(jx);
        let ky = g.wavenumber(jy);
        let mut f = Field::zeros(g);
        for cell in 0..g.cells() {
            let [x, y] = g.point(cell);
            f.values[cell] = (kx * x + ky * y).cos();
        }
        let out = apply_fractional_inverse(&f, 2.0);
        let s = (2.0 + kx * kx + ky * ky).powi(-2);
        for (o, i) in out.values.iter().zip(&f.values) {
            assert!((o - s * i).abs() < 1e-13);
        }
    }

    #[test]
    fn forward_then_inverse_round_trip() {
        let g = grid(64, 10.0);
        let d = sample_white_noise(g, 3);
        let there = apply_fractional_inverse(&d.field, 1.3);
        let back = apply_fractional_inverse(&there, -1.3);
        let scale = d.field.sup_norm();
        assert!(back.sup_distance(&d.field) / scale < 1e-10);
    }

    #[test]
    fn parseval() {
        let g = grid(64, 10.0);
        let d = sample_white_noise(g, 5);
        let mut buf = Vec::new();
        with_spectral(&g, |s| s.forward(&d.field.values, &mut buf));
        let n2 = g.cells() as f64;
        let real: f64 = d.field.values.iter().map(|v| v * v).sum();
        let fourier: f64 = buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / n2;
        assert!((real - fourier).abs() / real < 1e-10);
    }

    #[test]
    fn lattice_integrals() {
        let g = grid(64, 16.0);
        let one = Field::constant(g, 1.0);
        assert!((lattice_integral(&one, Weight::None)[0] - 256.0).abs() < 1e-9);
        assert_eq!(lattice_integral(&Field::zeros(g), Weight::None)[0], 0.0);
        let g = GridSpec::new(48.0, 512, 1, 1.0).unwrap();
        let c = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
        let v = lattice_integral(&Field::constant(g, 1.0), Weight::CutOffPrime(&c))[0];
        let exact = -PI * (-1.0f64).exp();
        assert!((v - exact).abs() / exact.abs() < 1e-6, "{v} vs {exact}");
    }

    #[test]
    fn lattice_covariance_tends_to_continuum() {
        let g = GridSpec::new(32.0, 256, 1, 1.0).unwrap();
        let v = g.lattice_covariance(2.0, 0);
        assert!((v - 1.0 / (4.0 * PI)).abs() / v < 2e-3, "{v}");
    }

    #[test]
    fn binary_round_trip() {
        let g = GridSpec::new(5.0, 16, 2, 1.5).unwrap();
        let d = sample_white_noise(g, 9).field;
        let mut bytes = Vec::new();
        d.write_binary(&mut bytes).unwrap();
        let back = Field::read_binary(&bytes[..]).unwrap();
        assert_eq!(back, d);
        bytes[0] = b'X';
        assert!(Field::read_binary(&bytes[..]).is_err());
    }

    #[test]
    fn non_finite_reported_with_cell() {
        let g = grid(16, 4.0);
        let mut f = Field::zeros(g);
        f.values[3 * 16 + 5] = f64::NAN;
        match f.check_finite() {
            Err(FieldError::NonFinite { ix, iy, .. }) => assert_eq!((ix, iy), (5, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replica_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..10_000).map(|i| replica_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_eq!(replica_seed(42, 3), replica_seed(42, 3));
    }
}
