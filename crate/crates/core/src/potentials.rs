//! Potentials `V : ℝⁿ → ℝ` with derivatives, hypothesis tags and sampled hypothesis probes.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PotentialError {
    #[error("unknown potential family `{0}`")]
    UnknownFamily(String),
    #[error("invalid potential parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    C,
    QC,
    VLambda,
    Bounded,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::C => "C",
            Tag::QC => "QC",
            Tag::VLambda => "V_lambda",
            Tag::Bounded => "bounded",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub freq: f64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Serializable potential families. Every builtin family is a sum over components
/// `V(y) = Σᵢ u(yᵢ)` of one scalar profile `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialFamily {
    Zero,
    /// `u(t) = c t²/2`.
    Quadratic {
        c: f64,
    },
    /// `u(t) = λ t⁴`.
    Quartic {
        lambda: f64,
    },
    /// `u(t) = λ t⁴ + amplitude (1 − cos t)`.
    QuarticPlusBounded {
        lambda: f64,
        amplitude: f64,
    },
    /// `u(t) = offset + Σ (a cos(ωt) + b sin(ωt))`; the offset defaults to `Σ(|a|+|b|)`.
    TrigPolynomial {
        terms: Vec<TrigTerm>,
        #[serde(default)]
        offset: Option<f64>,
    },
    /// `u(t) = amplitude (1 + cos(freq t))`.
    DoubleWell {
        amplitude: f64,
        freq: f64,
    },
}

impl PotentialFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialFamily::Zero => "zero",
            PotentialFamily::Quadratic { .. } => "quadratic",
            PotentialFamily::Quartic { .. } => "quartic",
            PotentialFamily::QuarticPlusBounded { .. } => "quartic_plus_bounded",
            PotentialFamily::TrigPolynomial { .. } => "trig_polynomial",
            PotentialFamily::DoubleWell { .. } => "double_well",
        }
    }

    /// Parses a family from its tag and a flat parameter list.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self, PotentialError> {
        let need = |k: usize| {
            if params.len() < k {
                Err(PotentialError::InvalidParameter(format!(
                    "{name} needs {k} parameters, got {}",
                    params.len()
                )))
            } else {
                Ok(())
            }
        };
        Ok(match name {
            "zero" => PotentialFamily::Zero,
            "quadratic" => {
                need(1)?;
                PotentialFamily::Quadratic { c: params[0] }
            }
            "quartic" => {
                need(1)?;
                PotentialFamily::Quartic { lambda: params[0] }
            }
            "quartic_plus_bounded" => {
                need(2)?;
                PotentialFamily::QuarticPlusBounded {
                    lambda: params[0],
                    amplitude: params[1],
                }
            }
            "trig_polynomial" => {
                if params.is_empty() || params.len() % 3 != 0 {
                    return Err(PotentialError::InvalidParameter(
                        "trig_polynomial takes (freq, cos, sin) triples".into(),
                    ));
                }
                let terms = params
                    .chunks(3)
                    .map(|c| TrigTerm {
                        freq: c[0],
                        cos: c[1],
                        sin: c[2],
                    })
                    .collect();
                PotentialFamily::TrigPolynomial {
                    terms,
                    offset: None,
                }
            }
            "double_well" => {
                need(2)?;
                PotentialFamily::DoubleWell {
                    amplitude: params[0],
                    freq: params[1],
                }
            }
            other => return Err(PotentialError::UnknownFamily(other.to_string())),
        })
    }

    fn validate(&self) -> Result<(), PotentialError> {
        let bad = |s: String| Err(PotentialError::InvalidParameter(s));
        match self {
            PotentialFamily::Quadratic { c } if !c.is_finite() => bad(format!("c = {c}")),
            PotentialFamily::Quartic { lambda } if !(*lambda >= 0.0) => {
                bad(format!("lambda = {lambda} must be non-negative"))
            }
            PotentialFamily::QuarticPlusBounded { lambda, amplitude }
                if !(*lambda >= 0.0 && amplitude.is_finite()) =>
            {
                bad(format!("lambda = {lambda}, amplitude = {amplitude}"))
            }
            PotentialFamily::TrigPolynomial { terms, .. } if terms.is_empty() => {
                bad("empty trig polynomial".into())
            }
            PotentialFamily::DoubleWell { amplitude, freq }
                if !(amplitude.is_finite() && freq.is_finite()) =>
            {
                bad(format!("amplitude = {amplitude}, freq = {freq}"))
            }
            _ => Ok(()),
        }
    }

    fn trig_offset(terms: &[TrigTerm], offset: Option<f64>) -> f64 {
        offset.unwrap_or_else(|| terms.iter().map(|t| t.cos.abs() + t.sin.abs()).sum())
    }

    /// `(u, u′, u″)` at `t`.
    #[inline]
    pub fn scalar(&self, t: f64) -> (f64, f64, f64) {
        match self {
            PotentialFamily::Zero => (0.0, 0.0, 0.0),
            PotentialFamily::Quadratic { c } => (0.5 * c * t * t, c * t, *c),
            PotentialFamily::Quartic { lambda } => {
                let t2 = t * t;
                (lambda * t2 * t2, 4.0 * lambda * t2 * t, 12.0 * lambda * t2)
            }
            PotentialFamily::QuarticPlusBounded { lambda, amplitude } => {
                let t2 = t * t;
                let (s, c) = t.sin_cos();
                (
                    lambda * t2 * t2 + amplitude * (1.0 - c),
                    4.0 * lambda * t2 * t + amplitude * s,
                    12.0 * lambda * t2 + amplitude * c,
                )
            }
            PotentialFamily::TrigPolynomial { terms, offset } => {
                let mut v = Self::trig_offset(terms, *offset);
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for term in terms {
                    let (s, c) = (term.freq * t).sin_cos();
                    let w = term.freq;
                    v += term.cos * c + term.sin * s;
                    d1 += w * (-term.cos * s + term.sin * c);
                    d2 += -w * w * (term.cos * c + term.sin * s);
                }
                (v, d1, d2)
            }
            PotentialFamily::DoubleWell { amplitude, freq } => {
                let (s, c) = (freq * t).sin_cos();
                (
                    amplitude * (1.0 + c),
                    -amplitude * freq * s,
                    -amplitude * freq * freq * c,
                )
            }
        }
    }

    fn lambda(&self) -> Option<f64> {
        match self {
            PotentialFamily::Zero
            | PotentialFamily::TrigPolynomial { .. }
            | PotentialFamily::DoubleWell { .. } => Some(0.0),
            PotentialFamily::Quartic { lambda }
            | PotentialFamily::QuarticPlusBounded { lambda, .. } => Some(*lambda),
            PotentialFamily::Quadratic { .. } => None,
        }
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Radial one-sided gradient bound `H` of the QC hypothesis.
#[derive(Clone)]
pub enum QcBound {
    /// `H(y) = c Σ|yᵢ|³ + d`.
    Cubic {
        c: f64,
        d: f64,
    },
    /// `H(y) = c |y| + d`.
    Linear {
        c: f64,
        d: f64,
    },
    /// `H(y) = c₁ e^{c₂|y|}`.
    Exponential {
        c1: f64,
        c2: f64,
    },
    Custom(ScalarFn),
}

impl fmt::Debug for QcBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QcBound::Cubic { c, d } => write!(f, "Cubic({c}, {d})"),
            QcBound::Linear { c, d } => write!(f, "Linear({c}, {d})"),
            QcBound::Exponential { c1, c2 } => write!(f, "Exponential({c1}, {c2})"),
            QcBound::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl QcBound {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            QcBound::Cubic { c, d } => c * y.iter().map(|v| v.abs().powi(3)).sum::<f64>() + d,
            QcBound::Linear { c, d } => c * norm(y) + d,
            QcBound::Exponential { c1, c2 } => c1 * (c2 * norm(y)).exp(),
            QcBound::Custom(h) => h(y),
        }
    }
}

#[derive(Clone)]
enum Kind {
    Separable(PotentialFamily),
    Custom {
        v: ScalarFn,
        grad: VectorFn,
        hess: VectorFn,
    },
}

/// A potential with its derivatives and hypothesis bookkeeping.
#[derive(Clone)]
pub struct Potential {
    pub n: usize,
    kind: Kind,
    pub tags: BTreeSet<Tag>,
    /// `(α, β)` with `|V|, |∂V|, |∂²V| ≤ e^{α|y|+β}` on the probe set.
    pub growth: (f64, f64),
    /// `λ` of the decomposition `V = V_B + λ Σ yᵢ⁴` when tagged `V_lambda`.
    pub vlambda: Option<f64>,
    pub qc_bound: Option<QcBound>,
    pub warnings: Vec<String>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("n", &self.n)
            .field(
                "family",
                &self.family().map(|p| p.name()).unwrap_or("custom"),
            )
            .field("tags", &self.tags)
            .field("growth", &self.growth)
            .field("vlambda", &self.vlambda)
            .field("qc_bound", &self.qc_bound)
            .field("warnings", &self.warnings)
            .finish()
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Potential {
    /// Untagged potential from user callables. `grad` and `hess` write into the output slice
    /// (`n` and `n·n` entries, row-major).
    pub fn custom(
        n: usize,
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hess: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            kind: Kind::Custom {
                v: Arc::new(v),
                grad: Arc::new(grad),
                hess: Arc::new(hess),
            },
            tags: BTreeSet::new(),
            growth: (1.0, 0.0),
            vlambda: None,
            qc_bound: None,
            warnings: Vec::new(),
        }
    }

    pub fn family(&self) -> Option<&PotentialFamily> {
        match &self.kind {
            Kind::Separable(f) => Some(f),
            Kind::Custom { .. } => None,
        }
    }

    pub fn has(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family(), Some(PotentialFamily::Zero))
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        match &self.kind {
            Kind::Separable(f) => y.iter().map(|&t| f.scalar(t).0).sum(),
            Kind::Custom { v, .. } => v(y),
        }
    }

    pub fn grad(&self, y: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Separable(f) => {
                for (o, &t) in out.iter_mut().zip(y) {
                    *o = f.scalar(t).1;
                }
            }
            Kind::Custom { grad, .. } => grad(y, out),
        }
    }

    pub fn hess(&self, y: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Separable(f) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (i, &t) in y.iter().enumerate() {
                    out[i * self.n + i] = f.scalar(t).2;
                }
            }
            Kind::Custom { hess, .. } => hess(y, out),
        }
    }

    pub fn grad_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        self.grad(y, &mut g);
        g
    }

    pub fn hess_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.n * self.n];
        self.hess(y, &mut h);
        h
    }

    pub fn qc_h(&self, y: &[f64]) -> Option<f64> {
        self.qc_bound.as_ref().map(|h| h.eval(y))
    }

    /// `s·V` for `s > 0`, keeping the tags of `V`.
    pub fn scaled(&self, s: f64) -> Potential {
        assert!(s > 0.0, "scale must be positive");
        if s == 1.0 {
            return self.clone();
        }
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        let mut out = Potential::custom(
            self.n,
            move |y| s * a.value(y),
            move |y, g| {
                b.grad(y, g);
                g.iter_mut().for_each(|v| *v *= s);
            },
            move |y, h| {
                c.hess(y, h);
                h.iter_mut().for_each(|v| *v *= s);
            },
        );
        out.tags = self.tags.clone();
        out.growth = (self.growth.0, self.growth.1 + s.ln().max(0.0));
        out.vlambda = self.vlambda.map(|l| s * l);
        out.qc_bound = self
            .qc_bound
            .clone()
            .map(|h| QcBound::Custom(Arc::new(move |y: &[f64]| s * h.eval(y)) as ScalarFn));
        out.warnings = self.warnings.clone();
        out
    }
}

/// Builds a tagged potential. Declared tags are re-probed; failures are dropped with a warning.
pub fn builtin_potential(
    family: PotentialFamily,
    n: usize,
    m2: f64,
) -> Result<Potential, PotentialError> {
    if n == 0 {
        return Err(PotentialError::InvalidParameter(
            "n must be at least 1".into(),
        ));
    }
    family.validate()?;
    let sq = (n as f64).sqrt();
    let (declared, qc): (Vec<Tag>, Option<QcBound>) = match &family {
        PotentialFamily::Zero => (
            vec![Tag::C, Tag::QC, Tag::VLambda, Tag::Bounded],
            Some(QcBound::Linear { c: 0.0, d: 0.0 }),
        ),
        PotentialFamily::Quadratic { c } => {
            let qc = if *c >= 0.0 {
                Some(QcBound::Linear { c: *c, d: 0.0 })
            } else {
                None
            };
            (vec![Tag::C, Tag::QC], qc)
        }
        PotentialFamily::Quartic { lambda } => (
            vec![Tag::C, Tag::QC, Tag::VLambda],
            Some(QcBound::Cubic {
                c: 4.0 * lambda,
                d: 0.0,
            }),
        ),
        PotentialFamily::QuarticPlusBounded { lambda, amplitude } => (
            vec![Tag::C, Tag::QC, Tag::VLambda],
            Some(QcBound::Cubic {
                c: 4.0 * lambda,
                d: amplitude.abs() * sq,
            }),
        ),
        PotentialFamily::TrigPolynomial { terms, .. } => {
            let d: f64 = terms
                .iter()
                .map(|t| t.freq.abs() * (t.cos.abs() + t.sin.abs()))
                .sum();
            (
                vec![Tag::C, Tag::QC, Tag::VLambda, Tag::Bounded],
                Some(QcBound::Linear { c: 0.0, d: d * sq }),
            )
        }
        PotentialFamily::DoubleWell { amplitude, freq } => (
            vec![Tag::C, Tag::QC, Tag::VLambda, Tag::Bounded],
            Some(QcBound::Linear {
                c: 0.0,
                d: (amplitude * freq).abs() * sq,
            }),
        ),
    };
    let mut p = Potential {
        n,
        kind: Kind::Separable(family.clone()),
        tags: BTreeSet::new(),
        growth: (1.0, 0.0),
        vlambda: family.lambda(),
        qc_bound: qc,
        warnings: Vec::new(),
    };
    let probe = ProbeSpec::standard(n, m2);
    let positivity = check_hypothesis(&p, Hypothesis::C, &probe).positivity;
    if let Positivity::Unbounded { at } = &positivity {
        p.warnings.push(format!(
            "V is not bounded below on the probe set (e.g. at {at:?})"
        ));
    }
    for tag in declared {
        let report = match tag {
            Tag::C => check_hypothesis(&p, Hypothesis::C, &probe),
            Tag::QC => {
                if p.qc_bound.is_none() {
                    p.warnings
                        .push("QC dropped: no radial gradient bound for this family".into());
                    continue;
                }
                check_hypothesis(&p, Hypothesis::QC, &probe)
            }
            Tag::VLambda => check_hypothesis(&p, Hypothesis::VLambda, &probe),
            Tag::Bounded => {
                let r = check_hypothesis(&p, Hypothesis::VLambda, &probe);
                if r.passed && p.vlambda == Some(0.0) {
                    p.tags.insert(Tag::Bounded);
                } else {
                    p.warnings.push("bounded tag dropped by probe".into());
                }
                continue;
            }
        };
        if report.passed {
            p.tags.insert(tag);
        } else {
            let detail = report.counterexample.map(|c| c.detail).unwrap_or_default();
            p.warnings.push(format!("{tag} dropped by probe: {detail}"));
        }
    }
    if !p.has(Tag::VLambda) {
        p.vlambda = None;
    }
    p.growth = fit_growth(&p, &probe);
    Ok(p)
}

fn fit_growth(p: &Potential, probe: &ProbeSpec) -> (f64, f64) {
    let mut beta: f64 = f64::NEG_INFINITY;
    for y in probe.base_points(p.n) {
        let g = p.grad_vec(&y);
        let h = p.hess_vec(&y);
        let m = p
            .value(&y)
            .abs()
            .max(norm(&g))
            .max(h.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .max(1e-300);
        beta = beta.max(m.ln() - norm(&y));
    }
    (1.0, beta.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    C,
    QC,
    VLambda,
}

/// Probe grid for the sampled hypothesis checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub m2: f64,
    /// Base points range over `[−range, range]ⁿ`.
    pub range: f64,
    /// Grid points per axis when `n ≤ 2`, random points otherwise.
    pub base_points: usize,
    pub directions: usize,
    pub radius_max: f64,
    pub radii: usize,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn standard(n: usize, m2: f64) -> Self {
        Self {
            m2,
            range: 10.0,
            base_points: if n == 1 {
                201
            } else if n == 2 {
                41
            } else {
                2000
            },
            directions: 16,
            radius_max: 10.0,
            radii: 41,
            seed: 0x5eed,
        }
    }

    fn base_points_in(&self, n: usize, range: f64) -> Vec<Vec<f64>> {
        let k = self.base_points.max(2);
        let axis: Vec<f64> = (0..k)
            .map(|i| -range + 2.0 * range * i as f64 / (k - 1) as f64)
            .collect();
        match n {
            1 => axis.iter().map(|&t| vec![t]).collect(),
            2 => axis
                .iter()
                .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
                .collect(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..k)
                    .map(|_| (0..n).map(|_| rng.random_range(-range..=range)).collect())
                    .collect()
            }
        }
    }

    pub fn base_points(&self, n: usize) -> Vec<Vec<f64>> {
        self.base_points_in(n, self.range)
    }

    fn unit_directions(&self, n: usize) -> Vec<Vec<f64>> {
        if n == 1 {
            return vec![vec![1.0], vec![-1.0]];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xd1);
        let mut out = Vec::new();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            out.push(e.clone());
            e[i] = -1.0;
            out.push(e);
        }
        while out.len() < self.directions.max(2 * n) {
            let v: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let s = norm(&v);
            out.push(v.iter().map(|x| x / s).collect());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Positivity {
    Positive,
    /// Negative somewhere but bounded below; adding `shift` restores positivity.
    /// Constant shifts of `V` leave the equation and every self-normalized estimate unchanged.
    ShiftedBy {
        shift: f64,
    },
    Unbounded {
        at: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub point: Vec<f64>,
    pub direction: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub which: Hypothesis,
    pub passed: bool,
    pub positivity: Positivity,
    pub min_value: f64,
    pub counterexample: Option<Counterexample>,
    /// `(c₁, c₂)` of a fitted `H(y) = c₁ e^{c₂|y|}` (QC checks without a supplied bound).
    pub fitted_h: Option<(f64, f64)>,
    pub probe: ProbeSpec,
}

fn positivity(p: &Potential, probe: &ProbeSpec) -> (Positivity, f64) {
    let inner = probe.base_points_in(p.n, probe.range);
    let outer = probe.base_points_in(p.n, 2.0 * probe.range);
    let min_of = |pts: &[Vec<f64>]| {
        pts.iter()
            .map(|y| (p.value(y), y.clone()))
            .fold(
                (f64::INFINITY, vec![]),
                |a, b| if b.0 < a.0 { b } else { a },
            )
    };
    let (m_in, _) = min_of(&inner);
    let (m_out, at) = min_of(&outer);
    if m_in >= 0.0 && m_out >= 0.0 {
        (Positivity::Positive, m_in)
    } else if m_out < m_in - 1e-9 * (1.0 + m_in.abs()) {
        (Positivity::Unbounded { at }, m_out)
    } else {
        (
            Positivity::ShiftedBy {
                shift: -m_out.min(m_in),
            },
            m_in,
        )
    }
}

/// Sampled check of one hypothesis. Never errors: failures are report content.
pub fn check_hypothesis(p: &Potential, which: Hypothesis, probe: &ProbeSpec) -> HypothesisReport {
    let (positivity, min_value) = positivity(p, probe);
    let mut report = HypothesisReport {
        which,
        passed: true,
        positivity: positivity.clone(),
        min_value,
        counterexample: None,
        fitted_h: None,
        probe: probe.clone(),
    };
    if let Positivity::Unbounded { at } = positivity {
        report.passed = false;
        report.counterexample = Some(Counterexample {
            point: at.clone(),
            direction: None,
            radius: None,
            detail: format!(
                "V({at:?}) = {:e} and V decreases further outward (positivity fails)",
                p.value(&at)
            ),
        });
        return report;
    }
    let n = p.n;
    match which {
        Hypothesis::C => {
            let mut h = vec![0.0; n * n];
            for y in probe.base_points(n) {
                p.hess(&y, &mut h);
                let mut m = DMatrix::from_row_slice(n, n, &h);
                for i in 0..n {
                    m[(i, i)] += 2.0 * probe.m2;
                }
                let min_eig = if n == 1 {
                    m[(0, 0)]
                } else {
                    SymmetricEigen::new(m).eigenvalues.min()
                };
                if !(min_eig > 0.0) {
                    report.passed = false;
                    report.counterexample = Some(Counterexample {
                        point: y.clone(),
                        direction: None,
                        radius: None,
                        detail: format!("smallest eigenvalue of hess V + 2m² = {min_eig:e}"),
                    });
                    break;
                }
            }
        }
        Hypothesis::QC => qc_check(p, probe, &mut report),
        Hypothesis::VLambda => {
            let lambda = p.vlambda.unwrap_or(0.0);
            let sup = |range: f64| {
                let mut s = [0.0f64; 3];
                let mut g = vec![0.0; n];
                let mut h = vec![0.0; n * n];
                for y in probe.base_points_in(n, range) {
                    p.grad(&y, &mut g);
                    p.hess(&y, &mut h);
                    let quartic: f64 = y.iter().map(|t| t.powi(4)).sum();
                    s[0] = s[0].max((p.value(&y) - lambda * quartic).abs());
                    for i in 0..n {
                        s[1] = s[1].max((g[i] - 4.0 * lambda * y[i].powi(3)).abs());
                        for j in 0..n {
                            let q = if i == j {
                                12.0 * lambda * y[i] * y[i]
                            } else {
                                0.0
                            };
                            s[2] = s[2].max((h[i * n + j] - q).abs());
                        }
                    }
                }
                s
            };
            let inner = sup(probe.range);
            let outer = sup(2.0 * probe.range);
            for k in 0..3 {
                if outer[k] > 1.5 * inner[k] + 1e-9 {
                    report.passed = false;
                    report.counterexample = Some(Counterexample {
                        point: vec![2.0 * probe.range; n],
                        direction: None,
                        radius: None,
                        detail: format!(
                            "derivative {k} of V − λΣy⁴ grows from {:e} to {:e} when the probe range doubles",
                            inner[k], outer[k]
                        ),
                    });
                    break;
                }
            }
        }
    }
    report
}

fn qc_check(p: &Potential, probe: &ProbeSpec, report: &mut HypothesisReport) {
    let n = p.n;
    let dirs = probe.unit_directions(n);
    let mut g = vec![0.0; n];
    let mut y_shift = vec![0.0; n];
    let mut observed = Vec::new();
    for y in probe.base_points(n) {
        let mut h_obs = 0.0f64;
        for d in &dirs {
            let mut eval = |r: f64| {
                for i in 0..n {
                    y_shift[i] = y[i] + r * d[i];
                }
                p.grad(&y_shift, &mut g);
                -(0..n).map(|i| d[i] * g[i]).sum::<f64>()
            };
            let mut inner = f64::NEG_INFINITY;
            let mut arg = 0.0;
            let mut outer = f64::NEG_INFINITY;
            let mut far = f64::NEG_INFINITY;
            let k = probe.radii.max(2);
            for j in 0..k {
                let t = j as f64 / (k - 1) as f64;
                let r = probe.radius_max * t;
                let v = eval(r);
                if v > inner {
                    inner = v;
                    arg = r;
                }
                outer = outer.max(eval(probe.radius_max * (1.0 + 3.0 * t)));
                far = far.max(eval(probe.radius_max * (4.0 + 12.0 * t)));
            }
            let grows = |a: f64, b: f64| b > 1.1 * a.max(0.0) + 1e-6;
            if grows(inner, outer) && grows(outer, far) {
                report.passed = false;
                report.counterexample = Some(Counterexample {
                    point: y.clone(),
                    direction: Some(d.clone()),
                    radius: Some(16.0 * probe.radius_max),
                    detail: format!(
                        "−⟨n, ∇V(y + r n)⟩ keeps growing with r ({inner:e} → {outer:e} → {far:e})"
                    ),
                });
                return;
            }
            if let Some(hb) = &p.qc_bound {
                let bound = hb.eval(&y);
                if inner > bound * (1.0 + 1e-9) + 1e-12 {
                    report.passed = false;
                    report.counterexample = Some(Counterexample {
                        point: y.clone(),
                        direction: Some(d.clone()),
                        radius: Some(arg),
                        detail: format!("−⟨n, ∇V(y + r n)⟩ = {inner:e} exceeds H(y) = {bound:e}"),
                    });
                    return;
                }
            }
            h_obs = h_obs.max(inner);
        }
        observed.push((norm(&y), h_obs));
    }
    if p.qc_bound.is_none() {
        report.fitted_h = Some(fit_exponential_bound(&observed));
    }
}

/// Least-squares fit of `ln h ≈ ln c₁ + c₂ s`, then `c₁` inflated so the curve dominates all data.
pub fn fit_exponential_bound(data: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = data
        .iter()
        .filter(|(_, h)| *h > 1e-300)
        .map(|&(s, h)| (s, h.ln()))
        .collect();
    if pts.is_empty() {
        return (0.0, 0.0);
    }
    let m = pts.len() as f64;
    let sx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let sy = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - sx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum();
    let c2 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let log_c1 = pts
        .iter()
        .map(|p| p.1 - c2 * p.0)
        .fold(f64::NEG_INFINITY, f64::max);
    (log_c1.exp(), c2)
}
