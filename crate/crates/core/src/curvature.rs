//! Metric charts around a point, curvature by finite differences, the
//! correction fields of the spinor-bundle identification `B = G^{−1/2}`, and
//! the conformal gauge that kills `Ric(0)` and `ΔScal(0)`.
//!
//! Conventions: `R_{ijkl}` is normalised so that the unit sphere has
//! `R_{ijkl} = δ_ik δ_jl − δ_jk δ_il`, `Ric_{σν} = g^{ρμ} R_{ρσμν}`, and `Δ`
//! is the positive Laplacian `Δu = −(g^{ij}∂_i∂_j u − g^{ij}Γ^k_{ij}∂_k u)`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clifford::{mat_add, mat_mul, mat_scale, max_abs, zero_mat, CliffordRep, Mat2};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_OUTER_STEP: f64 = 2e-2;
const MIN_STEP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("unsupported chart dimension {0}")]
    Dimension(usize),
    #[error("finite-difference step {0:e} is below the usable range")]
    StepUnderflow(f64),
    #[error("chart is not normal at 0: |g(0) − I| = {g0:.3e}, |∂g(0)| = {dg0:.3e}")]
    NotNormal { g0: f64, dg0: f64 },
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("the gauge formula needs n ≥ 3, got {0}")]
    GaugeDimension(usize),
    #[error(transparent)]
    Parse(#[from] PolyParseError),
}

/// A metric given on a neighbourhood of `0 ∈ ℝⁿ`.
pub trait MetricChart {
    fn dim(&self) -> usize;
    fn metric(&self, x: &[f64]) -> DMatrix<f64>;
    /// Inner finite-difference step.
    fn step(&self) -> f64 {
        DEFAULT_STEP
    }
}

#[derive(Clone, Debug)]
pub struct FlatChart {
    pub n: usize,
}

impl MetricChart for FlatChart {
    fn dim(&self) -> usize {
        self.n
    }
    fn metric(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
}

/// `g = φ(r)² δ`, the round unit sphere seen through stereographic
/// projection. The normalised chart uses `φ = 1/(1 + r²/4)` so that
/// `g(0) = I`; otherwise `φ = 2/(1 + r²)`.
#[derive(Clone, Debug)]
pub struct Stereographic {
    pub n: usize,
    pub normalized: bool,
}

impl Stereographic {
    pub fn factor(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if self.normalized {
            1.0 / (1.0 + r2 / 4.0)
        } else {
            2.0 / (1.0 + r2)
        }
    }
}

impl MetricChart for Stereographic {
    fn dim(&self) -> usize {
        self.n
    }
    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        let f = self.factor(x);
        DMatrix::identity(self.n, self.n) * (f * f)
    }
}

/// Fourth-order normal-coordinate metric built from a prescribed curvature
/// tensor at 0:
/// `g_ij = δ_ij + ⅓R_{iαβj}x^αx^β + (2/45)Σ_m R_{iαβm}R_{jγλm}x^αx^βx^γx^λ`,
/// optionally with a cubic term `(1/6)(t·x)S_{iαβj}x^αx^β` standing in for
/// `∇R`. Every term is annihilated by `x^j`, so `g_ij x^j = x_i` exactly and
/// the coordinates are normal.
#[derive(Clone, Debug)]
pub struct SyntheticNormal {
    riemann: Riemann,
    cubic: Option<(Vec<f64>, Riemann)>,
}

fn contract_xx(r: &Riemann, x: &[f64]) -> DMatrix<f64> {
    let n = r.n;
    DMatrix::from_fn(n, n, |i, m| {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += r.get(i, a, b, m) * x[a] * x[b];
            }
        }
        s
    })
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

impl SyntheticNormal {
    pub fn new(riemann: Riemann) -> Self {
        SyntheticNormal { riemann, cubic: None }
    }

    pub fn with_cubic(mut self, t: Vec<f64>, s: Riemann) -> Self {
        self.cubic = Some((t, s));
        self
    }

    /// Normal coordinates of the unit `n`-sphere.
    pub fn sphere(n: usize) -> Self {
        Self::new(Riemann::constant_curvature(n, 1.0))
    }

    /// Curvature from the Kulkarni–Nomizu product of two random symmetric
    /// forms, which has all the algebraic symmetries of a curvature tensor
    /// but no isotropy, plus a random cubic term.
    pub fn generic(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_symmetric(&mut rng, n);
        let k = random_symmetric(&mut rng, n);
        let h2 = random_symmetric(&mut rng, n);
        let k2 = random_symmetric(&mut rng, n);
        let t = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(Riemann::kulkarni_nomizu(&h, &k)).with_cubic(t, Riemann::kulkarni_nomizu(&h2, &k2))
    }

    pub fn riemann(&self) -> &Riemann {
        &self.riemann
    }
}

impl MetricChart for SyntheticNormal {
    fn dim(&self) -> usize {
        self.riemann.n
    }
    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.riemann.n;
        let q = contract_xx(&self.riemann, x);
        let mut g = DMatrix::identity(n, n) + &q / 3.0;
        g += (&q * q.transpose()) * (2.0 / 45.0);
        if let Some((t, s)) = &self.cubic {
            let tx: f64 = t.iter().zip(x).map(|(a, b)| a * b).sum();
            g += contract_xx(s, x) * (tx / 6.0);
        }
        g
    }
}

/// `e^{2u} g` for a base chart and a smooth function `u`.
pub struct ConformalRescaled<'a> {
    pub base: &'a dyn MetricChart,
    pub u: &'a dyn Fn(&[f64]) -> f64,
}

impl MetricChart for ConformalRescaled<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.metric(x) * (2.0 * (self.u)(x)).exp()
    }
    fn step(&self) -> f64 {
        self.base.step()
    }
}

/// Overrides the finite-difference step of a chart.
pub struct WithStep<'a> {
    pub chart: &'a dyn MetricChart,
    pub h: f64,
}

impl MetricChart for WithStep<'_> {
    fn dim(&self) -> usize {
        self.chart.dim()
    }
    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        self.chart.metric(x)
    }
    fn step(&self) -> f64 {
        self.h
    }
}

// ---------------------------------------------------------------------------
// Polynomial chart files

pub const POLY_MAX_DIM: usize = 4;
pub const POLY_MIN_DIM: usize = 2;
pub const POLY_MAX_DEGREE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {kind}")]
pub struct PolyParseError {
    pub line: usize,
    pub kind: PolyParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyParseErrorKind {
    #[error("missing `n <dim>` header")]
    MissingHeader,
    #[error("duplicate header")]
    DuplicateHeader,
    #[error("dimension must be in {POLY_MIN_DIM}..={POLY_MAX_DIM}, got {0}")]
    Dimension(String),
    #[error("expected `i j degree α… value`")]
    Shape,
    #[error("bad integer `{0}`")]
    Integer(String),
    #[error("bad number `{0}`")]
    Number(String),
    #[error("index {0} out of range")]
    Index(usize),
    #[error("degree {0} exceeds {POLY_MAX_DEGREE}")]
    Degree(usize),
    #[error("value is not finite")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub i: usize,
    pub j: usize,
    pub exponents: Vec<usize>,
    pub value: f64,
}

/// Metric whose entries are polynomials, read from a text file:
///
/// ```text
/// # comment
/// n 2
/// 1 1 0 1.0          # g_11 += 1
/// 2 2 0 1.0
/// 1 2 2 1 2 0.1      # g_12 += 0.1·x1·x2 (and g_21)
/// ```
///
/// Each term line is `i j degree α_1 … α_degree value` with 1-based indices;
/// `α` lists the coordinate of each factor, so `1 1 2 2 2 c` adds `c·x2²`
/// to `g_11`. Terms are summed. An off-diagonal term is added to both
/// `g_ij` and `g_ji`. No identity is implied.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyChart {
    n: usize,
    terms: Vec<PolyTerm>,
}

fn parse_index(tok: &str, line: usize) -> Result<usize, PolyParseError> {
    tok.parse::<usize>().map_err(|_| PolyParseError { line, kind: PolyParseErrorKind::Integer(tok.to_string()) })
}

impl PolyChart {
    pub fn parse(text: &str) -> Result<Self, PolyParseError> {
        let mut n: Option<usize> = None;
        let mut terms = Vec::new();
        let mut last = 0;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            last = line;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            let err = |kind| PolyParseError { line, kind };
            if toks[0] == "n" {
                if n.is_some() {
                    return Err(err(PolyParseErrorKind::DuplicateHeader));
                }
                if toks.len() != 2 {
                    return Err(err(PolyParseErrorKind::Shape));
                }
                let d = toks[1]
                    .parse::<usize>()
                    .ok()
                    .filter(|d| (POLY_MIN_DIM..=POLY_MAX_DIM).contains(d))
                    .ok_or_else(|| err(PolyParseErrorKind::Dimension(toks[1].to_string())))?;
                n = Some(d);
                continue;
            }
            let dim = n.ok_or_else(|| err(PolyParseErrorKind::MissingHeader))?;
            if toks.len() < 4 {
                return Err(err(PolyParseErrorKind::Shape));
            }
            let i = parse_index(toks[0], line)?;
            let j = parse_index(toks[1], line)?;
            let degree = parse_index(toks[2], line)?;
            for idx in [i, j] {
                if idx == 0 || idx > dim {
                    return Err(err(PolyParseErrorKind::Index(idx)));
                }
            }
            if degree > POLY_MAX_DEGREE {
                return Err(err(PolyParseErrorKind::Degree(degree)));
            }
            if toks.len() != 4 + degree {
                return Err(err(PolyParseErrorKind::Shape));
            }
            let mut exponents = vec![0usize; dim];
            for tok in &toks[3..3 + degree] {
                let a = parse_index(tok, line)?;
                if a == 0 || a > dim {
                    return Err(err(PolyParseErrorKind::Index(a)));
                }
                exponents[a - 1] += 1;
            }
            let vtok = toks[3 + degree];
            let value: f64 = vtok.parse().map_err(|_| err(PolyParseErrorKind::Number(vtok.to_string())))?;
            if !value.is_finite() {
                return Err(err(PolyParseErrorKind::NonFinite));
            }
            terms.push(PolyTerm { i: i - 1, j: j - 1, exponents, value });
        }
        let n = n.ok_or(PolyParseError { line: last.max(1), kind: PolyParseErrorKind::MissingHeader })?;
        Ok(PolyChart { n, terms })
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }
}

impl MetricChart for PolyChart {
    fn dim(&self) -> usize {
        self.n
    }
    fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.n);
        for t in &self.terms {
            let v = t.exponents.iter().enumerate().fold(t.value, |acc, (a, &e)| acc * x[a].powi(e as i32));
            g[(t.i, t.j)] += v;
            if t.i != t.j {
                g[(t.j, t.i)] += v;
            }
        }
        g
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

fn check_dim(n: usize) -> Result<(), CurvatureError> {
    if (1..=POLY_MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(CurvatureError::Dimension(n))
    }
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().all(|&l| l > 0.0)
}

/// The symmetric positive definite `B` with `B² = G^{−1}`.
pub fn sqrt_inv(g: &DMatrix<f64>) -> Result<DMatrix<f64>, CurvatureError> {
    if !is_spd(g) {
        return Err(CurvatureError::NotSpd);
    }
    // Denman–Beavers: Y → G^{1/2}, Z → G^{−1/2}. Unlike an eigenvector
    // reconstruction this keeps full precision for nearly degenerate G.
    let mut y = g.clone();
    let mut z = DMatrix::identity(g.nrows(), g.nrows());
    for _ in 0..100 {
        let yi = inverse(&y)?;
        let zi = inverse(&z)?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let change = (&z_next - &z).amax();
        y = y_next;
        z = z_next;
        if change <= 1e-15 * z.amax() {
            break;
        }
    }
    Ok((&z + z.transpose()) * 0.5)
}

fn inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>, CurvatureError> {
    g.clone().try_inverse().ok_or(CurvatureError::NotSpd)
}

// ---------------------------------------------------------------------------
// Finite differences, central with one Richardson level

fn check_step(h: f64) -> Result<(), CurvatureError> {
    if !(h.is_finite() && h >= MIN_STEP) {
        return Err(CurvatureError::StepUnderflow(h));
    }
    Ok(())
}

fn shift(x: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(i, s) in moves {
        y[i] += s;
    }
    y
}

fn richardson(d: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let coarse = d(h);
    let fine = d(h / 2.0);
    fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
}

fn deriv1<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], i: usize, h: f64) -> Vec<f64> {
    richardson(
        |s| {
            let p = f(&shift(x, &[(i, s)]));
            let m = f(&shift(x, &[(i, -s)]));
            p.iter().zip(&m).map(|(p, m)| (p - m) / (2.0 * s)).collect()
        },
        h,
    )
}

fn deriv2<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], center: &[f64], i: usize, j: usize, h: f64) -> Vec<f64> {
    richardson(
        |s| {
            if i == j {
                let p = f(&shift(x, &[(i, s)]));
                let m = f(&shift(x, &[(i, -s)]));
                (0..p.len()).map(|k| (p[k] - 2.0 * center[k] + m[k]) / (s * s)).collect()
            } else {
                let pp = f(&shift(x, &[(i, s), (j, s)]));
                let pm = f(&shift(x, &[(i, s), (j, -s)]));
                let mp = f(&shift(x, &[(i, -s), (j, s)]));
                let mm = f(&shift(x, &[(i, -s), (j, -s)]));
                (0..pp.len()).map(|k| (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * s * s)).collect()
            }
        },
        h,
    )
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn unflat(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v)
}

/// Metric, inverse and first derivatives at a point.
struct Jet1 {
    n: usize,
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    dg: Vec<DMatrix<f64>>,
}

impl Jet1 {
    fn at(chart: &dyn MetricChart, x: &[f64]) -> Result<Self, CurvatureError> {
        let n = chart.dim();
        check_dim(n)?;
        let h = chart.step();
        check_step(h)?;
        let g = chart.metric(x);
        if !is_spd(&g) {
            return Err(CurvatureError::NotSpd);
        }
        let ginv = inverse(&g)?;
        let f = |y: &[f64]| flat(&chart.metric(y));
        let dg = (0..n).map(|i| unflat(n, &deriv1(&f, x, i, h))).collect();
        Ok(Jet1 { n, g, ginv, dg })
    }

    fn christoffel(&self) -> Christoffel {
        let n = self.n;
        let mut out = Christoffel::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += self.ginv[(k, l)] * (self.dg[i][(j, l)] + self.dg[j][(i, l)] - self.dg[l][(i, j)]);
                    }
                    out.set(k, i, j, 0.5 * s);
                }
            }
        }
        out
    }
}

/// `Γ^k_{ij}` stored as `data[k·n² + i·n + j]`; the same layout is used for
/// `Γ̃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Christoffel {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel { n, data: vec![0.0; n * n * n] }
    }
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[k * self.n * self.n + i * self.n + j]
    }
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[k * n * n + i * n + j] = v;
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
    /// `max |Γ^k_{ij} − Γ^k_{ji}|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut w: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    w = w.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        w
    }
    /// `max |Γ̃^k_{ij} + Γ̃^j_{ik}|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut w: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    w = w.max((self.get(k, i, j) + self.get(j, i, k)).abs());
                }
            }
        }
        w
    }
}

pub fn christoffel(chart: &dyn MetricChart, x: &[f64]) -> Result<Christoffel, CurvatureError> {
    Ok(Jet1::at(chart, x)?.christoffel())
}

/// `Γ̃^k_{ij} = (Σ_r b_i^r ∂_r b_j^l + Σ_{rs} b_i^r b_j^s Γ^l_{rs}) (b^{−1})^k_l`
/// with `b = G^{−1/2}`. Also returns the part built from `∂b` alone.
fn tilde_parts(chart: &dyn MetricChart, x: &[f64]) -> Result<(Christoffel, Christoffel), CurvatureError> {
    let jet = Jet1::at(chart, x)?;
    let n = jet.n;
    let h = chart.step();
    let gamma = jet.christoffel();
    let b = sqrt_inv(&jet.g)?;
    let binv = inverse(&b)?;
    let fb = |y: &[f64]| match sqrt_inv(&chart.metric(y)) {
        Ok(m) => flat(&m),
        Err(_) => vec![f64::NAN; n * n],
    };
    let db: Vec<DMatrix<f64>> = (0..n).map(|r| unflat(n, &deriv1(&fb, x, r, h))).collect();
    if db.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(CurvatureError::NotSpd);
    }
    let mut full = Christoffel::zeros(n);
    let mut part = Christoffel::zeros(n);
    for i in 0..n {
        for j in 0..n {
            // inner_l for the two pieces
            let mut a = vec![0.0; n];
            let mut c = vec![0.0; n];
            for l in 0..n {
                for r in 0..n {
                    a[l] += b[(i, r)] * db[r][(j, l)];
                    for s in 0..n {
                        c[l] += b[(i, r)] * b[(j, s)] * gamma.get(l, r, s);
                    }
                }
            }
            for k in 0..n {
                let mut pa = 0.0;
                let mut pc = 0.0;
                for l in 0..n {
                    pa += a[l] * binv[(l, k)];
                    pc += c[l] * binv[(l, k)];
                }
                part.set(k, i, j, pa);
                full.set(k, i, j, pa + pc);
            }
        }
    }
    Ok((full, part))
}

pub fn tilde_gamma(chart: &dyn MetricChart, x: &[f64]) -> Result<Christoffel, CurvatureError> {
    Ok(tilde_parts(chart, x)?.0)
}

/// Strictly increasing triples of `0..n`, the index set of `W`.
pub fn triples(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                out.push([i, j, k]);
            }
        }
    }
    out
}

const PERMS: [([usize; 3], f64); 6] =
    [([0, 1, 2], 1.0), ([1, 2, 0], 1.0), ([2, 0, 1], 1.0), ([1, 0, 2], -1.0), ([0, 2, 1], -1.0), ([2, 1, 0], -1.0)];

fn three_form(t: &Christoffel) -> Vec<f64> {
    triples(t.n)
        .iter()
        .map(|tr| {
            0.25 * PERMS
                .iter()
                .map(|(p, s)| s * t.get(tr[p[2]], tr[p[0]], tr[p[1]]))
                .sum::<f64>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFields {
    pub n: usize,
    /// Vector part of `¼ΣΓ̃^k_{ij} e_i·e_j·e_k`.
    pub v: Vec<f64>,
    /// `½Σ_i Γ̃^i_{ik}`.
    pub v_half_trace: Vec<f64>,
    /// `W_{ijk}` for `i<j<k` in the order of [`triples`].
    pub w: Vec<f64>,
    /// The same components from the `∂b` terms alone.
    pub w_from_db: Vec<f64>,
    /// Largest entry of `¼ΣΓ̃γγγ − (W· + V·)`, for `n ≤ 3`.
    pub decomposition_defect: Option<f64>,
    pub antisymmetry_defect: f64,
}

impl CorrectionFields {
    pub fn v_norm(&self) -> f64 {
        self.v.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
    pub fn w_norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `¼ Σ_{ijk} t^k_{ij} γ_i γ_j γ_k`.
pub fn clifford_cubic(rep: &CliffordRep, t: &Christoffel) -> Mat2 {
    let n = t.n;
    let mut out = zero_mat();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let c = t.get(k, i, j);
                if c != 0.0 {
                    out = mat_add(&out, &mat_scale(&rep.triple(i, j, k), C64::new(0.25 * c, 0.0)));
                }
            }
        }
    }
    out
}

fn vector_part(t: &Christoffel) -> Vec<f64> {
    let n = t.n;
    (0..n)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..n {
                s -= t.get(k, i, i);
                if i != k {
                    s += t.get(i, i, k) - t.get(i, k, i);
                }
            }
            0.25 * s
        })
        .collect()
}

pub fn correction_fields(chart: &dyn MetricChart, x: &[f64]) -> Result<CorrectionFields, CurvatureError> {
    let (t, part) = tilde_parts(chart, x)?;
    let n = t.n;
    let v = vector_part(&t);
    let v_half_trace = (0..n).map(|k| 0.5 * (0..n).map(|i| t.get(i, i, k)).sum::<f64>()).collect();
    let w = three_form(&t);
    let w_from_db = three_form(&part);
    let decomposition_defect = if n <= 3 {
        let rep = CliffordRep::new(n).map_err(|_| CurvatureError::Dimension(n))?;
        let full = clifford_cubic(&rep, &t);
        let mut split = rep.vector_matrix(&v).map_err(|_| CurvatureError::Dimension(n))?;
        for (tr, wv) in triples(n).iter().zip(&w) {
            let m = mat_mul(&mat_mul(rep.gamma(tr[0]), rep.gamma(tr[1])), rep.gamma(tr[2]));
            split = mat_add(&split, &mat_scale(&m, C64::new(*wv, 0.0)));
        }
        Some(max_abs(&mat_add(&full, &mat_scale(&split, C64::new(-1.0, 0.0)))))
    } else {
        None
    };
    Ok(CorrectionFields {
        n,
        v,
        v_half_trace,
        w,
        w_from_db,
        decomposition_defect,
        antisymmetry_defect: t.antisymmetry_defect(),
    })
}

// ---------------------------------------------------------------------------
// Curvature

/// Covariant 4-tensor `R_{ijkl}` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Riemann {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Riemann {
    pub fn zeros(n: usize) -> Self {
        Riemann { n, data: vec![0.0; n.pow(4)] }
    }
    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n + j) * self.n + k) * self.n + l
    }
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.idx(i, j, k, l)]
    }
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let p = self.idx(i, j, k, l);
        self.data[p] = v;
    }

    /// `K(δ_ik δ_jl − δ_jk δ_il)`.
    pub fn constant_curvature(n: usize, k: f64) -> Self {
        let id = DMatrix::identity(n, n);
        let mut r = Self::kulkarni_nomizu(&id, &id);
        r.data.iter_mut().for_each(|v| *v *= k);
        r
    }

    /// `½[h_ik k_jl + h_jl k_ik − h_jk k_il − h_il k_jk]`.
    pub fn kulkarni_nomizu(h: &DMatrix<f64>, k: &DMatrix<f64>) -> Self {
        let n = h.nrows();
        let mut r = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let v = 0.5
                            * (h[(i, a)] * k[(j, b)] + h[(j, b)] * k[(i, a)]
                                - h[(j, a)] * k[(i, b)]
                                - h[(i, b)] * k[(j, a)]);
                        r.set(i, j, a, b, v);
                    }
                }
            }
        }
        r
    }

    /// `Ric_{σν} = g^{ρμ} R_{ρσμν}`.
    pub fn ricci(&self, ginv: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |s, v| {
            let mut t = 0.0;
            for r in 0..n {
                for m in 0..n {
                    t += ginv[(r, m)] * self.get(r, s, m, v);
                }
            }
            t
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest violation of the pair symmetries and of the first Bianchi
    /// identity `R_ijkl + R_jkil + R_kijl = 0`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut w: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = self.get(i, j, k, l);
                        w = w.max((r + self.get(j, i, k, l)).abs());
                        w = w.max((r + self.get(i, j, l, k)).abs());
                        w = w.max((r - self.get(k, l, i, j)).abs());
                        w = w.max((r + self.get(j, k, i, l) + self.get(k, i, j, l)).abs());
                    }
                }
            }
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureAt {
    pub riemann: Riemann,
    pub ricci: Vec<Vec<f64>>,
    pub scal: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn riemann_tensor(chart: &dyn MetricChart, x: &[f64]) -> Result<(Riemann, DMatrix<f64>), CurvatureError> {
    let jet = Jet1::at(chart, x)?;
    let n = jet.n;
    let h = chart.step();
    let f = |y: &[f64]| flat(&chart.metric(y));
    let center = flat(&jet.g);
    let mut d2 = vec![DMatrix::zeros(n, n); n * n];
    for a in 0..n {
        for b in a..n {
            let m = unflat(n, &deriv2(&f, x, &center, a, b, h));
            d2[a * n + b] = m.clone();
            d2[b * n + a] = m;
        }
    }
    let gam = jet.christoffel();
    let dd = |a: usize, b: usize, i: usize, j: usize| d2[a * n + b][(i, j)];
    let mut r = Riemann::zeros(n);
    for p in 0..n {
        for s in 0..n {
            for m in 0..n {
                for v in 0..n {
                    let mut val = 0.5 * (dd(s, m, p, v) + dd(p, v, s, m) - dd(s, v, p, m) - dd(p, m, s, v));
                    for e in 0..n {
                        for l in 0..n {
                            val += jet.g[(e, l)] * (gam.get(e, s, m) * gam.get(l, p, v) - gam.get(e, s, v) * gam.get(l, p, m));
                        }
                    }
                    r.set(p, s, m, v, val);
                }
            }
        }
    }
    Ok((r, jet.ginv))
}

/// Curvature at an arbitrary point from second differences of the metric.
pub fn curvature(chart: &dyn MetricChart, x: &[f64]) -> Result<CurvatureAt, CurvatureError> {
    let (riemann, ginv) = riemann_tensor(chart, x)?;
    let ric = riemann.ricci(&ginv);
    let scal = (&ginv * &ric).trace();
    Ok(CurvatureAt { riemann, ricci: rows(&ric), scal })
}

pub fn scal(chart: &dyn MetricChart, x: &[f64]) -> Result<f64, CurvatureError> {
    Ok(curvature(chart, x)?.scal)
}

/// Tolerances of the normal-coordinate precondition.
pub const NORMAL_G0_TOL: f64 = 1e-8;
pub const NORMAL_DG0_TOL: f64 = 1e-6;

pub fn check_normal(chart: &dyn MetricChart) -> Result<(), CurvatureError> {
    let origin = vec![0.0; chart.dim()];
    let jet = Jet1::at(chart, &origin)?;
    let g0 = (&jet.g - DMatrix::identity(jet.n, jet.n)).amax();
    let dg0 = jet.dg.iter().fold(0.0f64, |a, m| a.max(m.amax()));
    if g0 > NORMAL_G0_TOL || dg0 > NORMAL_DG0_TOL {
        return Err(CurvatureError::NotNormal { g0, dg0 });
    }
    Ok(())
}

/// Curvature at the chart origin, after checking `g(0) = I`, `∂g(0) = 0`.
pub fn riemann_at(chart: &dyn MetricChart) -> Result<CurvatureAt, CurvatureError> {
    check_normal(chart)?;
    curvature(chart, &vec![0.0; chart.dim()])
}

fn scalar_derivs(
    chart: &dyn MetricChart,
    u: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<(Vec<f64>, DMatrix<f64>), CurvatureError> {
    check_step(h)?;
    let n = chart.dim();
    let f = |y: &[f64]| vec![u(y)];
    let c = vec![u(x)];
    let grad: Vec<f64> = (0..n).map(|i| deriv1(&f, x, i, h)[0]).collect();
    let mut hess = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = deriv2(&f, x, &c, a, b, h)[0];
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    Ok((grad, hess))
}

fn laplacian_with(chart: &dyn MetricChart, u: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<(f64, f64), CurvatureError> {
    let jet = Jet1::at(chart, x)?;
    let gam = jet.christoffel();
    let (grad, hess) = scalar_derivs(chart, u, x, h)?;
    let n = jet.n;
    let mut lap = 0.0;
    let mut sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut t = hess[(i, j)];
            for k in 0..n {
                t -= gam.get(k, i, j) * grad[k];
            }
            lap += jet.ginv[(i, j)] * t;
            sq += jet.ginv[(i, j)] * grad[i] * grad[j];
        }
    }
    Ok((-lap, sq))
}

/// Positive Laplacian of `u` at `x`, differencing with the chart step.
pub fn laplacian(chart: &dyn MetricChart, u: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64, CurvatureError> {
    Ok(laplacian_with(chart, u, x, chart.step())?.0)
}

/// `ΔScal` at `x`; `Scal` itself is differenced with the chart step and the
/// outer Laplacian uses `outer`.
pub fn laplacian_of_scal(chart: &dyn MetricChart, x: &[f64], outer: f64) -> Result<f64, CurvatureError> {
    let failed = std::cell::Cell::new(None);
    let s = |y: &[f64]| match scal(chart, y) {
        Ok(v) => v,
        Err(e) => {
            failed.set(Some(e));
            f64::NAN
        }
    };
    let v = laplacian_with(chart, &s, x, outer)?.0;
    match failed.take() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalScal {
    /// `e^{−2u}(Scal_g + 2(n−1)Δ_g u − (n−1)(n−2)|∇u|²_g)`.
    pub formula: f64,
    /// `Scal` of `e^{2u}g` computed from its own second differences.
    pub direct: f64,
}

pub fn conformal_scal(chart: &dyn MetricChart, u: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Result<ConformalScal, CurvatureError> {
    let n = chart.dim() as f64;
    let s = scal(chart, x)?;
    let (lap, sq) = laplacian_with(chart, u, x, chart.step())?;
    let formula = (-2.0 * u(x)).exp() * (s + 2.0 * (n - 1.0) * lap - (n - 1.0) * (n - 2.0) * sq);
    let rescaled = ConformalRescaled { base: chart, u };
    let direct = scal(&rescaled, x)?;
    Ok(ConformalScal { formula, direct })
}

/// `u(x) = a|x|² + xᵀQx + c·x₁⁴`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugePolynomial {
    pub n: usize,
    pub radial: f64,
    pub quadratic: Vec<Vec<f64>>,
    pub quartic: f64,
}

impl GaugePolynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n {
            v += self.radial * x[i] * x[i];
            for j in 0..self.n {
                v += self.quadratic[i][j] * x[i] * x[j];
            }
        }
        v + self.quartic * x[0].powi(4)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    pub u: GaugePolynomial,
    pub scal_before: f64,
    pub ricci_norm_before: f64,
    pub scal_after: f64,
    pub ricci_norm_after: f64,
    pub lap_scal_after: f64,
}

fn frob(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Conformal gauge at the origin. `u₀ = Scal/(4n(n−1))|x|²` sets
/// `Scal(0) = 0`; on `e^{2u₀}g` the quadratic
/// `(Ric − (Scal/n)g)_{ij}x^ix^j/(2(n−2))` removes `Ric(0)`; the quartic
/// `−ΔScal·x₁⁴/(48(n−1))` is then read off the metric carrying both
/// quadratic terms, so that it cancels `ΔScal(0)` of that metric.
pub fn gauge_u(chart: &dyn MetricChart, outer: f64) -> Result<GaugeReport, CurvatureError> {
    let n = chart.dim();
    if n < 3 {
        return Err(CurvatureError::GaugeDimension(n));
    }
    check_normal(chart)?;
    let origin = vec![0.0; n];
    let before = curvature(chart, &origin)?;
    let nf = n as f64;
    let radial = before.scal / (4.0 * nf * (nf - 1.0));
    let u0 = GaugePolynomial { n, radial, quadratic: vec![vec![0.0; n]; n], quartic: 0.0 };
    let e0 = u0.clone();
    let f0 = move |x: &[f64]| e0.eval(x);
    let mid = curvature(&ConformalRescaled { base: chart, u: &f0 }, &origin)?;
    let quadratic: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let g = if i == j { 1.0 } else { 0.0 };
                    (mid.ricci[i][j] - mid.scal / nf * g) / (2.0 * (nf - 2.0))
                })
                .collect()
        })
        .collect();
    let u1 = GaugePolynomial { quadratic, ..u0 };
    let e1 = u1.clone();
    let f1 = move |x: &[f64]| e1.eval(x);
    let lap = laplacian_of_scal(&ConformalRescaled { base: chart, u: &f1 }, &origin, outer)?;
    let u = GaugePolynomial { quartic: -lap / (48.0 * (nf - 1.0)), ..u1 };
    let ue = u.clone();
    let total = move |x: &[f64]| ue.eval(x);
    let gauged = ConformalRescaled { base: chart, u: &total };
    let after = curvature(&gauged, &origin)?;
    let lap_after = laplacian_of_scal(&gauged, &origin, outer)?;
    Ok(GaugeReport {
        u,
        scal_before: before.scal,
        ricci_norm_before: frob(&before.ricci),
        scal_after: after.scal,
        ricci_norm_after: frob(&after.ricci),
        lap_scal_after: lap_after,
    })
}

// ---------------------------------------------------------------------------
// Expansion orders

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldFit {
    /// Log-log slope of the field norm against the radius.
    pub slope: Option<f64>,
    /// Relative error of the leading Taylor coefficient against the
    /// curvature prediction.
    pub coefficient_error: Option<f64>,
    pub max_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub n: usize,
    pub radii: Vec<f64>,
    /// All fields vanish identically on the probe set.
    pub exact_zero: bool,
    pub b: FieldFit,
    pub gamma: FieldFit,
    pub v: FieldFit,
    pub w: FieldFit,
    /// `W` is below [`W_ZERO_FLOOR`] everywhere probed.
    pub w_vanishes: bool,
    pub decomposition_defect: f64,
    pub antisymmetry_defect: f64,
}

impl ExpansionReport {
    /// Decay order of `W`; a field that vanishes to round-off counts as
    /// decaying to every order.
    pub fn w_order(&self) -> f64 {
        if self.w_vanishes {
            f64::INFINITY
        } else {
            self.w.slope.unwrap_or(f64::NAN)
        }
    }
}

pub const W_ZERO_FLOOR: f64 = 1e-9;

fn probe_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
            v.iter().map(|a| a / s).collect()
        })
        .collect()
}

fn loglog_slope(radii: &[f64], norms: &[f64]) -> f64 {
    let m = radii.len() as f64;
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

struct Samples {
    /// Per radius, per direction, the flattened field.
    values: Vec<Vec<Vec<f64>>>,
}

impl Samples {
    fn norms(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|per_dir| per_dir.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>()).sum::<f64>().sqrt())
            .collect()
    }

    fn fit(&self, radii: &[f64], power: i32, expected: &[Vec<f64>], name: &str) -> Result<FieldFit, CurvatureError> {
        let norms = self.norms();
        let max_norm = norms.iter().fold(0.0f64, |a, &b| a.max(b));
        if max_norm == 0.0 {
            return Ok(FieldFit { slope: None, coefficient_error: None, max_norm });
        }
        if norms.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CurvatureError::Fit(format!("{name} does not decay monotonically: {norms:?}")));
        }
        let slope = loglog_slope(radii, &norms);
        let k = radii.len();
        let (r1, r2) = (radii[k - 2], radii[k - 1]);
        let q = (r1 / r2).powi(2);
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for (d, exp) in expected.iter().enumerate() {
            for (c, e) in exp.iter().enumerate() {
                let a = self.values[k - 2][d][c] / r1.powi(power);
                let b = self.values[k - 1][d][c] / r2.powi(power);
                let est = (q * b - a) / (q - 1.0);
                num = num.max((est - e).abs());
                den = den.max(e.abs());
            }
        }
        let coefficient_error = if den > 0.0 { Some(num / den) } else { None };
        Ok(FieldFit { slope: Some(slope), coefficient_error, max_norm })
    }
}

/// Samples `b − I`, `Γ`, `V`, `W` along rays at radii `r₀·2^{−k}` and
/// compares with the leading curvature terms
/// `b_ij ≈ δ_ij − (1/6)R_{iαβj}x^αx^β`,
/// `Γ^k_{ij} ≈ −(1/3)(R_{ikαj} + R_{iαkj})x^α`, `V_k ≈ −¼Ric_{αk}x^α`,
/// and fits the decay order of `W`.
pub fn expansion_orders(
    chart: &dyn MetricChart,
    known: Option<&Riemann>,
    r0: f64,
    levels: usize,
) -> Result<ExpansionReport, CurvatureError> {
    let n = chart.dim();
    check_normal(chart)?;
    if levels < 3 || !(r0 > 0.0 && r0.is_finite()) {
        return Err(CurvatureError::Fit(format!("need r0 > 0 and at least 3 levels, got {r0}, {levels}")));
    }
    let owned;
    let riem = match known {
        Some(r) => r,
        None => {
            owned = riemann_at(chart)?.riemann;
            &owned
        }
    };
    let ric = riem.ricci(&DMatrix::identity(n, n));
    let dirs = probe_directions(n, 6, 0xd1e5);
    let radii: Vec<f64> = (0..levels).map(|k| r0 * 0.5f64.powi(k as i32)).collect();
    let mut bs = Samples { values: vec![] };
    let mut gs = Samples { values: vec![] };
    let mut vs = Samples { values: vec![] };
    let mut ws = Samples { values: vec![] };
    let mut decomposition_defect: f64 = 0.0;
    let mut antisymmetry_defect: f64 = 0.0;
    for &r in &radii {
        let (mut bl, mut gl, mut vl, mut wl) = (vec![], vec![], vec![], vec![]);
        for u in &dirs {
            let x: Vec<f64> = u.iter().map(|c| c * r).collect();
            let b = sqrt_inv(&chart.metric(&x))? - DMatrix::identity(n, n);
            bl.push(flat(&b));
            gl.push(christoffel(chart, &x)?.data);
            let cf = correction_fields(chart, &x)?;
            decomposition_defect = decomposition_defect.max(cf.decomposition_defect.unwrap_or(0.0));
            antisymmetry_defect = antisymmetry_defect.max(cf.antisymmetry_defect);
            vl.push(cf.v);
            wl.push(cf.w);
        }
        bs.values.push(bl);
        gs.values.push(gl);
        vs.values.push(vl);
        ws.values.push(wl);
    }

    let exp_b: Vec<Vec<f64>> = dirs
        .iter()
        .map(|u| {
            let m = DMatrix::from_fn(n, n, |i, j| {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += riem.get(i, a, b, j) * u[a] * u[b];
                    }
                }
                -s / 6.0
            });
            flat(&m)
        })
        .collect();
    let exp_g: Vec<Vec<f64>> = dirs
        .iter()
        .map(|u| {
            let mut c = Christoffel::zeros(n);
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let s: f64 = (0..n).map(|a| (riem.get(i, k, a, j) + riem.get(i, a, k, j)) * u[a]).sum();
                        c.set(k, i, j, -s / 3.0);
                    }
                }
            }
            c.data
        })
        .collect();
    let exp_v: Vec<Vec<f64>> = dirs
        .iter()
        .map(|u| (0..n).map(|k| -0.25 * (0..n).map(|a| ric[(a, k)] * u[a]).sum::<f64>()).collect())
        .collect();

    let b = bs.fit(&radii, 2, &exp_b, "b − I")?;
    let gamma = gs.fit(&radii, 1, &exp_g, "Γ")?;
    let v = vs.fit(&radii, 1, &exp_v, "V")?;
    let w_max = ws.norms().iter().fold(0.0f64, |a, &b| a.max(b));
    let w_vanishes = w_max < W_ZERO_FLOOR;
    let w = if w_vanishes || n < 3 {
        FieldFit { slope: None, coefficient_error: None, max_norm: w_max }
    } else {
        let zeros: Vec<Vec<f64>> = vec![];
        ws.fit(&radii, 3, &zeros, "W")?
    };
    let exact_zero = b.max_norm == 0.0 && gamma.max_norm == 0.0 && v.max_norm == 0.0 && w_max == 0.0;
    Ok(ExpansionReport {
        n,
        radii,
        exact_zero,
        b,
        gamma,
        v,
        w,
        w_vanishes,
        decomposition_defect,
        antisymmetry_defect,
    })
}
