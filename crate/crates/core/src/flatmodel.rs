//! Flat square torus, spin structures, conformal factors and grid fields.
//!
//! Grid nodes are indexed row-major, `idx = i * N + j`, node `(i, j)` sitting at
//! `(i h, j h)` with `h = L / N`. Spinor fields store their two components
//! one after the other (component-major), each block of length `N²`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clifford::Spinor;

/// A sweep point must satisfy `ε ≥ MIN_EPS_OVER_H · h`.
pub const MIN_EPS_OVER_H: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlatError {
    #[error("grid size must be even and at least 8, got {0}")]
    BadResolution(usize),
    #[error("period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("base point ({0}, {1}) is not a grid node")]
    BadBasePoint(usize, usize),
    #[error("spin twist must be 0 or 1/2, got {0}")]
    BadTwist(f64),
    #[error("scale eps must be positive and finite, got {0}")]
    BadEps(f64),
    #[error("radius alpha = {alpha} out of range (need eps = {eps} <= alpha < L/2 = {half})")]
    BadAlpha { alpha: f64, eps: f64, half: f64 },
    #[error("conformal factor must be positive and finite (found {0})")]
    NonPositiveFactor(f64),
    #[error("sampled data has {got} values, grid needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("eps = {eps} is under-resolved: need eps >= {factor} h = {min}")]
    Unresolved { eps: f64, factor: f64, min: f64 },
    #[error("field grid {got} does not match domain grid {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("field contains a non-finite value at index {0}")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusDomain {
    l: f64,
    n: usize,
    base: (usize, usize),
}

impl TorusDomain {
    pub fn new(l: f64, n: usize) -> Result<Self, FlatError> {
        if !(l.is_finite() && l > 0.0) {
            return Err(FlatError::BadPeriod(l));
        }
        if n < 8 || !n.is_multiple_of(2) {
            return Err(FlatError::BadResolution(n));
        }
        Ok(TorusDomain { l, n, base: (0, 0) })
    }

    /// The `(2π)²` torus.
    pub fn standard(n: usize) -> Result<Self, FlatError> {
        Self::new(2.0 * PI, n)
    }

    pub fn with_base(mut self, i: usize, j: usize) -> Result<Self, FlatError> {
        if i >= self.n || j >= self.n {
            return Err(FlatError::BadBasePoint(i, j));
        }
        self.base = (i, j);
        Ok(self)
    }

    pub fn period(&self) -> f64 {
        self.l
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.l / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn base_index(&self) -> (usize, usize) {
        self.base
    }

    pub fn base_point(&self) -> [f64; 2] {
        let h = self.spacing();
        [self.base.0 as f64 * h, self.base.1 as f64 * h]
    }

    pub fn node(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h]
    }

    /// Displacement `x − p − L m` of smallest length over `m ∈ {−1,0,1}²`,
    /// together with the lattice vector `m`.
    pub fn min_image(&self, x: [f64; 2]) -> ([f64; 2], [i32; 2]) {
        let p = self.base_point();
        let mut best = ([f64::INFINITY; 2], [0; 2]);
        let mut best_r2 = f64::INFINITY;
        for m0 in -1..=1 {
            for m1 in -1..=1 {
                let d = [
                    x[0] - p[0] - m0 as f64 * self.l,
                    x[1] - p[1] - m1 as f64 * self.l,
                ];
                let r2 = d[0] * d[0] + d[1] * d[1];
                if r2 < best_r2 {
                    best_r2 = r2;
                    best = (d, [m0, m1]);
                }
            }
        }
        best
    }

    /// Flat distance from the base point, minimised over the 9 nearest
    /// lattice translates.
    pub fn min_image_radius(&self, x: [f64; 2]) -> f64 {
        let (d, _) = self.min_image(x);
        d[0].hypot(d[1])
    }

    /// Refuses scales the grid cannot resolve.
    pub fn check_resolution(&self, eps: f64) -> Result<(), FlatError> {
        let min = MIN_EPS_OVER_H * self.spacing();
        if eps < min {
            return Err(FlatError::Unresolved { eps, factor: MIN_EPS_OVER_H, min });
        }
        Ok(())
    }

    /// Trapezoid rule on the periodic grid, `h² Σ values`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let h = self.spacing();
        h * h * values.iter().sum::<f64>()
    }
}

/// One of the four spin structures of the torus, encoded by its twist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinStructure {
    delta: [f64; 2],
}

impl SpinStructure {
    pub const TRIVIAL: SpinStructure = SpinStructure { delta: [0.0, 0.0] };

    pub fn new(d1: f64, d2: f64) -> Result<Self, FlatError> {
        for d in [d1, d2] {
            if d != 0.0 && d != 0.5 {
                return Err(FlatError::BadTwist(d));
            }
        }
        Ok(SpinStructure { delta: [d1, d2] })
    }

    pub fn from_bits(a: bool, b: bool) -> Self {
        let t = |x: bool| if x { 0.5 } else { 0.0 };
        SpinStructure { delta: [t(a), t(b)] }
    }

    pub fn all() -> [SpinStructure; 4] {
        [
            Self::from_bits(false, false),
            Self::from_bits(true, false),
            Self::from_bits(false, true),
            Self::from_bits(true, true),
        ]
    }

    pub fn twist(&self) -> [f64; 2] {
        self.delta
    }

    pub fn is_trivial(&self) -> bool {
        self.delta == [0.0, 0.0]
    }
}

impl std::fmt::Display for SpinStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.delta[0], self.delta[1])
    }
}

impl std::str::FromStr for SpinStructure {
    type Err = FlatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(FlatError::BadTwist(f64::NAN));
        }
        let parse = |p: &str| p.parse::<f64>().map_err(|_| FlatError::BadTwist(f64::NAN));
        SpinStructure::new(parse(parts[0])?, parse(parts[1])?)
    }
}

/// Positive conformal weight `f`, the metric being `f² g_flat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConformalFactor {
    Family { alpha: f64, eps: f64 },
    /// `2 / (1 + r²)`, `r` the min-image distance.
    Sphere,
    Constant { c: f64 },
    Sampled { values: Vec<f64> },
}

pub fn f_alpha_eps(alpha: f64, eps: f64, x: [f64; 2], domain: &TorusDomain) -> Result<f64, FlatError> {
    check_family(alpha, eps, domain)?;
    Ok(family_value(alpha, eps, domain.min_image_radius(x)))
}

fn check_family(alpha: f64, eps: f64, domain: &TorusDomain) -> Result<(), FlatError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(FlatError::BadEps(eps));
    }
    let half = domain.period() / 2.0;
    if !(alpha.is_finite() && alpha >= eps && alpha < half) {
        return Err(FlatError::BadAlpha { alpha, eps, half });
    }
    Ok(())
}

/// `ε²/(ε²+r²)` inside the ball of radius `α`, frozen outside.
pub fn family_value(alpha: f64, eps: f64, r: f64) -> f64 {
    let rr = r.min(alpha);
    eps * eps / (eps * eps + rr * rr)
}

/// Closed-form area of `f_{α,ε}² g_flat` on the torus of period `l`.
pub fn family_volume_exact(alpha: f64, eps: f64, l: f64) -> f64 {
    let e2 = eps * eps;
    let a2 = alpha * alpha;
    PI * e2 * a2 / (e2 + a2) + (l * l - PI * a2) * e2 * e2 / ((e2 + a2) * (e2 + a2))
}

impl ConformalFactor {
    pub fn validate(&self, domain: &TorusDomain) -> Result<(), FlatError> {
        match self {
            ConformalFactor::Family { alpha, eps } => check_family(*alpha, *eps, domain),
            ConformalFactor::Sphere => Ok(()),
            ConformalFactor::Constant { c } => {
                if c.is_finite() && *c > 0.0 {
                    Ok(())
                } else {
                    Err(FlatError::NonPositiveFactor(*c))
                }
            }
            ConformalFactor::Sampled { values } => {
                if values.len() != domain.len() {
                    return Err(FlatError::LengthMismatch {
                        expected: domain.len(),
                        got: values.len(),
                    });
                }
                match values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    Some(v) => Err(FlatError::NonPositiveFactor(*v)),
                    None => Ok(()),
                }
            }
        }
    }

    /// Value at node `idx`.
    pub fn at_node(&self, domain: &TorusDomain, idx: usize) -> f64 {
        match self {
            ConformalFactor::Sampled { values } => values[idx],
            _ => self.at_point(domain, domain.node(idx)),
        }
    }

    /// Value at an arbitrary point; a `Sampled` factor uses the nearest node.
    pub fn at_point(&self, domain: &TorusDomain, x: [f64; 2]) -> f64 {
        match self {
            ConformalFactor::Family { alpha, eps } => {
                family_value(*alpha, *eps, domain.min_image_radius(x))
            }
            ConformalFactor::Sphere => {
                let r = domain.min_image_radius(x);
                2.0 / (1.0 + r * r)
            }
            ConformalFactor::Constant { c } => *c,
            ConformalFactor::Sampled { values } => {
                let n = domain.resolution() as i64;
                let h = domain.spacing();
                let i = ((x[0] / h).round() as i64).rem_euclid(n) as usize;
                let j = ((x[1] / h).round() as i64).rem_euclid(n) as usize;
                values[i * n as usize + j]
            }
        }
    }

    pub fn sample(&self, domain: &TorusDomain) -> Result<ScalarFieldGrid, FlatError> {
        self.validate(domain)?;
        let values = (0..domain.len()).map(|i| self.at_node(domain, i)).collect();
        Ok(ScalarFieldGrid { n: domain.resolution(), values })
    }
}

/// `∫ f² dv` by the periodic trapezoid rule.
pub fn volume(f: &ConformalFactor, domain: &TorusDomain) -> Result<f64, FlatError> {
    let s = f.sample(domain)?;
    let sq: Vec<f64> = s.values.iter().map(|v| v * v).collect();
    Ok(domain.integrate(&sq))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFieldGrid {
    pub n: usize,
    pub values: Vec<f64>,
}

impl ScalarFieldGrid {
    pub fn zeros(domain: &TorusDomain) -> Self {
        ScalarFieldGrid { n: domain.resolution(), values: vec![0.0; domain.len()] }
    }

    pub fn from_fn(domain: &TorusDomain, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..domain.len()).map(|i| f(domain.node(i))).collect();
        ScalarFieldGrid { n: domain.resolution(), values }
    }

    pub fn check(&self, domain: &TorusDomain) -> Result<(), FlatError> {
        check_grid(self.n, self.values.len(), 1, domain)?;
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(FlatError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn to_complex(&self) -> Vec<C64> {
        self.values.iter().map(|&v| C64::new(v, 0.0)).collect()
    }
}

fn check_grid(n: usize, len: usize, comps: usize, domain: &TorusDomain) -> Result<(), FlatError> {
    if n != domain.resolution() {
        return Err(FlatError::GridMismatch { expected: domain.resolution(), got: n });
    }
    if len != comps * n * n {
        return Err(FlatError::LengthMismatch { expected: comps * n * n, got: len });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinorFieldGrid {
    pub n: usize,
    /// Component-major: `data[c * N² + idx]`.
    pub data: Vec<C64>,
}

impl SpinorFieldGrid {
    pub fn zeros(domain: &TorusDomain) -> Self {
        SpinorFieldGrid { n: domain.resolution(), data: vec![C64::new(0.0, 0.0); 2 * domain.len()] }
    }

    pub fn from_data(domain: &TorusDomain, data: Vec<C64>) -> Result<Self, FlatError> {
        let g = SpinorFieldGrid { n: domain.resolution(), data };
        g.check(domain)?;
        Ok(g)
    }

    pub fn check(&self, domain: &TorusDomain) -> Result<(), FlatError> {
        check_grid(self.n, self.data.len(), 2, domain)?;
        match self.data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            Some(i) => Err(FlatError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn at(&self, idx: usize) -> Spinor {
        let m = self.n * self.n;
        Spinor([self.data[idx], self.data[m + idx]])
    }

    pub fn set(&mut self, idx: usize, s: Spinor) {
        let m = self.n * self.n;
        self.data[idx] = s.0[0];
        self.data[m + idx] = s.0[1];
    }

    /// Embeds a chart spinor `s(y)`, `y` the min-image displacement from the
    /// base point. A node reached through the lattice vector `m` picks up the
    /// holonomy `e^{2πi δ·m}` of the spin structure.
    pub fn from_chart(domain: &TorusDomain, spin: SpinStructure, s: impl Fn([f64; 2]) -> Spinor) -> Self {
        let mut out = Self::zeros(domain);
        let d = spin.twist();
        for idx in 0..domain.len() {
            let (y, m) = domain.min_image(domain.node(idx));
            // Twists are 0 or 1/2, so the holonomy is an exact sign.
            let odd = ((2.0 * d[0]) as i32 * m[0] + (2.0 * d[1]) as i32 * m[1]).rem_euclid(2) == 1;
            let v = s(y);
            out.set(idx, if odd { -v } else { v });
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DumpError {
    #[error("dump shorter than its 16-byte header")]
    ShortHeader,
    #[error("bad magic {0:?}, expected \"SPSF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported dump version {0}")]
    BadVersion(u16),
    #[error("unsupported component count {0} (expected 1 or 2)")]
    BadComponents(u16),
    #[error("grid size {0} is not even and >= 8")]
    BadGrid(u16),
    #[error("reserved header bytes must be zero")]
    Reserved,
    #[error("payload has {got} bytes, header implies {expected}")]
    Truncated { expected: usize, got: usize },
    #[error("non-finite value at payload offset {0}")]
    NonFinite(usize),
}

pub const DUMP_MAGIC: &[u8; 4] = b"SPSF";
pub const DUMP_VERSION: u16 = 1;

/// A decoded field dump.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldDump {
    Scalar(ScalarFieldGrid),
    Spinor(SpinorFieldGrid),
}

fn header(n: usize, comps: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.extend_from_slice(&comps.to_le_bytes());
    out.extend_from_slice(&[0u8; 6]);
    out
}

/// Scalar dump: one little-endian `f64` per node.
pub fn encode_scalar(field: &ScalarFieldGrid) -> Vec<u8> {
    let mut out = header(field.n, 1);
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Spinor dump: per node, `re c0, im c0, re c1, im c1`.
pub fn encode_spinor(field: &SpinorFieldGrid) -> Vec<u8> {
    let m = field.n * field.n;
    let mut out = header(field.n, 2);
    for idx in 0..m {
        for c in 0..2 {
            let z = field.data[c * m + idx];
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

pub fn decode_dump(bytes: &[u8]) -> Result<FieldDump, DumpError> {
    if bytes.len() < 16 {
        return Err(DumpError::ShortHeader);
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != DUMP_MAGIC {
        return Err(DumpError::BadMagic(magic));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != DUMP_VERSION {
        return Err(DumpError::BadVersion(version));
    }
    let n = u16_at(6);
    if n < 8 || !n.is_multiple_of(2) {
        return Err(DumpError::BadGrid(n));
    }
    let comps = u16_at(8);
    if comps != 1 && comps != 2 {
        return Err(DumpError::BadComponents(comps));
    }
    if bytes[10..16].iter().any(|&b| b != 0) {
        return Err(DumpError::Reserved);
    }
    let n = n as usize;
    let m = n * n;
    let per_node = if comps == 1 { 1 } else { 4 };
    let expected = m * per_node * 8;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(DumpError::Truncated { expected, got: payload.len() });
    }
    let mut vals = Vec::with_capacity(m * per_node);
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DumpError::NonFinite(k * 8));
        }
        vals.push(v);
    }
    if comps == 1 {
        return Ok(FieldDump::Scalar(ScalarFieldGrid { n, values: vals }));
    }
    let mut data = vec![C64::new(0.0, 0.0); 2 * m];
    for idx in 0..m {
        let v = &vals[4 * idx..4 * idx + 4];
        data[idx] = C64::new(v[0], v[1]);
        data[m + idx] = C64::new(v[2], v[3]);
    }
    Ok(FieldDump::Spinor(SpinorFieldGrid { n, data }))
}
