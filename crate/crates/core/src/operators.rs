//! Fourier realisations of the flat Dirac and Laplace operators on the torus
//! and their conformal symmetrisations.
//!
//! A spin structure with twist `δ` is handled by conjugation: a section `φ`
//! satisfies `φ(x + L e_j) = e^{2πi δ_j} φ(x)`, so `e^{−iθ}φ` with
//! `θ = (2π/L) δ·x` is periodic and the operator symbol is evaluated at the
//! shifted dual lattice `(2π/L)(k + δ)`.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::clifford::{CliffordRep, Mat2};
use crate::flatmodel::{ConformalFactor, FlatError, SpinStructure, TorusDomain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error(transparent)]
    Flat(#[from] FlatError),
    #[error("vector length {got} does not match operator dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

/// A Hermitian linear map on `C^dim`, applied matrix-free.
pub trait HermitianOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);

    fn apply_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim()];
        self.apply(x, &mut y);
        y
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Two-dimensional FFT of `N × N` row-major blocks.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn run(&self, buf: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        let mut t = vec![C64::new(0.0, 0.0); n * n];
        transpose(buf, &mut t, n);
        plan.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, n);
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.run(buf, &self.fwd);
    }

    /// Inverse transform including the `1/N²` normalisation.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.run(buf, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

/// Signed integer frequency of FFT bin `k`.
fn freq(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Flat Dirac operator `Σ γ_j ∂_j` for one spin structure.
#[derive(Clone)]
pub struct DiracFlat {
    domain: TorusDomain,
    spin: SpinStructure,
    fft: Fft2,
    /// `i γ_1`, `i γ_2`.
    igamma: [Mat2; 2],
    /// Shifted dual coordinates per axis, `(2π/L)(k + δ)`.
    v: [Vec<f64>; 2],
    /// `e^{iθ}` per node.
    phase: Vec<C64>,
}

impl DiracFlat {
    pub fn new(domain: &TorusDomain, spin: SpinStructure) -> Self {
        let rep = CliffordRep::new(2).expect("dimension 2 is supported");
        Self::with_rep(domain, spin, &rep)
    }

    pub fn with_rep(domain: &TorusDomain, spin: SpinStructure, rep: &CliffordRep) -> Self {
        let n = domain.resolution();
        let l = domain.period();
        let d = spin.twist();
        let scale = 2.0 * std::f64::consts::PI / l;
        let i = C64::new(0.0, 1.0);
        let ig = |m: &Mat2| [[m[0][0] * i, m[0][1] * i], [m[1][0] * i, m[1][1] * i]];
        let v = [
            (0..n).map(|k| scale * (freq(k, n) + d[0])).collect(),
            (0..n).map(|k| scale * (freq(k, n) + d[1])).collect(),
        ];
        let phase = (0..domain.len())
            .map(|idx| {
                let x = domain.node(idx);
                C64::from_polar(1.0, scale * (d[0] * x[0] + d[1] * x[1]))
            })
            .collect();
        DiracFlat {
            domain: domain.clone(),
            spin,
            fft: Fft2::new(n),
            igamma: [ig(rep.gamma(0)), ig(rep.gamma(1))],
            v,
            phase,
        }
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    pub fn spin(&self) -> SpinStructure {
        self.spin
    }

    /// Shared pipeline: untwist, transform, apply a per-frequency map,
    /// transform back, retwist.
    fn spectral(&self, x: &[C64], y: &mut [C64], symbol: impl Fn(f64, f64, [C64; 2]) -> [C64; 2]) {
        let n = self.domain.resolution();
        let m = n * n;
        let mut a = vec![C64::new(0.0, 0.0); m];
        let mut b = vec![C64::new(0.0, 0.0); m];
        for idx in 0..m {
            let c = self.phase[idx].conj();
            a[idx] = x[idx] * c;
            b[idx] = x[m + idx] * c;
        }
        self.fft.forward(&mut a);
        self.fft.forward(&mut b);
        for k0 in 0..n {
            let v0 = self.v[0][k0];
            for k1 in 0..n {
                let idx = k0 * n + k1;
                let out = symbol(v0, self.v[1][k1], [a[idx], b[idx]]);
                a[idx] = out[0];
                b[idx] = out[1];
            }
        }
        self.fft.inverse(&mut a);
        self.fft.inverse(&mut b);
        for idx in 0..m {
            let c = self.phase[idx];
            y[idx] = a[idx] * c;
            y[m + idx] = b[idx] * c;
        }
    }

    /// `Σ_j i v_j γ_j`, Hermitian with eigenvalues `±|v|`.
    pub fn symbol(&self, v0: f64, v1: f64) -> Mat2 {
        let g = &self.igamma;
        let mut s = [[C64::new(0.0, 0.0); 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                s[r][c] = g[0][r][c] * v0 + g[1][r][c] * v1;
            }
        }
        s
    }

    /// Pseudo-inverse `D⁺`, symbol `(i v·γ)/|v|²`, zero on the kernel.
    pub fn apply_pinv(&self, x: &[C64], y: &mut [C64]) {
        self.spectral(x, y, |v0, v1, s| {
            let r2 = v0 * v0 + v1 * v1;
            if r2 == 0.0 {
                return [C64::new(0.0, 0.0); 2];
            }
            let m = self.symbol(v0 / r2, v1 / r2);
            [m[0][0] * s[0] + m[0][1] * s[1], m[1][0] * s[0] + m[1][1] * s[1]]
        });
    }

    /// Flat `D²`, symbol `|v|²`.
    pub fn apply_square(&self, x: &[C64], y: &mut [C64]) {
        self.spectral(x, y, |v0, v1, s| {
            let r2 = v0 * v0 + v1 * v1;
            [s[0] * r2, s[1] * r2]
        });
    }

    pub fn apply_checked(&self, x: &[C64]) -> Result<Vec<C64>, OpError> {
        if x.len() != self.dim() {
            return Err(OpError::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(self.apply_vec(x))
    }
}

impl HermitianOp for DiracFlat {
    fn dim(&self) -> usize {
        2 * self.domain.len()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.spectral(x, y, |v0, v1, s| {
            let m = self.symbol(v0, v1);
            [m[0][0] * s[0] + m[0][1] * s[1], m[1][0] * s[0] + m[1][1] * s[1]]
        });
    }
}

/// Orthonormalised `f^{1/2} ⊗ e_c`, the kernel of the conformal Dirac
/// operator for the trivial spin structure.
fn spinor_kernel(sqrt_f: &[f64]) -> Vec<Vec<C64>> {
    let m = sqrt_f.len();
    let nrm = sqrt_f.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..2)
        .map(|c| {
            let mut v = vec![C64::new(0.0, 0.0); 2 * m];
            for (idx, s) in sqrt_f.iter().enumerate() {
                v[c * m + idx] = C64::new(s / nrm, 0.0);
            }
            v
        })
        .collect()
}

fn project_out(basis: &[Vec<C64>], y: &mut [C64]) {
    for b in basis {
        let c = inner(b, y);
        y.iter_mut().zip(b).for_each(|(yi, bi)| *yi -= bi * c);
    }
}

fn sample_positive(f: &ConformalFactor, domain: &TorusDomain) -> Result<Vec<f64>, OpError> {
    Ok(f.sample(domain)?.values)
}

/// `A = f^{−1/2} D f^{−1/2}`; `D_g φ = λ f φ` iff `A w = λ w` with `w = f^{1/2} φ`.
#[derive(Clone)]
pub struct ConformalDirac {
    base: DiracFlat,
    f: Vec<f64>,
    inv_sqrt: Vec<f64>,
    sqrt: Vec<f64>,
    kernel: Vec<Vec<C64>>,
}

impl ConformalDirac {
    pub fn new(domain: &TorusDomain, spin: SpinStructure, f: &ConformalFactor) -> Result<Self, OpError> {
        Ok(Self::from_samples(DiracFlat::new(domain, spin), sample_positive(f, domain)?))
    }

    fn from_samples(base: DiracFlat, f: Vec<f64>) -> Self {
        let sqrt: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
        let inv_sqrt = sqrt.iter().map(|v| 1.0 / v).collect();
        let kernel = if base.spin().is_trivial() { spinor_kernel(&sqrt) } else { Vec::new() };
        ConformalDirac { base, f, inv_sqrt, sqrt, kernel }
    }

    pub fn base(&self) -> &DiracFlat {
        &self.base
    }

    pub fn factor(&self) -> &[f64] {
        &self.f
    }

    /// Orthonormal basis of the analytic kernel (empty unless trivial).
    pub fn kernel(&self) -> &[Vec<C64>] {
        &self.kernel
    }

    fn scale(&self, x: &[C64], s: &[f64]) -> Vec<C64> {
        let m = s.len();
        x.iter().enumerate().map(|(k, z)| z * s[k % m]).collect()
    }

    /// Exact pseudo-inverse `P f^{1/2} D⁺ f^{1/2} P`.
    pub fn apply_pinv(&self, x: &[C64], y: &mut [C64]) {
        let mut t = x.to_vec();
        project_out(&self.kernel, &mut t);
        let t = self.scale(&t, &self.sqrt);
        let mut u = vec![C64::new(0.0, 0.0); t.len()];
        self.base.apply_pinv(&t, &mut u);
        let u = self.scale(&u, &self.sqrt);
        y.copy_from_slice(&u);
        project_out(&self.kernel, y);
    }

    /// Weighted form `D_g φ − λ f φ` of a generalized residual.
    pub fn generalized_residual(&self, phi: &[C64], lambda: f64) -> Vec<C64> {
        let dphi = self.base.apply_vec(phi);
        let m = self.f.len();
        dphi.iter()
            .enumerate()
            .map(|(k, d)| d - phi[k] * (lambda * self.f[k % m]))
            .collect()
    }
}

impl HermitianOp for ConformalDirac {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let t = self.scale(x, &self.inv_sqrt);
        self.base.apply(&t, y);
        let m = self.inv_sqrt.len();
        y.iter_mut().enumerate().for_each(|(k, z)| *z *= self.inv_sqrt[k % m]);
    }
}

/// Wraps the pseudo-inverse of a conformal Dirac operator as an operator.
pub struct DiracPinv<'a>(pub &'a ConformalDirac);

impl HermitianOp for DiracPinv<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.0.apply_pinv(x, y);
    }
}

/// Flat positive Laplacian, symbol `|k|²·(2π/L)²`.
#[derive(Clone)]
pub struct LaplaceFlat {
    domain: TorusDomain,
    fft: Fft2,
    k2: Vec<f64>,
}

impl LaplaceFlat {
    pub fn new(domain: &TorusDomain) -> Self {
        let n = domain.resolution();
        let scale = 2.0 * std::f64::consts::PI / domain.period();
        let mut k2 = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let (p, q) = (scale * freq(a, n), scale * freq(b, n));
                k2[a * n + b] = p * p + q * q;
            }
        }
        LaplaceFlat { domain: domain.clone(), fft: Fft2::new(n), k2 }
    }

    fn spectral(&self, x: &[C64], y: &mut [C64], sym: impl Fn(f64) -> f64) {
        y.copy_from_slice(x);
        self.fft.forward(y);
        y.iter_mut().zip(&self.k2).for_each(|(z, &k)| *z *= sym(k));
        self.fft.inverse(y);
    }

    pub fn apply_pinv(&self, x: &[C64], y: &mut [C64]) {
        self.spectral(x, y, |k| if k == 0.0 { 0.0 } else { 1.0 / k });
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }
}

impl HermitianOp for LaplaceFlat {
    fn dim(&self) -> usize {
        self.domain.len()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.spectral(x, y, |k| k);
    }
}

/// `C = f^{−1} Δ f^{−1}`; constants map to the kernel vector `v₀ = f`.
#[derive(Clone)]
pub struct ConformalLaplace {
    base: LaplaceFlat,
    f: Vec<f64>,
    kernel: Vec<Vec<C64>>,
}

impl ConformalLaplace {
    pub fn new(domain: &TorusDomain, f: &ConformalFactor) -> Result<Self, OpError> {
        let f = sample_positive(f, domain)?;
        let nrm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let kernel = vec![f.iter().map(|v| C64::new(v / nrm, 0.0)).collect()];
        Ok(ConformalLaplace { base: LaplaceFlat::new(domain), f, kernel })
    }

    pub fn factor(&self) -> &[f64] {
        &self.f
    }

    /// Normalised `v₀ = f`.
    pub fn kernel(&self) -> &[Vec<C64>] {
        &self.kernel
    }

    /// Exact pseudo-inverse `P f Δ⁺ f P`.
    pub fn apply_pinv(&self, x: &[C64], y: &mut [C64]) {
        let mut t = x.to_vec();
        project_out(&self.kernel, &mut t);
        t.iter_mut().zip(&self.f).for_each(|(z, f)| *z *= f);
        self.base.apply_pinv(&t, y);
        y.iter_mut().zip(&self.f).for_each(|(z, f)| *z *= f);
        project_out(&self.kernel, y);
    }
}

impl HermitianOp for ConformalLaplace {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let t: Vec<C64> = x.iter().zip(&self.f).map(|(z, f)| z / f).collect();
        self.base.apply(&t, y);
        y.iter_mut().zip(&self.f).for_each(|(z, f)| *z /= f);
    }
}

pub struct LaplacePinv<'a>(pub &'a ConformalLaplace);

impl HermitianOp for LaplacePinv<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.0.apply_pinv(x, y);
    }
}

/// `T²` for a Hermitian `T`.
pub struct Squared<'a, T: HermitianOp + ?Sized>(pub &'a T);

impl<T: HermitianOp + ?Sized> HermitianOp for Squared<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let t = self.0.apply_vec(x);
        self.0.apply(&t, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatmodel::SpinorFieldGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(len: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn smooth_factor(domain: &TorusDomain, seed: u64) -> ConformalFactor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-0.3..0.3)).collect();
        let values = (0..domain.len())
            .map(|i| {
                let x = domain.node(i);
                1.0 + a[0] * x[0].cos() + a[1] * x[1].sin() + a[2] * (x[0] + x[1]).cos() + a[3] * (2.0 * x[0] - x[1]).sin()
            })
            .collect();
        ConformalFactor::Sampled { values }
    }

    fn dom(n: usize) -> TorusDomain {
        TorusDomain::standard(n).unwrap()
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn fft_roundtrip() {
        let f = Fft2::new(16);
        let x = random_vec(256, 1);
        let mut y = x.clone();
        f.forward(&mut y);
        f.inverse(&mut y);
        assert!(max_diff(&x, &y) < 1e-14);
    }

    #[test]
    fn constant_spinor_is_harmonic_for_trivial_structure() {
        let d = dom(16);
        let op = DiracFlat::new(&d, SpinStructure::TRIVIAL);
        let mut x = vec![C64::new(0.3, -0.1); 256];
        x.extend(vec![C64::new(-0.7, 0.2); 256]);
        let y = op.apply_vec(&x);
        assert!(norm(&y) < 1e-12);
    }

    #[test]
    fn twisted_plane_wave_eigenvalue() {
        // Oracle: for v = (1/2, 0) the symbol is i v γ_1 = −(1/2) σ_1, whose
        // +1/2 eigenvector is (1, −1)/√2.
        let d = dom(16);
        let spin = SpinStructure::new(0.5, 0.0).unwrap();
        let op = DiracFlat::new(&d, spin);
        let s = 1.0 / 2f64.sqrt();
        let m = d.len();
        let mut x = vec![C64::new(0.0, 0.0); 2 * m];
        for idx in 0..m {
            let p = d.node(idx);
            let w = C64::from_polar(1.0, 0.5 * p[0]);
            x[idx] = w * s;
            x[m + idx] = -w * s;
        }
        let y = op.apply_vec(&x);
        let expect: Vec<C64> = x.iter().map(|z| z * 0.5).collect();
        assert!(max_diff(&y, &expect) < 1e-13);
    }

    #[test]
    fn dirac_is_linear_and_hermitian() {
        let d = dom(16);
        for spin in SpinStructure::all() {
            let op = DiracFlat::new(&d, spin);
            let a = random_vec(512, 2);
            let b = random_vec(512, 3);
            let (ca, cb) = (C64::new(0.4, -1.1), C64::new(-2.0, 0.3));
            let comb: Vec<C64> = a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect();
            let lhs = op.apply_vec(&comb);
            let (da, db) = (op.apply_vec(&a), op.apply_vec(&b));
            let rhs: Vec<C64> = da.iter().zip(&db).map(|(x, y)| ca * x + cb * y).collect();
            assert!(max_diff(&lhs, &rhs) < 1e-11);
            let l = inner(&da, &b);
            let r = inner(&a, &db);
            assert!((l - r).norm() < 1e-11 * l.norm().max(1.0));
        }
    }

    #[test]
    fn dirac_squared_matches_symbol_square() {
        let d = dom(16);
        let op = DiracFlat::new(&d, SpinStructure::new(0.5, 0.5).unwrap());
        let x = random_vec(512, 4);
        let twice = op.apply_vec(&op.apply_vec(&x));
        let mut sq = vec![C64::new(0.0, 0.0); 512];
        op.apply_square(&x, &mut sq);
        assert!(max_diff(&twice, &sq) < 1e-10);
    }

    #[test]
    fn pinv_inverts_off_kernel() {
        let d = dom(16);
        let f = smooth_factor(&d, 5);
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &f).unwrap();
        let mut x = random_vec(512, 6);
        project_out(a.kernel(), &mut x);
        let ax = a.apply_vec(&x);
        let mut back = vec![C64::new(0.0, 0.0); 512];
        a.apply_pinv(&ax, &mut back);
        assert!(max_diff(&back, &x) < 1e-10);
        for k in a.kernel() {
            assert!(norm(&a.apply_vec(k)) < 1e-12);
        }
    }

    #[test]
    fn conformal_dirac_unit_factor_is_flat_dirac() {
        let d = dom(16);
        let spin = SpinStructure::new(0.0, 0.5).unwrap();
        let flat = DiracFlat::new(&d, spin);
        let a = ConformalDirac::new(&d, spin, &ConformalFactor::Constant { c: 1.0 }).unwrap();
        let x = random_vec(512, 7);
        assert_eq!(flat.apply_vec(&x), a.apply_vec(&x));
    }

    #[test]
    fn conformal_dirac_constant_scaling() {
        let d = dom(16);
        let spin = SpinStructure::new(0.5, 0.0).unwrap();
        let c = 2.5;
        let a = ConformalDirac::new(&d, spin, &ConformalFactor::Constant { c }).unwrap();
        let m = d.len();
        let s = 1.0 / 2f64.sqrt();
        let mut x = vec![C64::new(0.0, 0.0); 2 * m];
        for idx in 0..m {
            let w = C64::from_polar(1.0, 0.5 * d.node(idx)[0]);
            x[idx] = w * s;
            x[m + idx] = -w * s;
        }
        let y = a.apply_vec(&x);
        let expect: Vec<C64> = x.iter().map(|z| z * (0.5 / c)).collect();
        assert!(max_diff(&y, &expect) < 1e-13);
    }

    #[test]
    fn conformal_covariance_residuals_agree() {
        // D φ − λ f φ = f^{1/2} (A w − λ w) with w = f^{1/2} φ.
        let d = dom(16);
        let f = smooth_factor(&d, 8);
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &f).unwrap();
        let phi = random_vec(512, 9);
        let lambda = 1.37;
        let sq = a.sqrt.clone();
        let w: Vec<C64> = phi.iter().enumerate().map(|(k, z)| z * sq[k % 256]).collect();
        let aw = a.apply_vec(&w);
        let lhs = a.generalized_residual(&phi, lambda);
        let rhs: Vec<C64> = aw.iter().zip(&w).enumerate().map(|(k, (x, y))| (x - y * lambda) * sq[k % 256]).collect();
        assert!(max_diff(&lhs, &rhs) < 1e-11);
    }

    #[test]
    fn laplace_fourier_mode() {
        let d = dom(16);
        let op = LaplaceFlat::new(&d);
        let x: Vec<C64> = (0..d.len()).map(|i| C64::from_polar(1.0, d.node(i)[0])).collect();
        assert!(max_diff(&op.apply_vec(&x), &x) < 1e-13);
    }

    #[test]
    fn laplace_kernel_and_scaling() {
        let d = dom(16);
        let f = smooth_factor(&d, 10);
        let c = ConformalLaplace::new(&d, &f).unwrap();
        assert!(norm(&c.apply_vec(&c.kernel()[0])) < 1e-12);
        let cc = ConformalLaplace::new(&d, &ConformalFactor::Constant { c: 3.0 }).unwrap();
        let x: Vec<C64> = (0..d.len()).map(|i| C64::from_polar(1.0, 2.0 * d.node(i)[1])).collect();
        let expect: Vec<C64> = x.iter().map(|z| z * (4.0 / 9.0)).collect();
        assert!(max_diff(&cc.apply_vec(&x), &expect) < 1e-13);
    }

    #[test]
    fn laplace_pinv_inverts_off_kernel() {
        let d = dom(16);
        let f = smooth_factor(&d, 11);
        let c = ConformalLaplace::new(&d, &f).unwrap();
        let mut x = random_vec(256, 12);
        project_out(c.kernel(), &mut x);
        let cx = c.apply_vec(&x);
        let mut back = vec![C64::new(0.0, 0.0); 256];
        c.apply_pinv(&cx, &mut back);
        assert!(max_diff(&back, &x) < 1e-10);
    }

    #[test]
    fn translation_commutes_with_translated_factor() {
        let d = dom(16);
        let f = smooth_factor(&d, 13);
        let vals = match &f {
            ConformalFactor::Sampled { values } => values.clone(),
            _ => unreachable!(),
        };
        let shift = |v: &[C64], comps: usize| -> Vec<C64> {
            let mut out = v.to_vec();
            for c in 0..comps {
                for i in 0..16 {
                    for j in 0..16 {
                        out[c * 256 + ((i + 3) % 16) * 16 + (j + 5) % 16] = v[c * 256 + i * 16 + j];
                    }
                }
            }
            out
        };
        let fv: Vec<C64> = vals.iter().map(|&v| C64::new(v, 0.0)).collect();
        let shifted: Vec<f64> = shift(&fv, 1).iter().map(|z| z.re).collect();
        let g = ConformalFactor::Sampled { values: shifted };
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &f).unwrap();
        let b = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &g).unwrap();
        let x = random_vec(512, 14);
        assert!(max_diff(&shift(&a.apply_vec(&x), 2), &b.apply_vec(&shift(&x, 2))) < 1e-12);
        let ca = ConformalLaplace::new(&d, &f).unwrap();
        let cb = ConformalLaplace::new(&d, &g).unwrap();
        let y = random_vec(256, 15);
        assert!(max_diff(&shift(&ca.apply_vec(&y), 1), &cb.apply_vec(&shift(&y, 1))) < 1e-12);
    }

    #[test]
    fn dimension_check() {
        let d = dom(8);
        let op = DiracFlat::new(&d, SpinStructure::TRIVIAL);
        assert_eq!(op.apply_checked(&[C64::new(0.0, 0.0); 3]), Err(OpError::Dimension { expected: 128, got: 3 }));
        let bad = ConformalFactor::Constant { c: -1.0 };
        assert!(ConformalDirac::new(&d, SpinStructure::TRIVIAL, &bad).is_err());
        assert!(ConformalLaplace::new(&d, &bad).is_err());
    }

    #[test]
    fn chart_spinor_round_trip_through_dirac() {
        // Gaussian bump in the chart against its analytic gradient.
        let d = dom(64);
        let op = DiracFlat::new(&d, SpinStructure::TRIVIAL);
        let field = SpinorFieldGrid::from_chart(&d, SpinStructure::TRIVIAL, |y| {
            let g = (-4.0 * (y[0] * y[0] + y[1] * y[1])).exp();
            crate::clifford::Spinor::up().scale(C64::new(g, 0.0))
        });
        let dy = op.apply_vec(&field.data);
        let rep = CliffordRep::new(2).unwrap();
        let mut worst: f64 = 0.0;
        for idx in 0..d.len() {
            let (y, _) = d.min_image(d.node(idx));
            let g = (-4.0 * (y[0] * y[0] + y[1] * y[1])).exp();
            let grad = [-8.0 * y[0] * g, -8.0 * y[1] * g];
            let e = rep.vector_mul(&grad, &crate::clifford::Spinor::up()).unwrap();
            worst = worst.max((dy[idx] - e.0[0]).norm()).max((dy[d.len() + idx] - e.0[1]).norm());
        }
        assert!(worst < 1e-9, "{worst}");
    }
}
