//! The bubble spinor `ψ(x) = f^{n/2}(x) (1 − x)·ψ₀`, `f = 2/(1+r²)`, its
//! pointwise identities, the logarithmic cutoff `η`, and the Rayleigh-type
//! functionals evaluated on `ψ_ε = η ψ(·/ε)`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clifford::{CliffordError, CliffordRep, Spinor};
use crate::flatmodel::{family_value, family_volume_exact, ConformalFactor, FlatError, SpinorFieldGrid, TorusDomain};
use crate::operators::{DiracFlat, HermitianOp};
use crate::quad::{integrate_geometric, integrate_half_line};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinorError {
    #[error(transparent)]
    Clifford(#[from] CliffordError),
    #[error(transparent)]
    Flat(#[from] FlatError),
    #[error("cutoff radius must lie in (0, 1), got {0}")]
    BadCutoff(f64),
    #[error("scale eps must be positive, got {0}")]
    BadEps(f64),
    #[error("base spinor must have unit norm, got {0}")]
    NotUnit(f64),
    #[error("denominator {0:.6e} is not positive; the test spinor is inadmissible")]
    Inadmissible(f64),
    #[error("cutoff ball of radius {delta} does not fit inside the flat region of radius {alpha}")]
    CutoffTooLarge { delta: f64, alpha: f64 },
}

/// Data of the bubble spinor in dimension `n ∈ {2, 3}`.
#[derive(Clone, Debug)]
pub struct TestSpinor {
    rep: CliffordRep,
    psi0: Spinor,
}

pub fn bubble_factor(r2: f64) -> f64 {
    2.0 / (1.0 + r2)
}

impl TestSpinor {
    pub fn new(n: usize, psi0: Spinor) -> Result<Self, SpinorError> {
        let rep = CliffordRep::new(n)?;
        if (psi0.norm() - 1.0).abs() > 1e-12 {
            return Err(SpinorError::NotUnit(psi0.norm()));
        }
        Ok(TestSpinor { rep, psi0 })
    }

    /// `ψ₀ = (1, 0)`.
    pub fn standard(n: usize) -> Result<Self, SpinorError> {
        Self::new(n, Spinor::up())
    }

    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    pub fn rep(&self) -> &CliffordRep {
        &self.rep
    }

    fn one_minus_x(&self, x: &[f64]) -> Spinor {
        self.psi0 - self.rep.vector_mul(x, &self.psi0).expect("dimension checked")
    }

    pub fn psi(&self, x: &[f64]) -> Spinor {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let f = bubble_factor(r2);
        self.one_minus_x(x) * f.powf(self.dim() as f64 / 2.0)
    }

    /// `ψ(x/ε)`.
    pub fn psi_scaled(&self, x: &[f64], eps: f64) -> Spinor {
        let y: Vec<f64> = x.iter().map(|v| v / eps).collect();
        self.psi(&y)
    }

    /// `∂_i ψ` by the product rule with `∂_i f = −4 x_i/(1+r²)²`.
    pub fn partials(&self, x: &[f64]) -> Vec<Spinor> {
        let n = self.dim();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let f = bubble_factor(r2);
        let half = n as f64 / 2.0;
        let fp = f.powf(half);
        let base = self.one_minus_x(x);
        (0..n)
            .map(|i| {
                let df = -4.0 * x[i] / ((1.0 + r2) * (1.0 + r2));
                let d_fp = half * f.powf(half - 1.0) * df;
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let de = self.rep.vector_mul(&e, &self.psi0).expect("dimension checked");
                base * d_fp - de * fp
            })
            .collect()
    }

    /// Right-hand side of the stated gradient identity,
    /// `−f^{n/2} e_i·ψ₀ − (n/2) f^{n/2+1} x_i (1 − x)·ψ₀`.
    pub fn gradient_formula(&self, x: &[f64], i: usize) -> Spinor {
        let n = self.dim();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let f = bubble_factor(r2);
        let half = n as f64 / 2.0;
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let de = self.rep.vector_mul(&e, &self.psi0).expect("dimension checked");
        -(de * f.powf(half)) - self.one_minus_x(x) * (half * f.powf(half + 1.0) * x[i])
    }

    /// `Dψ = Σ e_i·∂_i ψ`.
    pub fn dirac(&self, x: &[f64]) -> Spinor {
        let n = self.dim();
        let parts = self.partials(x);
        let mut out = Spinor::ZERO;
        for (i, p) in parts.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            out += self.rep.vector_mul(&e, p).expect("dimension checked");
        }
        out
    }
}

/// Worst absolute deviations of the pointwise identities over a sample.
///
/// `norm` and `dirac_norm` compare against the stated powers
/// `f^{(n−1)/2}` and `(n/2) f^{(n+1)/2}`; `norm_ratio_spread` and
/// `dirac_norm_ratio_spread` measure how far `|ψ|/f^{(n−1)/2}` and
/// `|Dψ|/f^{(n+1)/2}` are from being constant, and `norm_constant` reports
/// the observed constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n: usize,
    pub samples: usize,
    pub gradient: f64,
    pub dirac: f64,
    pub norm: f64,
    pub dirac_norm: f64,
    pub norm_constant: f64,
    pub norm_ratio_spread: f64,
    pub dirac_norm_ratio_spread: f64,
}

impl IdentityReport {
    /// Largest deviation among the four identities as stated.
    pub fn max_stated(&self) -> f64 {
        self.gradient.max(self.dirac).max(self.norm).max(self.dirac_norm)
    }
}

fn sample_points(n: usize, samples: usize, seed: u64, radius: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).map(|_| (0..n).map(|_| rng.random_range(-radius..radius)).collect()).collect()
}

pub fn check_identities(n: usize, samples: usize, seed: u64) -> Result<IdentityReport, SpinorError> {
    let t = TestSpinor::standard(n)?;
    let half = n as f64 / 2.0;
    let mut rep = IdentityReport {
        n,
        samples,
        gradient: 0.0,
        dirac: 0.0,
        norm: 0.0,
        dirac_norm: 0.0,
        norm_constant: f64::NAN,
        norm_ratio_spread: 0.0,
        dirac_norm_ratio_spread: 0.0,
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut dlo, mut dhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in sample_points(n, samples, seed, 2.0) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let f = bubble_factor(r2);
        let psi = t.psi(&x);
        for (i, p) in t.partials(&x).iter().enumerate() {
            rep.gradient = rep.gradient.max(p.max_abs_diff(&t.gradient_formula(&x, i)));
        }
        let d = t.dirac(&x);
        rep.dirac = rep.dirac.max(d.max_abs_diff(&(psi * (half * f))));
        rep.norm = rep.norm.max((psi.norm() - f.powf((n as f64 - 1.0) / 2.0)).abs());
        rep.dirac_norm = rep.dirac_norm.max((d.norm() - half * f.powf((n as f64 + 1.0) / 2.0)).abs());
        let q = psi.norm() / f.powf((n as f64 - 1.0) / 2.0);
        lo = lo.min(q);
        hi = hi.max(q);
        let qd = d.norm() / (half * f.powf((n as f64 + 1.0) / 2.0));
        dlo = dlo.min(qd);
        dhi = dhi.max(qd);
    }
    if samples > 0 {
        rep.norm_constant = 0.5 * (lo + hi);
        rep.norm_ratio_spread = hi - lo;
        rep.dirac_norm_ratio_spread = dhi - dlo;
    }
    Ok(rep)
}

/// Worst deviation between the product-rule partials and central
/// differences of `ψ` with the given step.
pub fn check_partials_fd(n: usize, samples: usize, seed: u64, step: f64) -> Result<f64, SpinorError> {
    let t = TestSpinor::standard(n)?;
    let mut worst: f64 = 0.0;
    for x in sample_points(n, samples, seed, 2.0) {
        let parts = t.partials(&x);
        for (i, p) in parts.iter().enumerate() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += step;
            b[i] -= step;
            let fd = (t.psi(&a) - t.psi(&b)) * (0.5 / step);
            worst = worst.max(fd.max_abs_diff(p));
        }
    }
    Ok(worst)
}

fn check_cutoff(delta: f64) -> Result<(), SpinorError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SpinorError::BadCutoff(delta));
    }
    Ok(())
}

/// Logarithmic cutoff: 1 on `[0, δ²]`, `ln r/ln δ − 1` on `[δ², δ]`, 0 beyond.
pub fn eta(r: f64, delta: f64) -> f64 {
    if r <= delta * delta {
        1.0
    } else if r >= delta {
        0.0
    } else {
        r.ln() / delta.ln() - 1.0
    }
}

/// `dη/dr`.
pub fn eta_prime(r: f64, delta: f64) -> f64 {
    if r <= delta * delta || r >= delta {
        0.0
    } else {
        1.0 / (r * delta.ln())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub delta: f64,
    pub quadrature: f64,
    pub closed_form: f64,
}

/// `κ_δ = ∫ |∇η|²`, by radial quadrature of a finite-difference derivative of
/// [`eta`], alongside `2π / ln(1/δ)`.
pub fn kappa(delta: f64) -> Result<Kappa, SpinorError> {
    check_cutoff(delta)?;
    let lo = delta * delta;
    let integrand = |r: f64| {
        let h = 1e-6 * r;
        let d = (eta(r + h, delta) - eta(r - h, delta)) / (2.0 * h);
        2.0 * PI * r * d * d
    };
    let quadrature = integrate_geometric(integrand, lo, delta, lo, 8, &[], 1e-12);
    Ok(Kappa { delta, quadrature, closed_form: 2.0 * PI / (1.0 / delta).ln() })
}

/// Area of the unit `k`-sphere, by `ω_k = ω_{k−2} · 2π/(k−1)`.
pub fn unit_sphere_volume(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => unit_sphere_volume(k - 2) * 2.0 * PI / (k as f64 - 1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereIntegral {
    pub n: usize,
    pub integral: f64,
    pub product: f64,
    pub sphere_volume: f64,
}

/// `I = ∫_0^∞ 2ⁿ r^{n−1} / (1+r²)ⁿ dr` and `ω_{n−1} I`, which should be `ω_n`.
pub fn sphere_integral(n: usize) -> Result<SphereIntegral, SpinorError> {
    if n < 2 {
        return Err(SpinorError::Clifford(CliffordError::UnsupportedDimension(n)));
    }
    let c = 2f64.powi(n as i32);
    let integral = integrate_half_line(|r| c * r.powi(n as i32 - 1) / (1.0 + r * r).powi(n as i32), 1e-14);
    Ok(SphereIntegral {
        n,
        integral,
        product: unit_sphere_volume(n - 1) * integral,
        sphere_volume: unit_sphere_volume(n),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub numerator: f64,
    pub denominator: f64,
    pub value: f64,
    pub kappa: Option<f64>,
    /// `8π + 2κ_δ` for the surface functional.
    pub numerator_bound: Option<f64>,
    pub vol: Option<f64>,
    /// `J′² · Vol`.
    pub squared_times_vol: Option<f64>,
    /// `4π + 2κ_δ + κ_δ²/(4π)`.
    pub product_bound: Option<f64>,
    /// `λ₁⁺ ≤ J′` when a spectral value was supplied.
    pub lambda1_plus: Option<f64>,
    pub above_lambda1: Option<bool>,
}

/// `J′(φ) = ∫ |Dφ|² f^{−1} / ∫ ⟨Dφ, φ⟩` on the grid, with spectral `D`.
pub fn j_prime(
    phi: &SpinorFieldGrid,
    f: &ConformalFactor,
    op: &DiracFlat,
    lambda1_plus: Option<f64>,
) -> Result<FunctionalReport, SpinorError> {
    let domain = op.domain();
    phi.check(domain)?;
    let fs = f.sample(domain)?.values;
    let dphi = op.apply_vec(&phi.data);
    let m = domain.len();
    let mut num = Vec::with_capacity(m);
    let mut den = Vec::with_capacity(m);
    for idx in 0..m {
        let d0 = dphi[idx];
        let d1 = dphi[m + idx];
        num.push((d0.norm_sqr() + d1.norm_sqr()) / fs[idx]);
        den.push((d0 * phi.data[idx].conj() + d1 * phi.data[m + idx].conj()).re);
    }
    let numerator = domain.integrate(&num);
    let denominator = domain.integrate(&den);
    if denominator <= 0.0 {
        return Err(SpinorError::Inadmissible(denominator));
    }
    let value = numerator / denominator;
    let tol = 1e-9 * value.abs().max(1.0);
    Ok(FunctionalReport {
        numerator,
        denominator,
        value,
        kappa: None,
        numerator_bound: None,
        vol: None,
        squared_times_vol: None,
        product_bound: None,
        lambda1_plus,
        above_lambda1: lambda1_plus.map(|l| l <= value + tol),
    })
}

/// `ψ_ε = η(|y|) ψ(y/ε)` placed at the base point of the torus.
pub fn cutoff_spinor_field(domain: &TorusDomain, eps: f64, delta: f64) -> Result<SpinorFieldGrid, SpinorError> {
    check_cutoff(delta)?;
    if !(eps > 0.0) {
        return Err(SpinorError::BadEps(eps));
    }
    let t = TestSpinor::standard(2)?;
    Ok(SpinorFieldGrid::from_chart(domain, crate::flatmodel::SpinStructure::TRIVIAL, |y| {
        let r = y[0].hypot(y[1]);
        let e = eta(r, delta);
        if e == 0.0 {
            Spinor::ZERO
        } else {
            t.psi_scaled(&y, eps) * e
        }
    }))
}

/// `D(η ψ(·/ε))` at `x`, from the product rule.
fn dirac_cutoff(t: &TestSpinor, x: &[f64], eps: f64, delta: f64) -> Spinor {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e = eta(r, delta);
    let ep = eta_prime(r, delta);
    let y: Vec<f64> = x.iter().map(|v| v / eps).collect();
    let mut out = t.dirac(&y) * (e / eps);
    if ep != 0.0 {
        let grad: Vec<f64> = x.iter().map(|v| ep * v / r).collect();
        out += t.rep().vector_mul(&grad, &t.psi(&y)).expect("dimension checked");
    }
    out
}

/// Unit directions at which radial integrands are averaged.
fn directions(n: usize) -> Vec<Vec<f64>> {
    if n == 2 {
        (0..8).map(|k| {
            let a = PI * k as f64 / 4.0 + 0.1;
            vec![a.cos(), a.sin()]
        })
        .collect()
    } else {
        let s = 1.0 / 3f64.sqrt();
        vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![s, s, s],
            vec![-s, s, -s],
        ]
    }
}

fn check_flat_region(delta: f64, alpha: f64) -> Result<(), SpinorError> {
    if delta > alpha {
        return Err(SpinorError::CutoffTooLarge { delta, alpha });
    }
    Ok(())
}

/// `J′(ψ_ε)` for the metric `f_{α,ε}² g` on the torus of period `l`,
/// integrating the exact integrands radially over the support `r ≤ δ`.
pub fn j_prime_radial(eps: f64, delta: f64, alpha: f64, l: f64) -> Result<FunctionalReport, SpinorError> {
    check_cutoff(delta)?;
    check_flat_region(delta, alpha)?;
    if !(eps > 0.0 && eps <= alpha) {
        return Err(SpinorError::BadEps(eps));
    }
    let t = TestSpinor::standard(2)?;
    let dirs = directions(2);
    let avg = |r: f64, g: &dyn Fn(&[f64]) -> f64| -> f64 {
        dirs.iter().map(|u| g(&[r * u[0], r * u[1]])).sum::<f64>() / dirs.len() as f64
    };
    let num = |r: f64| {
        let w = 1.0 / family_value(alpha, eps, r);
        2.0 * PI * r * w * avg(r, &|x| dirac_cutoff(&t, x, eps, delta).norm_sqr())
    };
    let den = |r: f64| {
        2.0 * PI * r * avg(r, &|x| {
            let e = eta(r, delta);
            let d = dirac_cutoff(&t, x, eps, delta);
            d.dot(&(t.psi_scaled(x, eps) * e)).re
        })
    };
    let breaks = [delta * delta, eps, 10.0 * eps];
    let numerator = integrate_geometric(num, 0.0, delta, eps * 1e-3, 6, &breaks, 1e-13);
    let denominator = integrate_geometric(den, 0.0, delta, eps * 1e-3, 6, &breaks, 1e-13);
    if denominator <= 0.0 {
        return Err(SpinorError::Inadmissible(denominator));
    }
    let value = numerator / denominator;
    let k = 2.0 * PI / (1.0 / delta).ln();
    let vol = family_volume_exact(alpha, eps, l);
    Ok(FunctionalReport {
        numerator,
        denominator,
        value,
        kappa: Some(k),
        numerator_bound: Some(8.0 * PI + 2.0 * k),
        vol: Some(vol),
        squared_times_vol: Some(value * value * vol),
        product_bound: Some(4.0 * PI + 2.0 * k + k * k / (4.0 * PI)),
        lambda1_plus: None,
        above_lambda1: None,
    })
}

/// `J(ψ_ε) = (∫ |Dψ_ε|^{2n/(n+1)})^{(n+1)/n} / ∫ ⟨Dψ_ε, ψ_ε⟩` on flat `ℝⁿ`.
pub fn j_flat(n: usize, eps: f64, delta: f64) -> Result<FunctionalReport, SpinorError> {
    check_cutoff(delta)?;
    if !(eps > 0.0) {
        return Err(SpinorError::BadEps(eps));
    }
    let t = TestSpinor::standard(n)?;
    let dirs = directions(n);
    let area = unit_sphere_volume(n - 1);
    let p = 2.0 * n as f64 / (n as f64 + 1.0);
    let shell = |r: f64, g: &dyn Fn(&[f64]) -> f64| -> f64 {
        let mean = dirs.iter().map(|u| {
            let x: Vec<f64> = u.iter().map(|c| c * r).collect();
            g(&x)
        })
        .sum::<f64>()
            / dirs.len() as f64;
        area * r.powi(n as i32 - 1) * mean
    };
    let num = |r: f64| shell(r, &|x| dirac_cutoff(&t, x, eps, delta).norm().powf(p));
    let den = |r: f64| {
        shell(r, &|x| {
            let e = eta(r, delta);
            dirac_cutoff(&t, x, eps, delta).dot(&(t.psi_scaled(x, eps) * e)).re
        })
    };
    let breaks = [delta * delta, eps, 10.0 * eps];
    let a = integrate_geometric(num, 0.0, delta, eps * 1e-3, 6, &breaks, 1e-13);
    let denominator = integrate_geometric(den, 0.0, delta, eps * 1e-3, 6, &breaks, 1e-13);
    if denominator <= 0.0 {
        return Err(SpinorError::Inadmissible(denominator));
    }
    let numerator = a.powf((n as f64 + 1.0) / n as f64);
    Ok(FunctionalReport {
        numerator,
        denominator,
        value: numerator / denominator,
        kappa: None,
        numerator_bound: None,
        vol: None,
        squared_times_vol: None,
        product_bound: None,
        lambda1_plus: None,
        above_lambda1: None,
    })
}

/// `(n/2) ω_n^{1/n}`.
pub fn sphere_constant(n: usize) -> f64 {
    n as f64 / 2.0 * unit_sphere_volume(n).powf(1.0 / n as f64)
}

/// Smooth random spinor field with low Fourier content, for testing the
/// variational characterisation.
pub fn random_spinor_field(domain: &TorusDomain, seed: u64, modes: i32) -> SpinorFieldGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = SpinorFieldGrid::zeros(domain);
    let m = domain.len();
    let w = 2.0 * PI / domain.period();
    for c in 0..2 {
        for a in -modes..=modes {
            for b in -modes..=modes {
                let amp = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                for idx in 0..m {
                    let x = domain.node(idx);
                    field.data[c * m + idx] += amp * C64::from_polar(1.0, w * (a as f64 * x[0] + b as f64 * x[1]));
                }
            }
        }
    }
    field
}
