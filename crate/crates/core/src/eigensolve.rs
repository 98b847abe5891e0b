//! Matrix-free LOBPCG for the lowest eigenpairs of Hermitian positive
//! semidefinite operators, and the spectral quantities built on it.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flatmodel::{volume, ConformalFactor, FlatError, SpinStructure, TorusDomain};
use crate::operators::{
    inner, norm, ConformalDirac, ConformalLaplace, DiracPinv, HermitianOp, LaplacePinv, OpError, Squared,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("no convergence after {iterations} iterations (worst relative residual {worst:.3e})")]
    NotConverged { iterations: usize, worst: f64 },
    #[error("sign of Ritz value {value:.6e} is ambiguous at magnitude {magnitude:.6e}")]
    SignAmbiguous { value: f64, magnitude: f64 },
    #[error("no positive eigenvalue among the lowest {0} pairs")]
    NoPositive(usize),
    #[error("conformal factor {0} violates the sandwich envelope")]
    Envelope(String),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Flat(#[from] FlatError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    /// Relative residual tolerance, `‖Tx − θx‖ ≤ tol·max(1, |θ|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Block size; `None` means `k + 4`.
    pub block: Option<usize>,
    pub seed: u64,
    /// Pairs requested from the squared Dirac operator.
    pub dirac_pairs: usize,
    /// Pairs requested from the conformal Laplacian.
    pub laplace_pairs: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig { tol: 1e-9, max_iter: 500, block: None, seed: 0x5eed, dirac_pairs: 8, laplace_pairs: 4 }
    }
}

impl EigenConfig {
    pub fn validate(&self) -> Result<(), EigenError> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(EigenError::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(EigenError::Config("max_iter must be positive".into()));
        }
        if self.dirac_pairs == 0 || self.laplace_pairs == 0 {
            return Err(EigenError::Config("pair counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    /// Absolute residual norms of the unit eigenvectors.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Twice-iterated modified Gram–Schmidt of `cands` against `fixed` and
/// each other. Candidates that lose all but `drop` of their norm are
/// discarded as linearly dependent.
fn orthonormalize(fixed: &[&[C64]], cands: Vec<Vec<C64>>, drop: f64) -> Vec<Vec<C64>> {
    let mut out: Vec<Vec<C64>> = Vec::with_capacity(cands.len());
    for mut v in cands {
        let start = norm(&v);
        if start == 0.0 || !start.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for b in fixed.iter().copied().chain(out.iter().map(|v| v.as_slice())) {
                let c = inner(b, &v);
                axpy(&mut v, -c, b);
            }
        }
        let nv = norm(&v);
        if nv > drop * start {
            v.iter_mut().for_each(|z| *z /= nv);
            out.push(v);
        }
    }
    out
}

fn combine(basis: &[Vec<C64>], coef: &DMatrix<C64>, col: usize, row0: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); basis[0].len()];
    for (r, b) in basis.iter().enumerate() {
        axpy(&mut v, coef[(row0 + r, col)], b);
    }
    v
}

/// Eigen-decomposition of a small Hermitian matrix, ascending.
fn hermitian_eig(h: DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let q = h.nrows();
    let herm = DMatrix::from_fn(q, q, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(q, q, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn gram(s: &[Vec<C64>], as_: &[Vec<C64>]) -> DMatrix<C64> {
    DMatrix::from_fn(s.len(), s.len(), |i, j| inner(&s[i], &as_[j]))
}

fn rel_ok(res: f64, theta: f64, tol: f64) -> bool {
    res <= tol * theta.abs().max(1.0)
}

/// The `k` smallest eigenpairs of a Hermitian positive semidefinite `op`
/// on the orthogonal complement of `deflation`, by block LOBPCG with the
/// optional Hermitian positive preconditioner `precond`.
pub fn lowest_eigenpairs(
    op: &dyn HermitianOp,
    k: usize,
    deflation: &[Vec<C64>],
    precond: Option<&dyn HermitianOp>,
    cfg: &EigenConfig,
) -> Result<EigenPairs, EigenError> {
    cfg.validate()?;
    let dim = op.dim();
    if k == 0 {
        return Err(EigenError::Config("at least one pair must be requested".into()));
    }
    if deflation.iter().any(|v| v.len() != dim) {
        return Err(EigenError::Config("deflation vector has wrong length".into()));
    }
    let defl = orthonormalize(&[], deflation.to_vec(), 1e-10);
    let room = dim.saturating_sub(defl.len());
    let mut m = cfg.block.unwrap_or(k + 4);
    if m < k {
        return Err(EigenError::Config(format!("block size {m} is smaller than the {k} requested pairs")));
    }
    m = m.min(room);
    if m < k {
        return Err(EigenError::Config(format!("only {room} dimensions remain after deflation, {k} requested")));
    }
    let fixed_defl: Vec<&[C64]> = defl.iter().map(|v| v.as_slice()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start: Vec<Vec<C64>> = (0..m)
        .map(|_| (0..dim).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
        .collect();
    let x0 = orthonormalize(&fixed_defl, start, 1e-10);
    if x0.len() < k {
        return Err(EigenError::Config("could not build an independent start block".into()));
    }
    let ax0: Vec<Vec<C64>> = x0.iter().map(|v| op.apply_vec(v)).collect();
    let (theta0, c0) = hermitian_eig(gram(&x0, &ax0));
    let m = x0.len();
    let mut x: Vec<Vec<C64>> = (0..m).map(|j| combine(&x0, &c0, j, 0)).collect();
    let mut ax: Vec<Vec<C64>> = (0..m).map(|j| combine(&ax0, &c0, j, 0)).collect();
    let mut theta = theta0;
    let mut p: Vec<Vec<C64>> = Vec::new();
    let mut worst = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        let mut res: Vec<Vec<C64>> = (0..m)
            .map(|j| {
                let mut r = ax[j].clone();
                axpy(&mut r, C64::new(-theta[j], 0.0), &x[j]);
                r
            })
            .collect();
        let mut rn: Vec<f64> = res.iter().map(|r| norm(r)).collect();
        if (0..k).all(|j| rel_ok(rn[j], theta[j], cfg.tol)) {
            // Confirm with a fresh application before reporting.
            ax = x.iter().map(|v| op.apply_vec(v)).collect();
            res = (0..m)
                .map(|j| {
                    let mut r = ax[j].clone();
                    axpy(&mut r, C64::new(-theta[j], 0.0), &x[j]);
                    r
                })
                .collect();
            rn = res.iter().map(|r| norm(r)).collect();
            if (0..k).all(|j| rel_ok(rn[j], theta[j], cfg.tol)) {
                return Ok(EigenPairs {
                    values: theta[..k].to_vec(),
                    vectors: x[..k].to_vec(),
                    residuals: rn[..k].to_vec(),
                    iterations: iter - 1,
                });
            }
        }
        worst = (0..k).map(|j| rn[j] / theta[j].abs().max(1.0)).fold(0.0, f64::max);

        let active: Vec<usize> = (0..m).filter(|&j| !rel_ok(rn[j], theta[j], cfg.tol)).collect();
        let w: Vec<Vec<C64>> = active
            .iter()
            .map(|&j| match precond {
                Some(t) => t.apply_vec(&res[j]),
                None => res[j].clone(),
            })
            .collect();

        let mut fixed: Vec<&[C64]> = fixed_defl.clone();
        fixed.extend(x.iter().map(|v| v.as_slice()));
        let sw = orthonormalize(&fixed, w, 1e-10);
        fixed.extend(sw.iter().map(|v| v.as_slice()));
        let sp = orthonormalize(&fixed, std::mem::take(&mut p), 1e-10);

        let mut s: Vec<Vec<C64>> = x.clone();
        s.extend(sw.iter().cloned());
        s.extend(sp.iter().cloned());
        let mut as_: Vec<Vec<C64>> = ax.clone();
        as_.extend(sw.iter().map(|v| op.apply_vec(v)));
        as_.extend(sp.iter().map(|v| op.apply_vec(v)));

        let (vals, c) = hermitian_eig(gram(&s, &as_));
        let extra: Vec<Vec<C64>> = s[m..].to_vec();
        let new_x: Vec<Vec<C64>> = (0..m).map(|j| combine(&s, &c, j, 0)).collect();
        let new_ax: Vec<Vec<C64>> = (0..m).map(|j| combine(&as_, &c, j, 0)).collect();
        p = if extra.is_empty() {
            Vec::new()
        } else {
            (0..m).map(|j| combine(&extra, &c, j, m)).collect()
        };
        x = new_x;
        ax = new_ax;
        theta = vals[..m].to_vec();
    }
    Err(EigenError::NotConverged { iterations: cfg.max_iter, worst })
}

/// A signed eigenvalue of the conformal Dirac operator with its residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedPair {
    pub value: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct DiracSpectrum {
    /// Ritz values of `A` on the converged low subspace of `A²`, ascending
    /// in modulus.
    pub pairs: Vec<SignedPair>,
    pub vectors: Vec<Vec<C64>>,
    pub lambda1_plus: f64,
    pub lambda1_index: usize,
    pub kernel_dim: usize,
    /// Largest `‖A v‖` over the analytic kernel basis.
    pub kernel_residual: f64,
    pub iterations: usize,
}

/// Smallest positive eigenvalue of `A`, obtained from the low spectrum of
/// `A²` (kernel deflated analytically for the trivial structure) and sign
/// classification of the Ritz values of `A` on that subspace.
pub fn lambda1_plus(a: &ConformalDirac, cfg: &EigenConfig) -> Result<DiracSpectrum, EigenError> {
    cfg.validate()?;
    let kernel = a.kernel().to_vec();
    let kernel_residual = kernel.iter().map(|v| norm(&a.apply_vec(v))).fold(0.0, f64::max);
    let room = a.dim() - kernel.len();
    let mut k = cfg.dirac_pairs.min(room);
    loop {
        let sq = Squared(a);
        let pinv = DiracPinv(a);
        let pre = Squared(&pinv);
        let block = cfg.block.map(|b| b.max(k));
        let local = EigenConfig { block, ..cfg.clone() };
        let pairs = lowest_eigenpairs(&sq, k, &kernel, Some(&pre), &local)?;

        // Only whole eigenspaces of A² are A-invariant, so the top cluster
        // is dropped unless the span is the full complement.
        let top_sq = pairs.values.last().copied().unwrap_or(0.0);
        let gap = 1e-6 * top_sq.max(1.0);
        let whole = if k >= room {
            k
        } else {
            pairs.values.iter().take_while(|&&v| v < top_sq - gap).count()
        };
        let basis = &pairs.vectors[..whole];
        let av: Vec<Vec<C64>> = basis.iter().map(|v| a.apply_vec(v)).collect();
        let (mu, c) = if whole == 0 { (Vec::new(), DMatrix::zeros(0, 0)) } else { hermitian_eig(gram(basis, &av)) };
        let mut out: Vec<(SignedPair, Vec<C64>)> = Vec::with_capacity(whole);
        for (j, &value) in mu.iter().enumerate() {
            let z = combine(basis, &c, j, 0);
            let az = combine(&av, &c, j, 0);
            let mut r = az;
            axpy(&mut r, C64::new(-value, 0.0), &z);
            let magnitude = pairs.values[j].max(0.0).sqrt();
            if value.abs() < cfg.tol * magnitude.max(value.abs()) {
                return Err(EigenError::SignAmbiguous { value, magnitude });
            }
            out.push((SignedPair { value, residual: norm(&r) }, z));
        }
        out.sort_by(|p, q| p.0.value.abs().partial_cmp(&q.0.value.abs()).unwrap());
        let first_pos = out.iter().position(|p| p.0.value > 0.0);
        if first_pos.is_none() && k < room && k < 256 {
            k = (2 * k).min(room);
            continue;
        }
        let i = first_pos.ok_or(EigenError::NoPositive(k))?;
        let (pairs_out, vectors): (Vec<SignedPair>, Vec<Vec<C64>>) = out.into_iter().unzip();
        return Ok(DiracSpectrum {
            lambda1_plus: pairs_out[i].value,
            lambda1_index: i,
            pairs: pairs_out,
            vectors,
            kernel_dim: kernel.len(),
            kernel_residual,
            iterations: pairs.iterations,
        });
    }
}

#[derive(Clone, Debug)]
pub struct LaplaceSpectrum {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub mu1: f64,
    pub iterations: usize,
}

/// First positive eigenvalue of `C = f^{−1} Δ f^{−1}` on `{f}^⊥`.
pub fn mu1(c: &ConformalLaplace, cfg: &EigenConfig) -> Result<LaplaceSpectrum, EigenError> {
    let pinv = LaplacePinv(c);
    let k = cfg.laplace_pairs.min(c.dim() - 1);
    let pairs = lowest_eigenpairs(c, k, c.kernel(), Some(&pinv), cfg)?;
    Ok(LaplaceSpectrum {
        mu1: pairs.values[0],
        values: pairs.values,
        residuals: pairs.residuals,
        vectors: pairs.vectors,
        iterations: pairs.iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub grid: usize,
    pub period: f64,
    pub spin: [f64; 2],
    pub factor: String,
    pub dirac: Vec<SignedPair>,
    pub kernel_dim: usize,
    pub kernel_residual: f64,
    pub laplace: Vec<f64>,
    pub laplace_residuals: Vec<f64>,
    pub lambda1_plus: f64,
    pub lambda1_residual: f64,
    pub mu1: f64,
    pub mu1_residual: f64,
    pub vol: f64,
    pub lam1sq_vol: f64,
    pub mu1_vol: f64,
    pub ratio: f64,
}

pub fn describe_factor(f: &ConformalFactor) -> String {
    match f {
        ConformalFactor::Family { alpha, eps } => format!("family:{alpha},{eps}"),
        ConformalFactor::Sphere => "sphere".into(),
        ConformalFactor::Constant { c } => format!("const:{c}"),
        ConformalFactor::Sampled { values } => format!("sampled:{}", values.len()),
    }
}

/// λ₁⁺, μ₁ and the derived scale-invariant products for one metric.
pub fn spectral_report(
    domain: &TorusDomain,
    spin: SpinStructure,
    f: &ConformalFactor,
    cfg: &EigenConfig,
) -> Result<SpectralReport, EigenError> {
    let a = ConformalDirac::new(domain, spin, f)?;
    let d = lambda1_plus(&a, cfg)?;
    let c = ConformalLaplace::new(domain, f)?;
    let l = mu1(&c, cfg)?;
    let vol = volume(f, domain)?;
    let lam = d.lambda1_plus;
    Ok(SpectralReport {
        grid: domain.resolution(),
        period: domain.period(),
        spin: spin.twist(),
        factor: describe_factor(f),
        lambda1_residual: d.pairs[d.lambda1_index].residual,
        dirac: d.pairs,
        kernel_dim: d.kernel_dim,
        kernel_residual: d.kernel_residual,
        mu1: l.mu1,
        mu1_residual: l.residuals[0],
        laplace: l.values,
        laplace_residuals: l.residuals,
        lambda1_plus: lam,
        vol,
        lam1sq_vol: lam * lam * vol,
        mu1_vol: l.mu1 * vol,
        ratio: lam * lam / l.mu1,
    })
}

/// Positive factor `f (1+ρ)^{t(x)}` with a smooth random `t ∈ [−1, 1]`.
pub fn random_envelope(domain: &TorusDomain, f: &[f64], rho: f64, seed: u64) -> Vec<f64> {
    let t = random_smooth(domain, seed, 3);
    f.iter().zip(&t).map(|(v, s)| v * (1.0 + rho).powf(*s)).collect()
}

/// A smooth periodic field with values in `[−1, 1]`, a normalised sum of
/// low Fourier modes.
pub fn random_smooth(domain: &TorusDomain, seed: u64, modes: i32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_pi_l = 2.0 * std::f64::consts::PI / domain.period();
    let mut terms = Vec::new();
    for a in -modes..=modes {
        for b in 0..=modes {
            if a == 0 && b == 0 {
                continue;
            }
            terms.push((a as f64, b as f64, rng.random_range(-1.0f64..1.0), rng.random_range(0.0..std::f64::consts::TAU)));
        }
    }
    let total: f64 = terms.iter().map(|t| t.2.abs()).sum();
    (0..domain.len())
        .map(|idx| {
            let x = domain.node(idx);
            terms.iter().map(|&(a, b, c, ph)| c * (two_pi_l * (a * x[0] + b * x[1]) + ph).cos()).sum::<f64>() / total
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub rho: f64,
    pub mu_f: f64,
    pub mu_ft: f64,
    pub lambda_f: f64,
    pub lambda_ft: f64,
    /// Smallest slack over the four inequalities, relative to the middle term.
    pub mu_margin: f64,
    pub lambda_margin: f64,
    pub pass: bool,
}

/// Checks `(1+ρ)^{−2} μ₁(f̃) ≤ μ₁(f) ≤ (1+ρ)² μ₁(f̃)` and
/// `(1+ρ)^{−1} λ₁⁺(f̃) ≤ λ₁⁺(f) ≤ (1+ρ) λ₁⁺(f̃)` for
/// `(1+ρ)^{−1} f ≤ f̃ ≤ (1+ρ) f`. Equality cases are accepted within
/// a few multiples of the solver tolerance.
pub fn sandwich_check(
    domain: &TorusDomain,
    spin: SpinStructure,
    f: &ConformalFactor,
    ft: &ConformalFactor,
    rho: f64,
    cfg: &EigenConfig,
) -> Result<SandwichReport, EigenError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(EigenError::Config(format!("rho must lie in (0, 1), got {rho}")));
    }
    let fs = f.sample(domain)?.values;
    let fts = ft.sample(domain)?.values;
    let q = 1.0 + rho;
    for (a, b) in fs.iter().zip(&fts) {
        if *b < a / q * (1.0 - 1e-14) || *b > a * q * (1.0 + 1e-14) {
            return Err(EigenError::Envelope(format!("value {b} outside [{}, {}]", a / q, a * q)));
        }
    }
    let lam = |g: &ConformalFactor| -> Result<f64, EigenError> {
        Ok(lambda1_plus(&ConformalDirac::new(domain, spin, g)?, cfg)?.lambda1_plus)
    };
    let mu = |g: &ConformalFactor| -> Result<f64, EigenError> { Ok(mu1(&ConformalLaplace::new(domain, g)?, cfg)?.mu1) };
    let (lf, lft, mf, mft) = (lam(f)?, lam(ft)?, mu(f)?, mu(ft)?);
    let mu_margin = (mf - mft / (q * q)).min(q * q * mft - mf) / mf;
    let lambda_margin = (lf - lft / q).min(q * lft - lf) / lf;
    let slack = -10.0 * cfg.tol;
    Ok(SandwichReport {
        rho,
        mu_f: mf,
        mu_ft: mft,
        lambda_f: lf,
        lambda_ft: lft,
        mu_margin,
        lambda_margin,
        pass: mu_margin >= slack && lambda_margin >= slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DiracFlat, LaplaceFlat};

    struct Diagonal(Vec<f64>);

    impl HermitianOp for Diagonal {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[C64], y: &mut [C64]) {
            for (i, d) in self.0.iter().enumerate() {
                y[i] = x[i] * *d;
            }
        }
    }

    fn flat_laplace_oracle(count: usize) -> Vec<f64> {
        let mut v = Vec::new();
        for a in -6i32..=6 {
            for b in -6i32..=6 {
                v.push((a * a + b * b) as f64);
            }
        }
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v.into_iter().skip(1).take(count).collect()
    }

    #[test]
    fn diagonal_operator() {
        let op = Diagonal((0..40).map(|i| i as f64).collect());
        let cfg = EigenConfig { tol: 1e-12, ..Default::default() };
        let p = lowest_eigenpairs(&op, 3, &[], None, &cfg).unwrap();
        for (i, v) in p.values.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn config_errors() {
        let op = Diagonal(vec![1.0; 10]);
        let cfg = EigenConfig { block: Some(2), ..Default::default() };
        assert!(matches!(lowest_eigenpairs(&op, 3, &[], None, &cfg), Err(EigenError::Config(_))));
        let cfg = EigenConfig { tol: 0.0, ..Default::default() };
        assert!(matches!(lowest_eigenpairs(&op, 1, &[], None, &cfg), Err(EigenError::Config(_))));
    }

    #[test]
    fn non_convergence_is_reported() {
        let op = Diagonal((0..400).map(|i| (i as f64).powi(3)).collect());
        let cfg = EigenConfig { tol: 1e-14, max_iter: 2, ..Default::default() };
        assert!(matches!(lowest_eigenpairs(&op, 4, &[], None, &cfg), Err(EigenError::NotConverged { .. })));
    }

    #[test]
    fn flat_laplacian_with_constants_deflated() {
        let d = TorusDomain::standard(16).unwrap();
        let op = LaplaceFlat::new(&d);
        let ones = vec![C64::new(1.0, 0.0); d.len()];
        let p = lowest_eigenpairs(&op, 8, &[ones], None, &EigenConfig::default()).unwrap();
        for (v, e) in p.values.iter().zip(flat_laplace_oracle(8)) {
            assert!((v - e).abs() < 1e-8, "{v} vs {e}");
        }
    }

    #[test]
    fn twisted_dirac_square() {
        let d = TorusDomain::standard(16).unwrap();
        let op = DiracFlat::new(&d, SpinStructure::new(0.5, 0.0).unwrap());
        let sq = Squared(&op);
        let p = lowest_eigenpairs(&sq, 2, &[], None, &EigenConfig::default()).unwrap();
        assert!((p.values[0] - 0.25).abs() < 1e-9);
        assert!((p.values[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn lambda1_flat_cases() {
        let d = TorusDomain::standard(16).unwrap();
        let one = ConformalFactor::Constant { c: 1.0 };
        let cfg = EigenConfig::default();
        let a = ConformalDirac::new(&d, SpinStructure::new(0.5, 0.0).unwrap(), &one).unwrap();
        let s = lambda1_plus(&a, &cfg).unwrap();
        assert!((s.lambda1_plus - 0.5).abs() < 1e-9);
        assert_eq!(s.kernel_dim, 0);
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &one).unwrap();
        let s = lambda1_plus(&a, &cfg).unwrap();
        assert!((s.lambda1_plus - 1.0).abs() < 1e-9);
        assert_eq!(s.kernel_dim, 2);
        assert!(s.kernel_residual < 1e-12);
        let c = 1.8;
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &ConformalFactor::Constant { c }).unwrap();
        let s = lambda1_plus(&a, &cfg).unwrap();
        assert!((s.lambda1_plus - 1.0 / c).abs() < 1e-9);
    }

    #[test]
    fn lambda1_any_pair_count() {
        let d = TorusDomain::standard(16).unwrap();
        let one = ConformalFactor::Constant { c: 1.0 };
        let a = ConformalDirac::new(&d, SpinStructure::new(0.5, 0.0).unwrap(), &one).unwrap();
        for k in 1..=9 {
            let cfg = EigenConfig { dirac_pairs: k, ..EigenConfig::default() };
            let s = lambda1_plus(&a, &cfg).unwrap();
            assert!((s.lambda1_plus - 0.5).abs() < 1e-9, "k={k}: {}", s.lambda1_plus);
            assert!(s.pairs.iter().all(|p| p.residual < 1e-6), "k={k}");
        }
    }

    #[test]
    fn mu1_flat_and_scaled() {
        let d = TorusDomain::standard(16).unwrap();
        let cfg = EigenConfig::default();
        let c = ConformalLaplace::new(&d, &ConformalFactor::Constant { c: 1.0 }).unwrap();
        let s = mu1(&c, &cfg).unwrap();
        assert!((s.mu1 - 1.0).abs() < 1e-9);
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let c = ConformalLaplace::new(&d, &ConformalFactor::Constant { c: 0.7 }).unwrap();
        assert!((mu1(&c, &cfg).unwrap().mu1 - 1.0 / 0.49).abs() < 1e-8);
    }

    #[test]
    fn deterministic_under_seed() {
        let d = TorusDomain::standard(16).unwrap();
        let f = ConformalFactor::Sampled { values: random_smooth(&d, 3, 2).iter().map(|t| 1.0 + 0.4 * t).collect() };
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &f).unwrap();
        let cfg = EigenConfig::default();
        let s1 = lambda1_plus(&a, &cfg).unwrap();
        let s2 = lambda1_plus(&a, &cfg).unwrap();
        assert_eq!(s1.lambda1_plus.to_bits(), s2.lambda1_plus.to_bits());
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn residuals_are_honest() {
        let d = TorusDomain::standard(16).unwrap();
        let f = ConformalFactor::Family { alpha: 1.0, eps: 0.5 };
        let a = ConformalDirac::new(&d, SpinStructure::TRIVIAL, &f).unwrap();
        let s = lambda1_plus(&a, &EigenConfig::default()).unwrap();
        for (p, v) in s.pairs.iter().zip(&s.vectors) {
            let mut r = a.apply_vec(v);
            axpy(&mut r, C64::new(-p.value, 0.0), v);
            assert!((norm(&r) - p.residual).abs() < 1e-8);
        }
    }

    #[test]
    fn sandwich_trivial_cases() {
        let d = TorusDomain::standard(16).unwrap();
        let cfg = EigenConfig::default();
        let one = ConformalFactor::Constant { c: 1.0 };
        let r = sandwich_check(&d, SpinStructure::TRIVIAL, &one, &one, 0.3, &cfg).unwrap();
        assert!(r.pass);
        let up = ConformalFactor::Constant { c: 1.1 };
        let r = sandwich_check(&d, SpinStructure::TRIVIAL, &one, &up, 0.1, &cfg).unwrap();
        assert!(r.pass);
        assert!((r.mu_f / r.mu_ft - 1.21).abs() < 1e-8);
        assert!(r.mu_margin.abs() < 1e-8);
        let out = ConformalFactor::Constant { c: 1.2 };
        assert!(matches!(
            sandwich_check(&d, SpinStructure::TRIVIAL, &one, &out, 0.1, &cfg),
            Err(EigenError::Envelope(_))
        ));
    }

    #[test]
    fn envelope_respects_bounds() {
        let d = TorusDomain::standard(16).unwrap();
        let f: Vec<f64> = random_smooth(&d, 1, 2).iter().map(|t| 1.0 + 0.5 * t).collect();
        let ft = random_envelope(&d, &f, 0.1, 2);
        for (a, b) in f.iter().zip(&ft) {
            assert!(*b >= a / 1.1 - 1e-15 && *b <= a * 1.1 + 1e-15);
        }
    }
}
