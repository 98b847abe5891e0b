//! Complex 2×2 realisation of Clifford multiplication for `n = 2, 3`.
//!
//! The convention is `γ_i γ_j + γ_j γ_i = −2 δ_ij` with every `γ_i`
//! anti-Hermitian; the shipped matrices are `γ_k = i σ_k` (Pauli matrices).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64 as C64;
use thiserror::Error;

/// A complex 2×2 matrix, row-major.
pub type Mat2 = [[C64; 2]; 2];

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliffordError {
    #[error("unsupported Clifford dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("vector has {got} components but the representation has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Two complex components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Spinor(pub [C64; 2]);

impl Spinor {
    pub const ZERO: Spinor = Spinor([ZERO, ZERO]);

    pub fn new(a: C64, b: C64) -> Self {
        Spinor([a, b])
    }

    /// Unit spinor `(1, 0)`.
    pub fn up() -> Self {
        Spinor([ONE, ZERO])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0[0].norm_sqr() + self.0[1].norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian product `⟨self, other⟩ = Σ self_c · conj(other_c)`.
    pub fn dot(&self, other: &Spinor) -> C64 {
        self.0[0] * other.0[0].conj() + self.0[1] * other.0[1].conj()
    }

    pub fn scale(&self, s: C64) -> Spinor {
        Spinor([self.0[0] * s, self.0[1] * s])
    }

    pub fn max_abs_diff(&self, other: &Spinor) -> f64 {
        (self.0[0] - other.0[0])
            .norm()
            .max((self.0[1] - other.0[1]).norm())
    }
}

impl Add for Spinor {
    type Output = Spinor;
    fn add(self, rhs: Spinor) -> Spinor {
        Spinor([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1]])
    }
}

impl AddAssign for Spinor {
    fn add_assign(&mut self, rhs: Spinor) {
        self.0[0] += rhs.0[0];
        self.0[1] += rhs.0[1];
    }
}

impl Sub for Spinor {
    type Output = Spinor;
    fn sub(self, rhs: Spinor) -> Spinor {
        Spinor([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1]])
    }
}

impl Neg for Spinor {
    type Output = Spinor;
    fn neg(self) -> Spinor {
        Spinor([-self.0[0], -self.0[1]])
    }
}

impl Mul<f64> for Spinor {
    type Output = Spinor;
    fn mul(self, s: f64) -> Spinor {
        Spinor([self.0[0] * s, self.0[1] * s])
    }
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, entry) in row.iter_mut().enumerate() {
            *entry = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

pub fn mat_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

pub fn mat_scale(a: &Mat2, s: C64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

pub fn adjoint(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

pub fn identity() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn zero_mat() -> Mat2 {
    [[ZERO; 2]; 2]
}

/// Largest entry modulus.
pub fn max_abs(a: &Mat2) -> f64 {
    a.iter()
        .flat_map(|row| row.iter())
        .fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn mat_apply(a: &Mat2, s: &Spinor) -> Spinor {
    Spinor([
        a[0][0] * s.0[0] + a[0][1] * s.0[1],
        a[1][0] * s.0[0] + a[1][1] * s.0[1],
    ])
}

/// Gamma matrices `γ_1..γ_n` acting on 2-component spinors.
#[derive(Clone, Debug, PartialEq)]
pub struct CliffordRep {
    gammas: Vec<Mat2>,
}

impl CliffordRep {
    /// The shipped representation `γ_k = i σ_k`, `k = 1..n`.
    pub fn new(n: usize) -> Result<Self, CliffordError> {
        if !(2..=3).contains(&n) {
            return Err(CliffordError::UnsupportedDimension(n));
        }
        let pauli = [
            [[ZERO, ONE], [ONE, ZERO]],
            [[ZERO, -I], [I, ZERO]],
            [[ONE, ZERO], [ZERO, -ONE]],
        ];
        let gammas = pauli[..n].iter().map(|s| mat_scale(s, I)).collect();
        Ok(CliffordRep { gammas })
    }

    /// Arbitrary gamma matrices; no relation is enforced here, see
    /// [`CliffordRep::check_relations`].
    pub fn from_gammas(gammas: Vec<Mat2>) -> Result<Self, CliffordError> {
        if !(2..=3).contains(&gammas.len()) {
            return Err(CliffordError::UnsupportedDimension(gammas.len()));
        }
        Ok(CliffordRep { gammas })
    }

    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    pub fn gammas(&self) -> &[Mat2] {
        &self.gammas
    }

    pub fn gamma(&self, i: usize) -> &Mat2 {
        &self.gammas[i]
    }

    /// `Σ v_i γ_i`.
    pub fn vector_matrix(&self, v: &[f64]) -> Result<Mat2, CliffordError> {
        if v.len() != self.dim() {
            return Err(CliffordError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(v.iter().zip(&self.gammas).fold(zero_mat(), |acc, (&vi, g)| {
            mat_add(&acc, &mat_scale(g, C64::new(vi, 0.0)))
        }))
    }

    /// Clifford action `v · s`.
    pub fn vector_mul(&self, v: &[f64], s: &Spinor) -> Result<Spinor, CliffordError> {
        Ok(mat_apply(&self.vector_matrix(v)?, s))
    }

    /// Product `γ_i γ_j γ_k` (zero-based indices).
    pub fn triple(&self, i: usize, j: usize, k: usize) -> Mat2 {
        mat_mul(&mat_mul(&self.gammas[i], &self.gammas[j]), &self.gammas[k])
    }

    /// Worst deviation from the Clifford relation and from anti-Hermiticity.
    pub fn check_relations(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let mut anti = mat_add(
                    &mat_mul(&self.gammas[i], &self.gammas[j]),
                    &mat_mul(&self.gammas[j], &self.gammas[i]),
                );
                if i == j {
                    anti = mat_add(&anti, &mat_scale(&identity(), C64::new(2.0, 0.0)));
                }
                worst = worst.max(max_abs(&anti));
            }
            worst = worst.max(max_abs(&mat_add(&adjoint(&self.gammas[i]), &self.gammas[i])));
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spinor(rng: &mut ChaCha8Rng) -> Spinor {
        Spinor([
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        ])
    }

    #[test]
    fn shipped_reps_are_exact() {
        assert_eq!(CliffordRep::new(2).unwrap().check_relations(), 0.0);
        assert_eq!(CliffordRep::new(3).unwrap().check_relations(), 0.0);
    }

    #[test]
    fn unsupported_dimensions() {
        assert_eq!(CliffordRep::new(1), Err(CliffordError::UnsupportedDimension(1)));
        assert_eq!(CliffordRep::new(4), Err(CliffordError::UnsupportedDimension(4)));
    }

    #[test]
    fn corrupted_rep_is_detected() {
        let rep = CliffordRep::new(2).unwrap();
        let mut gammas = rep.gammas().to_vec();
        gammas[0] = mat_scale(&gammas[0], C64::new(1.1, 0.0));
        let bad = CliffordRep::from_gammas(gammas).unwrap();
        // γ₁² = −1.21 Id, so the diagonal relation is off by 0.42.
        assert!(bad.check_relations() >= 0.2);
    }

    #[test]
    fn e1_squared_is_minus_one() {
        let rep = CliffordRep::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spinor(&mut rng);
        let once = rep.vector_mul(&[1.0, 0.0], &s).unwrap();
        let twice = rep.vector_mul(&[1.0, 0.0], &once).unwrap();
        assert_eq!(twice, -s);
    }

    #[test]
    fn e1_e2_anticommute() {
        for n in [2, 3] {
            let rep = CliffordRep::new(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let s = random_spinor(&mut rng);
            let mut e1 = vec![0.0; n];
            let mut e2 = vec![0.0; n];
            e1[0] = 1.0;
            e2[1] = 1.0;
            let a = rep.vector_mul(&e1, &rep.vector_mul(&e2, &s).unwrap()).unwrap();
            let b = rep.vector_mul(&e2, &rep.vector_mul(&e1, &s).unwrap()).unwrap();
            assert_eq!((a + b).norm(), 0.0);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let rep = CliffordRep::new(2).unwrap();
        assert_eq!(
            rep.vector_mul(&[1.0, 2.0, 3.0], &Spinor::up()),
            Err(CliffordError::DimensionMismatch { expected: 2, got: 3 })
        );
    }

    #[test]
    fn norm_multiplicative_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3] {
            let rep = CliffordRep::new(n).unwrap();
            for _ in 0..1000 {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let s = random_spinor(&mut rng);
                let vs = rep.vector_mul(&v, &s).unwrap();
                let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((vs.norm() - vn * s.norm()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gamma_triple_is_scalar_in_three_dimensions() {
        // For i σ_k: γ1γ2γ3 = Id, so trivectors act as scalars.
        let rep = CliffordRep::new(3).unwrap();
        assert_eq!(max_abs(&mat_add(&rep.triple(0, 1, 2), &mat_scale(&identity(), -ONE))), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn vector_square_is_minus_norm_squared(
            v in proptest::collection::vec(-10.0f64..10.0, 3),
            re in proptest::collection::vec(-1.0f64..1.0, 2),
            im in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let rep = CliffordRep::new(3).unwrap();
            let s = Spinor([C64::new(re[0], im[0]), C64::new(re[1], im[1])]);
            let vv = rep.vector_mul(&v, &rep.vector_mul(&v, &s).unwrap()).unwrap();
            let n2: f64 = v.iter().map(|x| x * x).sum();
            proptest::prop_assert!(vv.max_abs_diff(&(s * (-n2))) < 1e-12 * (1.0 + n2));
        }

        #[test]
        fn vector_mul_is_linear(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            v in proptest::collection::vec(-3.0f64..3.0, 2),
            w in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let rep = CliffordRep::new(2).unwrap();
            let s = Spinor([C64::new(0.3, -0.2), C64::new(-0.7, 0.5)]);
            let comb: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let lhs = rep.vector_mul(&comb, &s).unwrap();
            let rhs = rep.vector_mul(&v, &s).unwrap() * a + rep.vector_mul(&w, &s).unwrap() * b;
            proptest::prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}
