//! One-dimensional adaptive quadrature helpers on top of tanh-sinh.

use quadrature::double_exponential;

/// `∫_a^b f` split at the given interior breakpoints, which is where the
/// integrands used here lose smoothness or change scale.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: f64) -> f64 {
    points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| double_exponential::integrate(&f, w[0], w[1], tol).integral)
        .sum()
}

/// `∫_a^b f` on `[a, b]` with geometrically spaced breakpoints between
/// `max(a, lo)` and `b`, for integrands with structure at many scales.
pub fn integrate_geometric<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, lo: f64, per_decade: usize, extra: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a, b];
    let start = lo.max(a);
    if start > 0.0 && start < b {
        let decades = (b / start).log10();
        let count = (decades * per_decade as f64).ceil().max(1.0) as usize;
        for k in 0..=count {
            pts.push(start * (b / start).powf(k as f64 / count as f64));
        }
    }
    pts.extend(extra.iter().copied().filter(|&p| p > a && p < b));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    integrate_pieces(f, &pts, tol)
}

/// `∫_0^∞ f` through `r = t / (1 − t)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        f(t / s) / (s * s)
    };
    integrate_pieces(g, &[0.0, 0.5, 0.9, 0.99, 1.0], tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_pieces() {
        let v = integrate_pieces(|x| x * x, &[0.0, 0.5, 2.0], 1e-14);
        assert!((v - 8.0 / 3.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn half_line_lorentzian() {
        let v = integrate_half_line(|r| 1.0 / (1.0 + r * r), 1e-13);
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
    }

    #[test]
    fn multiscale_peak() {
        let e: f64 = 1e-4;
        // ∫_0^1 2r e²/(e²+r²)² dr = 1 − e²/(e²+1)
        let v = integrate_geometric(|r| 2.0 * r * e * e / (e * e + r * r).powi(2), 0.0, 1.0, e * 1e-2, 4, &[], 1e-14);
        assert!((v - (1.0 - e * e / (e * e + 1.0))).abs() < 1e-10);
    }
}
