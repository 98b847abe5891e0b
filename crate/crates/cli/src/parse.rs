//! Parsers for command-line values: conformal factors, spin structures and
//! number lists.

use spinlab::flatmodel::{ConformalFactor, SpinStructure};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ValueError(pub String);

fn number(s: &str) -> Result<f64, ValueError> {
    let v: f64 = s.trim().parse().map_err(|_| ValueError(format!("bad number `{}`", s.trim())))?;
    if !v.is_finite() {
        return Err(ValueError(format!("non-finite number `{}`", s.trim())));
    }
    Ok(v)
}

/// `const:c`, `sphere`, or `family:α,ε`.
pub fn parse_factor(s: &str) -> Result<ConformalFactor, ValueError> {
    let s = s.trim();
    if s == "sphere" {
        return Ok(ConformalFactor::Sphere);
    }
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| ValueError(format!("factor `{s}`: expected const:c, sphere or family:alpha,eps")))?;
    match kind.trim() {
        "const" => {
            let c = number(rest)?;
            if c <= 0.0 {
                return Err(ValueError(format!("constant factor must be positive, got {c}")));
            }
            Ok(ConformalFactor::Constant { c })
        }
        "family" => {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(ValueError(format!("family `{rest}`: expected alpha,eps")));
            }
            let alpha = number(parts[0])?;
            let eps = number(parts[1])?;
            if !(eps > 0.0 && eps <= alpha) {
                return Err(ValueError(format!("family needs 0 < eps <= alpha, got alpha={alpha}, eps={eps}")));
            }
            Ok(ConformalFactor::Family { alpha, eps })
        }
        other => Err(ValueError(format!("unknown factor kind `{other}`"))),
    }
}

/// `δ₁,δ₂` with each twist 0 or 1/2.
pub fn parse_spin(s: &str) -> Result<SpinStructure, ValueError> {
    s.trim()
        .parse::<SpinStructure>()
        .map_err(|_| ValueError(format!("spin `{}`: expected two twists from {{0, 0.5}}, e.g. 0.5,0", s.trim())))
}

/// Comma-separated finite numbers, at least one.
pub fn parse_list(s: &str) -> Result<Vec<f64>, ValueError> {
    let out: Vec<f64> = s.split(',').map(number).collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(ValueError("empty list".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors() {
        assert_eq!(parse_factor("const:1").unwrap(), ConformalFactor::Constant { c: 1.0 });
        assert_eq!(parse_factor(" sphere ").unwrap(), ConformalFactor::Sphere);
        assert_eq!(parse_factor("family:1,0.1").unwrap(), ConformalFactor::Family { alpha: 1.0, eps: 0.1 });
        for bad in ["", "const", "const:0", "const:-1", "const:inf", "family:1", "family:0.1,1", "family:1,0", "disk:1"] {
            assert!(parse_factor(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn spins() {
        assert!(parse_spin("0,0").unwrap().is_trivial());
        assert_eq!(parse_spin("0.5, 0").unwrap().twist(), [0.5, 0.0]);
        for bad in ["", "0", "0.25,0", "1,0", "0,0,0", "a,b"] {
            assert!(parse_spin(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list("0.4,0.2, 0.1").unwrap(), vec![0.4, 0.2, 0.1]);
        assert!(parse_list("").is_err());
        assert!(parse_list("0.1,,0.2").is_err());
        assert!(parse_list("nan").is_err());
    }

    proptest::proptest! {
        #[test]
        fn parsers_never_panic(s in "\\PC{0,60}") {
            let _ = parse_factor(&s);
            let _ = parse_spin(&s);
            let _ = parse_list(&s);
        }

        #[test]
        fn spin_display_round_trips(a in proptest::bool::ANY, b in proptest::bool::ANY) {
            let s = SpinStructure::from_bits(a, b);
            proptest::prop_assert_eq!(parse_spin(&s.to_string()).unwrap(), s);
        }
    }
}
