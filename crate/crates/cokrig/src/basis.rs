//! Regression bases for trends and for the input-dependent scale factors
//! linking adjacent fidelity levels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CokrigError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisFunction {
    Constant,
    /// x_coord^degree with coord zero-based and degree 1 or 2.
    Monomial { coord: usize, degree: u8 },
}

impl BasisFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            BasisFunction::Constant => 1.0,
            BasisFunction::Monomial { coord, degree } => {
                let v = x[coord];
                if degree == 1 {
                    v
                } else {
                    v * v
                }
            }
        }
    }

    fn token(&self) -> String {
        match *self {
            BasisFunction::Constant => "1".into(),
            BasisFunction::Monomial { coord, degree: 1 } => format!("x{}", coord + 1),
            BasisFunction::Monomial { coord, degree } => format!("x{}^{}", coord + 1, degree),
        }
    }

    fn parse(token: &str, dim: usize) -> Result<Self> {
        let bad = |reason: String| CokrigError::InvalidParameter {
            name: "basis".into(),
            reason,
        };
        let t = token.trim();
        if t == "1" {
            return Ok(BasisFunction::Constant);
        }
        let body = t
            .strip_prefix('x')
            .ok_or_else(|| bad(format!("unknown basis token `{t}` (expected `1`, `xK` or `xK^2`)")))?;
        let (idx, degree) = match body.split_once('^') {
            Some((i, d)) => {
                let degree: u8 = d
                    .parse()
                    .map_err(|_| bad(format!("bad exponent in `{t}`")))?;
                if degree == 0 || degree > 2 {
                    return Err(bad(format!("exponent in `{t}` must be 1 or 2")));
                }
                (i, degree)
            }
            None => (body, 1),
        };
        let coord: usize = idx
            .parse()
            .map_err(|_| bad(format!("bad coordinate index in `{t}`")))?;
        if coord == 0 || coord > dim {
            return Err(bad(format!(
                "coordinate in `{t}` is out of range for dimension {dim}"
            )));
        }
        Ok(BasisFunction::Monomial {
            coord: coord - 1,
            degree,
        })
    }
}

/// An ordered list of basis functions. Evaluation order matches coefficient
/// order everywhere (trend coefficients, scale coefficients, model files).
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    functions: Vec<BasisFunction>,
}

impl Basis {
    pub fn constant() -> Self {
        Basis {
            functions: vec![BasisFunction::Constant],
        }
    }

    pub fn from_tokens(tokens: &[String], dim: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(CokrigError::InvalidParameter {
                name: "basis".into(),
                reason: "a basis needs at least one function".into(),
            });
        }
        let functions = tokens
            .iter()
            .map(|t| BasisFunction::parse(t, dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Basis { functions })
    }

    pub fn tokens(&self) -> Vec<String> {
        self.functions.iter().map(|f| f.token()).collect()
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.functions == [BasisFunction::Constant]
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.functions.len(), |i, _| self.functions[i].eval(x))
    }

    /// Design matrix with one row per point.
    pub fn matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.functions.len(), |i, j| {
            self.functions[j].eval(&points[i])
        })
    }
}

impl Serialize for Basis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Basis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        // dimension checks happen again at fit time; here only syntax
        let max_dim = usize::MAX;
        Basis::from_tokens(&tokens, max_dim).map_err(serde::de::Error::custom)
    }
}

/// Scale factor between two adjacent levels: either a single constant or a
/// linear combination of basis functions of the input. The constant case is
/// represented as the one-function constant basis so both go through the
/// same code path.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleModel {
    pub basis: Basis,
}

impl ScaleModel {
    pub fn constant() -> Self {
        ScaleModel {
            basis: Basis::constant(),
        }
    }

    pub fn with_basis(basis: Basis) -> Self {
        ScaleModel { basis }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }
}

/// A scale model with fitted coefficients: rho(x) = sum_k c_k f_k(x).
#[derive(Clone, Debug, PartialEq)]
pub struct FittedScale {
    pub basis: Basis,
    pub coeffs: DVector<f64>,
}

impl FittedScale {
    pub fn new(basis: Basis, coeffs: DVector<f64>) -> Self {
        assert_eq!(basis.len(), coeffs.len());
        FittedScale { basis, coeffs }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.basis.eval(x).dot(&self.coeffs)
    }

    pub fn eval_points(&self, points: &[Vec<f64>]) -> DVector<f64> {
        &self.basis.matrix(points) * &self.coeffs
    }

    /// The constant value when the basis is the constant basis.
    pub fn as_constant(&self) -> Option<f64> {
        self.basis.is_constant().then(|| self.coeffs[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_tokens() {
        let b = Basis::from_tokens(
            &["1".into(), "x1".into(), "x2^2".into()],
            2,
        )
        .unwrap();
        let v = b.eval(&[3.0, -2.0]);
        assert_eq!(v.as_slice(), &[1.0, 3.0, 4.0]);
        assert_eq!(b.tokens(), vec!["1", "x1", "x2^2"]);
    }

    #[test]
    fn rejects_bad_tokens() {
        assert!(Basis::from_tokens(&["x0".into()], 2).is_err());
        assert!(Basis::from_tokens(&["x3".into()], 2).is_err());
        assert!(Basis::from_tokens(&["x1^3".into()], 2).is_err());
        assert!(Basis::from_tokens(&["y1".into()], 2).is_err());
        assert!(Basis::from_tokens(&[], 2).is_err());
    }

    #[test]
    fn matrix_rows_are_point_evaluations() {
        let b = Basis::from_tokens(&["1".into(), "x2".into()], 2).unwrap();
        let pts = vec![vec![0.0, 5.0], vec![1.0, -1.0]];
        let m = b.matrix(&pts);
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.ncols(), 2);
        assert_eq!(m[(0, 1)], 5.0);
        assert_eq!(m[(1, 1)], -1.0);
    }

    #[test]
    fn constant_scale_is_the_one_function_basis() {
        let a = ScaleModel::constant();
        let b = ScaleModel::with_basis(Basis::from_tokens(&["1".into()], 1).unwrap());
        assert_eq!(a, b);
        let f = FittedScale::new(a.basis, DVector::from_vec(vec![1.87]));
        assert_relative_eq!(f.eval(&[0.3]), 1.87);
        assert_eq!(f.as_constant(), Some(1.87));
    }

    #[test]
    fn basis_serializes_as_tokens() {
        let b = Basis::from_tokens(&["1".into(), "x1^2".into()], 1).unwrap();
        let j = serde_json::to_string(&b).unwrap();
        assert_eq!(j, r#"["1","x1^2"]"#);
        let back: Basis = serde_json::from_str(&j).unwrap();
        assert_eq!(b, back);
    }
}
