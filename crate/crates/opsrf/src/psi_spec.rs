//! Homogeneous-function specifications:
//! `euclid(H=0.5)` | `diagonal` | `diagonal(file=thetas.txt)` | `radial`.

use std::fmt;
use std::path::Path;

use opsrf_core::homogeneous::HomogeneousFunction;
use opsrf_core::operator_algebra::OperatorMatrix;
use opsrf_core::polar::PolarSystem;
use opsrf_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::formats::parse_rows;

/// A resolved specification; θ files are read at parse time so the value is
/// self-contained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PsiSpec {
    Euclid { h: f64 },
    /// Rows are the θ_j; `None` takes them from the operator.
    Diagonal { thetas: Option<Vec<Vec<f64>>> },
    Radial,
}

impl PsiSpec {
    /// Parses the grammar; relative θ file paths resolve against `base`.
    pub fn parse(s: &str, base: &Path) -> Result<Self, CliError> {
        let s = s.trim();
        let (name, args) = match s.split_once('(') {
            Some((n, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| CliError::Validation(format!("unbalanced parentheses in '{s}'")))?;
                (n.trim(), Some(inner.trim()))
            }
            None => (s, None),
        };
        let arg = |key: &str| -> Result<&str, CliError> {
            let a = args.ok_or_else(|| CliError::Validation(format!("'{name}' needs {key}=...")))?;
            let (k, v) = a.split_once('=').ok_or_else(|| CliError::Validation(format!("expected {key}=... in '{s}'")))?;
            if k.trim() != key {
                return Err(CliError::Validation(format!("unknown parameter '{}' in '{s}'", k.trim())));
            }
            Ok(v.trim())
        };
        match (name, args) {
            ("euclid", _) => {
                let h: f64 = arg("H")?.parse().map_err(|_| CliError::Validation(format!("bad H in '{s}'")))?;
                if !(h > 0.0 && h < 1.0) {
                    return Err(CliError::Validation(format!("euclid needs H in (0, 1), got {h}")));
                }
                Ok(PsiSpec::Euclid { h })
            }
            ("diagonal", None) => Ok(PsiSpec::Diagonal { thetas: None }),
            ("diagonal", Some(_)) => {
                let file = base.join(arg("file")?);
                let text = std::fs::read_to_string(&file)
                    .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", file.display())))?;
                let m = parse_rows(&text)?;
                let rows = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
                Ok(PsiSpec::Diagonal { thetas: Some(rows) })
            }
            ("radial", None) => Ok(PsiSpec::Radial),
            _ => Err(CliError::Validation(format!(
                "unknown homogeneous function '{s}' (expected euclid(H=..), diagonal, diagonal(file=..) or radial)"
            ))),
        }
    }

    /// The function, homogeneous with respect to `op`.
    pub fn build(&self, op: &OperatorMatrix) -> Result<HomogeneousFunction, CliError> {
        Ok(match self {
            PsiSpec::Euclid { h } => HomogeneousFunction::euclid(*h, op)?,
            PsiSpec::Diagonal { thetas: None } => HomogeneousFunction::diagonal_from_operator(op)?,
            PsiSpec::Diagonal { thetas: Some(rows) } => {
                let d = op.dim();
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(CliError::Validation(format!("θ file must hold {d} rows of {d} numbers")));
                }
                let thetas = Matrix::from_row_slice(d, d, &rows.concat());
                let at = op.entries().transpose();
                // a_j from the Rayleigh quotient; the constructor checks the eigen-relation
                let exps: Vec<f64> = rows
                    .iter()
                    .map(|t| {
                        let img = at.mul_vec(t);
                        img.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / t.iter().map(|v| v * v).sum::<f64>()
                    })
                    .collect();
                HomogeneousFunction::diagonal_with_operator(&thetas, &exps, op)?
            }
            PsiSpec::Radial => HomogeneousFunction::radial(PolarSystem::new(op)?),
        })
    }
}

impl fmt::Display for PsiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiSpec::Euclid { h } => write!(f, "euclid(H={h})"),
            PsiSpec::Diagonal { thetas: None } => write!(f, "diagonal"),
            PsiSpec::Diagonal { thetas: Some(rows) } => {
                let body: Vec<String> =
                    rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")).collect();
                write!(f, "diagonal(thetas={})", body.join(" / "))
            }
            PsiSpec::Radial => write!(f, "radial"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let here = Path::new(".");
        assert_eq!(PsiSpec::parse("euclid(H=0.5)", here).unwrap(), PsiSpec::Euclid { h: 0.5 });
        assert_eq!(PsiSpec::parse(" radial ", here).unwrap(), PsiSpec::Radial);
        assert_eq!(PsiSpec::parse("diagonal", here).unwrap(), PsiSpec::Diagonal { thetas: None });
        assert!(PsiSpec::parse("euclid(H=1.5)", here).is_err());
        assert!(PsiSpec::parse("euclid(K=0.5)", here).is_err());
        assert!(PsiSpec::parse("spherical", here).is_err());
        assert!(PsiSpec::parse("diagonal(file=/nonexistent/thetas.txt)", here).is_err());
    }

    #[test]
    fn theta_file_and_build() {
        let dir = tempfile::tempdir().unwrap();
        // the transpose of [[2,0],[1,3]] has eigenvectors (1,0) and (1,1)
        std::fs::write(dir.path().join("t.txt"), "1 0\n1 1\n").unwrap();
        let spec = PsiSpec::parse("diagonal(file=t.txt)", dir.path()).unwrap();
        let op = OperatorMatrix::from_matrix(Matrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 3.0])).unwrap();
        let psi = spec.build(&op).unwrap();
        let x = [0.3, -0.2];
        let c: f64 = 2.0;
        let cx = op.power(c).unwrap().mul_vec(&x);
        assert!((psi.eval(&cx).unwrap() - c * psi.eval(&x).unwrap()).abs() < 1e-9);
        assert!(spec.build(&OperatorMatrix::diagonal(&[2.0, 3.0]).unwrap()).is_err());
        let e = OperatorMatrix::diagonal(&[2.0, 2.0]).unwrap();
        assert!(PsiSpec::Euclid { h: 0.5 }.build(&e).is_ok());
        assert!(PsiSpec::Radial.build(&e).is_ok());
    }
}
