//! Text formats: scaling matrices, Jordan block files, point lists and
//! FieldSample CSV files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical and rewriting a file reproduces its bytes.

use std::fmt::Write as _;
use std::path::Path;

use opsrf_core::field::{FieldKind, FieldMeta, FieldSample, GridSpec};
use opsrf_core::linalg::Matrix;
use opsrf_core::operator_algebra::{BlockStructure, JordanBlock, OperatorMatrix};

use crate::error::CliError;

fn numbers(line: &str) -> Result<Vec<f64>, CliError> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CliError::Validation(format!("bad number '{s}'"))))
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty())
}

/// Rows of numbers (whitespace or comma separated), '#' comments allowed.
pub fn parse_rows(text: &str) -> Result<Matrix, CliError> {
    let rows: Vec<Vec<f64>> = content_lines(text).map(numbers).collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(CliError::Validation("matrix text holds no rows".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Validation("matrix rows have different lengths".into()));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
}

/// Parses a scaling matrix. Two layouts are accepted:
///
/// * plain rows of the d×d matrix, optionally preceded by a line "d";
/// * a block file: lines `real <λ> <size>` or `complex <a> <b> <size>`
///   (a leading `block` keyword is accepted), optionally followed by `basis`
///   and the rows of the change of basis P (identity when absent). A
///   `P <file>` line is expanded by [`inline_basis_file`] first.
pub fn parse_operator(text: &str) -> Result<OperatorMatrix, CliError> {
    let lines: Vec<&str> = content_lines(text).collect();
    let is_block_line = |l: &&str| {
        let head = l.split_whitespace().next().unwrap_or("");
        matches!(head, "block" | "real" | "complex" | "basis")
    };
    if !lines.iter().any(is_block_line) {
        return Ok(OperatorMatrix::from_matrix(parse_rows(&strip_dimension_line(&lines).join("\n"))?)?);
    }
    let mut blocks = Vec::new();
    let mut basis_rows: Option<Vec<&str>> = None;
    for line in lines {
        if let Some(rows) = basis_rows.as_mut() {
            rows.push(line);
            continue;
        }
        let mut f: Vec<&str> = line.split_whitespace().collect();
        if f.first() == Some(&"block") {
            f.remove(0);
        }
        match f.as_slice() {
            ["real", l, n] => blocks.push(JordanBlock::real(num(l)?, count(n)?)),
            ["complex", a, b, n] => blocks.push(JordanBlock::complex(num(a)?, num(b)?, count(n)?)),
            ["basis"] => basis_rows = Some(Vec::new()),
            ["P", _] => {
                return Err(CliError::Validation("'P <file>' must be resolved by reading the block file from disk".into()))
            }
            _ => return Err(CliError::Validation(format!("unrecognised block file line '{line}'"))),
        }
    }
    let d: usize = blocks.iter().map(|b| b.dim()).sum();
    let basis = match basis_rows {
        Some(rows) => parse_rows(&strip_dimension_line(&rows).join("\n"))?,
        None => Matrix::identity(d),
    };
    let bs = BlockStructure::new(blocks, basis)?;
    Ok(OperatorMatrix::build_from_blocks(bs)?)
}

/// Drops a leading "d" line when exactly d rows of d entries follow.
fn strip_dimension_line<'a>(lines: &[&'a str]) -> Vec<&'a str> {
    if let [first, rest @ ..] = lines {
        if let Ok(d) = first.trim().parse::<usize>() {
            let square = rest.len() == d && rest.iter().all(|r| numbers(r).map(|v| v.len() == d).unwrap_or(false));
            if d > 0 && square {
                return rest.to_vec();
            }
        }
    }
    lines.to_vec()
}

/// Replaces a `P <file>` line of a block file by a `basis` section holding
/// the file's rows, relative paths resolved against `base`.
pub fn inline_basis_file(text: &str, base: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split('#').next().unwrap_or("").split_whitespace().collect();
        if let ["P", file] = f.as_slice() {
            let path = base.join(file);
            let rows = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Validation(format!("cannot read basis file {}: {e}", path.display())))?;
            out.push_str("basis\n");
            out.push_str(&rows);
            if !rows.ends_with('\n') {
                out.push('\n');
            }
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn num(s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Validation(format!("bad number '{s}'")))
}

fn count(s: &str) -> Result<usize, CliError> {
    s.parse().map_err(|_| CliError::Validation(format!("bad block size '{s}'")))
}

/// "0.3,0.4" as a vector.
pub fn parse_point(s: &str) -> Result<Vec<f64>, CliError> {
    let v = numbers(s)?;
    if v.is_empty() {
        return Err(CliError::Validation("empty point".into()));
    }
    Ok(v)
}

/// Points separated by ';', e.g. "0.1,0.2;0.5,0.5".
pub fn parse_points(s: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let pts: Vec<Vec<f64>> = s.split(';').filter(|p| !p.trim().is_empty()).map(parse_point).collect::<Result<_, _>>()?;
    if pts.is_empty() {
        return Err(CliError::Validation("no points given".into()));
    }
    let d = pts[0].len();
    if pts.iter().any(|p| p.len() != d) {
        return Err(CliError::Validation("points have different dimensions".into()));
    }
    Ok(pts)
}

/// "lo:hi" inclusive range of integers.
pub fn parse_range(s: &str) -> Result<(u32, u32), CliError> {
    let (a, b) = s.split_once(':').ok_or_else(|| CliError::Validation(format!("'{s}' is not lo:hi")))?;
    let lo: u32 = a.trim().parse().map_err(|_| CliError::Validation(format!("bad range start '{a}'")))?;
    let hi: u32 = b.trim().parse().map_err(|_| CliError::Validation(format!("bad range end '{b}'")))?;
    if lo > hi {
        return Err(CliError::Validation(format!("empty range {s}")));
    }
    Ok((lo, hi))
}

pub fn matrix_text(m: &Matrix) -> String {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_inline_matrix(s: &str) -> Result<Matrix, CliError> {
    parse_rows(&s.replace(';', "\n"))
}

pub fn grid_text(g: &GridSpec) -> String {
    g.axes().iter().map(|a| format!("{}:{}:{}", a.start, a.stop, a.count)).collect::<Vec<_>>().join(",")
}

/// Serializes a sample: '#' metadata lines, a header, then one row per node.
pub fn write_field_csv(f: &FieldSample) -> String {
    let m = &f.meta;
    let mut s = String::new();
    let _ = writeln!(s, "# kind={}", m.kind.name());
    let _ = writeln!(s, "# alpha={}", m.alpha);
    let _ = writeln!(s, "# matrix={}", matrix_text(&m.matrix));
    let _ = writeln!(s, "# psi={}", m.psi);
    let _ = writeln!(s, "# seed={}", m.seed);
    let _ = writeln!(s, "# realization={}", m.realization);
    let _ = writeln!(s, "# N={}", m.terms);
    let _ = writeln!(s, "# tail_variance={}", m.tail_variance);
    let _ = writeln!(s, "# grid={}", grid_text(&f.grid));
    let d = f.grid.dim();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(std::iter::once("value".into())).collect();
    let _ = writeln!(s, "{}", header.join(","));
    for (i, v) in f.values.iter().enumerate() {
        for x in f.grid.node(i) {
            let _ = write!(s, "{x},");
        }
        let _ = writeln!(s, "{v}");
    }
    s
}

/// Inverse of [`write_field_csv`]. Node coordinates are checked against the
/// declared grid.
pub fn read_field_csv(text: &str) -> Result<FieldSample, CliError> {
    let mut meta: std::collections::BTreeMap<&str, &str> = Default::default();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim(), v.trim());
            }
        } else if !header_seen {
            header_seen = true;
        } else {
            rows.push(line);
        }
    }
    let get = |k: &str| meta.get(k).copied().ok_or_else(|| CliError::Validation(format!("field file lacks '# {k}='")));
    let grid = GridSpec::parse(get("grid")?)?;
    let kind = FieldKind::from_name(get("kind")?).ok_or_else(|| CliError::Validation("unknown field kind".into()))?;
    let parse_num = |k: &str| -> Result<f64, CliError> { num(get(k)?) };
    let parse_int = |k: &str| -> Result<u64, CliError> {
        get(k)?.parse().map_err(|_| CliError::Validation(format!("bad integer for '{k}'")))
    };
    let fm = FieldMeta {
        kind,
        alpha: parse_num("alpha")?,
        matrix: parse_inline_matrix(get("matrix")?)?,
        psi: get("psi")?.to_string(),
        seed: parse_int("seed")?,
        realization: parse_int("realization")?,
        terms: parse_int("N")? as usize,
        tail_variance: parse_num("tail_variance")?,
    };
    let d = grid.dim();
    if rows.len() != grid.len() {
        return Err(CliError::Validation(format!("{} rows for a grid of {} nodes", rows.len(), grid.len())));
    }
    let mut values = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let v = numbers(row)?;
        if v.len() != d + 1 {
            return Err(CliError::Validation(format!("row {} has {} columns, expected {}", i + 1, v.len(), d + 1)));
        }
        let node = grid.node(i);
        if node.iter().zip(&v).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs())) {
            return Err(CliError::Validation(format!("row {} does not match the grid node order", i + 1)));
        }
        values.push(v[d]);
    }
    Ok(FieldSample::new(grid, values, fm)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_block_matrices() {
        let e = parse_operator("2 0\n0 3 # diagonal\n").unwrap();
        assert_eq!(e.entries().row(1), &[0.0, 3.0]);
        let j = parse_operator("block real 2 2\n").unwrap();
        assert_eq!(j.entries().as_slice(), &[2.0, 0.0, 1.0, 2.0]);
        let c = parse_operator("block complex 1.5 1 1\nbasis\n1 0\n0 1\n").unwrap();
        assert_eq!(c.a_min(), 1.5);
        let sized = parse_operator("2\n2 0\n0 3\n").unwrap();
        assert_eq!(sized, e);
        assert_eq!(parse_operator("real 2 2\n").unwrap(), j);
        let bad = parse_operator("0.9 0\n0 3\n").unwrap_err();
        assert!(matches!(bad, CliError::Validation(_)));
        assert!(bad.to_string().contains("min a_j > 1"));
        assert!(parse_operator("1 2\n3\n").is_err());
    }

    #[test]
    fn basis_file_is_inlined() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("P.txt"), "2\n1 1\n0 1\n").unwrap();
        let text = inline_basis_file("real 2 1\nreal 3 1\nP P.txt\n", dir.path()).unwrap();
        assert!(text.contains("basis\n2\n1 1\n0 1\n"));
        let e = parse_operator(&text).unwrap();
        // P diag(2,3) P⁻¹ with P = [[1,1],[0,1]]
        assert_eq!(e.entries().as_slice(), &[2.0, 1.0, 0.0, 3.0]);
        assert!(parse_operator("real 2 1\nreal 3 1\nP P.txt\n").is_err());
    }

    #[test]
    fn points_and_ranges() {
        assert_eq!(parse_points("0.1,0.2; 1,2").unwrap(), vec![vec![0.1, 0.2], vec![1.0, 2.0]]);
        assert!(parse_points("0.1;1,2").is_err());
        assert_eq!(parse_range("2:7").unwrap(), (2, 7));
        assert!(parse_range("7:2").is_err());
    }

    #[test]
    fn field_csv_roundtrip_is_bit_exact() {
        let grid = GridSpec::parse("0:1:5,-0.5:0.5:3").unwrap();
        let values: Vec<f64> = (0..grid.len()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let meta = FieldMeta {
            kind: FieldKind::Harmonizable,
            alpha: 1.5,
            matrix: Matrix::from_row_slice(2, 2, &[2.0, 0.1, 0.0, 3.0]),
            psi: "radial".into(),
            seed: 42,
            realization: 3,
            terms: 20000,
            tail_variance: 1.25e-7,
        };
        let f = FieldSample::new(grid, values, meta).unwrap();
        let text = write_field_csv(&f);
        let g = read_field_csv(&text).unwrap();
        assert_eq!(f, g);
        assert_eq!(write_field_csv(&g), text);
    }
}
