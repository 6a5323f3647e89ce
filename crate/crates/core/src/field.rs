//! Rectangular grids and sampled fields.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::linalg::Matrix;

/// One grid axis: `count` equally spaced values from `start` to `stop`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        if self.count > 1 {
            (self.stop - self.start) / (self.count - 1) as f64
        } else {
            0.0
        }
    }

    pub fn coord(&self, k: usize) -> f64 {
        if k + 1 == self.count {
            self.stop
        } else {
            self.start + k as f64 * self.step()
        }
    }
}

/// Rectangular lattice; nodes are stored row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("a grid needs at least one axis"));
        }
        for (j, a) in axes.iter().enumerate() {
            if a.count == 0 || !a.start.is_finite() || !a.stop.is_finite() {
                return Err(invalid(format!("axis {} is empty or not finite", j + 1)));
            }
            if a.count > 1 && a.start == a.stop {
                return Err(invalid(format!("axis {} has zero length but {} nodes", j + 1, a.count)));
            }
        }
        Ok(GridSpec { axes })
    }

    /// Parses "start:stop:count" per axis, comma-separated.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for part in spec.split(',') {
            let f: Vec<&str> = part.trim().split(':').collect();
            if f.len() != 3 {
                return Err(invalid(format!("grid axis '{part}' is not start:stop:count")));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| invalid(format!("bad number '{s}' in grid")));
            let count = f[2].trim().parse::<usize>().map_err(|_| invalid(format!("bad count '{}' in grid", f[2])))?;
            axes.push(Axis { start: num(f[0])?, stop: num(f[1])?, count });
        }
        Self::new(axes)
    }

    /// Grid on a line: `count` nodes t·dir, t ∈ [0, length].
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = alloc::vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            idx[j] = flat % self.axes[j].count;
            flat /= self.axes[j].count;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.count + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().zip(&self.axes).map(|(&k, a)| a.coord(k)).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// Flat index of a node equal to x (within 1e-12), if any.
    pub fn find(&self, x: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for (a, &v) in self.axes.iter().zip(x) {
            let k = if a.count == 1 {
                0
            } else {
                let t = (v - a.start) / a.step();
                let k = t.round();
                if k < 0.0 || k as usize >= a.count {
                    return None;
                }
                k as usize
            };
            if (a.coord(k) - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return None;
            }
            idx.push(k);
        }
        Some(self.flat_index(&idx))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Harmonizable,
    Gaussian,
    MovingAverage,
    WhiteNoise,
}

impl FieldKind {
    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::Harmonizable => "harmonizable",
            FieldKind::Gaussian => "gaussian",
            FieldKind::MovingAverage => "moving-average",
            FieldKind::WhiteNoise => "white-noise",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "harmonizable" => Some(FieldKind::Harmonizable),
            "gaussian" => Some(FieldKind::Gaussian),
            "moving-average" => Some(FieldKind::MovingAverage),
            "white-noise" => Some(FieldKind::WhiteNoise),
            _ => None,
        }
    }
}

/// Provenance of a sampled field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMeta {
    pub kind: FieldKind,
    pub alpha: f64,
    pub matrix: Matrix,
    pub psi: String,
    pub seed: u64,
    /// Realization index within the seed.
    pub realization: u64,
    /// Series length N (0 for exact Gaussian draws).
    pub terms: usize,
    /// Conditional variance estimate of the neglected series tail (max over
    /// nodes).
    pub tail_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub meta: FieldMeta,
}

impl FieldSample {
    pub fn new(grid: GridSpec, values: Vec<f64>, meta: FieldMeta) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("{} values for a grid of {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field values must be finite"));
        }
        Ok(FieldSample { grid, values, meta })
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flat_index(idx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_index_roundtrip() {
        let g = GridSpec::parse("0:1:5, -1:1:3").unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.node(7), alloc::vec![0.5, 0.0]);
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
            assert_eq!(g.find(&g.node(i)), Some(i));
        }
        assert!(GridSpec::parse("0:1").is_err());
        assert!(GridSpec::parse("0:1:x").is_err());
        assert!(GridSpec::parse("0:0:4").is_err());
        assert_eq!(g.find(&[0.1, 0.0]), None);
    }
}
