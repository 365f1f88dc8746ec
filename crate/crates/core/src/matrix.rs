//! Dense square matrices: ground costs, transport plans, Hessians.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense `n x n` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n.max(1))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for row in self.rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| (0..r).all(|c| self[(r, c)] == self[(c, r)]))
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &SquareMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Parses CSV text: one row per line, comma separated. Blank lines and
    /// `#` comments are ignored.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = crate::distributions::strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    let cell = cell.trim();
                    cell.parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        msg: format!("'{cell}': {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// CSV with every value at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| crate::fmt::sig17(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.n + c]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.n + c]
    }
}

/// Ground cost between bins: non-negative, symmetric, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(SquareMatrix);

impl CostMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        for r in 0..m.n() {
            if m[(r, r)] != 0.0 {
                return Err(Error::InvalidCostMatrix(format!(
                    "diagonal entry {r} is {}",
                    m[(r, r)]
                )));
            }
            for c in 0..m.n() {
                let v = m[(r, c)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidCostMatrix(format!("entry ({r}, {c}) is {v}")));
                }
            }
        }
        if !m.is_symmetric() {
            return Err(Error::InvalidCostMatrix("not symmetric".into()));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        Self::new(SquareMatrix::parse_csv(text)?)
    }

    /// Multiplies every cost by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let m = SquareMatrix::from_fn(self.n(), |r, c| self.0[(r, c)] * factor);
        Self::new(m)
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn max_cost(&self) -> f64 {
        self.0.max_abs()
    }
}

impl Index<(usize, usize)> for CostMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Non-negative flow matrix; row `a` ships mass out of bin `a` of `p`,
/// column `b` delivers it to bin `b` of `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan(SquareMatrix);

impl TransportPlan {
    pub fn new(flows: SquareMatrix) -> Self {
        Self(flows)
    }

    /// Independent coupling `p q^T`, always feasible.
    pub fn outer(p: &[f64], q: &[f64]) -> Self {
        Self(SquareMatrix::from_fn(p.len(), |r, c| p[r] * q[c]))
    }

    pub fn diagonal(p: &[f64]) -> Self {
        Self(SquareMatrix::from_fn(p.len(), |r, c| {
            if r == c {
                p[r]
            } else {
                0.0
            }
        }))
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn flows(&self) -> &SquareMatrix {
        &self.0
    }

    /// Largest deviation of the plan's marginals from `p` (rows) and `q` (columns).
    pub fn marginal_error(&self, p: &[f64], q: &[f64]) -> f64 {
        let rows = self.0.row_sums();
        let cols = self.0.col_sums();
        rows.iter()
            .zip(p)
            .chain(cols.iter().zip(q))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, p: &[f64], q: &[f64], tol: f64) -> bool {
        self.0.as_slice().iter().all(|&v| v >= -tol) && self.marginal_error(p, q) <= tol
    }
}

impl Index<(usize, usize)> for TransportPlan {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// `<M, T>`, the cost of shipping plan `t` under ground costs `m`.
pub fn plan_cost(t: &TransportPlan, m: &CostMatrix) -> Result<f64> {
    t.flows().dot(m.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_matrix_validation() {
        assert!(CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
        assert!(matches!(
            CostMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]),
            Err(Error::InvalidCostMatrix(_))
        ));
        assert!(matches!(
            CostMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]),
            Err(Error::InvalidCostMatrix(_))
        ));
        assert!(matches!(
            CostMatrix::from_rows(&[vec![0.0, 1.0]]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn plan_cost_examples() {
        let m = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let zero = TransportPlan::new(SquareMatrix::zeros(2));
        assert_eq!(plan_cost(&zero, &m).unwrap(), 0.0);
        let diag = TransportPlan::diagonal(&[0.3, 0.7]);
        assert_eq!(plan_cost(&diag, &m).unwrap(), 0.0);
        let big = CostMatrix::new(SquareMatrix::zeros(3)).unwrap();
        assert!(matches!(
            plan_cost(&diag, &big),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let m = CostMatrix::from_rows(&[vec![0.0, 2.5], vec![2.5, 0.0]]).unwrap();
        let back = CostMatrix::parse_csv(&m.matrix().to_csv()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn outer_plan_is_feasible() {
        let p = [0.2, 0.3, 0.5];
        let q = [0.6, 0.1, 0.3];
        assert!(TransportPlan::outer(&p, &q).is_feasible(&p, &q, 1e-12));
    }
}
