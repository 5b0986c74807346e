use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

/// Row-major `rows × cols` matrix; rows are batch items.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor2<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "Tensor2::new",
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                found: data.len().to_string(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Stacks rows of equal length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "Tensor2::from_rows",
                    expected: format!("{cols} columns"),
                    found: r.len().to_string(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    /// Rows at `indices`, in that order.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &r in indices {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, op: &'static str, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                op,
                expected: format!("{}x{}", shape.0, shape.1),
                found: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }

    /// Errors naming `context` if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// `self · rhs` where `rhs` is `cols × k`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: format!("rhs with {} rows", self.cols),
                found: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let x = self.row(r);
            let y = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (k, &a) in x.iter().enumerate() {
                if a != S::zero() {
                    scalar::axpy(a, rhs.row(k), y);
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ` where `rhs` is `k × cols`.
    pub fn matmul_transposed(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_transposed",
                expected: format!("rhs with {} columns", self.cols),
                found: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        for r in 0..self.rows {
            let x = self.row(r);
            for k in 0..rhs.rows {
                out.data[r * rhs.rows + k] = scalar::dot(x, rhs.row(k));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` where `rhs` is `rows × k`.
    pub fn transposed_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "transposed_matmul",
                expected: format!("rhs with {} rows", self.rows),
                found: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let g = rhs.row(r);
            for (c, &a) in self.row(r).iter().enumerate() {
                if a != S::zero() {
                    scalar::axpy(a, g, &mut out.data[c * rhs.cols..(c + 1) * rhs.cols]);
                }
            }
        }
        Ok(out)
    }

    /// Index of the largest entry of each row; first wins on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn naive(a: &Tensor2<f64>, b: &Tensor2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                for k in 0..a.cols() {
                    out[i * b.cols() + j] += a.get(i, k) * b.get(k, j);
                }
            }
        }
        out
    }

    fn transpose(t: &Tensor2<f64>) -> Tensor2<f64> {
        let mut d = Vec::new();
        for c in 0..t.cols() {
            for r in 0..t.rows() {
                d.push(t.get(r, c));
            }
        }
        Tensor2::new(t.cols(), t.rows(), d).unwrap()
    }

    #[test]
    fn products_match_triple_loop() {
        let mut rng = crate::rng::seeded(5, crate::rng::Stream::Init);
        for _ in 0..10 {
            let (m, k, n) = (rng.random_range(1..7), rng.random_range(1..9), rng.random_range(1..6));
            let mut rand_t = |r, c| {
                Tensor2::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            };
            let a = rand_t(m, k);
            let b = rand_t(k, n);
            let expect = naive(&a, &b);
            let close = |got: &[f64]| got.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12);
            assert!(close(a.matmul(&b).unwrap().data()));
            assert!(close(a.matmul_transposed(&transpose(&b)).unwrap().data()));
            assert!(close(transpose(&a).transposed_matmul(&b).unwrap().data()));
        }
    }

    #[test]
    fn shape_errors() {
        let a = Tensor2::<f64>::zeros(2, 3);
        assert!(a.matmul(&Tensor2::zeros(2, 3)).is_err());
        assert!(Tensor2::<f64>::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn non_finite_is_detected() {
        let t = Tensor2::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(t.check_finite("x"), Err(Error::NonFinite(_))));
    }
}
