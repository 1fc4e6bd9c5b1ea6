//! Small dense linear algebra and the regression model primitives.
//!
//! Dimensions here are tiny (k = 4 for the polynomial benchmark), so
//! everything is plain row-major `Vec<f64>` storage with direct
//! factorizations.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Mat::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ v`.
    pub fn tmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "tmatvec",
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            axpy(*vi, self.row(i), &mut out);
        }
        Ok(out)
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> Mat {
        let k = self.cols;
        let mut g = Mat::zeros(k, k);
        for r in 0..self.rows {
            let row = self.row(r);
            for a in 0..k {
                for b in 0..k {
                    g.data[a * k + b] += row[a] * row[b];
                }
            }
        }
        g
    }

    /// `self + s·I`.
    pub fn add_diag(&self, s: f64) -> Mat {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += s;
        }
        m
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Diagonal matrix stored before rectification; the effective diagonal is
/// `max(0, raw)` entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagPD {
    pub raw_diag: Vec<f64>,
}

impl DiagPD {
    pub fn new(raw_diag: Vec<f64>) -> Self {
        DiagPD { raw_diag }
    }

    pub fn effective(&self) -> Vec<f64> {
        self.raw_diag.iter().map(|&x| rectify(x)).collect()
    }

    pub fn dim(&self) -> usize {
        self.raw_diag.len()
    }
}

pub fn rectify(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient of `rectify`, taken as 0 at the kink.
pub fn rectify_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Mat) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "Cholesky::factor",
                expected: n,
                got: a.cols(),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFiniteInput("Cholesky::factor"));
        }
        debug_assert!(
            (0..n).all(|i| (0..n).all(|j| (a[(i, j)] - a[(j, i)]).abs()
                <= 1e-12 * (1.0 + a[(i, j)].abs()))),
            "matrix not symmetric"
        );
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > 0.0) {
                return Err(Error::NotPd { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Cholesky::solve",
                expected: n,
                got: b.len(),
            });
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput("Cholesky::solve"));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            for p in 0..i {
                y[i] -= self.l[i * n + p] * y[p];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for p in (i + 1)..n {
                y[i] -= self.l[p * n + i] * y[p];
            }
            y[i] /= self.l[i * n + i];
        }
        Ok(y)
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn spd_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("spd_solve"));
    }
    Cholesky::factor(a)?.solve(b)
}

/// Monomial features `(1, x, x², …, x^degree)`.
pub fn poly_features(x: f64, degree: usize) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::NonFiniteInput("poly_features"));
    }
    let mut out = Vec::with_capacity(degree + 1);
    let mut acc = 1.0;
    out.push(acc);
    for _ in 0..degree {
        acc *= x;
        out.push(acc);
    }
    Ok(out)
}

fn check_regression_dims(x: &Mat, v: &[f64], y: &[f64], context: &'static str) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: x.rows(),
            got: y.len(),
        });
    }
    if x.cols() != v.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: x.cols(),
            got: v.len(),
        });
    }
    Ok(())
}

/// `‖X v − Y‖²`.
pub fn sse_loss(x: &Mat, v: &[f64], y: &[f64]) -> Result<f64> {
    check_regression_dims(x, v, y, "sse_loss")?;
    Ok((0..x.rows())
        .map(|i| {
            let r = dot(x.row(i), v) - y[i];
            r * r
        })
        .sum())
}

pub fn rmse(x: &Mat, v: &[f64], y: &[f64]) -> Result<f64> {
    check_regression_dims(x, v, y, "rmse")?;
    if y.is_empty() {
        return Err(Error::EmptyData("rmse"));
    }
    Ok((sse_loss(x, v, y)? / y.len() as f64).sqrt())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn spd_solve_examples() {
        assert_eq!(spd_solve(&Mat::identity(2), &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        let x = spd_solve(&Mat::from_diag(&[2.0, 4.0]), &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let x = spd_solve(&m(&[&[2.0, 1.0], &[1.0, 2.0]]), &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spd_solve_errors() {
        let bad = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(spd_solve(&bad, &[1.0, 1.0]), Err(Error::NotPd { .. })));
        assert_eq!(
            spd_solve(&Mat::identity(2), &[f64::NAN, 1.0]),
            Err(Error::NonFiniteInput("spd_solve"))
        );
        let mut inf = Mat::identity(2);
        inf[(0, 0)] = f64::INFINITY;
        assert!(matches!(
            spd_solve(&inf, &[1.0, 1.0]),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn spd_solve_recovers_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let k = rng.random_range(1..=16);
            let b = Mat::from_rows(
                &(0..k)
                    .map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            // BᵀB + 0.1 I is SPD
            let a = b.gram().add_diag(0.1);
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rhs = a.matvec(&x).unwrap();
            let got = spd_solve(&a, &rhs).unwrap();
            let resid = sub(&a.matvec(&got).unwrap(), &rhs);
            let binf = rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            assert!(resid.iter().all(|r| r.abs() <= 1e-9 * (1.0 + binf)));
            let err = norm(&sub(&got, &x)) / norm(&x).max(1e-300);
            assert!(err < 1e-9, "relative error {err}");
        }
    }

    #[test]
    fn poly_features_examples() {
        assert_eq!(poly_features(0.0, 3).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(poly_features(1.0, 3).unwrap(), vec![1.0; 4]);
        assert_eq!(poly_features(2.0, 3).unwrap(), vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(poly_features(5.0, 0).unwrap(), vec![1.0]);
        assert!(poly_features(f64::NAN, 3).is_err());
    }

    #[test]
    fn sse_and_rmse_examples() {
        let i2 = Mat::identity(2);
        assert_eq!(sse_loss(&i2, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(sse_loss(&i2, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        let x = m(&[&[1.0, 1.0], &[1.0, 2.0]]);
        assert_eq!(sse_loss(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), 13.0);

        assert_eq!(rmse(&i2, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&i2, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert_eq!(rmse(&m(&[&[1.0]]), &[2.0], &[5.0]).unwrap(), 3.0);

        assert!(matches!(
            sse_loss(&i2, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            rmse(&Mat::zeros(0, 2), &[1.0, 1.0], &[]),
            Err(Error::EmptyData(_))
        ));
    }

    proptest! {
        #[test]
        fn poly_recurrence_is_exact(x in -4.0f64..4.0, degree in 0usize..8) {
            let f = poly_features(x, degree).unwrap();
            prop_assert_eq!(f[0], 1.0);
            for d in 0..degree {
                prop_assert_eq!(f[d + 1], f[d] * x);
            }
        }

        #[test]
        fn rectified_diag_is_nonnegative(raw in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            let d = DiagPD::new(raw.clone());
            for (e, r) in d.effective().iter().zip(&raw) {
                prop_assert!(*e >= 0.0);
                prop_assert!(*e == 0.0 || e == r);
            }
        }

        #[test]
        fn sse_zero_iff_exact_fit(
            rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..6),
            v in proptest::collection::vec(-3.0f64..3.0, 3),
            bump in proptest::option::of(0usize..6),
        ) {
            let x = Mat::from_rows(&rows).unwrap();
            let mut y = x.matvec(&v).unwrap();
            prop_assert_eq!(sse_loss(&x, &v, &y).unwrap(), 0.0);
            if let Some(i) = bump {
                let i = i % y.len();
                y[i] += 0.5;
                prop_assert!(sse_loss(&x, &v, &y).unwrap() > 0.0);
            }
        }
    }
}
