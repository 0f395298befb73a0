//! Small dense complex linear algebra in dimension n <= 2 and helpers for
//! moving between C^n and R^{2n} (coordinate order x1, y1, x2, y2).

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

pub fn to_complex(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|p| C64::new(p[0], p[1])).collect()
}

pub fn to_real(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn cnorm(z: &[C64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian n x n matrix, symmetrized on construction so that
/// `a[i][j] == conj(a[j][i])` holds bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    entries: CMat,
}

impl HermitianMatrix {
    pub fn from_matrix(m: &CMat) -> Self {
        let n = m.nrows();
        let mut e = CMat::zeros(n, n);
        for i in 0..n {
            e[(i, i)] = C64::new(m[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                e[(i, j)] = v;
                e[(j, i)] = v.conj();
            }
        }
        HermitianMatrix { entries: e }
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix {
            entries: CMat::identity(n, n),
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut e = CMat::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            e[(i, i)] = C64::new(*v, 0.0);
        }
        HermitianMatrix { entries: e }
    }

    /// Complex Hessian u_{i jbar} from the real 2n x 2n Hessian.
    pub fn from_real_hessian(h: &DMatrix<f64>) -> Self {
        let n = h.nrows() / 2;
        let mut e = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = h[(2 * i, 2 * j)] + h[(2 * i + 1, 2 * j + 1)];
                let im = h[(2 * i, 2 * j + 1)] - h[(2 * i + 1, 2 * j)];
                e[(i, j)] = C64::new(0.25 * re, 0.25 * im);
            }
        }
        Self::from_matrix(&e)
    }

    /// Symmetric S with x^T S x = sum a_{i jbar} w_i conj(w_j).
    pub fn real_form(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let a = self.entries[(i, j)];
                s[(2 * i, 2 * j)] = a.re;
                s[(2 * i + 1, 2 * j + 1)] = a.re;
                s[(2 * i, 2 * j + 1)] = a.im;
                s[(2 * i + 1, 2 * j)] = -a.im;
            }
        }
        s
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[(i, j)]
    }

    /// Eigenvalues in ascending order with unit eigenvectors as columns.
    pub fn eigen(&self) -> (Vec<f64>, CMat) {
        let n = self.n();
        if n == 1 {
            return (vec![self.entries[(0, 0)].re], CMat::identity(1, 1));
        }
        let se = self.entries.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let vals = order.iter().map(|&k| se.eigenvalues[k]).collect();
        let mut vecs = CMat::zeros(n, n);
        for (c, &k) in order.iter().enumerate() {
            vecs.set_column(c, &se.eigenvectors.column(k));
        }
        (vals, vecs)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.n();
        match n {
            1 => vec![self.entries[(0, 0)].re],
            2 => {
                let a = self.entries[(0, 0)].re;
                let d = self.entries[(1, 1)].re;
                let b = self.entries[(0, 1)].norm_sqr();
                let m = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b).sqrt();
                vec![m - r, m + r]
            }
            _ => self.eigen().0,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    pub fn det(&self) -> f64 {
        match self.n() {
            1 => self.entries[(0, 0)].re,
            2 => {
                self.entries[(0, 0)].re * self.entries[(1, 1)].re - self.entries[(0, 1)].norm_sqr()
            }
            _ => self.entries.determinant().re,
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.entries[(i, i)].re).sum()
    }

    pub fn inverse(&self) -> Option<HermitianMatrix> {
        self.entries
            .clone()
            .try_inverse()
            .map(|m| Self::from_matrix(&m))
    }

    pub fn scaled(&self, c: f64) -> HermitianMatrix {
        HermitianMatrix {
            entries: self.entries.map(|v| v * c),
        }
    }

    /// sum a_{i jbar} w_i conj(w_j)
    pub fn quadratic_form(&self, w: &[C64]) -> f64 {
        let n = self.n();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (self.entries[(i, j)] * w[i] * w[j].conj()).re;
            }
        }
        s
    }

    /// A / det(A)^{1/n}, together with det(A).
    pub fn det_normalized(&self) -> Result<(HermitianMatrix, f64)> {
        let d = self.det();
        let lmin = self.min_eigenvalue();
        if !(lmin > 0.0) || !(d > 0.0) {
            return Err(Error::DegenerateHessian {
                node: usize::MAX,
                min_eigenvalue: lmin,
            });
        }
        Ok((self.scaled(d.powf(-1.0 / self.n() as f64)), d))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        let n = self.n();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| [self.entries[(i, j)].re, self.entries[(i, j)].im])
                    .collect()
            })
            .collect()
    }
}

/// C-linear map of C^n, stored as a general complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianTransform {
    pub matrix: CMat,
}

impl HermitianTransform {
    pub fn identity(n: usize) -> Self {
        HermitianTransform {
            matrix: CMat::identity(n, n),
        }
    }

    pub fn from_matrix(m: CMat) -> Self {
        HermitianTransform { matrix: m }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        HermitianTransform {
            matrix: HermitianMatrix::diagonal(d).entries,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn det_abs(&self) -> f64 {
        self.matrix.determinant().norm()
    }

    pub fn op_norm(&self) -> f64 {
        op_norm(&self.matrix)
    }

    pub fn distance_to_identity(&self) -> f64 {
        let n = self.n();
        op_norm(&(&self.matrix - CMat::identity(n, n)))
    }

    pub fn inverse(&self) -> Result<HermitianTransform> {
        if self.det_abs() < 1e-300 {
            return Err(Error::SingularTransform);
        }
        self.matrix
            .clone()
            .try_inverse()
            .map(HermitianTransform::from_matrix)
            .ok_or(Error::SingularTransform)
    }

    /// self after other.
    pub fn compose(&self, other: &HermitianTransform) -> HermitianTransform {
        HermitianTransform {
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn apply(&self, w: &[C64]) -> Vec<C64> {
        let v = DVector::from_column_slice(w);
        (&self.matrix * v).iter().copied().collect()
    }

    /// Coefficients A with sum a_{i jbar} w_i conj(w_j) = |T^{-1} w|^2.
    pub fn ellipsoid_coefficients(&self) -> Result<HermitianMatrix> {
        let inv = self.inverse()?.matrix;
        let b = inv.adjoint() * inv;
        Ok(HermitianMatrix::from_matrix(&b.map(|c| c.conj())))
    }

    /// Real 2n x 2n matrix of the map acting on R^{2n}.
    pub fn real_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut r = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let t = self.matrix[(i, j)];
                r[(2 * i, 2 * j)] = t.re;
                r[(2 * i, 2 * j + 1)] = -t.im;
                r[(2 * i + 1, 2 * j)] = t.im;
                r[(2 * i + 1, 2 * j + 1)] = t.re;
            }
        }
        r
    }

    /// Inverse of [`HermitianTransform::to_flat`].
    pub fn from_flat(n: usize, v: &[f64]) -> Result<HermitianTransform> {
        if v.len() != 2 * n * n {
            return Err(Error::InvalidInput(format!("{} floats do not form a {n} x {n} complex matrix", v.len())));
        }
        Ok(HermitianTransform { matrix: CMat::from_fn(n, n, |i, j| C64::new(v[2 * (i * n + j)], v[2 * (i * n + j) + 1])) })
    }

    /// Row-major (re, im) pairs flattened to 2n^2 floats.
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.matrix[(i, j)].re);
                out.push(self.matrix[(i, j)].im);
            }
        }
        out
    }
}

pub fn op_norm(m: &CMat) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Real quadratic polynomial c + g.x + x^T H x / 2 on R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealQuadratic {
    pub c: f64,
    pub g: Vec<f64>,
    pub hess: Vec<f64>,
}

impl RealQuadratic {
    pub fn zero(d: usize) -> Self {
        RealQuadratic {
            c: 0.0,
            g: vec![0.0; d],
            hess: vec![0.0; d * d],
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = self.c;
        for a in 0..d {
            s += self.g[a] * x[a];
            let row = &self.hess[a * d..(a + 1) * d];
            let mut t = 0.0;
            for b in 0..d {
                t += row[b] * x[b];
            }
            s += 0.5 * x[a] * t;
        }
        s
    }

    /// q(x0 + M y) as a polynomial in y.
    pub fn substitute(&self, x0: &[f64], m: &DMatrix<f64>) -> RealQuadratic {
        let d = self.dim();
        let h = DMatrix::from_row_slice(d, d, &self.hess);
        let x = DVector::from_column_slice(x0);
        let grad_at = DVector::from_column_slice(&self.g) + &h * &x;
        let g = m.transpose() * grad_at;
        let hm = m.transpose() * &h * m;
        RealQuadratic {
            c: self.eval(x0),
            g: g.iter().copied().collect(),
            hess: hm.transpose().iter().copied().collect(),
        }
    }

    pub fn scaled(&self, s: f64, shift: f64) -> RealQuadratic {
        RealQuadratic {
            c: s * self.c + shift,
            g: self.g.iter().map(|v| v * s).collect(),
            hess: self.hess.iter().map(|v| v * s).collect(),
        }
    }
}
