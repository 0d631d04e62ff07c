//! Dense linear algebra: exact (generic over the scalar) and floating point.

use crate::scalar::{ExactField, ExactRing};

/// Dense matrix over an exact scalar.
#[derive(Clone, PartialEq, Debug)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<T>,
}

impl<T: ExactRing> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Mat<T> {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat<T> {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Mat<T> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        assert!(rows.iter().all(|x| x.len() == c));
        Mat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, rhs.rows);
        let mut out: Mat<T> = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let b = &rhs[(k, j)];
                    if b.is_zero() {
                        continue;
                    }
                    out[(i, j)] = out[(i, j)].clone() + a.clone() * b.clone();
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&rhs.data) {
            *a = a.clone() + b.clone();
        }
        out
    }

    pub fn neg(&self) -> Mat<T> {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a = -a.clone();
        }
        out
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].clone();
            }
        }
        out
    }

    pub fn map<U: ExactRing, F: Fn(&T) -> U>(&self, f: F) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Rank by fraction-free (Bareiss) elimination, pivoting on entries of
    /// smallest size. Exact in any integral domain with exact division.
    pub fn rank_bareiss(&self) -> usize {
        let mut m = self.clone();
        let mut prev = T::one();
        let mut rank = 0;
        let mut row = 0;
        let mut used_cols = vec![false; m.cols];
        while row < m.rows {
            // Smallest nonzero pivot among remaining rows/cols.
            let mut best: Option<(usize, usize, usize)> = None;
            for i in row..m.rows {
                for j in 0..m.cols {
                    if used_cols[j] || m[(i, j)].is_zero() {
                        continue;
                    }
                    let s = m[(i, j)].size();
                    if best.map(|(_, _, bs)| s < bs).unwrap_or(true) {
                        best = Some((i, j, s));
                    }
                }
            }
            let (pi, pj, _) = match best {
                Some(b) => b,
                None => break,
            };
            m.swap_rows(row, pi);
            used_cols[pj] = true;
            let pivot = m[(row, pj)].clone();
            for i in (row + 1)..m.rows {
                for j in 0..m.cols {
                    if j == pj {
                        continue;
                    }
                    let num = m[(i, j)].clone() * pivot.clone() - m[(i, pj)].clone() * m[(row, j)].clone();
                    m[(i, j)] = num
                        .div_exact(&prev)
                        .expect("fraction-free elimination: inexact division");
                }
                m[(i, pj)] = T::zero();
            }
            prev = pivot;
            row += 1;
            rank += 1;
        }
        rank
    }

    /// Determinant by fraction-free elimination (square matrices).
    pub fn det_bareiss(&self) -> T {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return T::one();
        }
        let mut m = self.clone();
        let mut prev = T::one();
        let mut sign_flip = false;
        for k in 0..n - 1 {
            if m[(k, k)].is_zero() {
                // Find a row below with the smallest nonzero entry in col k.
                let mut best: Option<(usize, usize)> = None;
                for i in (k + 1)..n {
                    if !m[(i, k)].is_zero() {
                        let s = m[(i, k)].size();
                        if best.map(|(_, bs)| s < bs).unwrap_or(true) {
                            best = Some((i, s));
                        }
                    }
                }
                match best {
                    None => return T::zero(),
                    Some((i, _)) => {
                        m.swap_rows(k, i);
                        sign_flip = !sign_flip;
                    }
                }
            }
            for i in (k + 1)..n {
                for j in (k + 1)..n {
                    let num = m[(i, j)].clone() * m[(k, k)].clone() - m[(i, k)].clone() * m[(k, j)].clone();
                    m[(i, j)] = num
                        .div_exact(&prev)
                        .expect("fraction-free elimination: inexact division");
                }
                m[(i, k)] = T::zero();
            }
            prev = m[(k, k)].clone();
        }
        let d = m[(n - 1, n - 1)].clone();
        if sign_flip {
            -d
        } else {
            d
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl<T: ExactField> Mat<T> {
    /// Reduced row echelon form; returns pivot columns.
    pub fn rref(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            if row >= self.rows {
                break;
            }
            // Smallest nonzero entry in this column as pivot.
            let mut best: Option<(usize, usize)> = None;
            for i in row..self.rows {
                if !self[(i, col)].is_zero() {
                    let s = self[(i, col)].size();
                    if best.map(|(_, bs)| s < bs).unwrap_or(true) {
                        best = Some((i, s));
                    }
                }
            }
            let pi = match best {
                Some((i, _)) => i,
                None => continue,
            };
            self.swap_rows(row, pi);
            let inv = self[(row, col)].inv();
            for j in col..self.cols {
                self[(row, j)] = self[(row, j)].clone() * inv.clone();
            }
            for i in 0..self.rows {
                if i != row && !self[(i, col)].is_zero() {
                    let f = self[(i, col)].clone();
                    for j in col..self.cols {
                        let v = self[(i, j)].clone() - f.clone() * self[(row, j)].clone();
                        self[(i, j)] = v;
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        pivots
    }

    /// Basis of the right nullspace.
    pub fn nullspace(&self) -> Vec<Vec<T>> {
        let mut m = self.clone();
        let pivots = m.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        let mut basis = Vec::new();
        for &f in &free {
            let mut v = vec![T::zero(); self.cols];
            v[f] = T::one();
            for (r, &p) in pivots.iter().enumerate() {
                v[p] = -m[(r, f)].clone();
            }
            basis.push(v);
        }
        basis
    }

    /// Solve `self * x = b`; `None` if inconsistent or rank-deficient answers
    /// are needed (returns one solution when the system is consistent).
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        assert_eq!(self.rows, b.len());
        let mut aug = Mat::zeros(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug[(i, j)] = self[(i, j)].clone();
            }
            aug[(i, self.cols)] = b[i].clone();
        }
        let pivots = aug.rref();
        if pivots.contains(&self.cols) {
            return None; // inconsistent
        }
        let mut x = vec![T::zero(); self.cols];
        for (r, &p) in pivots.iter().enumerate() {
            x[p] = aug[(r, self.cols)].clone();
        }
        Some(x)
    }

    pub fn rank_field(&self) -> usize {
        let mut m = self.clone();
        m.rref().len()
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Floating-point dense matrices.
// ---------------------------------------------------------------------------

pub use num_complex::Complex64 as C64;

/// Minimal dense f64 matrix with the decompositions the engine needs.
#[derive(Clone, Debug)]
pub struct MatF {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatF {
    pub fn zeros(rows: usize, cols: usize) -> MatF {
        MatF {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> MatF {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        MatF {
            rows: r,
            cols: c,
            data: rows.iter().flat_map(|x| x.iter().copied()).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> MatF {
        let mut out = MatF::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &MatF) -> MatF {
        assert_eq!(self.cols, rhs.rows);
        let mut out = MatF::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    /// Singular values by one-sided Jacobi on A (descending order).
    pub fn singular_values(&self) -> Vec<f64> {
        // Work on the thinner side.
        let a = if self.rows >= self.cols {
            self.clone()
        } else {
            self.transpose()
        };
        let m = a.rows;
        let n = a.cols;
        let mut u: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..m).map(|i| a.get(i, j)).collect())
            .collect();
        let eps = 1e-15;
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..m {
                        app += u[p][i] * u[p][i];
                        aqq += u[q][i] * u[q][i];
                        apq += u[p][i] * u[q][i];
                    }
                    off = off.max(apq.abs() / (app * aqq).sqrt().max(1e-300));
                    if apq.abs() <= eps * (app * aqq).sqrt() {
                        continue;
                    }
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let up = u[p][i];
                        let uq = u[q][i];
                        u[p][i] = c * up - s * uq;
                        u[q][i] = s * up + c * uq;
                    }
                }
            }
            if off < 1e-14 {
                break;
            }
        }
        let mut sv: Vec<f64> = u
            .iter()
            .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv
    }

    /// Numeric rank with an absolute singular-value threshold.
    pub fn rank_with_threshold(&self, threshold: f64) -> usize {
        self.singular_values()
            .iter()
            .filter(|&&s| s > threshold)
            .count()
    }

    /// Solve the least-squares problem min |Ax - b| via normal equations with
    /// Tikhonov fudge for rank deficiency.
    pub fn lstsq(&self, b: &[f64], damping: f64) -> Vec<f64> {
        let at = self.transpose();
        let mut ata = at.matmul(self);
        for i in 0..ata.rows {
            let v = ata.get(i, i) + damping;
            ata.set(i, i, v);
        }
        let mut atb = vec![0.0; self.cols];
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += self.get(i, j) * b[i];
            }
            atb[j] = s;
        }
        ata.solve_square(&atb)
            .unwrap_or_else(|| vec![0.0; self.cols])
    }

    /// Gaussian elimination with partial pivoting for square systems.
    pub fn solve_square(&self, b: &[f64]) -> Option<Vec<f64>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, b.len());
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x: Vec<f64> = b.to_vec();
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].abs();
            for i in (k + 1)..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                x.swap(k, piv);
            }
            let d = a[k * n + k];
            for i in (k + 1)..n {
                let f = a[i * n + k] / d;
                if f == 0.0 {
                    continue;
                }
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in (k + 1)..n {
                s -= a[k * n + j] * x[j];
            }
            x[k] = s / a[k * n + k];
        }
        Some(x)
    }

    /// Orthonormal basis of the right nullspace (numeric), absolute
    /// singular-value threshold.
    pub fn nullspace_basis(&self, threshold: f64) -> Vec<Vec<f64>> {
        // Row space projector via the transpose's column space.
        let at = self.transpose();
        let p_row = at.column_projector_with_threshold(threshold);
        let n = self.cols;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for j in 0..n {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            // v := (I - P_row) v, then orthogonalize against found basis.
            let mut w = vec![0.0; n];
            for i in 0..n {
                let mut s = v[i];
                for k in 0..n {
                    s -= p_row.get(i, k) * v[k];
                }
                w[i] = s;
            }
            for b in &basis {
                let d: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in w.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
            let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for x in &mut w {
                    *x /= norm;
                }
                basis.push(w);
            }
        }
        basis
    }

    /// Projector onto the column span, dropping directions with column norm
    /// below `threshold` after orthogonalization.
    pub fn column_projector_with_threshold(&self, threshold: f64) -> MatF {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for j in 0..self.cols {
            let mut v: Vec<f64> = (0..self.rows).map(|i| self.get(i, j)).collect();
            // Re-orthogonalize twice for stability.
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > threshold {
                for x in &mut v {
                    *x /= norm;
                }
                basis.push(v);
            }
        }
        let mut p = MatF::zeros(self.rows, self.rows);
        for b in &basis {
            for i in 0..self.rows {
                for j in 0..self.rows {
                    p.data[i * self.rows + j] += b[i] * b[j];
                }
            }
        }
        p
    }

    /// Orthogonal projector onto the column span (via Gram-Schmidt).
    pub fn column_projector(&self) -> MatF {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for j in 0..self.cols {
            let mut v: Vec<f64> = (0..self.rows).map(|i| self.get(i, j)).collect();
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for x in &mut v {
                    *x /= norm;
                }
                basis.push(v);
            }
        }
        let mut p = MatF::zeros(self.rows, self.rows);
        for b in &basis {
            for i in 0..self.rows {
                for j in 0..self.rows {
                    p.data[i * self.rows + j] += b[i] * b[j];
                }
            }
        }
        p
    }

    pub fn frobenius_distance(&self, other: &MatF) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Dense complex matrix (small sizes only).
#[derive(Clone, Debug)]
pub struct MatC {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl MatC {
    pub fn zeros(rows: usize, cols: usize) -> MatC {
        MatC {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> MatC {
        let mut m = MatC::zeros(n, n);
        for i in 0..n {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matmul(&self, rhs: &MatC) -> MatC {
        assert_eq!(self.cols, rhs.rows);
        let mut out = MatC::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out.get(i, j) + a * rhs.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    /// Inverse by Gauss-Jordan with partial pivoting.
    pub fn inverse(&self) -> Option<MatC> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = MatC::identity(n).data;
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].norm();
            for i in (k + 1)..n {
                let v = a[i * n + k].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best < 1e-300 {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                    inv.swap(k * n + j, piv * n + j);
                }
            }
            let d = a[k * n + k];
            for j in 0..n {
                a[k * n + j] /= d;
                inv[k * n + j] /= d;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let f = a[i * n + k];
                if f.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let av = a[k * n + j];
                    let iv = inv[k * n + j];
                    a[i * n + j] -= f * av;
                    inv[i * n + j] -= f * iv;
                }
            }
        }
        Some(MatC {
            rows: n,
            cols: n,
            data: inv,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::FromPrimitive;

    fn r(n: i64) -> BigRational {
        BigRational::from_i64(n).unwrap()
    }

    #[test]
    fn rank_and_det_exact() {
        let m = Mat::from_rows(vec![
            vec![r(1), r(2), r(3)],
            vec![r(2), r(4), r(6)],
            vec![r(0), r(1), r(1)],
        ]);
        assert_eq!(m.rank_bareiss(), 2);
        assert_eq!(m.rank_field(), 2);
        assert!(num_traits::Zero::is_zero(&m.det_bareiss()));

        let m2 = Mat::from_rows(vec![vec![r(2), r(1)], vec![r(1), r(1)]]);
        assert_eq!(m2.det_bareiss(), r(1));
    }

    #[test]
    fn nullspace_exact() {
        let m = Mat::from_rows(vec![vec![r(1), r(2), r(3)], vec![r(0), r(1), r(1)]]);
        let ns = m.nullspace();
        assert_eq!(ns.len(), 1);
        for row in 0..2 {
            let mut s = r(0);
            for j in 0..3 {
                s += m[(row, j)].clone() * ns[0][j].clone();
            }
            assert!(num_traits::Zero::is_zero(&s));
        }
    }

    #[test]
    fn svd_rank() {
        let m = MatF::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1e-12, 0.0],
            vec![0.0, 0.0, 2.0],
        ]);
        assert_eq!(m.rank_with_threshold(1e-8), 2);
        let sv = m.singular_values();
        assert!((sv[0] - 2.0).abs() < 1e-12);
        assert!((sv[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complex_inverse() {
        let mut m = MatC::zeros(2, 2);
        m.set(0, 0, C64::new(1.0, 1.0));
        m.set(0, 1, C64::new(0.0, 2.0));
        m.set(1, 0, C64::new(-1.0, 0.0));
        m.set(1, 1, C64::new(3.0, -1.0));
        let inv = m.inverse().unwrap();
        let p = m.matmul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p.get(i, j) - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }
}
