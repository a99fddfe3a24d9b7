//! Dense least squares by Householder QR.
//!
//! Matrices are column-major. The factorisation works through columns in
//! order and sets aside any column whose component orthogonal to the
//! columns already accepted is negligible, so callers learn exactly which
//! columns are linearly dependent on earlier ones.

use crate::scalar::Scalar;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a matrix from columns of equal length.
    pub fn from_columns(rows: usize, columns: &[Vec<T>]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "column length mismatch");
            data.extend_from_slice(c);
        }
        Matrix {
            rows,
            cols: columns.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn column_mut(&mut self, c: usize) -> &mut [T] {
        let r = self.rows;
        &mut self.data[c * r..(c + 1) * r]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[c * self.rows + r] = v;
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![T::zero(); self.rows];
        for (c, &xc) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.column(c)) {
                *o = *o + a * xc;
            }
        }
        out
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Scalar>(a: &[T]) -> T {
    // Scaled to avoid overflow on large columns.
    let scale = a.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let s: T = a.iter().map(|&x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Default relative threshold below which a column counts as dependent.
pub fn default_rank_tolerance<T: Scalar>() -> T {
    T::epsilon().sqrt() * T::lit(0.1)
}

/// Householder QR of the independent columns of a matrix.
#[derive(Debug, Clone)]
pub struct Qr<T> {
    rows: usize,
    /// Householder vectors, one per accepted column, each of length `rows`.
    reflectors: Vec<Vec<T>>,
    betas: Vec<T>,
    /// Upper-triangular factor, `r[i][k]` for accepted columns `i <= k`.
    r: Vec<Vec<T>>,
    kept: Vec<usize>,
    dependent: Vec<usize>,
}

impl<T: Scalar> Qr<T> {
    /// Factors `a`, accepting columns greedily left to right.
    ///
    /// A column is dependent when the norm of its residual after projection
    /// on the accepted columns is at most `tol` times its own norm. All-zero
    /// columns are always dependent.
    pub fn factor(a: &Matrix<T>, tol: T) -> Self {
        let n = a.rows;
        let mut work: Vec<Vec<T>> = (0..a.cols).map(|c| a.column(c).to_vec()).collect();
        let original: Vec<T> = work.iter().map(|c| norm(c)).collect();
        let mut qr = Qr {
            rows: n,
            reflectors: Vec::new(),
            betas: Vec::new(),
            r: Vec::new(),
            kept: Vec::new(),
            dependent: Vec::new(),
        };
        for c in 0..a.cols {
            let rank = qr.kept.len();
            let tail = if rank < n { norm(&work[c][rank..]) } else { T::zero() };
            if original[c] == T::zero() || tail <= tol * original[c] {
                qr.dependent.push(c);
                continue;
            }
            let col = &work[c];
            let alpha = if col[rank] >= T::zero() { -tail } else { tail };
            let mut v = vec![T::zero(); n];
            v[rank] = col[rank] - alpha;
            v[rank + 1..].copy_from_slice(&col[rank + 1..]);
            let vnorm2 = dot(&v[rank..], &v[rank..]);
            let beta = if vnorm2 == T::zero() { T::zero() } else { T::lit(2.0) / vnorm2 };
            for w in work.iter_mut().skip(c) {
                let s = beta * dot(&v[rank..], &w[rank..]);
                for (wi, &vi) in w[rank..].iter_mut().zip(&v[rank..]) {
                    *wi = *wi - s * vi;
                }
            }
            qr.reflectors.push(v);
            qr.betas.push(beta);
            qr.kept.push(c);
            qr.r.push(Vec::new());
        }
        // Collect R for the accepted columns from the transformed work columns.
        let rank = qr.kept.len();
        for (k, &c) in qr.kept.iter().enumerate() {
            let col: Vec<T> = (0..=k).map(|i| work[c][i]).collect();
            qr.r[k] = col;
        }
        debug_assert_eq!(qr.r.len(), rank);
        qr
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Indices of the accepted columns.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Indices of the columns set aside as dependent.
    pub fn dependent(&self) -> &[usize] {
        &self.dependent
    }

    /// `b ← Qᵀ b`.
    pub fn apply_qt(&self, b: &mut [T]) {
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate() {
            let s = beta * dot(&v[k..], &b[k..]);
            for (bi, &vi) in b[k..].iter_mut().zip(&v[k..]) {
                *bi = *bi - s * vi;
            }
        }
    }

    /// `b ← Q b`.
    pub fn apply_q(&self, b: &mut [T]) {
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate().rev() {
            let s = beta * dot(&v[k..], &b[k..]);
            for (bi, &vi) in b[k..].iter_mut().zip(&v[k..]) {
                *bi = *bi - s * vi;
            }
        }
    }

    /// Least-squares coefficients on the accepted columns, in `kept` order.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.rows);
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let k = self.rank();
        let mut x = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut s = qtb[i];
            for j in i + 1..k {
                s = s - self.r[j][i] * x[j];
            }
            x[i] = s / self.r[i][i];
        }
        x
    }

    /// Orthogonal projection of `b` on the span of the accepted columns.
    pub fn project(&self, b: &[T]) -> Vec<T> {
        let mut y = b.to_vec();
        self.apply_qt(&mut y);
        for yi in y.iter_mut().skip(self.rank()) {
            *yi = T::zero();
        }
        self.apply_q(&mut y);
        y
    }

    /// `(RᵀR)⁻¹`, the inverse Gram matrix of the accepted columns.
    pub fn inverse_gram(&self) -> Matrix<T> {
        let k = self.rank();
        // R⁻¹ by back substitution, column by column.
        let mut rinv = Matrix::zeros(k, k);
        for c in 0..k {
            for i in (0..=c).rev() {
                let mut s = if i == c { T::one() } else { T::zero() };
                for j in i + 1..=c {
                    s = s - self.r[j][i] * rinv.get(j, c);
                }
                rinv.set(i, c, s / self.r[i][i]);
            }
        }
        let mut out = Matrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let s = (b..k).fold(T::zero(), |acc, j| acc + rinv.get(a, j) * rinv.get(b, j));
                out.set(a, b, s);
                out.set(b, a, s);
            }
        }
        out
    }
}

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct LeastSquares<T> {
    pub coefficients: Vec<T>,
    pub residuals: Vec<T>,
    /// `(XᵀX)⁻¹`.
    pub inverse_gram: Matrix<T>,
}

/// Solves `min ‖y − Xβ‖²`. On rank deficiency returns the dependent column indices.
pub fn least_squares<T: Scalar>(x: &Matrix<T>, y: &[T], tol: T) -> std::result::Result<LeastSquares<T>, Vec<usize>> {
    let qr = Qr::factor(x, tol);
    if !qr.dependent().is_empty() {
        return Err(qr.dependent().to_vec());
    }
    let coefficients = qr.solve(y);
    let fitted = x.mul_vec(&coefficients);
    let residuals = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    Ok(LeastSquares {
        coefficients,
        residuals,
        inverse_gram: qr.inverse_gram(),
    })
}
