//! Dense linear algebra helpers: a pseudoinverse on faer's SVD and nalgebra's
//! symmetric eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Moore–Penrose pseudoinverse of an `m×k` matrix.
///
/// Singular values `s ≤ tol · s_max` are treated as zero, where `tol = rtol`
/// or, when `rtol == 0`, `eps · max(m, k)`.
pub fn pinv<T: Real>(a: &DMatrix<T>, rtol: T) -> Result<DMatrix<T>> {
    if rtol < T::zero() || !rtol.is_finite() {
        return invalid(format!("rtol must be finite and non-negative, got {rtol}"));
    }
    if let Some((idx, _)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        let (r, c) = (idx % a.nrows(), idx / a.nrows());
        return invalid(format!("non-finite entry at ({r}, {c})"));
    }
    let (m, k) = a.shape();
    if m == 0 || k == 0 {
        return Ok(DMatrix::zeros(k, m));
    }

    // The SVD runs in f64 through faer, whose bidiagonal solver stays accurate
    // on rank-deficient inputs.
    let af = faer::Mat::<f64>::from_fn(m, k, |i, j| a[(i, j)].as_f64());
    let svd = af
        .thin_svd()
        .map_err(|e| Error::Data(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();

    let s_max = (0..s.nrows()).fold(0.0f64, |acc, i| acc.max(s[i]));
    let rel = if rtol == T::zero() {
        T::EPS.as_f64() * m.max(k) as f64
    } else {
        rtol.as_f64()
    };
    let cutoff = rel * s_max;

    // P = V Σ⁺ Uᵀ over the retained singular triples.
    let kept: Vec<usize> = (0..s.nrows()).filter(|&i| s[i] > cutoff && s[i] > 0.0).collect();
    Ok(DMatrix::from_fn(k, m, |r, c| {
        let acc = kept.iter().fold(0.0f64, |acc, &i| acc + v[(r, i)] * u[(c, i)] / s[i]);
        T::lit(acc)
    }))
}

/// Frobenius-norm residuals of the four Moore–Penrose identities
/// `[‖APA − A‖, ‖PAP − P‖, ‖(AP)ᵀ − AP‖, ‖(PA)ᵀ − PA‖]`.
pub fn moore_penrose_residuals<T: Real>(a: &DMatrix<T>, p: &DMatrix<T>) -> [T; 4] {
    let ap = a * p;
    let pa = p * a;
    [
        (&ap * a - a).norm(),
        (&pa * p - p).norm(),
        (ap.transpose() - &ap).norm(),
        (pa.transpose() - &pa).norm(),
    ]
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector's largest-magnitude entry is made
/// positive so the basis does not depend on summation order upstream.
pub fn sym_eigen_desc<T: Real>(m: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return invalid(format!("expected a square matrix, got {}×{}", n, m.ncols()));
    }
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = sym
        .try_symmetric_eigen(T::EPS, 0)
        .ok_or_else(|| Error::Data("symmetric eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut lead = 0;
        for r in 1..n {
            if col[r].abs() > col[lead].abs() {
                lead = r;
            }
        }
        if col[lead] < T::zero() {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

/// `(1/n) Σᵢ (rᵢ − c)(rᵢ − c)ᵀ` over the rows of `rows`.
pub fn second_moment<T: Real>(rows: &DMatrix<T>, center: Option<&DVector<T>>) -> DMatrix<T> {
    let n = rows.nrows();
    let q = rows.ncols();
    if n == 0 {
        return DMatrix::zeros(q, q);
    }
    let centered = match center {
        Some(c) => {
            let mut x = rows.clone();
            for mut row in x.row_iter_mut() {
                row -= c.transpose();
            }
            x
        }
        None => rows.clone(),
    };
    centered.tr_mul(&centered) / T::count(n)
}

/// Column means of `rows`.
pub fn column_means<T: Real>(rows: &DMatrix<T>) -> DVector<T> {
    let n = rows.nrows().max(1);
    rows.row_sum().transpose() / T::count(n)
}
