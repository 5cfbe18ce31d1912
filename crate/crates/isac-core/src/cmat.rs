//! Complex Hermitian matrix utilities shared by the solver, the waveform
//! engine and the metrics.
//!
//! Hermitian matrices are mapped to real coordinate vectors through an
//! orthonormal basis of the Hermitian space (diagonal entries, then
//! `sqrt(2) * Re`, `sqrt(2) * Im` of each upper-triangular entry), so that
//! `Tr(A B) = svec(A) . svec(B)` for Hermitian `A`, `B`.

use crate::{CMatrix, CVector, Complex64};
use nalgebra::DVector;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Real coordinate dimension of the d x d Hermitian space.
pub fn herm_dim(d: usize) -> usize {
    d * d
}

/// Map a Hermitian matrix to its real coordinate vector (isometric svec).
///
/// Order: `d` diagonal entries, then for each column-major upper pair
/// `(i, j)`, `i < j`: `sqrt(2)*Re(X[i,j])`, `sqrt(2)*Im(X[i,j])`.
pub fn herm_to_vec(x: &CMatrix) -> DVector<f64> {
    let d = x.nrows();
    let mut v = DVector::zeros(herm_dim(d));
    for i in 0..d {
        v[i] = x[(i, i)].re;
    }
    let mut k = d;
    for j in 0..d {
        for i in 0..j {
            v[k] = SQRT2 * x[(i, j)].re;
            v[k + 1] = SQRT2 * x[(i, j)].im;
            k += 2;
        }
    }
    v
}

/// Inverse of [`herm_to_vec`].
pub fn vec_to_herm(v: &[f64], d: usize) -> CMatrix {
    assert_eq!(v.len(), herm_dim(d));
    let mut x = CMatrix::zeros(d, d);
    for i in 0..d {
        x[(i, i)] = Complex64::new(v[i], 0.0);
    }
    let mut k = d;
    for j in 0..d {
        for i in 0..j {
            let re = v[k] / SQRT2;
            let im = v[k + 1] / SQRT2;
            x[(i, j)] = Complex64::new(re, im);
            x[(j, i)] = Complex64::new(re, -im);
            k += 2;
        }
    }
    x
}

/// Force exact Hermitian symmetry: `(X + X^H) / 2`.
pub fn hermitize(x: &CMatrix) -> CMatrix {
    (x + x.adjoint()).scale(0.5)
}

/// `Re Tr(A B)` for general complex square matrices.
pub fn re_trace_prod(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let p = a[(i, k)] * b[(k, i)];
            acc += p.re;
        }
    }
    acc
}

/// `Tr(A B)` for general complex square matrices.
pub fn trace_prod(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Lower Cholesky factor of a Hermitian positive definite matrix, with a
/// strict positivity check on each pivot. (The generic complex Cholesky in
/// the linear-algebra backend takes complex square roots and so does not
/// reject indefinite Hermitian input.)
pub fn cholesky_pd(x: &CMatrix) -> Option<CMatrix> {
    let n = x.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = x[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = Complex64::new(dj, 0.0);
        for i in j + 1..n {
            let mut s = x[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Solve `L L^H x = b` given the lower Cholesky factor.
pub fn chol_solve_vec(l: &CMatrix, b: &CVector) -> CVector {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = l[(i, k)] * y[k];
            y[i] -= t;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = l[(k, i)].conj() * y[k];
            y[i] -= t;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solve `L L^H X = B` column by column.
pub fn chol_solve_mat(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let mut x = CMatrix::zeros(b.nrows(), b.ncols());
    for j in 0..b.ncols() {
        let col = CVector::from_iterator(b.nrows(), b.column(j).iter().cloned());
        x.set_column(j, &chol_solve_vec(l, &col));
    }
    x
}

/// `ln det(X)` for Hermitian positive definite `X`. `None` if not PD.
pub fn logdet_pd(x: &CMatrix) -> Option<f64> {
    let l = cholesky_pd(x)?;
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].re.ln();
    }
    Some(2.0 * acc)
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn inverse_pd(x: &CMatrix) -> Option<CMatrix> {
    let l = cholesky_pd(x)?;
    let inv = chol_solve_mat(&l, &CMatrix::identity(x.nrows(), x.nrows()));
    Some(hermitize(&inv))
}

/// Eigen-decomposition of a Hermitian matrix: `(eigenvalues, eigenvectors)`.
pub fn herm_eigen(x: &CMatrix) -> (DVector<f64>, CMatrix) {
    let se = nalgebra::SymmetricEigen::new(hermitize(x));
    (se.eigenvalues, se.eigenvectors)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(x: &CMatrix) -> f64 {
    let (vals, _) = herm_eigen(x);
    vals.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Hermitian PSD square root. Eigenvalues below 1e-12 of the largest are
/// treated as exact zeros so rank-deficient inputs keep their range.
pub fn psd_sqrt(x: &CMatrix) -> CMatrix {
    let (vals, vecs) = herm_eigen(x);
    let d = x.nrows();
    let floor = vals.iter().cloned().fold(0.0f64, f64::max) * 1e-12;
    let mut s = CMatrix::zeros(d, d);
    for i in 0..d {
        let v = if vals[i] > floor { vals[i] } else { 0.0 };
        s[(i, i)] = Complex64::new(v.sqrt(), 0.0);
    }
    &vecs * s * vecs.adjoint()
}

/// Moore-Penrose pseudo-inverse with a relative singular value cutoff.
pub fn pseudo_inverse(x: &CMatrix, rel_tol: f64) -> CMatrix {
    let svd = nalgebra::SVD::new(x.clone(), true, true);
    let cutoff = rel_tol * svd.singular_values.max();
    svd.pseudo_inverse(cutoff).expect("svd computed with u and v_t")
}

/// Frobenius norm of a complex matrix.
pub fn fro_norm(x: &CMatrix) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Outer product `a b^H`.
pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

/// Quadratic form `a^H X b`.
pub fn quad_form(a: &CVector, x: &CMatrix, b: &CVector) -> Complex64 {
    (a.adjoint() * x * b)[(0, 0)]
}

/// Real part of the `u`-th Hermitian basis coordinate of `M` (the gradient
/// extraction dual to [`herm_to_vec`]); equals `Tr(B_u M)` for Hermitian `M`.
pub fn herm_grad_coords(m: &CMatrix) -> DVector<f64> {
    herm_to_vec(&hermitize(m))
}

/// Real d^2 x d^2 matrix of the map `dX -> S dX S^H` in svec coordinates:
/// `K[u,v] = Re Tr(B_u S B_v S^H)`.
///
/// With `S = G^{-1}` (Hermitian) this is the Hessian of `-ln det` at `G`;
/// with `S = Hh G^{-1} Hp` it is the cross-block Hessian of
/// `-ln det(... + Hh X Hh^H + Hp Y Hp^H ...)`.
pub fn sym_kron(s: &CMatrix) -> nalgebra::DMatrix<f64> {
    let dl = s.nrows(); // row block dimension
    let dr = s.ncols(); // column block dimension
    let nl = herm_dim(dl);
    let nr = herm_dim(dr);
    let mut k = nalgebra::DMatrix::zeros(nl, nr);
    // For each right-basis element B_v, compute C_v = S B_v S^H and read off
    // its left-basis coordinates.
    let mut col = |v: usize, c: &CMatrix| {
        for i in 0..dl {
            k[(i, v)] = c[(i, i)].re;
        }
        let mut u = dl;
        for j in 0..dl {
            for i in 0..j {
                k[(u, v)] = SQRT2 * c[(i, j)].re;
                k[(u + 1, v)] = SQRT2 * c[(i, j)].im;
                u += 2;
            }
        }
    };
    // Diagonal basis elements: B_v = e_v e_v^T, C = s_v s_v^H.
    for v in 0..dr {
        let sv = s.column(v);
        let c = CMatrix::from_fn(dl, dl, |i, j| sv[i] * sv[j].conj());
        col(v, &c);
    }
    // Off-diagonal basis elements.
    let mut v = dr;
    for j in 0..dr {
        for i in 0..j {
            let si = s.column(i);
            let sj = s.column(j);
            // B_re = (E_ij + E_ji)/sqrt2 -> C = (s_i s_j^H + s_j s_i^H)/sqrt2
            let c_re = CMatrix::from_fn(dl, dl, |p, q| {
                (si[p] * sj[q].conj() + sj[p] * si[q].conj()) / SQRT2
            });
            col(v, &c_re);
            // B_im = i(E_ij - E_ji)/sqrt2 -> C = i(s_i s_j^H - s_j s_i^H)/sqrt2
            let c_im = CMatrix::from_fn(dl, dl, |p, q| {
                Complex64::i() * (si[p] * sj[q].conj() - sj[p] * si[q].conj()) / SQRT2
            });
            col(v + 1, &c_im);
            v += 2;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use rand::Rng;

    fn random_herm(rng: &mut impl Rng, d: usize) -> CMatrix {
        let m = CMatrix::from_fn(d, d, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        hermitize(&m)
    }

    fn random_psd(rng: &mut impl Rng, d: usize) -> CMatrix {
        let m = CMatrix::from_fn(d, d, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        &m * m.adjoint() + CMatrix::identity(d, d).scale(0.1)
    }

    #[test]
    fn svec_round_trip_is_isometric() {
        let mut rng = SeedRng::seed(7).rng();
        for d in 1..6 {
            let a = random_herm(&mut rng, d);
            let b = random_herm(&mut rng, d);
            let va = herm_to_vec(&a);
            let vb = herm_to_vec(&b);
            let back = vec_to_herm(va.as_slice(), d);
            assert!(fro_norm(&(&back - &a)) < 1e-12);
            let dot = va.dot(&vb);
            let tr = re_trace_prod(&a, &b);
            assert!((dot - tr).abs() < 1e-10, "d={d}: {dot} vs {tr}");
        }
    }

    #[test]
    fn logdet_matches_eigexpansion() {
        let mut rng = SeedRng::seed(8).rng();
        let x = random_psd(&mut rng, 5);
        let ld = logdet_pd(&x).unwrap();
        let (vals, _) = herm_eigen(&x);
        let ld_eig: f64 = vals.iter().map(|v| v.ln()).sum();
        assert!((ld - ld_eig).abs() < 1e-9);
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let mut x = CMatrix::identity(3, 3);
        x[(0, 0)] = Complex64::new(-1.0, 0.0);
        assert!(logdet_pd(&x).is_none());
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = SeedRng::seed(9).rng();
        let x = random_psd(&mut rng, 4);
        let s = psd_sqrt(&x);
        assert!(fro_norm(&(&s * &s - &x)) < 1e-9);
    }

    #[test]
    fn sym_kron_is_logdet_hessian() {
        // Finite differences of -ln det around a PD point.
        let mut rng = SeedRng::seed(10).rng();
        let d = 3;
        let x = random_psd(&mut rng, d);
        let xinv = inverse_pd(&x).unwrap();
        let k = sym_kron(&xinv);
        let n = herm_dim(d);
        let h = 1e-5;
        let f = |m: &CMatrix| -logdet_pd(m).unwrap();
        for u in 0..n {
            for v in 0..n {
                let mut eu = vec![0.0; n];
                eu[u] = 1.0;
                let mut ev = vec![0.0; n];
                ev[v] = 1.0;
                let bu = vec_to_herm(&eu, d);
                let bv = vec_to_herm(&ev, d);
                let fpp = f(&(&x + bu.scale(h) + bv.scale(h)));
                let fpm = f(&(&x + bu.scale(h) - bv.scale(h)));
                let fmp = f(&(&x - bu.scale(h) + bv.scale(h)));
                let fmm = f(&(&x - bu.scale(h) - bv.scale(h)));
                let fd = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                assert!(
                    (fd - k[(u, v)]).abs() < 5e-4 * (1.0 + k[(u, v)].abs()),
                    "({u},{v}): fd={fd} analytic={}",
                    k[(u, v)]
                );
            }
        }
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        let a = CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ])
        .normalize();
        let b = CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ])
        .normalize();
        let h = outer(&a, &b);
        let p = pseudo_inverse(&h, 1e-10);
        // H pinv(H) H = H
        assert!(fro_norm(&(&h * &p * &h - &h)) < 1e-10);
    }
}
