//! Complex single-shift QZ for the generalized eigenvalues of S x = μ T x.
//!
//! Works on complex copies of real input, so complex-conjugate pairs need no special
//! handling here. Only eigenvalues are produced; vectors come from inverse iteration.

use crate::error::{Error, Result};
use crate::scalar::{cabs, cconj, cdiv, cr, csqrt, czero, lit, Scalar, C};
use nalgebra::DMatrix;

/// Generalized eigenvalues as (α, β) pairs; μ = α/β, β = 0 for infinite ones.
#[derive(Debug, Clone)]
pub struct GenEig<T: Scalar> {
    pub alpha: Vec<C<T>>,
    pub beta: Vec<C<T>>,
}

type M<T> = DMatrix<C<T>>;

// Left rotation on rows (i, k) that zeroes x2 in (x1, x2): W = [[x̄1, x̄2], [−x2, x1]] / r.
fn row_w<T: Scalar>(x1: C<T>, x2: C<T>) -> Option<[C<T>; 4]> {
    let r = cabs(x1).hypot(cabs(x2));
    if r == T::zero() || cabs(x2) == T::zero() {
        return None;
    }
    Some([cconj(x1) / r, cconj(x2) / r, -x2 / r, x1 / r])
}

fn row_apply<T: Scalar>(m: &mut M<T>, i: usize, k: usize, w: &[C<T>; 4]) {
    for j in 0..m.ncols() {
        let a = m[(i, j)];
        let b = m[(k, j)];
        m[(i, j)] = w[0] * a + w[1] * b;
        m[(k, j)] = w[2] * a + w[3] * b;
    }
}

// Right rotation on columns (p, q) that zeroes the p entry of the row (a0, b0).
fn col_w<T: Scalar>(a0: C<T>, b0: C<T>) -> Option<[C<T>; 4]> {
    let r = cabs(a0).hypot(cabs(b0));
    if r == T::zero() || cabs(a0) == T::zero() {
        return None;
    }
    Some([b0 / r, cconj(a0) / r, -a0 / r, cconj(b0) / r])
}

fn col_apply<T: Scalar>(m: &mut M<T>, p: usize, q: usize, w: &[C<T>; 4]) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = a * w[0] + b * w[2];
        m[(i, q)] = a * w[1] + b * w[3];
    }
}

fn rows<T: Scalar>(s: &mut M<T>, t: &mut M<T>, i: usize, k: usize, w: Option<[C<T>; 4]>) {
    if let Some(w) = w {
        row_apply(s, i, k, &w);
        row_apply(t, i, k, &w);
    }
}

fn cols<T: Scalar>(s: &mut M<T>, t: &mut M<T>, p: usize, q: usize, w: Option<[C<T>; 4]>) {
    if let Some(w) = w {
        col_apply(s, p, q, &w);
        col_apply(t, p, q, &w);
    }
}

fn fro<T: Scalar>(m: &M<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.hypot(cabs(*z)))
}

/// Reduces (S, T) to Hessenberg-triangular form in place.
pub fn hessenberg_triangular<T: Scalar>(s: &mut M<T>, t: &mut M<T>) {
    let n = s.nrows();
    for j in 0..n.saturating_sub(1) {
        for i in (j + 1..n).rev() {
            let w = row_w(t[(i - 1, j)], t[(i, j)]);
            rows(s, t, i - 1, i, w);
            t[(i, j)] = czero();
        }
    }
    for j in 0..n.saturating_sub(2) {
        for i in (j + 2..n).rev() {
            let w = row_w(s[(i - 1, j)], s[(i, j)]);
            rows(s, t, i - 1, i, w);
            s[(i, j)] = czero();
            let w = col_w(t[(i, i - 1)], t[(i, i)]);
            cols(s, t, i - 1, i, w);
            t[(i, i - 1)] = czero();
        }
    }
}

// Moves a zero at T[k][k] to the bottom of the window and deflates it there.
fn chase_infinite<T: Scalar>(s: &mut M<T>, t: &mut M<T>, k: usize, lo: usize, hi: usize) {
    for j in k..hi {
        let w = row_w(t[(j, j + 1)], t[(j + 1, j + 1)]);
        rows(s, t, j, j + 1, w);
        t[(j + 1, j + 1)] = czero();
        if j > lo {
            let w = col_w(s[(j + 1, j - 1)], s[(j + 1, j)]);
            cols(s, t, j - 1, j, w);
            s[(j + 1, j - 1)] = czero();
        }
    }
    let w = col_w(s[(hi, hi - 1)], s[(hi, hi)]);
    cols(s, t, hi - 1, hi, w);
    s[(hi, hi - 1)] = czero();
}

fn wilkinson<T: Scalar>(s: &M<T>, t: &M<T>, hi: usize) -> C<T> {
    let (s11, s12, s21, s22) = (s[(hi - 1, hi - 1)], s[(hi - 1, hi)], s[(hi, hi - 1)], s[(hi, hi)]);
    let (t11, t12, t22) = (t[(hi - 1, hi - 1)], t[(hi - 1, hi)], t[(hi, hi)]);
    let a = t11 * t22;
    let b = -(s11 * t22 + s22 * t11 - s21 * t12);
    let c = s11 * s22 - s21 * s12;
    let target = cdiv(s22, t22);
    if cabs(a) == T::zero() {
        return target;
    }
    let sq = csqrt(b * b - a * c * lit::<T>(4.0));
    let sgn = if (cconj(b) * sq).re >= T::zero() { T::one() } else { -T::one() };
    let q = -(b + sq * sgn) * lit::<T>(0.5);
    if cabs(q) == T::zero() {
        return target;
    }
    let mu1 = cdiv(q, a);
    let mu2 = cdiv(c, q);
    if cabs(mu1 - target) <= cabs(mu2 - target) {
        mu1
    } else {
        mu2
    }
}

/// Generalized eigenvalues of the real pencil S − μT.
pub fn qz_eigenvalues<T: Scalar>(s_in: &DMatrix<T>, t_in: &DMatrix<T>) -> Result<GenEig<T>> {
    let n = s_in.nrows();
    assert_eq!(s_in.shape(), (n, n));
    assert_eq!(t_in.shape(), (n, n));
    let mut s: M<T> = s_in.map(cr);
    let mut t: M<T> = t_in.map(cr);
    if n == 0 {
        return Ok(GenEig { alpha: vec![], beta: vec![] });
    }
    hessenberg_triangular(&mut s, &mut t);
    let eps = T::eps();
    let norm_s = fro(&s).max(lit::<T>(1e-300).max(T::eps() * T::eps()));
    let norm_t = fro(&t).max(lit::<T>(1e-300).max(T::eps() * T::eps()));

    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    let budget = 60 * n.max(4);
    while hi > 0 {
        // locate the active window [lo, hi]
        let mut lo = 0;
        for k in (1..=hi).rev() {
            let scale = cabs(s[(k - 1, k - 1)]) + cabs(s[(k, k)]);
            let scale = if scale == T::zero() { norm_s } else { scale };
            if cabs(s[(k, k - 1)]) <= eps * scale {
                s[(k, k - 1)] = czero();
                lo = k;
                break;
            }
        }
        if lo == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        if let Some(k) = (lo..=hi).find(|&k| cabs(t[(k, k)]) <= eps * norm_t) {
            t[(k, k)] = czero();
            chase_infinite(&mut s, &mut t, k, lo, hi);
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > budget {
            return Err(Error::NoConvergence);
        }
        let mu = if iter % 11 == 0 {
            // exceptional shift
            let d = cabs(s[(hi, hi - 1)]) / cabs(t[(hi, hi)]).max(eps);
            cdiv(s[(hi, hi)], t[(hi, hi)]) + C::<T>::new(d * lit(0.75), d * lit(0.4375))
        } else {
            wilkinson(&s, &t, hi)
        };
        let x = s[(lo, lo)] - mu * t[(lo, lo)];
        let y = s[(lo + 1, lo)];
        let w = row_w(x, y);
        rows(&mut s, &mut t, lo, lo + 1, w);
        for k in lo..hi {
            let w = col_w(t[(k + 1, k)], t[(k + 1, k + 1)]);
            cols(&mut s, &mut t, k, k + 1, w);
            t[(k + 1, k)] = czero();
            if k + 2 <= hi {
                let w = row_w(s[(k + 1, k)], s[(k + 2, k)]);
                rows(&mut s, &mut t, k + 1, k + 2, w);
                s[(k + 2, k)] = czero();
            }
        }
    }
    Ok(GenEig { alpha: (0..n).map(|k| s[(k, k)]).collect(), beta: (0..n).map(|k| t[(k, k)]).collect() })
}
