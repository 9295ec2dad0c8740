//! Finite eigentriples of the state pencil λ𝒜 + ℬ.
//!
//! Eigenvalues come from QZ on the reduced pencil; vectors from inverse iteration on
//! the same pencil, expanded to the full state afterwards.

use crate::error::{Error, Result};
use crate::grid::{ReducedPencil, StatePencil};
use crate::qz::qz_eigenvalues;
use crate::scalar::{cabs, cconj, cdiv, cr, czero, lit, Scalar, C};
use nalgebra::{DMatrix, DVector};
use std::cmp::Ordering;

pub type CVec<T> = DVector<C<T>>;
pub type CMat<T> = DMatrix<C<T>>;

/// Finite eigenvalues with bi-orthonormal right/left vectors.
///
/// Vectors are stored in reduced coordinates z_r = [δ; θ; ω]. The left vector y_r
/// pairs with the reduced equations [first block; generator rows of the second block].
#[derive(Debug, Clone)]
pub struct EigenSolution<T: Scalar> {
    pub ng: usize,
    pub nl: usize,
    pub lambda: Vec<C<T>>,
    pub zr: Vec<CVec<T>>,
    pub yr: Vec<CVec<T>>,
    /// Eigenvalues discarded as infinite.
    pub n_infinite: usize,
    /// max |y_jᵀ𝒜 z_l − δ_jl|
    pub certificate: T,
}

impl<T: Scalar> EigenSolution<T> {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
    pub fn n(&self) -> usize {
        self.ng + self.nl
    }

    /// Full right vector [u; λu].
    pub fn z(&self, j: usize) -> CVec<T> {
        expand_z(&self.zr[j], self.lambda[j], self.ng, self.nl)
    }

    /// Full left vector [b; λb].
    pub fn y(&self, j: usize) -> CVec<T> {
        let n = self.n();
        let l = self.lambda[j];
        let b = self.yr[j].rows(0, n).into_owned();
        let mut y = CVec::zeros(2 * n);
        for i in 0..n {
            y[i] = b[i];
            y[n + i] = l * b[i];
        }
        y
    }

    /// Largest real part (the stability abscissa).
    pub fn abscissa(&self) -> T {
        self.lambda.iter().map(|l| l.re).fold(T::min_value().unwrap(), |a, b| a.max(b))
    }

    /// y_jᵀ p for a full-length vector p.
    pub fn project(&self, j: usize, p: &CVec<T>) -> C<T> {
        dotu(&self.y(j), p)
    }

    /// (s𝒜 + ℬ)⁻¹ p through the spectral expansion Σ z_j y_jᵀp / (s − λ_j).
    ///
    /// Valid for p supported on the dynamic rows (the load rows of the second block
    /// carry no equation).
    pub fn transfer_apply(&self, s: C<T>, p: &CVec<T>) -> Result<CVec<T>> {
        let mut out = CVec::zeros(2 * self.n());
        for j in 0..self.len() {
            let d = s - self.lambda[j];
            if cabs(d) < lit(1e-9) {
                return Err(Error::Pole(format!("s = {} coincides with eigenvalue {j}", s)));
            }
            let c = cdiv(self.project(j, p), d);
            out += self.z(j) * c;
        }
        Ok(out)
    }
}

/// Unconjugated dot product xᵀy.
pub fn dotu<T: Scalar>(x: &CVec<T>, y: &CVec<T>) -> C<T> {
    x.iter().zip(y.iter()).fold(czero(), |a, (p, q)| a + *p * *q)
}

/// [δ; θ; ω] → [δ; θ; ω; λθ].
pub fn expand_z<T: Scalar>(zr: &CVec<T>, lambda: C<T>, ng: usize, nl: usize) -> CVec<T> {
    let n = ng + nl;
    let mut z = CVec::zeros(2 * n);
    for i in 0..n + ng {
        z[i] = zr[i];
    }
    for l in 0..nl {
        z[n + ng + l] = lambda * zr[ng + l];
    }
    z
}

fn to_c<T: Scalar>(m: &DMatrix<T>) -> CMat<T> {
    m.map(cr)
}

fn fro<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, x| a.hypot(*x))
}

fn bil<T: Scalar>(y: &CVec<T>, m: &CMat<T>, z: &CVec<T>) -> C<T> {
    dotu(y, &(m * z))
}

fn cnorm<T: Scalar>(v: &CVec<T>) -> T {
    v.iter().fold(T::zero(), |a, x| a.hypot(cabs(*x)))
}

fn infinite_cut<T: Scalar>() -> T {
    lit::<T>(1e-10).max(T::eps() * lit(100.0))
}

fn cert_tol<T: Scalar>() -> T {
    lit::<T>(1e-8).max(T::eps() * lit(1e4))
}

fn gap_tol<T: Scalar>() -> T {
    lit::<T>(1e-7).max(T::eps().sqrt() * lit(1e-2))
}

fn order<T: Scalar>(a: &C<T>, b: &C<T>) -> Ordering {
    b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal).then(a.im.partial_cmp(&b.im).unwrap_or(Ordering::Equal))
}

/// Finite eigenvalues of a reduced pencil, sorted by real part descending.
pub fn finite_eigenvalues<T: Scalar>(p: &ReducedPencil<T>) -> Result<(Vec<C<T>>, usize)> {
    let na = fro(&p.a);
    let nb = fro(&p.b);
    let e = qz_eigenvalues(&(-&p.b), &p.a)?;
    let mut out = Vec::new();
    let mut inf = 0;
    for (a, b) in e.alpha.iter().zip(&e.beta) {
        if cabs(*b) < infinite_cut::<T>() * na {
            if cabs(*a) < T::eps().sqrt() * nb {
                return Err(Error::SingularPencil("det(λ𝒜 + ℬ) vanishes identically".into()));
            }
            inf += 1;
        } else {
            out.push(cdiv(*a, *b));
        }
    }
    out.sort_by(order);
    Ok((out, inf))
}

/// Stability abscissa max Re λ of a state pencil.
pub fn max_real_part<T: Scalar>(p: &StatePencil<T>) -> Result<T> {
    let (l, _) = finite_eigenvalues(&p.reduced())?;
    Ok(l.iter().map(|x| x.re).fold(T::min_value().unwrap(), |a, b| a.max(b)))
}

// Solve (λA + B) x = r, nudging λ off an exactly singular matrix.
fn shifted_solve<T: Scalar>(a: &CMat<T>, b: &CMat<T>, lam: C<T>, r: &CVec<T>, transpose: bool) -> Result<CVec<T>> {
    let mut l = lam;
    for _ in 0..3 {
        let k = a * l + b;
        let k = if transpose { k.transpose() } else { k };
        if let Some(x) = k.lu().solve(r) {
            if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Ok(x);
            }
        }
        let d = lit::<T>(1e-13) * (T::one() + cabs(l));
        l += C::new(d, d);
    }
    Err(Error::SingularPencil(format!("cannot factor λ𝒜 + ℬ near λ = {lam}")))
}

fn start<T: Scalar>(n: usize, salt: usize) -> CVec<T> {
    CVec::from_fn(n, |k, _| {
        let t = lit::<T>(((k * 7 + salt * 3) % 11) as f64 / 11.0);
        C::new(T::one() + t, lit::<T>(0.5) * t - lit(0.25))
    })
}

// Inverse iteration with two-sided Rayleigh updates.
fn refine<T: Scalar>(a: &CMat<T>, b: &CMat<T>, lam0: C<T>) -> Result<(C<T>, CVec<T>, CVec<T>)> {
    let n = a.nrows();
    let mut lam = lam0;
    let mut z = start::<T>(n, 1);
    let mut y = start::<T>(n, 2);
    for _ in 0..4 {
        let zn = shifted_solve(a, b, lam, &z, false)?;
        z = &zn / cr(cnorm(&zn));
        let yn = shifted_solve(a, b, lam, &y, true)?;
        y = &yn / cr(cnorm(&yn));
        let den = bil(&y, a, &z);
        if cabs(den) == T::zero() {
            return Err(Error::Normalization { cluster: vec![(lam.re.to_f64(), lam.im.to_f64())], msg: "yᵀ𝒜z = 0".into() });
        }
        let next = -cdiv(bil(&y, b, &z), den);
        let done = cabs(next - lam) <= T::eps() * lit(8.0) * (T::one() + cabs(lam));
        lam = next;
        if done {
            break;
        }
    }
    Ok((lam, z, y))
}

/// Full eigendecomposition of the finite spectrum.
pub fn eigensolve<T: Scalar>(p: &StatePencil<T>) -> Result<EigenSolution<T>> {
    eigensolve_reduced(&p.reduced())
}

pub fn eigensolve_reduced<T: Scalar>(p: &ReducedPencil<T>) -> Result<EigenSolution<T>> {
    let (ng, nl) = (p.ng, p.nl);
    let (raw, n_inf) = finite_eigenvalues(p)?;
    let scale = raw.iter().fold(T::one(), |m, l| m.max(cabs(*l)));
    let real_tol = lit::<T>(1e-9).max(T::eps() * lit(1e3)) * scale;
    let (mut upper, mut lower, mut real) = (vec![], vec![], vec![]);
    for l in raw {
        if l.im > real_tol {
            upper.push(l);
        } else if l.im < -real_tol {
            lower.push(l);
        } else {
            real.push(C::new(l.re, T::zero()));
        }
    }
    if upper.len() != lower.len() {
        let cl = upper.iter().chain(&lower).map(|l| (l.re.to_f64(), l.im.to_f64())).collect();
        return Err(Error::Normalization { cluster: cl, msg: "complex eigenvalues do not pair into conjugates".into() });
    }
    let a = to_c(&p.a);
    let b = to_c(&p.b);
    let mut lam = Vec::new();
    let mut zs = Vec::new();
    let mut ys = Vec::new();
    for (l0, is_real) in upper.iter().map(|l| (*l, false)).chain(real.iter().map(|l| (*l, true))) {
        let (mut l, zr, yr) = refine(&a, &b, l0)?;
        let (mut zr, mut yr) = normalize(&a, l, zr, yr, ng, nl)?;
        if is_real {
            l = C::new(l.re, T::zero());
            zr = zr.map(|c| C::new(c.re, T::zero()));
            yr = yr.map(|c| C::new(c.re, T::zero()));
            let s = bil(&yr, &a, &zr);
            yr /= s;
        }
        if !is_real {
            lam.push(cconj(l));
            zs.push(zr.map(cconj));
            ys.push(yr.map(cconj));
        }
        lam.push(l);
        zs.push(zr);
        ys.push(yr);
    }
    let mut idx: Vec<usize> = (0..lam.len()).collect();
    idx.sort_by(|&i, &j| order(&lam[i], &lam[j]));
    let lambda: Vec<C<T>> = idx.iter().map(|&i| lam[i]).collect();
    let zr: Vec<CVec<T>> = idx.iter().map(|&i| zs[i].clone()).collect();
    let yr: Vec<CVec<T>> = idx.iter().map(|&i| ys[i].clone()).collect();

    // clusters make the bi-orthonormal basis ill defined
    let mut cluster = vec![];
    for i in 0..lambda.len() {
        for j in i + 1..lambda.len() {
            if cabs(lambda[i] - lambda[j]) < gap_tol::<T>() {
                cluster.push((lambda[i].re.to_f64(), lambda[i].im.to_f64()));
                cluster.push((lambda[j].re.to_f64(), lambda[j].im.to_f64()));
            }
        }
    }
    if !cluster.is_empty() {
        return Err(Error::Normalization { cluster, msg: "eigenvalues closer than the separation tolerance".into() });
    }

    let zm = CMat::from_columns(&zr);
    let ym = CMat::from_columns(&yr);
    let g = ym.transpose() * &a * &zm;
    let mut cert = T::zero();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let d = if i == j { g[(i, j)] - cr(T::one()) } else { g[(i, j)] };
            cert = cert.max(cabs(d));
        }
    }
    if !(cert <= cert_tol::<T>()) {
        let cl = lambda.iter().map(|l| (l.re.to_f64(), l.im.to_f64())).collect();
        return Err(Error::Normalization { cluster: cl, msg: format!("bi-orthonormality defect {cert}") });
    }
    Ok(EigenSolution { ng, nl, lambda, zr, yr, n_infinite: n_inf, certificate: cert })
}

// ‖z_full‖ = 1 with its largest entry real positive, then yᵀ𝒜z = 1.
fn normalize<T: Scalar>(a: &CMat<T>, lam: C<T>, zr: CVec<T>, yr: CVec<T>, ng: usize, nl: usize) -> Result<(CVec<T>, CVec<T>)> {
    let full = expand_z(&zr, lam, ng, nl);
    let norm = cnorm(&full);
    let big = full.iter().fold(T::zero(), |m, x| m.max(cabs(*x)));
    let k = full.iter().position(|x| cabs(*x) >= big * (T::one() - lit(1e-9))).unwrap();
    let phase = cconj(full[k]) / cabs(full[k]);
    let zr = zr * (phase / norm);
    let s = bil(&yr, a, &zr);
    if cabs(s) < T::eps() {
        return Err(Error::Normalization { cluster: vec![(lam.re.to_f64(), lam.im.to_f64())], msg: "left and right vectors are 𝒜-orthogonal".into() });
    }
    Ok((zr, yr / s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{to_pencil, SecondOrderModel};

    fn one_dof() -> StatePencil<f64> {
        // ü + 2u̇ + 5u = 0 ⇒ λ = −1 ± 2i
        let model = SecondOrderModel {
            m: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 2.0),
            g: DMatrix::from_element(1, 1, 5.0),
            f0: DVector::zeros(1),
            f_step: DVector::zeros(1),
            ng: 1,
            nl: 0,
        };
        to_pencil(&model)
    }

    #[test]
    fn damped_oscillator() {
        let s = eigensolve(&one_dof()).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.lambda[0] - C::new(-1.0, -2.0)).norm() < 1e-12);
        assert!((s.lambda[1] - C::new(-1.0, 2.0)).norm() < 1e-12);
        assert!(s.certificate < 1e-12);
        for j in 0..2 {
            let z = s.z(j);
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        assert!((s.z(0) - s.z(1).map(|c| c.conj())).norm() < 1e-14);
    }

    #[test]
    fn transfer_matches_direct_solve() {
        let p = one_dof();
        let s = eigensolve(&p).unwrap();
        let sv = C::new(0.3, 0.7);
        let rhs = CVec::from_vec(vec![C::new(1.0, 0.0), C::new(0.0, 0.0)]);
        let x = s.transfer_apply(sv, &rhs).unwrap();
        let k = to_c(&p.a) * sv + to_c(&p.b);
        let d = k.lu().solve(&rhs).unwrap();
        assert!((x - d).norm() < 1e-12);
    }
}
