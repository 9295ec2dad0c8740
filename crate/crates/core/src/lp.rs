//! Dense two-phase revised simplex with Bland's rule.
//!
//! Solves min cᵀx subject to A_ub x ≤ b_ub, A_eq x = b_eq, 0 ≤ x ≤ u. Upper bounds are
//! carried as ordinary inequality rows; the problems here have at most a few hundred rows.
//! The basis is refactored every iteration, which is plenty at this size and keeps the
//! arithmetic free of accumulated update error.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use nalgebra::{DMatrix, DVector, LU};

#[derive(Debug, Clone)]
pub struct LinearProgram<T: Scalar> {
    pub c: DVector<T>,
    pub a_ub: DMatrix<T>,
    pub b_ub: DVector<T>,
    pub a_eq: DMatrix<T>,
    pub b_eq: DVector<T>,
    /// Per-variable upper bound; `None` is unbounded above.
    pub upper: Vec<Option<T>>,
}

impl<T: Scalar> LinearProgram<T> {
    pub fn new(c: DVector<T>) -> Self {
        let n = c.len();
        LinearProgram {
            c,
            a_ub: DMatrix::zeros(0, n),
            b_ub: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            upper: vec![None; n],
        }
    }
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }
    pub fn add_le(&mut self, row: &[T], b: T) {
        push_row(&mut self.a_ub, &mut self.b_ub, row, b);
    }
    pub fn add_eq(&mut self, row: &[T], b: T) {
        push_row(&mut self.a_eq, &mut self.b_eq, row, b);
    }
}

fn push_row<T: Scalar>(a: &mut DMatrix<T>, b: &mut DVector<T>, row: &[T], rhs: T) {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(row.len(), n);
    let mut na = a.clone().resize_vertically(m + 1, T::zero());
    for (j, v) in row.iter().enumerate() {
        na[(m, j)] = *v;
    }
    *a = na;
    *b = b.clone().resize_vertically(m + 1, rhs);
}

/// Optimal primal/dual pair with its optimality certificate.
#[derive(Debug, Clone)]
pub struct LpSolution<T: Scalar> {
    pub x: DVector<T>,
    pub objective: T,
    /// Multipliers of the ≤ rows (nonpositive for a minimization).
    pub dual_ub: DVector<T>,
    pub dual_eq: DVector<T>,
    /// Multipliers of the upper bounds (nonpositive).
    pub dual_upper: Vec<T>,
    pub certificate: LpCertificate<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpCertificate<T> {
    pub primal_objective: T,
    pub dual_objective: T,
    /// |primal − dual| objective.
    pub gap: T,
    pub primal_infeasibility: T,
    pub dual_infeasibility: T,
}

// Standard form min cᵀx, Ax = b, x ≥ 0 with b ≥ 0.
struct Standard<T: Scalar> {
    a: DMatrix<T>,
    b: DVector<T>,
    c: DVector<T>,
    // sign applied to each original row when making b nonnegative
    flip: Vec<T>,
    n_orig: usize,
    m_ub: usize,
    m_bnd: usize,
    bnd_vars: Vec<usize>,
}

fn standardize<T: Scalar>(lp: &LinearProgram<T>) -> Standard<T> {
    let n = lp.n_vars();
    let bnd_vars: Vec<usize> = (0..n).filter(|&j| lp.upper[j].is_some()).collect();
    let (m_ub, m_bnd, m_eq) = (lp.a_ub.nrows(), bnd_vars.len(), lp.a_eq.nrows());
    let m = m_ub + m_bnd + m_eq;
    let n_slack = m_ub + m_bnd;
    let mut a = DMatrix::zeros(m, n + n_slack);
    let mut b = DVector::zeros(m);
    for i in 0..m_ub {
        for j in 0..n {
            a[(i, j)] = lp.a_ub[(i, j)];
        }
        a[(i, n + i)] = T::one();
        b[i] = lp.b_ub[i];
    }
    for (k, &j) in bnd_vars.iter().enumerate() {
        let i = m_ub + k;
        a[(i, j)] = T::one();
        a[(i, n + i)] = T::one();
        b[i] = lp.upper[j].unwrap();
    }
    for k in 0..m_eq {
        let i = n_slack + k;
        for j in 0..n {
            a[(i, j)] = lp.a_eq[(k, j)];
        }
        b[i] = lp.b_eq[k];
    }
    let mut flip = vec![T::one(); m];
    for i in 0..m {
        if b[i] < T::zero() {
            flip[i] = -T::one();
            b[i] = -b[i];
            for j in 0..a.ncols() {
                a[(i, j)] = -a[(i, j)];
            }
        }
    }
    let mut c = DVector::zeros(n + n_slack);
    for j in 0..n {
        c[j] = lp.c[j];
    }
    Standard { a, b, c, flip, n_orig: n, m_ub, m_bnd, bnd_vars }
}

type Lu<T> = LU<T, nalgebra::Dyn, nalgebra::Dyn>;

// LU of the basis matrix and of its transpose.
struct Factor<T: Scalar> {
    lu: Lu<T>,
    lut: Lu<T>,
}

impl<T: Scalar> Factor<T> {
    fn new(a: &DMatrix<T>, basis: &[usize]) -> Result<Self> {
        let m = a.nrows();
        let bm = DMatrix::from_fn(m, m, |i, k| a[(i, basis[k])]);
        let lut = LU::new(bm.transpose());
        let lu = LU::new(bm);
        if m > 0 && !lu.is_invertible() {
            return Err(Error::Lp("basis became singular".into()));
        }
        Ok(Factor { lu, lut })
    }
    fn solve(&self, b: &DVector<T>) -> Result<DVector<T>> {
        if b.is_empty() {
            return Ok(DVector::zeros(0));
        }
        self.lu.solve(b).ok_or_else(|| Error::Lp("basis became singular".into()))
    }
    fn solve_t(&self, b: &DVector<T>) -> Result<DVector<T>> {
        if b.is_empty() {
            return Ok(DVector::zeros(0));
        }
        self.lut.solve(b).ok_or_else(|| Error::Lp("basis became singular".into()))
    }
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Simplex<'a, T: Scalar> {
    a: &'a DMatrix<T>,
    c: &'a DVector<T>,
    basis: Vec<usize>,
    // columns allowed to enter
    allowed: Vec<bool>,
    tol: T,
    iterations: usize,
}

impl<T: Scalar> Simplex<'_, T> {
    fn factor(&self) -> Result<Factor<T>> {
        Factor::new(self.a, &self.basis)
    }

    fn duals(&self, f: &Factor<T>) -> Result<DVector<T>> {
        let cb = DVector::from_fn(self.basis.len(), |k, _| self.c[self.basis[k]]);
        f.solve_t(&cb)
    }

    fn run(&mut self, b: &DVector<T>, max_iter: usize) -> Result<Outcome> {
        let n = self.a.ncols();
        loop {
            if self.iterations >= max_iter {
                return Err(Error::Lp("iteration limit reached".into()));
            }
            let lu = self.factor()?;
            let y = self.duals(&lu)?;
            // Bland: lowest-index column with negative reduced cost
            let mut in_basis = vec![false; n];
            for &k in &self.basis {
                in_basis[k] = true;
            }
            let entering = (0..n).find(|&j| {
                self.allowed[j] && !in_basis[j] && self.c[j] - self.a.column(j).dot(&y) < -self.tol
            });
            let Some(q) = entering else { return Ok(Outcome::Optimal) };
            let d = lu.solve(&self.a.column(q).into_owned())?;
            let xb = lu.solve(b)?;
            // ratio test, ties to the lowest basic index
            let mut leave: Option<(usize, T)> = None;
            for i in 0..d.len() {
                if d[i] > self.tol {
                    let r = xb[i].max(T::zero()) / d[i];
                    match leave {
                        None => leave = Some((i, r)),
                        Some((li, lr)) => {
                            if r < lr - self.tol || (r <= lr + self.tol && self.basis[i] < self.basis[li]) {
                                leave = Some((i, r));
                            }
                        }
                    }
                }
            }
            let Some((p, _)) = leave else { return Ok(Outcome::Unbounded) };
            self.basis[p] = q;
            self.iterations += 1;
        }
    }
}

/// Solves the program; errors on infeasibility or unboundedness.
///
/// Infeasibility names the rows with nonzero Farkas multipliers, numbered ≤ rows first,
/// then one row per finite upper bound, then equality rows.
pub fn solve<T: Scalar>(lp: &LinearProgram<T>) -> Result<LpSolution<T>> {
    let st = standardize(lp);
    let (m, ns) = (st.a.nrows(), st.a.ncols());
    let scale = st.a.amax().max(st.b.amax()).max(st.c.amax()).max(T::one());
    let tol = lit::<T>(1e-9).max(T::eps() * lit(1e3)) * scale;
    let max_iter = 50 * (m + ns).max(10);

    // phase 1 on [A | I]
    let mut a1 = DMatrix::zeros(m, ns + m);
    a1.view_mut((0, 0), (m, ns)).copy_from(&st.a);
    for i in 0..m {
        a1[(i, ns + i)] = T::one();
    }
    let mut c1 = DVector::zeros(ns + m);
    for i in 0..m {
        c1[ns + i] = T::one();
    }
    let mut s1 = Simplex { a: &a1, c: &c1, basis: (ns..ns + m).collect(), allowed: vec![true; ns + m], tol, iterations: 0 };
    s1.run(&st.b, max_iter)?;
    let lu = s1.factor()?;
    let xb = lu.solve(&st.b)?;
    let infeas = s1.basis.iter().zip(xb.iter()).filter(|(k, _)| **k >= ns).fold(T::zero(), |acc, (_, v)| acc + v.abs());
    if infeas > tol * lit(10.0) {
        let y = s1.duals(&lu)?;
        return Err(Error::Infeasible((0..m).filter(|&i| y[i].abs() > tol).collect()));
    }
    // drive zero-level artificials out where possible
    let mut basis = s1.basis.clone();
    let iterations = s1.iterations;
    for p in 0..m {
        if basis[p] < ns {
            continue;
        }
        let Ok(f) = Factor::new(&a1, &basis) else { continue };
        let mut e = DVector::zeros(m);
        e[p] = T::one();
        let Ok(row) = f.solve_t(&e) else { continue };
        if let Some(q) = (0..ns).find(|&j| !basis.contains(&j) && st.a.column(j).dot(&row).abs() > tol) {
            basis[p] = q;
        }
    }
    // phase 2; remaining artificials sit on redundant rows and never re-enter
    let mut c2 = DVector::zeros(ns + m);
    c2.rows_mut(0, ns).copy_from(&st.c);
    let mut allowed = vec![true; ns + m];
    for flag in allowed.iter_mut().skip(ns) {
        *flag = false;
    }
    let mut s2 = Simplex { a: &a1, c: &c2, basis, allowed, tol, iterations };
    if let Outcome::Unbounded = s2.run(&st.b, max_iter + iterations)? {
        return Err(Error::Unbounded);
    }
    let lu = s2.factor()?;
    let xb = lu.solve(&st.b)?;
    let y = s2.duals(&lu)?;
    let mut xs = DVector::zeros(ns + m);
    for (k, &j) in s2.basis.iter().enumerate() {
        xs[j] = xb[k].max(T::zero());
    }
    let x = xs.rows(0, st.n_orig).into_owned();
    // undo row flips to get multipliers of the original rows
    let yo = DVector::from_fn(m, |i, _| y[i] * st.flip[i]);
    let dual_ub = yo.rows(0, st.m_ub).into_owned();
    let dual_upper_rows = yo.rows(st.m_ub, st.m_bnd).into_owned();
    let dual_eq = yo.rows(st.m_ub + st.m_bnd, m - st.m_ub - st.m_bnd).into_owned();
    let mut dual_upper = vec![T::zero(); st.n_orig];
    for (k, &j) in st.bnd_vars.iter().enumerate() {
        dual_upper[j] = dual_upper_rows[k];
    }
    let certificate = certify(lp, &x, &dual_ub, &dual_eq, &dual_upper);
    Ok(LpSolution { objective: lp.c.dot(&x), x, dual_ub, dual_eq, dual_upper, certificate, iterations: s2.iterations })
}

/// Duality check of a primal/dual pair, independent of how they were found.
pub fn certify<T: Scalar>(lp: &LinearProgram<T>, x: &DVector<T>, dual_ub: &DVector<T>, dual_eq: &DVector<T>, dual_upper: &[T]) -> LpCertificate<T> {
    let n = lp.n_vars();
    let mut pinf = x.iter().fold(T::zero(), |m, v| m.max(-*v));
    if lp.a_ub.nrows() > 0 {
        pinf = pinf.max((&lp.a_ub * x - &lp.b_ub).iter().fold(T::zero(), |m, v| m.max(*v)));
    }
    if lp.a_eq.nrows() > 0 {
        pinf = pinf.max((&lp.a_eq * x - &lp.b_eq).amax());
    }
    for j in 0..n {
        if let Some(u) = lp.upper[j] {
            pinf = pinf.max(x[j] - u);
        }
    }
    // reduced costs c − A_ubᵀy − A_eqᵀμ − w must be ≥ 0 with y, w ≤ 0
    let mut r = lp.c.clone();
    if lp.a_ub.nrows() > 0 {
        r -= lp.a_ub.transpose() * dual_ub;
    }
    if lp.a_eq.nrows() > 0 {
        r -= lp.a_eq.transpose() * dual_eq;
    }
    let mut dinf = T::zero();
    for j in 0..n {
        r[j] -= dual_upper[j];
        dinf = dinf.max(-r[j]).max(dual_upper[j]);
    }
    dinf = dual_ub.iter().fold(dinf, |m, v| m.max(*v));
    let mut dual_obj = T::zero();
    if lp.b_ub.len() > 0 {
        dual_obj += lp.b_ub.dot(dual_ub);
    }
    if lp.b_eq.len() > 0 {
        dual_obj += lp.b_eq.dot(dual_eq);
    }
    for j in 0..n {
        if let Some(u) = lp.upper[j] {
            dual_obj += u * dual_upper[j];
        }
    }
    let primal = lp.c.dot(x);
    LpCertificate { primal_objective: primal, dual_objective: dual_obj, gap: (primal - dual_obj).abs(), primal_infeasibility: pinf, dual_infeasibility: dinf }
}
