use laa_core::case_io::builtin;
use laa_core::eigen::{dotu, eigensolve, eigensolve_reduced, CVec};
use laa_core::grid::{build, AttackSpec, ReducedPencil, Sensor};
use laa_core::sensitivity::*;
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Complex<f64>;

fn base(name: &str) -> (laa_core::f64::GridCase, ReducedPencil<f64>) {
    let (case, params) = builtin::load::<f64>(name).unwrap();
    let (_, p) = build(&case, &params, &AttackSpec::none(&case)).unwrap();
    (case, p.reduced())
}

// Perturb the reduced pencil directly: 𝒞[N_G+v, col] = −K.
fn with_gain(p: &ReducedPencil<f64>, v: usize, s: Sensor, k: f64) -> ReducedPencil<f64> {
    let mut q = p.clone();
    q.a[(p.ng + v, s.column(p.ng))] -= k;
    q
}

fn nearest(l: C, set: &[C]) -> C {
    *set.iter().min_by(|a, b| (*a - l).norm().partial_cmp(&(*b - l).norm()).unwrap()).unwrap()
}

fn fd_eig(p: &ReducedPencil<f64>, v: usize, s: Sensor, l: C, h: f64) -> C {
    // refined eigenvalues: raw QZ output is too noisy for h = 1e-4
    let lp = eigensolve_reduced(&with_gain(p, v, s, h)).unwrap().lambda;
    let lm = eigensolve_reduced(&with_gain(p, v, s, -h)).unwrap().lambda;
    (nearest(l, &lp) - nearest(l, &lm)) / (2.0 * h)
}

#[test]
fn eigenvalue_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in builtin::NAMES {
        let (case, p) = base(name);
        let sol = eigensolve_reduced(&p).unwrap();
        let (ng, nl) = (case.n_gen(), case.n_load());
        let mut checked = 0;
        while checked < 20 {
            let v = rng.gen_range(0..nl);
            let s = if rng.gen_bool(0.7) { Sensor::Gen(rng.gen_range(0..ng)) } else { Sensor::Load(rng.gen_range(0..nl)) };
            let j = rng.gen_range(0..sol.len());
            let d = eigvalue_sensitivity(&sol, v, s).dlambda[j];
            // a derivative far below |λ|·1e-5 is drowned by eigenvalue roundoff at h = 1e-4
            let lj = sol.lambda[j].norm();
            if d.norm() < 1e-5 * (1.0 + lj) {
                continue;
            }
            let e3 = (fd_eig(&p, v, s, sol.lambda[j], 1e-3) - d).norm() / d.norm();
            let e4 = (fd_eig(&p, v, s, sol.lambda[j], 1e-4) - d).norm() / d.norm();
            assert!(e3 < 1e-3 && e4 < 1e-3, "{name} v={v} s={s:?} j={j}: {e3} {e4}");
            // O(h²) until the roundoff floor
            let floor = 1e-12 * (1.0 + lj) / (1e-4 * d.norm());
            assert!(e4 < 0.05 * e3 || e4 < floor, "{name} v={v} s={s:?} j={j}: {e3} {e4}");
            checked += 1;
        }
    }
}

#[test]
fn dominant_derivative_39_bus() {
    let (case, p) = base("case39");
    let sol = eigensolve_reduced(&p).unwrap();
    let v = case.load_index(19).unwrap();
    let s = Sensor::from_bus(&case, 33).unwrap();
    let sens = eigvalue_sensitivity(&sol, v, s);
    for j in 0..2 {
        let fd = fd_eig(&p, v, s, sol.lambda[j], 1e-4);
        assert!((fd - sens.dlambda[j]).norm() < 1e-4 * sens.dlambda[j].norm());
    }
}

#[test]
fn nonmembers_give_zero_rows_and_conjugate_symmetry() {
    let (case, p) = base("case14");
    let sol = eigensolve_reduced(&p).unwrap();
    let victims = [0usize, 3];
    let sensors = [Sensor::Gen(1)];
    let z = eigvalue_sensitivity_in(&sol, &victims, &sensors, 5, Sensor::Gen(1));
    assert!(z.dlambda.iter().all(|d| d.norm() == 0.0));
    let z = eigvalue_sensitivity_in(&sol, &victims, &sensors, 3, Sensor::Gen(0));
    assert!(z.dlambda.iter().all(|d| d.norm() == 0.0));
    let r = eigvalue_sensitivity_in(&sol, &victims, &sensors, 3, Sensor::Gen(1));
    for j in 0..sol.len() {
        if sol.lambda[j].im != 0.0 {
            let k = sol.lambda.iter().position(|x| *x == sol.lambda[j].conj()).unwrap();
            assert_eq!(r.dlambda[k], r.dlambda[j].conj());
        }
    }
    let _ = case;
}

fn gauge(zt: &CVec<f64>, y0: &CVec<f64>, a0: &nalgebra::DMatrix<C>, target: C) -> CVec<f64> {
    let s = dotu(y0, &(a0 * zt));
    zt * (target / s)
}

#[test]
fn eigenvector_derivatives_match_finite_differences() {
    let (case, p) = base("case6ww");
    let sol = eigensolve_reduced(&p).unwrap();
    let a0 = p.a.map(|x| C::new(x, 0.0));
    let v = case.load_index(4).unwrap();
    let s = Sensor::from_bus(&case, 1).unwrap();
    let h = 1e-5;
    for j in 0..sol.len() {
        let d = eigvector_gain_sensitivity(&sol, v, s, j).unwrap();
        let plus = eigensolve_reduced(&with_gain(&p, v, s, h)).unwrap();
        let minus = eigensolve_reduced(&with_gain(&p, v, s, -h)).unwrap();
        let pick = |o: &laa_core::f64::EigenSolution| {
            (0..o.len()).min_by(|&a, &b| (o.lambda[a] - sol.lambda[j]).norm().partial_cmp(&(o.lambda[b] - sol.lambda[j]).norm()).unwrap()).unwrap()
        };
        let (kp, km) = (pick(&plus), pick(&minus));
        let ajj = d.a[j];
        let bjj = d.b[j];
        let zp = gauge(&plus.zr[kp], &sol.yr[j], &a0, C::new(1.0, 0.0) + ajj * h);
        let zm = gauge(&minus.zr[km], &sol.yr[j], &a0, C::new(1.0, 0.0) - ajj * h);
        let fdz = (zp - zm) / C::new(2.0 * h, 0.0);
        assert!((&fdz - &d.dzr).norm() < 1e-3 * d.dzr.norm().max(1e-6), "z j={j}: {} vs {}", (&fdz - &d.dzr).norm(), d.dzr.norm());
        // left vectors: ỹ(h)ᵀ𝒜₀z₀ = 1 + h·b_jj
        let yg = |yt: &CVec<f64>, t: C| {
            let s = dotu(yt, &(&a0 * &sol.zr[j]));
            yt * (t / s)
        };
        let yp = yg(&plus.yr[kp], C::new(1.0, 0.0) + bjj * h);
        let ym = yg(&minus.yr[km], C::new(1.0, 0.0) - bjj * h);
        let fdy = (yp - ym) / C::new(2.0 * h, 0.0);
        assert!((&fdy - &d.dyr).norm() < 1e-3 * d.dyr.norm().max(1e-6), "y j={j}");
        // differentiated block identity: ∂ω = λ∂δ + ∂λ·δ on the generator rows
        let n = case.n();
        let ng = case.n_gen();
        for g in 0..ng {
            let lhs = d.dzr[n + g];
            let rhs = sol.lambda[j] * d.dzr[g] + d.dlambda * sol.zr[j][g];
            assert!((lhs - rhs).norm() < 1e-6 * (1.0 + lhs.norm()));
        }
        // and the full vector keeps it on every row
        for i in 0..n {
            let rhs = sol.lambda[j] * d.dz[i] + d.dlambda * sol.z(j)[i];
            assert!((d.dz[n + i] - rhs).norm() < 1e-6 * (1.0 + rhs.norm()));
        }
    }
}

#[test]
fn zero_direction_gives_zero_vector_derivative() {
    let (_, p) = base("case6ww");
    let sol = eigensolve_reduced(&p).unwrap();
    let d = eigvector_sensitivity(&sol, &Perturbation::zero(), 0).unwrap();
    assert_eq!(d.dz.norm(), 0.0);
    assert_eq!(d.dlambda.norm(), 0.0);
}

#[test]
fn prediction_superposition_and_polyhedron() {
    let (case, p) = base("case39");
    let sol = eigensolve_reduced(&p).unwrap();
    let s33 = Sensor::from_bus(&case, 33).unwrap();
    let (v19, v20) = (case.load_index(19).unwrap(), case.load_index(20).unwrap());
    let table = sensitivity_table(&sol, &[v19, v20], &[s33]);
    let zero = predict_spectrum(&sol, &table, &[]);
    assert_eq!(zero.predicted, sol.lambda);
    let one = predict_spectrum(&sol, &table, &[(v19, s33, 7.0)]);
    let two = predict_spectrum(&sol, &table, &[(v20, s33, 3.0)]);
    let both = predict_spectrum(&sol, &table, &[(v19, s33, 7.0), (v20, s33, 3.0)]);
    for j in 0..sol.len() {
        let sum = sol.lambda[j] + (one.predicted[j] - sol.lambda[j]) + (two.predicted[j] - sol.lambda[j]);
        assert!((sum - both.predicted[j]).norm() < 1e-12);
        if sol.lambda[j].im != 0.0 {
            let k = sol.lambda.iter().position(|x| *x == sol.lambda[j].conj()).unwrap();
            assert_eq!(both.predicted[k], both.predicted[j].conj());
        }
    }
    let poly = build_polyhedron(&sol, &table);
    assert!(poly.contains(&[0.0, 0.0]));
    let khat = min_destabilizing_gain(&sol, &table[0]).unwrap();
    assert!((poly.axis_crossing(0).unwrap() - khat).abs() < 1e-12);
    // the predicted dominant real part crosses zero exactly at K̂
    let at = predict_spectrum(&sol, &table, &[(v19, s33, khat)]);
    assert!(at.max_real().abs() < 1e-12);
    // boundary point on a ray plus a 1% outward step leaves the polyhedron
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let dir = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let (mut lo, mut hi) = (0.0, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if poly.contains(&[dir[0] * mid, dir[1] * mid]) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = [dir[0] * lo * 1.01, dir[1] * lo * 1.01];
        let pr = predict_spectrum(&sol, &table, &[(v19, s33, k[0]), (v20, s33, k[1])]);
        assert!(pr.max_real() > 0.0);
    }
}

#[test]
fn least_effort_tie_break_and_single_candidate() {
    let (case, p) = base("case39");
    let sol = eigensolve_reduced(&p).unwrap();
    let s33 = Sensor::from_bus(&case, 33).unwrap();
    let v = case.load_index(5).unwrap();
    let one = least_effort_node(&case, &sol, &[v], &[s33]);
    if let Some(pg) = one {
        assert_eq!((pg.victim, pg.sensor), (v, s33));
    }
    let ranked = rank_pairs(&case, &sol, &(0..case.n_load()).collect::<Vec<_>>(), &[s33]);
    for w in ranked.windows(2) {
        let a = w[0].khat.unwrap_or(f64::INFINITY);
        let b = w[1].khat.unwrap_or(f64::INFINITY);
        assert!(a <= b);
    }
}

#[test]
fn attacked_pencil_matches_direct_perturbation() {
    let (case, params) = builtin::load::<f64>("case14").unwrap();
    let atk = AttackSpec::none(&case).with_gain(&case, 9, 2, 0.5).unwrap();
    let (_, pa) = build(&case, &params, &atk).unwrap();
    let (_, p0) = build(&case, &params, &AttackSpec::none(&case)).unwrap();
    let d = with_gain(&p0.reduced(), case.load_index(9).unwrap(), Sensor::from_bus(&case, 2).unwrap(), 0.5);
    assert_eq!(d.a, pa.reduced().a);
    let _ = eigensolve(&pa).unwrap();
}
