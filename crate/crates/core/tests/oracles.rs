//! Comparisons against independent dense solvers and direct minimality probes.

use homlab::funineq::{korn_matrices, poincare_matrices, smallest_eigenpair, CoefficientField, CoefficientKind, EigenOptions};
use homlab::geometry::{Face, PerforatedDomain, Rational, Rect, UnitCell};
use homlab::homog::{homogenized_tensor, CellProblem};
use homlab::linalg::SkylineMatrix;
use homlab::materials::{Coefficient, MaterialBundle, StrainGradientLaw};
use homlab::micro::{qp_gradients, IncrementalDensity, IncrementalProblem, Loads, StepOptions, TimeGrid};
use homlab::tensor::from_sym_coords;
use homlab::{C1Field, ExecPolicy};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn holed_cell() -> UnitCell {
    UnitCell::build(Some(Rect::square(r(1, 4), r(3, 4))), 8).unwrap()
}

fn domain(inv: i64) -> PerforatedDomain {
    PerforatedDomain::build(holed_cell(), r(1, inv), &[Face::X1Lo]).unwrap()
}

fn dense(m: &SkylineMatrix) -> DMatrix<f64> {
    let n = m.n();
    DMatrix::from_fn(n, n, |i, j| m.get(i, j))
}

/// Smallest eigenvalue of `K x = λ M x` through a dense Cholesky reduction.
fn dense_smallest(k: &SkylineMatrix, m: &SkylineMatrix) -> f64 {
    let l = dense(m).cholesky().unwrap().l();
    let li = l.try_inverse().unwrap();
    let c = &li * dense(k) * li.transpose();
    SymmetricEigen::new(0.5 * (&c + c.transpose())).eigenvalues.min()
}

#[test]
fn quadratic_cell_solve_matches_dense_lu() {
    let law = StrainGradientLaw {
        beta: Coefficient::default(),
        p: 2.0,
    };
    let cp = CellProblem::new(&holed_cell(), law, ExecPolicy::SEQUENTIAL).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let g = from_sym_coords(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let (k, rhs) = cp.linear_system(&g).unwrap();
        let x = k.lu().solve(&(-rhs)).unwrap();
        let mut full = C1Field::zeros(cp.space());
        for (v, &d) in x.iter().zip(cp.dof_map().free_dofs()) {
            full.coeffs[d] = *v;
        }
        let oracle = cp.mean_free(full);
        let sol = cp.solve(&g, None).unwrap();
        let err = oracle.coeffs.iter().zip(&sol.u2.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "coefficient mismatch {err:e}");
    }
    let t = homogenized_tensor(&cp).unwrap();
    assert!((t - t.transpose()).abs().max() <= 1e-10);
    assert!(t.symmetric_eigenvalues().min() > 0.0);
}

#[test]
fn korn_eigenvalue_matches_dense_solver() {
    let d = domain(2);
    let a = CoefficientField::certify(CoefficientKind::Deformation { amplitude: 0.1 }, 1.0, &d, 33).unwrap();
    let (k, m, _) = korn_matrices(&d, &a, &ExecPolicy::SEQUENTIAL).unwrap();
    let exact = dense_smallest(&k, &m);
    let (lambda, _, res, _) = smallest_eigenpair(k, &m, &EigenOptions::default()).unwrap();
    assert!(res <= 1e-10);
    assert!((lambda - exact).abs() <= 1e-9 * exact, "{lambda} vs {exact}");
}

#[test]
fn poincare_eigenvalue_matches_dense_solver() {
    let d = domain(2);
    let (k, m, _) = poincare_matrices(&d, &ExecPolicy::SEQUENTIAL).unwrap();
    let exact = dense_smallest(&k, &m);
    let (lambda, _, _, _) = smallest_eigenpair(k, &m, &EigenOptions::default()).unwrap();
    assert!((lambda - exact).abs() <= 1e-9 * exact, "{lambda} vs {exact}");
}

#[test]
fn accepted_step_is_a_local_minimizer() {
    let d = domain(2);
    let bundle = MaterialBundle::new(0.5, 4.0, 4.0, true);
    let policy = ExecPolicy::SEQUENTIAL;
    let problem = IncrementalProblem::on_domain(&d, &bundle, StepOptions::default(), policy).unwrap();
    let loads = Loads::ramp([0.5, -0.25]);
    let tau = 0.01;
    let load = problem.load_at(&loads, 0.5 * tau);
    let u0 = problem.identity();
    let (u1, _) = problem.step(&u0, tau, &load, 1, tau).unwrap();

    let f_prev = qp_gradients(&u0, &policy);
    let dens = IncrementalDensity {
        law: &bundle,
        f_prev: &f_prev,
        n_qp: problem.space().n_qp(),
        inv_tau: 1.0 / tau,
        det_floor: 1e-3,
    };
    let objective = |c: &[f64]| {
        problem.disc.energy(&dens, c, &policy).unwrap() - load.iter().zip(c).map(|(l, v)| l * v).sum::<f64>()
    };
    let base = objective(&u1.coeffs);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let mut dir = vec![0.0; u1.coeffs.len()];
        for &f in problem.disc.map.free_dofs() {
            dir[f] = rng.gen_range(-1.0..1.0) * d.h().powi((f % 4).count_ones() as i32);
        }
        for t in [1e-3, -1e-3, 1e-2, -1e-2] {
            let trial: Vec<f64> = u1.coeffs.iter().zip(&dir).map(|(u, v)| u + t * v).collect();
            let drop = objective(&trial) - base;
            assert!(drop >= -1e-12 * (1.0 + base.abs()), "objective decreased by {drop:e} at t = {t}");
        }
    }
}

#[test]
fn time_step_self_convergence() {
    let d = domain(2);
    let bundle = MaterialBundle::new(0.5, 4.0, 4.0, true);
    let policy = ExecPolicy::default();
    let problem = IncrementalProblem::on_domain(&d, &bundle, StepOptions::default(), policy).unwrap();
    let loads = Loads::ramp([0.5, -0.25]);
    let finals: Vec<C1Field> = [40, 80, 160, 320]
        .iter()
        .map(|&n| {
            let grid = TimeGrid::new(r(1, 10), r(1, n)).unwrap();
            problem.run(&loads, &grid, problem.identity()).unwrap().final_state().clone()
        })
        .collect();
    let reference = finals.last().unwrap();
    let errs: Vec<f64> = finals[..3]
        .iter()
        .map(|u| {
            let mut diff = u.clone();
            for (a, b) in diff.coeffs.iter_mut().zip(&reference.coeffs) {
                *a -= b;
            }
            diff.norms_sq(&policy)[1].sqrt()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    // first order in τ, error against the finest run
    assert!(errs[0] / errs[1] > 1.6, "{errs:?}");
}
