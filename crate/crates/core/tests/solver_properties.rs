use ddform::assemble::{assemble_divergence_form, assemble_double_div, residual, solve_dirichlet};
use ddform::coeff::{make_holder_bump, make_sinusoid, make_sobolev_perturbation, LowerOrderData};
use ddform::grid::{DiscreteField, Grid};
use ddform::oracle::Oracle1D;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn field() -> ddform::coeff::CoefficientField {
    make_holder_bump(
        2,
        DMatrix::from_row_slice(2, 2, &[1.2, 0.2, 0.2, 0.9]),
        0.15,
        0.4,
        &[0.1, -0.2],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solve_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = Grid::new(2, 17).unwrap();
        let sys = assemble_double_div(&g, &field(), &LowerOrderData::none()).unwrap();
        let g1 = |x: &[f64]| x[0] - 0.2;
        let g2 = |x: &[f64]| (3.0 * x[1]).sin();
        let u1 = solve_dirichlet(&sys, g1).unwrap().field;
        let u2 = solve_dirichlet(&sys, g2).unwrap().field;
        let u = solve_dirichlet(&sys, |x| a * g1(x) + b * g2(x)).unwrap().field;
        for k in 0..g.node_count() {
            let expect = a * u1.value(k) + b * u2.value(k);
            prop_assert!((u.value(k) - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn normalization_divides_solution(s in 1.0f64..50.0) {
        let g = Grid::new(2, 17).unwrap();
        let sys = assemble_double_div(&g, &field(), &LowerOrderData::none()).unwrap();
        let data = |x: &[f64]| s * (x[0] * x[1] + 0.3);
        let u = solve_dirichlet(&sys, data).unwrap().field;
        let m = u.sup_norm().max(1.0);
        let v = solve_dirichlet(&sys, |x| data(x) / m).unwrap().field;
        for k in 0..g.node_count() {
            prop_assert!((v.value(k) - u.value(k) / m).abs() <= 1e-12);
        }
    }

    #[test]
    fn homogeneous_residual_scales(s in -20.0f64..20.0) {
        let g = Grid::new(2, 17).unwrap();
        let sys = assemble_double_div(&g, &field(), &LowerOrderData::none()).unwrap();
        let u = DiscreteField::from_fn(g, |x| x[0] * x[0] - 0.5 * x[1]);
        let r = residual(&sys, &u);
        let rs = residual(&sys, &u.scaled(s));
        prop_assert!((rs - s.abs() * r).abs() <= 1e-9 * (1.0 + rs));
    }

    #[test]
    fn oracle_reproduced_in_1d(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, kappa in 0.0f64..0.9, alpha in 0.1f64..0.95) {
        let f = make_holder_bump(1, DMatrix::identity(1, 1), kappa, alpha, &[0.1]).unwrap();
        let o = Oracle1D::from_field(&f, c1, c2).unwrap();
        let g = Grid::new(1, 257).unwrap();
        let exact = |x: &[f64]| o.value(x[0]).unwrap();
        let u = solve_dirichlet(&assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap(), exact).unwrap().field;
        prop_assert!(u.max_error_where(exact, |_| true) <= 1e-11);
    }
}

#[test]
fn divergence_form_second_order_in_1d() {
    let f = make_sinusoid(1, DMatrix::from_element(1, 1, 2.0), 0.15, 1.0).unwrap();
    let o = Oracle1D::from_field(&f, 1.0, -0.3).unwrap();
    let exact = |x: &[f64]| o.value(x[0]).unwrap();
    let errors: Vec<f64> = [65, 129, 257, 513]
        .into_iter()
        .map(|n| {
            let g = Grid::new(1, n).unwrap();
            let u = solve_dirichlet(&assemble_divergence_form(&g, &f).unwrap(), exact)
                .unwrap()
                .field;
            u.max_error_where(exact, |_| true)
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() <= 0.2, "{errors:?}");
    }
}

#[test]
fn form_equivalence_is_second_order() {
    let f = make_sobolev_perturbation(2, DMatrix::identity(2, 2), 0.1, 1.5, &[0.0, 0.0]).unwrap();
    let bc = |x: &[f64]| x[0] * x[1] + 0.5 * x[0];
    let diffs: Vec<f64> = [17, 33, 65]
        .into_iter()
        .map(|n| {
            let g = Grid::new(2, n).unwrap();
            let a = solve_dirichlet(&assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap(), bc).unwrap();
            let b = solve_dirichlet(&assemble_divergence_form(&g, &f).unwrap(), bc).unwrap();
            a.field.max_abs_diff(&b.field).unwrap()
        })
        .collect();
    for w in diffs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..=5.0).contains(&ratio), "{diffs:?}");
    }
}
