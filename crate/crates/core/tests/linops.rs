mod common;

use common::*;
use lipcert::linops::{dot, norm2, LinearMap, LinearOperator};
use lipcert::Error;
use proptest::prelude::*;

fn conv_strategy() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, usize, u64)> {
    (1usize..=3, 1usize..=8, 1usize..=8, 1usize..=3, 1usize..=5, 1usize..=2, 0usize..=2, any::<u64>())
        .prop_filter("kernel fits padded input", |&(_, h, w, _, k, _, p, _)| {
            h + 2 * p >= k && w + 2 * p >= k
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_formula((cin, h, w, cout, k, s, p, seed) in conv_strategy()) {
        let mut r = stream(seed);
        let conv = random_conv(&mut r, (cin, h, w, cout, k, s, p));
        let rows = conv_matrix_direct(&conv);
        let x = gaussian_vec(&mut r, conv.cols());
        let want = matvec(&rows, &x);
        let got = conv.apply(&x).unwrap();
        for (a, b) in got.iter().zip(&want) {
            prop_assert!(close(*a, *b, 1e-12));
        }
        let dense = conv.materialize(usize::MAX).unwrap();
        for (i, row) in rows.iter().enumerate() {
            prop_assert_eq!(dense.row(i), &row[..]);
        }
    }

    #[test]
    fn adjoint_identity((cin, h, w, cout, k, s, p, seed) in conv_strategy()) {
        let mut r = stream(seed);
        let conv = random_conv(&mut r, (cin, h, w, cout, k, s, p));
        let u = gaussian_vec(&mut r, conv.cols());
        let v = gaussian_vec(&mut r, conv.rows());
        let au = conv.apply(&u).unwrap();
        let atv = conv.apply_adjoint(&v).unwrap();
        let tol = 1e-9 * (norm2(&au) * norm2(&v) + 1.0);
        prop_assert!((dot(&au, &v) - dot(&u, &atv)).abs() <= tol);
    }

    #[test]
    fn operators_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = stream(seed);
        let cfg = random_conv_config(&mut r);
        let op: LinearOperator = random_conv(&mut r, cfg).into();
        let x = gaussian_vec(&mut r, op.cols());
        let y = gaussian_vec(&mut r, op.cols());
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = op.apply(&combo).unwrap();
        let ax = op.apply(&x).unwrap();
        let ay = op.apply(&y).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * ax[i] + b * ay[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * (1.0 + ax[i].abs() + ay[i].abs()));
        }
    }

    #[test]
    fn extracted_rows_are_adjoint_of_basis(seed in any::<u64>()) {
        let mut r = stream(seed);
        let cfg = random_conv_config(&mut r);
        let conv = random_conv(&mut r, cfg);
        let idx: Vec<usize> = (0..conv.rows()).rev().step_by(3).collect();
        let rows = conv.extract_rows(&idx).unwrap();
        for (&i, row) in idx.iter().zip(&rows) {
            let mut e = vec![0.0; conv.rows()];
            e[i] = 1.0;
            prop_assert_eq!(row, &conv.apply_adjoint(&e).unwrap());
        }
    }

    #[test]
    fn dense_adjoint_is_transpose(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
        let mut r = stream(seed);
        let a = random_dense(&mut r, m, n);
        let y = gaussian_vec(&mut r, m);
        let got = a.apply_adjoint(&y).unwrap();
        for j in 0..n {
            let want: f64 = (0..m).map(|i| a.get(i, j) * y[i]).sum();
            prop_assert!((got[j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn row_extraction_rejects_out_of_range() {
    let mut r = stream(3);
    let conv = random_conv(&mut r, (1, 4, 4, 1, 3, 1, 0));
    assert!(matches!(conv.extract_rows(&[conv.rows()]), Err(Error::InvalidInput(_))));
}

#[test]
fn materialize_respects_cap() {
    let mut r = stream(4);
    let conv = random_conv(&mut r, (2, 6, 6, 3, 3, 1, 1));
    let err = conv.materialize(100).unwrap_err();
    assert!(matches!(err, Error::Capacity { requested: 7776, .. }), "{err}");
}

#[test]
fn scaled_operator_scales_output() {
    let mut r = stream(5);
    let conv = random_conv(&mut r, (1, 5, 5, 2, 3, 2, 1));
    let x = gaussian_vec(&mut r, conv.cols());
    let y = conv.apply(&x).unwrap();
    let ys = conv.scaled(-2.5).apply(&x).unwrap();
    for (a, b) in y.iter().zip(&ys) {
        assert!((b + 2.5 * a).abs() < 1e-12);
    }
}
