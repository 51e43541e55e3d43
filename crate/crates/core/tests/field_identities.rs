use proptest::prelude::*;
use slipflow::field::{self, ScalarField, VectorField};
use slipflow::grid::{build_grid, GeometryConfig, Grid};

fn grid(cells: [usize; 3]) -> Grid {
    build_grid(GeometryConfig::new(1.3, 0.9, 1.1, cells)).unwrap()
}

fn interior_max(g: &Grid, v: &[f64]) -> f64 {
    g.interior_nodes().map(|i| v[i].abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn curl_of_gradient_vanishes(values in prop::collection::vec(-1.0f64..1.0, 6 * 5 * 7)) {
        let g = grid([5, 4, 6]);
        let s = ScalarField::from_values(&g, values).unwrap();
        let c = field::curl(&field::gradient(&s));
        for k in 0..3 {
            prop_assert!(interior_max(&g, c.component(k)) <= 1e-13);
        }
    }

    #[test]
    fn divergence_of_curl_vanishes(values in prop::collection::vec(-1.0f64..1.0, 3 * 6 * 5 * 7)) {
        let g = grid([5, 4, 6]);
        let v = VectorField::from_flat(&g, &values);
        let d = field::divergence(&field::curl(&v));
        prop_assert!(interior_max(&g, d.values()) <= 1e-13);
    }

    #[test]
    fn gradient_is_linear(
        a in -3.0f64..3.0,
        x in prop::collection::vec(-1.0f64..1.0, 6 * 5 * 7),
        y in prop::collection::vec(-1.0f64..1.0, 6 * 5 * 7),
    ) {
        let g = grid([5, 4, 6]);
        let (sx, sy) = (ScalarField::from_values(&g, x).unwrap(), ScalarField::from_values(&g, y).unwrap());
        let lhs = field::gradient(&(&(a * &sx) + &sy));
        let rhs = &(a * &field::gradient(&sx)) + &field::gradient(&sy);
        prop_assert!((&lhs - &rhs).max_abs() <= 1e-11);
    }
}
