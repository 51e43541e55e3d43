use std::f64::consts::PI;

use proptest::prelude::*;
use slipflow::field::{self, ScalarField, VectorField};
use slipflow::grid::{build_grid, GeometryConfig, Grid};
use slipflow::norm::{norm, NormKind};
use slipflow::picard::inflow_l2;
use slipflow::transport::{apply_s, jacobian_bound, TransportField};

fn grid(cells: [usize; 3]) -> Grid {
    build_grid(GeometryConfig::new(2.0, 1.0, 1.0, cells)).unwrap()
}

/// Smooth transport velocity tangential to the lateral walls.
fn swirl(g: &Grid, amp: f64) -> TransportField {
    TransportField::from_velocity(VectorField::from_fn(g, |x| {
        [
            1.0 + amp * (PI * x[1]).cos() * (PI * x[2]).cos(),
            amp * (PI * x[1]).sin() * (0.5 * PI * x[0]).cos(),
            -amp * (PI * x[2]).sin() * (0.5 * PI * x[0]).sin(),
        ]
    }))
    .unwrap()
}

#[test]
fn transport_residual_decreases_at_first_order() {
    let residual = |n: usize| {
        let g = grid([2 * n, n, n]);
        let tf = swirl(&g, 0.05);
        let v = ScalarField::from_fn(&g, |x| (0.5 * PI * x[0]).sin() * (PI * x[1]).cos() + 0.3);
        let w_in = ScalarField::from_fn(&g, |x| (PI * x[1]).cos() * (PI * x[2]).cos());
        let s = apply_s(&tf, &v, &w_in).unwrap();
        let gs = field::gradient(&s);
        let adv = tf.velocity().dot(&gs);
        let r = &adv - &v;
        let (mut num, mut den) = (0.0, 0.0);
        for idx in g.interior_nodes() {
            let w = g.volume_weight(g.coords(idx));
            num += w * r.values()[idx].powi(2);
            den += w;
        }
        (num / den).sqrt()
    };
    let e: Vec<f64> = [4, 8, 16].into_iter().map(residual).collect();
    for pair in e.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!(order >= 0.9, "residuals {e:?}");
    }
}

fn random_field(g: &Grid, values: &[f64]) -> ScalarField {
    ScalarField::from_values(g, values.iter().cycle().take(g.len()).copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn s_is_affine_in_source(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        v1 in prop::collection::vec(-1.0f64..1.0, 64),
        v2 in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let g = grid([8, 4, 4]);
        let tf = swirl(&g, 0.04);
        let zero = ScalarField::zeros(&g);
        let (f1, f2) = (random_field(&g, &v1), random_field(&g, &v2));
        let lhs = apply_s(&tf, &(&(a * &f1) + &(b * &f2)), &zero).unwrap();
        let rhs = &(a * &apply_s(&tf, &f1, &zero).unwrap()) + &(b * &apply_s(&tf, &f2, &zero).unwrap());
        prop_assert!((&lhs - &rhs).max_abs() < 1e-12);
    }

    #[test]
    fn slice_norm_estimate_holds(
        amp in 0.0f64..0.08,
        v in prop::collection::vec(-1.0f64..1.0, 97),
        w in prop::collection::vec(-1.0f64..1.0, 53),
    ) {
        let g = grid([8, 4, 4]);
        let tf = swirl(&g, amp);
        let (v, w_in) = (random_field(&g, &v), random_field(&g, &w));
        let j = jacobian_bound(&tf).unwrap();
        let lhs = norm(&apply_s(&tf, &v, &w_in).unwrap(), NormKind::LinfL2).unwrap();
        let rhs = (1.0 + j) * (inflow_l2(&w_in).unwrap() + 8f64.sqrt() * norm(&v, NormKind::Lp(2.0)).unwrap());
        prop_assert!(lhs <= rhs, "{lhs} > {rhs}");
    }
}
