mod common;

use proptest::prelude::*;

use swarmtrack::control::{kkt_residual, solve_cbf_qp, CbfProblem};
use swarmtrack::Vec2;

fn problem(u: (f64, f64), l2: f64, grad: (f64, f64), nbrs: &[(f64, f64)], n_nbrs: usize) -> CbfProblem {
    CbfProblem {
        u_des: Vec2::new(u.0, u.1),
        dt: 0.1,
        d_max: 1.0,
        d_min: 1.0,
        epsilon: 0.25,
        lambda2: l2,
        lambda2_grad: Vec2::new(grad.0, grad.1),
        position: Vec2::zeros(),
        neighbors: nbrs[..n_nbrs].iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
        keep_connected: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solution_is_feasible_stationary_and_grid_optimal(
        u in (-30.0f64..30.0, -30.0f64..30.0),
        l2 in 0.0f64..2.0,
        grad in (-0.5f64..0.5, -0.5f64..0.5),
        nbrs in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 4),
        n_nbrs in 0usize..=4,
    ) {
        let p = problem(u, l2, grad, &nbrs, n_nbrs);
        prop_assume!(p.neighbors.iter().all(|x| x.norm() >= p.d_min));
        let s = solve_cbf_qp(&p);
        if s.fallback {
            // nothing on the grid may be feasible either
            prop_assert!(common::grid_search(&p, 1e-3).is_none());
            return Ok(());
        }
        prop_assert!(p.violation(&s.velocity()) <= 1e-8);
        prop_assert!(kkt_residual(&p, &s) <= 1e-6, "kkt {}", kkt_residual(&p, &s));
        if let Some((best, _)) = common::grid_search(&p, 1e-3) {
            prop_assert!(p.objective(&s.velocity()) <= best + 2e-3);
        }
    }
}

#[test]
fn travel_never_exceeds_d_max() {
    let p = problem((100.0, -40.0), 5.0, (0.0, 0.0), &[], 0);
    let u = solve_cbf_qp(&p).velocity();
    assert!(u.norm() * p.dt <= p.d_max + 1e-12);
}
