use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use swarmtrack::estimation::{finalize_estimate, kf_predict, kf_update, run_consensus, Belief, InfoPair};
use swarmtrack::graph::{default_sigma, CommGraph};
use swarmtrack::netsim::local_views;
use swarmtrack::world::Measurement;
use swarmtrack::Vec2;

fn spd(n: usize, entries: &[f64], floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |i, j| entries[(i * n + j) % entries.len()]);
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// Information-form update written out independently of the moment form.
fn info_oracle(prior: &Belief, m: &Measurement) -> (DMatrix<f64>, DVector<f64>) {
    let omega0 = prior.p.clone().try_inverse().unwrap();
    let rinv = m.r.clone().try_inverse().unwrap();
    let omega = &omega0 + m.h.transpose() * &rinv * &m.h;
    let q = &omega0 * &prior.z + m.h.transpose() * &rinv * &m.y;
    (omega, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn update_matches_information_filter(
        targets in 1usize..=3,
        rows in 1usize..=4,
        vals in prop::collection::vec(-1.0f64..1.0, 64),
        noise in prop::collection::vec(0.2f64..3.0, 12),
    ) {
        let n = 2 * targets;
        let r_rows = rows * targets;
        let p = spd(n, &vals, 0.5);
        let z = DVector::from_fn(n, |i, _| vals[(i * 7) % 64] * 5.0);
        let h = DMatrix::from_fn(r_rows, n, |i, j| vals[(3 * i + 5 * j + 11) % 64]);
        let r = DMatrix::from_diagonal(&DVector::from_fn(r_rows, |i, _| noise[i % 12]));
        let y = DVector::from_fn(r_rows, |i, _| vals[(i * 13 + 1) % 64] * 3.0);
        let a = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |i, j| 0.1 * vals[(i + 2 * j + 5) % 64]);
        let q = spd(n, &vals[8..], 0.01) * 0.1;

        let pred = kf_predict(&Belief::new(z.clone(), p.clone()), &a, &q);
        prop_assert!((&pred.z - &a * &z).amax() < 1e-9);
        prop_assert!((&pred.p - (&a * &p * a.transpose() + &q)).amax() < 1e-9);

        let m = Measurement { robot: 0, y, h, r };
        let post = kf_update(&pred, &m);
        let (omega, qv) = info_oracle(&pred, &m);
        let scale = omega.amax().max(1.0);
        prop_assert!((post.to_info().omega - &omega).amax() <= 1e-9 * scale);
        let z_oracle = omega.clone().try_inverse().unwrap() * &qv;
        prop_assert!((&post.z - z_oracle).amax() <= 1e-9 * (1.0 + post.z.amax()));
        let back = finalize_estimate(&post.to_info());
        prop_assert!((back.p - &post.p).amax() <= 1e-9 * (1.0 + post.p.amax()));
    }

    #[test]
    fn consensus_reaches_the_initial_mean(
        n in 2usize..=8,
        pts in prop::collection::vec((0.0f64..6.0, 0.0f64..6.0), 8),
        vals in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let xs: Vec<Vec2> = pts[..n].iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let r = 7.0;
        let g = CommGraph::build(&xs, r, default_sigma(r));
        prop_assume!(g.is_connected());
        let init: Vec<InfoPair> = (0..n)
            .map(|i| InfoPair {
                omega: spd(2, &vals[i..], 0.3),
                q: DVector::from_vec(vec![vals[i + 3], vals[i + 9]]),
            })
            .collect();
        let mean_omega = init.iter().fold(DMatrix::zeros(2, 2), |a, s| a + &s.omega) / n as f64;
        let mean_q = init.iter().fold(DVector::zeros(2), |a, s| a + &s.q) / n as f64;
        let out = run_consensus(&local_views(&g), init, 1e-12, None);
        prop_assert!(out.rounds <= 50 * n);
        for s in &out.states {
            prop_assert!((&s.omega - &out.states[0].omega).amax() <= 1e-8);
            prop_assert!((&s.omega - &mean_omega).amax() <= 1e-6);
            prop_assert!((&s.q - &mean_q).amax() <= 1e-6);
        }
    }
}

#[test]
fn post_consensus_estimates_agree() {
    let xs = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(4.0, 1.0), Vec2::new(1.0, 3.0)];
    let g = CommGraph::build(&xs, 5.0, default_sigma(5.0));
    let beliefs: Vec<Belief> = (0..4)
        .map(|i| {
            let p = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5 + i as f64, 1.0, 2.0, 0.3 * (i + 1) as f64]));
            Belief::new(DVector::from_vec(vec![i as f64, 1.0, -2.0, 0.5 * i as f64]), p)
        })
        .collect();
    let out = run_consensus(&local_views(&g), beliefs.iter().map(Belief::to_info).collect(), 1e-8, None);
    assert!(out.converged);
    let fin: Vec<Belief> = out.states.iter().map(finalize_estimate).collect();
    for b in &fin {
        assert!((&b.z - &fin[0].z).amax() < 1e-6);
    }
}
