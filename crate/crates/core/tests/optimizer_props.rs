use fedge::optim::{
    client_local_update, fedavg_aggregate, pseudo_gradient, ClientUpdate, HyperParams,
    ServerOptState, Strategy,
};
use fedge::task::{QuadraticClient, Shard, Task};
use fedge::ParamVector;
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pv(v: Vec<f64>) -> ParamVector<f64> {
    ParamVector::new(v).unwrap()
}

fn vectors(dim: usize, len: usize) -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), len)
}

fn strategy() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop::sample::select(Strategy::ALL.to_vec())
}

fn bits(v: &ParamVector<f64>) -> Vec<u64> {
    v.as_slice().iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adamw_without_decay_is_adam(
        x0 in prop::collection::vec(-2.0f64..2.0, 5),
        grads in vectors(5, 30),
        lr in 1e-5f64..1e-1,
    ) {
        let mut hp = HyperParams::<f64>::defaults(Strategy::FedAdam);
        hp.server_lr = lr;
        hp.weight_decay = 0.0;
        let mut a = ServerOptState::new(Strategy::FedAdam, hp, 5).unwrap();
        let mut w = ServerOptState::new(Strategy::FedAdamW, hp, 5).unwrap();
        let (mut xa, mut xw) = (pv(x0.clone()), pv(x0));
        for g in grads {
            let g = pv(g);
            xa = a.step(&xa, &g).unwrap();
            xw = w.step(&xw, &g).unwrap();
            prop_assert_eq!(bits(&xa), bits(&xw));
        }
    }

    #[test]
    fn avgm_without_momentum_is_avg(
        x0 in prop::collection::vec(-2.0f64..2.0, 4),
        grads in vectors(4, 20),
        wd in 0.0f64..0.01,
    ) {
        let mut hp = HyperParams::<f64>::defaults(Strategy::FedAvgM);
        hp.momentum = 0.0;
        hp.weight_decay = wd;
        let mut m = ServerOptState::new(Strategy::FedAvgM, hp, 4).unwrap();
        let mut v = ServerOptState::new(Strategy::FedAvg, hp, 4).unwrap();
        let (mut xm, mut xv) = (pv(x0.clone()), pv(x0));
        for g in grads {
            let g = pv(g);
            xm = m.step(&xm, &g).unwrap();
            xv = v.step(&xv, &g).unwrap();
            prop_assert_eq!(bits(&xm), bits(&xv));
        }
    }

    #[test]
    fn coordinate_permutation_commutes_with_step(
        s in strategy(),
        x0 in prop::collection::vec(-2.0f64..2.0, 6),
        grads in vectors(6, 5),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let hp = HyperParams::<f64>::defaults(s);
        let mut plain = ServerOptState::new(s, hp, 6).unwrap();
        let mut permuted = ServerOptState::new(s, hp, 6).unwrap();
        let apply = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut x = pv(x0.clone());
        let mut y = pv(apply(&x0));
        for g in grads {
            x = plain.step(&x, &pv(g.clone())).unwrap();
            y = permuted.step(&y, &pv(apply(&g))).unwrap();
            prop_assert_eq!(bits(&pv(apply(x.as_slice()))), bits(&y));
            prop_assert_eq!(
                bits(&pv(apply(plain.momentum().as_slice()))),
                bits(permuted.momentum())
            );
            prop_assert_eq!(
                bits(&pv(apply(plain.velocity().as_slice()))),
                bits(permuted.velocity())
            );
        }
    }

    #[test]
    fn velocity_stays_non_negative(
        adamw in any::<bool>(),
        grads in vectors(3, 40),
    ) {
        let s = if adamw { Strategy::FedAdamW } else { Strategy::FedAdam };
        let mut st = ServerOptState::new(s, HyperParams::defaults(s), 3).unwrap();
        let mut x = ParamVector::<f64>::zeros(3);
        for g in grads {
            x = st.step(&x, &pv(g)).unwrap();
            prop_assert!(st.velocity().as_slice().iter().all(|&v| v >= 0.0));
        }
        prop_assert_eq!(st.round(), 40);
    }

    #[test]
    fn fedavg_displacement_is_linear_in_server_lr(
        x0 in prop::collection::vec(-2.0f64..2.0, 4),
        g in prop::collection::vec(-2.0f64..2.0, 4),
        lr in 1e-4f64..1.0,
        c in 0.1f64..10.0,
    ) {
        let mut hp = HyperParams::<f64>::defaults(Strategy::FedAvg);
        hp.weight_decay = 0.0;
        hp.server_lr = lr;
        let mut hp_c = hp;
        hp_c.server_lr = lr * c;
        let x = pv(x0);
        let g = pv(g);
        let a = ServerOptState::new(Strategy::FedAvg, hp, 4).unwrap().step(&x, &g).unwrap();
        let b = ServerOptState::new(Strategy::FedAvg, hp_c, 4).unwrap().step(&x, &g).unwrap();
        for i in 0..4 {
            let da = x[i] - a[i];
            let db = x[i] - b[i];
            prop_assert!((db - c * da).abs() <= 1e-12 * (1.0 + db.abs()));
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point(
        s in strategy(),
        x0 in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let mut hp = HyperParams::<f64>::defaults(s);
        hp.weight_decay = 0.0;
        let x = pv(x0);
        let next = ServerOptState::new(s, hp, 4).unwrap().step(&x, &ParamVector::zeros(4)).unwrap();
        prop_assert_eq!(bits(&next), bits(&x));
    }

    #[test]
    fn aggregate_matches_reference_mean(rows in vectors(3, 10)) {
        let updates: Vec<ClientUpdate<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ClientUpdate {
                client_id: i,
                params: pv(r.clone()),
                samples: 1,
                shard_len: 1,
                compute_time_s: 0.0,
            })
            .collect();
        let mean = fedavg_aggregate(&updates).unwrap();
        for j in 0..3 {
            let reference = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            prop_assert!((mean[j] - reference).abs() < 1e-12);
        }
        let x = pv(vec![0.5, -0.5, 1.0]);
        let g = pseudo_gradient(&x, &mean).unwrap();
        for j in 0..3 {
            let displacement = rows.iter().map(|r| r[j] - x[j]).sum::<f64>() / rows.len() as f64;
            prop_assert!((g[j] + displacement).abs() < 1e-12);
        }
    }
}

#[test]
fn single_client_identity_quadratic_converges_in_one_round() {
    let optimum = vec![3.0, -1.0, 0.5];
    let task = Task::quadratic(vec![QuadraticClient {
        optimum: optimum.clone(),
        curvature: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    }])
    .unwrap();
    let shard = Shard::new(0, (0..8).collect()).unwrap();
    let x0 = ParamVector::<f64>::zeros(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let update = client_local_update(&x0, &task, &shard, 1.0, 1, 8, &mut rng).unwrap();
    let mean = fedavg_aggregate(&[update]).unwrap();
    let g = pseudo_gradient(&x0, &mean).unwrap();
    let mut hp = HyperParams::defaults(Strategy::FedAvg);
    hp.server_lr = 1.0;
    hp.weight_decay = 0.0;
    let x1 = ServerOptState::new(Strategy::FedAvg, hp, 3)
        .unwrap()
        .step(&x0, &g)
        .unwrap();
    assert_eq!(x1.as_slice(), optimum.as_slice());
}

#[test]
fn f32_state_tracks_f64_state() {
    let hp64 = HyperParams::<f64>::defaults(Strategy::FedAdamW);
    let hp32 = HyperParams::<f32> {
        server_lr: hp64.server_lr as f32,
        client_lr: hp64.client_lr as f32,
        beta1: hp64.beta1 as f32,
        beta2: hp64.beta2 as f32,
        tau: hp64.tau as f32,
        weight_decay: hp64.weight_decay as f32,
        momentum: hp64.momentum as f32,
    };
    let mut a = ServerOptState::new(Strategy::FedAdamW, hp64, 2).unwrap();
    let mut b = ServerOptState::new(Strategy::FedAdamW, hp32, 2).unwrap();
    let mut x = ParamVector::new(vec![1.0f64, -1.0]).unwrap();
    let mut y = x.cast::<f32>();
    for k in 0..50 {
        let g = ParamVector::new(vec![(k as f64).sin(), 0.3]).unwrap();
        x = a.step(&x, &g).unwrap();
        y = b.step(&y, &g.cast()).unwrap();
    }
    for i in 0..2 {
        assert!((x[i] - y[i] as f64).abs() < 1e-5);
    }
}
