mod common;

use std::sync::Arc;

use common::{bundle, central_diff, latent, pairs, rel_err, trajectory, D};
use pgt_core::policy::{Adapter, AdapterKind, GoalLatent, PolicyBundle};
use pgt_core::rng::Rng;
use pgt_core::rollout::Trajectory;
use pgt_core::tuning::{bc_loss, ipo_loss, pgt_loss, slic_loss, traj_logratio, PreferencePair};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn check_latent_grad(
    name: &str,
    seed: u64,
    g: &GoalLatent,
    f: impl Fn(&GoalLatent) -> (f64, Vec<f64>),
) {
    let (_, analytic) = f(g);
    let fd = central_diff(&g.0, FD_STEP, |x| f(&GoalLatent(x.to_vec())).0);
    let err = rel_err(&analytic, &fd);
    assert!(
        err < FD_TOL,
        "{name} seed {seed}: rel err {err:e}\n  analytic {analytic:?}\n  fd {fd:?}"
    );
}

#[test]
fn pgt_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 4);
        let g_ref = latent(&mut rng, 0.5);
        let g = latent(&mut rng, 0.5);
        let beta = 0.2 + rng.next_f64();
        check_latent_grad("pgt", seed, &g, |x| {
            let r = pgt_loss(&ps, &b, &Adapter::none(), x, &g_ref, beta).unwrap();
            (r.loss, r.grad_g)
        });
    }
}

#[test]
fn ipo_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(100 + seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 4);
        let g_ref = latent(&mut rng, 0.5);
        let g = latent(&mut rng, 0.5);
        let beta = 0.2 + rng.next_f64();
        check_latent_grad("ipo", seed, &g, |x| {
            let r = ipo_loss(&ps, &b, &Adapter::none(), x, &g_ref, beta).unwrap();
            (r.loss, r.grad_g)
        });
    }
}

/// `L_win − L_lose` per pair under `g`, recovered from single-trajectory BC losses.
fn margins(b: &PolicyBundle, ps: &[PreferencePair], g: &GoalLatent) -> Vec<f64> {
    let lp = |t: &Trajectory| {
        -(t.len() as f64)
            * bc_loss(std::slice::from_ref(t), b, &Adapter::none(), g)
                .unwrap()
                .loss
    };
    ps.iter().map(|p| lp(&p.win) - lp(&p.lose)).collect()
}

#[test]
fn slic_gradient_matches_finite_differences_away_from_the_kink() {
    let mut checked = 0;
    let mut seed = 200;
    while checked < INSTANCES {
        seed += 1;
        let mut rng = Rng::new(seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 5);
        let positives: Vec<Arc<Trajectory>> = ps.iter().map(|p| Arc::clone(&p.win)).collect();
        let g = latent(&mut rng, 0.5);
        // place δ between two sorted margins so some hinges are active
        let mut m = margins(&b, &ps, &g);
        m.sort_by(f64::total_cmp);
        let delta = 0.5 * (m[2] + m[3]);
        if delta < 0.0 || m.iter().any(|x| (delta - x).abs() < 1e-2) {
            continue;
        }
        let lambda = 0.1;
        check_latent_grad("slic", seed, &g, |x| {
            let r = slic_loss(&ps, &positives, &b, &Adapter::none(), x, delta, lambda).unwrap();
            (r.loss, r.grad_g)
        });
        checked += 1;
    }
}

#[test]
fn bc_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(300 + seed);
        let b = bundle(&mut rng);
        let trajs: Vec<Trajectory> = (0..4).map(|k| trajectory(&mut rng, 1 + 2 * k)).collect();
        let g = latent(&mut rng, 0.5);
        check_latent_grad("bc", seed, &g, |x| {
            let r = bc_loss(&trajs, &b, &Adapter::none(), x).unwrap();
            (r.loss, r.grad_g)
        });
    }
}

#[test]
fn adapter_gradients_match_finite_differences() {
    for (k, kind) in [
        AdapterKind::Full,
        AdapterKind::LowRank,
        AdapterKind::BiasOnly,
    ]
    .into_iter()
    .enumerate()
    {
        for seed in 0..3 {
            let mut rng = Rng::new(400 + 10 * k as u64 + seed);
            let b = bundle(&mut rng);
            let ps = pairs(&mut rng, 3);
            let g_ref = latent(&mut rng, 0.5);
            let g = latent(&mut rng, 0.5);
            let mut adapter = Adapter::new(kind, &b.net, 2, &mut rng);
            for p in &mut adapter.params {
                *p += 0.05 * rng.normal();
            }
            let analytic = pgt_loss(&ps, &b, &adapter, &g, &g_ref, 0.6)
                .unwrap()
                .grad_params;
            assert_eq!(analytic.len(), adapter.trainable_count());
            let fd = central_diff(&adapter.params, FD_STEP, |x| {
                let a = Adapter {
                    params: x.to_vec(),
                    ..adapter.clone()
                };
                pgt_loss(&ps, &b, &a, &g, &g_ref, 0.6).unwrap().loss
            });
            let err = rel_err(&analytic, &fd);
            assert!(err < FD_TOL, "{kind} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn losses_at_the_reference_latent() {
    for seed in 0..5 {
        let mut rng = Rng::new(500 + seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 3 + seed as usize);
        let g = latent(&mut rng, 1.0);
        for beta in [0.2, 0.6, 1.0] {
            let dpo = pgt_loss(&ps, &b, &Adapter::none(), &g, &g, beta)
                .unwrap()
                .loss;
            assert!((dpo - std::f64::consts::LN_2).abs() <= 1e-12, "dpo {dpo}");
            let ipo = ipo_loss(&ps, &b, &Adapter::none(), &g, &g, beta)
                .unwrap()
                .loss;
            assert!(
                (ipo - 1.0 / (4.0 * beta * beta)).abs() <= 1e-12,
                "ipo {ipo}"
            );
        }
    }
}

#[test]
fn pair_order_does_not_change_loss_or_gradient() {
    let mut rng = Rng::new(600);
    let b = bundle(&mut rng);
    let ps = pairs(&mut rng, 8);
    let g_ref = latent(&mut rng, 0.5);
    let g = latent(&mut rng, 0.5);
    let first = pgt_loss(&ps, &b, &Adapter::none(), &g, &g_ref, 0.6).unwrap();
    for _ in 0..5 {
        let mut shuffled = ps.clone();
        rng.shuffle(&mut shuffled);
        let again = pgt_loss(&shuffled, &b, &Adapter::none(), &g, &g_ref, 0.6).unwrap();
        assert_eq!(first.loss.to_bits(), again.loss.to_bits());
        assert_eq!(first.grad_g, again.grad_g);
    }
}

#[test]
fn small_step_against_the_gradient_descends() {
    for seed in 0..10 {
        let mut rng = Rng::new(700 + seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 4);
        let g_ref = latent(&mut rng, 0.5);
        let g = latent(&mut rng, 0.5);
        let at = pgt_loss(&ps, &b, &Adapter::none(), &g, &g_ref, 0.6).unwrap();
        let norm = at.grad_g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let step = 1e-4 / norm.max(1e-12);
        let moved = GoalLatent(
            g.0.iter()
                .zip(&at.grad_g)
                .map(|(x, d)| x - step * d)
                .collect(),
        );
        let after = pgt_loss(&ps, &b, &Adapter::none(), &moved, &g_ref, 0.6)
            .unwrap()
            .loss;
        assert!(after < at.loss, "seed {seed}: {after} !< {}", at.loss);
    }
}

#[test]
fn bc_is_mean_per_step_negative_log_likelihood() {
    let mut rng = Rng::new(800);
    let b = bundle(&mut rng);
    let trajs: Vec<Trajectory> = (0..3).map(|k| trajectory(&mut rng, 2 + k)).collect();
    let g = latent(&mut rng, 0.5);
    let zero = GoalLatent::zeros(D);
    let loss = bc_loss(&trajs, &b, &Adapter::none(), &g).unwrap().loss;
    // a single trajectory's BC loss is −(L(g))/T; recover L(g) − L(0) both ways
    let direct: f64 = trajs
        .iter()
        .map(|t| {
            let own = bc_loss(std::slice::from_ref(t), &b, &Adapter::none(), &g)
                .unwrap()
                .loss;
            let at_zero = bc_loss(std::slice::from_ref(t), &b, &Adapter::none(), &zero)
                .unwrap()
                .loss;
            let h = traj_logratio(&b, &Adapter::none(), &g, &zero, t)
                .unwrap()
                .loss;
            assert!(((at_zero - own) * t.len() as f64 - h).abs() < 1e-9);
            own
        })
        .sum::<f64>()
        / 3.0;
    assert!((loss - direct).abs() < 1e-12);
}

#[test]
fn empty_inputs_are_rejected() {
    let mut rng = Rng::new(900);
    let b = bundle(&mut rng);
    let g = latent(&mut rng, 0.5);
    assert!(pgt_loss(&[], &b, &Adapter::none(), &g, &g, 0.6).is_err());
    assert!(bc_loss(&[], &b, &Adapter::none(), &g).is_err());
    let ps = pairs(&mut rng, 1);
    assert!(pgt_loss(&ps, &b, &Adapter::none(), &g, &g, 0.0).is_err());
    assert!(pgt_loss(
        &ps,
        &b,
        &Adapter::none(),
        &GoalLatent::zeros(D + 1),
        &g,
        0.6
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Bradley–Terry complement: σ(z) + σ(−z) = 1.
    #[test]
    fn swapping_a_pair_complements_its_probability(seed in 0u64..10_000, beta in 0.05f64..2.0) {
        let mut rng = Rng::new(seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 1);
        let swapped = vec![PreferencePair { win: Arc::clone(&ps[0].lose), lose: Arc::clone(&ps[0].win) }];
        let g_ref = latent(&mut rng, 0.5);
        let g = latent(&mut rng, 0.5);
        let l1 = pgt_loss(&ps, &b, &Adapter::none(), &g, &g_ref, beta).unwrap().loss;
        let l2 = pgt_loss(&swapped, &b, &Adapter::none(), &g, &g_ref, beta).unwrap().loss;
        prop_assert!(l1 >= 0.0 && l2 >= 0.0);
        prop_assert!(((-l1).exp() + (-l2).exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ipo_is_non_negative(seed in 0u64..10_000, beta in 0.05f64..2.0) {
        let mut rng = Rng::new(seed);
        let b = bundle(&mut rng);
        let ps = pairs(&mut rng, 3);
        let g = latent(&mut rng, 0.5);
        let g_ref = latent(&mut rng, 0.5);
        let l = ipo_loss(&ps, &b, &Adapter::none(), &g, &g_ref, beta).unwrap().loss;
        prop_assert!(l >= 0.0 && l.is_finite());
    }
}
