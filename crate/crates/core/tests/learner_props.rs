use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinrally::exec::Exec;
use spinrally::learner::net::gaussian_log_prob;
use spinrally::learner::ppo::loss_and_grad;
use spinrally::learner::*;

/// Direct sum of discounted TD errors, cut at the first episode end.
fn gae_brute(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for l in t..n {
                let live = if d[l] { 0.0 } else { 1.0 };
                acc += w * (r[l] + gamma * next(l) * live - v[l]);
                if d[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            acc
        })
        .collect()
}

fn segment() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0, n),
            prop::collection::vec(-5.0..5.0, n),
            prop::collection::vec(prop::bool::weighted(0.15), n),
        )
    })
}

proptest! {
    #[test]
    fn gae_matches_direct_sum((r, v, d) in segment(), boot in -5.0..5.0, gamma in 0.5..1.0, lambda in 0.0..1.0) {
        let (adv, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda);
        let brute = gae_brute(&r, &v, &d, boot, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - brute[t]).abs() <= 1e-10, "t={} {} vs {}", t, adv[t], brute[t]);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn moment_merge_is_associative(xs in prop::collection::vec(prop::collection::vec(-100.0..100.0, 3), 3..60), cut in (0.0..1.0, 0.0..1.0)) {
        let n = xs.len();
        let (mut i, mut j) = (((cut.0 * n as f64) as usize).min(n), ((cut.1 * n as f64) as usize).min(n));
        if i > j {
            std::mem::swap(&mut i, &mut j);
        }
        let part = |s: &[Vec<f64>]| RunningMoments::from_batch(3, s.iter().map(Vec::as_slice));
        let (a, b, c) = (part(&xs[..i]), part(&xs[i..j]), part(&xs[j..]));
        let left = a.merge(&b).merge(&c);
        let right = a.merge(&b.merge(&c));
        let whole = part(&xs);
        prop_assert_eq!(left.count, whole.count);
        for k in 0..3 {
            let scale = 1.0 + whole.m2[k].abs();
            prop_assert!((left.mean[k] - right.mean[k]).abs() <= 1e-9 && (left.mean[k] - whole.mean[k]).abs() <= 1e-9);
            prop_assert!((left.m2[k] - right.m2[k]).abs() <= 1e-9 * scale && (left.m2[k] - whole.m2[k]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn welford_matches_two_pass(xs in prop::collection::vec(prop::collection::vec(-1e3..1e3, 2), 1..80)) {
        let mut m = RunningMoments::new(2);
        for x in &xs {
            m.update(x);
        }
        let two = RunningMoments::from_batch(2, xs.iter().map(Vec::as_slice));
        for k in 0..2 {
            prop_assert!((m.mean[k] - two.mean[k]).abs() <= 1e-9);
            prop_assert!((m.m2[k] - two.m2[k]).abs() <= 1e-9 * (1.0 + two.m2[k]));
        }
    }
}

fn arch() -> NetArch {
    NetArch { obs_dim: 5, act_dim: 3, width: 6, depth: 2 }
}

/// A small dataset whose behaviour log-probs sit near the current policy so
/// most samples lie inside the clip range.
fn dataset(net: &PolicyNet, n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let a = arch();
    let mut d = Dataset::new(a.obs_dim, a.act_dim);
    for _ in 0..n {
        let obs: Vec<f64> = (0..a.obs_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = net.forward(&obs);
        let act: Vec<f64> = out.mean.iter().map(|m| m + rng.random_range(-0.5..0.5)).collect();
        let logp = gaussian_log_prob(&act, &out.mean, &out.log_std) + rng.random_range(-spread..=spread);
        d.push(&obs, &act, logp, rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
    }
    d
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let cfg = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
    for case in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let net = PolicyNet::init(arch(), -0.5, &mut rng);
        let data = dataset(&net, 12, 0.05, &mut rng);
        let idx: Vec<usize> = (0..data.len()).collect();
        let (_, grad) = loss_and_grad(&net, &data, &idx, &cfg, Exec::Sequential);
        let loss = |p: &[f64]| {
            let n = PolicyNet::from_params(arch(), p.to_vec()).unwrap();
            loss_and_grad(&n, &data, &idx, &cfg, Exec::Sequential).0.total(&cfg)
        };
        let h = 1e-6;
        for k in 0..net.len() {
            let mut p = net.params.clone();
            p[k] += h;
            let up = loss(&p);
            p[k] -= 2.0 * h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-4 * (1.0 + fd.abs()), "case {case} param {k}: fd {fd} analytic {}", grad[k]);
        }
    }
}

#[test]
fn clip_fraction_is_a_fraction() {
    let cfg = PpoConfig::default();
    for spread in [0.0, 0.1, 0.5, 3.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PolicyNet::init(arch(), -0.5, &mut rng);
        let data = dataset(&net, 300, spread, &mut rng);
        let idx: Vec<usize> = (0..data.len()).collect();
        let (parts, _) = loss_and_grad(&net, &data, &idx, &cfg, Exec::Sequential);
        assert!((0.0..=1.0).contains(&parts.clip_fraction), "{}", parts.clip_fraction);
        assert!(parts.kl >= 0.0);
        if spread == 0.0 {
            assert!(parts.clip_fraction < 1e-9);
        }
    }
}

#[test]
fn sequential_and_parallel_gradients_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = PolicyNet::init(arch(), -0.5, &mut rng);
    let data = dataset(&net, 700, 0.3, &mut rng);
    let idx: Vec<usize> = (0..data.len()).collect();
    let cfg = PpoConfig::default();
    let (a, ga) = loss_and_grad(&net, &data, &idx, &cfg, Exec::Sequential);
    let (b, gb) = loss_and_grad(&net, &data, &idx, &cfg, Exec::Parallel);
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}
