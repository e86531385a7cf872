use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spinrally::arena::{ArenaConfig, ChainConfig, RallyEnv};
use spinrally::dynamics::AeroCoefficients;
use spinrally::eval::{rollout_settings, validated_seeds};
use spinrally::learner::{default_arch, Policy};
use spinrally::real2sim::*;
use spinrally::reward::StageIndex;
use spinrally::seedgen::RallySeed;
use spinrally::Vec3;

fn arena() -> ArenaConfig {
    ArenaConfig { chain: ChainConfig::four_joint(), ..ArenaConfig::default() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn lob(aero: AeroCoefficients, w0: Vec3) -> RallySeed {
    RallySeed { p0: Vec3::new(1.2, 0.1, 1.1), v0: Vec3::new(-5.5, -0.3, 1.0), w0, aero }
}

fn first_segment_fit(seed: &RallySeed, cfg: &Real2SimConfig, noise_mm: f64) -> AeroFit {
    let arena = arena();
    let mut rows = to_recording(&export_flight(seed, &arena, 1.5));
    if noise_mm > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, noise_mm).unwrap();
        for r in &mut rows {
            for x in &mut r.p_mm {
                *x += n.sample(&mut rng);
            }
        }
    }
    process_recording(&rows, cfg, &arena).unwrap().fit
}

#[test]
fn noiseless_round_trip_recovers_coefficients() {
    let w0 = Vec3::new(0.0, -30.0, 10.0);
    let seed = lob(AeroCoefficients::new(0.12, 0.04), w0);
    let fit = first_segment_fit(&seed, &Real2SimConfig { spin: w0, ..Real2SimConfig::default() }, 0.0);
    assert!(rel(fit.aero.k_d, 0.12) < 0.01, "{fit:?}");
    assert!(rel(fit.aero.k_m, 0.04) < 0.01, "{fit:?}");
}

#[test]
fn generated_seeds_round_trip() {
    let arena = arena();
    for seed in validated_seeds(5, &arena.fallback_ranges, &rollout_settings(&arena), 3) {
        let fit = first_segment_fit(&seed, &Real2SimConfig { spin: seed.w0, ..Real2SimConfig::default() }, 0.0);
        assert!(rel(fit.aero.k_d, seed.aero.k_d) < 0.01, "{fit:?} vs {:?}", seed.aero);
        assert!(rel(fit.aero.k_m, seed.aero.k_m) < 0.01, "{fit:?} vs {:?}", seed.aero);
    }
}

#[test]
fn ballistic_flight_fits_zero() {
    let seed = lob(AeroCoefficients::NONE, Vec3::zeros());
    let fit = first_segment_fit(&seed, &Real2SimConfig::default(), 0.0);
    assert!(fit.aero.k_d < 1e-6 && fit.aero.k_m == 0.0, "{fit:?}");
}

#[test]
fn noisy_round_trip_within_ten_percent() {
    let w0 = Vec3::new(0.0, -30.0, 10.0);
    let seed = lob(AeroCoefficients::new(0.12, 0.04), w0);
    let fit = first_segment_fit(&seed, &Real2SimConfig { spin: w0, ..Real2SimConfig::default() }, 2.0);
    assert!(rel(fit.aero.k_d, 0.12) < 0.1, "{fit:?}");
    assert!(rel(fit.aero.k_m, 0.04) < 0.1, "{fit:?}");
}

#[test]
fn free_fall_acceleration() {
    let pts: Vec<TrackPoint> = (0..60)
        .map(|i| {
            let t = i as f64 / 200.0;
            TrackPoint { t, p: Vec3::new(1.0 - 3.0 * t, 0.2 * t, 1.2 + 1.5 * t - 0.5 * 9.81 * t * t), filled: false }
        })
        .collect();
    let states = estimate_states(&pts, 7, SmoothingFilter::MovingAverage).unwrap();
    for s in &states[4..states.len() - 4] {
        assert!((s.a.z + 9.81).abs() <= 0.05, "a_z = {}", s.a.z);
    }
}

#[test]
fn masked_parabola_filled_within_a_millimetre() {
    let p = |t: f64| [1000.0 - 4000.0 * t, 300.0 * t, 1100.0 + 2000.0 * t - 0.5 * 9810.0 * t * t];
    for masked in [5, 17, 30] {
        let mut rows: Vec<RecordedSample> = (0..40).map(|i| i as f64 * 5.0).map(|t| RecordedSample::new(t, p(t * 1e-3))).collect();
        rows[masked] = RecordedSample::dropped(rows[masked].t_ms);
        let pts = fill_gaps(&rows).unwrap();
        let truth = Vec3::from(p(pts[masked].t)) * 1e-3;
        assert!(pts[masked].filled);
        assert!((pts[masked].p - truth).norm() <= 1e-3);
    }
}

#[test]
fn invalid_inbound_is_rejected() {
    let arena = Arc::new(arena());
    // Launched away from the robot: never crosses the net.
    let seed = RallySeed { p0: Vec3::new(0.5, 0.0, 1.0), v0: Vec3::new(3.0, 0.0, 1.0), w0: Vec3::zeros(), aero: AeroCoefficients::new(0.1, 0.0) };
    let rec = process_recording(&to_recording(&export_flight(&seed, &arena, 1.0)), &Real2SimConfig::default(), &arena).unwrap();
    let policy = Policy::new(default_arch(32, 2), -1.0, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(replay(&rec, &arena, &policy, 0, 0), Err(Real2SimError::InvalidInbound(_))));
}

#[test]
fn replay_matches_native_episodes() {
    let arena = Arc::new(arena());
    let policy = Policy::new(default_arch(32, 2), -1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let seeds = validated_seeds(30, &arena.fallback_ranges, &rollout_settings(&arena), 9);
    let tol = 2.0 * arena.physics_dt() + 1e-9;
    let mut contacts = 0;
    for (i, seed) in seeds.iter().enumerate() {
        let mut env = RallyEnv::new(Arc::clone(&arena), 1, i as u64);
        env.set_stage(StageIndex::TARGET);
        let mut obs = env.reset(Some(*seed));
        let native = loop {
            let out = env.step(&policy.act_mean(&obs)).unwrap();
            if let Some(ep) = out.info.episode {
                break (env.events().to_vec(), ep);
            }
            obs = out.observation;
        };
        let cfg = Real2SimConfig { spin: seed.w0, ..Real2SimConfig::default() };
        let rec = process_recording(&to_recording(&export_flight(seed, &arena, 3.0)), &cfg, &arena).unwrap();
        let replayed = replay(&rec, &arena, &policy, 1, i as u64).unwrap();
        let kinds = |e: &[spinrally::rally::RallyEvent]| e.iter().map(|x| x.kind).collect::<Vec<_>>();
        assert_eq!(kinds(&native.0), kinds(&replayed.events), "seed {i}");
        for (a, b) in native.0.iter().zip(&replayed.events) {
            assert!((a.time - b.time).abs() <= tol, "seed {i}: {:?} at {} vs {}", a.kind, a.time, b.time);
        }
        assert_eq!(native.1.terminal, replayed.summary.terminal);
        contacts += usize::from(native.1.caught);
    }
    eprintln!("racket contacts {contacts}");
    assert!(contacts > 0, "no episode exercised the hand-over to physics");
}

mod props {
    use proptest::prelude::*;
    use spinrally::real2sim::{fill_gaps, RecordedSample};

    proptest! {
        #[test]
        fn gap_filling_keeps_present_samples(
            coeffs in prop::array::uniform3((-5e3..5e3f64, -5e3..5e3f64)),
            mask in prop::collection::vec(prop::bool::weighted(0.8), 12..60),
        ) {
            let mut mask = mask;
            mask[..5].iter_mut().for_each(|m| *m = true);
            let rows: Vec<RecordedSample> = mask
                .iter()
                .enumerate()
                .map(|(i, &present)| {
                    let t = i as f64 * 5.0;
                    let s = t * 1e-3;
                    let p = coeffs.map(|(v, a)| 500.0 + v * s + 0.5 * a * s * s);
                    if present { RecordedSample::new(t, p) } else { RecordedSample::dropped(t) }
                })
                .collect();
            let pts = fill_gaps(&rows).unwrap();
            prop_assert_eq!(pts.len(), rows.len());
            for (r, p) in rows.iter().zip(&pts) {
                prop_assert_eq!(p.filled, !r.present);
                prop_assert_eq!(p.t, r.t_ms * 1e-3);
                if r.present {
                    prop_assert_eq!(p.p, spinrally::Vec3::from(r.p_mm) * 1e-3);
                }
            }
        }
    }
}

#[test]
fn replay_is_deterministic() {
    let arena = Arc::new(arena());
    let policy = Policy::new(default_arch(32, 2), -1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let seed = validated_seeds(1, &arena.fallback_ranges, &rollout_settings(&arena), 4)[0];
    let rec = process_recording(&to_recording(&export_flight(&seed, &arena, 3.0)), &Real2SimConfig::default(), &arena).unwrap();
    let a = replay(&rec, &arena, &policy, 8, 0).unwrap();
    let b = replay(&rec, &arena, &policy, 8, 0).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.summary, b.summary);
}
