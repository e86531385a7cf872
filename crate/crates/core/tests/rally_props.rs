use std::collections::BTreeSet;

use proptest::prelude::*;
use spinrally::dynamics::BallState;
use spinrally::rally::*;
use spinrally::Vec3;

fn ev(kind: EventKind) -> RallyEvent {
    RallyEvent::new(kind, 0.0, BallState::at_rest(Vec3::zeros()))
}

fn kind() -> impl Strategy<Value = EventKind> {
    prop::sample::select(EventKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn states_move_at_most_one_step(events in prop::collection::vec(kind(), 0..60)) {
        let mut cur = TrajectoryState::T0;
        for k in events {
            if let Some(next) = auto_advance(cur) {
                if cur != TrajectoryState::T0 {
                    prop_assert_eq!(next.index(), (cur.index() + 1) % 8);
                    cur = next;
                    continue;
                }
            }
            match advance_state(cur, &ev(k)) {
                Transition::Next(next) => {
                    let d = (next.index() + 8 - cur.index()) % 8;
                    prop_assert!(d <= 1, "{:?} --{:?}--> {:?}", cur, k, next);
                    cur = next;
                }
                Transition::Terminal(_) => break,
            }
        }
    }

    #[test]
    fn validity_is_decided_by_a_prefix(kinds in prop::collection::vec(kind(), 0..12), tail in prop::collection::vec(kind(), 0..6)) {
        // Once valid, appending events never changes the verdict.
        if is_valid_rally_kinds(kinds.iter().copied()) {
            prop_assert!(is_valid_rally_kinds(kinds.iter().chain(&tail).copied()));
        }
    }

    #[test]
    fn valid_rallies_have_the_expected_shape(crossings in 1usize..4, tail in prop::collection::vec(kind(), 0..4)) {
        let mut kinds = vec![EventKind::Launch];
        kinds.extend(std::iter::repeat_n(EventKind::NetCrossed, crossings));
        kinds.push(EventKind::BounceRobotCourt);
        kinds.extend(tail);
        prop_assert!(is_valid_rally_kinds(kinds.iter().copied()));
        let without_net = kinds.iter().copied().filter(|k| *k != EventKind::NetCrossed);
        prop_assert!(!is_valid_rally_kinds(without_net));
    }
}

#[test]
fn every_machine_terminal_is_reachable() {
    let mut seen = BTreeSet::new();
    for s in TrajectoryState::ALL {
        for k in EventKind::ALL {
            if let Transition::Terminal(r) = advance_state(s, &ev(k)) {
                seen.insert(r);
            }
        }
    }
    // The time limit is imposed by the environment, not by events.
    let expected: BTreeSet<_> = TerminalReason::ALL.into_iter().filter(|r| *r != TerminalReason::Timeout).collect();
    assert_eq!(seen, expected);
}

#[test]
fn full_cycle_returns_to_start() {
    use EventKind as E;
    use TrajectoryState as S;
    let mut cur = S::T0;
    let script = [E::Launch, E::NetCrossed, E::BounceRobotCourt, E::RacketContact, E::NetCrossed, E::BounceOpponentCourt, E::Launch];
    let mut visited = vec![cur];
    for k in script {
        while let Some(next) = auto_advance(cur).filter(|_| cur != S::T0) {
            cur = next;
            visited.push(cur);
        }
        match advance_state(cur, &ev(k)) {
            Transition::Next(n) => cur = n,
            Transition::Terminal(r) => panic!("{r:?} at {cur:?} on {k:?}"),
        }
        if visited.last() != Some(&cur) {
            visited.push(cur);
        }
    }
    assert_eq!(visited, vec![S::T0, S::T01, S::T1, S::T12, S::T2, S::T23, S::T3, S::T30, S::T0]);
}

#[test]
fn names_round_trip() {
    for r in TerminalReason::ALL {
        assert_eq!(TerminalReason::parse(r.as_str()), Some(r));
    }
}
