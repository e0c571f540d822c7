mod common;

use common::*;
use crossword::assignment::Config;
use crossword::protocol::Mode;

#[test]
fn every_candidate_survives_a_leader_and_follower_crash() {
    for (q, c) in [(3, 3), (4, 2), (5, 1)] {
        for starve in [false, true] {
            let o = durability(Mode::Crossword, Some(Config { q, c }), &[0, 2], starve, 7);
            assert!(o.recovered, "({q},{c}) starve={starve}: {o:?}");
        }
    }
}

#[test]
fn starving_leaves_exactly_a_quorum_holding_shards() {
    let o = durability(Mode::Crossword, Some(Config { q: 4, c: 2 }), &[3, 4], true, 3);
    assert_eq!(o.acked_by, vec![0, 1, 2, 3]);
    assert!(o.recovered);
}

#[test]
fn rspaxos_loses_a_value_to_two_crashes() {
    let o = durability(Mode::RsPaxos, None, &[0, 1], true, 1);
    assert!(!o.recovered);
    assert_eq!(o.surviving_shards, 2);
}

#[test]
fn multipaxos_survives_any_two_crashes() {
    for crashed in two_subsets(5) {
        let o = durability(Mode::MultiPaxos, None, &crashed, false, 5);
        assert!(o.recovered, "{crashed:?}: {o:?}");
    }
}
