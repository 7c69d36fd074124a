mod common;

use common::{check_oracle_world, contention_trial, golden_file, golden_payloads, GOLDEN_CASES};

#[tokio::test]
async fn poll_payloads_match_golden_files() {
    let actual = golden_payloads().await;
    for case in GOLDEN_CASES {
        assert_eq!(actual[case], golden_file(case), "case {case}");
    }
    for (case, payload) in &actual {
        let keys: Vec<&String> = payload.as_object().unwrap().keys().collect();
        let want = if payload["status"] == 0 { 1 } else { 7 };
        assert_eq!(keys.len(), want, "{case}: {keys:?}");
    }
}

#[test]
fn selection_matches_brute_force_oracle() {
    let (mut polls, mut assigned) = (0, 0);
    for seed in 0..150 {
        let (p, a) = check_oracle_world(seed).unwrap();
        polls += p;
        assigned += a;
    }
    // the generator must produce real choices, not just empty worlds
    assert!(assigned * 4 > polls, "{assigned} of {polls} polls assigned");
}

#[test]
fn concurrent_polls_for_one_task_have_one_winner() {
    for trial in 0..60 {
        let workers = 2 + trial % 7;
        assert_eq!(contention_trial(workers), (1, 0), "trial {trial} with {workers} workers");
    }
}
