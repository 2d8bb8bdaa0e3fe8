mod common;

use arhate::ensemble::{average_vote, majority_vote, ProbabilityMatrix, VoteConfig, VoteMode};
use arhate::Label;

fn matrices(models: &[Vec<[f64; 5]>]) -> Vec<ProbabilityMatrix> {
    models
        .iter()
        .map(|rows| {
            let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
            ProbabilityMatrix::new(ids, rows.clone()).unwrap()
        })
        .collect()
}

fn one_hot(c: usize) -> [f64; 5] {
    let mut r = [0.0; 5];
    r[c] = 1.0;
    r
}

fn patterns() -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..5 {
        for b in 0..5 {
            for c in 0..5 {
                out.push([a, b, c]);
            }
        }
    }
    out
}

#[test]
fn majority_matches_oracle_on_all_one_hot_patterns() {
    let pats = patterns();
    assert_eq!(pats.len(), 125);
    let models: Vec<Vec<[f64; 5]>> = (0..3).map(|m| pats.iter().map(|p| one_hot(p[m])).collect()).collect();
    let voted = majority_vote(&matrices(&models)).unwrap();
    for (i, p) in pats.iter().enumerate() {
        let rows: Vec<[f64; 5]> = p.iter().map(|c| one_hot(*c)).collect();
        assert_eq!(voted[i].index(), common::oracle_majority(&rows), "pattern {p:?}");
    }
}

#[test]
fn majority_matches_oracle_on_soft_patterns() {
    let mut rng = common::rng(77);
    let pats = patterns();
    for _ in 0..8 {
        let models: Vec<Vec<[f64; 5]>> = (0..3)
            .map(|m| pats.iter().map(|p| common::row_with_argmax(&mut rng, p[m])).collect())
            .collect();
        let voted = majority_vote(&matrices(&models)).unwrap();
        for (i, _) in pats.iter().enumerate() {
            let rows: Vec<[f64; 5]> = models.iter().map(|m| m[i]).collect();
            assert_eq!(voted[i].index(), common::oracle_majority(&rows));
        }
    }
}

#[test]
fn average_matches_oracle_on_random_triples() {
    let mut rng = common::rng(5);
    let models: Vec<Vec<[f64; 5]>> = (0..3).map(|_| (0..1000).map(|_| common::random_row(&mut rng)).collect()).collect();
    let (voted, combined) = average_vote(&matrices(&models), &[1.0, 1.0, 1.0]).unwrap();
    for i in 0..1000 {
        let rows: Vec<[f64; 5]> = models.iter().map(|m| m[i]).collect();
        assert_eq!(voted[i].index(), common::oracle_average(&rows));
        assert!((combined.rows()[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn one_sided_weights_copy_the_first_model() {
    let mut rng = common::rng(6);
    let models: Vec<Vec<[f64; 5]>> = (0..2).map(|_| (0..200).map(|_| common::random_row(&mut rng)).collect()).collect();
    let (voted, _) = average_vote(&matrices(&models), &[1.0, 0.0]).unwrap();
    let first: Vec<Label> = matrices(&models)[0].argmax_labels();
    assert_eq!(voted, first);
}

#[test]
fn misaligned_ids_are_rejected() {
    let a = ProbabilityMatrix::new(vec!["a".into(), "b".into()], vec![one_hot(0), one_hot(1)]).unwrap();
    let b = ProbabilityMatrix::new(vec!["a".into(), "c".into()], vec![one_hot(0), one_hot(1)]).unwrap();
    assert!(majority_vote(&[a.clone(), b.clone()]).is_err());
    assert!(average_vote(&[a, b], &[1.0, 1.0]).is_err());
}

#[test]
fn bad_weights_are_rejected() {
    let cfg = VoteConfig {
        mode: VoteMode::Average,
        weights: vec![1.0, -1.0],
    };
    assert!(cfg.resolved_weights(2).is_err());
    assert!(VoteConfig { weights: vec![1.0], ..cfg.clone() }.resolved_weights(2).is_err());
    assert!(VoteConfig { weights: vec![0.0, 0.0], ..cfg }.resolved_weights(2).is_err());
}
