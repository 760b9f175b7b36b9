use std::collections::{BTreeMap, BTreeSet};

use fedms::data::{
    emd, encode_idx, label_distribution, maverick_partition, parse_idx, synth_blobs, EmdMetric, LabeledDataset,
};
use fedms::selection::{accumulate_scores, sample_cohort, selection_probabilities, ContributionState};
use fedms::shapley::{class_difficulty, ClassShapleyMatrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter_map("nonzero mass", |v| {
        let total: f64 = v.iter().sum();
        (total > 1e-6).then(|| v.iter().map(|x| x / total).collect())
    })
}

#[test]
fn partition_invariants_over_many_seeds() {
    let data = synth_blobs(5, 37, 2, 1.0, 0).unwrap();
    for seed in 0..100u64 {
        let clients = 3 + (seed % 5) as usize;
        let spec: BTreeMap<usize, BTreeSet<usize>> = if seed % 2 == 0 {
            [(4, [0].into())].into()
        } else {
            [(4, [0, 1].into()), (2, [clients - 1].into())].into()
        };
        let part = maverick_partition(&data, clients, &spec, seed).unwrap();

        let mut seen: Vec<usize> = part.assignments.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..data.len()).collect::<Vec<_>>(), "every sample exactly once");

        for class in 0..5 {
            let counts: Vec<usize> = part
                .assignments
                .iter()
                .map(|a| a.iter().filter(|&&i| data.labels()[i] == class).count())
                .collect();
            match spec.get(&class) {
                Some(owners) => {
                    for (id, &n) in counts.iter().enumerate() {
                        assert_eq!(n > 0, owners.contains(&id), "seed {seed} class {class}");
                    }
                    let held: Vec<usize> = owners.iter().map(|&o| counts[o]).collect();
                    assert!(held.iter().max().unwrap() - held.iter().min().unwrap() <= 1);
                }
                None => assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1),
            }
        }
    }
}

#[test]
fn label_distribution_of_a_lone_maverick_class_is_concentrated() {
    let data = synth_blobs(3, 10, 2, 1.0, 0).unwrap();
    let part = maverick_partition(&data, 4, &[(2, [3].into())].into(), 1).unwrap();
    let dist = label_distribution(&part, &data, 3).unwrap();
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(dist[2] > 0.5);
    assert_eq!(label_distribution(&part, &data, 0).unwrap()[2], 0.0);
}

proptest! {
    #[test]
    fn emd_is_a_metric(p in distribution(5), q in distribution(5), r in distribution(5), ordered in any::<bool>()) {
        let metric = if ordered { EmdMetric::Ordered } else { EmdMetric::Categorical };
        let d = |a: &[f64], b: &[f64]| emd(a, b, metric).unwrap();
        prop_assert!(d(&p, &p).abs() < 1e-12);
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-12);
        prop_assert!(d(&p, &q) >= 0.0);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
    }

    #[test]
    fn idx_round_trip(rows in 1usize..5, cols in 1usize..5, labels in prop::collection::vec(0usize..10, 1..20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..labels.len() * rows * cols)
            .map(|_| f64::from(rand::Rng::random::<u8>(&mut rng)) / 255.0)
            .collect();
        let data = LabeledDataset::new(features, labels, rows * cols, 10).unwrap();
        let (images, label_bytes) = encode_idx(&data, rows, cols).unwrap();
        let back = parse_idx(&images, &label_bytes, 10).unwrap();
        prop_assert_eq!(back.labels(), data.labels());
        for (a, b) in back.features().iter().zip(data.features()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulated_scores_stay_between_old_and_new(
        alpha in 0.0f64..=1.0,
        old in prop::collection::vec(-1.0f64..1.0, 3),
        new in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let mut state = ContributionState::new(2, 3, alpha, 1.0).unwrap();
        state.accumulated[1] = old.clone();
        let phi = ClassShapleyMatrix { round: 0, values: vec![new.clone()] };
        accumulate_scores(&mut state, &phi, &[1], alpha).unwrap();
        for c in 0..3 {
            let (lo, hi) = (old[c].min(new[c]), old[c].max(new[c]));
            prop_assert!(state.accumulated[1][c] >= lo - 1e-12 && state.accumulated[1][c] <= hi + 1e-12);
        }
        prop_assert_eq!(&state.accumulated[0], &vec![0.0; 3]);
    }

    #[test]
    fn sampled_cohorts_are_distinct_and_sorted(scores in prop::collection::vec(-3.0f64..3.0, 2..12), seed in any::<u64>()) {
        let p = selection_probabilities(&scores);
        let m = 1 + (seed as usize) % scores.len();
        let cohort = sample_cohort(&p, m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(cohort.len(), m);
        prop_assert!(cohort.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn higher_scores_never_get_lower_probability(scores in prop::collection::vec(-5.0f64..5.0, 2..10)) {
        let p = selection_probabilities(&scores);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn harder_classes_weigh_more(acc in prop::collection::vec(0.0f64..=1.0, 2..8), t in 0.05f64..5.0) {
        let beta = class_difficulty(&acc, t).unwrap();
        prop_assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..acc.len() {
            for j in 0..acc.len() {
                if acc[i] < acc[j] {
                    prop_assert!(beta[i] >= beta[j]);
                }
            }
        }
    }
}

#[test]
fn one_hot_probabilities_pick_their_client() {
    let cohort = sample_cohort(&[0.0, 0.0, 1.0, 0.0], 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(cohort, vec![2]);
}
