use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use cascadeforge::cascade::{calibrate_threshold, pass_rate_of};
use cascadeforge::dataset::{split, subsample, Dataset, Sample};
use cascadeforge::evaluation::f1_score;
use cascadeforge::features::{build_vocabulary, chi2_scores, vectorize_dataset, FeatureVector, TokenizerConfig};
use cascadeforge::ga::{run_ga, Bound, GaConfig};
use cascadeforge::linear_model::{loss, train, LabeledVectors, LogisticModel, SampleWeights, TrainConfig};
use cascadeforge::weighting::{sample_weight, WeightParams};

fn labeled(labels: &[u8]) -> Dataset {
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| Sample::new(i as u64 * 7 + 3, format!("doc {i}"), y).unwrap())
        .collect();
    Dataset::new("prop", samples).unwrap()
}

fn with_both(mut labels: Vec<u8>) -> Vec<u8> {
    labels[0] = 0;
    labels[1] = 1;
    labels
}

fn vectors(dim: usize, rows: &[Vec<(bool, f64)>]) -> Vec<FeatureVector> {
    rows.iter()
        .map(|row| {
            let entries = row
                .iter()
                .take(dim)
                .enumerate()
                .filter(|(_, (on, _))| *on)
                .map(|(j, (_, v))| (j, *v))
                .collect();
            FeatureVector::new(entries).unwrap()
        })
        .collect()
}

fn problem() -> impl Strategy<Value = (usize, LabeledVectors)> {
    (1usize..=5, 2usize..=20).prop_flat_map(|(dim, n)| {
        (
            Just(dim),
            prop::collection::vec(prop::collection::vec((any::<bool>(), 0.1f64..2.0), 5), n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(|(dim, rows, labels)| {
                let labels = with_both(labels);
                (dim, LabeledVectors::new(vectors(dim, &rows), labels).unwrap())
            })
    })
}

const WORDS: [&str; 6] = ["red", "Green", "blue,", "cyan!", "red's", "TEAL"];

fn corpus() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((prop::collection::vec(0usize..WORDS.len(), 1..6), 0u8..=1), 2..12).prop_map(|docs| {
        let labels = with_both(docs.iter().map(|d| d.1).collect());
        let samples = docs
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, ((words, _), y))| {
                let text: Vec<&str> = words.iter().map(|&w| WORDS[w]).collect();
                Sample::new(i as u64, text.join(" "), y).unwrap()
            })
            .collect();
        Dataset::new("corpus", samples).unwrap()
    })
}

fn weight_params() -> impl Strategy<Value = WeightParams> {
    (0.05f64..10.0, 0.05f64..10.0, 0.0f64..1.0, 0.0f64..9.0).prop_map(|(tp, tn, w_neg_min, extra)| {
        WeightParams::new(tp, tn, w_neg_min, (w_neg_min + extra).max(1.0)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_ids(labels in prop::collection::vec(0u8..=1, 3..200), seed in any::<u64>()) {
        let labels = with_both(labels);
        let d = labeled(&labels);
        let (a, b, c) = split(&d, (0.6, 0.2, 0.2), seed).unwrap();
        let mut ids: Vec<u64> = [a.ids(), b.ids(), c.ids()].concat();
        ids.sort_unstable();
        prop_assert_eq!(ids, d.ids());
        prop_assert_eq!(a.positives() + b.positives() + c.positives(), d.positives());
    }

    #[test]
    fn subsample_is_stratified_subset(labels in prop::collection::vec(0u8..=1, 20..200), fraction in 0.1f64..1.0, seed in any::<u64>()) {
        let labels = with_both(labels);
        let d = labeled(&labels);
        let s = match subsample(&d, fraction, seed) {
            Ok(s) => s,
            // Tiny classes may round to an empty quota; that is reported, not hidden.
            Err(_) => return Ok(()),
        };
        let all: BTreeSet<u64> = d.ids().into_iter().collect();
        prop_assert!(s.ids().iter().all(|id| all.contains(id)));
        prop_assert_eq!(s.len(), (fraction * d.len() as f64).round() as usize);
        prop_assert!(s.positives() > 0 && s.negatives() > 0);
    }

    #[test]
    fn doubled_weights_match_halved_learning_rate((dim, data) in problem(), seed in any::<u64>()) {
        let n = data.len();
        let base = TrainConfig { l2: 0.0, epochs: 5, batch_size: 4, seed, ..TrainConfig::default() };
        let ones = train(&data, dim, &SampleWeights::ones(n), &base).unwrap();
        let halved = TrainConfig { learning_rate: base.learning_rate / 2.0, ..base.clone() };
        let twos = train(&data, dim, &SampleWeights::new(vec![2.0; n]).unwrap(), &halved).unwrap();
        prop_assert_eq!(ones, twos);
    }

    #[test]
    fn full_batch_loss_does_not_increase((dim, data) in problem()) {
        let weights = SampleWeights::ones(data.len());
        let mut previous = loss(&LogisticModel::zeros(dim), &data, &weights, 0.0).unwrap();
        for epochs in 1..=10 {
            let cfg = TrainConfig { learning_rate: 0.01, epochs, l2: 0.0, batch_size: 20, ..TrainConfig::default() };
            let current = loss(&train(&data, dim, &weights, &cfg).unwrap(), &data, &weights, 0.0).unwrap();
            prop_assert!(current <= previous + 1e-12, "{} > {}", current, previous);
            previous = current;
        }
    }

    #[test]
    fn scores_stay_inside_unit_interval((dim, data) in problem(), raw in prop::collection::vec(-2.0f64..2.0, 6)) {
        let model = LogisticModel { weights: raw[..dim].to_vec(), bias: raw[5] };
        for v in &data.vectors {
            let s = model.predict_score(v).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn weights_are_monotone_and_bounded(p in weight_params(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for label in [0u8, 1] {
            let (w_lo, w_hi) = (sample_weight(lo, label, &p), sample_weight(hi, label, &p));
            prop_assert!(w_lo <= w_hi);
            prop_assert!(w_hi <= p.w_max && w_lo > 0.0);
        }
        prop_assert!(sample_weight(lo, 0, &p) >= p.w_neg_min);
    }

    #[test]
    fn chi2_is_nonnegative_and_order_free(d in corpus(), seed in any::<u64>()) {
        let cfg = TokenizerConfig::default();
        let scores = chi2_scores(&d, &cfg).unwrap();
        prop_assert!(scores.values().all(|&s| s >= 0.0 && s.is_finite()));

        let mut order: Vec<usize> = (0..d.len()).collect();
        order.rotate_left((seed % d.len() as u64) as usize);
        order.reverse();
        let shuffled = d.select("shuffled", &order);
        let again = chi2_scores(&shuffled, &cfg).unwrap();
        prop_assert_eq!(scores.keys().collect::<Vec<_>>(), again.keys().collect::<Vec<_>>());
        for (k, v) in &scores {
            prop_assert!((v - again[k]).abs() <= 1e-12 * v.max(1.0));
        }
    }

    #[test]
    fn doubling_the_corpus_keeps_the_top_features(d in corpus(), k in 1usize..8) {
        let cfg = TokenizerConfig::default();
        let samples: Vec<Sample> = d.samples().iter().chain(d.samples()).enumerate()
            .map(|(i, s)| Sample::new(i as u64, s.text.clone(), s.label).unwrap())
            .collect();
        let doubled = Dataset::new("doubled", samples).unwrap();
        let a = build_vocabulary(&d, &cfg, k).unwrap();
        let b = build_vocabulary(&doubled, &cfg, k).unwrap();
        let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
        prop_assert_eq!(set(a.features()), set(b.features()));
    }

    #[test]
    fn vectors_index_inside_vocabulary(d in corpus(), k in 1usize..8) {
        let cfg = TokenizerConfig::default();
        let vocab = build_vocabulary(&d, &cfg, k).unwrap();
        prop_assert!(vocab.len() <= k);
        for v in vectorize_dataset(&d, &vocab, &cfg) {
            prop_assert!(v.entries().iter().all(|&(j, _)| j < vocab.len()));
        }
    }

    #[test]
    fn calibration_hits_the_rate(n in 2usize..300, rate in 0.01f64..1.0, seed in any::<u64>()) {
        // Distinct scores: a scrambled permutation of 0..n.
        let scores: Vec<f64> = (0..n as u64)
            .map(|i| ((i.wrapping_mul(2654435761) ^ seed) % 1_000_003) as f64 + i as f64 / n as f64)
            .collect();
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        prop_assume!(distinct.len() == n);
        let th = calibrate_threshold(&scores, rate).unwrap();
        let achieved = pass_rate_of(&scores, th);
        prop_assert!(achieved >= rate - 1e-9 && achieved - rate < 1.0 / n as f64 + 1e-12);
    }

    #[test]
    fn gate_is_monotone(scores in prop::collection::vec(0.0f64..1.0, 1..100), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pass_rate_of(&scores, lo) >= pass_rate_of(&scores, hi));
    }

    #[test]
    fn f1_between_geometric_and_arithmetic_means(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        let f1 = f1_score(p, r);
        prop_assert!(f1 <= (p * r).sqrt() + 1e-15);
        prop_assert!((p * r).sqrt() <= (p + r) / 2.0 + 1e-15);
    }

    #[test]
    fn ga_respects_bounds_and_is_deterministic(
        lows in prop::collection::vec(-5.0f64..5.0, 1..5),
        width in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let bounds: Vec<Bound> = lows.iter().map(|&lo| Bound::new(lo, lo + width)).collect();
        let cfg = GaConfig { population_size: 8, generations: 5, seed, ..GaConfig::default() };
        let fitness = |g: &[f64]| -g.iter().map(|x| x.abs()).sum::<f64>();
        let a = run_ga(&fitness, &bounds, &cfg).unwrap();
        for population in &a.populations {
            for c in population {
                prop_assert!(c.iter().zip(&bounds).all(|(x, b)| *x >= b.lo && *x <= b.hi));
            }
        }
        let b = run_ga(&fitness, &bounds, &cfg).unwrap();
        prop_assert_eq!(&a, &b);

        let calls = AtomicUsize::new(0);
        let counted = |g: &[f64]| {
            calls.fetch_add(1, Ordering::Relaxed);
            fitness(g)
        };
        let c = run_ga(&counted, &bounds, &cfg).unwrap();
        let (pop, gens, elites) = (cfg.population_size, cfg.generations, cfg.elitism_count);
        prop_assert_eq!(calls.load(Ordering::Relaxed), c.evaluations);
        prop_assert_eq!(c.evaluations + c.cache_hits, pop * (gens + 1) - elites * gens);
    }
}

#[test]
fn ridge_shrinks_the_solution() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.gen_range(10..40);
        let dim = 4;
        let rows: Vec<Vec<(bool, f64)>> = (0..n)
            .map(|_| (0..dim).map(|_| (rng.gen_bool(0.6), rng.gen_range(0.1..2.0))).collect())
            .collect();
        let labels = with_both((0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect());
        let data = LabeledVectors::new(vectors(dim, &rows), labels).unwrap();
        let weights = SampleWeights::ones(n);
        let norm = |l2: f64| {
            let cfg = TrainConfig {
                l2,
                epochs: 200,
                batch_size: n,
                ..TrainConfig::default()
            };
            let m = train(&data, dim, &weights, &cfg).unwrap();
            m.weights.iter().map(|w| w * w).sum::<f64>()
        };
        assert!(norm(0.05) <= norm(0.0));
    }
}
