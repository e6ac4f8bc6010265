use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthrank_core::trainer::{
    train, AdamState, CrossEncoderModel, GroupDoc, ToyEncoderConfig, TrainConfig, TrainingBatch, TrainingGroup,
};

const WORDS: [&str; 16] = [
    "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lam", "mu", "nu", "xi", "omi",
    "pi",
];

fn text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn doc(rng: &mut ChaCha8Rng, id: usize) -> GroupDoc {
    GroupDoc { doc_id: format!("d{id}"), text: text(rng, 6) }
}

fn random_batch(rng: &mut ChaCha8Rng) -> TrainingBatch {
    let n_groups = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=4);
    let groups = (0..n_groups)
        .map(|g| TrainingGroup {
            query_id: format!("q{g}"),
            query_text: text(rng, 4),
            positive: doc(rng, 0),
            negatives: (1..=m).map(|i| doc(rng, i)).collect(),
        })
        .collect();
    TrainingBatch::new(groups).unwrap()
}

/// Worst relative error between analytic and central-difference gradients
/// over every trainable parameter; the denominator is floored at 1e-6.
fn worst_relative_error(mut model: CrossEncoderModel, batch: &TrainingBatch) -> f64 {
    let h = 1e-4;
    let (_, analytic) = model.loss_and_grad(batch).unwrap();
    let base = model.params_flat();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        model.set_params_flat(&p).unwrap();
        let up = model.loss_and_grad(batch).unwrap().0;
        p[i] = base[i] - h;
        model.set_params_flat(&p).unwrap();
        let down = model.loss_and_grad(batch).unwrap().0;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    model.set_params_flat(&base).unwrap();
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..24 {
        let cfg = ToyEncoderConfig {
            vocab_buckets: rng.gen_range(8..=40),
            embed_dim: rng.gen_range(2..=6),
            d_model: rng.gen_range(2..=6),
            max_len: rng.gen_range(7..=16),
            hash_seed: rng.gen(),
        };
        let model = CrossEncoderModel::toy(cfg, rng.gen()).unwrap();
        let batch = random_batch(&mut rng);
        let err = worst_relative_error(model, &batch);
        assert!(err <= 1e-4, "case {case} ({cfg:?}): relative error {err:e}");
    }
}

#[test]
fn loss_falls_on_separable_data() {
    // positives repeat the query words, negatives never do
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let groups: Vec<TrainingGroup> = (0..24)
        .map(|g| {
            let q: Vec<&str> = (0..3).map(|_| WORDS[rng.gen_range(0..8)]).collect();
            let neg = |rng: &mut ChaCha8Rng, i| GroupDoc {
                doc_id: format!("n{g}-{i}"),
                text: (0..4).map(|_| WORDS[rng.gen_range(8..16)]).collect::<Vec<_>>().join(" "),
            };
            TrainingGroup {
                query_id: format!("q{g}"),
                query_text: q.join(" "),
                positive: GroupDoc { doc_id: format!("p{g}"), text: format!("{} {}", q.join(" "), WORDS[12]) },
                negatives: (0..4).map(|i| neg(&mut rng, i)).collect(),
            }
        })
        .collect();
    let mut model = CrossEncoderModel::toy(ToyEncoderConfig::default(), 3).unwrap();
    let mut opt = AdamState::new(model.param_count());
    let cfg = TrainConfig { epochs: 5, ..Default::default() };
    let h = train(&mut model, &mut opt, &groups, &cfg, None).unwrap();
    let losses = h.losses();
    assert!(losses[4] < losses[0], "{losses:?}");
}
