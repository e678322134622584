use reach_core::fixtures::{als_train, generate, rmse, split_holdout, SynthSpec, TrainConfig};

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        users: 300,
        items: 150,
        dim: 4,
        seed,
        ..SynthSpec::default()
    }
}

/// On data planted with four factors, a four-dimensional model generalizes at
/// least as well as a one-dimensional one.
#[test]
fn capacity_oracle_over_seeds() {
    for seed in 0..3 {
        let (table, _) = generate(&spec(seed)).unwrap();
        let (train, test) = split_holdout(&table, 0.2, seed).unwrap();
        let test_rmse = |dim: usize| {
            let cfg = TrainConfig {
                dim,
                // At 10% density the default lambda lets d=4 overfit.
                lambda: 5.0,
                seed,
                ..TrainConfig::default()
            };
            rmse(&als_train(&train, &cfg).unwrap().model, &test).unwrap()
        };
        let (low, high) = (test_rmse(1), test_rmse(4));
        assert!(high <= low, "seed {seed}: d=4 test RMSE {high} > d=1 test RMSE {low}");
    }
}

#[test]
fn objective_is_nonincreasing_on_synthetic_data() {
    let (table, _) = generate(&spec(7)).unwrap();
    for fit_biases in [true, false] {
        let cfg = TrainConfig {
            dim: 3,
            fit_biases,
            tol: 0.0,
            sweeps: 15,
            ..TrainConfig::default()
        };
        let out = als_train(&table, &cfg).unwrap();
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (table, _) = generate(&spec(1)).unwrap();
    let cfg = TrainConfig::default();
    let a = als_train(&table, &cfg).unwrap();
    let b = als_train(&table, &cfg).unwrap();
    assert_eq!(a, b);
}
