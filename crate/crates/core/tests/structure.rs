mod common;

use common::structure::{
    artifact_shift_violations, default_generation_is_artifact_free, library_gap, random_model, superposition_violations,
};

#[test]
fn artifact_shift_vanishes_on_clean_cells() {
    for seed in 0..10 {
        assert_eq!(artifact_shift_violations(&random_model(seed), seed), 0, "seed {seed}");
    }
}

#[test]
fn combination_shift_is_exact_sum_of_singles() {
    for seed in 0..10 {
        assert_eq!(superposition_violations(&random_model(seed), seed), 0, "seed {seed}");
    }
}

#[test]
fn decoded_means_sum_to_library() {
    for seed in 0..10 {
        let gap = library_gap(&random_model(seed), seed);
        assert!(gap < 1e-9, "seed {seed}: {gap:e}");
    }
}

#[test]
fn default_generation_has_artifact_off() {
    for seed in 0..5 {
        assert!(default_generation_is_artifact_free(&random_model(seed), seed));
    }
}
