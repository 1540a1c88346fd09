use helix_core::model::{HardwareSpec, Strategy, WorkloadSpec};
use helix_core::search::{evaluate, pareto_frontier, Frontier, SearchSpace};
use helixsim::config::load_model;
use helixsim::presets::model_names;

fn frontier(preset: &str, strategy: Strategy) -> Frontier {
    let model = load_model(preset).unwrap().0;
    let space = SearchSpace {
        strategies: vec![strategy],
        gpu_counts: (1..=64).collect(),
        batch_sizes: SearchSpace::default_batches(),
        hopb: true,
    };
    let eval = evaluate(&space, &model, &WorkloadSpec::new(1, 1_000_000), &HardwareSpec::default()).unwrap();
    pareto_frontier(&eval.points).unwrap()
}

// Tied TP is the kvp = 1 corner of the Helix space, so it can never do better.
#[test]
fn helix_covers_tied_tp_on_every_preset() {
    for preset in model_names() {
        let helix = frontier(preset, Strategy::Helix);
        let tp = frontier(preset, Strategy::Tp);
        for p in &tp.points {
            assert!(
                helix.points.iter().any(|h| h.tokens_per_sec_per_user >= p.tokens_per_sec_per_user
                    && h.tokens_per_sec_per_gpu >= p.tokens_per_sec_per_gpu),
                "{preset}: tied TP point {p:?} not covered"
            );
        }
    }
}
