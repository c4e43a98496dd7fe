use std::sync::Arc;

use lattice_lm::lattice::{build_dropone, build_ngram_chain};
use lattice_lm::{CombineMode, ConditionalQuery, Event, EventSchema, Model64, ModelConfig, Observation, SlotSet};
use proptest::prelude::*;

fn sums(m: &Model64, mode: CombineMode) -> Vec<f64> {
    let s = m.lattice().schema().clone();
    let root = m.root();
    let vocab: Vec<Event> = m.vocabulary(root).map(|k| Event::from_key(s.clone(), k).unwrap()).collect();
    m.counts()[root]
        .contexts()
        .map(|(ck, _)| {
            let ctx = Event::from_key(s.clone(), ck).unwrap();
            vocab
                .iter()
                .map(|o| m.prob_with(mode, root, &ConditionalQuery::new(o.clone(), ctx.clone()).unwrap()).unwrap())
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chain_contexts_normalize(tokens in prop::collection::vec(0u8..6, 4..120), k in 0u64..6) {
        let l = build_ngram_chain(3).unwrap();
        let s = l.schema().clone();
        let obs: Vec<Observation> = tokens
            .windows(3)
            .map(|w| {
                let t = |i: usize| format!("w{}", w[i]);
                Observation::new(
                    ConditionalQuery::new(
                        Event::from_pairs(s.clone(), [(2, t(2))]).unwrap(),
                        Event::from_pairs(s.clone(), [(0, t(0)), (1, t(1))]).unwrap(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let m = Model64::from_observations(l, &obs, ModelConfig::with_k(k)).unwrap();
        for x in sums(&m, CombineMode::Mixture) {
            prop_assert!((x - 1.0).abs() < 1e-9, "{}", x);
        }
    }

    #[test]
    fn dropone_contexts_normalize_in_both_modes(
        rows in prop::collection::vec((0u8..4, 0u8..3, 0u8..3, 0u8..3), 1..80),
    ) {
        let schema = Arc::new(EventSchema::flat(&["y", "a", "b", "c"]).unwrap());
        let l = build_dropone(schema.clone(), SlotSet::empty().with(0), 0).unwrap();
        let obs: Vec<Observation> = rows
            .iter()
            .map(|&(y, a, b, c)| {
                Observation::new(
                    ConditionalQuery::new(
                        Event::from_pairs(schema.clone(), [(0, format!("y{y}"))]).unwrap(),
                        Event::from_pairs(schema.clone(), [(1, format!("a{a}")), (2, format!("b{b}")), (3, format!("c{c}"))])
                            .unwrap(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let m = Model64::from_observations(l, &obs, ModelConfig::default()).unwrap();
        for mode in [CombineMode::Mixture, CombineMode::MaxPath] {
            for x in sums(&m, mode) {
                prop_assert!((x - 1.0).abs() < 1e-9, "{:?} {}", mode, x);
            }
        }
    }
}
