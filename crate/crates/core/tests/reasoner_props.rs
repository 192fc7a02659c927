mod common;

use proptest::prelude::*;

use kgicl::model::{score_query_traced, FactMask, Model};
use kgicl::tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frontier_zero_and_reach(seed in any::<u64>(), layers in 1usize..5) {
        let kg = common::random_kg(seed, 15, 30, 2);
        let model = Model::new(common::small_config(8, 1, layers), seed).unwrap();
        if let Err(msg) = common::check_frontier(&model, &kg, seed) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn scores_are_equivariant_under_relabeling(seed in any::<u64>()) {
        let dev = common::check_equivariance(seed).unwrap();
        prop_assert!(dev < 1e-5, "deviation {}", dev);
    }

    #[test]
    fn relation_update_ignores_the_subject(seed in any::<u64>()) {
        let kg = common::random_kg(seed, 15, 30, 3);
        let model = Model::new(common::small_config(8, 1, 3), seed).unwrap();
        let hbar: Tensor = common::fake_prompts(kg.num_relations(), 8, seed);
        let q = kg.base_facts()[0].relation;
        let rels = |s: u32| {
            let mut sess = model.session();
            let h = sess.tape.constant(hbar.clone());
            let (_, trace) = score_query_traced(&mut sess, &kg, s, q, h, &FactMask::none()).unwrap();
            trace.iter().map(|t| sess.tape.value(t.relations).clone()).collect::<Vec<_>>()
        };
        let first = rels(0);
        for s in 1..kg.num_entities() as u32 {
            prop_assert_eq!(&rels(s), &first);
        }
    }
}
