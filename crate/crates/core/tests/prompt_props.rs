mod common;

use proptest::prelude::*;

use kgicl::kg::Fact;
use kgicl::prompt::{extract_prompt_graph, prompts_for_relation, tokenize, PromptSettings};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_matches_brute_force(seed in any::<u64>(), k in 1u32..=3) {
        let kg = common::random_kg(seed, 50, 200, 4);
        for variant in common::VARIANTS {
            if let Err(msg) = common::check_prompt_graphs(&kg, k, variant) {
                prop_assert!(false, "{}", msg);
            }
        }
    }

    #[test]
    fn tokens_lie_in_range(seed in any::<u64>(), k in 1u32..=4) {
        let kg = common::random_kg(seed, 30, 80, 3);
        for &c in kg.base_facts() {
            let pg = extract_prompt_graph(&kg, c, k, Default::default(), 4096, seed).unwrap();
            let t = tokenize(&pg, k);
            prop_assert_eq!(t.entity_tokens.len(), pg.entities.len());
            for &(a, b) in &t.entity_tokens {
                prop_assert!(a <= k && b <= k);
            }
            for id in t.token_ids() {
                prop_assert!((id as usize) < ((k + 1) * (k + 1)) as usize);
            }
            let q = pg.relations.iter().position(|&r| r == c.relation).unwrap();
            prop_assert!(t.relation_flags[q]);
            prop_assert_eq!(t.relation_flags.iter().filter(|&&f| f).count(), 1);
        }
    }

    #[test]
    fn tokens_survive_entity_relabeling(seed in any::<u64>(), k in 1u32..=3) {
        let kg = common::random_kg(seed, 25, 60, 3);
        let perm = common::random_permutation(kg.num_entities(), seed);
        let pk = common::permuted(&kg, &perm);
        for &c in kg.base_facts() {
            let pc = Fact::new(perm[c.head as usize], c.relation, perm[c.tail as usize]);
            let a = tokenize(&extract_prompt_graph(&kg, c, k, Default::default(), usize::MAX, 0).unwrap(), k);
            let b = tokenize(&extract_prompt_graph(&pk, pc, k, Default::default(), usize::MAX, 0).unwrap(), k);
            let mut ta: Vec<_> = a.graph.entities.iter().zip(&a.entity_tokens).map(|(&e, &t)| (perm[e as usize], t)).collect();
            let mut tb: Vec<_> = b.graph.entities.iter().copied().zip(b.entity_tokens.iter().copied()).collect();
            ta.sort();
            tb.sort();
            prop_assert_eq!(ta, tb);
            prop_assert_eq!(&a.relation_flags, &b.relation_flags);
        }
    }

    #[test]
    fn extraction_is_repeatable(seed in any::<u64>(), cap in 2usize..20) {
        let kg = common::random_kg(seed, 30, 120, 3);
        let settings = PromptSettings { fact_cap: cap, ..PromptSettings::default() };
        for q in 0..kg.num_relations() as u32 {
            let a = prompts_for_relation(&kg, q, &settings, seed, None).unwrap();
            let b = prompts_for_relation(&kg, q, &settings, seed, None).unwrap();
            prop_assert_eq!(&a, &b);
            for t in &a {
                prop_assert!(t.graph.facts.len() <= cap);
                prop_assert!(t.graph.facts.contains(&t.graph.example));
            }
        }
    }
}
