use proptest::prelude::*;
use protosteer::evalharness::{score_generation, Bucket};
use protosteer::gridworld::{
    brute_force_longest, generate_grid, is_valid_path, longest_simple_path, parse_path, parse_prompt, render_prompt, safest_path, shortest_path,
    wall_adjacency_score, DatasetRecord, GoldTriple, Target,
};
use protosteer::tinylm::{encode_prompt, Vocab};

fn grid_strategy() -> impl Strategy<Value = protosteer::gridworld::Grid> {
    (2usize..=4, 2usize..=4, 0.0f64..0.35, any::<u64>()).prop_filter_map("unsolvable", |(r, c, d, s)| generate_grid(r, c, d, s).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn oracle_paths_are_valid_and_ordered(g in grid_strategy()) {
        let short = shortest_path(&g).unwrap();
        let safe = safest_path(&g).unwrap();
        let long = longest_simple_path(&g, 512).unwrap();
        for p in [&short, &safe, &long] {
            prop_assert!(is_valid_path(&g, p));
        }
        prop_assert!(short.len() <= safe.len());
        prop_assert!(safe.len() <= long.len());
        let adj = |p| wall_adjacency_score(&g, p).unwrap();
        prop_assert!(adj(&safe) <= adj(&short));
        prop_assert!(adj(&safe) <= adj(&long));
        prop_assert_eq!(long.len(), brute_force_longest(&g).unwrap().len());
    }

    #[test]
    fn prompts_round_trip_through_text_and_tokens(g in grid_strategy()) {
        let text = render_prompt(&g);
        let back = parse_prompt(&text, g.id()).unwrap();
        prop_assert_eq!(&back, &g);
        let v = Vocab::get();
        prop_assert_eq!(v.detokenize(&v.tokenize(&text).unwrap()), text);
        prop_assert!(encode_prompt(&g, Some(Target::Long)).is_ok());
    }

    #[test]
    fn rendered_paths_parse_back(g in grid_strategy()) {
        let p = safest_path(&g).unwrap();
        prop_assert_eq!(parse_path(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn gold_triples_score_as_successes(g in grid_strategy()) {
        let gold = GoldTriple::compute(&g, 512).unwrap();
        for t in Target::ALL {
            let o = score_generation(&g, &gold, &gold.path(t).to_string(), t);
            prop_assert_eq!(o.bucket, Bucket::Success);
        }
    }

    #[test]
    fn generation_is_a_function_of_the_seed(r in 2usize..=5, c in 2usize..=5, s in any::<u64>()) {
        let a = generate_grid(r, c, 0.2, s);
        let b = generate_grid(r, c, 0.2, s);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(&a, &b);
            prop_assert!(a.is_connected());
            prop_assert!(!a.is_wall(a.start()) && !a.is_wall(a.goal()));
        }
    }
}

#[test]
fn dataset_lines_round_trip() {
    let cfg = protosteer::gridworld::DataConfig {
        count: 25,
        rows: [3, 4],
        cols: [3, 5],
        ..Default::default()
    };
    for rec in protosteer::gridworld::build_dataset(&cfg, 12).unwrap() {
        assert_eq!(DatasetRecord::from_json_line(&rec.to_json_line()).unwrap(), rec);
        assert!(rec.gold.is_distinct(&rec.grid));
    }
}
