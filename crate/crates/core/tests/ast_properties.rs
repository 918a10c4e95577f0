mod common;

use proptest::prelude::*;
use syntaxeval::ast::{
    confounders_of, find_node_spans, parse, traversal_labels, DEFAULT_NODE_TYPES,
};

fn named_count(src: &str) -> usize {
    parse(src).nodes().iter().filter(|n| n.is_named()).count()
}

fn snippet_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        (0usize..500).prop_map(common::python_snippet),
        // arbitrary text, mostly not valid Python
        "[a-z0-9 =:()\\[\\]+<>\n\t\"'#,.-]{0,120}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn traversal_has_one_label_per_named_node(src in snippet_strategy()) {
        prop_assert_eq!(traversal_labels(&parse(&src)).len(), named_count(&src));
    }

    #[test]
    fn leaf_tokens_are_ordered_disjoint_and_non_empty(src in snippet_strategy()) {
        let tree = parse(&src);
        let tokens = tree.leaf_tokens();
        for w in tokens.windows(2) {
            prop_assert!(w[0].1 <= w[1].0);
        }
        for &(s, e) in &tokens {
            prop_assert!(s < e && e <= src.len());
        }
        prop_assert_eq!(tokens.len() as u32, confounders_of(&src).token_count);
    }

    #[test]
    fn whitespace_count_is_exact(src in snippet_strategy()) {
        let expected = src.chars().filter(|c| matches!(c, ' ' | '\t' | '\r' | '\n')).count();
        prop_assert_eq!(confounders_of(&src).whitespaces as usize, expected);
    }

    #[test]
    fn node_token_spans_lie_inside_the_node(src in snippet_strategy()) {
        let tree = parse(&src);
        for nt in DEFAULT_NODE_TYPES {
            for span in find_node_spans(&tree, nt) {
                prop_assert!(!span.leaf_token_spans.is_empty());
                for &(s, e) in &span.leaf_token_spans {
                    prop_assert!(span.start_byte <= s && e <= span.end_byte);
                }
            }
        }
    }

    #[test]
    fn height_and_size_are_consistent(src in snippet_strategy()) {
        let v = confounders_of(&src);
        prop_assert!(v.ast_height >= 1);
        prop_assert!(v.ast_nodes >= v.ast_height);
        prop_assert!(v.cyclo >= 1);
        prop_assert!(v.loc as usize <= src.lines().count());
    }
}

#[test]
fn fixture_snippets_parse_cleanly_and_cover_default_types() {
    for i in 0..200 {
        let src = common::python_snippet(i);
        let tree = parse(&src);
        assert!(!tree.has_errors(), "snippet {i} has syntax errors:\n{src}");
        for nt in DEFAULT_NODE_TYPES {
            assert!(
                !find_node_spans(&tree, nt).is_empty(),
                "snippet {i} lacks {nt}"
            );
        }
    }
}

#[test]
fn parse_errors_counted_for_broken_code() {
    assert!(confounders_of("x = (1,\n").parse_errors > 0);
    assert!(confounders_of("while = y").parse_errors > 0);
    assert_eq!(confounders_of("x = [1, 2]\n").parse_errors, 0);
}
