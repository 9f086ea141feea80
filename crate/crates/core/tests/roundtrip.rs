use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeattn::data::conll::{flatten, parse_conll, ConllRow};
use treeattn::data::sexpr::parse_sexpr;
use treeattn::gradcheck::random_binary_tree;

#[derive(Clone, Debug)]
enum Shape {
    Leaf(String),
    Group(Vec<Shape>),
}

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,6}",
        "[A-Z][a-z]{0,4}",
        Just(",".to_string()),
        Just(".".to_string()),
        Just("n't".to_string()),
        Just("'s".to_string()),
        "[0-9]{1,3}",
    ]
}

fn shape() -> impl Strategy<Value = Shape> {
    token().prop_map(Shape::Leaf).prop_recursive(5, 40, 4, |inner| {
        prop::collection::vec(inner, 1..5).prop_map(Shape::Group)
    })
}

fn ws() -> impl Strategy<Value = String> {
    prop_oneof![Just(" ".to_string()), Just("  ".to_string()), Just("\t".to_string()), Just(" \n ".to_string())]
}

/// Renders with varying whitespace; the separators are drawn up front.
fn render(s: &Shape, seps: &mut impl Iterator<Item = String>, out: &mut String) {
    match s {
        Shape::Leaf(t) => out.push_str(t),
        Shape::Group(parts) => {
            out.push('(');
            out.push_str(&seps.next().unwrap_or_else(|| " ".into()));
            for p in parts {
                render(p, seps, out);
                out.push_str(&seps.next().unwrap_or_else(|| " ".into()));
            }
            out.push(')');
        }
    }
}

/// Reference reading: every maximal run of non-bracket, non-space chars.
fn oracle_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| c == '(' || c == ')' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sexpr_leaves_match_reference_reading(s in shape(), seps in prop::collection::vec(ws(), 200)) {
        let mut text = String::new();
        render(&s, &mut seps.into_iter(), &mut text);
        let tree = parse_sexpr(&text).unwrap();
        prop_assert!(tree.is_constituency());
        prop_assert!(tree.max_arity() <= 2);
        let got: Vec<String> = tree.tokens().iter().map(|t| t.to_string()).collect();
        prop_assert_eq!(got, oracle_tokens(&text));
    }
}

#[test]
fn thousand_random_trees_read_back_their_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let words = ["the", "dog", "ran", "over", "a", "hill", ",", "quickly", "n't"];
    for trial in 0..1000 {
        let n = rng.random_range(1..=15);
        let toks: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
        let tree = random_binary_tree(&toks, &mut rng);
        let back = parse_sexpr(&tree.to_sexpr()).unwrap();
        assert_eq!(back.tokens(), toks, "trial {trial}: {}", tree.to_sexpr());
    }
}

#[test]
fn thousand_head_arrays_survive_parse_and_flatten() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for trial in 0..1000 {
        let n = rng.random_range(1..=15);
        // Random attachment order; each word takes a head already in the tree.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut heads = vec![0usize; n];
        for k in 1..n {
            heads[order[k]] = order[rng.random_range(0..k)] + 1;
        }
        let rows: Vec<ConllRow> = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| ConllRow::new(i + 1, format!("w{i}"), h))
            .collect();
        let tree = parse_conll(&rows).unwrap();
        assert!(tree.is_dependency());
        assert_eq!(flatten(&tree), rows, "trial {trial}");
    }
}

#[test]
fn cyclic_head_arrays_are_rejected() {
    let rows = vec![
        ConllRow::new(1, "a", 2),
        ConllRow::new(2, "b", 3),
        ConllRow::new(3, "c", 1),
    ];
    assert!(parse_conll(&rows).is_err());
}
