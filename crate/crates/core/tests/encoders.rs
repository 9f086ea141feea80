use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeattn::gradcheck::{random_binary_tree, random_dependency_tree, random_instance, InstanceSizes};
use treeattn::model::{Encoding, Side};
use treeattn::{Graph, ModelParams, ModelVariant, ParseTree};

const WORDS: [&str; 6] = ["a", "dog", "runs", "the", "cat", "sleeps"];

fn params(variant: ModelVariant, seed: u64) -> ModelParams {
    let sizes = InstanceSizes {
        embedding_size: 6,
        hidden_size: 5,
        init_range: 0.8,
        ..InstanceSizes::default()
    };
    random_instance(variant, &sizes, seed).unwrap().0
}

fn tokens(rng: &mut impl Rng, lo: usize, hi: usize) -> Vec<&'static str> {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect()
}

/// `(node id, h ++ c)` for every node.
fn states(p: &ModelParams, tree: &ParseTree) -> Vec<(usize, Vec<f64>)> {
    let mut g = Graph::new();
    let Encoding::Tree(enc) = p.encode_tree(&mut g, Side::Premise, tree).unwrap() else {
        panic!("tree variant");
    };
    let mut out: Vec<(usize, Vec<f64>)> = enc
        .nodes
        .iter()
        .map(|(id, s)| {
            let mut v = g.value(s.h).data().to_vec();
            v.extend_from_slice(g.value(s.c).data());
            (*id, v)
        })
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}

fn max_diff(a: &[(usize, Vec<f64>)], b: &[(usize, Vec<f64>)]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|((ia, va), (ib, vb))| {
            assert_eq!(ia, ib);
            va.iter().zip(vb).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn child_sum_ignores_child_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut permuted_any = 0;
    for trial in 0..100 {
        let p = params(ModelVariant::TreeDlstmEnc, trial);
        let toks = tokens(&mut rng, 3, 9);
        let tree = random_dependency_tree(&toks, &mut rng);
        let shuffled = tree.with_children_reordered(|_, ch| ch.shuffle(&mut rng));
        if shuffled != tree {
            permuted_any += 1;
        }
        let d = max_diff(&states(&p, &tree), &states(&p, &shuffled));
        assert!(d < 1e-12, "trial {trial}: diff {d:e}");
    }
    assert!(permuted_any > 50, "only {permuted_any} trees were actually reordered");
}

#[test]
fn constituency_depends_on_child_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..100 {
        let p = params(ModelVariant::TreeClstmEnc, trial);
        let toks = tokens(&mut rng, 2, 8);
        let tree = random_binary_tree(&toks, &mut rng);
        let swapped = tree.with_children_reordered(|_, ch| ch.reverse());
        let a = states(&p, &tree);
        let b = states(&p, &swapped);
        let root = tree.root();
        let ra = &a.iter().find(|(id, _)| *id == root).unwrap().1;
        let rb = &b.iter().find(|(id, _)| *id == root).unwrap().1;
        let d = ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d > 1e-6, "trial {trial}: root moved only {d:e}");
    }
}

#[test]
fn hidden_states_stay_in_open_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (i, variant) in [ModelVariant::TreeDlstmEnc, ModelVariant::TreeClstmEnc].into_iter().enumerate() {
        for trial in 0..30 {
            let p = params(variant, 1000 * i as u64 + trial);
            let toks = tokens(&mut rng, 1, 10);
            let tree = if i == 0 {
                random_dependency_tree(&toks, &mut rng)
            } else {
                random_binary_tree(&toks, &mut rng)
            };
            let d = p.config.hidden_size;
            for (_, v) in states(&p, &tree) {
                assert!(v.iter().all(|x| x.is_finite()));
                assert!(v[..d].iter().all(|h| h.abs() < 1.0), "{variant}: {v:?}");
            }
        }
    }
}

#[test]
fn sequence_encoder_yields_one_state_per_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..20 {
        let p = params(ModelVariant::LstmEnc, trial);
        let toks = tokens(&mut rng, 1, 8);
        let tree = random_binary_tree(&toks, &mut rng);
        let mut g = Graph::new();
        let Encoding::Sequence(s) = p.encode_tree(&mut g, Side::Premise, &tree).unwrap() else {
            panic!("sequence variant");
        };
        assert_eq!(s.len(), toks.len());
        for st in s {
            assert!(g.value(st.h).data().iter().all(|h| h.abs() < 1.0));
        }
    }
}
