use treeattn::autodiff::Graph;
use treeattn::gradcheck::{
    check_store, gradcheck_variant, relative_error, InstanceSizes, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
use treeattn::{ModelVariant, ParamStore, Tensor};

#[test]
fn every_variant_matches_finite_differences() {
    let sizes = InstanceSizes::default();
    for variant in ModelVariant::ALL {
        for seed in 0..4 {
            let report = gradcheck_variant(variant, &sizes, seed).unwrap();
            let failing = report.failing(DEFAULT_TOLERANCE);
            assert!(failing.is_empty(), "{variant} seed {seed}: {failing:?}");
        }
    }
}

#[test]
fn reports_are_reproducible() {
    let sizes = InstanceSizes::default();
    let a = gradcheck_variant(ModelVariant::SatClstm, &sizes, 9).unwrap();
    let b = gradcheck_variant(ModelVariant::SatClstm, &sizes, 9).unwrap();
    assert_eq!(a.blocks, b.blocks);
}

#[test]
fn larger_instances_pass() {
    let sizes = InstanceSizes {
        embedding_size: 5,
        hidden_size: 4,
        premise_tokens: 4,
        hypothesis_tokens: 3,
        init_range: 1.0,
    };
    for variant in [ModelVariant::SatClstm, ModelVariant::SatDlstm, ModelVariant::AtLstm] {
        let report = gradcheck_variant(variant, &sizes, 1).unwrap();
        assert!(report.worst() < DEFAULT_TOLERANCE, "{variant}: {}", report.worst());
    }
}

fn vector_store(values: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("x", Tensor::vector(values.to_vec())).unwrap();
    s.insert("y", Tensor::vector(vec![0.3, -0.8, 0.5])).unwrap();
    s
}

type Build = fn(&mut Graph, treeattn::Var, treeattn::Var) -> treeattn::Var;

/// Each op on its own, reduced to a scalar by a fixed random projection so
/// every output coordinate contributes.
#[test]
fn individual_ops_match_finite_differences() {
    let cases: Vec<(&str, Build)> = vec![
        ("tanh", |g, x, _| g.tanh(x)),
        ("sigmoid", |g, x, _| g.sigmoid(x)),
        ("hadamard", |g, x, y| g.hadamard(x, y).unwrap()),
        ("add", |g, x, y| g.add(x, y).unwrap()),
        ("sub", |g, x, y| g.sub(x, y).unwrap()),
        ("softmax", |g, x, _| g.softmax(x).unwrap()),
        ("concat", |g, x, y| g.concat(&[x, y, x]).unwrap()),
        ("slice", |g, x, y| {
            let c = g.concat(&[x, y]).unwrap();
            g.slice(c, 2, 3).unwrap()
        }),
        ("matrix-vector", |g, x, y| {
            let m = g.stack_columns(&[x, y]).unwrap();
            let m = g.tanh(m);
            let v = g.slice(y, 1, 2).unwrap();
            g.matmul(m, v).unwrap()
        }),
        ("vector-matrix", |g, x, y| {
            let m = g.stack_columns(&[y, x]).unwrap();
            g.matmul(x, m).unwrap()
        }),
        ("stack-add-column", |g, x, y| {
            let m = g.stack_columns(&[x, y, x]).unwrap();
            let m = g.add_column(m, y).unwrap();
            let w = g.softmax(y).unwrap();
            g.matmul(m, w).unwrap()
        }),
        ("scale-sum-squares", |g, x, y| {
            let s = g.scale(x, -1.7);
            let a = g.add(s, y).unwrap();
            g.sum_squares(a)
        }),
    ];
    let proj = [0.7, -1.3, 0.4, 1.1, -0.6, 0.9, 0.2, -0.5, 1.4];
    for (name, build) in cases {
        let forward = |store: &ParamStore| -> (Graph, treeattn::Var) {
            let mut g = Graph::new();
            let x = g.param(store, store.id("x").unwrap());
            let y = g.param(store, store.id("y").unwrap());
            let out = build(&mut g, x, y);
            let n = g.value(out).len();
            let w = g.input(Tensor::vector(proj[..n].to_vec()));
            let l = if n == 1 { out } else { g.dot(out, w).unwrap() };
            (g, l)
        };
        let mut store = vector_store(&[0.2, -0.4, 1.1]);
        let (g, l) = forward(&store);
        g.backward(l, &mut store).unwrap();
        let grads: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| p.value.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; 3]))
            .collect();
        store.clear_grad();
        let reports = check_store(&mut store, DEFAULT_STEP, &grads, |s| {
            let (g, l) = forward(s);
            Ok(g.value(l).data()[0])
        })
        .unwrap();
        for r in reports {
            assert!(r.worst_rel_error < 1e-6, "{name} {}: {r:?}", r.name);
        }
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
}
