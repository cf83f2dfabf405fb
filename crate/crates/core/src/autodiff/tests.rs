use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::DcaError;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn affine_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let w = g.constant(Tensor::identity(2));
    let x = g.vector(vec![3.0, 4.0]);
    let y = g.affine(w, x, None).unwrap();
    assert_eq!(g.data(y), &[3.0, 4.0]);

    let w = g.constant(Tensor::zeros(&[2, 2]));
    let x = g.vector(vec![1.0, 1.0]);
    let b = g.vector(vec![5.0, 6.0]);
    let y = g.affine(w, x, Some(b)).unwrap();
    assert_eq!(g.data(y), &[5.0, 6.0]);

    let w = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.affine(w, x, None).unwrap();
    assert_eq!(g.data(y), &[3.0, 7.0]);
}

#[test]
fn affine_shape_mismatch_names_both_shapes() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let w = g.constant(Tensor::zeros(&[2, 3]));
    let x = g.vector(vec![1.0, 1.0]);
    match g.affine(w, x, None) {
        Err(DcaError::Shape { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn pointwise_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let zero = g.vector(vec![0.0]);
    let t = g.tanh(zero);
    assert_eq!(g.data(t), &[0.0]);
    let s = g.sigmoid(zero);
    assert_eq!(g.data(s), &[0.5]);
    let one = g.vector(vec![1.0]);
    let t1 = g.tanh(one);
    assert!((g.item(t1) - 0.7615941559557649).abs() < 1e-15);
    let r = g.vector(vec![-2.0, 3.0]);
    let r = g.relu(r);
    assert_eq!(g.data(r), &[0.0, 3.0]);
}

#[test]
fn masked_softmax_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.vector(vec![0.0, 0.0]);
    let y = g.masked_softmax(x, &[true, true]).unwrap();
    assert_eq!(g.data(y), &[0.5, 0.5]);

    let x = g.vector(vec![5.0, -100.0]);
    let y = g.masked_softmax(x, &[true, false]).unwrap();
    assert_eq!(g.data(y), &[1.0, 0.0]);

    let x = g.vector(vec![1.0, 2.0, 3.0]);
    let y = g.masked_softmax(x, &[true, true, true]).unwrap();
    // exp(k) / (e + e² + e³), evaluated independently
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    let expected = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
    assert!(close(g.data(y), &expected, 1e-15));
    assert!(close(g.data(y), &[0.09003, 0.24473, 0.66524], 5e-6));

    let x = g.vector(vec![1.0, 2.0]);
    assert!(matches!(
        g.masked_softmax(x, &[false, false]),
        Err(DcaError::InvalidMask)
    ));
}

#[test]
fn masked_softmax_gradient_skips_masked_positions() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(vec![0.3, -0.2, 0.9])).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let y = g.masked_softmax(x, &[true, false, true]).unwrap();
    let w = g.vector(vec![1.0, 5.0, -2.0]);
    let l = g.dot(y, w).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap()[1], 0.0);
    assert!(g.grad(x).unwrap()[0] != 0.0);
}

#[test]
fn concat_examples() {
    let mut store = ParamStore::new();
    let a_id = store.add("a", Tensor::vector(vec![1.0])).unwrap();
    let b_id = store.add("b", Tensor::vector(vec![2.0, 3.0])).unwrap();
    let mut g = Graph::new(&store);
    let a = g.param(a_id);
    let b = g.param(b_id);
    let c = g.concat(&[a, b]).unwrap();
    assert_eq!(g.data(c), &[1.0, 2.0, 3.0]);
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[1.0]);
    assert_eq!(g.grad(b).unwrap(), &[1.0, 1.0]);

    let e = g.vector(vec![]);
    let one = g.vector(vec![1.0]);
    let c = g.concat(&[e, one]).unwrap();
    assert_eq!(g.data(c), &[1.0]);
    assert!(matches!(g.concat(&[]), Err(DcaError::Argument(_))));
}

#[test]
fn cosine_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let u = g.vector(vec![1.0, 2.0]);
    let c = g.cosine_similarity(u, u).unwrap();
    assert!((g.item(c) - 1.0).abs() < 1e-15);
    let u = g.vector(vec![1.0, 0.0]);
    let v = g.vector(vec![0.0, 1.0]);
    let c = g.cosine_similarity(u, v).unwrap();
    assert_eq!(g.item(c), 0.0);
    let u = g.vector(vec![1.0, 1.0]);
    let v = g.vector(vec![1.0, 0.0]);
    let c = g.cosine_similarity(u, v).unwrap();
    assert!((g.item(c) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    let z = g.vector(vec![0.0, 0.0]);
    assert!(matches!(g.cosine_similarity(z, v), Err(DcaError::DegenerateNorm)));
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(3.0)).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(id);
    g.backward(x).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
    g.zero_grads();
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);

    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(0.0)).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let t = g.tanh(x);
    g.backward(t).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);

    let v = g.vector(vec![1.0, 2.0]);
    assert!(matches!(g.backward(v), Err(DcaError::Contract(_))));
}

#[test]
fn leaf_gradients_accumulate_until_zeroed() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(2.0)).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[8.0]);
    g.zero_grads();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0]);
}

#[test]
fn every_reachable_node_gets_a_same_shape_gradient() {
    let mut store = ParamStore::new();
    let w = store
        .add("w", Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap())
        .unwrap();
    let mut g = Graph::new(&store);
    let wv = g.param(w);
    let x = g.vector(vec![1.0, -1.0, 0.5]);
    let h = g.affine(wv, x, None).unwrap();
    let t = g.tanh(h);
    let s = g.sum(t);
    g.backward(s).unwrap();
    for v in [wv, x, h, t, s] {
        assert_eq!(g.grad(v).unwrap().len(), g.value(v).len());
    }
    assert!(g.is_leaf(wv));
}

#[test]
fn gradient_check_examples() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
    let report = gradient_check(&mut store, &[x], 1e-5, |g| {
        let v = g.param(x);
        Ok(g.sum(v))
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let w = store.add("w", random_tensor(&mut rng, &[4, 4])).unwrap();
    let xin = random_tensor(&mut rng, &[4]);
    let f = |g: &mut Graph| {
        let wv = g.param(w);
        let xv = g.constant(xin.clone());
        let h = g.affine(wv, xv, None)?;
        let t = g.tanh(h);
        Ok(g.sum(t))
    };
    let report = gradient_check(&mut store, &[w], 1e-5, f).unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");

    // negative control: a corrupted analytic gradient must be caught
    let mut analytic = analytic_gradients(&store, &f).unwrap();
    analytic.scale(1.1);
    let report = compare_gradients(&mut store, &[w], 1e-5, &f, &analytic).unwrap();
    assert!(report.max_relative_error > 1e-2);

    assert!(matches!(
        gradient_check(&mut store, &[w], 0.5, f),
        Err(DcaError::Argument(_))
    ));
}

#[test]
fn shared_subexpression_sums_path_gradients() {
    // y = tanh(W x); root = sum(y * y) + dot(y, c): y feeds two consumers.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let w = store.add("w", random_tensor(&mut rng, &[3, 3])).unwrap();
    let xin = random_tensor(&mut rng, &[3]);
    let cvec = random_tensor(&mut rng, &[3]);

    let dag = analytic_gradients(&store, &|g: &mut Graph| {
        let wv = g.param(w);
        let xv = g.constant(xin.clone());
        let h = g.affine(wv, xv, None)?;
        let y = g.tanh(h);
        let sq = g.mul(y, y)?;
        let a = g.sum(sq);
        let c = g.constant(cvec.clone());
        let b = g.dot(y, c)?;
        g.add(a, b)
    })
    .unwrap();

    // tree-expanded clone: every use of y recomputed from scratch
    let tree = analytic_gradients(&store, &|g: &mut Graph| {
        let wv = g.param(w);
        let fresh = |g: &mut Graph| -> crate::Result<Var> {
            let xv = g.constant(xin.clone());
            let h = g.affine(wv, xv, None)?;
            Ok(g.tanh(h))
        };
        let y1 = fresh(g)?;
        let y2 = fresh(g)?;
        let y3 = fresh(g)?;
        let sq = g.mul(y1, y2)?;
        let a = g.sum(sq);
        let c = g.constant(cvec.clone());
        let b = g.dot(y3, c)?;
        g.add(a, b)
    })
    .unwrap();
    assert!(close(dag.get(w).unwrap().data(), tree.get(w).unwrap().data(), 1e-14));
}

#[test]
fn embedding_rows_scatter_into_the_table() {
    let mut store = ParamStore::new();
    let e = store
        .add("emb", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
        .unwrap();
    let mut g = Graph::new(&store);
    let r1 = g.param_row(e, 1).unwrap();
    let r1b = g.param_row(e, 1).unwrap();
    assert_eq!(r1, r1b);
    let r2 = g.param_row(e, 2).unwrap();
    let s = g.add(r1, r2).unwrap();
    let s = g.add(s, r1).unwrap();
    let t = g.sum(s);
    g.backward(t).unwrap();
    let grads = g.param_grads();
    assert_eq!(grads.get(e).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    assert!(g.param_row(e, 3).is_err());
}

#[test]
fn attention_primitives_match_direct_evaluation() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let keys = g.constant(Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap());
    let q = g.vector(vec![0.5, -0.5]);
    let v = g.vector(vec![1.0, 2.0]);
    let s = g.additive_scores(keys, q, v).unwrap();
    let expect = [
        (0.6f64).tanh() + 2.0 * (-0.3f64).tanh(),
        (0.2f64).tanh() + 2.0 * (-0.1f64).tanh(),
    ];
    assert!(close(g.data(s), &expect, 1e-15));

    let w = g.vector(vec![0.25, 0.75]);
    let rows = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let c = g.weighted_rows(w, rows).unwrap();
    assert_eq!(g.data(c), &[0.25, 0.75]);

    let x = g.vector(vec![0.3, 0.2]);
    let u = g.scatter_add(x, &[4, 4], 6).unwrap();
    assert!(close(g.data(u), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.0], 1e-15));
}

// Cosine curvature grows like 1/|u|; near the origin central differences
// stop resolving 1e-6 at any usable step size.
fn away_from_origin(mut t: Tensor) -> Tensor {
    t.data_mut()[0] += 1.0;
    t
}

/// Random composite built from every differentiable primitive.
fn composite(g: &mut Graph, ids: &[ParamId; 5], mask: &[bool], scatter: &[usize]) -> crate::Result<Var> {
    let [w, x, keys, v, u] = *ids;
    let (wv, xv, kv, vv, uv) = (g.param(w), g.param(x), g.param(keys), g.param(v), g.param(u));
    let h = g.affine(wv, xv, Some(vv))?;
    let h = g.tanh(h);
    let q = g.sigmoid(h);
    let scores = g.additive_scores(kv, q, vv)?;
    let att = g.masked_softmax(scores, mask)?;
    let ctx = g.weighted_rows(att, kv)?;
    let both = g.concat(&[ctx, h])?;
    let half = g.slice(both, 1, g.value(h).len())?;
    let cos = g.cosine_similarity(half, uv)?;
    let size = g.value(q).len() + scatter.len();
    let sc = g.scatter_add(att, scatter, size)?;
    let ext = g.zero_extend(q, size)?;
    let p = g.pick(cos, 0)?;
    let p = g.sigmoid(p);
    let mix1 = g.scale_by(p, ext)?;
    let pm = g.one_minus(p);
    let mix2 = g.scale_by(pm, sc)?;
    let mix = g.add(mix1, mix2)?;
    let stacked = g.stack(&[ctx, uv])?;
    let two = g.softmax(h)?;
    let two = g.slice(two, 0, 2)?;
    let w2 = g.weighted_rows(two, stacked)?;
    let extra = g.dot(w2, h)?;
    let picked = g.pick(mix, 1)?;
    let lg = g.log_floor(picked, 1e-12)?;
    let total = g.sum(mix);
    let total = g.add(total, lg)?;
    let total = g.add(total, extra)?;
    let diff = g.sub(total, cos)?;
    let r = g.relu(diff);
    let r = g.add(r, diff)?;
    Ok(g.scale(r, 0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn composite_gradients_match_finite_differences(seed in 0u64..10_000, d in 2usize..6, rows in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = [
            store.add("w", random_tensor(&mut rng, &[d, d])).unwrap(),
            store.add("x", random_tensor(&mut rng, &[d])).unwrap(),
            store.add("keys", random_tensor(&mut rng, &[rows, d])).unwrap(),
            store.add("v", random_tensor(&mut rng, &[d])).unwrap(),
            store.add("u", away_from_origin(random_tensor(&mut rng, &[d]))).unwrap(),
        ];
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.7)).collect();
        mask[0] = true;
        let scatter: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..rows + 2)).collect();
        let report = gradient_check(&mut store, &ids, 1e-6, |g| composite(g, &ids, &mask, &scatter)).unwrap();
        prop_assert!(report.max_relative_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn masked_softmax_is_normalized_and_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
        mask_bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let n = logits.len();
        let mut mask = mask_bits[..n].to_vec();
        mask[n - 1] = true;
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.vector(logits.clone());
        let y = g.masked_softmax(x, &mask).unwrap();
        let total: f64 = g.data(y).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (v, m) in g.data(y).iter().zip(&mask) {
            if !m { prop_assert_eq!(*v, 0.0); }
        }
        let shifted: Vec<f64> = logits.iter().zip(&mask).map(|(v, &m)| if m { v + shift } else { *v }).collect();
        let xs = g.vector(shifted);
        let ys = g.masked_softmax(xs, &mask).unwrap();
        prop_assert!(close(g.data(y), g.data(ys), 1e-9));
        let argmax = |d: &[f64]| d.iter().enumerate().fold(0, |b, (i, v)| if *v > d[b] { i } else { b });
        prop_assert_eq!(argmax(g.data(y)), argmax(g.data(ys)));
    }
}
