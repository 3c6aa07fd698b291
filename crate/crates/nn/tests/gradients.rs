//! Finite-difference checks for every differentiable primitive (64-bit).

use gqnloc_nn::gradcheck::{primitive_suite, rand_tensor, PRIMITIVE_TOL};
use gqnloc_nn::{Graph, ParamStore};

#[test]
fn every_primitive_matches_finite_differences() {
    let results = primitive_suite();
    assert!(results.len() > 30);
    let bad: Vec<_> = results.iter().filter(|(_, e)| !(*e < PRIMITIVE_TOL)).collect();
    assert!(bad.is_empty(), "primitives over tolerance: {bad:?}");
}

#[test]
fn shared_parameter_gradient_is_sum_of_uses() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", rand_tensor(&[3, 3], 40));
    let x = rand_tensor(&[2, 3], 41);
    let grad_of = |uses: usize| {
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let wv = g.param(w);
        let mut outs = Vec::new();
        for _ in 0..uses {
            outs.push(g.linear(xv, wv, None).unwrap());
        }
        let mut acc = outs[0];
        for &o in &outs[1..] {
            acc = g.add(acc, o).unwrap();
        }
        let l = g.sum_all(acc).unwrap();
        g.backward(l).param(w).unwrap().clone()
    };
    let one = grad_of(1);
    let three = grad_of(3);
    for (a, b) in one.data().iter().zip(three.data()) {
        assert!((3.0 * a - b).abs() < 1e-12);
    }
}
