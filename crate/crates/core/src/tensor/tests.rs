use super::*;
use crate::gradcheck::{self, FD_ABS_FLOOR, FD_REL_TOL, FD_STEP};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "entry {i}: {a} vs expected {e} (tol {tol})"
        );
    }
}

#[test]
fn matmul_identity_left() {
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], false).unwrap();
    let eye = t.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
    let c = t.matmul(a, eye).unwrap();
    assert_close(t.data(c), &[1.0, 2.0, 3.0, 4.0], 0.0);
}

#[test]
fn matmul_identity_times_column() {
    let mut t = Tape::new();
    let eye = t.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
    let col = t.leaf(vec![5.0, 7.0], &[2, 1], false).unwrap();
    let c = t.matmul(eye, col).unwrap();
    assert_close(t.data(c), &[5.0, 7.0], 0.0);
    assert_eq!(t.shape(c), &[2, 1]);
}

#[test]
fn matmul_hand_dot_product() {
    // [[1,2]] x [[3],[4]] = [[11]], by the hand dot-product oracle 1*3 + 2*4.
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0], &[1, 2], false).unwrap();
    let b = t.leaf(vec![3.0, 4.0], &[2, 1], false).unwrap();
    let c = t.matmul(a, b).unwrap();
    assert_close(t.data(c), &[11.0], 0.0);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
    let b = t.leaf(vec![0.0; 4], &[2, 2], false).unwrap();
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "message: {msg}");
}

#[test]
fn relu_example() {
    let mut t = Tape::new();
    let x = t.leaf(vec![-1.0, 0.0, 2.0], &[3], false).unwrap();
    let y = t.relu(x);
    assert_close(t.data(y), &[0.0, 0.0, 2.0], 0.0);
}

#[test]
fn add_example() {
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0], &[2], false).unwrap();
    let b = t.leaf(vec![3.0, 4.0], &[2], false).unwrap();
    let c = t.add(a, b).unwrap();
    assert_close(t.data(c), &[4.0, 6.0], 0.0);
}

#[test]
fn sigmoid_symmetry_point() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.0], &[1], false).unwrap();
    let y = t.sigmoid(x);
    assert_close(t.data(y), &[0.5], 0.0);
}

#[test]
fn binary_shape_error() {
    let mut t = Tape::new();
    let a = t.leaf(vec![0.0; 4], &[2, 2], false).unwrap();
    let b = t.leaf(vec![0.0; 3], &[3], false).unwrap();
    assert!(matches!(
        t.add(a, b),
        Err(TensorError::ShapeMismatch { op: "add", .. })
    ));
}

#[test]
fn row_broadcast_add() {
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], true).unwrap();
    let b = t.leaf(vec![10.0, 20.0], &[2], true).unwrap();
    let c = t.add(a, b).unwrap();
    assert_close(t.data(c), &[11.0, 22.0, 13.0, 24.0], 0.0);
    let loss = t.sum_all(c);
    t.backward(loss).unwrap();
    // Bias gradient reduces over rows.
    assert_close(t.grad(b).unwrap(), &[2.0, 2.0], 0.0);
}

#[test]
fn concat_axis1_example() {
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0], &[1, 2], false).unwrap();
    let b = t.leaf(vec![3.0, 4.0], &[1, 2], false).unwrap();
    let c = t.concat(&[a, b], 1).unwrap();
    assert_close(t.data(c), &[1.0, 2.0, 3.0, 4.0], 0.0);
    assert_eq!(t.shape(c), &[1, 4]);
}

#[test]
fn concat_single_is_identity() {
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, 2.0, 3.0], &[1, 3], false).unwrap();
    let c = t.concat(&[a], 1).unwrap();
    assert_close(t.data(c), t.value(a).data.clone().as_slice(), 0.0);
    assert_eq!(t.shape(c), t.shape(a));
}

#[test]
fn concat_empty_errors() {
    let mut t = Tape::new();
    assert!(matches!(t.concat(&[], 1), Err(TensorError::EmptyInput { .. })));
}

#[test]
fn concat_mismatched_rows_errors() {
    let mut t = Tape::new();
    let a = t.leaf(vec![0.0; 4], &[2, 2], false).unwrap();
    let b = t.leaf(vec![0.0; 2], &[1, 2], false).unwrap();
    assert!(t.concat(&[a, b], 1).is_err());
}

#[test]
fn concat_then_sum_gradient_is_ones() {
    // Frozen from the finite-difference oracle: d(sum of concat)/dx = 1 in
    // every input slot.
    let mut t = Tape::new();
    let a = t.leaf(vec![1.0, -2.0], &[1, 2], true).unwrap();
    let b = t.leaf(vec![0.5, 3.0, -1.0], &[1, 3], true).unwrap();
    let c = t.concat(&[a, b], 1).unwrap();
    let loss = t.sum_all(c);
    t.backward(loss).unwrap();
    assert_close(t.grad(a).unwrap(), &[1.0, 1.0], 0.0);
    assert_close(t.grad(b).unwrap(), &[1.0, 1.0, 1.0], 0.0);
}

#[test]
fn embedding_lookup_examples() {
    let mut t = Tape::new();
    let table = t.leaf(vec![1.0, 1.0, 2.0, 2.0], &[2, 2], true).unwrap();
    let out = t.embedding_lookup(table, &[1, 0, 1]).unwrap();
    assert_close(t.data(out), &[2.0, 2.0, 1.0, 1.0, 2.0, 2.0], 0.0);

    let empty = t.embedding_lookup(table, &[]).unwrap();
    assert_eq!(t.shape(empty), &[0, 2]);
    assert!(t.data(empty).is_empty());
}

#[test]
fn embedding_lookup_out_of_range_names_id() {
    let mut t = Tape::new();
    let table = t.leaf(vec![0.0; 4], &[2, 2], true).unwrap();
    let err = t.embedding_lookup(table, &[0, 5]).unwrap_err();
    assert!(err.to_string().contains('5'), "message: {err}");
}

#[test]
fn embedding_backward_scatter_adds() {
    // sum over a lookup with ids=[0,0] puts gradient 2 in each entry of
    // table row 0 (finite differences agree; see fd sweep below).
    let mut t = Tape::new();
    let table = t.leaf(vec![1.0, 1.0, 2.0, 2.0], &[2, 2], true).unwrap();
    let out = t.embedding_lookup(table, &[0, 0]).unwrap();
    let loss = t.sum_all(out);
    t.backward(loss).unwrap();
    assert_close(t.grad(table).unwrap(), &[2.0, 2.0, 0.0, 0.0], 0.0);
}

#[test]
fn batch_norm_train_hand_oracle() {
    // x = [[1],[3]]: mean 2, population var 1, so normalized values are
    // ±1/sqrt(1 + 1e-5) before scale/shift.
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 3.0], &[2, 1], false).unwrap();
    let gamma = t.leaf(vec![1.0], &[1], true).unwrap();
    let beta = t.leaf(vec![0.0], &[1], true).unwrap();
    let mut state = BnState::new(1);
    let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Train).unwrap();
    let expect = 1.0 / (1.0f64 + BN_EPS).sqrt();
    assert_close(t.data(y), &[-expect, expect], 1e-12);
    // Running stats moved toward the batch statistics with momentum 0.1.
    assert_close(&state.running_mean, &[0.2], 1e-12);
    assert_close(&state.running_var, &[0.9 + 0.1], 1e-12);
}

#[test]
fn batch_norm_eval_identity() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.3, -1.2, 4.0], &[3, 1], false).unwrap();
    let gamma = t.leaf(vec![1.0], &[1], true).unwrap();
    let beta = t.leaf(vec![0.0], &[1], true).unwrap();
    let mut state = BnState::new(1); // running mean 0, var 1
    let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Eval).unwrap();
    // 1/sqrt(1 + eps) is within 5e-6 of identity.
    assert_close(t.data(y), &[0.3, -1.2, 4.0], 1e-4);
}

#[test]
fn batch_norm_constant_batch_is_zeros() {
    let mut t = Tape::new();
    let x = t.leaf(vec![7.0; 4], &[4, 1], false).unwrap();
    let gamma = t.leaf(vec![1.0], &[1], true).unwrap();
    let beta = t.leaf(vec![0.0], &[1], true).unwrap();
    let mut state = BnState::new(1);
    let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Train).unwrap();
    assert_close(t.data(y), &[0.0; 4], 1e-12);
}

#[test]
fn batch_norm_empty_batch_errors() {
    let mut t = Tape::new();
    let x = t.leaf(vec![], &[0, 1], false).unwrap();
    let gamma = t.leaf(vec![1.0], &[1], true).unwrap();
    let beta = t.leaf(vec![0.0], &[1], true).unwrap();
    let mut state = BnState::new(1);
    assert_eq!(
        t.batch_norm(x, gamma, beta, &mut state, Mode::Train),
        Err(TensorError::EmptyBatch)
    );
}

#[test]
fn backward_sum_gives_ones() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3.0, -1.0, 2.0], &[3], true).unwrap();
    let loss = t.sum_all(x);
    t.backward(loss).unwrap();
    assert_close(t.grad(x).unwrap(), &[1.0, 1.0, 1.0], 0.0);
}

#[test]
fn backward_dot_gives_other_vector() {
    let mut t = Tape::new();
    let w = t.leaf(vec![0.1, 0.2, 0.3], &[1, 3], true).unwrap();
    let x = t.leaf(vec![5.0, -4.0, 2.0], &[3, 1], false).unwrap();
    let y = t.matmul(w, x).unwrap();
    t.backward(y).unwrap();
    assert_close(t.grad(w).unwrap(), &[5.0, -4.0, 2.0], 0.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let y = t.relu(x);
    assert!(matches!(
        t.backward(y),
        Err(TensorError::NotScalar { .. })
    ));
}

#[test]
fn tape_replay_reproduces_gradients() {
    let mut t = Tape::new();
    let x = t.leaf(vec![0.5, -1.5, 2.5], &[1, 3], true).unwrap();
    let w = t.leaf(vec![1.0, -2.0, 0.5], &[3, 1], true).unwrap();
    let y = t.matmul(x, w).unwrap();
    let s = t.sigmoid(y);
    let loss = t.sum_all(s);
    t.backward(loss).unwrap();
    let g1 = t.grad(w).unwrap().to_vec();
    t.zero_grads();
    t.backward(loss).unwrap();
    let g2 = t.grad(w).unwrap().to_vec();
    assert_eq!(g1, g2, "replay must be bit-identical");
}

#[test]
fn repeated_backward_is_stable() {
    let mut t = Tape::new();
    let x = t.leaf(vec![2.0], &[1], true).unwrap();
    let y = t.scale(x, 3.0);
    t.backward(y).unwrap();
    let first = t.grad(x).unwrap().to_vec();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), first.as_slice());
    assert_close(&first, &[3.0], 0.0);
}

#[test]
fn fanout_accumulates_within_one_pass() {
    // x feeds two branches; its gradient collects both contributions.
    let mut t = Tape::new();
    let x = t.leaf(vec![2.0], &[1], true).unwrap();
    let a = t.scale(x, 3.0);
    let b = t.scale(x, 5.0);
    let s = t.add(a, b).unwrap();
    let loss = t.sum_all(s);
    t.backward(loss).unwrap();
    assert_close(t.grad(x).unwrap(), &[8.0], 0.0);
}

#[test]
fn forward_determinism_bit_identical() {
    let run = || {
        let mut rng = StdRng::seed_from_u64(99);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut t = Tape::new();
        let x = t.leaf(data, &[3, 4], false).unwrap();
        let wv = t.leaf(w, &[4, 3], false).unwrap();
        let y = t.matmul(x, wv).unwrap();
        let z = t.tanh(y);
        t.data(z).to_vec()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
}

// ── Finite-difference sweep over every differentiable op ─────────────────

type BuildFn = dyn Fn(&mut Tape, &[ValueId]) -> ValueId;

/// Checks analytic gradients of `build` against central differences for
/// every input, weighting the output by a fixed random vector so that
/// non-uniform upstream gradients are exercised.
fn check_op_gradients(name: &str, inputs: &[(Vec<usize>, Vec<f64>)], build: &BuildFn, seed: u64) {
    let weights = {
        let mut t = Tape::new();
        let ids: Vec<ValueId> = inputs
            .iter()
            .map(|(s, d)| t.leaf(d.clone(), s, true).unwrap())
            .collect();
        let out = build(&mut t, &ids);
        let mut wrng = StdRng::seed_from_u64(seed ^ 0x5eed);
        (0..t.value(out).numel())
            .map(|_| wrng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };

    let run = |datas: &[Vec<f64>]| -> (Tape, Vec<ValueId>, ValueId) {
        let mut t = Tape::new();
        let ids: Vec<ValueId> = inputs
            .iter()
            .zip(datas)
            .map(|((s, _), d)| t.leaf(d.clone(), s, true).unwrap())
            .collect();
        let out = build(&mut t, &ids);
        let shape = t.shape(out).to_vec();
        let w = t.leaf(weights.clone(), &shape, false).unwrap();
        let prod = t.mul(out, w).unwrap();
        let loss = t.sum_all(prod);
        (t, ids, loss)
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let (mut tape, ids, loss) = run(&base);
    tape.backward(loss).unwrap();

    for (k, (_, data)) in inputs.iter().enumerate() {
        let analytic = tape.grad(ids[k]).unwrap().to_vec();
        let mut f = |x: &[f64]| {
            let mut datas = base.clone();
            datas[k] = x.to_vec();
            let (t, _, l) = run(&datas);
            t.data(l)[0]
        };
        let res = gradcheck::compare(&mut f, data, &analytic, FD_STEP, FD_ABS_FLOOR);
        assert!(
            res.passes(FD_REL_TOL),
            "{name} input {k} seed {seed}: rel err {} at entry {} (analytic {}, numeric {})",
            res.max_rel_error,
            res.worst_index,
            res.analytic_at_worst,
            res.numeric_at_worst
        );
    }
}

fn rand_data(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Same data, nudged away from zero so relu/max kinks cannot sit within the
/// finite-difference step.
fn rand_data_off_kink(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() < 2e-3 {
                v + 0.01
            } else {
                v
            }
        })
        .collect()
}

#[test]
fn fd_sweep_all_ops() {
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(seed * 7919 + 1);

        check_op_gradients(
            "matmul",
            &[
                (vec![3, 4], rand_data(&mut rng, 12)),
                (vec![4, 2], rand_data(&mut rng, 8)),
            ],
            &|t, ids| t.matmul(ids[0], ids[1]).unwrap(),
            seed,
        );

        check_op_gradients(
            "add",
            &[
                (vec![2, 3], rand_data(&mut rng, 6)),
                (vec![2, 3], rand_data(&mut rng, 6)),
            ],
            &|t, ids| t.add(ids[0], ids[1]).unwrap(),
            seed,
        );

        check_op_gradients(
            "sub_broadcast",
            &[
                (vec![3, 2], rand_data(&mut rng, 6)),
                (vec![2], rand_data(&mut rng, 2)),
            ],
            &|t, ids| t.sub(ids[0], ids[1]).unwrap(),
            seed,
        );

        check_op_gradients(
            "mul",
            &[
                (vec![2, 3], rand_data(&mut rng, 6)),
                (vec![2, 3], rand_data(&mut rng, 6)),
            ],
            &|t, ids| t.mul(ids[0], ids[1]).unwrap(),
            seed,
        );

        check_op_gradients(
            "max2",
            &[
                (vec![2, 3], rand_data_off_kink(&mut rng, 6)),
                (vec![2, 3], rand_data_off_kink(&mut rng, 6)),
            ],
            &|t, ids| t.max2(ids[0], ids[1]).unwrap(),
            seed,
        );

        check_op_gradients(
            "relu",
            &[(vec![2, 4], rand_data_off_kink(&mut rng, 8))],
            &|t, ids| t.relu(ids[0]),
            seed,
        );

        check_op_gradients(
            "sigmoid",
            &[(vec![2, 4], rand_data(&mut rng, 8))],
            &|t, ids| t.sigmoid(ids[0]),
            seed,
        );

        check_op_gradients(
            "tanh",
            &[(vec![2, 4], rand_data(&mut rng, 8))],
            &|t, ids| t.tanh(ids[0]),
            seed,
        );

        check_op_gradients(
            "scale",
            &[(vec![2, 3], rand_data(&mut rng, 6))],
            &|t, ids| t.scale(ids[0], -1.7),
            seed,
        );

        check_op_gradients(
            "row_scale",
            &[(vec![3, 2], rand_data(&mut rng, 6))],
            &|t, ids| t.row_scale(ids[0], vec![0.5, 0.0, 2.0]).unwrap(),
            seed,
        );

        check_op_gradients(
            "concat_axis0",
            &[
                (vec![2, 3], rand_data(&mut rng, 6)),
                (vec![1, 3], rand_data(&mut rng, 3)),
            ],
            &|t, ids| t.concat(ids, 0).unwrap(),
            seed,
        );

        check_op_gradients(
            "concat_axis1",
            &[
                (vec![2, 2], rand_data(&mut rng, 4)),
                (vec![2, 3], rand_data(&mut rng, 6)),
            ],
            &|t, ids| t.concat(ids, 1).unwrap(),
            seed,
        );

        check_op_gradients(
            "gather_rows",
            &[(vec![4, 3], rand_data(&mut rng, 12))],
            &|t, ids| t.gather_rows(ids[0], &[2, 0, 2, 3]).unwrap(),
            seed,
        );

        check_op_gradients(
            "scatter_add_rows",
            &[(vec![5, 2], rand_data(&mut rng, 10))],
            &|t, ids| t.scatter_add_rows(ids[0], &[0, 0, 1, 2, 2], 4).unwrap(),
            seed,
        );

        check_op_gradients(
            "segment_max_rows",
            &[(vec![5, 2], rand_data_off_kink(&mut rng, 10))],
            &|t, ids| t.segment_max_rows(ids[0], &[0, 0, 1, 2, 2], 4).unwrap(),
            seed,
        );

        check_op_gradients(
            "rowwise_dot_heads",
            &[
                (vec![3, 4], rand_data(&mut rng, 12)),
                (vec![3, 4], rand_data(&mut rng, 12)),
            ],
            &|t, ids| t.rowwise_dot_heads(ids[0], ids[1], 2).unwrap(),
            seed,
        );

        check_op_gradients(
            "segment_softmax",
            &[(vec![5, 2], rand_data(&mut rng, 10))],
            &|t, ids| t.segment_softmax(ids[0], &[0, 0, 0, 1, 1]).unwrap(),
            seed,
        );

        check_op_gradients(
            "mul_head_scale",
            &[
                (vec![3, 4], rand_data(&mut rng, 12)),
                (vec![3, 2], rand_data(&mut rng, 6)),
            ],
            &|t, ids| t.mul_head_scale(ids[0], ids[1], 2).unwrap(),
            seed,
        );

        check_op_gradients(
            "batch_norm_train",
            &[
                (vec![4, 3], rand_data(&mut rng, 12)),
                (vec![3], rand_data(&mut rng, 3)),
                (vec![3], rand_data(&mut rng, 3)),
            ],
            &|t, ids| {
                let mut state = BnState::new(3);
                t.batch_norm(ids[0], ids[1], ids[2], &mut state, Mode::Train)
                    .unwrap()
            },
            seed,
        );

        check_op_gradients(
            "batch_norm_eval",
            &[
                (vec![4, 3], rand_data(&mut rng, 12)),
                (vec![3], rand_data(&mut rng, 3)),
                (vec![3], rand_data(&mut rng, 3)),
            ],
            &|t, ids| {
                let mut state = BnState::new(3);
                state.running_mean = vec![0.1, -0.2, 0.3];
                state.running_var = vec![1.5, 0.7, 2.0];
                t.batch_norm(ids[0], ids[1], ids[2], &mut state, Mode::Eval)
                    .unwrap()
            },
            seed,
        );

        check_op_gradients(
            "embedding_lookup",
            &[(vec![5, 3], rand_data(&mut rng, 15))],
            &|t, ids| t.embedding_lookup(ids[0], &[0, 0, 4, 2]).unwrap(),
            seed,
        );

        // Cross-entropy produces its own scalar; check it directly.
        let logits = rand_data(&mut rng, 8);
        let labels = [0usize, 1, 1, 0];
        let mut t = Tape::new();
        let l = t.leaf(logits.clone(), &[4, 2], true).unwrap();
        let loss = t.cross_entropy_logits(l, &labels).unwrap();
        t.backward(loss).unwrap();
        let analytic = t.grad(l).unwrap().to_vec();
        let mut f = |x: &[f64]| {
            let mut t = Tape::new();
            let l = t.leaf(x.to_vec(), &[4, 2], true).unwrap();
            let loss = t.cross_entropy_logits(l, &labels).unwrap();
            t.data(loss)[0]
        };
        let res = gradcheck::compare(&mut f, &logits, &analytic, FD_STEP, FD_ABS_FLOOR);
        assert!(
            res.passes(FD_REL_TOL),
            "cross_entropy seed {seed}: rel err {}",
            res.max_rel_error
        );
    }
}

#[test]
fn composite_graph_matches_finite_differences() {
    // Multi-op pipeline: embedding -> matmul -> relu -> scatter -> softmax-CE.
    for seed in [3u64, 17, 40] {
        let mut rng = StdRng::seed_from_u64(seed);
        let table = rand_data(&mut rng, 12);
        let w = rand_data(&mut rng, 8);
        let ids = [0usize, 2, 1, 2];
        let labels = [1usize, 0];
        let run = |table_d: &[f64], w_d: &[f64]| {
            let mut t = Tape::new();
            let tb = t.leaf(table_d.to_vec(), &[3, 4], true).unwrap();
            let wv = t.leaf(w_d.to_vec(), &[4, 2], true).unwrap();
            let emb = t.embedding_lookup(tb, &ids).unwrap();
            let h = t.matmul(emb, wv).unwrap();
            let h = t.relu(h);
            let pooled = t.scatter_add_rows(h, &[0, 0, 1, 1], 2).unwrap();
            let loss = t.cross_entropy_logits(pooled, &labels).unwrap();
            (t, tb, wv, loss)
        };
        let (mut t, tb, wv, loss) = run(&table, &w);
        t.backward(loss).unwrap();
        let g_table = t.grad(tb).unwrap().to_vec();
        let g_w = t.grad(wv).unwrap().to_vec();

        let mut f_table = |x: &[f64]| {
            let (t, _, _, l) = run(x, &w);
            t.data(l)[0]
        };
        let res = gradcheck::compare(&mut f_table, &table, &g_table, FD_STEP, FD_ABS_FLOOR);
        assert!(res.passes(FD_REL_TOL), "table grads, rel {}", res.max_rel_error);

        let mut f_w = |x: &[f64]| {
            let (t, _, _, l) = run(&table, x);
            t.data(l)[0]
        };
        let res = gradcheck::compare(&mut f_w, &w, &g_w, FD_STEP, FD_ABS_FLOOR);
        assert!(res.passes(FD_REL_TOL), "w grads, rel {}", res.max_rel_error);
    }
}

#[test]
fn forward_outputs_stay_finite() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..50 {
        let mut t = Tape::new();
        let a = t
            .leaf((0..12).map(|_| rng.gen_range(-1e6..1e6)).collect(), &[3, 4], false)
            .unwrap();
        let b = t
            .leaf((0..8).map(|_| rng.gen_range(-1e6..1e6)).collect(), &[4, 2], false)
            .unwrap();
        let c = t.matmul(a, b).unwrap();
        let d = t.tanh(c);
        let e = t.sigmoid(d);
        assert!(t.data(e).iter().all(|v| v.is_finite()));
    }
}
