use super::*;
use crate::rng::SplitMix64;
use proptest::prelude::*;

fn t64(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::new(data.to_vec(), shape).unwrap()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(t64(&[1.0, 2.0, 3.0, 4.0], &[2, 2]));
    let i = tape.leaf(t64(&[1.0, 0.0, 0.0, 1.0], &[2, 2]));
    let c = tape.matmul(a, i).unwrap();
    assert_eq!(tape.data(c), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_row_times_col() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(t64(&[1.0, 2.0], &[1, 2]));
    let b = tape.leaf(t64(&[3.0, 4.0], &[2, 1]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.data(c), &[11.0]);
    assert_eq!(tape.shape(c), &[1, 1]);
}

#[test]
fn matmul_annihilation() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(t64(&[1.0; 15], &[3, 5]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(c), &[2, 5]);
    assert!(tape.data(c).iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[4, 5]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn softmax_symmetry_and_analytic() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[0.0, 0.0], &[2]));
    let s = tape.softmax(x, 0).unwrap();
    assert!((tape.data(s)[0] - 0.5).abs() < 1e-12);

    let y = tape.leaf(t64(&[2.0f64.ln(), 0.0], &[2]));
    let sy = tape.softmax(y, 0).unwrap();
    assert!((tape.data(sy)[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((tape.data(sy)[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn softmax_axis_out_of_range() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    assert!(matches!(
        tape.softmax(x, 2),
        Err(TensorError::AxisOutOfRange { axis: 2, rank: 2 })
    ));
}

#[test]
fn softmax_mid_axis() {
    // 2x3x2: softmax over axis 1 must normalize each (outer, inner) lane.
    let mut tape = Tape::<f64>::new();
    let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.3).collect();
    let x = tape.leaf(t64(&data, &[2, 3, 2]));
    let s = tape.softmax(x, 1).unwrap();
    let sd = tape.data(s);
    for o in 0..2 {
        for i in 0..2 {
            let sum: f64 = (0..3).map(|t| sd[o * 6 + t * 2 + i]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_constant_row_maps_to_beta() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[3.0, 3.0, 3.0], &[1, 3]));
    let g = tape.leaf(t64(&[1.0, 1.0, 1.0], &[3]));
    let b = tape.leaf(t64(&[0.7, 0.7, 0.7], &[3]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    for &v in tape.data(y) {
        assert!((v - 0.7).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_already_normalized() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0, -1.0], &[1, 2]));
    let g = tape.leaf(t64(&[1.0, 1.0], &[2]));
    let b = tape.leaf(t64(&[0.0, 0.0], &[2]));
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    assert!((tape.data(y)[0] - 1.0).abs() < 1e-6);
    assert!((tape.data(y)[1] + 1.0).abs() < 1e-6);
}

#[test]
fn layer_norm_numeric_oracle() {
    // Row [2, 0]: mean 1, var 1, so outputs are ±1/sqrt(1 + eps).
    let eps = 1e-5;
    let expected = 1.0 / (1.0f64 + eps).sqrt();
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[2.0, 0.0], &[1, 2]));
    let g = tape.leaf(t64(&[1.0, 1.0], &[2]));
    let b = tape.leaf(t64(&[0.0, 0.0], &[2]));
    let y = tape.layer_norm(x, g, b, eps).unwrap();
    assert!((tape.data(y)[0] - expected).abs() < 1e-12);
    assert!((tape.data(y)[1] + expected).abs() < 1e-12);
}

#[test]
fn layer_norm_d_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 3]));
    let g = tape.leaf(Tensor::zeros(&[4]));
    let b = tape.leaf(Tensor::zeros(&[4]));
    assert!(matches!(
        tape.layer_norm(x, g, b, 1e-5),
        Err(TensorError::ShapeMismatch { .. })
    ));
}

#[test]
fn gelu_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[0.0, 10.0, 1.0], &[3]));
    let y = tape.gelu(x);
    let yd = tape.data(y);
    assert_eq!(yd[0], 0.0);
    assert!((yd[1] - 10.0).abs() < 1e-6);
    // erf oracle: gelu(1) = 0.5 * (1 + erf(1/sqrt(2)))
    let oracle = 0.5 * (1.0 + libm::erf(1.0 / 2.0f64.sqrt()));
    assert!((yd[2] - oracle).abs() < 1e-12);
    assert!((yd[2] - 0.841345).abs() < 1e-6);
}

#[test]
fn gather_rows_basics() {
    let mut tape = Tape::<f64>::new();
    let table = tape.leaf(t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]));
    let g = tape.gather_rows(table, &[0, 0]).unwrap();
    assert_eq!(tape.data(g), &[1.0, 2.0, 1.0, 2.0]);

    let empty = tape.gather_rows(table, &[]).unwrap();
    assert_eq!(tape.shape(empty), &[0, 2]);
    assert!(tape.data(empty).is_empty());

    let err = tape.gather_rows(table, &[3]).unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
}

#[test]
fn gather_rows_grad_scatter_adds() {
    let mut tape = Tape::<f64>::new();
    let mut table = t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
    table.set_requires_grad(true);
    let tid = tape.leaf(table);
    let g = tape.gather_rows(tid, &[2, 2]).unwrap();
    let s = tape.sum(g);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(tid).unwrap(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
}

#[test]
fn cross_entropy_uniform_logits() {
    let c = 7usize;
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(Tensor::zeros(&[1, c]));
    let l = tape.masked_cross_entropy(logits, &[3], 99).unwrap();
    assert!((tape.scalar_value(l).unwrap() - (c as f64).ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_confident_is_near_zero() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(t64(&[0.0, 1e4, 0.0], &[1, 3]));
    let l = tape.masked_cross_entropy(logits, &[1], 99).unwrap();
    assert!(tape.scalar_value(l).unwrap().abs() < 1e-9);
}

#[test]
fn cross_entropy_pad_exclusion() {
    let mut tape = Tape::<f64>::new();
    let row = [0.3, -0.8, 1.2];
    let single = tape.leaf(t64(&row, &[1, 3]));
    let l1 = tape.masked_cross_entropy(single, &[2], 9).unwrap();
    let mut both = row.to_vec();
    both.extend_from_slice(&[5.0, 5.0, 5.0]);
    let padded = tape.leaf(t64(&both, &[2, 3]));
    let l2 = tape.masked_cross_entropy(padded, &[2, 9], 9).unwrap();
    assert_eq!(
        tape.scalar_value(l1).unwrap(),
        tape.scalar_value(l2).unwrap()
    );
}

#[test]
fn cross_entropy_error_paths() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        tape.masked_cross_entropy(logits, &[9, 9], 9),
        Err(TensorError::NoValidTarget)
    ));
    assert!(matches!(
        tape.masked_cross_entropy(logits, &[3, 9], 9),
        Err(TensorError::IndexOutOfRange { index: 3, bound: 3 })
    ));
}

#[test]
fn backward_sum_of_squares() {
    // sum(x^2) via x row times its own transpose; gradient is 2x.
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0, -2.0, 3.0], &[1, 3]).with_grad());
    let xt = tape.transpose(x).unwrap();
    let q = tape.matmul(x, xt).unwrap();
    tape.backward(q).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
}

#[test]
fn backward_softmax_ce_closed_form() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(t64(&[0.2, -0.4, 1.1], &[1, 3]).with_grad());
    let l = tape.masked_cross_entropy(logits, &[2], 9).unwrap();
    tape.backward(l).unwrap();
    // expected: probs - onehot
    let row = [0.2f64, -0.4, 1.1];
    let mx = 1.1f64;
    let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let grad = tape.grad(logits).unwrap();
    for j in 0..3 {
        let expected = exps[j] / z - if j == 2 { 1.0 } else { 0.0 };
        assert!((grad[j] - expected).abs() < 1e-12);
    }
}

#[test]
fn backward_off_path_leaf_gets_zero_grad() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0, 2.0], &[1, 2]).with_grad());
    let unused = tape.leaf(t64(&[5.0], &[1, 1]).with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0]);
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn backward_non_scalar_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0, 2.0], &[2]).with_grad());
    assert!(matches!(
        tape.backward(x),
        Err(TensorError::NotScalar { .. })
    ));
}

#[test]
fn backward_twice_identical_after_clear() {
    let mut tape = Tape::<f64>::new();
    let w = tape.leaf(t64(&[0.5, -0.3, 0.2, 0.8], &[2, 2]).with_grad());
    let x = tape.leaf(t64(&[1.0, 2.0], &[1, 2]));
    let b = tape.leaf(t64(&[0.1, -0.1], &[2]).with_grad());
    let h = tape.matmul(x, w).unwrap();
    let h = tape.add_bias(h, b).unwrap();
    let h = tape.gelu(h);
    let loss = tape.sum(h);
    tape.backward(loss).unwrap();
    let gw1 = tape.grad(w).unwrap().to_vec();
    let gb1 = tape.grad(b).unwrap().to_vec();
    tape.clear_grads();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &gw1[..]);
    assert_eq!(tape.grad(b).unwrap(), &gb1[..]);
}

#[test]
fn grad_accumulates_across_uses() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[2.0], &[1, 1]).with_grad());
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0]);
}

#[test]
fn dropout_masks_and_scales() {
    let mut rng = SplitMix64::new(42);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0; 1000], &[1000]));
    let y = tape.dropout(x, 0.5, &mut rng);
    let yd = tape.data(y);
    let zeros = yd.iter().filter(|&&v| v == 0.0).count();
    assert!(yd.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    assert!(zeros > 350 && zeros < 650, "zeros {zeros}");
}

#[test]
fn mask_fill_blocks_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0, 2.0, 3.0], &[1, 3]).with_grad());
    let m = tape.mask_fill_neg_inf(x, &[true, false, true]).unwrap();
    let s = tape.softmax(m, 1).unwrap();
    let l = tape.masked_cross_entropy(s, &[0], 9).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap()[1], 0.0);
    assert_eq!(tape.data(s)[1], 0.0);
}

#[test]
fn slice_concat_roundtrip_with_grads() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).with_grad());
    let a = tape.slice_cols(x, 0, 1).unwrap();
    let b = tape.slice_cols(x, 1, 3).unwrap();
    let back = tape.concat_cols(&[a, b]).unwrap();
    assert_eq!(tape.data(back), tape.data(x));
    let r0 = tape.slice_rows(back, 0, 1).unwrap();
    let r1 = tape.slice_rows(back, 1, 2).unwrap();
    let stacked = tape.concat_rows(&[r0, r1]).unwrap();
    let s = tape.sum(stacked);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn grad_check_affine_map() {
    let f = |tape: &mut Tape<f64>, ids: &[TensorId]| {
        let x = tape.leaf(t64(&[0.3, -0.7, 0.5], &[1, 3]));
        let h = tape.matmul(x, ids[0])?;
        let h = tape.add_bias(h, ids[1])?;
        Ok(tape.sum(h))
    };
    let w = t64(&[0.1, 0.2, -0.3, 0.4, 0.5, -0.6], &[3, 2]);
    let b = t64(&[0.05, -0.02], &[2]);
    let err = grad_check(&f, &[w, b], 1e-5).unwrap();
    assert!(err < 1e-8, "affine grad error {err}");
}

#[test]
fn grad_check_two_layer_mlp() {
    let f = |tape: &mut Tape<f64>, ids: &[TensorId]| {
        let x = tape.leaf(t64(&[0.3, -0.7, 0.5, 0.1, 0.9, -0.2], &[2, 3]));
        let h = tape.matmul(x, ids[0])?;
        let h = tape.add_bias(h, ids[1])?;
        let h = tape.gelu(h);
        let h = tape.matmul(h, ids[2])?;
        let h = tape.add_bias(h, ids[3])?;
        Ok(tape.masked_cross_entropy(h, &[1, 0], 9)?)
    };
    let mut rng = SplitMix64::new(3);
    let mut randt = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        t64(
            &(0..n).map(|_| rng.normal() * 0.5).collect::<Vec<_>>(),
            shape,
        )
    };
    let params = [randt(&[3, 4]), randt(&[4]), randt(&[4, 3]), randt(&[3])];
    let err = grad_check(&f, &params, 1e-5).unwrap();
    assert!(err < 1e-6, "mlp grad error {err}");
}

#[test]
fn grad_check_all_ops_composite() {
    // One composite touching every differentiable op (the attention mask is
    // constant, so masked entries are exact zeros in the gradient).
    let f = |tape: &mut Tape<f64>, ids: &[TensorId]| {
        let table = ids[0];
        let gamma = ids[1];
        let beta = ids[2];
        let w = ids[3];
        let x = tape.gather_rows(table, &[0, 2, 1])?;
        let x = tape.layer_norm(x, gamma, beta, 1e-5)?;
        let xt = tape.transpose(x)?;
        let scores = tape.matmul(x, xt)?;
        let scores = tape.scale(scores, 0.5);
        let scores =
            tape.mask_fill_neg_inf(scores, &[true, true, false, true, true, true, true, false, true])?;
        let attn = tape.softmax(scores, 1)?;
        let mixed = tape.matmul(attn, x)?;
        let q = tape.slice_rows(mixed, 0, 2)?;
        let r = tape.slice_rows(mixed, 2, 3)?;
        let joined = tape.concat_rows(&[q, r])?;
        let left = tape.slice_cols(joined, 0, 2)?;
        let right = tape.slice_cols(joined, 2, 4)?;
        let joined = tape.concat_cols(&[left, right])?;
        let act = tape.gelu(joined);
        let act2 = tape.add(act, joined)?;
        let logits = tape.matmul(act2, w)?;
        let mut rng = SplitMix64::new(99);
        let dropped = tape.dropout(logits, 0.25, &mut rng);
        Ok(tape.masked_cross_entropy(dropped, &[1, 9, 0], 9)?)
    };
    let mut rng = SplitMix64::new(17);
    let mut randt = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        t64(
            &(0..n).map(|_| rng.normal() * 0.4).collect::<Vec<_>>(),
            shape,
        )
    };
    let params = [
        randt(&[4, 4]),
        t64(&[1.0, 0.9, 1.1, 1.0], &[4]),
        t64(&[0.0, 0.1, -0.1, 0.0], &[4]),
        randt(&[4, 3]),
    ];
    let err = grad_check(&f, &params, 1e-5).unwrap();
    assert!(err < 1e-6, "composite grad error {err}");
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        vals in proptest::collection::vec(-10.0f64..10.0, 2..24),
    ) {
        let n = vals.len();
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t64(&vals, &[n])) ;
        let s = tape.softmax(x, 0).unwrap();
        let sum: f64 = tape.data(s).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);

        let shifted: Vec<f64> = vals.iter().map(|v| v + 17.0).collect();
        let xs = tape.leaf(t64(&shifted, &[n]));
        let ss = tape.softmax(xs, 0).unwrap();
        let (a, b) = (tape.data(s).to_vec(), tape.data(ss).to_vec());
        for (va, vb) in a.iter().zip(&b) {
            prop_assert!((va - vb).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_associative_small_f64(
        a in proptest::collection::vec(-2.0f64..2.0, 6),
        b in proptest::collection::vec(-2.0f64..2.0, 6),
        c in proptest::collection::vec(-2.0f64..2.0, 6),
    ) {
        let mut tape = Tape::<f64>::new();
        let ta = tape.leaf(t64(&a, &[2, 3]));
        let tb = tape.leaf(t64(&b, &[3, 2]));
        let tc = tape.leaf(t64(&c, &[2, 3]));
        let ab = tape.matmul(ta, tb).unwrap();
        let ab_c = tape.matmul(ab, tc).unwrap();
        let bc = tape.matmul(tb, tc).unwrap();
        let a_bc = tape.matmul(ta, bc).unwrap();
        let lhs = tape.data(ab_c).to_vec();
        let rhs = tape.data(a_bc).to_vec();
        for (x, y) in lhs.iter().zip(&rhs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_permutation_invariant(
        logits in proptest::collection::vec(-3.0f64..3.0, 12),
        perm_seed in 0u64..1000,
    ) {
        let n = 4usize;
        let c = 3usize;
        let targets = [0usize, 2, 9, 1];
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(t64(&logits, &[n, c]));
        let base = tape.masked_cross_entropy(l, &targets, 9).unwrap();
        let base_v = tape.scalar_value(base).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::new(perm_seed).shuffle(&mut order);
        let mut shuffled = Vec::with_capacity(n * c);
        let mut shuffled_targets = Vec::with_capacity(n);
        for &i in &order {
            shuffled.extend_from_slice(&logits[i * c..(i + 1) * c]);
            shuffled_targets.push(targets[i]);
        }
        let ls = tape.leaf(t64(&shuffled, &[n, c]));
        let permuted = tape.masked_cross_entropy(ls, &shuffled_targets, 9).unwrap();
        let perm_v = tape.scalar_value(permuted).unwrap();
        prop_assert!((base_v - perm_v).abs() < 1e-12);
    }
}
