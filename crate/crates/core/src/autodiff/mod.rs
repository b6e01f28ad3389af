//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{sigmoid, softmax_in_place, Tape, Var, NLL_FLOOR};
pub use tensor::{glorot_bound, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Error, Real};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> Real) -> Vec<Real> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[Real], b: &[Real]) -> Real {
        let num: Real = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<Real>()
            .sqrt();
        let den: Real = a.iter().map(|x| x * x).sum::<Real>().sqrt()
            + b.iter().map(|x| x * x).sum::<Real>().sqrt();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Checks the analytic gradient of `build(x)` (reduced to a scalar by a
    /// fixed random projection) against finite differences.
    fn check_unary(x: Tensor, tol: Real, build: impl Fn(&mut Tape, Var) -> Var) {
        let out_len = {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let o = build(&mut t, v);
            t.value(o).len()
        };
        let weights = Tensor::uniform(&[out_len], 1.0, &mut rng(99));
        let forward = |xv: &Tensor| -> Real {
            let mut t = Tape::new();
            let v = t.constant(xv.clone());
            let o = build(&mut t, v);
            t.value(o)
                .data()
                .iter()
                .zip(weights.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let o = build(&mut t, v);
        let shape = t.value(o).shape().to_vec();
        let w = t.constant(weights.clone().reshape(shape).unwrap());
        let prod = t.mul(o, w).unwrap();
        let loss = t.sum(prod);
        t.backward(loss).unwrap();
        let analytic = t.grad(v).unwrap().data().to_vec();
        let numeric = numeric_grad(&x, forward);
        let err = rel_err(&analytic, &numeric);
        assert!(err <= tol, "relative error {err}");
    }

    #[test]
    fn matmul_identity_and_projection() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let m = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let c = t.matmul(i, m).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        let c = t.matmul(p, v).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 1]);
        assert_eq!(t.value(c).data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_gradient_of_sum_matches_finite_differences() {
        let a = Tensor::uniform(&[3, 4], 1.0, &mut rng(1));
        let b = Tensor::uniform(&[4, 2], 1.0, &mut rng(2));

        let mut t = Tape::new();
        let va = t.param(a.clone());
        let vb = t.constant(b.clone());
        let c = t.matmul(va, vb).unwrap();
        let s = t.sum(c);
        t.backward(s).unwrap();
        let analytic = t.grad(va).unwrap().data().to_vec();

        let numeric = numeric_grad(&a, |x| {
            let mut t = Tape::new();
            let va = t.constant(x.clone());
            let vb = t.constant(b.clone());
            let c = t.matmul(va, vb).unwrap();
            t.value(c).data().iter().sum()
        });
        assert!(rel_err(&analytic, &numeric) <= 1e-6);
    }

    #[test]
    fn tanh_basics_and_gradient() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0.0]));
        let y = t.tanh(z);
        assert_eq!(t.value(y).data(), &[0.0]);

        let x = Tensor::uniform(&[5], 2.0, &mut rng(5));
        let neg = x.map(|v| -v);
        let a = t.constant(x.clone());
        let b = t.constant(neg);
        let ya = t.tanh(a);
        let yb = t.tanh(b);
        for (p, q) in t.value(ya).data().iter().zip(t.value(yb).data()) {
            assert_eq!(*p, -q);
        }
        check_unary(x, 1e-6, |t, v| t.tanh(v));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![2.5; 4]));
        let s = t.softmax(c).unwrap();
        for p in t.value(s).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let v = t.constant(Tensor::vector(vec![0.0, (3.0 as Real).ln()]));
        let s = t.softmax(v).unwrap();
        let d = t.value(s).data();
        assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] - 0.75).abs() < 1e-12);

        let e = t.constant(Tensor::vector(vec![]));
        assert!(matches!(t.softmax(e), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_gradient() {
        let x = Tensor::uniform(&[3, 4], 2.0, &mut rng(7));
        check_unary(x, 1e-6, |t, v| t.softmax(v).unwrap());
    }

    #[test]
    fn cosine_rows_examples() {
        let mut t = Tape::new();
        let e = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let q = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let c = t.cosine_rows(e, q).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 0.0]);

        let e = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap());
        let c = t.cosine_rows(e, q).unwrap();
        let d = t.value(c).data();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert!((d[1] - 0.70711).abs() < 1e-5);

        let lib = Tensor::uniform(&[4, 3], 1.0, &mut rng(8));
        let e = t.constant(lib.clone());
        let q = t.constant(Tensor::vector(lib.row(2).to_vec()));
        let c = t.cosine_rows(e, q).unwrap();
        assert!((t.value(c).data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rows_rejects_zero_norm() {
        let mut t = Tape::new();
        let e = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let q = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.cosine_rows(e, q), Err(Error::Degenerate(_))));
        let e = t.constant(Tensor::identity(2));
        let z = t.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(t.cosine_rows(e, z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cosine_rows_gradient_both_arguments() {
        let lib = Tensor::uniform(&[4, 3], 1.0, &mut rng(10));
        let q = Tensor::uniform(&[2, 3], 1.0, &mut rng(11));
        let lib_c = lib.clone();
        check_unary(q.clone(), 1e-6, move |t, v| {
            let l = t.constant(lib_c.clone());
            t.cosine_rows(l, v).unwrap()
        });
        check_unary(lib, 1e-6, move |t, v| {
            let qq = t.constant(q.clone());
            t.cosine_rows(v, qq).unwrap()
        });
    }

    #[test]
    fn dropout_identities_and_statistics() {
        let x = Tensor::uniform(&[20], 1.0, &mut rng(12));
        let mut t = Tape::new();
        let v = t.param(x.clone());
        assert_eq!(t.dropout(v, 0.0, true, &mut rng(0)).unwrap(), v);
        assert_eq!(t.dropout(v, 0.7, false, &mut rng(0)).unwrap(), v);
        assert!(matches!(
            t.dropout(v, 1.0, true, &mut rng(0)),
            Err(Error::Config(_))
        ));

        let ones = t.constant(Tensor::ones(&[10_000]));
        let d = t.dropout(ones, 0.5, true, &mut rng(13)).unwrap();
        let out = t.value(d).data();
        let mean = out.iter().sum::<Real>() / out.len() as Real;
        assert!((mean - 1.0).abs() <= 0.05, "mean {mean}");
        assert!(out.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn nll_examples() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let l = t.nll_loss(p, 1).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let u = t.constant(Tensor::vector(vec![0.25; 4]));
        let l = t.nll_loss(u, 3).unwrap();
        assert!((t.value(l).item() - 1.3862943611198906).abs() < 1e-12);

        assert!(matches!(t.nll_loss(u, 4), Err(Error::Index(_))));

        let mut prev = Real::INFINITY;
        for k in 1..10 {
            let pg = k as Real / 10.0;
            let rest = (1.0 - pg) / 3.0;
            let v = t.constant(Tensor::vector(vec![rest, pg, rest, rest]));
            let l = t.nll_loss(v, 1).unwrap();
            let cur = t.value(l).item();
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn nll_clamps_zero_probability() {
        let mut t = Tape::new();
        let p = t.param(Tensor::vector(vec![1.0, 0.0]));
        let l = t.nll_loss(p, 1).unwrap();
        assert!((t.value(l).item() - (-(NLL_FLOOR).ln())).abs() < 1e-9);
        t.backward(l).unwrap();
        assert!(t.grad(p).unwrap().is_finite());
    }

    #[test]
    fn backward_linear_and_dead_branch() {
        let mut t = Tape::new();
        let x = t.param(Tensor::uniform(&[2, 3], 1.0, &mut rng(14)));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 6]);

        let mut t = Tape::new();
        let x = t.param(Tensor::uniform(&[4], 1.0, &mut rng(15)));
        let y = t.tanh(x);
        let s = t.sum(y);
        let z = t.scale(s, 0.0);
        t.backward(z).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(&[3]));
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_visits_in_reverse_and_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![0.3, -0.2]));
        let y = t.tanh(x);
        let z = t.sigmoid(y);
        let s = t.sum(z);
        let order = t.backward(s).unwrap();
        assert!(order.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(order, vec![s.index(), z.index(), y.index(), x.index()]);
        let first = t.grad(x).unwrap().clone();
        t.backward(s).unwrap();
        let second = t.grad(x).unwrap();
        for (a, b) in first.data().iter().zip(second.data()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn unreached_params_get_zero_grads() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0]));
        let unused = t.param(Tensor::vector(vec![2.0, 3.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn structural_op_gradients() {
        let x = Tensor::uniform(&[3, 4], 1.0, &mut rng(20));
        check_unary(x.clone(), 1e-6, |t, v| t.sigmoid(v));
        check_unary(x.clone(), 1e-6, |t, v| t.slice_cols(v, 1, 2).unwrap());
        check_unary(x.clone(), 1e-6, |t, v| {
            t.sum_rows(v, vec![vec![0, 2], vec![], vec![1, 1]]).unwrap()
        });
        check_unary(x.clone(), 1e-6, |t, v| {
            let a = t.tanh(v);
            t.concat_cols(&[v, a]).unwrap()
        });
        check_unary(x.clone(), 1e-6, |t, v| {
            let a = t.sigmoid(v);
            t.concat_rows(&[a, v]).unwrap()
        });
        check_unary(x.clone(), 1e-6, |t, v| {
            let a = t.tanh(v);
            t.row_select(&[true, false, true], v, a).unwrap()
        });
        check_unary(x.clone(), 1e-6, |t, v| {
            let b = t.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
            let a = t.add_row(v, b).unwrap();
            t.mul(a, v).unwrap()
        });
        check_unary(x.clone(), 1e-6, |t, v| {
            let w = t.constant(Tensor::uniform(&[4], 1.0, &mut rng(3)));
            let a = t.add_row(v, w).unwrap();
            let b = t.scale(a, -1.5);
            t.add(a, b).unwrap()
        });
        let p = Tensor::uniform(&[3, 4], 1.0, &mut rng(21));
        check_unary(p, 1e-6, |t, v| {
            let s = t.softmax(v).unwrap();
            t.nll_mean(s, &[0, 3, 1]).unwrap()
        });
        check_unary(x, 1e-6, |t, v| {
            let mut r = rng(4);
            t.dropout(v, 0.3, true, &mut r).unwrap()
        });
    }

    #[test]
    fn bias_gradient_through_add_row() {
        let b = Tensor::uniform(&[4], 1.0, &mut rng(22));
        check_unary(b, 1e-6, |t, v| {
            let x = t.constant(Tensor::uniform(&[3, 4], 1.0, &mut rng(23)));
            let a = t.add_row(x, v).unwrap();
            t.tanh(a)
        });
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
            let v: Vec<Real> = v.into_iter().map(|x| x as Real).collect();
            let shifted: Vec<Real> = v.iter().map(|x| x + c as Real).collect();
            let mut t = Tape::new();
            let a = t.constant(Tensor::vector(v));
            let b = t.constant(Tensor::vector(shifted));
            let sa = t.softmax(a).unwrap();
            let sb = t.softmax(b).unwrap();
            let total: Real = t.value(sa).data().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(t.value(sa).data().iter().all(|&p| p > 0.0));
            prop_assert!(t.value(sa).max_abs_diff(t.value(sb)) <= 1e-9);
        }

        #[test]
        fn cosine_bounded_and_scale_invariant(seed in 0u64..1000, scale in 0.001f64..1000.0, row in 0usize..5) {
            let lib = Tensor::uniform(&[5, 4], 1.0, &mut rng(seed));
            let q = Tensor::uniform(&[4], 1.0, &mut rng(seed + 7));
            let mut scaled = lib.clone();
            scaled.row_mut(row).iter_mut().for_each(|v| *v *= scale as Real);
            let q_scaled = q.map(|v| v * scale as Real);
            let mut t = Tape::new();
            let (l, ls) = (t.constant(lib), t.constant(scaled));
            let (qa, qs) = (t.constant(q), t.constant(q_scaled));
            let c0 = t.cosine_rows(l, qa).unwrap();
            let c1 = t.cosine_rows(ls, qa).unwrap();
            let c2 = t.cosine_rows(l, qs).unwrap();
            prop_assert!(t.value(c0).data().iter().all(|c| (-1.0..=1.0).contains(c)));
            for other in [c1, c2] {
                for (a, b) in t.value(c0).data().iter().zip(t.value(other).data()) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
        }
    }
}
