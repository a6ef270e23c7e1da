use cgap2_tensor::{concat, Graph, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0 - 5.0)
}

proptest! {
    #[test]
    fn concat_then_narrow_round_trips(a in 0usize..4, b in 0usize..4, rest in 1usize..4, axis in 0usize..2, seed in 0u64..1000) {
        let (sa, sb) = if axis == 0 { (vec![a, rest], vec![b, rest]) } else { (vec![rest, a], vec![rest, b]) };
        let g = Graph::<f64>::new();
        let x = g.constant(tensor(sa, seed));
        let y = g.constant(tensor(sb, seed + 1));
        let c = concat(x, y, axis).unwrap();
        prop_assert_eq!(c.narrow(axis, 0, a).unwrap().data(), x.data());
        prop_assert_eq!(c.narrow(axis, a, b).unwrap().data(), y.data());
    }

    #[test]
    fn permute_inverse_restores(d0 in 1usize..4, d1 in 1usize..4, d2 in 1usize..4, seed in 0u64..1000) {
        let g = Graph::<f64>::new();
        let x = g.constant(tensor(vec![d0, d1, d2], seed));
        let back = x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn forward_and_backward_are_deterministic(n in 1usize..3, c in 1usize..3, s in 2usize..5, seed in 0u64..1000) {
        let run = || {
            let g = Graph::<f32>::new();
            let x = g.leaf(tensor(vec![n, c, 2, s, s], seed).cast::<f32>().with_requires_grad(true));
            let w = g.leaf(tensor(vec![2, c, 3, 3, 3], seed + 7).cast::<f32>().with_requires_grad(true));
            let b = g.leaf(Tensor::<f32>::zeros([2]).with_requires_grad(true));
            let y = x.conv3d(w, b, [1, 1, 1], [1, 1, 1]).unwrap().relu().soft_argmax3d().unwrap();
            let loss = y.sum();
            g.backward(loss).unwrap();
            (loss.item().to_bits(), x.grad().unwrap(), w.grad().unwrap())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn cross_entropy_stays_finite(vals in proptest::collection::vec(-1e4f32..1e4, 6), label in 0usize..3) {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([2, 3], vals).unwrap());
        let l = x.softmax_cross_entropy(&[label, 2 - label]).unwrap().item();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}
