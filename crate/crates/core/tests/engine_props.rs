use ocularage_core::nnet::{adapt_stem, LayerSpec, Mode, OcularNet, Sequential, Tensor, Topology, Widths};
use ocularage_core::par;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn narrow() -> Topology {
    Topology::ocular_with(
        1,
        24,
        32,
        &Widths {
            stem: 4,
            stages: vec![6, 8],
            neck: 10,
        },
    )
}

fn input(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 1, 24, 32], |_| rng.random_range(-2.0f32..2.0))
}

#[test]
fn forward_and_backward_identical_across_thread_counts() {
    let net = OcularNet::<f32>::init(narrow(), 3).unwrap();
    let run = |workers| {
        par::with_workers(workers, || {
            let (out, cache) = net.forward(input(6, 1), Mode::Train).unwrap();
            let d_logits = Tensor::filled(out.logits.shape(), 0.25f32);
            let d_ages = Tensor::filled(out.ages.shape(), -0.5f32);
            let grads = net.backward(&cache, d_logits, d_ages).unwrap();
            (out, grads)
        })
    };
    let (a, ga) = run(1);
    for workers in [2, 3, 4] {
        let (b, gb) = run(workers);
        assert_eq!(a, b, "forward differs with {workers} workers");
        assert_eq!(ga, gb, "gradients differ with {workers} workers");
    }
}

#[test]
fn inference_is_repeatable() {
    let net = OcularNet::<f32>::init(narrow(), 4).unwrap();
    assert_eq!(net.infer(input(3, 2)).unwrap(), net.infer(input(3, 2)).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// A bias-free 1-channel conv with the adapted kernel on `g` equals a
    /// third of the RGB conv on `(g, g, g)`.
    #[test]
    fn adapted_stem_matches_replicated_gray(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rgb = Tensor::<f64>::from_fn(&[4, 3, 3, 3], |_| rng.random_range(-1.0..1.0));
        let bias = Tensor::<f64>::from_fn(&[4], |_| 0.0);
        let gray = Tensor::<f64>::from_fn(&[2, 1, 6, 5], |_| rng.random_range(0.0..1.0));
        let rep = Tensor::<f64>::from_fn(&[2, 3, 6, 5], |i| {
            let (n, rest) = (i / 90, i % 30);
            gray.data()[n * 30 + rest]
        });
        let conv = |cin| LayerSpec::Conv2d { in_channels: cin, out_channels: 4, kernel: 3, stride: 2, padding: 1 };
        let make = |cin, w: Tensor<f64>| Sequential {
            layers: vec![ocularage_core::nnet::Layer::with_params(conv(cin), vec![w, bias.clone()], vec![]).unwrap()],
        };
        let a = make(1, adapt_stem(&rgb, 1).unwrap()).infer(gray).unwrap();
        let b = make(3, rgb).infer(rep).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y / 3.0).abs() <= 1e-6);
        }
    }
}
