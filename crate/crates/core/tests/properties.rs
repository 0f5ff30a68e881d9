use ngc_core::graph::{
    consensus_mean, consensus_median, consensus_vote, path_variance, unsupervised_loss, EdgeId, NodeId, NodeKind,
    NodeSpec, Path,
};
use ngc_core::learner::{decode_checkpoint, encode_checkpoint, fit, Activation, DenseModel, Head, ModelSpec, TrainConfig};
use ngc_core::orchestrator::{compute_metric, greedy_select, pixels_improved, Candidate, Metric, SelectionRule};
use ngc_core::sim::{chebyshev_bound, pe_minus, pe_plus, vote_moments, BoundVariant};
use ngc_core::world::{decode_tensor, encode_tensor, generate_scene, WorldConfig};
use ngc_core::Tensor;
use proptest::prelude::*;

fn depth_node() -> NodeSpec {
    NodeSpec {
        id: NodeId(1),
        name: "depth".into(),
        kind: NodeKind::ContinuousMap { channels: 1 },
        units: "meters".into(),
        sensor: false,
        normalization: None,
    }
}

fn vec_tensor(v: Vec<f32>) -> Tensor {
    Tensor::from_f32(vec![v.len()], v).unwrap()
}

/// `n` equally long vectors of finite values.
fn stack(max_n: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    (1..=max_n, 1usize..20).prop_flat_map(|(n, len)| prop::collection::vec(prop::collection::vec(-50.0f32..50.0, len), n))
}

proptest! {
    #[test]
    fn median_lies_within_the_path_range(preds in stack(9)) {
        let ts: Vec<Tensor> = preds.iter().cloned().map(vec_tensor).collect();
        let c = consensus_median(&ts).unwrap();
        let m = c.pseudo_label.as_f32().unwrap();
        for i in 0..m.len() {
            let lo = preds.iter().map(|p| p[i]).fold(f32::INFINITY, f32::min);
            let hi = preds.iter().map(|p| p[i]).fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(lo <= m[i] && m[i] <= hi);
        }
    }

    #[test]
    fn median_ignores_path_order(preds in stack(7), rot in 0usize..7) {
        let ts: Vec<Tensor> = preds.iter().cloned().map(vec_tensor).collect();
        let mut rotated = ts.clone();
        rotated.rotate_left(rot % ts.len());
        prop_assert_eq!(consensus_median(&ts).unwrap().pseudo_label, consensus_median(&rotated).unwrap().pseudo_label);
    }

    #[test]
    fn loss_against_the_mean_is_paths_times_variance(preds in stack(9)) {
        let ts: Vec<Tensor> = preds.iter().cloned().map(vec_tensor).collect();
        let mean = consensus_mean(&ts).unwrap().pseudo_label;
        let loss = unsupervised_loss(&ts, &mean).unwrap();
        let n = ts.len() as f64;
        let var = path_variance(&ts).unwrap();
        prop_assert!((loss - n * var).abs() <= 1e-6 * (1.0 + loss));
    }

    #[test]
    fn agreeing_paths_give_their_own_output(v in prop::collection::vec(-5.0f32..5.0, 1..30), n in 1usize..6) {
        let t = vec_tensor(v.clone());
        let ts = vec![t.clone(); n];
        prop_assert_eq!(&consensus_median(&ts).unwrap().pseudo_label, &t);
        prop_assert_eq!(&consensus_mean(&ts).unwrap().pseudo_label, &t);
        prop_assert_eq!(unsupervised_loss(&ts, &t).unwrap(), 0.0);
        let labels: Vec<u16> = v.iter().map(|x| (x.abs() as u16) % 4).collect();
        let l = Tensor::from_labels(vec![labels.len()], labels).unwrap();
        prop_assert_eq!(&consensus_vote(&vec![l.clone(); n], &(0..n).collect::<Vec<_>>()).unwrap().pseudo_label, &l);
    }

    #[test]
    fn tensor_container_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>(), labels in any::<bool>()) {
        let len: usize = shape.iter().product();
        let t = if labels {
            Tensor::from_labels(shape, (0..len).map(|i| ((seed as usize + i * 7) % 300) as u16).collect()).unwrap()
        } else {
            Tensor::from_f32(shape, (0..len).map(|i| (seed.wrapping_add(i as u64) % 1000) as f32 * 0.37 - 99.0).collect()).unwrap()
        };
        prop_assert_eq!(decode_tensor(&encode_tensor(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn checkpoint_round_trip(input in 1usize..6, hidden in prop::collection::vec(1usize..9, 0..3), output in 1usize..5, seed in any::<u64>(), tanh in any::<bool>()) {
        let m = DenseModel::new(ModelSpec {
            input_dim: input,
            hidden,
            output_dim: output,
            activation: if tanh { Activation::Tanh } else { Activation::Relu },
            head: Head::Regression,
            seed,
        }).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        prop_assert_eq!(back.spec(), m.spec());
        prop_assert_eq!(
            back.parameters().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            m.parameters().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn l1_matches_a_naive_loop(pairs in prop::collection::vec(prop::collection::vec((-9.0f32..9.0, -9.0f32..9.0), 4), 1..5)) {
        let preds: Vec<Tensor> = pairs.iter().map(|v| Tensor::from_f32(vec![2, 2, 1], v.iter().map(|x| x.0).collect()).unwrap()).collect();
        let truth: Vec<Tensor> = pairs.iter().map(|v| Tensor::from_f32(vec![2, 2, 1], v.iter().map(|x| x.1).collect()).unwrap()).collect();
        let refs: Vec<(&Tensor, &Tensor)> = preds.iter().zip(&truth).collect();
        let got = compute_metric(Metric::L1, &depth_node(), &refs).unwrap();
        let mut sum = 0.0f64;
        let mut count = 0;
        for v in &pairs {
            for (a, b) in v {
                sum += (*a as f64 - *b as f64).abs();
                count += 1;
            }
        }
        prop_assert!((got - sum / count as f64).abs() < 1e-9);
    }

    #[test]
    fn pixels_improved_counts_strictly_closer_elements(v in prop::collection::vec((-3i8..3, -3i8..3, -3i8..3), 1..40)) {
        let t = |f: fn(&(i8, i8, i8)) -> i8| vec_tensor(v.iter().map(|x| f(x) as f32).collect());
        let (new, base, gt) = (t(|x| x.0), t(|x| x.1), t(|x| x.2));
        let expect = v.iter().filter(|(a, b, g)| (a - g).abs() < (b - g).abs()).count() as f64 * 100.0 / v.len() as f64;
        prop_assert!((pixels_improved(&[(&new, &base, &gt)]).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn correct_and_wrong_probabilities_sum_to_one(p in 0.0f64..=1.0, c in 2u32..2000) {
        let plus = pe_plus(p, c).unwrap();
        prop_assert!((0.0..=1.0).contains(&plus));
        prop_assert!((plus + pe_minus(p, c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vote_variances_shrink_with_paths(p in 0.0f64..=1.0, c in 2u32..500, n in 1u32..200, k in 2u32..6) {
        let a = vote_moments(p, c, n).unwrap();
        let b = vote_moments(p, c, n * k).unwrap();
        let k = k as f64;
        prop_assert_eq!(a.expected_correct, b.expected_correct);
        prop_assert!((a.var_correct - k * b.var_correct).abs() <= 1e-12);
        prop_assert!((a.var_wrong - k * b.var_wrong).abs() <= 1e-12);
        prop_assert!((a.var_wrong_per_class - k * b.var_wrong_per_class).abs() <= 1e-12);
    }

    #[test]
    fn bounds_halve_when_paths_double(p in 0.55f64..0.99, c in 2u32..300, n in 1u32..500) {
        for v in [BoundVariant::AsPrinted, BoundVariant::MuSquared] {
            if let (Ok(a), Ok(b)) = (chebyshev_bound(p, c, n, v), chebyshev_bound(p, c, 2 * n, v)) {
                prop_assert!((a - 2.0 * b).abs() <= 1e-12 * a.max(1.0));
            }
        }
    }

    #[test]
    fn best_prefix_is_the_exhaustive_optimum(scores in prop::collection::vec(0.0f64..10.0, 1..6), prefix in prop::collection::vec(0.0f64..10.0, 6)) {
        let cands: Vec<Candidate> = scores.iter().enumerate().map(|(i, &s)| Candidate {
            path: Path::new(vec![EdgeId(i as u32)]),
            score: s,
            direct: false,
        }).collect();
        let sel = greedy_select(NodeId(0), Metric::L1, cands, SelectionRule::BestPrefix, |idx| Ok(prefix[idx.len() - 1])).unwrap();
        let n = scores.len();
        let mut best = 0;
        for k in 1..n {
            if prefix[k] < prefix[best] {
                best = k;
            }
        }
        prop_assert_eq!(sel.selected, best + 1);
        prop_assert_eq!(sel.prefix_scores.len(), n);
        prop_assert!(sel.ranked.windows(2).all(|w| w[0].score <= w[1].score));
    }

    #[test]
    fn scenes_depend_only_on_their_id(id in 0u64..10_000) {
        let cfg = WorldConfig { height: 8, width: 8, ..WorldConfig::default() };
        prop_assert_eq!(generate_scene(&cfg, id).unwrap().to_layer_set(), generate_scene(&cfg, id).unwrap().to_layer_set());
    }
}

/// An edge retrained on its own output as pseudo-label stays where it is.
#[test]
fn self_consistent_retraining_keeps_the_edge() {
    let m = DenseModel::new(ModelSpec {
        input_dim: 3,
        hidden: vec![8],
        output_dim: 2,
        activation: Activation::Tanh,
        head: Head::Regression,
        seed: 4,
    })
    .unwrap();
    let x = Tensor::from_f32(vec![40, 3], (0..120).map(|i| ((i * 37) % 17) as f32 / 8.0 - 1.0).collect()).unwrap();
    let own = m.forward(&x).unwrap();
    let copies = vec![own.clone(); 5];
    let pseudo = consensus_median(&copies).unwrap().pseudo_label;
    assert_eq!(pseudo, own);
    let cfg = TrainConfig { epochs: 20, learning_rate: 1e-2, weight_decay: 0.0, ..TrainConfig::default() };
    let retrained = fit(m.clone(), &x, &pseudo, &cfg).unwrap().model;
    let before: f64 = own.as_f32().unwrap().iter().map(|v| v.abs() as f64).sum();
    let after = retrained.forward(&x).unwrap();
    let drift: f64 = own.as_f32().unwrap().iter().zip(after.as_f32().unwrap()).map(|(a, b)| (a - b).abs() as f64).sum();
    assert!(drift <= 0.01 * before, "drift {drift} of {before}");
}
