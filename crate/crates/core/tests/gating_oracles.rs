use moe_gating::gating::naive::population_std;
use moe_gating::gating::{
    concat, decide_argmax, decide_overall_ratio, decide_std, ConcatenatedLogits, DecisionPath,
    ExpertLogits, GatingReport, Statistic,
};
use moe_gating::nn::{softmax_in_place, TrainConfig};
use moe_gating::pan::{coordinate, output_stats, train_pan, AttributionDataset, FeatureKind};
use moe_gating::Tensor;
use proptest::prelude::*;

fn join(parts: &[Vec<f32>]) -> ConcatenatedLogits {
    let mut offset = 0;
    let views: Vec<ExpertLogits<'_>> = parts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let e = ExpertLogits {
                expert_id: k,
                global_offset: offset,
                logits: p,
            };
            offset += p.len();
            e
        })
        .collect();
    concat(&views).unwrap()
}

fn experts() -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-20.0f32..20.0, 1..8), 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn offsets_are_cumulative_widths(parts in experts()) {
        let c = join(&parts);
        let mut acc = 0;
        let expected: Vec<usize> = parts.iter().map(|p| { let s = acc; acc += p.len(); s }).collect();
        prop_assert_eq!(c.offsets(), expected);
    }

    #[test]
    fn argmax_matches_linear_scan(parts in experts()) {
        let c = join(&parts);
        let flat = c.flat();
        let mut best = 0;
        for i in 1..flat.len() {
            if flat[i] > flat[best] {
                best = i;
            }
        }
        let d = decide_argmax(&c);
        prop_assert_eq!(d.global_class, best);
        let seg = c.segments()[d.expert_id];
        prop_assert_eq!(seg.start + d.local_class, best);
    }

    #[test]
    fn overall_ratio_is_argmax_for_positive_sums(parts in prop::collection::vec(prop::collection::vec(0.01f32..20.0, 1..8), 1..5)) {
        let c = join(&parts);
        prop_assert_eq!(decide_overall_ratio(&c).unwrap(), decide_argmax(&c));
    }

    #[test]
    fn std_matches_two_pass_oracle(parts in experts()) {
        let c = join(&parts);
        let stds: Vec<f64> = parts
            .iter()
            .map(|p| {
                let n = p.len() as f64;
                let mean = p.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
                (p.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        for (p, s) in parts.iter().zip(&stds) {
            prop_assert!((population_std(p) - s).abs() < 1e-9);
        }
        let mut best = 0;
        for k in 1..stds.len() {
            if stds[k] < stds[best] {
                best = k;
            }
        }
        prop_assume!(stds.iter().enumerate().all(|(k, s)| k == best || s - stds[best] > 1e-6));
        prop_assert_eq!(decide_std(&c).expert_id, best);
    }

    #[test]
    fn coordinator_with_no_single_claim_is_argmax(parts in experts(), claims in prop::collection::vec(any::<bool>(), 5)) {
        let c = join(&parts);
        let belongs = &claims[..parts.len()];
        let d = coordinate(&c, belongs).unwrap();
        let arg = decide_argmax(&c);
        if belongs.iter().filter(|&&b| b).count() == 1 {
            let k = belongs.iter().position(|&b| b).unwrap();
            prop_assert_eq!(d.expert_id, k);
            prop_assert_eq!(d.path, DecisionPath::ExclusivePan);
        } else {
            prop_assert_eq!((d.expert_id, d.local_class, d.global_class), (arg.expert_id, arg.local_class, arg.global_class));
            prop_assert_eq!(d.path, DecisionPath::Fallback);
        }
    }
}

#[test]
fn hand_worked_decisions() {
    let c = join(&[vec![3.0, 1.0], vec![1.0, 1.0]]);
    let d = Statistic::Ratio.decide(&c).unwrap();
    assert_eq!((d.expert_id, d.local_class), (0, 0));

    let c = join(&[vec![-1.0, -5.0], vec![-2.0, -1.0]]);
    let d = Statistic::OverallRatio.decide(&c).unwrap();
    assert_eq!((d.expert_id, d.local_class), (0, 1));

    let c = join(&[vec![1.0, 2.0, 3.0, 4.0, 10.0], vec![1.0, 1.0, 1.0, 1.0, 2.0]]);
    let d = Statistic::Q3Diff.decide(&c).unwrap();
    assert_eq!((d.expert_id, d.local_class), (0, 4));
}

#[test]
fn perfect_experts_score_one_under_argmax() {
    // expert k is confident on its own samples and flat elsewhere
    let mut decisions = Vec::new();
    let mut labels = Vec::new();
    for source in 0..3 {
        for local in 0..4 {
            let parts: Vec<Vec<f32>> = (0..3)
                .map(|k| {
                    let mut v = vec![0.0; 4];
                    if k == source {
                        v[local] = 10.0;
                    }
                    v
                })
                .collect();
            decisions.push(Statistic::Argmax.decide(&join(&parts)));
            labels.push(source * 4 + local);
        }
    }
    let r = GatingReport::from_decisions(decisions, &labels).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.undefined, 0);
}

#[test]
fn output_stats_of_small_vector() {
    let s = output_stats(&[1.0, 2.0, 3.0]);
    assert_eq!(s[0], 2.0);
    assert_eq!(s[1], 3.0);
    assert!((s[2] - (2.0f32 / 3.0).sqrt()).abs() < 1e-6);
    assert!((s[2] - 0.8165).abs() < 1e-4);
}

fn separable_dataset() -> AttributionDataset {
    let mut ds = AttributionDataset::new(FeatureKind::OutputStats, 3);
    let row = |i: usize, sign: f32| [sign * (1.0 + (i % 7) as f32 * 0.1), (i % 5) as f32, sign * 0.5];
    let pos: Vec<f32> = (0..60).flat_map(|i| row(i, 1.0)).collect();
    let neg: Vec<f32> = (0..60).flat_map(|i| row(i, -1.0)).collect();
    ds.push_group("mine", 0, true, &pos).unwrap();
    ds.push_group("other", 1, false, &neg).unwrap();
    ds
}

#[test]
fn pan_separates_linear_toy_and_reports_softmax_confidence() {
    let ds = separable_dataset();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let pan = train_pan(&ds, Some(0), &cfg, |_| {}).unwrap();
    assert_eq!(pan.evaluate(&ds).unwrap(), 1.0);

    let rows = pan.attribute_rows(ds.features()).unwrap();
    let mut x = ds.features().to_vec();
    pan.scaler.apply(&mut x);
    let logits = pan.network.predict(&Tensor::new(vec![ds.len(), 3], x).unwrap()).unwrap();
    for (a, z) in rows.iter().zip(logits.rows()) {
        let mut p = [z[0], z[1]];
        softmax_in_place(&mut p);
        let (z0, z1) = (f64::from(z[0]), f64::from(z[1]));
        let oracle = 1.0 / (1.0 + (z0 - z1).exp());
        assert!((f64::from(a.confidence) - oracle).abs() < 1e-6);
        assert_eq!(a.belongs, z1 > z0);
        assert_eq!(a.confidence, p[1]);
    }
}
