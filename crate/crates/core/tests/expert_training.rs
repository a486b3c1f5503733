use moe_gating::data::{synthetic, DatasetRef};
use moe_gating::expert::{train_expert, ExpertModel};
use moe_gating::nn::TrainConfig;

#[test]
fn expert_learns_synthetic_strokes_and_round_trips() {
    let train = synthetic::generate_tag("synth-strokes", 1000, 1).unwrap();
    let test = synthetic::generate_tag("synth-strokes", 300, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let model = train_expert(DatasetRef::full("synth-strokes"), &train, Some(&test), &cfg, |e| {
        eprintln!("epoch {} loss {:.4}", e.epoch, e.mean_loss)
    })
    .unwrap();
    eprintln!("trained in {:?}", t.elapsed());
    let acc = model.evaluate(&test).unwrap();
    assert!(acc > 0.9, "accuracy {acc}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.ckpt");
    model.save(&path).unwrap();
    let back = ExpertModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.evaluate(&test).unwrap(), acc);
}
