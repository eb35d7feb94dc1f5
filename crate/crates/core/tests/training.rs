use attnmap_core::rnn::{train, TrainConfig};
use attnmap_core::synth::{generate, PlantSpec};

#[test]
fn training_loss_falls_by_epoch_50_for_most_seeds() {
    let spec = PlantSpec {
        instances: 200,
        max_len: 8,
        window: (3, 5),
        ..PlantSpec::reference()
    };
    let mut falling = 0;
    for seed in 0..10 {
        let ds = generate(&spec, seed).unwrap();
        let config = TrainConfig {
            epochs: 50,
            checkpoint_every: 50,
            hidden: 8,
            seed,
            ..TrainConfig::default()
        };
        let run = train(&ds, &config).unwrap();
        let start = run.checkpoints[0].metrics.train_loss;
        let end = run.metrics.last().unwrap().train_loss;
        if end < start {
            falling += 1;
        }
    }
    assert!(falling >= 9, "loss fell for only {falling} of 10 seeds");
}
