use multiresunet::data::{kfold_split, synth_generate, Challenge, Sample, SynthSpec};
use multiresunet::model::{build_multiresunet, build_unet_baseline, ModelConfig, Network};
use multiresunet::nn::Mode;
use multiresunet::train::{train, TrainConfig};
use multiresunet::Tensor;

fn fixture(n: usize, side: usize) -> (Vec<Sample<f32>>, Vec<Sample<f32>>) {
    let ds = synth_generate::<f32>(&SynthSpec::new(n, [side, side], Challenge::Clean, 0)).unwrap();
    let (tr, va) = kfold_split(n, 5, 0).unwrap().train_val(0);
    (
        tr.iter().map(|&i| ds[i].clone()).collect(),
        va.iter().map(|&i| ds[i].clone()).collect(),
    )
}

#[test]
fn training_loss_falls_over_first_five_epochs() {
    let (tr, va) = fixture(200, 64);
    let g = build_multiresunet(&ModelConfig::new(2, &[64, 64], 1).with_ubase(8)).unwrap();
    let mut net = Network::new(g, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &tr, &va, &cfg).unwrap().report;
    let losses: Vec<f64> = report.history.iter().map(|r| r.train_loss).collect();
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises <= 1, "{losses:?}");
    assert!(losses[4] < losses[0]);
}

#[test]
fn unet_baseline_trains_and_is_deterministic() {
    let (tr, va) = fixture(20, 32);
    let g = build_unet_baseline(&ModelConfig::new(2, &[32, 32], 1).with_ubase(4)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = Network::new(g.clone(), 1).unwrap();
        train(&mut net, &tr, &va, &cfg).unwrap().report
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn inference_is_batch_independent() {
    let g = build_multiresunet(&ModelConfig::new(2, &[16, 16], 1).with_ubase(4)).unwrap();
    let mut net = Network::<f64>::new(g, 2).unwrap();
    let ds = synth_generate::<f64>(&SynthSpec::new(3, [16, 16], Challenge::Clean, 1)).unwrap();
    let imgs: Vec<&Tensor<f64>> = ds.iter().map(|s| &s.image).collect();
    let batch = net.forward(&Tensor::stack(&imgs).unwrap(), Mode::Inference).unwrap();
    let single = net.forward(&Tensor::stack(&imgs[1..2]).unwrap(), Mode::Inference).unwrap();
    let b1 = &batch.unstack()[1];
    let max = b1.data().iter().zip(single.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max < 1e-12, "{max}");
}
