use sbm_core::backbone::BackboneConfig;
use sbm_core::bridge::{BridgeSchedule, NoiseConvention};
use sbm_core::loss::LossWeights;
use sbm_core::optim::{AdamWConfig, LrSchedule};
use sbm_core::signal::{SpecTransform, StftConfig};
use sbm_core::train::{predictive_training_step, sb_training_step, Batch, Mode, Trainer, TrainerConfig};
use sbm_core::{rng, Error, Tape, Tensor};

fn config(mode: Mode) -> TrainerConfig {
    TrainerConfig {
        mode,
        backbone: BackboneConfig {
            n_blocks: 1,
            d_model: 8,
            d_state: 4,
            conv_width: 2,
            tf_compress: (2, 2),
            fourier_dim: 8,
            ..BackboneConfig::default()
        },
        optimizer: AdamWConfig { lr_base: 1e-3, warmup_steps: 0, total_steps: 10, ..AdamWConfig::default() },
        loss: LossWeights { lambda: [1.0; 4], mr_resolutions: vec![(16, 4), (32, 8)] },
        stft: StftConfig::new(32, 8, 16_000).unwrap(),
        sched: BridgeSchedule::default(),
        convention: NoiseConvention::Split,
        transform: SpecTransform::None,
        seed: 42,
    }
}

fn batch(seed: u64) -> Batch<f64> {
    let mut r = rng::seeded(seed);
    let clean = Tensor::new([2, 256], rng::normals(&mut r, 512)).unwrap();
    let noise: Vec<f64> = rng::normals(&mut r, 512);
    let degraded = Tensor::from_fn([2, 256], |i| clean.data()[i] + 0.5 * noise[i]);
    Batch { clean, degraded }
}

#[test]
fn zero_learning_rate_is_deterministic_and_inert() {
    let mut cfg = config(Mode::Sbm);
    cfg.optimizer = AdamWConfig { lr_base: 0.0, weight_decay: 0.0, schedule: LrSchedule::Constant, ..cfg.optimizer };
    let mut a = Trainer::<f64>::new(cfg.clone()).unwrap();
    let mut b = Trainer::<f64>::new(cfg).unwrap();
    let before = a.store.clone();
    let data = batch(1);
    for _ in 0..3 {
        let (oa, ob) = (a.step(&data).unwrap(), b.step(&data).unwrap());
        assert_eq!(oa, ob);
        assert!(oa.loss.is_finite() && oa.loss > 0.0);
        assert_eq!(oa.t.len(), 2);
        assert!(oa.t.iter().all(|t| (0.01..=1.0).contains(t)));
    }
    for ((_, p), (_, q)) in a.store.iter().zip(before.iter()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn state_at_final_time_is_the_degraded_input() {
    // With zero-init output the network is the identity, so at t = T the
    // loss is exactly the loss between clean and degraded spectra.
    let mut cfg = config(Mode::Sbm);
    cfg.backbone.zero_init_output = true;
    let mut sbm = Trainer::<f64>::new(cfg.clone()).unwrap();
    sbm.t_override = Some(1.0);
    let data = batch(2);
    let (loss, _, ts) = sbm.forward_backward(&data, &mut rng::seeded(3)).unwrap();
    assert_eq!(ts, vec![1.0, 1.0]);

    cfg.mode = Mode::Predictive;
    let mut pred = Trainer::<f64>::new(cfg).unwrap();
    let (ploss, _, pts) = pred.forward_backward(&data, &mut rng::seeded(3)).unwrap();
    assert!(pts.is_empty());

    let stft = sbm.loss.main_stft();
    let x = stft.analyze(&data.clean).unwrap().planes;
    let y = stft.analyze(&data.degraded).unwrap().planes;
    let mut tape = Tape::no_grad();
    let (xv, yv) = (tape.constant(x), tape.constant(y));
    let direct = sbm.loss.compute(&mut tape, xv, yv, 256).unwrap().total;
    let direct = tape.value(direct).item().unwrap();
    assert!((loss - direct).abs() <= 1e-12 * direct);
    assert!((ploss - direct).abs() <= 1e-12 * direct);
}

#[test]
fn modes_share_shapes_except_time_conditioning() {
    let sbm = Trainer::<f64>::new(config(Mode::Sbm)).unwrap();
    let pred = Trainer::<f64>::new(config(Mode::Predictive)).unwrap();
    assert!(sbm.backbone.cfg.timestep && !pred.backbone.cfg.timestep);
    let shapes = |t: &Trainer<f64>| t.store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
    let (s, p) = (shapes(&sbm), shapes(&pred));
    assert!(p.iter().all(|e| s.contains(e)));
    assert!(s.len() > p.len());
}

#[test]
fn mode_specific_steps_check_the_mode() {
    let data = batch(4);
    let mut sbm = Trainer::<f64>::new(config(Mode::Sbm)).unwrap();
    let mut pred = Trainer::<f64>::new(config(Mode::Predictive)).unwrap();
    assert!(matches!(predictive_training_step(&mut sbm, &data), Err(Error::Contract(_))));
    assert!(matches!(sb_training_step(&mut pred, &data, &mut rng::seeded(0)), Err(Error::Contract(_))));
    assert!(sb_training_step(&mut sbm, &data, &mut rng::seeded(0)).is_ok());
    let out = predictive_training_step(&mut pred, &data).unwrap();
    assert!(out.t.is_empty());
    assert_eq!(pred.step_index(), 1);
}

#[test]
fn non_finite_batch_aborts_without_update() {
    let mut t = Trainer::<f64>::new(config(Mode::Predictive)).unwrap();
    let before = t.store.clone();
    let mut data = batch(5);
    data.degraded.data_mut()[17] = f64::INFINITY;
    assert!(t.step(&data).is_err());
    assert_eq!(t.step_index(), 0);
    for ((_, p), (_, q)) in t.store.iter().zip(before.iter()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn mismatched_model_is_rejected() {
    let cfg = config(Mode::Sbm);
    let donor = Trainer::<f64>::new(config(Mode::Predictive)).unwrap();
    assert!(matches!(Trainer::from_parts(cfg, donor.backbone, donor.store), Err(Error::Contract(_))));
}

#[test]
fn training_reduces_loss() {
    let mut cfg = config(Mode::Predictive);
    cfg.optimizer = AdamWConfig { lr_base: 3e-3, warmup_steps: 0, total_steps: 100, ..cfg.optimizer };
    let mut t = Trainer::<f64>::new(cfg).unwrap();
    let data = batch(6);
    let first = t.step(&data).unwrap().loss;
    let mut last = first;
    for _ in 1..100 {
        last = t.step(&data).unwrap().loss;
    }
    assert!(last < 0.7 * first, "{first} -> {last}");
}
