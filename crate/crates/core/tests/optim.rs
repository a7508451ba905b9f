use sbm_core::optim::{AdamW, AdamWConfig, LrSchedule};
use sbm_core::{Error, ParamStore, Tensor};

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("w", Tensor::from_f64(&[1], &[v]).unwrap()).unwrap();
    s
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let mut store = ParamStore::<f64>::new();
    store.add("a", Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap()).unwrap();
    store.add("b", Tensor::from_f64(&[2], &[7.0, 0.0]).unwrap()).unwrap();
    let before = store.clone();
    let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
    let mut opt = AdamW::new(cfg, &store).unwrap();
    for _ in 0..5 {
        opt.update(&mut store).unwrap();
    }
    for ((_, a), (_, b)) in store.iter().zip(before.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn schedule_shape() {
    let cfg = AdamWConfig { lr_base: 1e-3, warmup_steps: 10, total_steps: 110, ..AdamWConfig::default() };
    assert_eq!(cfg.lr_at(0), 0.0);
    assert!((cfg.lr_at(5) - 5e-4).abs() < 1e-18);
    assert_eq!(cfg.lr_at(10), 1e-3);
    assert!((cfg.lr_at(60) - 5e-4).abs() < 1e-15);
    assert!(cfg.lr_at(110).abs() < 1e-18);
    for s in 10..110 {
        assert!(cfg.lr_at(s + 1) <= cfg.lr_at(s));
    }
}

#[test]
fn three_step_scalar_trace() {
    // Constant gradient 1, lr 0.1, no decay: every bias-corrected step is
    // m_hat / (sqrt(v_hat) + eps) = 1 / (1 + 1e-8).
    let mut store = scalar_store(1.0);
    let cfg = AdamWConfig {
        lr_base: 0.1,
        weight_decay: 0.0,
        warmup_steps: 0,
        total_steps: 3,
        clip_norm: None,
        schedule: LrSchedule::Constant,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &store).unwrap();
    let id = store.find("w").unwrap();
    let mut expect = 1.0;
    for _ in 0..3 {
        store.get_mut(id).grad[0] = 1.0;
        opt.update(&mut store).unwrap();
        expect -= 0.1 / (1.0 + 1e-8);
        assert!((store.get(id).value.data()[0] - expect).abs() < 1e-12);
    }
    assert!(matches!(opt.update(&mut store), Err(Error::Contract(_))));
}

#[test]
fn decoupled_weight_decay() {
    let mut store = scalar_store(2.0);
    let w = store.add_with("m", Tensor::from_f64(&[1], &[2.0]).unwrap(), true, true).unwrap();
    let cfg = AdamWConfig {
        lr_base: 0.1,
        weight_decay: 0.5,
        warmup_steps: 0,
        schedule: LrSchedule::Constant,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &store).unwrap();
    opt.update(&mut store).unwrap();
    assert!((store.get(w).value.data()[0] - 2.0 * 0.95).abs() < 1e-15);
    // Rank-1 parameters (biases, norms) default to no decay.
    assert_eq!(store.get(store.find("w").unwrap()).value.data()[0], 2.0);
}

#[test]
fn clipping_and_non_finite() {
    let mut store = scalar_store(0.0);
    let id = store.find("w").unwrap();
    let cfg = AdamWConfig { clip_norm: Some(1.0), ..AdamWConfig::default() };
    let mut opt = AdamW::new(cfg, &store).unwrap();
    store.get_mut(id).grad[0] = 30.0;
    let info = opt.update(&mut store).unwrap();
    assert_eq!(info.grad_norm, 30.0);

    let before = store.get(id).value.clone();
    store.get_mut(id).grad[0] = f64::NAN;
    assert!(matches!(opt.update(&mut store), Err(Error::NonFinite(_))));
    assert_eq!(store.get(id).value, before);
    assert_eq!(opt.step, 1);
}

#[test]
fn invalid_config() {
    let store = scalar_store(0.0);
    for cfg in [
        AdamWConfig { betas: (1.0, 0.999), ..AdamWConfig::default() },
        AdamWConfig { eps: 0.0, ..AdamWConfig::default() },
        AdamWConfig { clip_norm: Some(-1.0), ..AdamWConfig::default() },
        AdamWConfig { lr_base: f64::NAN, ..AdamWConfig::default() },
    ] {
        assert!(matches!(AdamW::new(cfg, &store), Err(Error::Config(_))));
    }
}
