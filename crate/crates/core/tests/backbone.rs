use sbm_core::backbone::{Backbone, BackboneConfig};
use sbm_core::loss::{LossWeights, SpectralLoss};
use sbm_core::signal::StftConfig;
use sbm_core::ssm::ScanImpl;
use sbm_core::tensor::check_param_gradients;
use sbm_core::{rng, Error, ParamStore, Tape, Tensor};

fn tiny(timestep: bool, time_causal: bool) -> BackboneConfig {
    BackboneConfig {
        n_blocks: 1,
        d_model: 4,
        d_state: 2,
        expand: 2,
        conv_width: 2,
        tf_compress: (2, 2),
        time_causal,
        timestep,
        fourier_dim: 4,
        fourier_scale: 1.0,
        ..BackboneConfig::default()
    }
}

fn build(cfg: BackboneConfig, seed: u64) -> (Backbone, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let bb = Backbone::new(cfg, &mut store, &mut rng::seeded(seed)).unwrap();
    (bb, store)
}

fn randn(seed: u64, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), rng::normals(&mut rng::seeded(seed), shape.iter().product())).unwrap()
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Gathers `idx` along `axis` of a plain tensor.
fn permute_axis(x: &Tensor<f64>, axis: usize, idx: &[usize]) -> Tensor<f64> {
    let mut tape = Tape::<f64>::no_grad();
    let v = tape.constant(x.clone());
    let g = tape.gather(v, axis, idx.to_vec()).unwrap();
    tape.value(g).clone()
}

#[test]
fn output_shape_matches_input() {
    let cfg = BackboneConfig { n_blocks: 1, d_model: 16, d_state: 4, ..BackboneConfig::default() };
    let (bb, store) = build(cfg, 1);
    for (f, l) in [(129, 64), (257, 100)] {
        let x = randn(2, &[1, 2, f, l]);
        let y = bb.predict(&store, &x, &[0.5]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }
}

#[test]
fn compress_shape_example() {
    // F=64, L=128, factors (4, 2), d_model=96: a 16 x 64 grid of 96 channels.
    let cfg = BackboneConfig { d_model: 96, n_blocks: 0, ..BackboneConfig::default() };
    let (bb, store) = build(cfg.clone(), 3);
    assert_eq!(cfg.compressed_grid(64, 128).unwrap(), (16, 64));
    let mut tape = Tape::<f64>::no_grad();
    let x = tape.constant(randn(4, &[2, 2, 64, 128]));
    let h = bb.tf_compress(&mut tape, &store, x).unwrap();
    assert_eq!(tape.shape(h), &[2, 16, 64, 96]);
    let back = bb.tf_decompress(&mut tape, &store, h, (64, 128)).unwrap();
    assert_eq!(tape.shape(back), &[2, 2, 64, 128]);
}

#[test]
fn factor_larger_than_grid_is_config_error() {
    let cfg = BackboneConfig { tf_compress: (8, 2), ..tiny(true, true) };
    let (bb, store) = build(cfg, 5);
    let x = randn(6, &[1, 2, 5, 8]);
    assert!(matches!(bb.predict(&store, &x, &[0.5]), Err(Error::Config(_))));
}

#[test]
fn identity_projections_invert_compression() {
    for (ff, tf) in [(1, 1), (2, 2), (4, 2)] {
        let patch = 2 * ff * tf;
        let cfg = BackboneConfig { d_model: patch, tf_compress: (ff, tf), n_blocks: 0, ..BackboneConfig::default() };
        let (bb, mut store) = build(cfg, 7);
        let eye = Tensor::from_fn([patch, patch], |i| if i / patch == i % patch { 1.0 } else { 0.0 });
        for lin in [&bb.compress, &bb.decompress] {
            store.get_mut(lin.w).value = eye.clone();
            store.get_mut(lin.b.unwrap()).value = Tensor::zeros([patch]);
        }
        // Odd sizes exercise the reflect padding and the final crop.
        let x = randn(8, &[2, 2, 9, 7]);
        let mut tape = Tape::<f64>::no_grad();
        let xv = tape.constant(x.clone());
        let h = bb.tf_compress(&mut tape, &store, xv).unwrap();
        let back = bb.tf_decompress(&mut tape, &store, h, (9, 7)).unwrap();
        assert_eq!(tape.value(back), &x, "factors {ff}x{tf}");
    }
}

#[test]
fn zero_output_projection_gives_identity() {
    let cfg = BackboneConfig { zero_init_output: true, ..tiny(true, true) };
    let (bb, store) = build(cfg, 9);
    let x = randn(10, &[2, 2, 9, 8]);
    assert_eq!(bb.predict(&store, &x, &[0.2, 0.9]).unwrap(), x);
}

#[test]
fn zeroed_blocks_are_identity() {
    let (bb, mut store) = build(tiny(true, false), 11);
    for block in &bb.blocks {
        block.mixer.zero_output(&mut store);
    }
    bb.fullband.mixer.fwd.out.zero(&mut store);
    bb.fullband.mixer.bwd.out.zero(&mut store);
    let mut tape = Tape::<f64>::no_grad();
    let h = tape.constant(randn(12, &[2, 3, 4, 4]));
    let e = bb.embed_time(&mut tape, &store, &[0.3, 0.6]).unwrap();
    let nb = bb.narrowband(&mut tape, &store, &bb.blocks[0], h, e).unwrap();
    assert_eq!(tape.value(nb), tape.value(h));
    let fb = bb.fullband_block(&mut tape, &store, h).unwrap();
    assert_eq!(tape.value(fb), tape.value(h));
}

fn narrowband_out(bb: &Backbone, store: &ParamStore<f64>, h: &Tensor<f64>, t: &[f64]) -> Tensor<f64> {
    let mut tape = Tape::<f64>::no_grad();
    let hv = tape.constant(h.clone());
    let e = bb.embed_time(&mut tape, store, t).unwrap();
    let y = bb.narrowband(&mut tape, store, &bb.blocks[0], hv, e).unwrap();
    tape.value(y).clone()
}

fn fullband_out(bb: &Backbone, store: &ParamStore<f64>, h: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::<f64>::no_grad();
    let hv = tape.constant(h.clone());
    let y = bb.fullband_block(&mut tape, store, hv).unwrap();
    tape.value(y).clone()
}

#[test]
fn narrowband_is_equivariant_along_frequency() {
    let perm = [3, 0, 4, 1, 2];
    for causal in [true, false] {
        let (bb, store) = build(tiny(true, causal), 13);
        let h = randn(14, &[2, 5, 6, 4]);
        let direct = permute_axis(&narrowband_out(&bb, &store, &h, &[0.1, 0.7]), 1, &perm);
        let permuted = narrowband_out(&bb, &store, &permute_axis(&h, 1, &perm), &[0.1, 0.7]);
        assert!(max_abs_diff(&direct, &permuted) < 1e-12);
    }
}

#[test]
fn fullband_mixes_frequency_but_not_time() {
    let (bb, store) = build(tiny(true, true), 15);
    let h = randn(16, &[2, 5, 6, 4]);
    let f_perm = [3, 0, 4, 1, 2];
    let direct = permute_axis(&fullband_out(&bb, &store, &h), 1, &f_perm);
    let permuted = fullband_out(&bb, &store, &permute_axis(&h, 1, &f_perm));
    assert!(max_abs_diff(&direct, &permuted) > 1e-6);

    let t_perm = [5, 2, 0, 1, 4, 3];
    let direct = permute_axis(&fullband_out(&bb, &store, &h), 2, &t_perm);
    let permuted = fullband_out(&bb, &store, &permute_axis(&h, 2, &t_perm));
    assert!(max_abs_diff(&direct, &permuted) < 1e-12);
}

#[test]
fn causal_time_mixing_ignores_future_frames() {
    let (bb, store) = build(tiny(true, true), 17);
    let h = randn(18, &[1, 2, 6, 4]);
    let mut changed = h.clone();
    // Perturb the last frame only.
    for f in 0..2 {
        for d in 0..4 {
            changed.data_mut()[(f * 6 + 5) * 4 + d] += 1.0;
        }
    }
    let (a, b) = (narrowband_out(&bb, &store, &h, &[0.5]), narrowband_out(&bb, &store, &changed, &[0.5]));
    for f in 0..2 {
        for l in 0..5 {
            for d in 0..4 {
                let i = (f * 6 + l) * 4 + d;
                assert_eq!(a.data()[i], b.data()[i]);
            }
        }
    }
}

#[test]
fn fourier_features() {
    let cfg = BackboneConfig { fourier_dim: 64, fourier_scale: 16.0, ..tiny(true, true) };
    let (bb, store) = build(cfg, 19);
    let emb = bb.embed.as_ref().unwrap();
    let feats = |t: &[f64]| {
        let mut tape = Tape::<f64>::no_grad();
        let v = emb.features(&mut tape, &store, t).unwrap();
        tape.value(v).clone()
    };
    let zero = feats(&[0.0]);
    assert!(zero.data()[..32].iter().all(|&v| v == 0.0));
    assert!(zero.data()[32..].iter().all(|&v| v == 1.0));

    let freqs = store.get(emb.freqs).value.data().to_vec();
    let t = 0.37;
    let got = feats(&[t]);
    for (j, f) in freqs.iter().enumerate() {
        let arg = 2.0 * std::f64::consts::PI * f * t;
        assert!((got.data()[j] - arg.sin()).abs() < 1e-12);
        assert!((got.data()[32 + j] - arg.cos()).abs() < 1e-12);
        // Shifting t by 1/f is a full period for that frequency.
        let shifted = feats(&[t + 1.0 / f]);
        assert!((shifted.data()[j] - got.data()[j]).abs() < 1e-9);
    }

    let (a, b) = (feats(&[0.25]), feats(&[0.75]));
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let norm = |v: &Tensor<f64>| v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(dot / (norm(&a) * norm(&b)) < 0.99);
    assert!(!store.get(emb.freqs).trainable);
}

#[test]
fn output_depends_on_time() {
    let (bb, store) = build(tiny(true, true), 21);
    let x = randn(22, &[1, 2, 9, 8]);
    let a = bb.predict(&store, &x, &[0.1]).unwrap();
    let b = bb.predict(&store, &x, &[0.9]).unwrap();
    assert!(max_abs_diff(&a, &b) > 0.0);
}

#[test]
fn predictive_mode_has_no_time_parameters() {
    let (_, with_t) = build(tiny(true, true), 23);
    let (bb, without) = build(tiny(false, true), 23);
    let names = |s: &ParamStore<f64>| s.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
    let (a, b) = (names(&with_t), names(&without));
    assert!(b.iter().all(|n| a.contains(n)));
    let extra: Vec<_> = a.iter().filter(|n| !b.contains(n)).map(|(n, _)| n.as_str()).collect();
    assert!(!extra.is_empty());
    assert!(extra.iter().all(|n| n.starts_with("temb.") || n.contains(".t_proj.")), "{extra:?}");
    let x = randn(24, &[1, 2, 9, 8]);
    assert!(bb.predict(&without, &x, &[]).is_ok());
}

#[test]
fn non_finite_input_is_rejected() {
    let (bb, store) = build(tiny(true, true), 25);
    let mut x = randn(26, &[1, 2, 9, 8]);
    x.data_mut()[5] = f64::NAN;
    assert!(matches!(bb.predict(&store, &x, &[0.5]), Err(Error::Input(_))));
    let x = randn(26, &[1, 2, 9, 8]);
    assert!(matches!(bb.predict(&store, &x, &[0.5, 0.1]), Err(Error::Dimension { .. })));
}

#[test]
fn param_count_is_stable() {
    let cfg = BackboneConfig::default();
    let n = Backbone::param_count(&cfg).unwrap();
    assert_eq!(n, Backbone::param_count(&cfg).unwrap());
    let (_, store) = build(cfg, 99);
    assert_eq!(store.num_scalars(), n);
    assert!(n > 100_000 && n < 1_000_000, "{n}");
}

#[test]
fn forward_is_deterministic() {
    let (bb, store) = build(tiny(true, false), 27);
    let x = randn(28, &[2, 2, 9, 8]);
    assert_eq!(bb.predict(&store, &x, &[0.3, 0.4]).unwrap(), bb.predict(&store, &x, &[0.3, 0.4]).unwrap());
}

#[test]
fn every_parameter_receives_gradient() {
    for causal in [true, false] {
        let (bb, mut store) = build(BackboneConfig { n_blocks: 2, ..tiny(true, causal) }, 29);
        let mut tape = Tape::new();
        let x = tape.constant(randn(30, &[2, 2, 9, 8]));
        let y = bb.forward(&mut tape, &store, x, &[0.3, 0.8]).unwrap();
        let target = tape.constant(randn(31, &[2, 2, 9, 8]));
        let d = tape.sub(y, target).unwrap();
        let sq = tape.square(d).unwrap();
        let l = tape.mean_all(sq).unwrap();
        tape.backward_into(l, &mut store).unwrap();
        for (_, p) in store.iter().filter(|(_, p)| p.trainable) {
            let norm: f64 = p.grad.iter().map(|g| g * g).sum();
            assert!(norm > 0.0, "{} has no gradient", p.name);
        }
    }
}

#[test]
fn narrowband_gradients() {
    let (bb, store) = build(tiny(true, true), 33);
    let h = randn(34, &[1, 2, 4, 4]);
    let report = check_param_gradients(&store, 1e-3, |tp, s| {
        let hv = tp.constant(h.clone());
        let e = bb.embed_time(tp, s, &[0.4])?;
        let y = bb.narrowband(tp, s, &bb.blocks[0], hv, e)?;
        let sq = tp.square(y)?;
        tp.sum_all(sq)
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn full_model_and_loss_gradients() {
    for (scan, causal) in [(ScanImpl::Sequential, true), (ScanImpl::Parallel, false)] {
        let cfg = BackboneConfig { scan, ..tiny(true, causal) };
        assert!(Backbone::param_count(&cfg).unwrap() <= 2_000);
        let (bb, mut store) = build(cfg, 35);
        // Move the step sizes to around 0.5 so the state path carries real gradient
        // over a four-frame sequence.
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.ends_with("dt_proj.b")).map(|(id, _)| id).collect();
        for id in ids {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = -0.43);
        }
        let stft = StftConfig::new(16, 4, 16_000).unwrap();
        let loss = SpectralLoss::<f64>::new(LossWeights { lambda: [1.0; 4], mr_resolutions: vec![(8, 2), (16, 4)] }, stft)
            .unwrap();
        let n = 32;
        let clean = randn(36, &[2, n]);
        let noisy = randn(37, &[2, n]);
        let target = loss.main_stft().analyze(&clean).unwrap().planes;
        let input = loss.main_stft().analyze(&noisy).unwrap().planes;
        let run = |eps| {
            check_param_gradients(&store, eps, |tp, s| {
                let x = tp.constant(input.clone());
                let tg = tp.constant(target.clone());
                let est = bb.forward(tp, s, x, &[0.35, 0.9])?;
                Ok(loss.compute(tp, tg, est, n)?.total)
            })
            .unwrap()
        };
        // Step and time-scale parameters see gradients around 1e-8, where a small step
        // drowns in cancellation; they get a wide step, everything else a narrow one.
        let (narrow, wide) = (run(1e-5), run(1e-3));
        for (a, b) in narrow.entries.iter().zip(&wide.entries) {
            let e = if a.max_abs_analytic < 1e-5 { b } else { a };
            assert!(e.rel_error <= 1e-4, "{scan:?}: {e:?}");
        }
    }
}
