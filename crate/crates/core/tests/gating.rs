use nilm_core::dataset::{Geometry, Segment, WindowSource};
use nilm_core::models::{build, Disaggregator, SubnetworkConfig, Variant, STANDBY_PARAM};
use nilm_core::nn::loss::LossMode;
use nilm_core::nn::params::ParameterSet;
use nilm_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mini() -> SubnetworkConfig {
    SubnetworkConfig::miniature(Geometry::new(4, 8).unwrap())
}

struct Forward {
    output: Vec<f64>,
    p_hat: Vec<f64>,
    o_hat: Vec<f64>,
}

fn forward(model: &dyn Disaggregator, params: &ParameterSet, x: &Tensor) -> Forward {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = model.forward(&mut tape, &bound, xv).unwrap();
    Forward {
        output: tape.value(out.output).unwrap().to_vec(),
        p_hat: tape.value(out.p_hat.unwrap()).unwrap().to_vec(),
        o_hat: tape.value(out.o_hat.unwrap()).unwrap().to_vec(),
    }
}

/// Parameters with the classifier's output bias shifted by `shift`, so
/// cases range from mostly closed to mostly open gates.
fn params(model: &dyn Disaggregator, seed: u64, shift: f64, standby: f64) -> ParameterSet {
    let mut p = model.init_params(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    p.get_mut("on.out.bias").unwrap().data_mut().iter_mut().for_each(|b| *b += shift);
    if let Some(b) = p.get_mut(STANDBY_PARAM) {
        b.data_mut()[0] = standby;
    }
    p
}

fn input(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(99));
    Tensor::new(&[3, 20], (0..60).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_gate_passes_or_zeroes(seed in 0u64..10_000, shift in -2.0..2.0f64) {
        let model = build(Variant::HardSgn, &mini()).unwrap();
        let f = forward(model.as_ref(), &params(model.as_ref(), seed, shift, 0.0), &input(seed));
        for ((y, p), o) in f.output.iter().zip(&f.p_hat).zip(&f.o_hat) {
            if *o >= 0.5 {
                prop_assert_eq!(y.to_bits(), p.to_bits());
            } else {
                prop_assert_eq!(*y, 0.0);
            }
        }
    }

    #[test]
    fn hard_gate_sp_substitutes_standby(seed in 0u64..10_000, shift in -2.0..2.0f64, b in -5.0..5.0f64) {
        let model = build(Variant::HardSgnSp, &mini()).unwrap();
        let f = forward(model.as_ref(), &params(model.as_ref(), seed, shift, b), &input(seed));
        for ((y, p), o) in f.output.iter().zip(&f.p_hat).zip(&f.o_hat) {
            prop_assert_eq!(*y, if *o >= 0.5 { *p } else { b });
        }
    }

    #[test]
    fn soft_gates_interpolate(seed in 0u64..10_000, shift in -2.0..2.0f64, b in -5.0..5.0f64) {
        let sgn = build(Variant::Sgn, &mini()).unwrap();
        let sp = build(Variant::SgnSp, &mini()).unwrap();
        let x = input(seed);
        let f = forward(sgn.as_ref(), &params(sgn.as_ref(), seed, shift, 0.0), &x);
        let g = forward(sp.as_ref(), &params(sp.as_ref(), seed, shift, b), &x);
        for i in 0..f.output.len() {
            prop_assert_eq!(f.output[i], f.p_hat[i] * f.o_hat[i]);
            let expected = g.p_hat[i] * g.o_hat[i] + (1.0 - g.o_hat[i]) * b;
            prop_assert!((g.output[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

/// With the gate pinned open, the gated output loss is the regression MSE,
/// so SGN trained on it is the single-subnetwork baseline. The sigmoid
/// stops one ulp below 1, hence the tolerance.
#[test]
fn open_gate_sgn_is_seq2seq() {
    let cfg = mini();
    let sgn = build(Variant::Sgn, &cfg).unwrap();
    let s2s = build(Variant::Seq2Seq, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..2.0)).collect();
    let seg = Segment {
        aggregate: target.iter().map(|t| t + 0.5).collect(),
        labels: target.iter().map(|&t| (t > 1.0) as u8 as f64).collect(),
        target,
    };
    let batch = WindowSource::new(cfg.geometry, vec![seg]).unwrap().sample_batch(&mut rng, 4).unwrap();

    let mut sp = sgn.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    sp.get_mut("on.out.weight").unwrap().data_mut().fill(0.0);
    sp.get_mut("on.out.bias").unwrap().data_mut().fill(60.0);
    let mut qp = ParameterSet::new();
    for (name, t) in sp.iter().filter(|(n, _)| n.starts_with("power.")) {
        qp.insert(name, t.clone()).unwrap();
    }

    let run = |model: &dyn Disaggregator, params: &ParameterSet, mode| {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(batch.inputs.clone());
        let out = model.forward(&mut tape, &bound, x).unwrap();
        let loss = model.training_loss(&mut tape, &out, &batch, mode).unwrap();
        let value = tape.item(loss.total).unwrap();
        let grads = tape.backward(loss.total).unwrap();
        let g = grads.get(bound.get("power.conv0.kernel").unwrap()).unwrap().to_vec();
        (value, g)
    };
    let (l_sgn, g_sgn) = run(sgn.as_ref(), &sp, LossMode::OutputOnly);
    let (l_s2s, g_s2s) = run(s2s.as_ref(), &qp, LossMode::Joint);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
    assert!(close(l_sgn, l_s2s), "{l_sgn} vs {l_s2s}");
    assert_eq!(g_sgn.len(), g_s2s.len());
    assert!(g_sgn.iter().zip(&g_s2s).all(|(a, b)| close(*a, *b)));
}
