//! Backward rules against central finite differences, op by op and through
//! whole miniature networks.

use nilm_core::dataset::{Geometry, Segment, WindowSource, WindowedBatch};
use nilm_core::gradcheck::{check_gradient, DEFAULT_STEP};
use nilm_core::models::{build, Disaggregator, SubnetworkConfig, Variant};
use nilm_core::nn::loss::{loss_joint, loss_on, loss_output, loss_power, LossMode};
use nilm_core::nn::params::ParameterSet;
use nilm_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar `sum(op(inputs) * r)` for a fixed random `r`, so every output
/// element reaches the loss with a distinct weight.
fn reduce(tape: &mut Tape<'_>, out: Var, weights: &[f64]) -> Var {
    let shape = tape.shape(out).unwrap().to_vec();
    if shape.iter().product::<usize>() == 1 {
        return out;
    }
    let r = tape.constant(Tensor::new(&shape, weights[..shape.iter().product()].to_vec()).unwrap());
    let prod = tape.mul(out, r).unwrap();
    tape.sum(prod).unwrap()
}

/// Worst relative error over every input of `op`.
fn check_op(seed: u64, shapes: &[&[usize]], op: &dyn Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let weights: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();

    let eval = |values: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let out = op(&mut tape, &vars);
        let loss = reduce(&mut tape, out, &weights);
        let value = tape.item(loss).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = vars
            .iter()
            .zip(values)
            .map(|(v, t)| grads.get(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        (value, g)
    };
    let (_, analytic) = eval(&inputs);

    let mut worst: f64 = 0.0;
    for (k, tensor) in inputs.iter().enumerate() {
        let f = |x: &[f64]| {
            let mut probe = inputs.clone();
            probe[k] = Tensor::new(tensor.shape(), x.to_vec()).unwrap();
            eval(&probe).0
        };
        let r = check_gradient(f, tensor.data(), &analytic[k], DEFAULT_STEP, None);
        worst = worst.max(r.max_rel_error);
    }
    worst
}

fn assert_op(name: &str, shapes: &[&[usize]], op: &dyn Fn(&mut Tape<'_>, &[Var]) -> Var) {
    for seed in 0..SEEDS {
        let err = check_op(seed, shapes, op);
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv1d() {
    assert_op("conv1d", &[&[2, 7, 3], &[3, 3, 4], &[4]], &|t, v| {
        t.conv1d_valid(v[0], v[1], v[2]).unwrap()
    });
}

#[test]
fn dense() {
    assert_op("dense", &[&[3, 5], &[5, 4], &[4]], &|t, v| t.dense(v[0], v[1], v[2]).unwrap());
}

#[test]
fn elementwise() {
    let s: &[usize] = &[3, 4];
    assert_op("relu", &[s], &|t, v| t.relu(v[0]).unwrap());
    assert_op("sigmoid", &[s], &|t, v| t.sigmoid(v[0]).unwrap());
    assert_op("mul", &[s, s], &|t, v| t.mul(v[0], v[1]).unwrap());
    assert_op("add", &[s, s], &|t, v| t.add(v[0], v[1]).unwrap());
    assert_op("sub", &[s, s], &|t, v| t.sub(v[0], v[1]).unwrap());
    assert_op("one_minus", &[s], &|t, v| t.one_minus(v[0]).unwrap());
    assert_op("scale", &[s], &|t, v| t.scale(v[0], -2.5).unwrap());
    assert_op("scale_by", &[s, &[1]], &|t, v| t.scale_by(v[0], v[1]).unwrap());
}

#[test]
fn reductions_and_reshape() {
    assert_op("sum", &[&[3, 4]], &|t, v| t.sum(v[0]).unwrap());
    assert_op("mean", &[&[3, 4]], &|t, v| t.mean(v[0]).unwrap());
    assert_op("reshape", &[&[3, 4]], &|t, v| t.reshape(v[0], &[2, 6]).unwrap());
    assert_op("squared_error_mean", &[&[3, 4], &[3, 4]], &|t, v| {
        t.squared_error_mean(v[0], v[1]).unwrap()
    });
}

fn labels(t: &mut Tape<'_>, shape: &[usize]) -> Var {
    let n: usize = shape.iter().product();
    t.constant(Tensor::new(shape, (0..n).map(|i| ((i * 5 + 1) % 3 == 0) as u8 as f64).collect()).unwrap())
}

#[test]
fn cross_entropy_and_losses() {
    let s: &[usize] = &[2, 4];
    assert_op("bce_with_logits_sum", &[s], &|t, v| {
        let o = labels(t, &[2, 4]);
        t.bce_with_logits_sum(v[0], o).unwrap()
    });
    assert_op("loss_on", &[s], &|t, v| {
        let o = labels(t, &[2, 4]);
        loss_on(t, o, v[0]).unwrap()
    });
    assert_op("loss_power", &[s, s], &|t, v| loss_power(t, v[0], v[1]).unwrap());
    assert_op("loss_output", &[s, s, s], &|t, v| {
        let o = t.sigmoid(v[2]).unwrap();
        loss_output(t, v[0], v[1], o).unwrap()
    });
    assert_op("loss_joint", &[s, s, s], &|t, v| {
        let o = t.sigmoid(v[2]).unwrap();
        let l = labels(t, &[2, 4]);
        loss_joint(t, v[0], v[1], o, l, v[2]).unwrap()
    });
}

fn batch(seed: u64, g: Geometry) -> WindowedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = 80;
    let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let seg = Segment {
        aggregate: target.iter().map(|t| t + rng.random_range(0.0..1.0)).collect(),
        labels: target.iter().map(|&t| (t > 0.5) as u8 as f64).collect(),
        target,
    };
    WindowSource::new(g, vec![seg]).unwrap().sample_batch(&mut rng, 3).unwrap()
}

fn model_value(model: &dyn Disaggregator, params: &ParameterSet, batch: &WindowedBatch, mode: LossMode) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(batch.inputs.clone());
    let out = model.forward(&mut tape, &bound, x).unwrap();
    let loss = model.training_loss(&mut tape, &out, batch, mode).unwrap();
    tape.item(loss.total).unwrap()
}

fn model_grads(model: &dyn Disaggregator, params: &ParameterSet, batch: &WindowedBatch, mode: LossMode) -> ParameterSet {
    let mut params = params.clone();
    let (mut grads, bound) = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(batch.inputs.clone());
        let out = model.forward(&mut tape, &bound, x).unwrap();
        let loss = model.training_loss(&mut tape, &out, batch, mode).unwrap();
        (tape.backward(loss.total).unwrap(), bound)
    };
    params.absorb(&mut grads, &bound).unwrap();
    params
}

fn check_model(variant: Variant, mode: LossMode) {
    let cfg = SubnetworkConfig::miniature(Geometry::new(4, 8).unwrap());
    let model = build(variant, &cfg).unwrap();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = model.init_params(&mut rng).unwrap();
        // Zero biases on zero-padded windows put pre-activations exactly on
        // the ReLU kink, where a central difference is meaningless.
        for (name, t) in params.iter_mut() {
            if name.ends_with(".bias") || name == "standby" {
                t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
            }
        }
        let batch = batch(seed, cfg.geometry);
        let with_grads = model_grads(model.as_ref(), &params, &batch, mode);
        let names: Vec<String> = params.names().to_vec();
        for name in &names {
            let tensor = params.get(name).unwrap();
            let analytic = with_grads.get(name).unwrap().grad().expect("every parameter gets a gradient").to_vec();
            let f = |x: &[f64]| {
                let mut probe = params.clone();
                probe.get_mut(name).unwrap().data_mut().copy_from_slice(x);
                model_value(model.as_ref(), &probe, &batch, mode)
            };
            let r = check_gradient(f, tensor.data(), &analytic, DEFAULT_STEP, None);
            assert!(r.passes(TOL), "{variant} {mode} seed {seed} {name}: {r:?}");
        }
    }
}

#[test]
fn miniature_sgn_graph() {
    check_model(Variant::Sgn, LossMode::Joint);
    check_model(Variant::Sgn, LossMode::OutputOnly);
}

#[test]
fn miniature_sgn_sp_graph() {
    check_model(Variant::SgnSp, LossMode::Joint);
}
