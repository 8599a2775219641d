//! Gradients of the gated-output loss against their closed forms:
//! dL/dp_j = -(2/T) o_j (y_j - p_j o_j) and dL/do_j = -(2/T) p_j (y_j - p_j o_j).

use nilm_core::nn::loss::loss_output;
use nilm_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Tape gradients with respect to `p` and `o`.
fn tape_grads(y: &[f64], p: &[f64], o: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let yv = tape.constant(Tensor::vector(y.to_vec()).unwrap());
    let pv = tape.variable(Tensor::vector(p.to_vec()).unwrap());
    let ov = tape.variable(Tensor::vector(o.to_vec()).unwrap());
    let loss = loss_output(&mut tape, yv, pv, ov).unwrap();
    let g = tape.backward(loss).unwrap();
    (g.get(pv).unwrap().to_vec(), g.get(ov).unwrap().to_vec())
}

#[test]
fn thousand_random_triples_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = rng.random_range(1..=32);
        let y: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..5.0)).collect();
        let p: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..6.0)).collect();
        let o: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
        let (gp, go) = tape_grads(&y, &p, &o);
        let scale = 2.0 / t as f64;
        for j in 0..t {
            let resid = y[j] - p[j] * o[j];
            worst = worst.max(rel(gp[j], -scale * o[j] * resid));
            worst = worst.max(rel(go[j], -scale * p[j] * resid));
        }
    }
    assert!(worst < 1e-10, "worst relative error {worst:e}");
}

#[test]
fn closed_gate_stops_regression_learning() {
    let (gp, go) = tape_grads(&[3.0, 1.0], &[2.0, 0.5], &[0.0, 0.0]);
    assert_eq!(gp, [0.0, 0.0]);
    // the gate still receives a signal while p is nonzero, which can reopen it
    assert_eq!(go, [-6.0, -0.5]);
}
