//! Independent reference implementations shared by the oracle suites.
#![allow(dead_code)]

use aoi_sched::nn::{Features, NetShape, Weights};
use rand::Rng;

/// Loop-by-loop forward pass read straight off the named layers. Returns the
/// outputs and the smallest pre-activation magnitude seen at any ReLU.
pub fn naive_forward(w: &Weights, x: &Features) -> (Vec<f64>, f64) {
    let layers = w.layers();
    let get = |name: &str| layers.iter().find(|l| l.name == name).unwrap();
    let (cw, cb) = (get("conv.weight"), get("conv.bias"));
    let (dw, db) = (get("dense.weight"), get("dense.bias"));
    let (ow, ob) = (get("out.weight"), get("out.bias"));
    let (filters, kernel) = (cw.dims[0], cw.dims[1]);
    let positions = x.window.len() - kernel + 1;
    let mut margin = f64::INFINITY;

    let mut dense_in = Vec::new();
    for f in 0..filters {
        for p in 0..positions {
            let mut z = cb.data[f];
            for t in 0..kernel {
                z += cw.data[f * kernel + t] * x.window[p + t];
            }
            margin = margin.min(z.abs());
            dense_in.push(z.max(0.0));
        }
    }
    dense_in.extend_from_slice(&x.extras);

    let (hidden_units, n_in) = (dw.dims[0], dw.dims[1]);
    assert_eq!(n_in, dense_in.len());
    let mut hidden = Vec::new();
    for h in 0..hidden_units {
        let mut z = db.data[h];
        for i in 0..n_in {
            z += dw.data[h * n_in + i] * dense_in[i];
        }
        margin = margin.min(z.abs());
        hidden.push(z.max(0.0));
    }

    let outputs = ow.dims[0];
    let mut out = Vec::new();
    for o in 0..outputs {
        let mut z = ob.data[o];
        for h in 0..hidden_units {
            z += ow.data[o * hidden_units + h] * hidden[h];
        }
        out.push(z);
    }
    (out, margin)
}

pub fn naive_log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn naive_entropy(z: &[f64]) -> f64 {
    naive_log_softmax(z).iter().map(|lp| -lp.exp() * lp).sum()
}

/// A random small network with every parameter (biases included) drawn
/// from N(0, 0.5^2)-ish uniform noise, plus random features.
pub fn random_net(rng: &mut impl Rng, outputs: Option<usize>) -> (Weights, Features) {
    let n = rng.random_range(1..=4usize);
    let window = rng.random_range(2..=6usize);
    let shape = NetShape {
        window,
        extras: n + 1,
        filters: rng.random_range(1..=4),
        kernel: rng.random_range(1..=window),
        hidden: rng.random_range(2..=8),
        outputs: outputs.unwrap_or(n),
    };
    let mut w = Weights::zeros(shape);
    let flat: Vec<f64> = (0..w.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    w.set_flat(&flat).unwrap();
    let x = Features {
        window: (0..window).map(|_| rng.random_range(0.0..2.0)).collect(),
        extras: (0..n + 1).map(|_| rng.random_range(0.0..3.0)).collect(),
    };
    (w, x)
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every parameter.
pub fn finite_difference(w: &Weights, f: impl Fn(&Weights) -> f64) -> Vec<f64> {
    let base = w.to_flat();
    let mut probe = w.clone();
    (0..base.len())
        .map(|i| {
            let mut v = base.clone();
            v[i] = base[i] + FD_STEP;
            probe.set_flat(&v).unwrap();
            let up = f(&probe);
            v[i] = base[i] - FD_STEP;
            probe.set_flat(&v).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|)`, with magnitudes below 1e-6 treated as
/// 1e-6 so exact zeros do not divide by zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Pre-activations closer to zero than this could flip a ReLU under a
/// finite-difference step; such draws are rejected and redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
