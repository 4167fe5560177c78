//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratsir::autodiff::{central_difference, relative_error, Graph, Mat, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Largest relative error between tape gradients of `build` and central
/// differences, over every entry of every input. `floor` keeps tiny
/// gradients from inflating the ratio.
pub fn max_grad_error<F>(inputs: &[Mat], h: f64, floor: f64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out);
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let numeric = central_difference(x, h, |probe| {
            let mut g2 = Graph::new();
            let vars2: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, m)| g2.input(if j == k { probe.clone() } else { m.clone() }))
                .collect();
            let out2 = build(&mut g2, &vars2);
            g2.scalar(out2)
        });
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(x.dim()));
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            worst = worst.max(relative_error(*a, *n, floor));
        }
    }
    worst
}

use ratsir::handkin::HandModel;
use ratsir::losses::LossWeights;
use ratsir::net::{ForwardOptions, Model, NetConfig, Variant};
use ratsir::synthdata::{generate_sample, DataConfig, SequenceSample};
use ratsir::trainer::LossContext;

/// Two-frame 8×8 samples for the tiny network, with small hand meshes so the
/// full finite-difference sweep stays quick.
pub fn tiny_setup(seed: u64) -> (DataConfig, HandModel, SequenceSample) {
    let cfg = DataConfig {
        count: 1,
        seq_len: 2,
        crop_h: 8,
        crop_w: 8,
        n_vertices: 60,
        interaction: [1.0, 1.0],
        seed,
        ..DataConfig::default()
    };
    let hands = cfg.hand_model().unwrap();
    let sample = generate_sample(&hands, &cfg, 0).unwrap();
    (cfg, hands, sample)
}

pub struct GradReport {
    pub worst: f64,
    pub count: usize,
    /// Parameter name, analytic and numeric value at the worst entry.
    pub at: (String, f64, f64),
}

/// Largest relative error between backpropagated and central-difference
/// gradients over every weight of `model`.
pub fn model_grad_error(model: &mut Model, ctx: &LossContext, sample: &SequenceSample, h: f64, floor: f64) -> GradReport {
    let opts = ForwardOptions::default();
    let (g, loss, _) = ctx.sequence_loss(model, sample, &opts).unwrap();
    let grads = g.param_grads(&g.backward(loss), &model.store);
    drop(g);
    let eval = |m: &Model| {
        let (g, loss, _) = ctx.sequence_loss(m, sample, &opts).unwrap();
        g.scalar(loss)
    };
    let mut report = GradReport { worst: 0.0, count: 0, at: (String::new(), 0.0, 0.0) };
    for p in 0..model.store.len() {
        let dim = model.store.values()[p].dim();
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = model.store.values()[p][[r, c]];
                model.store.values_mut()[p][[r, c]] = orig + h;
                let up = eval(model);
                model.store.values_mut()[p][[r, c]] = orig - h;
                let down = eval(model);
                model.store.values_mut()[p][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let e = relative_error(grads[p][[r, c]], numeric, floor);
                if e > report.worst {
                    report.worst = e;
                    report.at = (model.store.names()[p].clone(), grads[p][[r, c]], numeric);
                }
                report.count += 1;
            }
        }
    }
    report
}

pub fn tiny_model(variant: Variant, seed: u64) -> Model {
    Model::new(NetConfig::tiny(), variant, seed).unwrap()
}

pub fn tiny_context(hands: &HandModel) -> LossContext {
    LossContext::new(hands, LossWeights { close_vertices: 0, ..LossWeights::default() }, 0)
}
