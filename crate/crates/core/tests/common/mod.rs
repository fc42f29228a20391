//! Central finite-difference gradient checks shared by the gradient tests
//! and the acceptance runner.
#![allow(dead_code)]

use gsflow::critic::TwinCritic;
use gsflow::diffcore::{Activation, Matrix, Parameterized};
use gsflow::qprior::Cvae;
use gsflow::rng::{standard_normal, stream, StreamRng};
use gsflow::student::{EntropyTemp, StochasticActor};
use gsflow::teacher::FlowTeacher;
use rand::seq::index::sample;
use rand::Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const COORDS: usize = 120;
/// Denominator floor so that vanishing gradients compare absolutely.
pub const FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub coords: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.coords >= 100 && self.max_rel < TOL
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// `loss` must zero nothing itself: it runs forward and backward, accumulating
/// gradients, and returns the scalar loss.
pub fn check<M: Parameterized>(
    name: &'static str,
    model: &mut M,
    mut loss: impl FnMut(&mut M) -> f64,
    coords: usize,
    rng: &mut StreamRng,
) -> GradReport {
    model.zero_grad();
    loss(model);
    let analytic: Vec<f64> = model.params().iter().flat_map(|p| p.grad.clone()).collect();
    let total = analytic.len();
    let picks = sample(rng, total, coords.min(total)).into_vec();
    let mut max_rel: f64 = 0.0;
    for &flat in &picks {
        let nudge = |m: &mut M, d: f64| {
            let mut k = flat;
            for p in m.params_mut() {
                if k < p.len() {
                    p.values[k] += d;
                    return;
                }
                k -= p.len();
            }
        };
        nudge(model, H);
        let up = loss(model);
        nudge(model, -2.0 * H);
        let down = loss(model);
        nudge(model, H);
        let num = (up - down) / (2.0 * H);
        max_rel = max_rel.max(rel_err(analytic[flat], num));
    }
    model.zero_grad();
    GradReport {
        name,
        coords: picks.len(),
        max_rel,
    }
}

fn uniform(rng: &mut StreamRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

const ACT: Activation = Activation::Gelu;
const HIDDEN: [usize; 2] = [32, 32];
const LOW: [f64; 2] = [-1.0, -1.0];
const HIGH: [f64; 2] = [1.0, 1.0];

/// Checks every trainable loss on fresh random networks and batches.
pub fn gradient_suite(seed: u64) -> Vec<GradReport> {
    let mut rng = stream(seed, "gradcheck");
    let b = 16;
    let states = uniform(&mut rng, b, 2, -1.0, 1.0);
    let actions = uniform(&mut rng, b, 2, -1.0, 1.0);
    let mut out = Vec::new();

    let mut teacher = FlowTeacher::new(2, 2, &HIDDEN, ACT, 10, (&LOW, &HIGH), &mut rng).unwrap();
    let x0 = standard_normal(&mut rng, b, 2);
    let t: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..1.0)).collect();
    out.push(check(
        "cfm",
        &mut teacher,
        |m| m.cfm_loss_with(&states, &actions, &x0, &t).unwrap(),
        COORDS,
        &mut rng,
    ));

    let mut critic = TwinCritic::new(2, 2, &HIDDEN, ACT, 0.005, 0.99, &mut rng).unwrap();
    let y: Vec<f64> = (0..b).map(|_| rng.gen_range(-10.0..10.0)).collect();
    out.push(check(
        "critic",
        &mut critic,
        |m| m.critic_loss(&states, &actions, &y).unwrap(),
        COORDS,
        &mut rng,
    ));

    let mut cvae = Cvae::new(2, 2, 2, &HIDDEN, ACT, 0.1, 1.0, &mut rng).unwrap();
    let x_adv = standard_normal(&mut rng, b, 2);
    let eps = standard_normal(&mut rng, b, 2);
    out.push(check(
        "cvae",
        &mut cvae,
        |m| m.loss_with(&states, &x_adv, &eps).unwrap().total,
        COORDS,
        &mut rng,
    ));

    let mut actor = StochasticActor::new(2, 2, &HIDDEN, ACT, (&LOW, &HIGH), &mut rng).unwrap();
    let x_hat = standard_normal(&mut rng, b, 2);
    let a_teacher = uniform(&mut rng, b, 2, -0.9, 0.9);
    let eps_a = standard_normal(&mut rng, b, 2);
    out.push(check(
        "actor",
        &mut actor,
        |m| {
            m.actor_loss_with(&states, &x_hat, &a_teacher, &eps_a, &mut critic, 10.0, 0.3)
                .unwrap()
                .total
        },
        COORDS,
        &mut rng,
    ));

    // one scalar parameter, so probe many (alpha2, entropy) points instead
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for _ in 0..COORDS {
        let mut temp = EntropyTemp::new(rng.gen_range(1e-3..1.0), -1.0, 3e-4);
        let h = rng.gen_range(-4.0..2.0);
        let r = check("temperature", &mut temp, |m| m.temp_loss(h), 1, &mut rng);
        worst = worst.max(r.max_rel);
        n += r.coords;
    }
    out.push(GradReport {
        name: "temperature",
        coords: n,
        max_rel: worst,
    });
    out
}
