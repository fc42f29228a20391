//! One-step student policies: the entropy-regularized stochastic actor and its
//! learned temperature, plus the deterministic baselines' losses.

use rand::Rng;

use crate::critic::TwinCritic;
use crate::diffcore::{Activation, AdamConfig, AdamState, LogStdRange, Matrix, Mlp, ParamTensor, Parameterized, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, StreamRng};

/// Floor inside the tanh log-determinant.
pub const SQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticActor {
    /// `[s, x_hat] -> features`, activated output.
    pub trunk: Mlp,
    pub mean_head: Mlp,
    pub log_std_head: Mlp,
    pub squash: bool,
    pub log_std_range: LogStdRange,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorLoss {
    pub total: f64,
    pub distill: f64,
    pub q_term: f64,
    pub entropy: f64,
}

struct Heads {
    mu: Matrix,
    log_std: Matrix,
    passes: Vec<bool>,
}

impl StochasticActor {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        bounds: (&[f64], &[f64]),
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("actor needs at least one hidden layer".into()));
        }
        if bounds.0.len() != action_dim || bounds.1.len() != action_dim {
            return Err(Error::Shape("action bounds do not match action dim".into()));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        let feat = *hidden.last().unwrap();
        Ok(Self {
            trunk: Mlp::new(&sizes, activation, activation, rng)?,
            mean_head: Mlp::new(&[feat, action_dim], activation, Activation::Identity, rng)?,
            log_std_head: Mlp::new(&[feat, action_dim], activation, Activation::Identity, rng)?,
            squash: true,
            log_std_range: LogStdRange::default(),
            action_low: bounds.0.to_vec(),
            action_high: bounds.1.to_vec(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.mean_head.out_dim()
    }

    fn input(&self, states: &Matrix, x_hat: &Matrix) -> Result<Matrix> {
        if x_hat.cols() != self.action_dim() {
            return Err(Error::Shape(format!(
                "noise has {} dims, actor expects {}",
                x_hat.cols(),
                self.action_dim()
            )));
        }
        if states.rows() != x_hat.rows() {
            return Err(Error::Shape("states and noise row counts differ".into()));
        }
        Matrix::hcat(&[states, x_hat])
    }

    fn clamp_log_std(&self, raw: Matrix) -> (Matrix, Vec<bool>) {
        let mut passes = Vec::with_capacity(raw.data().len());
        let ls = raw.map(|v| self.log_std_range.clamp(v).0);
        for &v in raw.data() {
            passes.push(self.log_std_range.clamp(v).1);
        }
        (ls, passes)
    }

    fn heads(&self, states: &Matrix, x_hat: &Matrix) -> Result<Heads> {
        let h = self.trunk.predict(&self.input(states, x_hat)?)?;
        let mu = self.mean_head.predict(&h)?;
        let (log_std, passes) = self.clamp_log_std(self.log_std_head.predict(&h)?);
        Ok(Heads { mu, log_std, passes })
    }

    fn heads_train(&mut self, states: &Matrix, x_hat: &Matrix, with_std: bool) -> Result<Heads> {
        let inp = self.input(states, x_hat)?;
        let h = self.trunk.forward(&inp)?;
        let mu = self.mean_head.forward(&h)?;
        let (log_std, passes) = if with_std {
            let raw = self.log_std_head.forward(&h)?;
            self.clamp_log_std(raw)
        } else {
            (Matrix::zeros(mu.rows(), mu.cols()), vec![false; mu.data().len()])
        };
        Ok(Heads { mu, log_std, passes })
    }

    fn backprop_heads(&mut self, dmu: &Matrix, dlog_std: Option<&Matrix>) -> Result<()> {
        let mut dh = self.mean_head.backward(dmu)?;
        if let Some(dl) = dlog_std {
            dh.add_assign(&self.log_std_head.backward(dl)?);
        }
        self.trunk.backward(&dh)?;
        Ok(())
    }

    #[inline]
    fn half(&self, j: usize) -> f64 {
        0.5 * (self.action_high[j] - self.action_low[j])
    }

    #[inline]
    fn mid(&self, j: usize) -> f64 {
        0.5 * (self.action_high[j] + self.action_low[j])
    }

    /// Maps pre-squash `u` to an action; identity when squashing is off.
    fn squash_matrix(&self, u: &Matrix) -> Matrix {
        if !self.squash {
            return u.clone();
        }
        let mut a = u.clone();
        for i in 0..a.rows() {
            for (j, v) in a.row_mut(i).iter_mut().enumerate() {
                *v = self.mid(j) + self.half(j) * v.tanh();
            }
        }
        a
    }

    /// `d a / d u` elementwise.
    fn squash_slope(&self, u: &Matrix) -> Matrix {
        if !self.squash {
            return u.map(|_| 1.0);
        }
        let mut d = u.clone();
        for i in 0..d.rows() {
            for (j, v) in d.row_mut(i).iter_mut().enumerate() {
                let t = v.tanh();
                *v = self.half(j) * (1.0 - t * t);
            }
        }
        d
    }

    /// Log-density of the squashed sample `u = mu + sigma * eps`.
    fn log_prob_rows(&self, u: &Matrix, log_std: &Matrix, eps: &Matrix) -> Vec<f64> {
        (0..u.rows())
            .map(|i| {
                let mut lp = 0.0;
                for j in 0..u.cols() {
                    let e = eps.get(i, j);
                    lp += -0.5 * e * e - log_std.get(i, j) - HALF_LN_2PI;
                    if self.squash {
                        let t = u.get(i, j).tanh();
                        lp -= self.half(j).ln() + (1.0 - t * t + SQUASH_EPS).ln();
                    }
                }
                lp
            })
            .collect()
    }

    /// Actions for `mode`, with their log-densities. In mean mode the density is
    /// evaluated at the mean itself.
    pub fn act(&self, states: &Matrix, x_hat: &Matrix, mode: ActMode, rng: &mut StreamRng) -> Result<(Matrix, Vec<f64>)> {
        let eps = match mode {
            ActMode::Sample => standard_normal(rng, x_hat.rows(), self.action_dim()),
            ActMode::Mean => Matrix::zeros(x_hat.rows(), self.action_dim()),
        };
        self.act_with(states, x_hat, &eps)
    }

    pub fn act_with(&self, states: &Matrix, x_hat: &Matrix, eps: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let heads = self.heads(states, x_hat)?;
        if eps.shape() != heads.mu.shape() {
            return Err(Error::Shape("eps does not match action batch".into()));
        }
        let u = heads.mu.zip_map(&heads.log_std.zip_map(eps, |l, e| l.exp() * e), |m, d| m + d);
        let lp = self.log_prob_rows(&u, &heads.log_std, eps);
        Ok((self.squash_matrix(&u), lp))
    }

    /// Deterministic action `squash(mu)`.
    pub fn mean_action(&self, states: &Matrix, x_hat: &Matrix) -> Result<Matrix> {
        let h = self.trunk.predict(&self.input(states, x_hat)?)?;
        Ok(self.squash_matrix(&self.mean_head.predict(&h)?))
    }

    /// Entropy-regularized distillation loss on explicit noise `eps`.
    ///
    /// `distill` uses the squashed mean only; `q_term` and `entropy` use the
    /// reparameterized sample. Gradients reach the actor only.
    #[allow(clippy::too_many_arguments)]
    pub fn actor_loss_with(
        &mut self,
        states: &Matrix,
        x_hat: &Matrix,
        a_teacher: &Matrix,
        eps: &Matrix,
        critic: &mut TwinCritic,
        alpha1: f64,
        alpha2: f64,
    ) -> Result<ActorLoss> {
        let b = x_hat.rows();
        if b == 0 {
            return Err(Error::Domain("actor loss on an empty batch".into()));
        }
        if a_teacher.shape() != (b, self.action_dim()) || eps.shape() != a_teacher.shape() {
            return Err(Error::Shape("teacher actions or eps do not match the batch".into()));
        }
        let heads = self.heads_train(states, x_hat, true)?;
        let bf = b as f64;
        let ad = self.action_dim();

        let a_mean = self.squash_matrix(&heads.mu);
        let slope_mean = self.squash_slope(&heads.mu);
        let sigma = heads.log_std.map(f64::exp);
        let u = heads.mu.zip_map(&sigma.zip_map(eps, |s, e| s * e), |m, d| m + d);
        let a = self.squash_matrix(&u);
        let slope = self.squash_slope(&u);
        let log_probs = self.log_prob_rows(&u, &heads.log_std, eps);

        let (q, dq_da) = critic.q_min_with_action_grad(states, &a)?;

        let mut distill = 0.0;
        let mut dmu = Matrix::zeros(b, ad);
        let mut dls = Matrix::zeros(b, ad);
        for i in 0..b {
            for j in 0..ad {
                let r = a_mean.get(i, j) - a_teacher.get(i, j);
                distill += r * r;
                let mut g_mu = alpha1 * 2.0 * r * slope_mean.get(i, j) / bf;
                // through the sampled action
                let mut g_u = -dq_da.get(i, j) * slope.get(i, j) / bf;
                let mut g_ls = 0.0;
                if self.squash {
                    let t = u.get(i, j).tanh();
                    g_u += alpha2 * 2.0 * t * (1.0 - t * t) / (1.0 - t * t + SQUASH_EPS) / bf;
                }
                g_ls -= alpha2 / bf;
                g_mu += g_u;
                g_ls += g_u * sigma.get(i, j) * eps.get(i, j);
                dmu.set(i, j, g_mu);
                if heads.passes[i * ad + j] {
                    dls.set(i, j, g_ls);
                }
            }
        }
        distill /= bf;
        let q_term = -q.iter().sum::<f64>() / bf;
        let entropy = -log_probs.iter().sum::<f64>() / bf;
        self.backprop_heads(&dmu, Some(&dls))?;
        Ok(ActorLoss {
            total: alpha1 * distill + q_term - alpha2 * entropy,
            distill,
            q_term,
            entropy,
        })
    }

    pub fn actor_loss(
        &mut self,
        states: &Matrix,
        x_hat: &Matrix,
        a_teacher: &Matrix,
        critic: &mut TwinCritic,
        alpha1: f64,
        alpha2: f64,
        rng: &mut StreamRng,
    ) -> Result<ActorLoss> {
        let eps = standard_normal(rng, x_hat.rows(), self.action_dim());
        self.actor_loss_with(states, x_hat, a_teacher, &eps, critic, alpha1, alpha2)
    }

    /// Deterministic-student objective `alpha * ||a_teacher - pi(s, x)||^2 - Q(s, pi(s, x))`,
    /// batch-averaged. Covers the flow Q-learning baseline (Gaussian `x`) and the
    /// no-entropy ablation (prior `x`).
    pub fn deterministic_loss(
        &mut self,
        states: &Matrix,
        x: &Matrix,
        a_teacher: &Matrix,
        critic: &mut TwinCritic,
        alpha: f64,
    ) -> Result<ActorLoss> {
        let b = x.rows();
        if b == 0 {
            return Err(Error::Domain("actor loss on an empty batch".into()));
        }
        if a_teacher.shape() != (b, self.action_dim()) {
            return Err(Error::Shape("teacher actions do not match the batch".into()));
        }
        let heads = self.heads_train(states, x, false)?;
        let a = self.squash_matrix(&heads.mu);
        let slope = self.squash_slope(&heads.mu);
        let (q, dq_da) = critic.q_min_with_action_grad(states, &a)?;
        let bf = b as f64;
        let mut distill = 0.0;
        let mut dmu = Matrix::zeros(b, self.action_dim());
        for i in 0..b {
            for j in 0..self.action_dim() {
                let r = a.get(i, j) - a_teacher.get(i, j);
                distill += r * r;
                dmu.set(i, j, (alpha * 2.0 * r - dq_da.get(i, j)) * slope.get(i, j) / bf);
            }
        }
        distill /= bf;
        let q_term = -q.iter().sum::<f64>() / bf;
        self.backprop_heads(&dmu, None)?;
        Ok(ActorLoss {
            total: alpha * distill + q_term,
            distill,
            q_term,
            entropy: 0.0,
        })
    }

    /// Plain behavioral cloning `mean ||pi(s, 0) - a||^2`.
    pub fn bc_loss(&mut self, states: &Matrix, actions: &Matrix) -> Result<f64> {
        let b = actions.rows();
        if b == 0 {
            return Err(Error::Domain("bc loss on an empty batch".into()));
        }
        let zeros = Matrix::zeros(b, self.action_dim());
        let heads = self.heads_train(states, &zeros, false)?;
        let a = self.squash_matrix(&heads.mu);
        let slope = self.squash_slope(&heads.mu);
        let diff = a.zip_map(actions, |x, y| x - y);
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / b as f64;
        let dmu = diff.zip_map(&slope, |d, s| 2.0 * d * s / b as f64);
        self.backprop_heads(&dmu, None)?;
        Ok(loss)
    }
}

impl Parameterized for StochasticActor {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.trunk.params();
        v.extend(self.mean_head.params());
        v.extend(self.log_std_head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.trunk.params_mut();
        v.extend(self.mean_head.params_mut());
        v.extend(self.log_std_head.params_mut());
        v
    }
}

/// Learned entropy temperature `alpha2 = exp(log_alpha2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTemp {
    pub log_alpha2: ParamTensor,
    pub target_entropy: f64,
    pub optimizer: AdamState,
}

/// Target entropy `-mult * action_dim`.
pub fn target_entropy(mult: f64, action_dim: usize) -> f64 {
    -mult * action_dim as f64
}

impl EntropyTemp {
    pub fn new(initial_alpha2: f64, target_entropy: f64, lr: f64) -> Self {
        Self {
            log_alpha2: ParamTensor::from_values(&[1], vec![initial_alpha2.ln()]).expect("scalar"),
            target_entropy,
            optimizer: AdamState::new(AdamConfig::with_lr(lr), 1),
        }
    }

    pub fn alpha2(&self) -> f64 {
        self.log_alpha2.values[0].exp()
    }

    /// `alpha2 * (H - H_target)` with `H` treated as a constant; accumulates the
    /// gradient with respect to `log_alpha2`.
    pub fn temp_loss(&mut self, measured_entropy: f64) -> f64 {
        let loss = self.alpha2() * (measured_entropy - self.target_entropy);
        // d/d(log a) of a * c is a * c
        self.log_alpha2.grad[0] += loss;
        loss
    }

    pub fn step(&mut self) -> Result<()> {
        self.optimizer.step(vec![&mut self.log_alpha2])
    }
}

impl Parameterized for EntropyTemp {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.log_alpha2]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.log_alpha2]
    }
}
