//! Twin Q-networks with clipped double-Q targets, entropy-augmented TD targets
//! and Polyak-averaged target copies.

use rand::Rng;

use crate::diffcore::{Activation, Matrix, Mlp, ParamTensor, Parameterized};
use crate::env::Transition;
use crate::error::{Error, Result};

/// Anything that scores `(s, a)` rows with a pessimistic value.
pub trait ValueFn {
    fn q_min(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>>;
}

impl<F> ValueFn for F
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    fn q_min(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok((0..actions.rows()).map(|i| self(states.row(i), actions.row(i))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub tau: f64,
    pub gamma: f64,
}

/// Next actions `a' ~ pi(.|s')` with their log-densities, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct NextActions {
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
}

pub(crate) fn state_action(states: &Matrix, actions: &Matrix) -> Result<Matrix> {
    Matrix::hcat(&[states, actions])
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        tau: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(tau >= 0.0 && tau <= 1.0) || !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("tau={tau} gamma={gamma} out of range")));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, activation, Activation::Identity, rng)?;
        let q2 = Mlp::new(&sizes, activation, Activation::Identity, rng)?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            tau,
            gamma,
        })
    }

    pub fn hard_sync(&mut self) {
        self.q1_target = self.q1.clone();
        self.q2_target = self.q2.clone();
    }

    pub fn q_values(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = state_action(states, actions)?;
        Ok((self.q1.predict(&x)?.into_vec(), self.q2.predict(&x)?.into_vec()))
    }

    fn target_min(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let x = state_action(states, actions)?;
        let a = self.q1_target.predict(&x)?;
        let b = self.q2_target.predict(&x)?;
        Ok(a.data().iter().zip(b.data()).map(|(x, y)| x.min(*y)).collect())
    }

    /// `y = r + gamma * (1 - done) * (min_i Q'_i(s', a') - alpha2 * log pi(a'|s'))`.
    /// `next` may be omitted when every transition is terminal.
    pub fn td_target(&self, batch: &[Transition], next: Option<&NextActions>, alpha2: f64) -> Result<Vec<f64>> {
        let bootstrap: Option<Vec<f64>> = match next {
            Some(n) => {
                if n.actions.rows() != batch.len() || n.log_probs.len() != batch.len() {
                    return Err(Error::Shape("next actions do not match the batch".into()));
                }
                let sp = Matrix::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
                let qmin = self.target_min(&sp, &n.actions)?;
                Some(qmin.iter().zip(&n.log_probs).map(|(q, lp)| q - alpha2 * lp).collect())
            }
            None => {
                if batch.iter().any(|t| !t.done) {
                    return Err(Error::State("non-terminal transitions need next actions".into()));
                }
                None
            }
        };
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.done {
                    t.reward
                } else {
                    t.reward + self.gamma * bootstrap.as_ref().unwrap()[i]
                }
            })
            .collect())
    }

    /// Sum of both critics' mean squared Bellman errors against fixed targets;
    /// accumulates gradients into `q1` and `q2`.
    pub fn critic_loss(&mut self, states: &Matrix, actions: &Matrix, y: &[f64]) -> Result<f64> {
        let b = y.len();
        if b == 0 || states.rows() != b || actions.rows() != b {
            return Err(Error::Shape("critic batch components disagree in size".into()));
        }
        let x = state_action(states, actions)?;
        let mut total = 0.0;
        for net in [&mut self.q1, &mut self.q2] {
            let q = net.forward(&x)?;
            let mut g = Matrix::zeros(b, 1);
            for i in 0..b {
                let d = q.get(i, 0) - y[i];
                total += d * d / b as f64;
                g.set(i, 0, 2.0 * d / b as f64);
            }
            net.backward(&g)?;
        }
        Ok(total)
    }

    /// `min(Q1, Q2)` at `(s, a)` and its gradient with respect to `a`. Critic
    /// parameter gradients are not touched.
    pub fn q_min_with_action_grad(&mut self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let b = actions.rows();
        let sd = states.cols();
        let x = state_action(states, actions)?;
        let q1 = self.q1.forward(&x)?;
        let q2 = self.q2.forward(&x)?;
        let mut g1 = Matrix::zeros(b, 1);
        let mut g2 = Matrix::zeros(b, 1);
        let mut qmin = Vec::with_capacity(b);
        for i in 0..b {
            let (a, c) = (q1.get(i, 0), q2.get(i, 0));
            // ties route through q1
            if a <= c {
                g1.set(i, 0, 1.0);
                qmin.push(a);
            } else {
                g2.set(i, 0, 1.0);
                qmin.push(c);
            }
        }
        let mut dx = self.q1.input_grad(&g1)?;
        dx.add_assign(&self.q2.input_grad(&g2)?);
        Ok((qmin, dx.columns(sd, actions.cols())))
    }

    /// `target <- tau * online + (1 - tau) * target` for both critics.
    pub fn polyak_update(&mut self) {
        let tau = self.tau;
        self.q1_target.soft_update_from(&self.q1, tau);
        self.q2_target.soft_update_from(&self.q2, tau);
    }
}

impl ValueFn for TwinCritic {
    fn q_min(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let (a, b) = self.q_values(states, actions)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
    }
}

impl Parameterized for TwinCritic {
    /// Online critics only; targets are not trained by gradient.
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.q1.params();
        v.extend(self.q2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.q1.params_mut();
        v.extend(self.q2.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Linear;
    use crate::rng::stream;

    fn critic(tau: f64) -> TwinCritic {
        TwinCritic::new(2, 2, &[16, 16], Activation::Relu, tau, 0.99, &mut stream(0, "init")).unwrap()
    }

    fn transition(r: f64, done: bool) -> Transition {
        Transition {
            state: vec![0.0, 0.0],
            action: [0.1, 0.2],
            reward: r,
            next_state: vec![0.0, 0.0],
            done,
        }
    }

    /// Scalar net returning `c` everywhere.
    fn constant_net(c: f64) -> Mlp {
        let l = Linear {
            weight: ParamTensor::zeros(&[1, 4]),
            bias: ParamTensor::from_values(&[1], vec![c]).unwrap(),
        };
        Mlp::from_layers(vec![l], Activation::Relu, Activation::Identity).unwrap()
    }

    #[test]
    fn targets_start_as_copies() {
        let c = critic(0.005);
        assert_eq!(c.q1, c.q1_target);
        assert_eq!(c.q2, c.q2_target);
    }

    #[test]
    fn terminal_target_is_reward() {
        let c = critic(0.005);
        let batch = vec![transition(3.5, true), transition(0.0, true)];
        assert_eq!(c.td_target(&batch, None, 0.7).unwrap(), vec![3.5, 0.0]);
    }

    #[test]
    fn non_terminal_needs_next_actions() {
        let c = critic(0.005);
        assert!(matches!(c.td_target(&[transition(1.0, false)], None, 0.0), Err(Error::State(_))));
    }

    #[test]
    fn bootstrap_uses_min_and_entropy() {
        let mut c = critic(0.005);
        c.q1_target = constant_net(2.0);
        c.q2_target = constant_net(5.0);
        let next = NextActions {
            actions: Matrix::from_rows(&[[0.0, 0.0]]).unwrap(),
            log_probs: vec![-1.5],
        };
        let batch = [transition(1.0, false)];
        let y0 = c.td_target(&batch, Some(&next), 0.0).unwrap()[0];
        assert!((y0 - (1.0 + 0.99 * 2.0)).abs() < 1e-12);
        let y1 = c.td_target(&batch, Some(&next), 0.2).unwrap()[0];
        assert!((y1 - (1.0 + 0.99 * (2.0 + 0.2 * 1.5))).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let mut c = critic(0.005);
        c.q1 = constant_net(1.25);
        c.q2 = constant_net(1.25);
        let s = Matrix::zeros(3, 2);
        let a = Matrix::zeros(3, 2);
        assert_eq!(c.critic_loss(&s, &a, &[1.25; 3]).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_recomputed_msbe() {
        let mut c = critic(0.005);
        let mut rng = stream(4, "x");
        let s = Matrix::zeros(6, 2);
        let a = crate::rng::standard_normal(&mut rng, 6, 2);
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let (q1, q2) = c.q_values(&s, &a).unwrap();
        let expected: f64 = (0..6).map(|i| (q1[i] - y[i]).powi(2) + (q2[i] - y[i]).powi(2)).sum::<f64>() / 6.0;
        let loss = c.critic_loss(&s, &a, &y).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn polyak_limits_and_hand_value() {
        let mut c = critic(1.0);
        c.q1.params_mut()[0].values[0] += 1.0;
        c.polyak_update();
        assert_eq!(c.q1, c.q1_target);

        let mut c = critic(0.0);
        let before = c.q1_target.clone();
        c.q1.params_mut()[0].values[0] += 1.0;
        c.polyak_update();
        assert_eq!(c.q1_target, before);

        let mut c = critic(0.005);
        c.q1.params_mut()[0].values[0] = 1.0;
        c.q1_target.params_mut()[0].values[0] = 0.0;
        c.polyak_update();
        assert_eq!(c.q1_target.params()[0].values[0], 0.005);
    }

    #[test]
    fn target_lag_decays_geometrically() {
        let mut c = critic(0.1);
        for p in c.q1.params_mut() {
            p.values.iter_mut().for_each(|v| *v += 0.5);
        }
        let dist = |c: &TwinCritic| -> f64 {
            c.q1.params()
                .iter()
                .zip(c.q1_target.params())
                .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)))
                .sum::<f64>()
                .sqrt()
        };
        let d0 = dist(&c);
        for _ in 0..20 {
            c.polyak_update();
        }
        let expected = d0 * 0.9f64.powi(20);
        assert!((dist(&c) - expected).abs() < 1e-10 * d0);
    }

    #[test]
    fn min_is_pessimistic() {
        let c = critic(0.005);
        let mut rng = stream(1, "x");
        let s = Matrix::zeros(50, 2);
        let a = crate::rng::standard_normal(&mut rng, 50, 2);
        let (q1, q2) = c.q_values(&s, &a).unwrap();
        let m = c.q_min(&s, &a).unwrap();
        for i in 0..50 {
            assert!(m[i] <= q1[i] && m[i] <= q2[i]);
        }
    }

    #[test]
    fn action_gradient_leaves_critic_grads_alone() {
        let mut c = critic(0.005);
        let s = Matrix::zeros(4, 2);
        let a = crate::rng::standard_normal(&mut stream(2, "x"), 4, 2);
        let (q, da) = c.q_min_with_action_grad(&s, &a).unwrap();
        assert_eq!(q, c.q_min(&s, &a).unwrap());
        assert_eq!(da.shape(), (4, 2));
        assert!(c.params().iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }
}
