//! Flow-matching behavioral-cloning teacher: a state-conditioned velocity field
//! trained with the conditional flow-matching objective and integrated with a
//! fixed-step Euler scheme.

use rand::Rng;

use crate::diffcore::{Activation, Matrix, Mlp, ParamTensor, Parameterized};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTeacher {
    /// Input layout: `[x_t, s, t]`.
    pub velocity_net: Mlp,
    pub euler_steps: usize,
    action_dim: usize,
    state_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl FlowTeacher {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        euler_steps: usize,
        bounds: (&[f64], &[f64]),
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![action_dim + state_dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let velocity_net = Mlp::new(&sizes, activation, Activation::Identity, rng)?;
        Self::from_net(velocity_net, state_dim, euler_steps, bounds)
    }

    pub fn from_net(velocity_net: Mlp, state_dim: usize, euler_steps: usize, bounds: (&[f64], &[f64])) -> Result<Self> {
        let action_dim = velocity_net.out_dim();
        if velocity_net.in_dim() != action_dim + state_dim + 1 {
            return Err(Error::Shape(format!(
                "velocity net takes {} inputs, expected {}",
                velocity_net.in_dim(),
                action_dim + state_dim + 1
            )));
        }
        if euler_steps == 0 {
            return Err(Error::Domain("euler_steps must be positive".into()));
        }
        if bounds.0.len() != action_dim || bounds.1.len() != action_dim {
            return Err(Error::Shape("action bounds do not match action dim".into()));
        }
        Ok(Self {
            velocity_net,
            euler_steps,
            action_dim,
            state_dim,
            action_low: bounds.0.to_vec(),
            action_high: bounds.1.to_vec(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn velocity_input(x: &Matrix, states: &Matrix, t: &[f64]) -> Result<Matrix> {
        let tcol = Matrix::from_vec(t.len(), 1, t.to_vec())?;
        Matrix::hcat(&[x, states, &tcol])
    }

    /// Velocity field evaluated row-wise.
    pub fn velocity(&self, x: &Matrix, states: &Matrix, t: &[f64]) -> Result<Matrix> {
        self.velocity_net.predict(&Self::velocity_input(x, states, t)?)
    }

    /// Flow-matching loss on explicit noise `x0` and times `t`; accumulates
    /// gradients into the velocity network.
    pub fn cfm_loss_with(&mut self, states: &Matrix, actions: &Matrix, x0: &Matrix, t: &[f64]) -> Result<f64> {
        let b = actions.rows();
        if b == 0 {
            return Err(Error::Domain("cfm loss on an empty batch".into()));
        }
        if states.rows() != b || x0.shape() != actions.shape() || t.len() != b {
            return Err(Error::Shape("cfm batch components disagree in size".into()));
        }
        if actions.cols() != self.action_dim {
            return Err(Error::Shape(format!("actions have {} dims", actions.cols())));
        }
        let mut xt = Matrix::zeros(b, self.action_dim);
        let mut target = Matrix::zeros(b, self.action_dim);
        for i in 0..b {
            for j in 0..self.action_dim {
                let (x0v, av) = (x0.get(i, j), actions.get(i, j));
                xt.set(i, j, (1.0 - t[i]) * x0v + t[i] * av);
                target.set(i, j, av - x0v);
            }
        }
        let v = self.velocity_net.forward(&Self::velocity_input(&xt, states, t)?)?;
        let diff = v.zip_map(&target, |a, b| a - b);
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / b as f64;
        let grad = diff.map(|d| 2.0 * d / b as f64);
        self.velocity_net.backward(&grad)?;
        Ok(loss)
    }

    /// Draws `x0 ~ N(0, I)` and `t ~ U(0, 1)` per pair, then evaluates the loss.
    pub fn cfm_loss(&mut self, states: &Matrix, actions: &Matrix, rng: &mut StreamRng) -> Result<f64> {
        let b = actions.rows();
        let x0 = standard_normal(rng, b, self.action_dim);
        let t: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
        self.cfm_loss_with(states, actions, &x0, &t)
    }

    /// Euler integration from `x0` over `euler_steps` uniform steps; the final
    /// point is clipped into the action box. One network call per step for the
    /// whole batch.
    pub fn euler_sample(&self, states: &Matrix, x0: &Matrix) -> Result<Matrix> {
        if x0.cols() != self.action_dim || states.rows() != x0.rows() {
            return Err(Error::Shape(format!(
                "noise {:?} does not match {} states of action dim {}",
                x0.shape(),
                states.rows(),
                self.action_dim
            )));
        }
        let k = self.euler_steps;
        let dt = 1.0 / k as f64;
        let mut x = x0.clone();
        let mut t = vec![0.0; x.rows()];
        for step in 0..k {
            t.iter_mut().for_each(|v| *v = step as f64 * dt);
            let v = self.velocity(&x, states, &t)?;
            for (xv, vv) in x.data_mut().iter_mut().zip(v.data()) {
                *xv += dt * vv;
            }
        }
        self.clip_rows(&mut x);
        Ok(x)
    }

    pub fn euler_sample_one(&self, s: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .euler_sample(&Matrix::row_vector(s), &Matrix::row_vector(x0))?
            .into_vec())
    }

    fn clip_rows(&self, x: &mut Matrix) {
        for i in 0..x.rows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = v.clamp(self.action_low[j], self.action_high[j]);
            }
        }
    }

    /// `n` candidates per state. Rows are grouped by state: row `i * n + j` is
    /// candidate `j` of state `i`.
    pub fn sample_candidates(&self, states: &Matrix, n: usize, rng: &mut StreamRng) -> Result<Candidates> {
        if n == 0 {
            return Err(Error::Domain("need at least one candidate".into()));
        }
        let noises = standard_normal(rng, states.rows() * n, self.action_dim);
        let actions = self.euler_sample(&states.repeat_rows(n), &noises)?;
        Ok(Candidates {
            per_state: n,
            noises,
            actions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub per_state: usize,
    pub noises: Matrix,
    pub actions: Matrix,
}

impl Parameterized for FlowTeacher {
    fn params(&self) -> Vec<&ParamTensor> {
        self.velocity_net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.velocity_net.params_mut()
    }
}
