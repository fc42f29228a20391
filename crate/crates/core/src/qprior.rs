//! Q-guided noise prior: per-state best-of-N selection of the teacher's initial
//! noise, and a state-conditional VAE that learns to generate such noises.

use std::io::Write;

use rand::Rng;

use crate::critic::ValueFn;
use crate::diffcore::{Activation, LogStdRange, Matrix, Mlp, ParamTensor, Parameterized};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, StreamRng};
use crate::teacher::{Candidates, FlowTeacher};

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantagePair {
    pub state: Vec<f64>,
    pub x_adv: Vec<f64>,
    pub q_of_best: f64,
}

/// Index of the largest value in each consecutive group of `n`; ties go to the
/// lowest index.
pub fn group_argmax(values: &[f64], n: usize) -> Vec<usize> {
    values
        .chunks(n)
        .map(|g| {
            let mut best = 0;
            for (j, &v) in g.iter().enumerate().skip(1) {
                if v > g[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Result of scoring candidates: the chosen pairs plus everything needed to
/// audit the choice.
#[derive(Debug, Clone)]
pub struct Selection {
    pub pairs: Vec<AdvantagePair>,
    pub candidates: Candidates,
    pub q: Vec<f64>,
    pub chosen: Vec<usize>,
}

/// For every state, draws `n_cand` teacher candidates and keeps the noise whose
/// action scores highest under `critic`.
pub fn select_advantage_noise<V: ValueFn + ?Sized>(
    teacher: &FlowTeacher,
    critic: &V,
    states: &Matrix,
    n_cand: usize,
    rng: &mut StreamRng,
) -> Result<Selection> {
    let candidates = teacher.sample_candidates(states, n_cand, rng)?;
    let q = critic.q_min(&states.repeat_rows(n_cand), &candidates.actions)?;
    let chosen = group_argmax(&q, n_cand);
    let pairs = chosen
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let r = i * n_cand + j;
            AdvantagePair {
                state: states.row(i).to_vec(),
                x_adv: candidates.noises.row(r).to_vec(),
                q_of_best: q[r],
            }
        })
        .collect();
    Ok(Selection {
        pairs,
        candidates,
        q,
        chosen,
    })
}

/// CSV dump `s..., x0, x1, q_best` of one step's advantage pairs.
pub fn write_pairs_csv<W: Write>(mut w: W, pairs: &[AdvantagePair]) -> Result<()> {
    if let Some(p) = pairs.first() {
        let mut header: Vec<String> = (0..p.state.len()).map(|i| format!("s{i}")).collect();
        header.extend((0..p.x_adv.len()).map(|i| format!("x{i}")));
        header.push("q_best".into());
        writeln!(w, "{}", header.join(","))?;
    }
    for p in pairs {
        let fields: Vec<String> = p
            .state
            .iter()
            .chain(&p.x_adv)
            .chain(std::iter::once(&p.q_of_best))
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cvae {
    /// `[x, s] -> [mu, log_std]`.
    pub encoder: Mlp,
    /// `[z, s] -> x_hat`.
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub recon_weight: f64,
    pub log_std_range: LogStdRange,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl Cvae {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        noise_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        activation: Activation,
        kl_weight: f64,
        recon_weight: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        let mut enc = vec![noise_dim + state_dim];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent_dim);
        let mut dec = vec![latent_dim + state_dim];
        dec.extend_from_slice(hidden);
        dec.push(noise_dim);
        Ok(Self {
            encoder: Mlp::new(&enc, activation, Activation::Identity, rng)?,
            decoder: Mlp::new(&dec, activation, Activation::Identity, rng)?,
            latent_dim,
            kl_weight,
            recon_weight,
            log_std_range: LogStdRange::default(),
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    /// Loss on explicit reparameterization noise `eps` (one row per pair).
    /// Accumulates gradients into encoder and decoder.
    pub fn loss_with(&mut self, states: &Matrix, x_adv: &Matrix, eps: &Matrix) -> Result<CvaeLoss> {
        let b = x_adv.rows();
        let l = self.latent_dim;
        if b == 0 {
            return Err(Error::Domain("cvae loss on an empty batch".into()));
        }
        if states.rows() != b || eps.shape() != (b, l) || x_adv.cols() != self.noise_dim() {
            return Err(Error::Shape("cvae batch components disagree in size".into()));
        }
        let enc_out = self.encoder.forward(&Matrix::hcat(&[x_adv, states])?)?;
        let mut z = Matrix::zeros(b, l);
        let mut sigma = Matrix::zeros(b, l);
        let mut passes = vec![false; b * l];
        let mut kl = 0.0;
        for i in 0..b {
            for k in 0..l {
                let mu = enc_out.get(i, k);
                let (ls, pass) = self.log_std_range.clamp(enc_out.get(i, l + k));
                let s = ls.exp();
                z.set(i, k, mu + s * eps.get(i, k));
                sigma.set(i, k, s);
                passes[i * l + k] = pass;
                kl += 0.5 * (mu * mu + s * s - 1.0 - 2.0 * ls);
            }
        }
        kl /= b as f64;
        let x_hat = self.decoder.forward(&Matrix::hcat(&[&z, states])?)?;
        let diff = x_hat.zip_map(x_adv, |a, b| a - b);
        let recon = diff.data().iter().map(|d| d * d).sum::<f64>() / b as f64;
        let total = self.recon_weight * recon + self.kl_weight * kl;

        let dx_hat = diff.map(|d| self.recon_weight * 2.0 * d / b as f64);
        let dz_full = self.decoder.backward(&dx_hat)?;
        let mut denc = Matrix::zeros(b, 2 * l);
        let kw = self.kl_weight / b as f64;
        for i in 0..b {
            for k in 0..l {
                let dz = dz_full.get(i, k);
                let mu = enc_out.get(i, k);
                let s = sigma.get(i, k);
                denc.set(i, k, dz + kw * mu);
                if passes[i * l + k] {
                    denc.set(i, l + k, dz * s * eps.get(i, k) + kw * (s * s - 1.0));
                }
            }
        }
        self.encoder.backward(&denc)?;
        Ok(CvaeLoss { total, recon, kl })
    }

    pub fn loss(&mut self, pairs: &[AdvantagePair], rng: &mut StreamRng) -> Result<CvaeLoss> {
        if pairs.is_empty() {
            return Err(Error::Domain("cvae loss on an empty batch".into()));
        }
        let states = Matrix::from_rows(&pairs.iter().map(|p| p.state.as_slice()).collect::<Vec<_>>())?;
        let x = Matrix::from_rows(&pairs.iter().map(|p| p.x_adv.as_slice()).collect::<Vec<_>>())?;
        let eps = standard_normal(rng, pairs.len(), self.latent_dim);
        self.loss_with(&states, &x, &eps)
    }

    /// Decodes explicit latents `z` (one row per state).
    pub fn decode(&self, states: &Matrix, z: &Matrix) -> Result<Matrix> {
        self.decoder.predict(&Matrix::hcat(&[z, states])?)
    }

    /// `x_hat = D(z, s)` with `z ~ N(0, I)`.
    pub fn sample_prior(&self, states: &Matrix, rng: &mut StreamRng) -> Result<Matrix> {
        let z = standard_normal(rng, states.rows(), self.latent_dim);
        self.decode(states, &z)
    }
}

impl Parameterized for Cvae {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}
