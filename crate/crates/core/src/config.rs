//! Flat `key = value` run configuration.

use std::fmt;
use std::str::FromStr;

use crate::diffcore::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Q-guided prior + entropy-regularized stochastic student.
    Ours,
    /// Q-guided prior, deterministic student, no entropy.
    OursWoCe,
    /// Flow Q-learning: Gaussian noise, deterministic student.
    Fql,
    /// Teacher only, sampled from Gaussian noise.
    FqlWoQ,
    /// One-step MSE behavioral cloning.
    Bc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Ours, Variant::OursWoCe, Variant::Fql, Variant::FqlWoQ, Variant::Bc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::OursWoCe => "ours_wo_ce",
            Variant::Fql => "fql",
            Variant::FqlWoQ => "fql_wo_q",
            Variant::Bc => "bc",
        }
    }

    pub fn uses_critic(self) -> bool {
        matches!(self, Variant::Ours | Variant::OursWoCe | Variant::Fql)
    }

    pub fn stochastic_student(self) -> bool {
        self == Variant::Ours
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub variant: Variant,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub batch_size: usize,
    pub n_cand: usize,
    pub euler_steps: usize,
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub recon_weight: f64,
    pub alpha1_offline: f64,
    pub alpha1_online: f64,
    pub entropy_mult: f64,
    pub initial_alpha2: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_teacher: f64,
    pub lr_actor: f64,
    pub lr_vae: f64,
    pub lr_alpha: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub balanced_sampling: bool,
    pub online_buffer_capacity: usize,
    pub eval_episodes: usize,
    pub eval_interval: usize,
    pub dataset_per_crescent: usize,
    pub dataset_background: usize,
    pub dataset_path: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: Variant::Ours,
            offline_steps: 50_000,
            online_steps: 50_000,
            batch_size: 256,
            n_cand: 10,
            euler_steps: 10,
            latent_dim: 2,
            kl_weight: 0.1,
            recon_weight: 1.0,
            alpha1_offline: 100.0,
            alpha1_online: 10.0,
            entropy_mult: 0.5,
            initial_alpha2: 0.01,
            gamma: 0.99,
            tau: 0.005,
            lr_critic: 3e-4,
            lr_teacher: 3e-4,
            lr_actor: 3e-4,
            lr_vae: 3e-4,
            lr_alpha: 3e-4,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            log_std_min: -5.0,
            log_std_max: 2.0,
            balanced_sampling: true,
            online_buffer_capacity: 100_000,
            eval_episodes: 50,
            eval_interval: 1000,
            dataset_per_crescent: 2500,
            dataset_background: 2000,
            dataset_path: "dataset.txt".into(),
        }
    }
}

/// Seeds used for multi-seed experiments.
pub const SEEDS: [u64; 5] = [0, 2, 4, 8, 16];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 32] = [
        "seed",
        "variant",
        "offline_steps",
        "online_steps",
        "batch_size",
        "n_cand",
        "euler_steps",
        "latent_dim",
        "kl_weight",
        "recon_weight",
        "alpha1_offline",
        "alpha1_online",
        "entropy_mult",
        "initial_alpha2",
        "gamma",
        "tau",
        "lr_critic",
        "lr_teacher",
        "lr_actor",
        "lr_vae",
        "lr_alpha",
        "hidden",
        "activation",
        "log_std_min",
        "log_std_max",
        "balanced_sampling",
        "online_buffer_capacity",
        "eval_episodes",
        "eval_interval",
        "dataset_per_crescent",
        "dataset_background",
        "dataset_path",
    ];

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "variant" => self.variant = v.parse()?,
            "offline_steps" => self.offline_steps = parse_num(key, v)?,
            "online_steps" => self.online_steps = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "n_cand" => self.n_cand = parse_num(key, v)?,
            "euler_steps" => self.euler_steps = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "kl_weight" => self.kl_weight = parse_num(key, v)?,
            "recon_weight" => self.recon_weight = parse_num(key, v)?,
            "alpha1_offline" => self.alpha1_offline = parse_num(key, v)?,
            "alpha1_online" => self.alpha1_online = parse_num(key, v)?,
            "entropy_mult" => self.entropy_mult = parse_num(key, v)?,
            "initial_alpha2" => self.initial_alpha2 = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "lr_critic" => self.lr_critic = parse_num(key, v)?,
            "lr_teacher" => self.lr_teacher = parse_num(key, v)?,
            "lr_actor" => self.lr_actor = parse_num(key, v)?,
            "lr_vae" => self.lr_vae = parse_num(key, v)?,
            "lr_alpha" => self.lr_alpha = parse_num(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .map(|d| parse_num(key, d.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "activation" => {
                self.activation = Activation::parse(v)
                    .filter(|a| *a != Activation::Identity)
                    .ok_or_else(|| Error::Config(format!("`activation`: unsupported `{v}`")))?
            }
            "log_std_min" => self.log_std_min = parse_num(key, v)?,
            "log_std_max" => self.log_std_max = parse_num(key, v)?,
            "balanced_sampling" => self.balanced_sampling = parse_bool(key, v)?,
            "online_buffer_capacity" => self.online_buffer_capacity = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "eval_interval" => self.eval_interval = parse_num(key, v)?,
            "dataset_per_crescent" => self.dataset_per_crescent = parse_num(key, v)?,
            "dataset_background" => self.dataset_background = parse_num(key, v)?,
            "dataset_path" => self.dataset_path = v.to_string(),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "variant" => self.variant.to_string(),
            "offline_steps" => self.offline_steps.to_string(),
            "online_steps" => self.online_steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "n_cand" => self.n_cand.to_string(),
            "euler_steps" => self.euler_steps.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "kl_weight" => self.kl_weight.to_string(),
            "recon_weight" => self.recon_weight.to_string(),
            "alpha1_offline" => self.alpha1_offline.to_string(),
            "alpha1_online" => self.alpha1_online.to_string(),
            "entropy_mult" => self.entropy_mult.to_string(),
            "initial_alpha2" => self.initial_alpha2.to_string(),
            "gamma" => self.gamma.to_string(),
            "tau" => self.tau.to_string(),
            "lr_critic" => self.lr_critic.to_string(),
            "lr_teacher" => self.lr_teacher.to_string(),
            "lr_actor" => self.lr_actor.to_string(),
            "lr_vae" => self.lr_vae.to_string(),
            "lr_alpha" => self.lr_alpha.to_string(),
            "hidden" => self
                .hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "activation" => self.activation.name().to_string(),
            "log_std_min" => self.log_std_min.to_string(),
            "log_std_max" => self.log_std_max.to_string(),
            "balanced_sampling" => self.balanced_sampling.to_string(),
            "online_buffer_capacity" => self.online_buffer_capacity.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "dataset_per_crescent" => self.dataset_per_crescent.to_string(),
            "dataset_background" => self.dataset_background.to_string(),
            "dataset_path" => self.dataset_path.clone(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, in fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.get(k).expect("listed key"));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.euler_steps == 0 {
            return bad("euler_steps must be at least 1");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..1.0).contains(&self.gamma) {
            return bad("tau must be in [0, 1] and gamma in [0, 1)");
        }
        if self.initial_alpha2 <= 0.0 {
            return bad("initial_alpha2 must be positive");
        }
        if self.log_std_min >= self.log_std_max {
            return bad("log_std_min must be below log_std_max");
        }
        if self.online_buffer_capacity == 0 {
            return bad("online_buffer_capacity must be positive");
        }
        for (name, v) in [
            ("kl_weight", self.kl_weight),
            ("recon_weight", self.recon_weight),
            ("alpha1_offline", self.alpha1_offline),
            ("alpha1_online", self.alpha1_online),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        for (name, v) in [
            ("lr_critic", self.lr_critic),
            ("lr_teacher", self.lr_teacher),
            ("lr_actor", self.lr_actor),
            ("lr_vae", self.lr_vae),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        crate::student::target_entropy(self.entropy_mult, action_dim)
    }
}
