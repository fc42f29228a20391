//! Offline-then-online training loop with a fixed per-step update order:
//! critic, prior, teacher, student, temperature.

use std::fmt::Write as _;

use crate::analysis::{bias_of, BiasReport};
use crate::checkpoint::{self, Reader, Sections};
use crate::config::{TrainConfig, Variant};
use crate::critic::{NextActions, TwinCritic};
use crate::diffcore::{AdamConfig, AdamState, LogStdRange, Matrix, Parameterized};
use crate::env::{sample_batch, CrescentWorld, ModeCoverage, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::qprior::{select_advantage_noise, Cvae};
use crate::rng::{load_state, save_state, standard_normal, stream, StreamRng};
use crate::student::{ActMode, EntropyTemp, StochasticActor};
use crate::teacher::FlowTeacher;

/// Share of evaluation actions a crescent needs to count as covered.
pub const COVERAGE_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }
}

/// Every learnable piece plus its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub teacher: FlowTeacher,
    pub critic: TwinCritic,
    pub prior: Cvae,
    pub actor: StochasticActor,
    pub temp: EntropyTemp,
    pub opt_teacher: AdamState,
    pub opt_critic: AdamState,
    pub opt_prior: AdamState,
    pub opt_actor: AdamState,
}

impl Agent {
    pub fn new(cfg: &TrainConfig, world: &CrescentWorld) -> Result<Self> {
        let mut rng = stream(cfg.seed, "init");
        let sd = world.state_dim();
        let (lo, hi) = (world.action_low(), world.action_high());
        let teacher = FlowTeacher::new(sd, 2, &cfg.hidden, cfg.activation, cfg.euler_steps, (&lo, &hi), &mut rng)?;
        let critic = TwinCritic::new(sd, 2, &cfg.hidden, cfg.activation, cfg.tau, cfg.gamma, &mut rng)?;
        let prior = Cvae::new(
            sd,
            2,
            cfg.latent_dim,
            &cfg.hidden,
            cfg.activation,
            cfg.kl_weight,
            cfg.recon_weight,
            &mut rng,
        )?;
        let mut actor = StochasticActor::new(sd, 2, &cfg.hidden, cfg.activation, (&lo, &hi), &mut rng)?;
        actor.log_std_range = LogStdRange {
            min: cfg.log_std_min,
            max: cfg.log_std_max,
        };
        let temp = EntropyTemp::new(cfg.initial_alpha2, cfg.target_entropy(2), cfg.lr_alpha);
        Ok(Self {
            opt_teacher: AdamState::new(AdamConfig::with_lr(cfg.lr_teacher), teacher.num_params()),
            opt_critic: AdamState::new(AdamConfig::with_lr(cfg.lr_critic), critic.num_params()),
            opt_prior: AdamState::new(AdamConfig::with_lr(cfg.lr_vae), prior.num_params()),
            opt_actor: AdamState::new(AdamConfig::with_lr(cfg.lr_actor), actor.num_params()),
            teacher,
            critic,
            prior,
            actor,
            temp,
        })
    }
}

/// Per-consumer random streams, all derived from the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub batch: StreamRng,
    pub teacher_noise: StreamRng,
    pub candidate_noise: StreamRng,
    pub cvae_noise: StreamRng,
    pub prior_noise: StreamRng,
    pub actor_noise: StreamRng,
    pub env: StreamRng,
    pub eval: StreamRng,
}

impl Streams {
    const NAMES: [&'static str; 8] = [
        "batch",
        "teacher-noise",
        "candidate-noise",
        "cvae-noise",
        "prior-noise",
        "actor-noise",
        "env",
        "eval",
    ];

    pub fn new(seed: u64) -> Self {
        Self {
            batch: stream(seed, "batch"),
            teacher_noise: stream(seed, "teacher-noise"),
            candidate_noise: stream(seed, "candidate-noise"),
            cvae_noise: stream(seed, "cvae-noise"),
            prior_noise: stream(seed, "prior-noise"),
            actor_noise: stream(seed, "actor-noise"),
            env: stream(seed, "env"),
            eval: stream(seed, "eval"),
        }
    }

    fn by_name(&mut self, name: &str) -> &mut StreamRng {
        match name {
            "batch" => &mut self.batch,
            "teacher-noise" => &mut self.teacher_noise,
            "candidate-noise" => &mut self.candidate_noise,
            "cvae-noise" => &mut self.cvae_noise,
            "prior-noise" => &mut self.prior_noise,
            "actor-noise" => &mut self.actor_noise,
            "env" => &mut self.env,
            _ => &mut self.eval,
        }
    }
}

/// Losses of one train step; `None` for paths the variant does not run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub critic_loss: Option<f64>,
    pub cfm_loss: Option<f64>,
    pub vae_recon: Option<f64>,
    pub vae_kl: Option<f64>,
    pub actor_total: Option<f64>,
    pub distill: Option<f64>,
    pub q_term: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha2: f64,
}

impl StepStats {
    fn fields(&self) -> [Option<f64>; 8] {
        [
            self.critic_loss,
            self.cfm_loss,
            self.vae_recon,
            self.vae_kl,
            self.actor_total,
            self.distill,
            self.q_term,
            self.entropy,
        ]
    }
}

/// Running sums over the current logging interval.
#[derive(Debug, Clone, Default, PartialEq)]
struct Accum {
    sums: [f64; 8],
    counts: [u64; 8],
    steps: u64,
}

impl Accum {
    fn add(&mut self, s: &StepStats) {
        for (i, v) in s.fields().iter().enumerate() {
            if let Some(v) = v {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
        self.steps += 1;
    }

    fn means(&self) -> [Option<f64>; 8] {
        let mut out = [None; 8];
        for i in 0..8 {
            if self.counts[i] > 0 {
                out[i] = Some(self.sums[i] / self.counts[i] as f64);
            }
        }
        out
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        checkpoint::put_f64s(&mut out, &self.sums);
        for c in self.counts {
            checkpoint::put_u64(&mut out, c);
        }
        checkpoint::put_u64(&mut out, self.steps);
        out
    }

    fn decode(payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let mut a = Accum::default();
        for s in a.sums.iter_mut() {
            *s = r.f64()?;
        }
        for c in a.counts.iter_mut() {
            *c = r.u64()?;
        }
        a.steps = r.u64()?;
        r.finish()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub phase: Phase,
    pub critic_loss: Option<f64>,
    pub cfm_loss: Option<f64>,
    pub vae_recon: Option<f64>,
    pub vae_kl: Option<f64>,
    pub actor_total: Option<f64>,
    pub distill: Option<f64>,
    pub q_term: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha2: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub mode_coverage: f64,
    pub q_bias: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,phase,critic_loss,cfm_loss,vae_recon,vae_kl,actor_total,distill,q_term,entropy,alpha2,eval_return_mean,eval_return_std,mode_coverage,q_bias";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.step.to_string(),
            self.phase.name().to_string(),
            opt(self.critic_loss),
            opt(self.cfm_loss),
            opt(self.vae_recon),
            opt(self.vae_kl),
            opt(self.actor_total),
            opt(self.distill),
            opt(self.q_term),
            opt(self.entropy),
            self.alpha2.to_string(),
            self.eval_return_mean.to_string(),
            self.eval_return_std.to_string(),
            self.mode_coverage.to_string(),
            opt(self.q_bias),
        ]
        .join(",")
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(Error::Format(format!("metrics row has {} fields", f.len())));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad metric `{s}`"))) };
        let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
        let phase = match f[1] {
            "offline" => Phase::Offline,
            "online" => Phase::Online,
            p => return Err(Error::Format(format!("bad phase `{p}`"))),
        };
        Ok(Self {
            step: f[0].parse().map_err(|_| Error::Format(format!("bad step `{}`", f[0])))?,
            phase,
            critic_loss: opt(f[2])?,
            cfm_loss: opt(f[3])?,
            vae_recon: opt(f[4])?,
            vae_kl: opt(f[5])?,
            actor_total: opt(f[6])?,
            distill: opt(f[7])?,
            q_term: opt(f[8])?,
            entropy: opt(f[9])?,
            alpha2: num(f[10])?,
            eval_return_mean: num(f[11])?,
            eval_return_std: num(f[12])?,
            mode_coverage: num(f[13])?,
            q_bias: opt(f[14])?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics header mismatch".into()));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRow::from_csv).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub return_mean: f64,
    pub return_std: f64,
    pub coverage: ModeCoverage,
    pub q_bias: Option<BiasReport>,
    pub actions: Vec<[f64; 2]>,
}

impl EvalReport {
    pub fn mode_coverage(&self) -> f64 {
        self.coverage.fraction()
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Which optimizer fired, in order; filled only while tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Critic,
    Prior,
    Teacher,
    Student,
    Temperature,
}

/// Keys that may change between the offline and online phases of one run.
const ONLINE_KEYS: [&str; 10] = [
    "online_steps",
    "alpha1_online",
    "entropy_mult",
    "initial_alpha2",
    "lr_alpha",
    "balanced_sampling",
    "online_buffer_capacity",
    "eval_episodes",
    "eval_interval",
    "dataset_path",
];

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    pub world: CrescentWorld,
    pub agent: Agent,
    pub offline: ReplayBuffer,
    pub online: ReplayBuffer,
    pub rngs: Streams,
    offline_done: usize,
    online_done: usize,
    accum: Accum,
    rows: Vec<MetricsRow>,
    trace: Option<Vec<Update>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: Vec<Transition>) -> Result<Self> {
        config.validate()?;
        let world = CrescentWorld::default();
        if dataset.iter().any(|t| t.state.len() != world.state_dim()) {
            return Err(Error::Shape("dataset state dim does not match the environment".into()));
        }
        let agent = Agent::new(&config, &world)?;
        Ok(Self {
            offline: ReplayBuffer::from_transitions(dataset.len().max(1), dataset),
            online: ReplayBuffer::new(config.online_buffer_capacity),
            rngs: Streams::new(config.seed),
            world,
            agent,
            config,
            offline_done: 0,
            online_done: 0,
            accum: Accum::default(),
            rows: Vec::new(),
            trace: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn offline_done(&self) -> usize {
        self.offline_done
    }

    pub fn online_done(&self) -> usize {
        self.online_done
    }

    pub fn global_step(&self) -> u64 {
        (self.offline_done + self.online_done) as u64
    }

    pub fn phase(&self) -> Phase {
        if self.online_done > 0 || self.offline_done >= self.config.offline_steps && self.config.online_steps > 0 {
            Phase::Online
        } else {
            Phase::Offline
        }
    }

    pub fn start_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<Update> {
        self.trace.take().unwrap_or_default()
    }

    fn record(&mut self, u: Update) {
        if let Some(t) = self.trace.as_mut() {
            t.push(u);
        }
    }

    /// Swaps in a config that differs only in online-phase keys. Online-only
    /// state is rebuilt if the online phase has not started.
    pub fn reconfigure(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        for k in TrainConfig::KEYS {
            if !ONLINE_KEYS.contains(&k) && config.get(k) != self.config.get(k) {
                return Err(Error::Config(format!("`{k}` cannot change after training has started")));
            }
        }
        if self.online_done == 0 {
            self.agent.temp = EntropyTemp::new(config.initial_alpha2, config.target_entropy(2), config.lr_alpha);
            self.online = ReplayBuffer::new(config.online_buffer_capacity);
        } else {
            for k in ["entropy_mult", "initial_alpha2", "lr_alpha", "online_buffer_capacity"] {
                if config.get(k) != self.config.get(k) {
                    return Err(Error::Config(format!("`{k}` cannot change once online training has started")));
                }
            }
        }
        self.config = config;
        Ok(())
    }

    fn alpha1(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Offline => self.config.alpha1_offline,
            Phase::Online => self.config.alpha1_online,
        }
    }

    fn alpha2(&self, phase: Phase) -> f64 {
        if phase == Phase::Online && self.config.variant.stochastic_student() {
            self.agent.temp.alpha2()
        } else {
            0.0
        }
    }

    fn uses_prior(&self) -> bool {
        matches!(self.config.variant, Variant::Ours | Variant::OursWoCe) && self.config.n_cand > 0
    }

    /// Student input noise: decoder samples when the prior is active, else Gaussian.
    fn noise(&self, states: &Matrix, rng: &mut StreamRng) -> Result<Matrix> {
        if self.uses_prior() {
            self.agent.prior.sample_prior(states, rng)
        } else {
            Ok(standard_normal(rng, states.rows(), 2))
        }
    }

    /// Policy actions for `states` with their log-densities (zero for
    /// deterministic policies).
    pub fn policy_actions(&self, states: &Matrix, mode: ActMode, rng: &mut StreamRng) -> Result<(Matrix, Vec<f64>)> {
        let n = states.rows();
        let a = &self.agent;
        match self.config.variant {
            Variant::Ours => {
                let x = self.noise(states, rng)?;
                a.actor.act(states, &x, mode, rng)
            }
            Variant::OursWoCe | Variant::Fql => {
                let x = self.noise(states, rng)?;
                Ok((a.actor.mean_action(states, &x)?, vec![0.0; n]))
            }
            Variant::FqlWoQ => {
                let x = standard_normal(rng, n, 2);
                Ok((a.teacher.euler_sample(states, &x)?, vec![0.0; n]))
            }
            Variant::Bc => Ok((a.actor.mean_action(states, &Matrix::zeros(n, 2))?, vec![0.0; n])),
        }
    }

    /// One update on `batch` in the fixed order.
    pub fn train_step(&mut self, batch: &[Transition], phase: Phase) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::Domain("train step on an empty batch".into()));
        }
        let variant = self.config.variant;
        let states = Matrix::from_rows(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(&batch.iter().map(|t| t.action).collect::<Vec<_>>())?;
        let alpha1 = self.alpha1(phase);
        let alpha2 = self.alpha2(phase);
        let mut stats = StepStats {
            alpha2,
            ..StepStats::default()
        };

        if variant == Variant::Bc {
            stats.actor_total = Some(self.agent.actor.bc_loss(&states, &actions)?);
            self.agent.opt_actor.step(self.agent.actor.params_mut())?;
            self.record(Update::Student);
            return Ok(stats);
        }

        if variant.uses_critic() {
            let next = if batch.iter().all(|t| t.done) {
                None
            } else {
                let sp = Matrix::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
                let mut rng = self.rngs.actor_noise.clone();
                let (a, lp) = self.policy_actions(&sp, ActMode::Sample, &mut rng)?;
                self.rngs.actor_noise = rng;
                Some(NextActions { actions: a, log_probs: lp })
            };
            let y = self.agent.critic.td_target(batch, next.as_ref(), alpha2)?;
            stats.critic_loss = Some(self.agent.critic.critic_loss(&states, &actions, &y)?);
            self.agent.opt_critic.step(self.agent.critic.params_mut())?;
            self.agent.critic.polyak_update();
            self.record(Update::Critic);
        }

        if self.uses_prior() {
            let sel = select_advantage_noise(
                &self.agent.teacher,
                &self.agent.critic,
                &states,
                self.config.n_cand,
                &mut self.rngs.candidate_noise,
            )?;
            let l = self.agent.prior.loss(&sel.pairs, &mut self.rngs.cvae_noise)?;
            stats.vae_recon = Some(l.recon);
            stats.vae_kl = Some(l.kl);
            self.agent.opt_prior.step(self.agent.prior.params_mut())?;
            self.record(Update::Prior);
        }

        stats.cfm_loss = Some(self.agent.teacher.cfm_loss(&states, &actions, &mut self.rngs.teacher_noise)?);
        self.agent.opt_teacher.step(self.agent.teacher.params_mut())?;
        self.record(Update::Teacher);

        if variant == Variant::FqlWoQ {
            return Ok(stats);
        }

        let mut prng = self.rngs.prior_noise.clone();
        let x_hat = self.noise(&states, &mut prng)?;
        self.rngs.prior_noise = prng;
        let a_teacher = self.agent.teacher.euler_sample(&states, &x_hat)?;
        let agent = &mut self.agent;
        let loss = if variant == Variant::Ours {
            agent.actor.actor_loss(
                &states,
                &x_hat,
                &a_teacher,
                &mut agent.critic,
                alpha1,
                alpha2,
                &mut self.rngs.actor_noise,
            )?
        } else {
            agent.actor.deterministic_loss(&states, &x_hat, &a_teacher, &mut agent.critic, alpha1)?
        };
        agent.opt_actor.step(agent.actor.params_mut())?;
        stats.actor_total = Some(loss.total);
        stats.distill = Some(loss.distill);
        stats.q_term = Some(loss.q_term);
        if variant == Variant::Ours {
            stats.entropy = Some(loss.entropy);
        }
        self.record(Update::Student);

        if phase == Phase::Online && variant == Variant::Ours {
            self.agent.temp.temp_loss(loss.entropy);
            self.agent.temp.step()?;
            self.record(Update::Temperature);
        }
        Ok(stats)
    }

    /// Evaluates the mean policy on `episodes` freshly drawn noises, using
    /// the dedicated evaluation stream.
    pub fn evaluate(&mut self, episodes: usize) -> Result<EvalReport> {
        let mut rng = self.rngs.eval.clone();
        let r = self.evaluate_with(episodes, &mut rng);
        self.rngs.eval = rng;
        r
    }

    pub fn evaluate_with(&self, episodes: usize, rng: &mut StreamRng) -> Result<EvalReport> {
        if episodes == 0 {
            return Err(Error::Domain("evaluation needs at least one episode".into()));
        }
        let states = Matrix::row_vector(self.world.fixed_state()).repeat_rows(episodes);
        let (a, _) = self.policy_actions(&states, ActMode::Mean, rng)?;
        let actions: Vec<[f64; 2]> = (0..episodes).map(|i| [a.get(i, 0), a.get(i, 1)]).collect();
        let rewards = actions
            .iter()
            .map(|x| self.world.step(x).map(|o| o.reward))
            .collect::<Result<Vec<f64>>>()?;
        let (return_mean, return_std) = mean_std(&rewards);
        let q_bias = if self.config.variant.uses_critic() {
            Some(bias_of(&self.agent.critic, &self.world, &states, &a)?)
        } else {
            None
        };
        Ok(EvalReport {
            return_mean,
            return_std,
            coverage: self.world.mode_coverage(&actions, COVERAGE_THRESHOLD),
            q_bias,
            actions,
        })
    }

    fn emit_row(&mut self, phase: Phase) -> Result<()> {
        let ev = self.evaluate(self.config.eval_episodes.max(1))?;
        let m = self.accum.means();
        self.rows.push(MetricsRow {
            step: self.global_step(),
            phase,
            critic_loss: m[0],
            cfm_loss: m[1],
            vae_recon: m[2],
            vae_kl: m[3],
            actor_total: m[4],
            distill: m[5],
            q_term: m[6],
            entropy: m[7],
            alpha2: self.alpha2(phase),
            eval_return_mean: ev.return_mean,
            eval_return_std: ev.return_std,
            mode_coverage: ev.mode_coverage(),
            q_bias: ev.q_bias.map(|b| b.mean_bias),
        });
        self.accum = Accum::default();
        Ok(())
    }

    fn after_step(&mut self, stats: &StepStats, phase: Phase, phase_done: usize, phase_total: usize) -> Result<()> {
        self.accum.add(stats);
        let interval = self.config.eval_interval;
        if (interval > 0 && phase_done % interval == 0) || phase_done == phase_total {
            self.emit_row(phase)?;
        }
        Ok(())
    }

    /// Runs up to `limit` of the remaining offline steps. Returns how many ran.
    pub fn run_offline_steps(&mut self, limit: usize) -> Result<usize> {
        let todo = self.config.offline_steps.saturating_sub(self.offline_done).min(limit);
        for _ in 0..todo {
            let batch = sample_batch(&self.offline, &self.online, self.config.batch_size, false, &mut self.rngs.batch)?;
            let stats = self.train_step(&batch, Phase::Offline)?;
            self.offline_done += 1;
            self.after_step(&stats, Phase::Offline, self.offline_done, self.config.offline_steps)?;
        }
        Ok(todo)
    }

    pub fn run_offline(&mut self) -> Result<()> {
        self.run_offline_steps(usize::MAX).map(|_| ())
    }

    /// Runs up to `limit` of the remaining online steps: act, step the
    /// environment, store, then train once.
    pub fn run_online_steps(&mut self, limit: usize) -> Result<usize> {
        if self.offline_done < self.config.offline_steps {
            return Err(Error::State("online phase requested before offline phase finished".into()));
        }
        let todo = self.config.online_steps.saturating_sub(self.online_done).min(limit);
        let state = Matrix::row_vector(self.world.fixed_state());
        for _ in 0..todo {
            let mut rng = self.rngs.env.clone();
            let (a, _) = self.policy_actions(&state, ActMode::Sample, &mut rng)?;
            self.rngs.env = rng;
            let mut action = [a.get(0, 0), a.get(0, 1)];
            self.world.clip(&mut action);
            let out = self.world.step(&action)?;
            self.online.push(Transition {
                state: state.row(0).to_vec(),
                action,
                reward: out.reward,
                next_state: out.next_state,
                done: out.done,
            });
            let batch = sample_batch(
                &self.offline,
                &self.online,
                self.config.batch_size,
                self.config.balanced_sampling,
                &mut self.rngs.batch,
            )?;
            let stats = self.train_step(&batch, Phase::Online)?;
            self.online_done += 1;
            self.after_step(&stats, Phase::Online, self.online_done, self.config.online_steps)?;
        }
        Ok(todo)
    }

    pub fn run_online(&mut self) -> Result<()> {
        self.run_online_steps(usize::MAX).map(|_| ())
    }

    pub fn save(&self) -> Vec<u8> {
        let mut s = Sections::new();
        s.push("config", self.config.to_text().into_bytes());
        let mut counters = Vec::new();
        checkpoint::put_u64(&mut counters, self.offline_done as u64);
        checkpoint::put_u64(&mut counters, self.online_done as u64);
        s.push("counters", counters);
        let a = &self.agent;
        s.push("param/teacher", checkpoint::encode_tensors(&a.teacher.params()));
        s.push("param/critic.q1", checkpoint::encode_tensors(&a.critic.q1.params()));
        s.push("param/critic.q2", checkpoint::encode_tensors(&a.critic.q2.params()));
        s.push("param/critic.q1_target", checkpoint::encode_tensors(&a.critic.q1_target.params()));
        s.push("param/critic.q2_target", checkpoint::encode_tensors(&a.critic.q2_target.params()));
        s.push("param/prior", checkpoint::encode_tensors(&a.prior.params()));
        s.push("param/actor", checkpoint::encode_tensors(&a.actor.params()));
        s.push("param/log_alpha2", checkpoint::encode_tensors(&[&a.temp.log_alpha2]));
        s.push("adam/teacher", checkpoint::encode_adam(&a.opt_teacher));
        s.push("adam/critic", checkpoint::encode_adam(&a.opt_critic));
        s.push("adam/prior", checkpoint::encode_adam(&a.opt_prior));
        s.push("adam/actor", checkpoint::encode_adam(&a.opt_actor));
        s.push("adam/alpha2", checkpoint::encode_adam(&a.temp.optimizer));
        let mut rngs = self.rngs.clone();
        for name in Streams::NAMES {
            s.push(&format!("rng/{name}"), save_state(rngs.by_name(name)));
        }
        s.push("buffer/offline", checkpoint::encode_buffer(&self.offline));
        s.push("buffer/online", checkpoint::encode_buffer(&self.online));
        s.push("accum", self.accum.encode());
        s.push("metrics", metrics_csv(&self.rows).into_bytes());
        s.to_bytes()
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let s = Sections::from_bytes(bytes)?;
        let text = std::str::from_utf8(s.get("config")?).map_err(|_| Error::Format("config is not utf-8".into()))?;
        let config = TrainConfig::parse(text)?;
        let mut t = Trainer::new(config, Vec::new())?;
        let mut r = Reader::new(s.get("counters")?);
        t.offline_done = r.u64()? as usize;
        t.online_done = r.u64()? as usize;
        r.finish()?;
        let a = &mut t.agent;
        checkpoint::decode_tensors_into(s.get("param/teacher")?, a.teacher.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/critic.q1")?, a.critic.q1.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/critic.q2")?, a.critic.q2.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/critic.q1_target")?, a.critic.q1_target.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/critic.q2_target")?, a.critic.q2_target.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/prior")?, a.prior.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/actor")?, a.actor.params_mut())?;
        checkpoint::decode_tensors_into(s.get("param/log_alpha2")?, vec![&mut a.temp.log_alpha2])?;
        for (name, opt, n) in [
            ("adam/teacher", &mut a.opt_teacher, a.teacher.num_params()),
            ("adam/critic", &mut a.opt_critic, a.critic.num_params()),
            ("adam/prior", &mut a.opt_prior, a.prior.num_params()),
            ("adam/actor", &mut a.opt_actor, a.actor.num_params()),
            ("adam/alpha2", &mut a.temp.optimizer, 1),
        ] {
            let st = checkpoint::decode_adam(s.get(name)?)?;
            if st.m.len() != n {
                return Err(Error::Format(format!("`{name}` tracks {} values, expected {n}", st.m.len())));
            }
            *opt = st;
        }
        for name in Streams::NAMES {
            *t.rngs.by_name(name) = load_state(s.get(&format!("rng/{name}"))?)?;
        }
        t.offline = checkpoint::decode_buffer(s.get("buffer/offline")?)?;
        t.online = checkpoint::decode_buffer(s.get("buffer/online")?)?;
        t.accum = Accum::decode(s.get("accum")?)?;
        let m = std::str::from_utf8(s.get("metrics")?).map_err(|_| Error::Format("metrics are not utf-8".into()))?;
        t.rows = parse_metrics_csv(m)?;
        Ok(t)
    }

    /// Human-readable one-line summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "variant={} seed={} offline={}/{} online={}/{}",
            self.config.variant,
            self.config.seed,
            self.offline_done,
            self.config.offline_steps,
            self.online_done,
            self.config.online_steps
        );
        if let Some(r) = self.rows.last() {
            let _ = write!(s, " return={:.3}±{:.3} coverage={:.3}", r.eval_return_mean, r.eval_return_std, r.mode_coverage);
        }
        s
    }
}
