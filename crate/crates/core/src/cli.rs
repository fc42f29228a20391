//! Command-line front end. `run` returns the process exit code: 0 on success,
//! 2 on usage or config errors, 1 on anything else.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, kde_grid, DEFAULT_KDE_RESOLUTION};
use crate::config::{TrainConfig, Variant, SEEDS};
use crate::diffcore::Matrix;
use crate::env::{read_dataset, write_dataset, CrescentWorld};
use crate::error::{Error, Result};
use crate::qprior::{select_advantage_noise, write_pairs_csv};
use crate::rng::stream;
use crate::student::ActMode;
use crate::trainer::{metrics_csv, mean_std, parse_metrics_csv, Trainer};

pub const RUNS_DIR_ENV: &str = "GSFLOW_RUNS_DIR";

#[derive(Debug, Parser)]
#[command(name = "gsflow", about = "Flow-policy distillation with a Q-guided noise prior")]
pub struct Cli {
    /// Root directory for run outputs (default: $GSFLOW_RUNS_DIR or ./runs).
    #[arg(long, global = true)]
    pub runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the offline dataset.
    GenDataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Output path (default: the config's dataset_path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Offline phase from the dataset file.
    TrainOffline {
        #[arg(long)]
        name: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seeds to run (default: the config's seed).
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Continue from an existing checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Also write the checkpoint every N steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Online phase, starting from the run's offline checkpoint.
    TrainOnline {
        #[arg(long)]
        name: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Evaluate a checkpoint with mean actions.
    Eval {
        #[arg(long)]
        name: String,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
    },
    /// Run a preset ablation matrix (offline then online per cell and seed).
    Ablate {
        suite: Suite,
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seeds (default: 0,2,4,8,16).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Parallel worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Diagnostics for a trained checkpoint, written under analysis/.
    Analyze {
        #[arg(long)]
        name: String,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long, default_value_t = 2000)]
        n_mc: usize,
        #[arg(long, default_value_t = 10)]
        n_best: usize,
        #[arg(long, default_value_t = DEFAULT_KDE_RESOLUTION)]
        resolution: usize,
    },
    /// Summarize final metrics of every run below runs/<name>.
    Report {
        #[arg(long)]
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    NCand,
    Alpha1,
    Entropy,
    Variants,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::NCand => "n-cand",
            Suite::Alpha1 => "alpha1",
            Suite::Entropy => "entropy",
            Suite::Variants => "variants",
        }
    }

    /// `(cell directory, overrides)` for each cell.
    pub fn cells(self) -> Vec<(String, Vec<String>)> {
        let one = |dir: String, kv: String| (dir, vec![kv]);
        match self {
            Suite::NCand => [0, 5, 10, 15]
                .iter()
                .map(|n| one(format!("n_cand-{n}"), format!("n_cand={n}")))
                .collect(),
            Suite::Alpha1 => [0.0, 1.0, 10.0, 100.0]
                .iter()
                .map(|a| one(format!("alpha1-{a}"), format!("alpha1_offline={a}")))
                .collect(),
            Suite::Entropy => [0.1, 0.5, 0.75]
                .iter()
                .map(|m| one(format!("mult-{m}"), format!("entropy_mult={m}")))
                .collect(),
            Suite::Variants => Variant::ALL
                .iter()
                .map(|v| one(v.name().to_string(), format!("variant={v}")))
                .collect(),
        }
    }
}

pub fn runs_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn run_dir(root: &Path, name: &str, seed: u64) -> PathBuf {
    root.join(name).join(format!("seed{seed}"))
}

pub fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

fn seeds_or(seeds: &[u64], fallback: u64) -> Vec<u64> {
    if seeds.is_empty() {
        vec![fallback]
    } else {
        seeds.to_vec()
    }
}

pub fn generate_dataset_file(cfg: &TrainConfig, out: &Path) -> Result<usize> {
    let world = CrescentWorld::default();
    let data = world.generate_dataset(cfg.dataset_per_crescent, cfg.dataset_background, &mut stream(cfg.seed, "dataset"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    write_dataset(&mut w, &data)?;
    w.flush()?;
    Ok(data.len())
}

fn load_dataset(path: &str) -> Result<Vec<crate::env::Transition>> {
    let f = fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("dataset `{path}`: {e}"))))?;
    read_dataset(BufReader::new(f))
}

/// Writes `config.txt`, `metrics.csv` and `checkpoint.bin`.
pub fn save_run(dir: &Path, t: &Trainer) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), t.config().to_text())?;
    fs::write(dir.join("metrics.csv"), metrics_csv(t.rows()))?;
    // write then rename so an interrupted save never leaves a torn checkpoint
    let tmp = dir.join("checkpoint.bin.tmp");
    fs::write(&tmp, t.save())?;
    fs::rename(tmp, dir.join("checkpoint.bin"))?;
    Ok(())
}

pub fn load_run(dir: &Path) -> Result<Trainer> {
    Trainer::load(&fs::read(dir.join("checkpoint.bin"))?)
}

fn run_chunked(
    t: &mut Trainer,
    dir: &Path,
    every: Option<usize>,
    mut step: impl FnMut(&mut Trainer, usize) -> Result<usize>,
) -> Result<()> {
    let chunk = every.filter(|&n| n > 0).unwrap_or(usize::MAX);
    loop {
        let ran = step(t, chunk)?;
        save_run(dir, t)?;
        if ran < chunk {
            return Ok(());
        }
    }
}

pub fn train_offline(dir: &Path, cfg: &TrainConfig, resume: bool, every: Option<usize>) -> Result<Trainer> {
    let mut t = if resume && dir.join("checkpoint.bin").exists() {
        let mut t = load_run(dir)?;
        if t.config() != cfg {
            t.reconfigure(cfg.clone())?;
        }
        t
    } else {
        Trainer::new(cfg.clone(), load_dataset(&cfg.dataset_path)?)?
    };
    run_chunked(&mut t, dir, every, |t, n| t.run_offline_steps(n))?;
    Ok(t)
}

pub fn train_online(dir: &Path, overrides: &ConfigArgs, every: Option<usize>) -> Result<Trainer> {
    let mut t = load_run(dir)?;
    let mut cfg = match &overrides.config {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p)?)?,
        None => t.config().clone(),
    };
    cfg.apply_overrides(&overrides.overrides)?;
    cfg.seed = t.config().seed;
    t.reconfigure(cfg)?;
    run_chunked(&mut t, dir, every, |t, n| t.run_online_steps(n))?;
    Ok(t)
}

#[derive(Debug, Serialize)]
struct EvalJson {
    seed: u64,
    episodes: usize,
    return_mean: f64,
    return_std: f64,
    mode_coverage: f64,
    crescent_fractions: [f64; 6],
    excluded_covered: usize,
    q_bias: Option<analysis::BiasReport>,
}

fn eval_run(dir: &Path, episodes: usize) -> Result<EvalJson> {
    let mut t = load_run(dir)?;
    let ev = t.evaluate(episodes)?;
    let out = EvalJson {
        seed: t.config().seed,
        episodes,
        return_mean: ev.return_mean,
        return_std: ev.return_std,
        mode_coverage: ev.mode_coverage(),
        crescent_fractions: ev.coverage.fractions,
        excluded_covered: ev.coverage.covered_excluded,
        q_bias: ev.q_bias,
    };
    let adir = dir.join("analysis");
    fs::create_dir_all(&adir)?;
    analysis::write_json(fs::File::create(adir.join("eval.json"))?, &out)?;
    Ok(out)
}

fn analyze_run(dir: &Path, n_mc: usize, n_best: usize, resolution: usize) -> Result<()> {
    let t = load_run(dir)?;
    let adir = dir.join("analysis");
    fs::create_dir_all(&adir)?;
    let a = &t.agent;
    let s = t.world.fixed_state().to_vec();
    let mut rng = stream(t.config().seed, "analysis");
    let bound = analysis::estimate_bound(&a.teacher, &a.critic, &a.prior, &s, n_mc, n_best, &mut rng)?;
    analysis::write_json(fs::File::create(adir.join("bound.json"))?, &bound)?;
    let bias = analysis::q_bias(
        &a.critic,
        &t.world,
        |st: &Matrix| t.policy_actions(st, ActMode::Mean, &mut rng).map(|(m, _)| m),
        n_mc,
    )?;
    analysis::write_json(fs::File::create(adir.join("bias.json"))?, &bias)?;
    let prior = analysis::compare_priors(&a.teacher, &a.critic, &a.prior, &s, n_mc, &mut rng)?;
    analysis::write_json(fs::File::create(adir.join("prior.json"))?, &prior)?;

    let states = Matrix::row_vector(&s).repeat_rows(n_mc);
    let to_points = |m: &Matrix| (0..m.rows()).map(|i| [m.get(i, 0), m.get(i, 1)]).collect::<Vec<_>>();
    let lo = t.world.action_low();
    let hi = t.world.action_high();
    let x_hat = a.prior.sample_prior(&states, &mut rng)?;
    kde_grid(&to_points(&x_hat), resolution, None, [lo[0], hi[0]], [lo[1], hi[1]])?
        .write_csv(BufWriter::new(fs::File::create(adir.join("kde_prior.csv"))?))?;
    let (acts, _) = t.policy_actions(&states, ActMode::Mean, &mut rng)?;
    kde_grid(&to_points(&acts), resolution, None, [lo[0], hi[0]], [lo[1], hi[1]])?
        .write_csv(BufWriter::new(fs::File::create(adir.join("kde_actions.csv"))?))?;
    let n_cand = t.config().n_cand.max(1);
    let sel = select_advantage_noise(&a.teacher, &a.critic, &Matrix::row_vector(&s).repeat_rows(256), n_cand, &mut rng)?;
    write_pairs_csv(BufWriter::new(fs::File::create(adir.join("advantage_pairs.csv"))?), &sel.pairs)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportRow {
    run: String,
    seeds: usize,
    final_return_mean: f64,
    final_return_sd: f64,
    final_coverage_mean: f64,
    final_q_bias_mean: Option<f64>,
}

fn find_metrics(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            find_metrics(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(p);
        }
    }
    Ok(())
}

fn report(root: &Path, name: &str) -> Result<Vec<ReportRow>> {
    let base = root.join(name);
    let mut files = Vec::new();
    find_metrics(&base, &mut files)?;
    files.sort();
    // group seeds by the directory above seed<k>
    let mut groups: BTreeMap<String, Vec<crate::trainer::MetricsRow>> = BTreeMap::new();
    for f in files {
        let seed_dir = f.parent().unwrap();
        let group = seed_dir
            .parent()
            .and_then(|g| g.strip_prefix(&base).ok())
            .map(|g| g.display().to_string())
            .unwrap_or_default();
        let rows = parse_metrics_csv(&fs::read_to_string(&f)?)?;
        if let Some(last) = rows.last() {
            groups.entry(group).or_default().push(last.clone());
        }
    }
    let mut out = Vec::new();
    for (run, rows) in groups {
        let rets: Vec<f64> = rows.iter().map(|r| r.eval_return_mean).collect();
        let (m, sd) = mean_std(&rets);
        let cov = rows.iter().map(|r| r.mode_coverage).sum::<f64>() / rows.len() as f64;
        let biases: Vec<f64> = rows.iter().filter_map(|r| r.q_bias).collect();
        out.push(ReportRow {
            run: if run.is_empty() { name.to_string() } else { run },
            seeds: rows.len(),
            final_return_mean: m,
            final_return_sd: sd,
            final_coverage_mean: cov,
            final_q_bias_mean: (!biases.is_empty()).then(|| mean_std(&biases).0),
        });
    }
    analysis::write_json(fs::File::create(base.join("report.json"))?, &out)?;
    Ok(out)
}

/// Cells of an ablation whose offline phases are identical share one offline run.
pub fn offline_key(cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    let d = TrainConfig::default();
    c.online_steps = d.online_steps;
    c.alpha1_online = d.alpha1_online;
    c.entropy_mult = d.entropy_mult;
    c.initial_alpha2 = d.initial_alpha2;
    c.lr_alpha = d.lr_alpha;
    c.balanced_sampling = d.balanced_sampling;
    c.online_buffer_capacity = d.online_buffer_capacity;
    c.to_text()
}

fn ablate(root: &Path, suite: Suite, name: &str, base: &TrainConfig, seeds: &[u64], jobs: usize) -> Result<Vec<PathBuf>> {
    let mut jobs_list: Vec<(PathBuf, TrainConfig)> = Vec::new();
    for (cell, overrides) in suite.cells() {
        let mut cfg = base.clone();
        cfg.apply_overrides(&overrides)?;
        cfg.validate()?;
        for &seed in seeds {
            jobs_list.push((run_dir(root, &format!("{name}/{cell}"), seed), with_seed(&cfg, seed)));
        }
    }
    // one offline run per distinct offline configuration
    let mut offline: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (_, cfg)) in jobs_list.iter().enumerate() {
        offline.entry(offline_key(cfg)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = offline.into_values().collect();
    let dataset_cache = std::sync::Mutex::new(BTreeMap::<String, Vec<crate::env::Transition>>::new());
    let work = |group: &Vec<usize>| -> Result<()> {
        let (_, first) = &jobs_list[group[0]];
        let data = {
            let mut cache = dataset_cache.lock().expect("dataset cache");
            match cache.get(&first.dataset_path) {
                Some(d) => d.clone(),
                None => {
                    let d = load_dataset(&first.dataset_path)?;
                    cache.insert(first.dataset_path.clone(), d.clone());
                    d
                }
            }
        };
        let mut offline = Trainer::new(first.clone(), data)?;
        offline.run_offline()?;
        for &i in group {
            let (dir, cfg) = &jobs_list[i];
            let mut t = offline.clone();
            t.reconfigure(cfg.clone())?;
            t.run_online()?;
            save_run(dir, &t)?;
        }
        Ok(())
    };
    let jobs = jobs.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let first_err = std::sync::Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(groups.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= groups.len() {
                    break;
                }
                if let Err(e) = work(&groups[i]) {
                    first_err.lock().expect("error slot").get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_err.into_inner().expect("error slot") {
        return Err(e);
    }
    Ok(jobs_list.into_iter().map(|(d, _)| d).collect())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let root = runs_root(cli.runs_dir.as_deref());
    match cli.command {
        Command::GenDataset { cfg, seed, out: path } => {
            let mut c = load_config(&cfg)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            let path = path.unwrap_or_else(|| PathBuf::from(&c.dataset_path));
            let n = generate_dataset_file(&c, &path)?;
            writeln!(out, "wrote {n} transitions to {}", path.display())?;
        }
        Command::TrainOffline {
            name,
            cfg,
            seed,
            resume,
            checkpoint_every,
        } => {
            let c = load_config(&cfg)?;
            for s in seeds_or(&seed, c.seed) {
                let dir = run_dir(&root, &name, s);
                let t = train_offline(&dir, &with_seed(&c, s), resume, checkpoint_every)?;
                writeln!(out, "{}: {}", dir.display(), t.summary())?;
            }
        }
        Command::TrainOnline {
            name,
            cfg,
            seed,
            checkpoint_every,
        } => {
            let seeds = if seed.is_empty() { vec![load_config(&cfg)?.seed] } else { seed };
            for s in seeds {
                let dir = run_dir(&root, &name, s);
                let t = train_online(&dir, &cfg, checkpoint_every)?;
                writeln!(out, "{}: {}", dir.display(), t.summary())?;
            }
        }
        Command::Eval { name, seed, episodes } => {
            for s in seeds_or(&seed, 0) {
                let e = eval_run(&run_dir(&root, &name, s), episodes)?;
                writeln!(out, "{}", serde_json::to_string(&e)?)?;
            }
        }
        Command::Ablate {
            suite,
            name,
            cfg,
            seeds,
            jobs,
        } => {
            let c = load_config(&cfg)?;
            let seeds = if seeds.is_empty() { SEEDS.to_vec() } else { seeds };
            let name = name.unwrap_or_else(|| format!("ablate-{}", suite.name()));
            for d in ablate(&root, suite, &name, &c, &seeds, jobs)? {
                writeln!(out, "{}", d.display())?;
            }
        }
        Command::Analyze {
            name,
            seed,
            n_mc,
            n_best,
            resolution,
        } => {
            for s in seeds_or(&seed, 0) {
                let dir = run_dir(&root, &name, s);
                analyze_run(&dir, n_mc, n_best, resolution)?;
                writeln!(out, "{}", dir.join("analysis").display())?;
            }
        }
        Command::Report { name } => {
            for r in report(&root, &name)? {
                writeln!(
                    out,
                    "{:<24} seeds={} return={:.3}±{:.3} coverage={:.3} q_bias={}",
                    r.run,
                    r.seeds,
                    r.final_return_mean,
                    r.final_return_sd,
                    r.final_coverage_mean,
                    r.final_q_bias_mean.map_or("-".to_string(), |b| format!("{b:.3}"))
                )?;
            }
        }
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), dispatches, and returns the
/// exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

