//! Trains offline, then online in ten chunks, printing per-crescent shares of
//! mean-mode evaluation actions and how many exploratory actions have landed
//! in each crescent so far.
//!
//! ```sh
//! cargo run --release --example online_discovery -- batch_size=64 offline_steps=10000 online_steps=30000
//! ```

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use gsflow::env::CrescentWorld;
use gsflow::rng::stream;
use gsflow::{TrainConfig, Trainer};

fn shares(x: [f64; 6]) -> String {
    x.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")
}

fn main() -> gsflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig::default();
    cfg.apply_overrides(&args)?;
    let world = CrescentWorld::default();
    let data = world.generate_dataset(cfg.dataset_per_crescent, cfg.dataset_background, &mut stream(cfg.seed, "dataset"));
    let mut t = Trainer::new(cfg.clone(), data)?;
    t.run_offline()?;
    let ev = t.evaluate(1000)?;
    println!("offline  return {:.2}  shares [{}]", ev.return_mean, shares(ev.coverage.fractions));

    let chunk = (cfg.online_steps / 10).max(1);
    while t.online_done() < cfg.online_steps {
        t.run_online_steps(chunk)?;
        let ev = t.evaluate(1000)?;
        let mut hits = [0usize; 6];
        for tr in t.online.iter() {
            if let Some(i) = world.crescent_at(&tr.action) {
                hits[i] += 1;
            }
        }
        println!(
            "online {:>6}  return {:.2}  shares [{}]  excluded {}  alpha2 {:.3}  explored {:?}",
            t.online_done(),
            ev.return_mean,
            shares(ev.coverage.fractions),
            ev.coverage.covered_excluded,
            t.agent.temp.alpha2(),
            hits
        );
    }
    Ok(())
}
