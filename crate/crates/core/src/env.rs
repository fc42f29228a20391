//! The Multi-Crescent testbed: six disjoint crescent-shaped reward regions over a
//! 2-D action box, a one-step (contextual bandit) episode structure, offline
//! dataset generation with the two maximum-reward crescents withheld, and replay
//! buffers.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardLevel {
    Moderate,
    Mid,
    Max,
}

impl RewardLevel {
    pub fn name(self) -> &'static str {
        match self {
            RewardLevel::Moderate => "moderate",
            RewardLevel::Mid => "mid",
            RewardLevel::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardValues {
    pub moderate: f64,
    pub mid: f64,
    pub max: f64,
}

impl Default for RewardValues {
    fn default() -> Self {
        Self {
            moderate: 4.0,
            mid: 7.0,
            max: 10.0,
        }
    }
}

impl RewardValues {
    pub fn of(&self, level: RewardLevel) -> f64 {
        match level {
            RewardLevel::Moderate => self.moderate,
            RewardLevel::Mid => self.mid,
            RewardLevel::Max => self.max,
        }
    }
}

/// An annular sector: points whose distance to `center` lies in
/// `[r_inner, r_outer]` and whose bearing is within `half_angle` of `opening_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Crescent {
    pub label: String,
    pub center: [f64; 2],
    pub r_inner: f64,
    pub r_outer: f64,
    pub opening_dir: [f64; 2],
    pub half_angle: f64,
    pub level: RewardLevel,
}

impl Crescent {
    pub fn contains(&self, a: &[f64]) -> bool {
        let dx = a[0] - self.center[0];
        let dy = a[1] - self.center[1];
        let r = (dx * dx + dy * dy).sqrt();
        if r < self.r_inner || r > self.r_outer {
            return false;
        }
        let cos = (dx * self.opening_dir[0] + dy * self.opening_dir[1]) / r;
        cos.clamp(-1.0, 1.0).acos() <= self.half_angle
    }

    /// Axis-aligned box enclosing the crescent.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let r = self.r_outer;
        (
            [self.center[0] - r, self.center[1] - r],
            [self.center[0] + r, self.center[1] + r],
        )
    }

    /// Point on the symmetry axis at mid radius.
    pub fn midpoint(&self) -> [f64; 2] {
        let rm = 0.5 * (self.r_inner + self.r_outer);
        [
            self.center[0] + rm * self.opening_dir[0],
            self.center[1] + rm * self.opening_dir[1],
        ]
    }

    pub fn area(&self) -> f64 {
        self.half_angle * (self.r_outer.powi(2) - self.r_inner.powi(2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub action_low: [f64; 2],
    pub action_high: [f64; 2],
    pub r_inner: f64,
    pub r_outer: f64,
    pub half_angle: f64,
    pub rewards: RewardValues,
    pub state_dim: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            action_low: [-1.0, -1.0],
            action_high: [1.0, 1.0],
            r_inner: 0.12,
            r_outer: 0.22,
            half_angle: 100f64.to_radians(),
            rewards: RewardValues::default(),
            state_dim: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrescentWorld {
    crescents: Vec<Crescent>,
    action_low: [f64; 2],
    action_high: [f64; 2],
    fixed_state: Vec<f64>,
    rewards: RewardValues,
}

/// Positions in layout order: top-left, top-right, middle-left, middle-right,
/// bottom-left, bottom-right.
const LAYOUT: [(&str, [f64; 2], RewardLevel); 6] = [
    ("top-left", [-0.5, 0.55], RewardLevel::Max),
    ("top-right", [0.5, 0.55], RewardLevel::Moderate),
    ("middle-left", [-0.55, 0.0], RewardLevel::Mid),
    ("middle-right", [0.55, 0.0], RewardLevel::Mid),
    ("bottom-left", [-0.5, -0.55], RewardLevel::Moderate),
    ("bottom-right", [0.5, -0.55], RewardLevel::Max),
];

impl Default for CrescentWorld {
    fn default() -> Self {
        Self::new(&WorldConfig::default()).expect("default geometry is valid")
    }
}

impl CrescentWorld {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        let crescents = LAYOUT
            .iter()
            .map(|&(label, center, level)| {
                let norm = (center[0] * center[0] + center[1] * center[1]).sqrt();
                Crescent {
                    label: label.to_string(),
                    center,
                    r_inner: cfg.r_inner,
                    r_outer: cfg.r_outer,
                    opening_dir: [-center[0] / norm, -center[1] / norm],
                    half_angle: cfg.half_angle,
                    level,
                }
            })
            .collect();
        Self::from_crescents(crescents, cfg.action_low, cfg.action_high, vec![0.0; cfg.state_dim], cfg.rewards)
    }

    pub fn from_crescents(
        crescents: Vec<Crescent>,
        action_low: [f64; 2],
        action_high: [f64; 2],
        fixed_state: Vec<f64>,
        rewards: RewardValues,
    ) -> Result<Self> {
        if crescents.len() != 6 {
            return Err(Error::Domain(format!("expected 6 crescents, got {}", crescents.len())));
        }
        for c in &crescents {
            if !(c.r_inner > 0.0 && c.r_inner < c.r_outer) {
                return Err(Error::Domain(format!("{}: need 0 < r_inner < r_outer", c.label)));
            }
            let n = (c.opening_dir[0].powi(2) + c.opening_dir[1].powi(2)).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("{}: opening_dir is not a unit vector", c.label)));
            }
            if !(c.half_angle > 0.0 && c.half_angle < PI) {
                return Err(Error::Domain(format!("{}: half_angle outside (0, pi)", c.label)));
            }
        }
        for level in [RewardLevel::Moderate, RewardLevel::Mid, RewardLevel::Max] {
            if crescents.iter().filter(|c| c.level == level).count() != 2 {
                return Err(Error::Domain(format!("exactly two crescents must be {}", level.name())));
            }
        }
        let world = Self {
            crescents,
            action_low,
            action_high,
            fixed_state,
            rewards,
        };
        world.check_disjoint(100_000)?;
        Ok(world)
    }

    fn check_disjoint(&self, samples: usize) -> Result<()> {
        let mut rng = crate::rng::stream(0, "world-disjointness");
        for _ in 0..samples {
            let a = self.uniform_action(&mut rng);
            if self.crescents.iter().filter(|c| c.contains(&a)).count() > 1 {
                return Err(Error::Domain(format!("crescents overlap at {a:?}")));
            }
        }
        Ok(())
    }

    pub fn crescents(&self) -> &[Crescent] {
        &self.crescents
    }

    pub fn action_low(&self) -> [f64; 2] {
        self.action_low
    }

    pub fn action_high(&self) -> [f64; 2] {
        self.action_high
    }

    pub fn fixed_state(&self) -> &[f64] {
        &self.fixed_state
    }

    pub fn state_dim(&self) -> usize {
        self.fixed_state.len()
    }

    pub fn rewards(&self) -> RewardValues {
        self.rewards
    }

    /// Indices of the two maximum-reward crescents, which the offline data omits.
    pub fn excluded_pair(&self) -> [usize; 2] {
        let v: Vec<usize> = (0..6).filter(|&i| self.crescents[i].level == RewardLevel::Max).collect();
        [v[0], v[1]]
    }

    pub fn dataset_crescents(&self) -> Vec<usize> {
        (0..6).filter(|&i| self.crescents[i].level != RewardLevel::Max).collect()
    }

    pub fn in_bounds(&self, a: &[f64]) -> bool {
        a.len() == 2 && (0..2).all(|i| a[i] >= self.action_low[i] && a[i] <= self.action_high[i])
    }

    pub fn clip(&self, a: &mut [f64]) {
        for i in 0..2 {
            a[i] = a[i].clamp(self.action_low[i], self.action_high[i]);
        }
    }

    /// Index of the crescent containing `a`, if any.
    pub fn crescent_at(&self, a: &[f64]) -> Option<usize> {
        self.crescents.iter().position(|c| c.contains(a))
    }

    pub fn reward(&self, a: &[f64]) -> Result<f64> {
        if !self.in_bounds(a) {
            return Err(Error::Domain(format!("action {a:?} outside the action box")));
        }
        Ok(self.reward_unchecked(a))
    }

    pub(crate) fn reward_unchecked(&self, a: &[f64]) -> f64 {
        self.crescent_at(a)
            .map_or(0.0, |i| self.rewards.of(self.crescents[i].level))
    }

    /// One-step episode; the caller clips `a` into the box.
    pub fn step(&self, a: &[f64]) -> Result<StepOutcome> {
        Ok(StepOutcome {
            reward: self.reward(a)?,
            next_state: self.fixed_state.clone(),
            done: true,
        })
    }

    pub fn uniform_action<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [
            rng.gen_range(self.action_low[0]..self.action_high[0]),
            rng.gen_range(self.action_low[1]..self.action_high[1]),
        ]
    }

    fn transition(&self, a: [f64; 2]) -> Transition {
        Transition {
            state: self.fixed_state.clone(),
            action: a,
            reward: self.reward_unchecked(&a),
            next_state: self.fixed_state.clone(),
            done: true,
        }
    }

    /// Offline data: `per_crescent` uniform points inside each non-excluded
    /// crescent, then `background` uniform points outside every crescent.
    pub fn generate_dataset(&self, per_crescent: usize, background: usize, rng: &mut StreamRng) -> Vec<Transition> {
        let mut out = Vec::with_capacity(per_crescent * 4 + background);
        for idx in self.dataset_crescents() {
            let c = &self.crescents[idx];
            let (lo, hi) = c.bounding_box();
            let mut n = 0;
            while n < per_crescent {
                let a = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
                if c.contains(&a) && self.in_bounds(&a) {
                    out.push(self.transition(a));
                    n += 1;
                }
            }
        }
        let mut n = 0;
        while n < background {
            let a = self.uniform_action(rng);
            if self.crescent_at(&a).is_none() {
                out.push(self.transition(a));
                n += 1;
            }
        }
        out
    }

    /// Fraction of the six crescents that receive at least `threshold` of `actions`.
    pub fn mode_coverage(&self, actions: &[[f64; 2]], threshold: f64) -> ModeCoverage {
        let mut counts = [0usize; 6];
        for a in actions {
            if let Some(i) = self.crescent_at(a) {
                counts[i] += 1;
            }
        }
        let n = actions.len().max(1) as f64;
        let covered: Vec<bool> = counts.iter().map(|&c| c as f64 / n >= threshold).collect();
        let excluded = self.excluded_pair();
        ModeCoverage {
            fractions: counts.map(|c| c as f64 / n),
            covered_total: covered.iter().filter(|&&c| c).count(),
            covered_excluded: excluded.iter().filter(|&&i| covered[i]).count(),
            excluded_mass: excluded.iter().map(|&i| counts[i] as f64 / n).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoverage {
    /// Share of actions inside each crescent, in layout order.
    pub fractions: [f64; 6],
    pub covered_total: usize,
    /// How many of the two withheld maximum-reward crescents are covered.
    pub covered_excluded: usize,
    pub excluded_mass: f64,
}

impl ModeCoverage {
    pub fn fraction(&self) -> f64 {
        self.covered_total as f64 / 6.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

const DATASET_HEADER: &str = "gsflow-dataset v1";

fn fmt_f64(buf: &mut String, v: f64) {
    write!(buf, "{v:.16e}").unwrap();
}

pub fn write_dataset<W: Write>(mut w: W, data: &[Transition]) -> Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    let mut line = String::new();
    for t in data {
        line.clear();
        let fields = t
            .state
            .iter()
            .chain(&t.action)
            .chain(std::iter::once(&t.reward))
            .chain(&t.next_state);
        for v in fields {
            fmt_f64(&mut line, *v);
            line.push_str(", ");
        }
        line.push_str(if t.done { "1" } else { "0" });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<Transition>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == DATASET_HEADER => {}
        Some(Err(e)) => return Err(e.into()),
        _ => return Err(Error::Format(format!("missing `{DATASET_HEADER}` header"))),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("dataset line {}: {what}", lineno + 2));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 || (fields.len() - 4) % 2 != 0 {
            return Err(bad("wrong field count"));
        }
        let sd = (fields.len() - 4) / 2;
        let nums = fields[..fields.len() - 1]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<Vec<_>>>()?;
        let done = match fields[fields.len() - 1] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("done flag must be 0 or 1")),
        };
        out.push(Transition {
            state: nums[..sd].to_vec(),
            action: [nums[sd], nums[sd + 1]],
            reward: nums[sd + 2],
            next_state: nums[sd + 3..2 * sd + 3].to_vec(),
            done,
        });
    }
    Ok(out)
}

/// Fixed-capacity ring of transitions; inserting past capacity overwrites the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            storage: Vec::new(),
            next: 0,
        }
    }

    pub fn from_transitions(capacity: usize, data: Vec<Transition>) -> Self {
        let mut b = Self::new(capacity);
        for t in data {
            b.push(t);
        }
        b
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.storage[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// Slot that the next insertion overwrites once full.
    pub fn cursor(&self) -> usize {
        self.next
    }

    pub(crate) fn from_parts(capacity: usize, storage: Vec<Transition>, next: usize) -> Result<Self> {
        if storage.len() > capacity || next >= capacity {
            return Err(Error::Format("replay buffer state out of range".into()));
        }
        Ok(Self { capacity, storage, next })
    }

    fn sample_into<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<Transition>) {
        for _ in 0..n {
            out.push(self.storage[rng.gen_range(0..self.storage.len())].clone());
        }
    }
}

/// Draws a training batch. Balanced mode takes the ceiling half from `offline`
/// and the floor half from `online`, falling back to whichever buffer is
/// non-empty; otherwise draws uniformly over both buffers.
pub fn sample_batch<R: Rng + ?Sized>(
    offline: &ReplayBuffer,
    online: &ReplayBuffer,
    batch: usize,
    balanced: bool,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    if offline.is_empty() && online.is_empty() {
        return Err(Error::State("cannot sample from two empty buffers".into()));
    }
    let mut out = Vec::with_capacity(batch);
    if offline.is_empty() {
        online.sample_into(batch, rng, &mut out);
    } else if online.is_empty() {
        offline.sample_into(batch, rng, &mut out);
    } else if balanced {
        let n_off = batch.div_ceil(2);
        offline.sample_into(n_off, rng, &mut out);
        online.sample_into(batch - n_off, rng, &mut out);
    } else {
        let total = offline.len() + online.len();
        for _ in 0..batch {
            let i = rng.gen_range(0..total);
            let t = if i < offline.len() {
                offline.get(i)
            } else {
                online.get(i - offline.len())
            };
            out.push(t.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn world() -> CrescentWorld {
        CrescentWorld::default()
    }

    #[test]
    fn default_geometry_is_valid() {
        let w = world();
        assert_eq!(w.crescents().len(), 6);
        assert_eq!(w.excluded_pair(), [0, 5]);
        for c in w.crescents() {
            let n = (c.opening_dir[0].powi(2) + c.opening_dir[1].powi(2)).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_earns_the_crescent_level() {
        let w = world();
        for c in w.crescents() {
            let r = w.reward(&c.midpoint()).unwrap();
            assert_eq!(r, w.rewards().of(c.level), "{}", c.label);
        }
    }

    #[test]
    fn origin_and_centers_earn_nothing() {
        let w = world();
        assert_eq!(w.reward(&[0.0, 0.0]).unwrap(), 0.0);
        for c in w.crescents() {
            assert_eq!(w.reward(&c.center).unwrap(), 0.0);
        }
    }

    #[test]
    fn out_of_bounds_is_domain_error() {
        assert!(matches!(world().reward(&[1.5, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn step_is_terminal() {
        let w = world();
        let mid = w.crescents()[2].midpoint();
        let out = w.step(&mid).unwrap();
        assert_eq!(out, StepOutcome { reward: 7.0, next_state: vec![0.0, 0.0], done: true });
        let out = w.step(&[0.0, 0.9]).unwrap();
        assert_eq!((out.reward, out.done), (0.0, true));
    }

    #[test]
    fn crescent_shape_is_non_convex() {
        let w = world();
        let c = &w.crescents()[2];
        // two points on the arc near its tips, their midpoint crosses the hole
        let rm = 0.17;
        let base = c.opening_dir[1].atan2(c.opening_dir[0]);
        let p = |ang: f64| [c.center[0] + rm * ang.cos(), c.center[1] + rm * ang.sin()];
        let a = p(base + 1.5);
        let b = p(base - 1.5);
        assert!(c.contains(&a) && c.contains(&b));
        assert!(!c.contains(&[(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]));
    }

    #[test]
    fn empty_dataset() {
        let mut rng = stream(0, "dataset");
        assert!(world().generate_dataset(0, 0, &mut rng).is_empty());
    }

    #[test]
    fn dataset_excludes_the_max_pair() {
        let w = world();
        let mut rng = stream(0, "dataset");
        let data = w.generate_dataset(2500, 2000, &mut rng);
        assert_eq!(data.len(), 12_000);
        let excluded = w.excluded_pair();
        for t in &data {
            for &i in &excluded {
                assert!(!w.crescents()[i].contains(&t.action));
            }
            // independent re-evaluation of the reward from geometry
            let expected = w
                .crescents()
                .iter()
                .find(|c| {
                    let d = ((t.action[0] - c.center[0]).powi(2) + (t.action[1] - c.center[1]).powi(2)).sqrt();
                    let v = [(t.action[0] - c.center[0]) / d, (t.action[1] - c.center[1]) / d];
                    let ang = (v[0] * c.opening_dir[0] + v[1] * c.opening_dir[1]).clamp(-1.0, 1.0).acos();
                    d >= c.r_inner && d <= c.r_outer && ang <= c.half_angle
                })
                .map_or(0.0, |c| w.rewards().of(c.level));
            assert_eq!(t.reward, expected);
            assert!(t.done && t.state == t.next_state);
        }
        let positive = data.iter().filter(|t| t.reward > 0.0).count();
        assert_eq!(positive, 10_000);
    }

    #[test]
    fn reward_partition() {
        let w = world();
        let mut rng = stream(1, "partition");
        let levels = [4.0, 7.0, 10.0];
        for _ in 0..100_000 {
            let a = w.uniform_action(&mut rng);
            let inside = w.crescents().iter().filter(|c| c.contains(&a)).count();
            assert!(inside <= 1);
            let r = w.reward(&a).unwrap();
            assert_eq!(r > 0.0, inside == 1);
            assert!(r == 0.0 || levels.contains(&r));
        }
    }

    #[test]
    fn dataset_is_deterministic_and_round_trips() {
        let w = world();
        let a = w.generate_dataset(50, 20, &mut stream(3, "dataset"));
        let b = w.generate_dataset(50, 20, &mut stream(3, "dataset"));
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        write_dataset(&mut fa, &a).unwrap();
        write_dataset(&mut fb, &b).unwrap();
        assert_eq!(fa, fb);
        let back = read_dataset(&fa[..]).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn loader_rejects_garbage() {
        assert!(read_dataset(&b"nope\n"[..]).is_err());
        assert!(read_dataset(&b"gsflow-dataset v1\n1, 2, x, 4, 5\n"[..]).is_err());
    }

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let w = world();
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            let mut t = w.transition([0.0, 0.0]);
            t.reward = k as f64;
            buf.push(t);
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    fn tagged_buffer(n: usize, tag: f64) -> ReplayBuffer {
        let w = world();
        let mut b = ReplayBuffer::new(1000);
        for k in 0..n {
            let mut t = w.transition([0.0, 0.0]);
            t.reward = tag + k as f64;
            b.push(t);
        }
        b
    }

    #[test]
    fn balanced_sampling_splits_and_falls_back() {
        let off = tagged_buffer(10, 0.0);
        let on = tagged_buffer(10, 1000.0);
        let empty = ReplayBuffer::new(10);
        let mut rng = stream(0, "batch");
        let b = sample_batch(&off, &on, 256, true, &mut rng).unwrap();
        assert_eq!(b.iter().filter(|t| t.reward < 1000.0).count(), 128);
        let b = sample_batch(&off, &on, 5, true, &mut rng).unwrap();
        assert_eq!(b.iter().filter(|t| t.reward < 1000.0).count(), 3);
        let b = sample_batch(&off, &empty, 64, true, &mut rng).unwrap();
        assert!(b.iter().all(|t| t.reward < 1000.0));
        assert!(matches!(sample_batch(&empty, &empty, 4, true, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn unbalanced_sampling_is_uniform_over_union() {
        let off = tagged_buffer(7, 0.0);
        let on = tagged_buffer(3, 1000.0);
        let mut rng = stream(0, "batch");
        let draws = 10_000;
        let mut counts = std::collections::HashMap::new();
        for t in sample_batch(&off, &on, draws, false, &mut rng).unwrap() {
            *counts.entry(t.reward as i64).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        let p = 0.1;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (_, &c) in &counts {
            assert!((c as f64 - draws as f64 * p).abs() < 4.0 * sd);
        }
    }
}
