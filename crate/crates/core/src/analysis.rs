//! Diagnostics over frozen networks: amortization-bound terms, critic bias,
//! best-of-N inference and KDE density grids.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use crate::critic::ValueFn;
use crate::diffcore::Matrix;
use crate::env::CrescentWorld;
use crate::error::{Error, Result};
use crate::qprior::{group_argmax, Cvae};
use crate::rng::{standard_normal, StreamRng};
use crate::teacher::{Candidates, FlowTeacher};
use crate::trainer::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasReport {
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    pub n: usize,
}

/// Bias `min Q(s, a) - r(a)` over given state/action rows.
pub fn bias_of<V: ValueFn + ?Sized>(critic: &V, world: &CrescentWorld, states: &Matrix, actions: &Matrix) -> Result<BiasReport> {
    let n = actions.rows();
    if n == 0 {
        return Err(Error::Domain("bias needs at least one action".into()));
    }
    let q = critic.q_min(states, actions)?;
    let mut sum = 0.0;
    let mut abs = 0.0;
    for (i, qv) in q.iter().enumerate() {
        let d = qv - world.reward(actions.row(i))?;
        sum += d;
        abs += d.abs();
    }
    Ok(BiasReport {
        mean_bias: sum / n as f64,
        mean_abs_bias: abs / n as f64,
        n,
    })
}

/// Draws `n` actions from `sampler` at the environment's state and measures
/// the critic's bias against the true reward.
pub fn q_bias<V, F>(critic: &V, world: &CrescentWorld, mut sampler: F, n: usize) -> Result<BiasReport>
where
    V: ValueFn + ?Sized,
    F: FnMut(&Matrix) -> Result<Matrix>,
{
    if n == 0 {
        return Err(Error::Domain("q_bias needs n >= 1".into()));
    }
    let states = Matrix::row_vector(world.fixed_state()).repeat_rows(n);
    let actions = sampler(&states)?;
    bias_of(critic, world, &states, &actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub j_base: f64,
    pub j_oracle: f64,
    pub delta_select: f64,
    pub eps_vae: f64,
    /// Empirical lower estimate of the Lipschitz constant of `V` over noise.
    pub lipschitz_hat: f64,
    pub j_amortized: f64,
    pub slack: f64,
    /// Pooled Monte-Carlo standard error of `slack`.
    pub slack_se: f64,
    pub n_mc: usize,
    pub n_best: usize,
}

impl BoundReport {
    pub fn gap(&self) -> f64 {
        gap_term(self.lipschitz_hat, self.eps_vae)
    }

    pub fn lower_bound(&self) -> f64 {
        self.j_base + self.delta_select - self.gap()
    }
}

/// Amortization gap `L * sqrt(eps_vae)`.
pub fn gap_term(lipschitz: f64, eps_vae: f64) -> f64 {
    lipschitz * eps_vae.sqrt()
}

/// Number of random noise pairs used for the Lipschitz estimate.
pub const LIPSCHITZ_PAIRS: usize = 10_000;

fn se_of(xs: &[f64]) -> f64 {
    let (_, sd) = mean_std(xs);
    if xs.len() > 1 {
        sd * (xs.len() as f64 / (xs.len() - 1) as f64).sqrt() / (xs.len() as f64).sqrt()
    } else {
        0.0
    }
}

/// `V(x) = min Q(s, teacher(s, x))` for each noise row.
pub fn noise_value<V: ValueFn + ?Sized>(teacher: &FlowTeacher, critic: &V, state: &[f64], x: &Matrix) -> Result<Vec<f64>> {
    let states = Matrix::row_vector(state).repeat_rows(x.rows());
    let a = teacher.euler_sample(&states, x)?;
    critic.q_min(&states, &a)
}

/// Monte-Carlo estimates of the amortization-bound terms at state `state`.
pub fn estimate_bound<V: ValueFn + ?Sized>(
    teacher: &FlowTeacher,
    critic: &V,
    prior: &Cvae,
    state: &[f64],
    n_mc: usize,
    n_best: usize,
    rng: &mut StreamRng,
) -> Result<BoundReport> {
    if n_best == 0 || n_best > n_mc {
        return Err(Error::Domain(format!("need n_mc >= n_best >= 1, got n_mc={n_mc} n_best={n_best}")));
    }
    let d = teacher.action_dim();
    let x = standard_normal(rng, n_mc, d);
    let v = noise_value(teacher, critic, state, &x)?;
    let j_base = v.iter().sum::<f64>() / n_mc as f64;

    let groups = n_mc / n_best;
    let used = groups * n_best;
    let winners = group_argmax(&v[..used], n_best);
    let best: Vec<f64> = winners.iter().enumerate().map(|(g, &j)| v[g * n_best + j]).collect();
    let j_oracle = best.iter().sum::<f64>() / groups as f64;

    let fresh = prior.sample_prior(&Matrix::row_vector(state).repeat_rows(groups), rng)?;
    let eps_vae = winners
        .iter()
        .enumerate()
        .map(|(g, &j)| {
            x.row(g * n_best + j)
                .iter()
                .zip(fresh.row(g))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / groups as f64;

    let xa = standard_normal(rng, LIPSCHITZ_PAIRS, d);
    let xb = standard_normal(rng, LIPSCHITZ_PAIRS, d);
    let va = noise_value(teacher, critic, state, &xa)?;
    let vb = noise_value(teacher, critic, state, &xb)?;
    let mut lipschitz_hat: f64 = 0.0;
    for i in 0..LIPSCHITZ_PAIRS {
        let dist = xa.row(i).iter().zip(xb.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist > 0.0 {
            lipschitz_hat = lipschitz_hat.max((va[i] - vb[i]).abs() / dist);
        }
    }

    let xp = prior.sample_prior(&Matrix::row_vector(state).repeat_rows(n_mc), rng)?;
    let vp = noise_value(teacher, critic, state, &xp)?;
    let j_amortized = vp.iter().sum::<f64>() / n_mc as f64;

    let delta_select = j_oracle - j_base;
    let slack = j_amortized - (j_base + delta_select - gap_term(lipschitz_hat, eps_vae));
    // slack = j_amortized - j_oracle + gap, so the base terms cancel
    let slack_se = (se_of(&vp).powi(2) + se_of(&best).powi(2)).sqrt();
    Ok(BoundReport {
        j_base,
        j_oracle,
        delta_select,
        eps_vae,
        lipschitz_hat,
        j_amortized,
        slack,
        slack_se,
        n_mc,
        n_best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorComparison {
    pub mean_prior: f64,
    pub mean_gaussian: f64,
    /// Standard error of the difference of the two means.
    pub se_diff: f64,
    pub n: usize,
}

impl PriorComparison {
    /// Difference in units of its standard error.
    pub fn z(&self) -> f64 {
        (self.mean_prior - self.mean_gaussian) / self.se_diff
    }
}

/// Mean `V` of teacher actions seeded by decoder samples versus Gaussian noise.
pub fn compare_priors<V: ValueFn + ?Sized>(
    teacher: &FlowTeacher,
    critic: &V,
    prior: &Cvae,
    state: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<PriorComparison> {
    if n < 2 {
        return Err(Error::Domain("prior comparison needs n >= 2".into()));
    }
    let xg = standard_normal(rng, n, teacher.action_dim());
    let xp = prior.sample_prior(&Matrix::row_vector(state).repeat_rows(n), rng)?;
    let vg = noise_value(teacher, critic, state, &xg)?;
    let vp = noise_value(teacher, critic, state, &xp)?;
    Ok(PriorComparison {
        mean_prior: mean_std(&vp).0,
        mean_gaussian: mean_std(&vg).0,
        se_diff: (se_of(&vp).powi(2) + se_of(&vg).powi(2)).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfN {
    pub return_mean: f64,
    pub return_std: f64,
    /// Per episode: the candidates, their values and the chosen index.
    pub episodes: Vec<(Candidates, Vec<f64>, usize)>,
}

/// Per episode, draws `n` Gaussian noises, runs the teacher on each and
/// plays the candidate with the highest critic value.
pub fn best_of_n_eval<V: ValueFn + ?Sized>(
    teacher: &FlowTeacher,
    critic: &V,
    world: &CrescentWorld,
    n: usize,
    episodes: usize,
    rng: &mut StreamRng,
) -> Result<BestOfN> {
    if n == 0 || episodes == 0 {
        return Err(Error::Domain("best-of-n needs n >= 1 and episodes >= 1".into()));
    }
    let s = Matrix::row_vector(world.fixed_state());
    let states = s.repeat_rows(n);
    let mut rewards = Vec::with_capacity(episodes);
    let mut log = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let c = teacher.sample_candidates(&s, n, rng)?;
        let q = critic.q_min(&states, &c.actions)?;
        let j = group_argmax(&q, n)[0];
        rewards.push(world.step(c.actions.row(j))?.reward);
        log.push((c, q, j));
    }
    let (return_mean, return_std) = mean_std(&rewards);
    Ok(BestOfN {
        return_mean,
        return_std,
        episodes: log,
    })
}

/// Isotropic Gaussian KDE on a regular grid of cell centers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeGrid {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub resolution: usize,
    pub bandwidth: f64,
    /// Row-major, `density[iy * resolution + ix]`.
    pub density: Vec<f64>,
}

pub const DEFAULT_KDE_RESOLUTION: usize = 200;

impl KdeGrid {
    pub fn cell_size(&self) -> (f64, f64) {
        let r = self.resolution as f64;
        ((self.x_range[1] - self.x_range[0]) / r, (self.y_range[1] - self.y_range[0]) / r)
    }

    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (self.x_range[0] + (ix as f64 + 0.5) * dx, self.y_range[0] + (iy as f64 + 0.5) * dy)
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.density[iy * self.resolution + ix]
    }

    /// Riemann sum of the density over the grid.
    pub fn integral(&self) -> f64 {
        let (dx, dy) = self.cell_size();
        self.density.iter().sum::<f64>() * dx * dy
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,density")?;
        for iy in 0..self.resolution {
            for ix in 0..self.resolution {
                let (x, y) = self.center(ix, iy);
                writeln!(w, "{x},{y},{}", self.at(ix, iy))?;
            }
        }
        Ok(())
    }
}

/// Silverman's rule for an isotropic 2-D kernel: mean axis std times `n^(-1/6)`.
pub fn silverman_bandwidth(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let sd = |k: usize| mean_std(&points.iter().map(|p| p[k]).collect::<Vec<_>>()).1;
    (sd(0) + sd(1)) / 2.0 * n.powf(-1.0 / 6.0)
}

/// Density of `points` on a `resolution`² grid over the given extents.
/// `bandwidth = None` picks Silverman's rule; degenerate point sets fall back
/// to one cell width.
pub fn kde_grid(
    points: &[[f64; 2]],
    resolution: usize,
    bandwidth: Option<f64>,
    x_range: [f64; 2],
    y_range: [f64; 2],
) -> Result<KdeGrid> {
    if points.len() < 2 {
        return Err(Error::Domain("kde needs at least two points".into()));
    }
    if resolution == 0 || x_range[0] >= x_range[1] || y_range[0] >= y_range[1] {
        return Err(Error::Domain("kde grid is empty".into()));
    }
    let mut grid = KdeGrid {
        x_range,
        y_range,
        resolution,
        bandwidth: 0.0,
        density: vec![0.0; resolution * resolution],
    };
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Domain(format!("bandwidth {h} must be positive"))),
        None => {
            let h = silverman_bandwidth(points);
            // rounding leaves a tiny nonzero spread for identical points
            if h > 1e-9 {
                h
            } else {
                grid.cell_size().0
            }
        }
    };
    grid.bandwidth = h;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * h * h * points.len() as f64);
    let inv = 1.0 / (2.0 * h * h);
    // separable kernel: per-point factors along each axis
    let xs: Vec<f64> = (0..resolution).map(|i| grid.center(i, 0).0).collect();
    let ys: Vec<f64> = (0..resolution).map(|i| grid.center(0, i).1).collect();
    let mut fx = vec![0.0; resolution];
    let mut fy = vec![0.0; resolution];
    for p in points {
        for (f, x) in fx.iter_mut().zip(&xs) {
            *f = (-(x - p[0]).powi(2) * inv).exp();
        }
        for (f, y) in fy.iter_mut().zip(&ys) {
            *f = (-(y - p[1]).powi(2) * inv).exp();
        }
        for (iy, gy) in fy.iter().enumerate() {
            if *gy == 0.0 {
                continue;
            }
            let row = &mut grid.density[iy * resolution..(iy + 1) * resolution];
            for (d, gx) in row.iter_mut().zip(&fx) {
                *d += gy * gx;
            }
        }
    }
    grid.density.iter_mut().for_each(|d| *d *= norm);
    Ok(grid)
}

/// Uniform random subset of at most `k` rows.
pub fn subsample<T: Clone>(items: &[T], k: usize, rng: &mut StreamRng) -> Vec<T> {
    if items.len() <= k {
        return items.to_vec();
    }
    let mut idx = sample_indices(rng, items.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

pub fn write_json<W: Write, T: Serialize>(w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}
