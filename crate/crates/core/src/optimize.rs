//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! A small projected L-BFGS: the two-loop recursion runs over the free
//! coordinates only (those not pinned at a bound by the gradient), and a
//! backtracking Armijo search walks along the projected path
//! `P(x + a d)`.

use std::collections::VecDeque;

/// What the minimizer needs from a problem. Returning `None` marks a point as
/// infeasible (non-finite objective); the line search then backs off.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Option<f64>;
    fn gradient(&mut self, x: &[f64]) -> Option<Vec<f64>>;

    fn value_gradient(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        Some((self.value(x)?, self.gradient(x)?))
    }

    /// When true the line search asks for gradients at every trial point,
    /// so an accepted step needs no further work.
    fn gradient_is_cheap(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the relative objective decrease accumulated over the last
    /// `f_window` iterations falls below this.
    pub f_tolerance: f64,
    pub f_window: usize,
    /// Converged when the projected gradient's largest entry falls below this.
    pub g_tolerance: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            f_tolerance: 1e-6,
            f_window: 10,
            g_tolerance: 1e-3,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    ObjectiveChange,
    MaxIterations,
    LineSearch,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub projected_gradient: f64,
    pub termination: Termination,
}

/// Largest entry of the projected gradient `x − P(x − g)`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| (xi - (xi - gi).clamp(l, h)).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `obj` over the box `[lo, hi]` starting from `x0` (clamped).
pub fn minimize<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &LbfgsOptions,
) -> LbfgsResult {
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n, "bound length mismatch");
    let mut x: Vec<f64> = x0.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();

    let infeasible = |x: Vec<f64>| LbfgsResult {
        x,
        f: f64::INFINITY,
        f_initial: f64::INFINITY,
        iterations: 0,
        projected_gradient: f64::INFINITY,
        termination: Termination::Infeasible,
    };
    let Some((mut f, mut g)) = obj.value_gradient(&x) else {
        return infeasible(x);
    };
    let cheap = obj.gradient_is_cheap();
    let f_initial = f;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(opts.f_window + 1);
    recent.push_back(f);
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < opts.max_iterations {
        let pg = projected_gradient_norm(&x, &g, lo, hi);
        if pg <= opts.g_tolerance {
            termination = Termination::Gradient;
            break;
        }
        // Coordinates held at a bound by the gradient stay put.
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(&a, &f)| if f { a } else { 0.0 }).collect() };

        let mut d = two_loop(&mask(&g), &memory, &mask);
        d.iter_mut().for_each(|v| *v = -*v);
        if dot(&d, &g) >= 0.0 {
            memory.clear();
            d = mask(&g).iter().map(|v| -v).collect();
        }

        let mut step = if memory.is_empty() {
            // First step: move each free coordinate by at most one unit.
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 1.0 { 1.0 / dmax } else { 1.0 }
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = (0..n).map(|i| (x[i] + step * d[i]).clamp(lo[i], hi[i])).collect();
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            let eval = if cheap {
                obj.value_gradient(&trial).map(|(v, g)| (v, Some(g)))
            } else {
                obj.value(&trial).map(|v| (v, None))
            };
            if let Some((ft, gt)) = eval {
                if ft <= f + 1e-4 * decrease && decrease < 0.0 {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_trial)) = accepted else {
            if !memory.is_empty() {
                // Retry once from steepest descent before giving up.
                memory.clear();
                continue;
            }
            termination = Termination::LineSearch;
            break;
        };
        let Some(g_new) = g_trial.or_else(|| obj.gradient(&x_new)) else {
            termination = Termination::Infeasible;
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        x = x_new;
        f = f_new;
        g = g_new;
        recent.push_back(f);
        if recent.len() > opts.f_window.max(1) {
            let old = recent.pop_front().unwrap_or(f);
            if (old - f).abs() / old.abs().max(f.abs()).max(1.0) < opts.f_tolerance {
                termination = Termination::ObjectiveChange;
                break;
            }
        }
    }
    let projected_gradient = projected_gradient_norm(&x, &g, lo, hi);
    if projected_gradient <= opts.g_tolerance {
        termination = Termination::Gradient;
    }
    LbfgsResult {
        x,
        f,
        f_initial,
        iterations,
        projected_gradient,
        termination,
    }
}

fn two_loop(
    g: &[f64],
    memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    mask: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let s = mask(s);
        let y = mask(y);
        let a = rho * dot(&s, &q);
        q.iter_mut().zip(&y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let yy = dot(y, y);
        if yy > 0.0 {
            let gamma = dot(s, y) / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let s = mask(s);
        let y = mask(y);
        let b = rho * dot(&y, &q);
        q.iter_mut().zip(&s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    mask(&q)
}
