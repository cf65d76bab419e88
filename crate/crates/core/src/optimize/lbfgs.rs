//! Limited-memory quasi-Newton minimization with lower bounds.
//!
//! Search directions come from the usual two-loop recursion restricted to the
//! free variables; steps are projected back onto the box and accepted by a
//! backtracking Armijo test along the projected path.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    /// Stop when the objective improved by less than this fraction over `window` iterations.
    pub rel_tolerance: f64,
    pub window: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iters: 100,
            rel_tolerance: 1e-7,
            window: 5,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

type Memory = VecDeque<(Vec<f64>, Vec<f64>, f64)>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Minimizes `f` subject to `x ≥ lower` (use `-∞` for free coordinates).
///
/// `eval` returns the objective and writes the gradient into its second
/// argument. Non-finite or penalty values simply fail the line search, so the
/// returned objective is never above the starting one.
pub fn minimize<F>(eval: F, x0: Vec<f64>, lower: &[f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let upper = vec![f64::INFINITY; x0.len()];
    minimize_box(eval, x0, lower, &upper, opts)
}

/// [`minimize`] with upper bounds as well.
pub fn minimize_box<F>(mut eval: F, x0: Vec<f64>, lower: &[f64], upper: &[f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for ((v, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.max(l).min(u);
        }
    };
    let mut x = x0;
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g);
    let mut iterations = 0;
    if !f.is_finite() || n == 0 {
        return LbfgsOutcome { x, f, iterations };
    }
    let mut history: VecDeque<f64> = VecDeque::from([f]);
    let mut mem: Memory = VecDeque::new();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    while iterations < opts.max_iters {
        // Variables pinned at a bound with an outward gradient stay fixed.
        let free: Vec<bool> =
            (0..n).map(|i| !(x[i] <= lower[i] && g[i] > 0.0) && !(x[i] >= upper[i] && g[i] < 0.0)).collect();
        let pg = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg == 0.0 || pg * (1.0 + max_abs(&x)) <= 1e-15 * f.abs() {
            break;
        }
        let mut d = two_loop(&g, &free, &mem);
        if !(dot(&d, &g) < 0.0) {
            mem.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        let mut t = if mem.is_empty() {
            // Without curvature information take a small step relative to x.
            let dn = max_abs(&d);
            1e-2 * (1.0 + max_abs(&x)) / dn
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = x[i] + t * d[i];
            }
            project(&mut xt);
            let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if !(decrease < 0.0) {
                t *= 0.5;
                continue;
            }
            let ft = eval(&xt, &mut gt);
            if ft.is_finite() && ft <= f + 1e-4 * decrease {
                accepted = Some(ft);
                break;
            }
            t *= 0.5;
        }
        let Some(ft) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        iterations += 1;
        history.push_back(f);
        if history.len() > opts.window {
            let old = history.pop_front().expect("nonempty");
            if old - f <= opts.rel_tolerance * f.abs() {
                break;
            }
        }
    }
    LbfgsOutcome { x, f, iterations }
}

fn two_loop(g: &[f64], free: &[bool], mem: &Memory) -> Vec<f64> {
    let masked_dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
    };
    let mut q: Vec<f64> = g.iter().zip(free).map(|(v, &f)| if f { *v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * masked_dot(s, &q);
        for ((qi, yi), &f) in q.iter_mut().zip(y).zip(free) {
            if f {
                *qi -= a * yi;
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let yy = masked_dot(y, y);
        let sy = masked_dot(s, y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * masked_dot(y, &q);
        for ((qi, si), &f) in q.iter_mut().zip(s).zip(free) {
            if f {
                *qi += (a - b) * si;
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn respects_upper_bounds() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 5.0);
            (x[0] - 5.0).powi(2)
        };
        let out = minimize_box(f, vec![0.0], &[0.0], &[2.0], &LbfgsOptions::default());
        assert_eq!(out.x, vec![2.0]);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let opts = LbfgsOptions { max_iters: 500, rel_tolerance: 0.0, ..Default::default() };
        let out = minimize(f, vec![-1.2, 1.0], &[f64::NEG_INFINITY; 2], &opts);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5, "{:?}", out);
    }

    #[test]
    fn respects_lower_bounds() {
        // Unconstrained minimum at (-1, 2); bound x ≥ 0 moves it to (0, 2).
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] + 1.0);
            g[1] = 2.0 * (x[1] - 2.0);
            (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2)
        };
        let out = minimize(f, vec![3.0, 3.0], &[0.0, 0.0], &LbfgsOptions::default());
        assert_eq!(out.x[0], 0.0);
        assert!((out.x[1] - 2.0).abs() < 1e-6);
        assert!((out.f - 1.0).abs() < 1e-10);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = x[0].cos();
            x[0].sin()
        };
        for start in [-3.0, 0.0, 1.0, 4.0] {
            let out = minimize(f, vec![start], &[f64::NEG_INFINITY], &LbfgsOptions::default());
            assert!(out.f <= start.sin() + 1e-15);
        }
    }

    #[test]
    fn penalty_region_is_avoided() {
        // Minimum of (x-1)² restricted to x < 0.5 by an infinite penalty.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] >= 0.5 {
                return 1e12;
            }
            g[0] = 2.0 * (x[0] - 1.0);
            (x[0] - 1.0).powi(2)
        };
        let out = minimize(f, vec![0.0], &[f64::NEG_INFINITY], &LbfgsOptions::default());
        assert!(out.x[0] < 0.5 && out.x[0] > 0.4);
    }
}
