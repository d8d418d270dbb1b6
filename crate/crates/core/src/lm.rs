//! Levenberg-Marquardt with multiplicative Marquardt damping.
//!
//! Problems expose their residuals row by row. Each row depends on a sparse
//! subset of the *global* parameters and on at most one *local* parameter,
//! so the local block of the normal equations is diagonal and is eliminated
//! by a Schur complement before the dense solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::LmError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub lambda0: f64,
    pub increase: f64,
    pub decrease: f64,
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below.
    pub cost_tol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub step_tol: f64,
    pub max_rejections: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda0: 1e-3,
            increase: 10.0,
            decrease: 0.1,
            max_iterations: 200,
            cost_tol: 1e-10,
            step_tol: 1e-12,
            max_rejections: 20,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.increase > 1.0 && self.decrease > 0.0 && self.decrease < 1.0 && self.cost_tol > 0.0 && self.step_tol > 0.0 && self.lambda0 > 0.0
        {
            Ok(())
        } else {
            Err(format!("invalid LM configuration {self:?}"))
        }
    }
}

/// Receives one residual with its Jacobian row: sparse global entries and an
/// optional local entry.
pub type RowSink<'a> = dyn FnMut(f64, &[(usize, f64)], Option<(usize, f64)>) + 'a;

pub trait BlockProblem {
    /// Number of global and local parameters; `x` is `[global | local]`.
    fn dims(&self) -> (usize, usize);

    /// Emits every residual at `x`. Jacobian entries may be left empty when
    /// `jacobian` is false.
    fn visit(&self, x: &[f64], jacobian: bool, sink: &mut RowSink<'_>);

    /// Hook run on each accepted iterate (e.g. to renormalize a gauge).
    fn accept(&self, _x: &mut [f64]) {}
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub initial_cost: f64,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost_of(p: &dyn BlockProblem, x: &[f64]) -> f64 {
    let mut c = 0.0;
    p.visit(x, false, &mut |r, _, _| c += r * r);
    c
}

struct Normal {
    a: DMatrix<f64>,
    gg: DVector<f64>,
    b: DMatrix<f64>,
    d: Vec<f64>,
    gl: Vec<f64>,
    cost: f64,
}

fn normal_equations(p: &dyn BlockProblem, x: &[f64]) -> Normal {
    let (ng, nl) = p.dims();
    let mut n = Normal {
        a: DMatrix::zeros(ng, ng),
        gg: DVector::zeros(ng),
        b: DMatrix::zeros(ng, nl),
        d: vec![0.0; nl],
        gl: vec![0.0; nl],
        cost: 0.0,
    };
    p.visit(x, true, &mut |r, g, l| {
        n.cost += r * r;
        for &(i, ji) in g {
            n.gg[i] += ji * r;
            for &(k, jk) in g {
                n.a[(i, k)] += ji * jk;
            }
        }
        if let Some((j, jl)) = l {
            n.d[j] += jl * jl;
            n.gl[j] += jl * r;
            for &(i, ji) in g {
                n.b[(i, j)] += ji * jl;
            }
        }
    });
    n
}

/// Damped Gauss-Newton step from the normal equations.
fn solve_step(n: &Normal, lambda: f64) -> Option<Vec<f64>> {
    let ng = n.gg.len();
    let nl = n.d.len();
    let damp = |v: f64| v + lambda * v.max(1e-12);
    let dinv: Vec<f64> = n.d.iter().map(|&v| 1.0 / damp(v)).collect();
    let mut s = n.a.clone();
    for i in 0..ng {
        s[(i, i)] = damp(n.a[(i, i)]);
    }
    let mut rhs = -n.gg.clone();
    if nl > 0 && ng > 0 {
        let mut bd = n.b.clone();
        for j in 0..nl {
            bd.column_mut(j).scale_mut(dinv[j]);
        }
        s -= &bd * n.b.transpose();
        rhs += &bd * DVector::from_column_slice(&n.gl);
    }
    let dg = if ng == 0 {
        DVector::zeros(0)
    } else {
        match s.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => s.lu().solve(&rhs)?,
        }
    };
    let mut step: Vec<f64> = dg.iter().copied().collect();
    for j in 0..nl {
        let bt: f64 = (0..ng).map(|i| n.b[(i, j)] * dg[i]).sum();
        step.push(-(n.gl[j] + bt) * dinv[j]);
    }
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Minimizes the sum of squared residuals of `p` starting from `x0`.
pub fn minimize(p: &dyn BlockProblem, x0: &[f64], cfg: &LmConfig) -> Result<LmReport, LmError> {
    let mut x = x0.to_vec();
    let mut n = normal_equations(p, &x);
    if !n.cost.is_finite() {
        return Err(LmError::NonFinite);
    }
    let initial_cost = n.cost;
    let mut lambda = cfg.lambda0;
    let mut iterations = 0;
    let mut rejections = 0;
    let mut converged = n.cost == 0.0;
    while !converged && iterations < cfg.max_iterations {
        let Some(step) = solve_step(&n, lambda) else {
            lambda *= cfg.increase;
            rejections += 1;
            if rejections >= cfg.max_rejections {
                return Err(LmError::Diverged { rejections, params: x, cost: n.cost });
            }
            continue;
        };
        let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sn: f64 = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tiny = sn <= cfg.step_tol * (xn + cfg.step_tol);
        let mut cand: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        p.accept(&mut cand);
        let c = cost_of(p, &cand);
        if c.is_finite() && c < n.cost {
            iterations += 1;
            rejections = 0;
            let rel = (n.cost - c) / n.cost;
            x = cand;
            lambda = (lambda * cfg.decrease).max(1e-15);
            n = normal_equations(p, &x);
            converged = rel < cfg.cost_tol || tiny || n.cost == 0.0;
        } else {
            if tiny {
                converged = true;
                break;
            }
            lambda *= cfg.increase;
            rejections += 1;
            if rejections >= cfg.max_rejections {
                return Err(LmError::Diverged { rejections, params: x, cost: n.cost });
            }
        }
    }
    Ok(LmReport { params: x, initial_cost, cost: n.cost, iterations, converged })
}

/// Dense problem with a residual closure and optional analytic Jacobian.
pub struct DenseProblem<F, J> {
    pub n: usize,
    pub residuals: F,
    pub jacobian: Option<J>,
}

impl<F, J> BlockProblem for DenseProblem<F, J>
where
    F: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    fn dims(&self) -> (usize, usize) {
        (self.n, 0)
    }

    fn visit(&self, x: &[f64], jacobian: bool, sink: &mut RowSink<'_>) {
        let r = (self.residuals)(x);
        if !jacobian {
            r.iter().for_each(|&v| sink(v, &[], None));
            return;
        }
        let jm = match &self.jacobian {
            Some(j) => j(x),
            None => forward_difference(&self.residuals, x, &r),
        };
        let mut row = Vec::with_capacity(self.n);
        for (i, &ri) in r.iter().enumerate() {
            row.clear();
            row.extend((0..self.n).map(|k| (k, jm[(i, k)])));
            sink(ri, &row, None);
        }
    }
}

/// Forward-difference Jacobian with step `1e-6 (1 + |x_k|)`.
pub fn forward_difference(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-6 * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let rp = f(&xp);
        for i in 0..r0.len() {
            j[(i, k)] = (rp[i] - r0[i]) / h;
        }
        xp[k] = x[k];
    }
    j
}

/// Least squares on a residual closure with finite-difference Jacobians.
pub fn lm_solve(residual_fn: impl Fn(&[f64]) -> Vec<f64>, initial: &[f64], cfg: &LmConfig) -> Result<LmReport, LmError> {
    let p = DenseProblem { n: initial.len(), residuals: residual_fn, jacobian: None::<fn(&[f64]) -> DMatrix<f64>> };
    minimize(&p, initial, cfg)
}

/// Least squares with an analytic Jacobian closure.
pub fn lm_solve_analytic(
    residual_fn: impl Fn(&[f64]) -> Vec<f64>,
    jacobian_fn: impl Fn(&[f64]) -> DMatrix<f64>,
    initial: &[f64],
    cfg: &LmConfig,
) -> Result<LmReport, LmError> {
    let p = DenseProblem { n: initial.len(), residuals: residual_fn, jacobian: Some(jacobian_fn) };
    minimize(&p, initial, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_in_two_iterations() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let f = |p: &[f64]| xs.iter().zip(&ys).map(|(x, y)| p[0] * x - y).collect::<Vec<_>>();
        let cfg = LmConfig { max_iterations: 2, ..Default::default() };
        let r = lm_solve(f, &[0.0], &cfg).unwrap();
        assert!(r.iterations <= 2);
        assert!((r.params[0] - 2.0).abs() < 1e-6, "{:?}", r.params);
    }

    #[test]
    fn rosenbrock() {
        let f = |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]];
        let j = |p: &[f64]| DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0]);
        let r = lm_solve_analytic(f, j, &[-1.2, 1.0], &LmConfig::default()).unwrap();
        assert!((r.params[0] - 1.0).abs() < 1e-6 && (r.params[1] - 1.0).abs() < 1e-6, "{:?}", r);
        let r = lm_solve(f, &[-1.2, 1.0], &LmConfig::default()).unwrap();
        assert!((r.params[0] - 1.0).abs() < 1e-6 && (r.params[1] - 1.0).abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn zero_residual_start() {
        let r = lm_solve(|p: &[f64]| vec![p[0] - 3.0, p[1]], &[3.0, 0.0], &LmConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.params, vec![3.0, 0.0]);
    }

    /// Global offset `c` shared by all rows plus one local per group:
    /// residuals `c + l_j - y_jk` and a prior `c - 1`.
    struct Grouped {
        y: Vec<Vec<f64>>,
    }

    impl BlockProblem for Grouped {
        fn dims(&self) -> (usize, usize) {
            (1, self.y.len())
        }
        fn visit(&self, x: &[f64], _j: bool, sink: &mut RowSink<'_>) {
            sink(x[0] - 1.0, &[(0, 1.0)], None);
            for (j, ys) in self.y.iter().enumerate() {
                for y in ys {
                    sink(x[0] + x[1 + j] - y, &[(0, 1.0)], Some((j, 1.0)));
                }
            }
        }
    }

    #[test]
    fn schur_matches_dense() {
        let g = Grouped { y: vec![vec![2.0, 2.2], vec![-1.0, -0.6, -0.8], vec![5.0]] };
        let r = minimize(&g, &[0.0; 4], &LmConfig::default()).unwrap();
        // minimizer: c = 1 exactly (the group means absorb everything else)
        let expect = [1.0, 1.1, -1.8, 4.0];
        for (a, b) in r.params.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.params);
        }
        let dense = lm_solve(
            |x: &[f64]| {
                let mut out = Vec::new();
                g.visit(x, false, &mut |r, _, _| out.push(r));
                out
            },
            &[0.0; 4],
            &LmConfig::default(),
        )
        .unwrap();
        for (a, b) in r.params.iter().zip(&dense.params) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cost_is_monotone() {
        use std::cell::RefCell;
        let trace = RefCell::new(Vec::new());
        struct Traced<'a> {
            t: &'a RefCell<Vec<f64>>,
        }
        impl BlockProblem for Traced<'_> {
            fn dims(&self) -> (usize, usize) {
                (2, 0)
            }
            fn visit(&self, p: &[f64], j: bool, sink: &mut RowSink<'_>) {
                let r = [10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]];
                if j {
                    self.t.borrow_mut().push(r[0] * r[0] + r[1] * r[1]);
                }
                sink(r[0], &[(0, -20.0 * p[0]), (1, 10.0)], None);
                sink(r[1], &[(0, -1.0)], None);
            }
        }
        minimize(&Traced { t: &trace }, &[-1.2, 1.0], &LmConfig::default()).unwrap();
        let t = trace.into_inner();
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
    }
}
