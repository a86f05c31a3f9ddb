//! Cyclic coordinate-descent LASSO, warm-started regularization paths and
//! the support-size rule for choosing the penalty.
//!
//! The objective is `(1/2n) ||y - X b||² + lambda ||b||_1`. The solver works
//! with the Gram matrix `X'X / n` and keeps the gradient `X'(y - X b) / n`
//! up to date, so a coordinate update costs `O(p)` only when the coefficient
//! actually moves.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-8,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Indices of the nonzero coefficients, ascending.
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    /// Strictly decreasing penalties; the first is `lambda_max`.
    pub lambdas: Vec<f64>,
    pub fits: Vec<LassoFit>,
}

/// Penalty-selection rule: the smallest grid penalty whose fit keeps at
/// most `s_max` nonzero coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportRule {
    pub s_max: usize,
    pub grid_size: usize,
    /// Smallest grid point as a fraction of `lambda_max`.
    pub grid_floor: f64,
}

impl Default for SupportRule {
    fn default() -> Self {
        SupportRule {
            s_max: 20,
            grid_size: 100,
            grid_floor: 1e-3,
        }
    }
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `(1/2n) ||y - X beta||² + lambda ||beta||_1`, evaluated directly.
pub fn lasso_objective(x: ArrayView2<f64>, y: ArrayView1<f64>, beta: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let b = ArrayView1::from(beta);
    let r = &y - &x.dot(&b);
    r.dot(&r) / (2.0 * n) + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Smallest penalty with an all-zero solution: `||X'y||_inf / n`.
pub fn lambda_max(x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.nrows() as f64;
    x.t().dot(&y).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / n
}

/// `size` penalties spaced geometrically from `lambda_max` down to
/// `floor * lambda_max`.
pub fn geometric_grid(lambda_max: f64, size: usize, floor: f64) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..size)
            .map(|k| lambda_max * floor.powf(k as f64 / (size - 1) as f64))
            .collect(),
    }
}

struct Problem {
    p: usize,
    /// `X'X / n`, row-major.
    gram: Vec<f64>,
    /// `X'y / n`.
    xty: Vec<f64>,
}

impl Problem {
    fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n {
            return Err(Error::domain(format!("lasso: response has {} entries, design {n} rows", y.len())));
        }
        if n == 0 {
            return Err(Error::InsufficientData { needed: 0, got: 0 });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("lasso: non-finite input"));
        }
        let nf = n as f64;
        let gram: Array2<f64> = x.t().dot(&x) / nf;
        let xty = x.t().dot(&y) / nf;
        Ok(Problem {
            p,
            gram: gram.into_raw_vec_and_offset().0,
            xty: xty.to_vec(),
        })
    }

    #[inline]
    fn g(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.p + j]
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.p)
            .map(|j| {
                let row = &self.gram[j * self.p..(j + 1) * self.p];
                self.xty[j] - row.iter().zip(beta).map(|(g, b)| g * b).sum::<f64>()
            })
            .collect()
    }

    /// One pass over `coords`; returns the largest absolute change.
    fn sweep(&self, coords: impl Iterator<Item = usize>, lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> f64 {
        let mut max_change: f64 = 0.0;
        for j in coords {
            let gjj = self.g(j, j);
            if gjj <= 0.0 {
                continue;
            }
            let z = grad[j] + gjj * beta[j];
            let new = soft_threshold(z, lambda) / gjj;
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                let col = &self.gram[j * self.p..(j + 1) * self.p];
                for (g, gk) in grad.iter_mut().zip(col) {
                    *g -= gk * delta;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Coordinate descent from `beta`. Alternates full sweeps with sweeps
    /// over the current nonzero set until a full sweep moves nothing by
    /// more than `tol`. `on_sweep` sees the iterate after every sweep.
    fn solve(
        &self,
        lambda: f64,
        beta: &mut [f64],
        opts: &LassoOptions,
        mut on_sweep: impl FnMut(&[f64]),
    ) -> (usize, bool) {
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let mut grad = self.gradient(beta);
            let change = self.sweep(0..self.p, lambda, beta, &mut grad);
            iterations += 1;
            on_sweep(beta);
            if change < opts.tol {
                return (iterations, true);
            }
            loop {
                if iterations >= opts.max_iter {
                    return (iterations, false);
                }
                let active: Vec<usize> = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
                let change = self.sweep(active.into_iter(), lambda, beta, &mut grad);
                iterations += 1;
                on_sweep(beta);
                if change < opts.tol {
                    break;
                }
            }
        }
        (iterations, false)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("lambda must be finite and >= 0, got {lambda}")))
    }
}

fn make_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64, beta: Vec<f64>, iterations: usize, converged: bool) -> LassoFit {
    let x_mean = x.mean_axis(Axis(0)).expect("nonempty design");
    let intercept = y.mean().unwrap_or(0.0) - x_mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    let support = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    LassoFit {
        lambda,
        beta,
        intercept,
        support,
        iterations,
        converged,
    }
}

/// Solves the LASSO at a single penalty from a zero start.
///
/// `x` and `y` are expected to be centered; the reported intercept is
/// `mean(y) - mean(x)'beta`, which is zero for centered inputs. Reaching
/// `max_iter` is not an error: the fit comes back with `converged = false`.
pub fn lasso_solve(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let problem = Problem::new(x, y)?;
    let mut beta = vec![0.0; problem.p];
    let (iterations, converged) = problem.solve(lambda, &mut beta, opts, |_| {});
    Ok(make_fit(x, y, lambda, beta, iterations, converged))
}

/// Like [`lasso_solve`], also returning the objective after every sweep
/// (the first entry is the objective at the zero start).
pub fn lasso_solve_traced(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<(LassoFit, Vec<f64>)> {
    check_lambda(lambda)?;
    let problem = Problem::new(x, y)?;
    let mut beta = vec![0.0; problem.p];
    let mut trace = vec![lasso_objective(x, y, &beta, lambda)];
    let (iterations, converged) = problem.solve(lambda, &mut beta, opts, |b| {
        trace.push(lasso_objective(x, y, b, lambda));
    });
    Ok((make_fit(x, y, lambda, beta, iterations, converged), trace))
}

/// Solves along `lambdas` (which must be strictly decreasing), warm-starting
/// each fit from the previous solution.
pub fn lasso_path(x: ArrayView2<f64>, y: ArrayView1<f64>, lambdas: &[f64], opts: &LassoOptions) -> Result<LassoPath> {
    if lambdas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::domain("lasso path penalties must be strictly decreasing"));
    }
    for &l in lambdas {
        check_lambda(l)?;
    }
    let problem = Problem::new(x, y)?;
    let mut beta = vec![0.0; problem.p];
    let mut fits = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (iterations, converged) = problem.solve(lambda, &mut beta, opts, |_| {});
        fits.push(make_fit(x, y, lambda, beta.clone(), iterations, converged));
    }
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        fits,
    })
}

/// Chooses the penalty by the support-size rule.
///
/// Columns are centered and scaled to unit sample standard deviation and `y`
/// is centered; the path runs on a geometric grid from `lambda_max` down to
/// `grid_floor * lambda_max`. The smallest grid penalty whose fit has at
/// most `s_max` nonzeros is returned together with that fit, whose
/// coefficients and intercept are mapped back to the original scale. The
/// returned penalty is on the standardized scale.
///
/// Zero-variance columns are never selected.
pub fn lambda_for_support(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    rule: &SupportRule,
    opts: &LassoOptions,
) -> Result<(f64, LassoFit)> {
    if rule.s_max == 0 {
        return Err(Error::domain("s_max must be at least 1"));
    }
    if rule.grid_size == 0 || !(rule.grid_floor > 0.0 && rule.grid_floor < 1.0) {
        return Err(Error::domain("grid needs size >= 1 and floor in (0, 1)"));
    }
    let (n, p) = x.dim();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 1, got: n });
    }
    let means = x.mean_axis(Axis(0)).expect("n >= 2");
    let sds: Vec<f64> = (0..p)
        .map(|j| {
            let c = x.column(j);
            let ss: f64 = c.iter().map(|v| (v - means[j]).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        })
        .collect();
    let mut xs = x.to_owned();
    for (j, mut col) in xs.axis_iter_mut(Axis(1)).enumerate() {
        if sds[j] > 0.0 {
            col.mapv_inplace(|v| (v - means[j]) / sds[j]);
        } else {
            col.fill(0.0);
        }
    }
    let y_mean = y.mean().expect("n >= 2");
    let yc = y.mapv(|v| v - y_mean);

    let lmax = lambda_max(xs.view(), yc.view());
    let chosen = if lmax > 0.0 && p > 0 {
        let grid = geometric_grid(lmax, rule.grid_size, rule.grid_floor);
        let path = lasso_path(xs.view(), yc.view(), &grid, opts)?;
        let idx = path
            .fits
            .iter()
            .rposition(|f| f.support.len() <= rule.s_max)
            .expect("the fit at lambda_max has empty support");
        path.fits.into_iter().nth(idx).expect("index from rposition")
    } else {
        make_fit(xs.view(), yc.view(), 0.0, vec![0.0; p], 0, true)
    };

    let beta: Vec<f64> = chosen
        .beta
        .iter()
        .zip(&sds)
        .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
        .collect();
    let intercept = y_mean - beta.iter().zip(means.iter()).map(|(b, m)| b * m).sum::<f64>();
    let lambda = chosen.lambda;
    Ok((
        lambda,
        LassoFit {
            lambda,
            beta,
            intercept,
            support: chosen.support,
            iterations: chosen.iterations,
            converged: chosen.converged,
        },
    ))
}
