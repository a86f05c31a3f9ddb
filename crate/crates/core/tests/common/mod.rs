//! Independent reference implementations used as test oracles. None of
//! these share code with the library.
#![allow(dead_code)]

use std::cmp::Ordering;

/// Minimax-linkage agglomeration by exhaustive rescanning: every step tries
/// every pair of active clusters and every candidate prototype.
/// Returns `(left, right, height, prototype)` per merge.
pub fn brute_minimax(d: &[Vec<f64>]) -> Vec<(usize, usize, f64, usize)> {
    brute_minimax_ties(d).0
}

/// As [`brute_minimax`], also reporting whether any step had more than one
/// pair at the minimal radius.
pub fn brute_minimax_ties(d: &[Vec<f64>]) -> (Vec<(usize, usize, f64, usize)>, bool) {
    let n = d.len();
    let mut tied = false;
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize, usize)> = None;
        let mut at_min = 0;
        for a in 0..active.len() {
            for b in (a + 1)..active.len() {
                let union: Vec<usize> = active[a].1.iter().chain(&active[b].1).copied().collect();
                let mut r = f64::INFINITY;
                let mut proto = usize::MAX;
                for &x in &union {
                    let m = union.iter().map(|&y| d[x][y]).fold(0.0, f64::max);
                    if m < r || (m == r && x < proto) {
                        r = m;
                        proto = x;
                    }
                }
                let ma = *active[a].1.iter().min().unwrap();
                let mb = *active[b].1.iter().min().unwrap();
                let key = (r, ma.min(mb), ma.max(mb), a, b, proto);
                let better = match &best {
                    None => {
                        at_min = 1;
                        true
                    }
                    Some(bk) => match key.0.total_cmp(&bk.0) {
                        Ordering::Less => {
                            at_min = 1;
                            true
                        }
                        Ordering::Greater => false,
                        Ordering::Equal => {
                            at_min += 1;
                            (key.1, key.2) < (bk.1, bk.2)
                        }
                    },
                };
                if better {
                    best = Some(key);
                }
            }
        }
        tied |= at_min > 1;
        let (h, _, _, a, b, proto) = best.unwrap();
        let ma = *active[a].1.iter().min().unwrap();
        let mb = *active[b].1.iter().min().unwrap();
        let (l, r) = if ma < mb { (a, b) } else { (b, a) };
        merges.push((active[l].0, active[r].0, h, proto));
        let mut members = active[a].1.clone();
        members.extend(&active[b].1);
        let (hi, lo) = (a.max(b), a.min(b));
        active.remove(hi);
        active.remove(lo);
        active.push((n + step, members));
    }
    (merges, tied)
}

/// Step-up adjusted p-values by scanning candidate levels: the adjusted
/// value of a hypothesis is the smallest level `alpha` at which the step-up
/// rule "reject the k smallest, k = max{k : p_(k) <= k alpha / (m c)}"
/// rejects it, capped at 1. The rule is evaluated as `m c p_(k) / k <= alpha`
/// so that each candidate level rejects its own hypothesis exactly.
pub fn brute_step_up(p: &[f64], c: f64) -> Vec<f64> {
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let level = |k: usize| m as f64 * c * sorted[k - 1] / k as f64;
    let mut levels: Vec<f64> = (1..=m).map(level).collect();
    levels.push(1.0);
    levels.sort_by(|a, b| a.total_cmp(b));
    let mut q = vec![1.0; m];
    for &alpha in &levels {
        if alpha > 1.0 {
            break;
        }
        let kmax = (1..=m).filter(|&k| level(k) <= alpha).max();
        if let Some(k) = kmax {
            let cutoff = sorted[k - 1];
            for i in 0..m {
                if p[i] <= cutoff && alpha < q[i] {
                    q[i] = alpha;
                }
            }
        }
    }
    q
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Inverse of a small dense matrix, column by column.
pub fn gauss_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| gauss_solve(a.to_vec(), (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Plain OLS with intercept via the normal equations.
/// Returns (coefficients with intercept first, standard errors, df).
pub fn normal_equations_ols(y: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, usize) {
    let n = y.len();
    let k = x[0].len() + 1;
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(x[i].iter().copied()).collect() };
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for i in 0..n {
        let r = row(i);
        for a in 0..k {
            xty[a] += r[a] * y[i];
            for b in 0..k {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let beta = gauss_solve(xtx.clone(), xty);
    let rss: f64 = (0..n)
        .map(|i| {
            let f: f64 = row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            (y[i] - f).powi(2)
        })
        .sum();
    let df = n - k;
    let s2 = rss / df as f64;
    let inv = gauss_inverse(&xtx);
    let se = (0..k).map(|j| (s2 * inv[j][j]).sqrt()).collect();
    (beta, se, df)
}

/// `ln Γ(x)` by the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Student-t CDF by quadrature of the density from 0.
pub fn t_cdf_quad(t: f64, df: f64) -> f64 {
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let dens = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let half = simpson(dens, 0.0, t.abs(), 20_000);
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// F CDF by quadrature of the density after substituting `x = u²`, which
/// removes the singularity at 0 when `d1 = 1`.
pub fn f_cdf_quad(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lb = ln_gamma(d1 / 2.0) + ln_gamma(d2 / 2.0) - ln_gamma((d1 + d2) / 2.0);
    // 2u f(u²) = 2 (d1/d2)^{d1/2} u^{d1-1} (1 + d1 u²/d2)^{-(d1+d2)/2} / B
    let g = |u: f64| -> f64 {
        let pw = if d1 == 1.0 { 0.0 } else { (d1 - 1.0) * u.ln() };
        (2f64.ln() + 0.5 * d1 * (d1 / d2).ln() + pw - 0.5 * (d1 + d2) * (1.0 + d1 * u * u / d2).ln() - lb).exp()
    };
    simpson(g, 0.0, x.sqrt(), 20_000)
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Pearson correlation over pairs where both are finite.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).collect();
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sab: f64 = pairs.iter().map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = pairs.iter().map(|(x, _)| (x - ma).powi(2)).sum();
    let sbb: f64 = pairs.iter().map(|(_, y)| (y - mb).powi(2)).sum();
    sab / (saa * sbb).sqrt()
}
