//! Small unconstrained optimizers: BFGS with backtracking line search,
//! Nelder-Mead, and Brent's scalar minimizer.

/// Result of a minimization run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Absolute tolerance on the max-norm of the gradient.
    pub gtol: f64,
    /// Relative decrease below which an iteration counts as stalled.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            gtol: 1e-12,
            ftol: 1e-15,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Quasi-Newton minimization. `fg(x, grad)` returns the objective and writes
/// the gradient; it may return a non-finite value to reject a point.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    if !f.is_finite() {
        return Minimum {
            x,
            value: f,
            iterations: 0,
            converged: false,
        };
    }
    // inverse Hessian approximation, row-major
    let mut hinv = vec![0.0; n * n];
    let reset = |h: &mut [f64], scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut hinv, 1.0);
    let mut first = true;
    let mut stalls = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut hy = vec![0.0; n];

    for iter in 0..opts.max_iter {
        if max_abs(&g) <= opts.gtol {
            return Minimum {
                x,
                value: f,
                iterations: iter,
                converged: true,
            };
        }
        for i in 0..n {
            dir[i] = -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            // lost descent: restart from steepest descent
            reset(&mut hinv, 1.0);
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = dot(&dir, &g);
            first = true;
        }
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            f_new = fg(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease along a descent direction: at the precision floor
            return Minimum {
                x,
                value: f,
                iterations: iter,
                converged: max_abs(&g) <= 1e-7,
            };
        }
        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if first {
                reset(&mut hinv, sy / dot(&y, &y));
                first = false;
            }
            for i in 0..n {
                hy[i] = (0..n).map(|j| hinv[i * n + j] * y[j]).sum();
            }
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let decrease = f - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        if decrease <= opts.ftol * f.abs().max(1e-300) {
            stalls += 1;
            if stalls >= 5 {
                return Minimum {
                    x,
                    value: f,
                    iterations: iter + 1,
                    converged: max_abs(&g) <= 1e-7,
                };
            }
        } else {
            stalls = 0;
        }
    }
    let converged = max_abs(&g) <= opts.gtol;
    Minimum {
        x,
        value: f,
        iterations: opts.max_iter,
        converged,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub initial_step: f64,
    /// Stop when the spread of simplex values falls below this.
    pub ftol: f64,
    /// and the simplex diameter below this.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            initial_step: 0.5,
            ftol: 1e-16,
            xtol: 1e-10,
        }
    }
}

/// Derivative-free simplex minimization.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |f: &mut F, x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(&mut f, p)).collect();
    let mut order: Vec<usize> = (0..=n).collect();

    for iter in 0..opts.max_iter {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];
        let spread = values[worst] - values[best];
        let diameter = simplex
            .iter()
            .map(|p| p.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= opts.ftol && diameter <= opts.xtol {
            return Minimum {
                x: simplex[best].clone(),
                value: values[best],
                iterations: iter,
                converged: true,
            };
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| order[..n].iter().map(|&i| simplex[i][k]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = toward(-1.0);
        let fr = eval(&mut f, &reflected);
        if fr < values[best] {
            let expanded = toward(-2.0);
            let fe = eval(&mut f, &expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst] = reflected;
            values[worst] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[worst] {
            let c = toward(-0.5);
            let fc = eval(&mut f, &c);
            (c, fc)
        } else {
            let c = toward(0.5);
            let fc = eval(&mut f, &c);
            (c, fc)
        };
        if fc < values[worst].min(fr) {
            simplex[worst] = contracted;
            values[worst] = fc;
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for k in 0..n {
                simplex[i][k] = anchor[k] + 0.5 * (simplex[i][k] - anchor[k]);
            }
            values[i] = eval(&mut f, &simplex[i]);
        }
    }
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    Minimum {
        x: simplex[order[0]].clone(),
        value: values[order[0]],
        iterations: opts.max_iter,
        converged: false,
    }
}

/// Brent's method for a scalar minimum on `[a, b]`.
///
/// Returns `(x_min, f(x_min), evaluations)`.
pub fn brent<F>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64, usize)
where
    F: FnMut(f64) -> f64,
{
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x = lo + GOLDEN * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 1;
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < mid { hi - x } else { lo - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx, evals)
}
