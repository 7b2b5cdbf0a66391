//! Local minimization for small dense problems (≤ 6 variables).
//!
//! The cost surfaces here are sums of norms and absolute values: smooth
//! almost everywhere with conical kinks at exact constraint satisfaction.
//! A quasi-Newton descent with central finite differences makes fast progress
//! on the smooth bulk; a Nelder-Mead polish then grinds into the kink, where
//! finite-difference gradients stop being informative.

pub struct MinimizeOptions {
    pub max_iterations: usize,
    pub fd_step: f64,
    /// Per-variable simplex scales for the polish phases.
    pub polish_scales: Vec<f64>,
}

impl MinimizeOptions {
    pub fn new(n: usize, max_iterations: usize, fd_step: f64) -> Self {
        Self {
            max_iterations,
            fd_step,
            polish_scales: vec![1e-2; n],
        }
    }
}

fn gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut probe = x.to_vec();
    for i in 0..n {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// BFGS with Armijo backtracking. Returns the best point found; never worse
/// than the start.
fn bfgs(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], opts: &MinimizeOptions) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, fx);
    }
    // Inverse Hessian approximation, row-major.
    let mut h_inv = identity(n);
    let mut g = gradient(f, &x, opts.fd_step);

    for _ in 0..opts.max_iterations {
        let gnorm = norm(&g);
        if gnorm < 1e-10 {
            break;
        }
        let mut dir = neg_matvec(&h_inv, &g, n);
        if dot(&dir, &g) >= 0.0 {
            h_inv = identity(n);
            dir = g.iter().map(|v| -v).collect();
        }
        // Armijo backtracking.
        let slope = dot(&dir, &g);
        let mut t = 1.0;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + t * dir[i];
            }
            let cand = f(&x_new);
            if cand.is_finite() && cand <= fx + 1e-4 * t * slope {
                f_new = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let g_new = gradient(f, &x_new, opts.fd_step);
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            bfgs_update(&mut h_inv, &s, &y, sy, n);
        } else {
            h_inv = identity(n);
        }
        if norm(&s) < 1e-12 {
            x = x_new;
            fx = f_new;
            break;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    (x, fx)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn neg_matvec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| -(0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>()).collect()
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    // H ← (I − s yᵀ/sy) H (I − y sᵀ/sy) + s sᵀ/sy
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j]
                - rho * (s[i] * hy[j] + hy[i] * s[j]);
        }
    }
}

/// Nelder-Mead with per-variable initial scales, restarted around the best
/// point. Handles the conical minima the gradient phase cannot finish.
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    scales: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scales[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

    while evals < max_evals {
        // Order ascending by value.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let diameter: f64 = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|v| v[i])
                    .fold((f64::MAX, f64::MIN), |(lo, hi), x| (lo.min(x), hi.max(x)))
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        if diameter < 1e-12 {
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for (idx, v) in simplex.iter().enumerate() {
            if idx != worst {
                for i in 0..n {
                    centroid[i] += v[i] / n as f64;
                }
            }
        }

        let reflect: Vec<f64> = (0..n).map(|i| centroid[i] + (centroid[i] - simplex[worst][i])).collect();
        let f_reflect = eval(&reflect, &mut evals);

        if f_reflect < values[best] {
            let expand: Vec<f64> = (0..n).map(|i| centroid[i] + 2.0 * (centroid[i] - simplex[worst][i])).collect();
            let f_expand = eval(&expand, &mut evals);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                values[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_reflect;
            }
        } else if f_reflect < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..n).map(|i| centroid[i] + 0.5 * (simplex[worst][i] - centroid[i])).collect();
            let f_contract = eval(&contract, &mut evals);
            if f_contract < values[worst] {
                simplex[worst] = contract;
                values[worst] = f_contract;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for idx in 0..=n {
                    if idx == best {
                        continue;
                    }
                    for i in 0..n {
                        simplex[idx][i] = best_point[i] + 0.5 * (simplex[idx][i] - best_point[i]);
                    }
                    values[idx] = eval(&simplex[idx], &mut evals);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

/// Full local minimization: descent, then two shrinking polish phases.
/// The result never exceeds f(x0).
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], opts: &MinimizeOptions) -> (Vec<f64>, f64) {
    let f0 = f(x0);
    let (x1, f1) = bfgs(f, x0, opts);
    let (x2, f2) = nelder_mead(f, &x1, &opts.polish_scales, 600);
    let fine: Vec<f64> = opts.polish_scales.iter().map(|s| s * 1e-3).collect();
    let (x3, f3) = nelder_mead(f, &x2, &fine, 400);
    let mut best = (x0.to_vec(), f0);
    for cand in [(x1, f1), (x2, f2), (x3, f3)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> MinimizeOptions {
        MinimizeOptions::new(n, 200, 1e-6)
    }

    #[test]
    fn quadratic_bowl() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let (x, fx) = minimize(&mut f, &[0.0, 0.0], &opts(2));
        assert!((x[0] - 1.0).abs() < 1e-6, "{x:?}");
        assert!((x[1] + 2.0).abs() < 1e-6, "{x:?}");
        assert!(fx < 1e-10);
    }

    #[test]
    fn conical_kink_converges_to_the_vertex() {
        // Sum of absolute values with a linear tilt, minimized at the kink.
        let mut f = |x: &[f64]| (x[0] - 0.3).abs() + (x[1] + 0.1).abs() + 0.02 * x[0];
        let (x, _) = minimize(&mut f, &[0.0, 0.0], &opts(2));
        assert!((x[0] - 0.3).abs() < 1e-6, "{x:?}");
        assert!((x[1] + 0.1).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn norm_cone_in_six_dimensions() {
        let target = [0.1, -0.2, 0.3, -0.05, 0.15, 0.0];
        let mut f = |x: &[f64]| {
            let d: f64 = x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d + 0.05 * x[0].abs()
        };
        let (x, _) = minimize(&mut f, &[0.0; 6], &opts(6));
        for (a, b) in x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5, "{x:?}");
        }
    }

    #[test]
    fn never_worse_than_start() {
        // A function that punishes every move away from the start.
        let mut f = |x: &[f64]| if x[0] == 0.0 { 1.0 } else { 2.0 + x[0].abs() };
        let (x, fx) = minimize(&mut f, &[0.0], &opts(1));
        assert_eq!(x[0], 0.0);
        assert_eq!(fx, 1.0);
    }
}
