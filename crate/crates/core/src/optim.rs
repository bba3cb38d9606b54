//! Derivative-free minimization (Nelder–Mead) with a projection hook for
//! simple feasible sets.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// relative spread of simplex values
    pub ftol_rel: f64,
    /// simplex diameter; kinked objectives need both tests to pass
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 2000, ftol_rel: 1e-8, xtol: 1e-7, initial_step: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. Every trial point is passed through `project`
/// before evaluation, which keeps iterates feasible without penalties.
pub fn nelder_mead<F, P>(mut f: F, project: P, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &mut Vec<f64>, evals: &mut usize| -> f64 {
        project(x);
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    if n == 0 {
        let mut x = Vec::new();
        let v = eval(&mut x, &mut evals);
        return Minimum { x, value: v, evals, converged: true };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    let v0 = eval(&mut start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut x = start.clone();
        x[i] += opts.initial_step;
        let v = eval(&mut x, &mut evals);
        if x == start {
            // projection collapsed the vertex; step the other way
            x = start.clone();
            x[i] -= opts.initial_step;
            let v = eval(&mut x, &mut evals);
            simplex.push((x, v));
        } else {
            simplex.push((x, v));
        }
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = worst - best;
        let diam = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= opts.ftol_rel * best.abs().max(1e-300) && diam <= opts.xtol {
            converged = true;
            break;
        }
        if spread == 0.0 && diam <= opts.xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let along =
            |c: f64, worst: &[f64]| -> Vec<f64> { centroid.iter().zip(worst).map(|(m, w)| m + c * (m - w)).collect() };
        let worst_x = simplex[n].0.clone();

        let mut xr = along(1.0, &worst_x);
        let fr = eval(&mut xr, &mut evals);
        if fr < simplex[0].1 {
            let mut xe = along(2.0, &worst_x);
            let fe = eval(&mut xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, outside) = if fr < worst { (along(0.5, &worst_x), true) } else { (along(-0.5, &worst_x), false) };
        let fc = eval(&mut xc, &mut evals);
        if (outside && fc <= fr) || (!outside && fc < worst) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best_x.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            let v = eval(&mut x, &mut evals);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evals: 5000, ..Default::default() };
        let m = nelder_mead(f, |_| {}, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn kinked_one_dimensional() {
        let f = |x: &[f64]| (x[0] - 0.3).abs() + 1.0;
        let m = nelder_mead(f, |_| {}, &[2.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn projection_keeps_feasible() {
        let f = |x: &[f64]| x[0];
        let clamp = |x: &mut [f64]| x[0] = x[0].max(-1.0);
        let m = nelder_mead(f, clamp, &[0.0], &NelderMeadOptions::default());
        assert!((m.x[0] + 1.0).abs() < 1e-9);
    }
}
