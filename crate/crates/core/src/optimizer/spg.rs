//! Spectral projected gradient for box-constrained minimisation.
//!
//! Barzilai–Borwein steps with a nonmonotone Armijo search against the maximum
//! of the last few accepted values.

#[derive(Debug, Clone, PartialEq)]
pub struct SpgOptions {
    pub max_iterations: usize,
    /// Stop when `‖P(x − ∇f) − x‖∞` falls below this.
    pub tolerance: f64,
    /// Length of the nonmonotone window.
    pub memory: usize,
    pub sufficient_decrease: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for SpgOptions {
    fn default() -> Self {
        SpgOptions {
            max_iterations: 5000,
            tolerance: 1e-6,
            memory: 10,
            sufficient_decrease: 1e-4,
            step_min: 1e-10,
            step_max: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub projected_gradient: f64,
    pub converged: bool,
    /// Objective value at every accepted iterate, starting with the initial point.
    pub accepted: Vec<f64>,
}

pub fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// `‖P(x − g) − x‖∞`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((x, g), (lo, hi))| ((x - g).clamp(*lo, *hi) - x).abs())
        .fold(0.0, f64::max)
}

/// Minimises `f` over the box. `f` returns the value and gradient, or `None`
/// where it is undefined; such points are treated as infinitely bad.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &SpgOptions) -> SpgOutcome
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = match f(&x) {
        Some(v) => v,
        None => {
            return SpgOutcome {
                x,
                value: f64::INFINITY,
                iterations: 0,
                projected_gradient: f64::INFINITY,
                converged: false,
                accepted: vec![],
            }
        }
    };
    let mut accepted = vec![fx];
    let mut pg = projected_gradient_norm(&x, &g, lower, upper);
    let mut lambda = if pg > 0.0 {
        (1.0 / pg).clamp(opts.step_min, opts.step_max)
    } else {
        1.0
    };
    let mut iterations = 0;
    let mut d = vec![0.0; x.len()];
    let mut trial = vec![0.0; x.len()];
    while pg > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        for k in 0..x.len() {
            d[k] = (x[k] - lambda * g[k]).clamp(lower[k], upper[k]) - x[k];
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let window = accepted.len().saturating_sub(opts.memory);
        let reference = accepted[window..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let found = loop {
            for k in 0..x.len() {
                trial[k] = (x[k] + alpha * d[k]).clamp(lower[k], upper[k]);
            }
            match f(&trial) {
                Some((ft, gt)) if ft.is_finite() && ft <= reference + opts.sufficient_decrease * alpha * slope => {
                    break Some((ft, gt));
                }
                Some((ft, _)) if ft.is_finite() => {
                    let denom = ft - fx - alpha * slope;
                    let quad = if denom > 0.0 { -0.5 * alpha * alpha * slope / denom } else { 0.5 * alpha };
                    alpha = quad.clamp(0.1 * alpha, 0.5 * alpha);
                }
                _ => alpha *= 0.1,
            }
            if alpha < 1e-16 {
                break None;
            }
        };
        let Some((ft, gt)) = found else {
            break;
        };
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..x.len() {
            let s = trial[k] - x[k];
            ss += s * s;
            sy += s * (gt[k] - g[k]);
        }
        lambda = if sy <= 0.0 {
            opts.step_max
        } else {
            (ss / sy).clamp(opts.step_min, opts.step_max)
        };
        std::mem::swap(&mut x, &mut trial);
        fx = ft;
        g = gt;
        accepted.push(fx);
        pg = projected_gradient_norm(&x, &g, lower, upper);
    }
    SpgOutcome {
        converged: pg <= opts.tolerance,
        x,
        value: fx,
        iterations,
        projected_gradient: pg,
        accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        Some((
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
            vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
        ))
    }

    #[test]
    fn solves_rosenbrock_in_a_box() {
        let out = minimize(rosenbrock, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &SpgOptions::default());
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
        let out = minimize(rosenbrock, &[-1.2, 1.0], &[-2.0, -2.0], &[0.5, 2.0], &SpgOptions::default());
        assert!(out.converged);
        assert_eq!(out.x[0], 0.5);
        assert!((out.x[1] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn undefined_region_is_avoided() {
        let f = |x: &[f64]| (x[0] > -0.5).then(|| ((x[0] + 1.0).powi(2), vec![2.0 * (x[0] + 1.0)]));
        let out = minimize(f, &[1.0], &[-2.0], &[2.0], &SpgOptions { max_iterations: 200, ..Default::default() });
        assert!(out.x[0] > -0.5);
        assert!(out.value.is_finite());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(x in proptest::collection::vec(-3.0f64..3.0, 1..20), w in 0.1f64..2.0) {
            let lo = vec![-w; x.len()];
            let hi = vec![w * 0.5; x.len()];
            let mut once = x.clone();
            project(&mut once, &lo, &hi);
            let mut twice = once.clone();
            project(&mut twice, &lo, &hi);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn window_maximum_never_increases(c in proptest::collection::vec(-1.0f64..1.0, 6), scale in 1.0f64..50.0) {
            let f = |x: &[f64]| {
                let v: f64 = x.iter().zip(&c).enumerate().map(|(k, (a, b))| (1.0 + scale * k as f64) * (a - b).powi(2) + (a * 3.0).sin() * 0.1).sum();
                let g = x.iter().zip(&c).enumerate().map(|(k, (a, b))| 2.0 * (1.0 + scale * k as f64) * (a - b) + 0.3 * (a * 3.0).cos()).collect();
                Some((v, g))
            };
            let opts = SpgOptions { max_iterations: 300, ..Default::default() };
            let out = minimize(f, &[0.0; 6], &[-0.7; 6], &[0.7; 6], &opts);
            let m = opts.memory;
            let window_max: Vec<f64> = (0..out.accepted.len())
                .map(|k| out.accepted[k.saturating_sub(m - 1)..=k].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            for pair in window_max.windows(2) {
                prop_assert!(pair[1] <= pair[0]);
            }
            prop_assert!(out.accepted.last().unwrap() <= &out.accepted[0]);
        }
    }
}
