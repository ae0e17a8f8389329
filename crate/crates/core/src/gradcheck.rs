//! Central finite differences as an independent oracle for reverse mode.

use serde::Serialize;

use crate::exec::Exec;
use crate::tensor::{Real, Tensor};

/// Denominator floor of the relative error.
pub const EPS_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, EPS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(EPS_FLOOR)
}

/// Relative error of a whole gradient tensor: the largest coordinate
/// discrepancy over the largest coordinate magnitude.
pub fn tensor_relative_error<F: Real>(analytic: &Tensor<F>, numeric: &Tensor<F>) -> f64 {
    let diff = analytic.max_abs_diff(numeric);
    diff / analytic.max_abs().max(numeric.max_abs()).max(EPS_FLOOR)
}

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h` per coordinate, accumulated in f64.
/// The divisor is the step actually representable in `F`.
pub fn finite_diff_grad<F: Real>(f: impl Fn(&Tensor<F>) -> F + Sync, x: &Tensor<F>, h: f64) -> Tensor<F> {
    finite_diff_grad_with(Exec::Sequential, |t| (f(t), 0), x, h, h)
}

/// Finite differences for piecewise-smooth functions. `f` returns its value
/// and a signature of the active linear piece (see
/// [`crate::autograd::Graph::relu_signature`]); when either probe leaves the
/// piece containing `x`, the step is shrunk tenfold, down to `min_h`.
pub fn finite_diff_grad_with<F: Real>(
    exec: Exec,
    f: impl Fn(&Tensor<F>) -> (F, u64) + Sync,
    x: &Tensor<F>,
    h: f64,
    min_h: f64,
) -> Tensor<F> {
    let (_, sig0) = f(x);
    let grads = exec.map_range(x.len(), |i| {
        let mut step = h;
        loop {
            let mut probe = x.clone();
            let xi = x.data()[i];
            let up = xi + F::lit(step);
            let down = xi - F::lit(step);
            probe.data_mut()[i] = up;
            let (fp, sp) = f(&probe);
            probe.data_mut()[i] = down;
            let (fm, sm) = f(&probe);
            let smooth = sp == sig0 && sm == sig0;
            if smooth || step / 10.0 < min_h {
                let denom = up.as_f64() - down.as_f64();
                return F::lit((fp.as_f64() - fm.as_f64()) / denom);
            }
            step /= 10.0;
        }
    });
    Tensor::new(x.shape().to_vec(), grads).expect("same shape as input")
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub numel: usize,
    /// Tensor-level relative error; this decides pass/fail.
    pub max_rel_error: f64,
    /// Worst coordinate-wise relative error, for information.
    pub max_coord_rel_error: f64,
    pub max_abs_grad: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn new(tolerance: f64) -> Self {
        GradCheckReport {
            tolerance,
            entries: Vec::new(),
        }
    }

    pub fn record<F: Real>(&mut self, name: &str, analytic: &Tensor<F>, numeric: &Tensor<F>) {
        let rel = tensor_relative_error(analytic, numeric);
        let coord = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| relative_error(a.as_f64(), n.as_f64()))
            .fold(0.0, f64::max);
        self.entries.push(GradCheckEntry {
            name: name.to_string(),
            numel: analytic.len(),
            max_rel_error: rel,
            max_coord_rel_error: coord,
            max_abs_grad: analytic.max_abs(),
            passed: rel < self.tolerance,
        });
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<28} n={:<6} rel={:.3e} coord={:.3e} |g|max={:.3e} {}",
                e.name,
                e.numel,
                e.max_rel_error,
                e.max_coord_rel_error,
                e.max_abs_grad,
                if e.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "tolerance {:.1e}: {}", self.tolerance, if self.passed() { "PASS" } else { "FAIL" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, Padding, Var};
    use crate::rng::SeedRng;
    use approx::assert_relative_eq;

    #[test]
    fn finite_diff_examples() {
        let x = Tensor::<f64>::from_f64(&[3], &[0.3, -1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().sum(), &x, 1e-3);
        for &v in g.data() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-9);
        }
        let x = Tensor::<f64>::from_f64(&[1], &[3.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, 1e-4);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
        let x = Tensor::<f64>::zeros(&[2]);
        let g = finite_diff_grad(|t| crate::ops::softmax(t, 0).unwrap().data()[0], &x, 1e-4);
        assert!((g.data()[0] - 0.25).abs() < 1e-8);
        assert!((g.data()[1] + 0.25).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_relative_eq!(relative_error(1e-9, 0.0), 0.1);
        assert_relative_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn backward_simple_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(&[2, 3]));

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = SeedRng::new(21);
        let w0 = rng.normal_tensor::<f64>(&[3, 4], 1.0);
        let x0 = rng.normal_tensor::<f64>(&[5, 3], 1.0);
        let build = |which: u8| {
            let mut g = Graph::<f64>::new();
            let w = g.param(w0.clone());
            let x = g.constant(x0.clone());
            let y = g.matmul(x, w).unwrap();
            let a = g.sigmoid(y);
            let l1 = g.sum(a);
            let sq = g.mul(y, y).unwrap();
            let l2 = g.sum(sq);
            let loss = match which {
                0 => l1,
                1 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            g.backward(loss).unwrap().get(w).unwrap().clone()
        };
        let (g1, g2, g12) = (build(0), build(1), build(2));
        let summed = Tensor::new(vec![3, 4], g1.data().iter().zip(g2.data()).map(|(a, b)| a + b).collect()).unwrap();
        assert!(summed.max_abs_diff(&g12) < 1e-6);
    }

    /// One registered op under test: builds a scalar loss from the inputs.
    type OpCase<F> = (&'static str, Vec<Vec<usize>>, fn(&mut Graph<F>, &[Var]) -> Var);

    fn weighted_sum<F: Real>(g: &mut Graph<F>, y: Var, seed: u64) -> Var {
        let w = SeedRng::new(seed).normal_tensor::<F>(g.shape(y), 1.0);
        let w = g.constant(w);
        let p = g.mul(y, w).unwrap();
        g.sum(p)
    }

    fn op_cases<F: Real>() -> Vec<OpCase<F>> {
        vec![
            ("add", vec![vec![2, 3], vec![2, 3]], |g, v| { let y = g.add(v[0], v[1]).unwrap(); weighted_sum(g, y, 1) }),
            ("sub", vec![vec![2, 3], vec![2, 3]], |g, v| { let y = g.sub(v[0], v[1]).unwrap(); weighted_sum(g, y, 2) }),
            ("mul", vec![vec![4], vec![4]], |g, v| { let y = g.mul(v[0], v[1]).unwrap(); weighted_sum(g, y, 3) }),
            ("mul_bcast spatial", vec![vec![1, 2, 3, 2, 2], vec![1, 2, 1, 2, 2]], |g, v| { let y = g.mul_bcast(v[0], v[1]).unwrap(); weighted_sum(g, y, 4) }),
            ("mul_bcast channel", vec![vec![1, 2, 3, 2, 2], vec![1, 2, 3, 1, 1]], |g, v| { let y = g.mul_bcast(v[0], v[1]).unwrap(); weighted_sum(g, y, 5) }),
            ("add_bcast joint", vec![vec![1, 2, 1, 2, 2], vec![1, 2, 3, 1, 1]], |g, v| { let y = g.add_bcast(v[0], v[1]).unwrap(); weighted_sum(g, y, 6) }),
            ("scale", vec![vec![3]], |g, v| { let y = g.scale(v[0], -1.7); weighted_sum(g, y, 7) }),
            ("add_bias", vec![vec![3, 4], vec![4]], |g, v| { let y = g.add_bias(v[0], v[1]).unwrap(); weighted_sum(g, y, 8) }),
            ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| { let y = g.matmul(v[0], v[1]).unwrap(); weighted_sum(g, y, 9) }),
            ("bmm", vec![vec![2, 3, 4], vec![2, 4, 2]], |g, v| { let y = g.bmm(v[0], v[1], false).unwrap(); weighted_sum(g, y, 10) }),
            ("bmm_t", vec![vec![2, 3, 4], vec![2, 5, 4]], |g, v| { let y = g.bmm(v[0], v[1], true).unwrap(); weighted_sum(g, y, 11) }),
            ("conv2d s1", vec![vec![2, 2, 4, 4], vec![3, 2, 3, 3], vec![3]], |g, v| { let y = g.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same).unwrap(); weighted_sum(g, y, 12) }),
            ("conv2d s2", vec![vec![1, 3, 5, 6], vec![2, 3, 3, 3], vec![2]], |g, v| { let y = g.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same).unwrap(); weighted_sum(g, y, 13) }),
            ("sigmoid", vec![vec![5]], |g, v| { let y = g.sigmoid(v[0]); weighted_sum(g, y, 14) }),
            ("relu", vec![vec![6]], |g, v| { let y = g.relu(v[0]); weighted_sum(g, y, 15) }),
            ("softmax last", vec![vec![2, 5]], |g, v| { let y = g.softmax(v[0], 1).unwrap(); weighted_sum(g, y, 16) }),
            ("softmax mid", vec![vec![2, 3, 2]], |g, v| { let y = g.softmax(v[0], 1).unwrap(); weighted_sum(g, y, 17) }),
            ("reduce_mean", vec![vec![2, 3, 2, 2]], |g, v| { let y = g.reduce_mean(v[0], &[1, 3]).unwrap(); weighted_sum(g, y, 18) }),
            ("layer_norm", vec![vec![3, 4], vec![4], vec![4]], |g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(); weighted_sum(g, y, 19) }),
            ("permute", vec![vec![2, 3, 4]], |g, v| { let y = g.permute(v[0], &[2, 0, 1]).unwrap(); weighted_sum(g, y, 20) }),
            ("reshape", vec![vec![2, 3]], |g, v| { let y = g.reshape(v[0], &[3, 2]).unwrap(); weighted_sum(g, y, 21) }),
            ("temporal_diff", vec![vec![2, 4, 3]], |g, v| { let y = g.temporal_diff(v[0]).unwrap(); weighted_sum(g, y, 22) }),
            ("repeat_interleave", vec![vec![1, 2, 3]], |g, v| { let y = g.repeat_interleave(v[0], 2, 2).unwrap(); weighted_sum(g, y, 23) }),
            ("concat", vec![vec![2, 3], vec![2, 2]], |g, v| { let y = g.concat(v[0], v[1], 1).unwrap(); weighted_sum(g, y, 24) }),
            ("linear", vec![vec![2, 3, 4], vec![4, 5], vec![5]], |g, v| { let y = g.linear(v[0], v[1], Some(v[2])).unwrap(); weighted_sum(g, y, 25) }),
            ("cross_entropy", vec![vec![3, 2]], |g, v| g.cross_entropy(v[0], &[1, 0, 1]).unwrap()),
            ("sum of squares", vec![vec![2, 2]], |g, v| { let s = g.mul(v[0], v[0]).unwrap(); g.sum(s) }),
        ]
    }

    fn check_ops<F: Real>(seed_base: u64, h: f64, min_h: f64, tol: f64) {
        for (name, shapes, build) in op_cases::<F>() {
            for seed in seed_base..seed_base + 20 {
                let mut rng = SeedRng::new(seed);
                let inputs: Vec<Tensor<F>> = shapes.iter().map(|s| rng.normal_tensor(s, 1.0)).collect();
                let mut g = Graph::<F>::new();
                let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
                let loss = build(&mut g, &vars);
                let grads = g.backward(loss).unwrap();
                for (k, input) in inputs.iter().enumerate() {
                    let eval = |probe: &Tensor<F>| {
                        let mut g = Graph::<F>::inference();
                        let vars: Vec<Var> = inputs
                            .iter()
                            .enumerate()
                            .map(|(j, t)| g.constant(if j == k { probe.clone() } else { t.clone() }))
                            .collect();
                        let l = build(&mut g, &vars);
                        (g.value(l).item(), g.relu_signature())
                    };
                    let numeric = finite_diff_grad_with(Exec::Sequential, eval, input, h, min_h);
                    let analytic = grads.get(vars[k]).unwrap();
                    let rel = tensor_relative_error(analytic, &numeric);
                    assert!(rel < tol, "{name} input {k} seed {seed}: rel {rel:e}");
                }
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences_f64() {
        check_ops::<f64>(1000, 1e-5, 1e-9, 1e-6);
    }

    #[test]
    fn every_op_matches_finite_differences_f32() {
        check_ops::<f32>(500, 1e-2, 1e-4, 1e-3);
    }

    #[test]
    fn report_display_and_pass() {
        let mut r = GradCheckReport::new(1e-3);
        let a = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        r.record("w", &a, &a);
        assert!(r.passed());
        let b = Tensor::<f64>::from_f64(&[2], &[1.0, 2.1]).unwrap();
        r.record("v", &a, &b);
        assert!(!r.passed());
        assert!(r.to_string().contains("FAIL"));
    }
}
