#![allow(dead_code)]

use wave_core::nn::{Graph, NnError, ParameterSet, Tensor, Var};
use wave_oracles::central_difference;

/// Pass if within `abs_floor` absolutely or `rel` relatively.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    let d = (a - b).abs();
    d <= abs_floor || d <= rel * a.abs().max(b.abs())
}

/// Compares reverse-mode gradients of `build` with central differences over
/// every parameter coordinate. Returns the worst `(abs, rel)` pair seen and
/// whether every coordinate passed.
pub fn fd_check<F>(params: &ParameterSet, h: f64, rel: f64, abs_floor: f64, build: F) -> (bool, f64)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(n, t)| g.param(n, t).unwrap()).collect();
    let loss = build(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic = grads.flatten();

    let flat = params.flatten();
    let numeric = central_difference(&flat, h, |x| {
        let p = params.unflatten(x).unwrap();
        let mut g = Graph::new();
        let vars: Vec<Var> = p.iter().map(|(_, t)| g.constant(t.clone()).unwrap()).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).data()[0]
    });
    let mut ok = true;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        if !close(*a, *n, rel, abs_floor) {
            ok = false;
        }
        let d = (a - n).abs();
        if d > abs_floor {
            worst = worst.max(d / a.abs().max(n.abs()));
        }
    }
    (ok, worst)
}

pub fn random_tensor<R: rand::Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}
