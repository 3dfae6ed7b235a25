//! Finite-difference gradient verification.
//!
//! Checks run in `f64`: with `f32` the central-difference quotient at step
//! 1e-3 carries rounding noise around 1e-4 on its own.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-3;
/// Largest accepted relative error between analytic and numeric gradients.
pub const TOLERANCE: f64 = 1e-4;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Records `inputs` on `tape`; tensors with `requires_grad` become leaves.
fn record(tape: &mut Tape<f64>, inputs: &[Tensor<f64>], track: bool) -> Vec<Var> {
    inputs
        .iter()
        .map(|t| {
            if track && t.requires_grad {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = record(&mut tape, inputs, false);
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Reverse-mode gradients of the scalar `f(inputs)` for every input that
/// requires a gradient.
pub fn analytic<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = record(&mut tape, inputs, true);
    let out = f(&mut tape, &vars)?;
    let wanted: Vec<Var> = vars.iter().zip(inputs).filter(|(_, t)| t.requires_grad).map(|(&v, _)| v).collect();
    tape.grad(out, &wanted)
}

/// Central-difference gradients, same layout as [`analytic`].
pub fn numeric<F>(inputs: &[Tensor<f64>], f: &F, step: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::new();
    for i in 0..inputs.len() {
        if !inputs[i].requires_grad {
            continue;
        }
        let mut g = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + step;
            let plus = evaluate(&work, f)?;
            work[i].data_mut()[j] = x - step;
            let minus = evaluate(&work, f)?;
            work[i].data_mut()[j] = x;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest per-input relative error between analytic and numeric gradients.
///
/// `corrupt` may tamper with the analytic gradients before comparison; the
/// verification suite uses it to prove that a wrong gradient is caught.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], f: F, corrupt: Option<&dyn Fn(&mut [Tensor<f64>])>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut a = analytic(inputs, &f)?;
    if let Some(c) = corrupt {
        c(&mut a);
    }
    let n = numeric(inputs, &f, STEP)?;
    Ok(a.iter().zip(&n).map(|(a, n)| relative_error(a.data(), n.data())).fold(0.0, f64::max))
}

/// Outcome of a directional difference check.
#[derive(Clone, Copy, Debug)]
pub struct Directional {
    /// `|a − n| / max(|a|, |n|)` between `⟨∇f, u⟩` and the central difference along `u`.
    pub rel_err: f64,
    /// Whether `x`, `x + h·u` and `x − h·u` share one relu pattern, i.e. the
    /// difference quotient never straddles a kink.
    pub smooth: bool,
}

fn evaluate_with_pattern<F>(inputs: &[Tensor<f64>], f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = record(&mut tape, inputs, false);
    let out = f(&mut tape, &vars)?;
    Ok((tape.value(out).item(), tape.relu_pattern()))
}

/// Central difference along `direction` (one tensor per gradient-requiring
/// input) compared with the analytic directional derivative.
pub fn directional<F>(
    inputs: &[Tensor<f64>],
    f: F,
    direction: &[Tensor<f64>],
    step: f64,
    corrupt: Option<&dyn Fn(&mut [Tensor<f64>])>,
) -> Result<Directional>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut a = analytic(inputs, &f)?;
    if let Some(c) = corrupt {
        c(&mut a);
    }
    let along: f64 = a.iter().zip(direction).map(|(g, u)| g.data().iter().zip(u.data()).map(|(x, y)| x * y).sum::<f64>()).sum();
    let shifted = |sign: f64| {
        let mut dirs = direction.iter();
        inputs
            .iter()
            .map(|t| {
                if !t.requires_grad {
                    return t.clone();
                }
                let u = dirs.next().expect("one direction per gradient input");
                let mut t = t.clone();
                for (x, d) in t.data_mut().iter_mut().zip(u.data()) {
                    *x += sign * step * d;
                }
                t
            })
            .collect::<Vec<_>>()
    };
    let (_, base) = evaluate_with_pattern(inputs, &f)?;
    let (plus, p_plus) = evaluate_with_pattern(&shifted(1.0), &f)?;
    let (minus, p_minus) = evaluate_with_pattern(&shifted(-1.0), &f)?;
    let numeric = (plus - minus) / (2.0 * step);
    Ok(Directional {
        rel_err: relative_error(&[along], &[numeric]),
        smooth: base == p_plus && base == p_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let x = Tensor::from_fn(vec![3, 2], |i| 0.3 * i as f64 - 0.7).with_grad();
        let f = |t: &mut Tape<f64>, v: &[Var]| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        };
        assert!(max_relative_error(&[x.clone()], f, None).unwrap() < TOLERANCE);
        let bump = |g: &mut [Tensor<f64>]| g[0].data_mut()[0] += 0.05;
        assert!(max_relative_error(&[x], f, Some(&bump)).unwrap() > TOLERANCE);
    }

    #[test]
    fn directional_detects_kinks() {
        let f = |t: &mut Tape<f64>, v: &[Var]| {
            let r = t.relu(v[0])?;
            t.sum(r)
        };
        let u = [Tensor::from_fn(vec![2], |_| std::f64::consts::FRAC_1_SQRT_2)];
        let far = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap().with_grad();
        let d = directional(&[far], f, &u, STEP, None).unwrap();
        assert!(d.smooth && d.rel_err < 1e-12);
        let near = Tensor::new(vec![2], vec![0.5, -1e-4]).unwrap().with_grad();
        assert!(!directional(&[near], f, &u, STEP, None).unwrap().smooth);
    }

    #[test]
    fn constants_are_skipped() {
        let x = Tensor::from_fn(vec![2], |i| i as f64 + 1.0).with_grad();
        let c = Tensor::from_fn(vec![2], |i| 3.0 - i as f64);
        let f = |t: &mut Tape<f64>, v: &[Var]| {
            let p = t.mul(v[0], v[1])?;
            t.sum(p)
        };
        let g = analytic(&[x, c], &f).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].data(), &[3.0, 2.0]);
    }
}
