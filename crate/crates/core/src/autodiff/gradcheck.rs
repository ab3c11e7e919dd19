//! Central finite-difference verification of backward rules.

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Fixed, non-constant probe weights used to reduce a tensor output to a scalar.
fn probe_weights(n: usize) -> Vec<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            0.25 + 1.5 * u
        })
        .collect()
}

fn scalar_output(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let n = tape.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let w = tape.constant(Tensor::new(tape.shape(out), probe_weights(n))?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn evaluate<F>(f: &F, store: &ParameterStore<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("gradcheck forward output".into()));
    }
    let s = scalar_output(&mut tape, out)?;
    Ok(tape.value(s).data()[0])
}

/// Compares the analytic gradient of `f` with respect to every parameter in
/// `inputs` against central differences with step [`STEP`]. Tensor-valued
/// outputs are reduced to a scalar with fixed probe weights first.
///
/// Existing gradients in `inputs` are cleared.
pub fn gradcheck<F>(f: F, inputs: &mut ParameterStore<f64>, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    gradcheck_scaled(f, inputs, tol, 1.0)
}

/// Like [`gradcheck`], but expects the analytic gradient to equal
/// `numeric_scale` times the finite-difference one. Gradient reversal is
/// the identity going forward and `-lambda` going back, so it is checked
/// with `numeric_scale = -lambda`.
pub fn gradcheck_scaled<F>(f: F, inputs: &mut ParameterStore<f64>, tol: f64, numeric_scale: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    inputs.check_finite()?;
    inputs.zero_grad();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, inputs)?;
        if !tape.value(out).is_finite() {
            return Err(Error::NonFinite("gradcheck forward output".into()));
        }
        let s = scalar_output(&mut tape, out)?;
        tape.backward(s, inputs)?;
    }

    let ids: Vec<_> = inputs.iter().map(|(id, _)| id).collect();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut coordinates = 0;
    for id in ids {
        let n = inputs.value(id).numel();
        let analytic: Vec<f64> = match inputs.grad(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; n],
        };
        for (k, &a) in analytic.iter().enumerate() {
            let orig = inputs.value(id).data()[k];
            inputs.get_mut(id).value_mut().data_mut()[k] = orig + STEP;
            let plus = evaluate(&f, inputs);
            inputs.get_mut(id).value_mut().data_mut()[k] = orig - STEP;
            let minus = evaluate(&f, inputs);
            inputs.get_mut(id).value_mut().data_mut()[k] = orig;
            let numeric = numeric_scale * (plus? - minus?) / (2.0 * STEP);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("gradcheck derivative of {}[{k}]", inputs.get(id).name)));
            }
            let err = relative_error(a, numeric);
            coordinates += 1;
            if err > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(err);
                worst = Some((inputs.get(id).name.clone(), k));
            }
        }
    }
    Ok(GradcheckReport {
        max_rel_err,
        worst,
        coordinates,
        tol,
        passed: max_rel_err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[(&str, &[usize], &[f64])]) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        for (name, shape, data) in values {
            s.add(name, Tensor::new(shape, data.to_vec()).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn linear_function_is_exact() {
        let mut s = store(&[("w", &[3], &[0.2, -1.3, 2.0])]);
        let c = Tensor::new(&[3], vec![1.5, -0.5, 3.0]).unwrap();
        let rep = gradcheck(
            |tape, st| {
                let w = tape.param(st, st.id("w").unwrap());
                let k = tape.constant(c.clone());
                let p = tape.mul(w, k)?;
                Ok(tape.sum(p))
            },
            &mut s,
            1e-9,
        )
        .unwrap();
        assert!(rep.passed && rep.max_rel_err < 1e-9, "{rep:?}");
        assert_eq!(rep.coordinates, 3);
    }

    #[test]
    fn relu_away_from_kink() {
        let mut s = store(&[("x", &[2, 3], &[0.5, -0.7, 1.2, -0.02, 0.3, -2.0])]);
        let rep = gradcheck(
            |tape, st| {
                let x = tape.param(st, st.id("x").unwrap());
                Ok(tape.relu(x))
            },
            &mut s,
            1e-6,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn wrong_backward_rule_fails() {
        let mut s = store(&[("x", &[3], &[0.4, 1.1, -0.8])]);
        let rep = gradcheck(
            |tape, st| {
                let x = tape.param(st, st.id("x").unwrap());
                // d/dx x^2 is 2x; claim x instead
                Ok(tape.custom_unary(
                    x,
                    |v| v * v,
                    Box::new(|input: &[f64], _out: &[f64], up: &[f64]| {
                        input.iter().zip(up).map(|(&x, &g)| x * g).collect()
                    }),
                ))
            },
            &mut s,
            1e-4,
        )
        .unwrap();
        assert!(!rep.passed, "{rep:?}");
        assert!(rep.max_rel_err > 0.4);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut s = store(&[("x", &[1], &[1.0])]);
        let res = gradcheck(
            |tape, st| {
                let x = tape.param(st, st.id("x").unwrap());
                Ok(tape.custom_unary(x, |_| f64::NAN, Box::new(|_: &[f64], _: &[f64], up: &[f64]| up.to_vec())))
            },
            &mut s,
            1e-4,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
