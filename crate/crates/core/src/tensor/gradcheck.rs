use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;
/// Denominator floor of the relative error, so that vanishing gradients are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-8;

/// Maximum relative error between tape gradients of the scalar function `f`
/// and central finite differences, over every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.var(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::dim("grad_check needs a scalar-valued function"));
        }
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite value during grad_check".into()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + FD_EPS;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - FD_EPS;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
