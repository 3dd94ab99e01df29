use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Inputs whose hinge/ReLU arguments come closer than this to zero are
    /// reported as sitting on a kink and should be excluded by the caller.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            kink_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// True when the point is within `kink_tol` of a nondifferentiable
    /// hinge; the error figure is then meaningless.
    pub at_kink: bool,
    pub kink_distance: f64,
    pub coordinates: usize,
}

impl GradCheck {
    /// Passes when the error is below `tol`, or the point is excluded as
    /// a kink.
    pub fn ok(&self, tol: f64) -> bool {
        self.at_kink || self.max_rel_error < tol
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let opts = GradCheckOptions {
        step,
        ..GradCheckOptions::default()
    };
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), opts)
}

/// Gradient check over several inputs at once; every coordinate of every
/// input is perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::InvalidTensor(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    tape.backward(out)?;
    let kink_distance = tape.kink_distance();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        t.value(o).item()
    };

    let mut probe = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut coordinates = 0;
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + opts.step;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - opts.step;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = (grad[i] - numeric).abs() / numeric.abs().max(1.0);
            max_rel_error = max_rel_error.max(err);
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        at_kink: kink_distance < opts.kink_tol,
        kink_distance,
        coordinates,
    })
}
