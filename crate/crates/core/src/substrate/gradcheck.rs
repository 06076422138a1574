//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};

use super::{Array, Fault, Graph, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Checks at most this many evenly spaced elements per input.
    pub max_per_input: Option<usize>,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_per_input: None,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` with the largest error.
    pub worst: (usize, usize),
    /// `(analytic, numeric)` at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

fn eval<F>(inputs: &[Array<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.input(a.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares the analytic gradient of the scalar `f(inputs)` with
/// `(f(x+eps) - f(x-eps)) / (2 eps)` element by element. The relative error
/// uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn gradient_check<F>(
    inputs: &[Array<f64>],
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    if let Some(fault) = opts.fault {
        g = g.with_fault(fault);
    }
    let vars: Vec<Var> = inputs.iter().map(|a| g.param(a.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "gradient_check needs a scalar output, got shape {:?}",
            g.shape(out)
        )));
    }
    let grads = g.backward(out)?;

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (i, var) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let analytic = grads
            .get(*var)
            .map(|a| a.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let count = opts.max_per_input.map_or(n, |m| m.min(n));
        for j in 0..count {
            let idx = if count == n { j } else { j * n / count };
            let x0 = inputs[i].data()[idx];
            work[i].data_mut()[idx] = x0 + opts.eps;
            let fp = eval(&work, &f)?;
            work[i].data_mut()[idx] = x0 - opts.eps;
            let fm = eval(&work, &f)?;
            work[i].data_mut()[idx] = x0;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (i, idx);
                report.worst_values = (a, numeric);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_gradient_matches() {
        let x = Array::from_f64(&[4, 3], &(0..12).map(|i| i as f64 * 0.3).collect::<Vec<_>>()).unwrap();
        let y = Array::from_f64(&[4, 3], &(0..12).map(|i| (i as f64).cos()).collect::<Vec<_>>()).unwrap();
        let yc = y.clone();
        let r = gradient_check(&[x], &GradCheckOptions::default(), move |g, v| {
            let t = g.input(yc.clone());
            let d = g.sub(v[0], t)?;
            let s = g.square(d)?;
            g.mean(s)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let x = Array::<f64>::zeros(&[3]);
        let r = gradient_check(&[x], &GradCheckOptions::default(), |g, v| g.square(v[0]));
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
