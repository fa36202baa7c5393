use viewadapt_tensor::{relative_error, Param, Scalar, Tape, Var};

use super::Module;
use crate::error::{Error, Result};

/// Outcome of [`check_param_grads`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl ParamCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Copies parameter and buffer values from `src` into `dst`, casting the
/// precision. Both modules must have the same layout.
pub fn copy_params<A: Scalar, B: Scalar>(
    dst: &mut impl Module<A>,
    src: &impl Module<B>,
) -> Result<()> {
    let (sp, sb) = (src.params(), src.buffers());
    if dst.params().len() != sp.len() || dst.buffers().len() != sb.len() {
        return Err(Error::State(
            "modules have different parameter layouts".into(),
        ));
    }
    for (d, s) in dst.params_mut().into_iter().zip(sp) {
        assign(d, s)?;
    }
    for (d, s) in dst.buffers_mut().into_iter().zip(sb) {
        assign(d, s)?;
    }
    Ok(())
}

fn assign<A: Scalar, B: Scalar>(dst: &mut Param<A>, src: &Param<B>) -> Result<()> {
    if dst.value.shape() != src.value.shape() {
        return Err(Error::State(format!(
            "parameter `{}` shape {:?} does not match `{}` shape {:?}",
            dst.name,
            dst.value.shape(),
            src.name,
            src.value.shape()
        )));
    }
    dst.value = src.value.cast();
    Ok(())
}

/// Compares tape gradients of `module`'s parameters against central
/// differences evaluated on `reference`.
///
/// `reference` receives a copy of `module`'s parameters first, so it may run
/// at a higher precision than `module`. Every `stride`-th coordinate of each
/// parameter is probed.
pub fn check_param_grads<A, B, MA, MB, FA, FB>(
    module: &mut MA,
    analytic_loss: FA,
    reference: &mut MB,
    numeric_loss: FB,
    step: f64,
    stride: usize,
) -> Result<ParamCheck>
where
    A: Scalar,
    B: Scalar,
    MA: Module<A>,
    MB: Module<B>,
    FA: for<'t> Fn(&MA, &'t Tape<A>) -> Result<Var<'t, A>>,
    FB: for<'t> Fn(&MB, &'t Tape<B>) -> Result<Var<'t, B>>,
{
    if step <= 0.0 || !step.is_finite() || stride == 0 {
        return Err(Error::invalid(format!(
            "bad grad-check step {step} or stride {stride}"
        )));
    }
    copy_params(reference, module)?;
    module.zero_grad();
    {
        let tape = Tape::new();
        let loss = analytic_loss(module, &tape)?;
        tape.backward(loss)?;
        module.collect_grads(&tape)?;
    }
    let analytic: Vec<(String, Vec<f64>)> = module
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.to_f64_vec()))
        .collect();
    let eval = |m: &MB| -> Result<f64> {
        let tape = Tape::new();
        Ok(numeric_loss(m, &tape)?.item()?.as_f64())
    };
    let mut report = ParamCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (k, (name, grads)) in analytic.iter().enumerate() {
        for i in (0..grads.len()).step_by(stride) {
            let base = reference.params()[k].value.data()[i];
            reference.params_mut()[k].value.data_mut()[i] = B::of(base.as_f64() + step);
            let up = eval(reference)?;
            reference.params_mut()[k].value.data_mut()[i] = B::of(base.as_f64() - step);
            let down = eval(reference)?;
            reference.params_mut()[k].value.data_mut()[i] = base;
            let numeric = (up - down) / (2.0 * step);
            let r = relative_error(grads[i], numeric);
            let r = if r.is_nan() { f64::INFINITY } else { r };
            report.checked += 1;
            if r > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = r;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = grads[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
