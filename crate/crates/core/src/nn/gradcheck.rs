use super::{mse, Batch, Network};
use crate::error::{Error, Result};

/// Result of comparing analytic gradients with central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    /// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_param: usize,
    pub worst_layer: usize,
    pub checked: usize,
}

/// Checks [`Network::backward`] against central differences of the MSE loss.
pub fn gradient_check(net: &Network<f64>, batch: &Batch<f64>, eps: f64) -> Result<GradientReport> {
    if batch.len() > 4 {
        return Err(Error::invalid(format!(
            "gradient check expects at most 4 samples, got {}",
            batch.len()
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut work = net.clone();
    let out = work.forward(&batch.inputs)?;
    let (_, grad) = mse(&out, &batch.targets)?;
    let grads = work.backward(&grad)?;
    let analytic = grads.flat();
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        let k = net.layer_of_param(i);
        return Err(Error::NonFinite(format!(
            "gradient of layer {k} ({}), parameter {i}",
            net.layer_kind(k)
        )));
    }

    let base = net.flat_params();
    let mut probe = net.clone();
    let mut params = base.clone();
    let loss_at = |probe: &mut Network<f64>, params: &[f64]| -> Result<f64> {
        probe.set_flat_params(params)?;
        let y = probe.predict(&batch.inputs)?;
        Ok(mse(&y, &batch.targets)?.0)
    };

    let mut report = GradientReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_layer: 0,
        checked: base.len(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        params[i] = base[i] + eps;
        let plus = loss_at(&mut probe, &params)?;
        params[i] = base[i] - eps;
        let minus = loss_at(&mut probe, &params)?;
        params[i] = base[i];
        let numeric = (plus - minus) / (2.0 * eps);
        if !numeric.is_finite() {
            let k = net.layer_of_param(i);
            return Err(Error::NonFinite(format!(
                "numeric gradient of layer {k} ({}), parameter {i}",
                net.layer_kind(k)
            )));
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = i;
            report.worst_layer = net.layer_of_param(i);
        }
    }
    Ok(report)
}
