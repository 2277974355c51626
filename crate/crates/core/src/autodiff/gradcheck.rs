use super::params::ParameterSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over its entries)`
    pub per_parameter: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_parameter
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares tape gradients against central differences
/// `(L(w + eps) - L(w - eps)) / 2 eps` for every trainable entry.
///
/// Relative error is `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_diff_check<F>(params: &mut ParameterSet, loss_fn: F, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet, &mut Tape) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |ps: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(ps, &mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let loss = loss_fn(params, &mut tape)?;
    let first = tape.value(loss).item();
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let grads = tape.gradients(loss)?;

    let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut per_parameter = Vec::with_capacity(ids.len());
    let mut entries_checked = 0;
    for id in ids {
        let n = params.get(id).value.numel();
        let analytic = grads.get(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + epsilon;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[i] = orig - epsilon;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            entries_checked += 1;
        }
        per_parameter.push((params.get(id).name.clone(), worst));
    }
    let max_rel_error = per_parameter.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_parameter,
        max_rel_error,
        entries_checked,
    })
}
