use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Smallest denominator of the relative error. Entries whose true gradient
/// vanishes (e.g. biases a softmax is invariant to) are compared in absolute
/// terms instead of amplifying roundoff.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Analytic gradients, one entry per parameter (zeros for frozen ones).
    pub analytic: Vec<(ParamId, Vec<f64>)>,
}

/// Compares reverse-mode gradients of `f` with fourth-order central
/// differences over every entry of every unfrozen parameter. `f` must be deterministic: any noise
/// has to be drawn up front and reused.
pub fn grad_check<F>(store: &ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::default();
    let out = f(&mut tape, store)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {value}")));
    }
    let grads = tape.backward(out);
    let bound: std::collections::HashMap<_, _> = tape.bound_params().into_iter().collect();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::default();
        let o = f(&mut t, s)?;
        let v = t.scalar(o);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("objective evaluated to {v}")))
        }
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        analytic: Vec::new(),
    };
    for id in store.ids() {
        let p = store.get(id);
        let analytic = if p.frozen {
            vec![0.0; p.value.len()]
        } else {
            bound
                .get(&id)
                .and_then(|&v| grads.get(v))
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.len()])
        };
        if !p.frozen {
            for (i, &a) in analytic.iter().enumerate() {
                let x = p.value.data()[i];
                let mut at = |d: f64| -> Result<f64> {
                    work.value_mut(id).data_mut()[i] = x + d;
                    eval(&work)
                };
                let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
                work.value_mut(id).data_mut()[i] = x;
                let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
                report.checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = Some((p.name.clone(), i));
                }
            }
        }
        report.analytic.push((id, analytic));
    }
    Ok(report)
}
