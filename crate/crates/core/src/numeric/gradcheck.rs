//! Central finite-difference verification of tape gradients.

use crate::error::Result;

use super::{ParamId, ParamStore, Tape, Var};

/// Worst disagreement found for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    pub fn offenders(&self, tol: f64) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_err >= tol)
    }
}

/// `|a - n| / (max(|a|, |n|) + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-8)
}

/// Compares the gradients currently stored in `store` against central
/// differences of `loss_fn`, perturbing each element of each parameter in
/// `ids` by `±epsilon`. Values are restored afterwards.
pub fn finite_diff_check<F>(mut loss_fn: F, store: &mut ParamStore, ids: &[ParamId], epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    for &id in ids {
        let analytic = store.grad(id).clone();
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + epsilon;
            let plus = loss_fn(store);
            store.value_mut(id).data_mut()[i] = orig - epsilon;
            let minus = loss_fn(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let rel = relative_error(a, numeric);
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            if rel > check.max_rel_err || i == 0 {
                check.max_rel_err = check.max_rel_err.max(rel);
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

/// One element left out of a piecewise check because the `±epsilon`
/// perturbation moved some ReLU, clamp or gate input onto another piece.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedElement {
    pub name: String,
    pub index: usize,
}

/// [`finite_diff_check`] for piecewise-smooth losses. `loss_fn` returns the
/// loss and the tape's [`Tape::regions`]; elements whose perturbed
/// evaluations leave the base region are skipped and listed.
pub fn finite_diff_check_piecewise<F>(
    mut loss_fn: F,
    store: &mut ParamStore,
    ids: &[ParamId],
    epsilon: f64,
) -> Result<(GradCheckReport, Vec<SkippedElement>)>
where
    F: FnMut(&ParamStore) -> Result<(f64, Vec<u8>)>,
{
    let (_, base) = loss_fn(store)?;
    let mut report = GradCheckReport::default();
    let mut skipped = Vec::new();
    for &id in ids {
        let analytic = store.grad(id).clone();
        let name = store.get(id).name.clone();
        let mut check = ParamCheck { name: name.clone(), max_rel_err: 0.0, max_abs_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for i in 0..analytic.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + epsilon;
            let plus = loss_fn(store);
            store.value_mut(id).data_mut()[i] = orig - epsilon;
            let minus = loss_fn(store);
            store.value_mut(id).data_mut()[i] = orig;
            let ((fp, rp), (fm, rm)) = (plus?, minus?);
            if rp != base || rm != base {
                skipped.push(SkippedElement { name: name.clone(), index: i });
                continue;
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let rel = relative_error(a, numeric);
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            if rel > check.max_rel_err || i == 0 {
                check.max_rel_err = check.max_rel_err.max(rel);
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok((report, skipped))
}

/// Runs `build` once with a tape to record gradients, then checks them
/// against finite differences of the same closure.
pub fn check_gradients<B>(build: B, store: &mut ParamStore, ids: &[ParamId], epsilon: f64) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;
    finite_diff_check(
        |s| {
            let mut t = Tape::new();
            let l = build(&mut t, s)?;
            t.item(l)
        },
        store,
        ids,
        epsilon,
    )
}
