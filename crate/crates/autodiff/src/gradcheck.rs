//! Central finite-difference verification of taped gradients.

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Denominator floor of the relative error: gradients smaller than this are
/// effectively compared in absolute terms, below the rounding noise of a
/// central difference at step 1e-5.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Step used for coordinate `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares backward against central differences of `loss` at the given
/// (parameter, flat index) coordinates.
pub fn gradcheck<E, F>(store: &ParamStore, coords: &[(ParamId, usize)], loss: F) -> Result<GradCheckReport, E>
where
    E: From<crate::Error>,
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>, E>,
{
    let tape = Tape::new();
    let l = loss(&tape, store)?;
    let grads = tape.backward(l, store)?;
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let t = Tape::new();
        Ok(loss(&t, s)?.scalar())
    };
    let mut work = store.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &(id, k) in coords {
        let x = store.value(id).data[k];
        let h = fd_step(x);
        work.value_mut(id)[k] = x + h;
        let up = eval(&work)?;
        work.value_mut(id)[k] = x - h;
        let down = eval(&work)?;
        work.value_mut(id)[k] = x;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(id).data[k];
        out.push(CoordCheck { param: id, index: k, analytic, numeric, rel_error: relative_error(analytic, numeric) });
    }
    Ok(GradCheckReport { coords: out })
}

/// Every scalar coordinate of the store.
pub fn all_coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store.iter().flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k))).collect()
}
