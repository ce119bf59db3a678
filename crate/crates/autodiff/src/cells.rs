//! Linear layer, LSTM and GRU cells over 1 × n row vectors.

use rand::Rng;

use crate::error::Result;
use crate::params::{Group, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn uniform(rows: usize, cols: usize, k: f64, rng: &mut impl Rng) -> Tensor {
    Tensor { rows, cols, data: (0..rows * cols).map(|_| rng.gen_range(-k..=k)).collect() }
}

/// Parameter shapes and init for one layer; `k` is the uniform init bound.
fn register(
    store: &mut ParamStore,
    name: &str,
    shapes: &[(&str, usize, usize)],
    k: f64,
    group: Group,
    weight_decay: f64,
    rng: &mut impl Rng,
) -> Result<Vec<ParamId>> {
    shapes
        .iter()
        .map(|(suffix, r, c)| store.add(format!("{name}.{suffix}"), uniform(*r, *c, k, rng), group, weight_decay))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        group: Group,
        weight_decay: f64,
        rng: &mut impl Rng,
    ) -> Result<Linear> {
        let k = 1.0 / (inputs as f64).sqrt();
        let ids = register(store, name, &[("w", inputs, outputs), ("b", 1, outputs)], k, group, weight_decay, rng)?;
        Ok(Linear { w: ids[0], b: ids[1] })
    }

    pub fn from_ids(store: &ParamStore, name: &str) -> Result<Linear> {
        Ok(Linear { w: store.id(&format!("{name}.w"))?, b: store.id(&format!("{name}.b"))? })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> LinearVars<'t> {
        LinearVars { w: tape.param(store, self.w), b: tape.param(store, self.b) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> LinearVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.w)?.add(self.b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars<'t> {
    pub w: Var<'t>,
    pub u: Var<'t>,
    pub b: Var<'t>,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        group: Group,
        weight_decay: f64,
        rng: &mut impl Rng,
    ) -> Result<LstmLayer> {
        let k = 1.0 / (hidden as f64).sqrt();
        let shapes = [("w", inputs, 4 * hidden), ("u", hidden, 4 * hidden), ("b", 1, 4 * hidden)];
        let ids = register(store, name, &shapes, k, group, weight_decay, rng)?;
        Ok(LstmLayer { w: ids[0], u: ids[1], b: ids[2], hidden })
    }

    pub fn from_ids(store: &ParamStore, name: &str) -> Result<LstmLayer> {
        let u = store.id(&format!("{name}.u"))?;
        Ok(LstmLayer {
            w: store.id(&format!("{name}.w"))?,
            u,
            b: store.id(&format!("{name}.b"))?,
            hidden: store.value(u).rows,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> LstmVars<'t> {
        LstmVars {
            w: tape.param(store, self.w),
            u: tape.param(store, self.u),
            b: tape.param(store, self.b),
            hidden: self.hidden,
        }
    }
}

/// One LSTM step. Gate order in the packed weights: input, forget,
/// candidate, output.
pub fn lstm_cell<'t>(x: Var<'t>, h: Var<'t>, c: Var<'t>, p: &LstmVars<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let n = p.hidden;
    let z = x.matmul(p.w)?.add(h.matmul(p.u)?)?.add(p.b)?;
    let i = z.slice_cols(0, n)?.sigmoid();
    let f = z.slice_cols(n, n)?.sigmoid();
    let g = z.slice_cols(2 * n, n)?.tanh();
    let o = z.slice_cols(3 * n, n)?.sigmoid();
    let c2 = f.mul(c)?.add(i.mul(g)?)?;
    let h2 = o.mul(c2.tanh())?;
    Ok((h2, c2))
}

/// Stack of LSTM layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

impl Lstm {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        n_layers: usize,
        group: Group,
        weight_decay: f64,
        rng: &mut impl Rng,
    ) -> Result<Lstm> {
        let layers = (0..n_layers)
            .map(|l| {
                let n_in = if l == 0 { inputs } else { hidden };
                LstmLayer::new(store, &format!("{name}.l{l}"), n_in, hidden, group, weight_decay, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Lstm { layers })
    }

    pub fn from_ids(store: &ParamStore, name: &str, n_layers: usize) -> Result<Lstm> {
        let layers =
            (0..n_layers).map(|l| LstmLayer::from_ids(store, &format!("{name}.l{l}"))).collect::<Result<_>>()?;
        Ok(Lstm { layers })
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Vec<LstmVars<'t>> {
        self.layers.iter().map(|l| l.bind(tape, store)).collect()
    }

    /// Zero (h, c) per layer.
    pub fn zero_state<'t>(&self, tape: &'t Tape) -> Vec<(Var<'t>, Var<'t>)> {
        self.layers
            .iter()
            .map(|l| (tape.constant(Tensor::zeros(1, l.hidden)), tape.constant(Tensor::zeros(1, l.hidden))))
            .collect()
    }
}

/// One step through every layer; returns the top layer's output.
pub fn lstm_stack_step<'t>(x: Var<'t>, state: &mut [(Var<'t>, Var<'t>)], layers: &[LstmVars<'t>]) -> Result<Var<'t>> {
    let mut input = x;
    for (s, p) in state.iter_mut().zip(layers) {
        let (h, c) = lstm_cell(input, s.0, s.1, p)?;
        *s = (h, c);
        input = h;
    }
    Ok(input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars<'t> {
    pub w: Var<'t>,
    pub u: Var<'t>,
    pub b: Var<'t>,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        group: Group,
        weight_decay: f64,
        rng: &mut impl Rng,
    ) -> Result<GruLayer> {
        let k = 1.0 / (hidden as f64).sqrt();
        let shapes = [("w", inputs, 3 * hidden), ("u", hidden, 3 * hidden), ("b", 1, 3 * hidden)];
        let ids = register(store, name, &shapes, k, group, weight_decay, rng)?;
        Ok(GruLayer { w: ids[0], u: ids[1], b: ids[2], hidden })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> GruVars<'t> {
        GruVars {
            w: tape.param(store, self.w),
            u: tape.param(store, self.u),
            b: tape.param(store, self.b),
            hidden: self.hidden,
        }
    }
}

/// One GRU step with gate order reset, update, candidate:
/// h' = (1 − u)·h + u·tanh(x W_n + r ⊙ (h U_n) + b_n).
pub fn gru_cell<'t>(x: Var<'t>, h: Var<'t>, p: &GruVars<'t>) -> Result<Var<'t>> {
    let n = p.hidden;
    let xw = x.matmul(p.w)?.add(p.b)?;
    let hu = h.matmul(p.u)?;
    let r = xw.slice_cols(0, n)?.add(hu.slice_cols(0, n)?)?.sigmoid();
    let u = xw.slice_cols(n, n)?.add(hu.slice_cols(n, n)?)?.sigmoid();
    let cand = xw.slice_cols(2 * n, n)?.add(r.mul(hu.slice_cols(2 * n, n)?)?)?.tanh();
    h.add(u.mul(cand.sub(h)?)?)
}
