//! Parameter groups for the layers the models use. Each layer owns
//! [`ParamId`]s into a [`ParamStore`]; `bind` turns them into graph leaves
//! once per forward pass so repeated application shares one leaf.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;
use crate::error::Result;

/// Affine map `x · W + b` with `W` of shape `in × out`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xw = g.matmul(x, weight)?;
    g.add_row(xw, bias)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_glorot(format!("{name}/w"), in_dim, out_dim, rng)?;
        let bias = store.add_const(format!("{name}/b"), 1, out_dim, 0.0)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> BoundLinear {
        BoundLinear {
            weight: g.param(store, self.weight),
            bias: g.param(store, self.bias),
        }
    }
}

impl BoundLinear {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        linear(g, x, self.weight, self.bias)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<BoundLinear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}/l{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g, store)).collect(),
        }
    }
}

impl BoundMlp {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = layer.forward(g, h)?;
        }
        Ok(h)
    }
}

/// LSTM cell with gate layout `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden: usize,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_input = store.add_glorot(format!("{name}/w_x"), input_dim, 4 * hidden, rng)?;
        let w_hidden = store.add_glorot(format!("{name}/w_h"), hidden, 4 * hidden, rng)?;
        let bias = store.add_const(format!("{name}/b"), 1, 4 * hidden, 0.0)?;
        let forget = T::from_f64_lossy(FORGET_BIAS_INIT);
        store.get_mut(bias).value.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = forget);
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> BoundLstm {
        BoundLstm {
            w_input: g.param(store, self.w_input),
            w_hidden: g.param(store, self.w_hidden),
            bias: g.param(store, self.bias),
            hidden: self.hidden,
        }
    }
}

impl BoundLstm {
    /// Input contribution `x · W_x + b`, reusable across steps when `x` is fixed.
    pub fn project_input<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.w_input)?;
        g.add_row(xw, self.bias)
    }

    /// One cell update given an input projection that already includes the bias.
    pub fn step_projected<T: Scalar>(&self, g: &mut Graph<T>, x_proj: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let pre = g.matmul_add(h, self.w_hidden, x_proj)?;
        let hc = g.lstm_pointwise(pre, c)?;
        let h_next = g.slice_cols(hc, 0, self.hidden)?;
        let c_next = g.slice_cols(hc, self.hidden, self.hidden)?;
        Ok((h_next, c_next))
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xp = self.project_input(g, x)?;
        self.step_projected(g, xp, h, c)
    }
}

/// Graph-level `lstm_cell(input, h_prev, c_prev, params) -> (h, c)`.
pub fn lstm_cell<T: Scalar>(g: &mut Graph<T>, input: Var, h_prev: Var, c_prev: Var, cell: &BoundLstm) -> Result<(Var, Var)> {
    if g.shape(h_prev) != g.shape(c_prev) || g.shape(h_prev)[1] != cell.hidden {
        return Err(crate::error::Error::shape("lstm_cell", g.shape(h_prev), g.shape(c_prev)));
    }
    cell.step(g, input, h_prev, c_prev)
}
