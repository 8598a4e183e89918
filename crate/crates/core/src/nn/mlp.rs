use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{matmul_nt, Tensor};
use crate::error::{shape_err, Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat, ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound(self.values.iter().map(|v| tape.leaf(v.clone(), requires_grad)).collect())
    }
}

/// Tape handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Dense layer `activation(x·Wᵀ + b)` with `W` stored `out×in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl MlpLayer {
    /// Kaiming-uniform fan-in weights (negative slope √5, bound `1/√fan_in`), zero bias.
    pub fn kaiming<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = libm::sqrt(1.0 / in_dim as f64);
        let w = Tensor::from_vec(out_dim, in_dim, (0..out_dim * in_dim).map(|_| rng.random_range(-bound..bound)).collect());
        Self::with_values(store, name, w, Tensor::zeros(1, out_dim), activation)
    }

    /// Registers explicit weights (`out×in`) and bias (`1×out`).
    pub fn with_values(store: &mut ParamStore, name: &str, weight: Tensor, bias: Tensor, activation: Activation) -> Self {
        assert_eq!(bias.shape(), [1, weight.rows()], "bias must be 1 x out");
        let (out_dim, in_dim) = (weight.rows(), weight.cols());
        let weight = store.add(alloc::format!("{name}.weight"), weight);
        let bias = store.add(alloc::format!("{name}.bias"), bias);
        Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn record(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.in_dim {
            return Err(shape_err(alloc::format!("n x {}", self.in_dim), alloc::format!("n x {cols}")));
        }
        let lin = tape.matmul_nt(x, params.var(self.weight));
        let pre = tape.add_row(lin, params.var(self.bias));
        Ok(match self.activation {
            Activation::Relu => tape.relu(pre),
            Activation::Tanh => tape.tanh(pre),
            Activation::None => pre,
        })
    }
}

/// Evaluates one layer on plain values, without recording.
pub fn forward_mlp(store: &ParamStore, layer: &MlpLayer, x: &Tensor) -> Result<Tensor> {
    if x.cols() != layer.in_dim {
        return Err(shape_err(alloc::format!("n x {}", layer.in_dim), alloc::format!("{}x{}", x.rows(), x.cols())));
    }
    let mut out = matmul_nt(x, store.get(layer.weight));
    let b = store.get(layer.bias);
    for r in 0..out.rows() {
        for (o, &bb) in out.row_slice_mut(r).iter_mut().zip(b.data()) {
            let v = *o + bb;
            *o = match layer.activation {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => libm::tanh(v),
                Activation::None => v,
            };
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite { op: "forward_mlp", node: 0 });
    }
    Ok(out)
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

impl Mlp {
    /// ReLU between layers, no activation on the output.
    pub fn kaiming<R: Rng>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::None } else { Activation::Relu };
                MlpLayer::kaiming(store, &alloc::format!("{name}.{i}"), widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn record(&self, tape: &mut Tape, params: &Bound, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.record(tape, params, x)?;
        }
        Ok(x)
    }

    pub fn last(&self) -> &MlpLayer {
        &self.layers[self.layers.len() - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let mut store = ParamStore::new();
        let l = MlpLayer::with_values(&mut store, "id", Tensor::identity(3), Tensor::zeros(1, 3), Activation::None);
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]]);
        assert_eq!(forward_mlp(&store, &l, &x).unwrap(), x);
    }

    #[test]
    fn relu_clips_negative() {
        let mut store = ParamStore::new();
        let l = MlpLayer::with_values(&mut store, "id", Tensor::identity(2), Tensor::zeros(1, 2), Activation::Relu);
        let out = forward_mlp(&store, &l, &Tensor::row(&[-1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let l = MlpLayer::with_values(&mut store, "id", Tensor::identity(2), Tensor::zeros(1, 2), Activation::None);
        assert!(matches!(forward_mlp(&store, &l, &Tensor::row(&[1.0, 2.0, 3.0])), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matches_triple_loop_and_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let l = MlpLayer::kaiming(&mut store, "l", 5, 4, Activation::Relu, &mut rng);
        store.get_mut(l.bias).data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let x = Tensor::from_vec(6, 5, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect());
        let out = forward_mlp(&store, &l, &x).unwrap();
        let w = store.get(l.weight);
        let b = store.get(l.bias);
        for r in 0..6 {
            for o in 0..4 {
                let mut s = b.get(0, o);
                for i in 0..5 {
                    s += w.get(o, i) * x.get(r, i);
                }
                assert!((out.get(r, o) - s.max(0.0)).abs() < 1e-12);
            }
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x);
        let y = l.record(&mut tape, &bound, xv).unwrap();
        assert_eq!(tape.value(y), &out);
    }
}
