//! Representation network and classification head.
//!
//! The encoder is an MLP: affine layers with relu between them and no
//! nonlinearity after the last one, so features range over all of `R^p`.
//! The head is a single affine map followed by a row softmax.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diffcore::{Gradients, NodeId, Tape};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Rng, Tensor};

/// Layer widths of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, hidden: Vec<usize>, feature: usize, classes: usize) -> Result<Self> {
        let d = Self {
            input,
            hidden,
            feature,
            classes,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.feature == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(d_in, d_out)` for every encoder layer in order.
    pub fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.feature);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Weight `d_in x d_out` and bias `d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }
}

/// Encoder layers plus the classification head.
///
/// The same type carries gradients and optimizer velocity, which always
/// mirror the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Vec<Affine>,
    pub head: Affine,
}

impl ModelParams {
    pub fn zeros(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            encoder: dims
                .encoder_shapes()
                .into_iter()
                .map(|(i, o)| Affine::zeros(i, o))
                .collect(),
            head: Affine::zeros(dims.feature, dims.classes),
            dims: dims.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims).expect("dims were validated at construction")
    }

    /// Every tensor in declaration order: encoder layers (weight, bias), then head.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(core::iter::once(&self.head))
            .flat_map(|a| [&a.weight, &a.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(core::iter::once(&mut self.head))
            .flat_map(|a| [&mut a.weight, &mut a.bias])
            .collect()
    }

    /// Name of the `i`-th tensor of [`ModelParams::tensors`].
    pub fn tensor_name(&self, i: usize) -> String {
        let layer = i / 2;
        let part = if i % 2 == 0 { "weight" } else { "bias" };
        if layer < self.encoder.len() {
            format!("encoder.{layer}.{part}")
        } else {
            format!("head.{part}")
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// All entries concatenated in [`ModelParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn from_flat(dims: &ModelDims, flat: &[f64]) -> Result<Self> {
        let mut out = Self::zeros(dims)?;
        if flat.len() != out.num_values() {
            return Err(shape_err(
                "ModelParams::from_flat",
                &[out.num_values()],
                &[flat.len()],
            ));
        }
        let mut rest = flat;
        for t in out.tensors_mut() {
            let (head, tail) = rest.split_at(t.numel());
            t.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(out)
    }

    /// Checks that layer shapes chain and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let shapes = self.dims.encoder_shapes();
        if shapes.len() != self.encoder.len() {
            return Err(Error::Config(format!(
                "{} encoder layers for dims {:?}",
                self.encoder.len(),
                self.dims
            )));
        }
        let expected = shapes
            .into_iter()
            .chain(core::iter::once((self.dims.feature, self.dims.classes)));
        let layers = self.encoder.iter().chain(core::iter::once(&self.head));
        for ((d_in, d_out), layer) in expected.zip(layers) {
            if layer.weight.shape() != [d_in, d_out] || layer.bias.numel() != d_out {
                return Err(shape_err(
                    "ModelParams",
                    layer.weight.shape(),
                    &[d_in, d_out],
                ));
            }
        }
        for (i, t) in self.tensors().into_iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFinite(self.tensor_name(i)));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        let mut leaf = |a: &Affine| -> Result<(NodeId, NodeId)> {
            Ok((tape.leaf(a.weight.clone())?, tape.leaf(a.bias.clone())?))
        };
        let encoder = self
            .encoder
            .iter()
            .map(&mut leaf)
            .collect::<Result<Vec<_>>>()?;
        let head = leaf(&self.head)?;
        Ok(BoundModel {
            input: self.dims.input,
            feature: self.dims.feature,
            encoder,
            head,
        })
    }
}

/// He-style initialization: weights `N(0, 2 / d_in)`, zero biases.
pub fn init_params(rng: &mut Rng, dims: &ModelDims) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(dims)?;
    for layer in params
        .encoder
        .iter_mut()
        .chain(core::iter::once(&mut params.head))
    {
        let d_in = layer.weight.shape()[0];
        let std = libm::sqrt(2.0 / d_in as f64);
        layer
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = std * rng.normal());
    }
    Ok(params)
}

/// Parameter leaves of a [`ModelParams`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    input: usize,
    feature: usize,
    encoder: Vec<(NodeId, NodeId)>,
    head: (NodeId, NodeId),
}

impl BoundModel {
    /// `n x d` inputs to `n x p` features.
    pub fn encode(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let xv = tape.value(x);
        if xv.rank() != 2 || xv.cols() != self.input {
            return Err(shape_err("encode", xv.shape(), &[xv.rows(), self.input]));
        }
        let mut h = x;
        let last = self.encoder.len() - 1;
        for (i, &(w, b)) in self.encoder.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add_row(lin, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// `n x p` features to `n x c` logits.
    pub fn logits(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let zv = tape.value(z);
        if zv.rank() != 2 || zv.cols() != self.feature {
            return Err(shape_err(
                "classify",
                zv.shape(),
                &[zv.rows(), self.feature],
            ));
        }
        let lin = tape.matmul(z, self.head.0)?;
        tape.add_row(lin, self.head.1)
    }

    /// Class distributions `row_softmax(logits, temperature)`.
    pub fn classify(&self, tape: &mut Tape, z: NodeId, temperature: f64) -> Result<NodeId> {
        let logits = self.logits(tape, z)?;
        tape.row_softmax(logits, temperature)
    }

    /// Collects parameter adjoints into a params-shaped gradient.
    pub fn gradients(&self, grads: &Gradients, like: &ModelParams) -> ModelParams {
        let mut out = like.zeros_like();
        let pairs = self.encoder.iter().chain(core::iter::once(&self.head));
        let layers = out
            .encoder
            .iter_mut()
            .chain(core::iter::once(&mut out.head));
        for (&(w, b), layer) in pairs.zip(layers) {
            if let Some(g) = grads.get(w) {
                layer.weight = g.clone();
            }
            if let Some(g) = grads.get(b) {
                layer.bias = g
                    .clone()
                    .reshape(layer.bias.shape())
                    .expect("bias adjoint matches bias");
            }
        }
        out
    }
}

/// Features of `x` (`n x d`, or images which are flattened per sample).
pub fn encode(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let xi = tape.leaf(x.clone().flatten_rows())?;
    let z = bound.encode(&mut tape, xi)?;
    Ok(tape.value(z).clone())
}

/// Class distributions for features `z`.
pub fn classify(params: &ModelParams, z: &Tensor, temperature: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let zi = tape.leaf(z.clone())?;
    let q = bound.classify(&mut tape, zi, temperature)?;
    Ok(tape.value(q).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn dims() -> ModelDims {
        ModelDims::new(4, vec![8], 3, 2).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let p = init_params(&mut Rng::new(5), &dims()).unwrap();
        let shapes: Vec<&[usize]> = p.tensors().iter().map(|t| t.shape()).collect();
        assert_eq!(
            shapes,
            vec![&[4, 8][..], &[8], &[8, 3], &[3], &[3, 2], &[2]]
        );
        assert_eq!(p, init_params(&mut Rng::new(5), &dims()).unwrap());
        assert_ne!(p, init_params(&mut Rng::new(6), &dims()).unwrap());
        p.validate().unwrap();
        assert_eq!(p.tensor_name(3), "encoder.1.bias");
        assert_eq!(p.tensor_name(4), "head.weight");
    }

    #[test]
    fn init_std_matches_he_scale() {
        let d = ModelDims::new(50, vec![], 200, 2).unwrap();
        let p = init_params(&mut Rng::new(9), &d).unwrap();
        let w = p.encoder[0].weight.data();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let target = libm::sqrt(2.0 / 50.0);
        assert!((libm::sqrt(var) - target).abs() < 0.1 * target);
    }

    #[test]
    fn zero_dim_is_config_error() {
        assert!(matches!(
            ModelDims::new(0, vec![], 2, 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ModelDims::new(3, vec![0], 2, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_params_give_zero_features_and_uniform_classes() {
        let p = ModelParams::zeros(&dims()).unwrap();
        let x = Tensor::full(&[5, 4], 0.7);
        let z = encode(&p, &x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let q = classify(&p, &z, 1.0).unwrap();
        assert!(q.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let d = ModelDims::new(3, vec![], 3, 2).unwrap();
        let mut p = ModelParams::zeros(&d).unwrap();
        p.encoder[0].weight = Tensor::eye(3);
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]).unwrap();
        assert_eq!(encode(&p, &x).unwrap(), x);
    }

    #[test]
    fn dominant_logit_saturates() {
        let d = ModelDims::new(1, vec![], 1, 3).unwrap();
        let mut p = ModelParams::zeros(&d).unwrap();
        p.head.bias = Tensor::new(&[3], vec![0.0, 100.0, 0.0]).unwrap();
        let q = classify(&p, &Tensor::zeros(&[1, 1]), 1.0).unwrap();
        assert!(q.data()[1] > 1.0 - 1e-10);
    }

    #[test]
    fn rows_are_encoded_independently() {
        let mut rng = Rng::new(3);
        let p = init_params(&mut rng, &ModelDims::new(6, vec![7, 5], 4, 3).unwrap()).unwrap();
        let x = Tensor::new(&[9, 6], (0..54).map(|_| rng.normal()).collect()).unwrap();
        let perm = [4, 0, 8, 2, 7, 1, 3, 6, 5];
        let z = encode(&p, &x).unwrap();
        let zp = encode(&p, &x.select_rows(&perm).unwrap()).unwrap();
        assert_eq!(zp, z.select_rows(&perm).unwrap());
        let q = classify(&p, &z, 1.0).unwrap();
        for i in 0..q.rows() {
            assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch() {
        let p = ModelParams::zeros(&dims()).unwrap();
        assert!(matches!(
            encode(&p, &Tensor::zeros(&[2, 5])),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            classify(&p, &Tensor::zeros(&[2, 4]), 1.0),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            classify(&p, &Tensor::zeros(&[2, 3]), 0.0),
            Err(Error::Domain(_))
        ));
    }
}
