use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::RngCore;

use super::layers::{BatchNorm, Conv2d, Dense, Dropout, Relu, ToSequence};
use super::lstm::{Lstm, LstmCell};
use super::{LayerSpec, Mode, NnError, Param, Result, Tensor};
use crate::seed::Rng;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    ToSequence(ToSequence),
    Lstm(Lstm),
    Dense(Dense),
    Dropout(Dropout),
    Relu(Relu),
}

impl Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::ToSequence(l) => l.forward(x),
            Layer::Lstm(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x),
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::ToSequence(l) => l.backward(grad),
            Layer::Lstm(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Conv2d(l) => l.params_mut(),
            Layer::BatchNorm(l) => l.params_mut(),
            Layer::Lstm(l) => l.cell.params_mut(),
            Layer::Dense(l) => l.params_mut(),
            Layer::ToSequence(_) | Layer::Dropout(_) | Layer::Relu(_) => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Conv2d(l) => l.params(),
            Layer::BatchNorm(l) => l.params(),
            Layer::Lstm(l) => l.cell.params(),
            Layer::Dense(l) => l.params(),
            Layer::ToSequence(_) | Layer::Dropout(_) | Layer::Relu(_) => Vec::new(),
        }
    }
}

/// A chain of layers with per-sample shape inference.
///
/// Parameter names are `l{index:02}.{name}` so that lexical order equals
/// layer order.
#[derive(Debug, Clone)]
pub struct Sequential {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

fn at_layer(index: usize, kind: &'static str, e: NnError) -> NnError {
    match e {
        NnError::KernelTooLarge { kernel, input, .. } => NnError::KernelTooLarge {
            layer: index,
            kind,
            kernel,
            input,
        },
        other => NnError::InvalidSpec(format!("layer {index} ({kind}): {other}")),
    }
}

impl Sequential {
    /// Build and shape-check a network for per-sample inputs of `input_shape`.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shapes = Vec::new();
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let kind = spec.kind();
            let (layer, out) = match *spec {
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                } => {
                    if stride != 1 || padding != 0 || filters == 0 || kernel_h == 0 || kernel_w == 0
                    {
                        return Err(at_layer(
                            i,
                            kind,
                            NnError::InvalidSpec(
                                "only stride 1, no padding, non-zero sizes".into(),
                            ),
                        ));
                    }
                    let channels = *shape.first().ok_or_else(|| {
                        at_layer(i, kind, NnError::InvalidSpec("empty input".into()))
                    })?;
                    let conv = Conv2d::new(channels, filters, kernel_h, kernel_w, rng);
                    let out = conv
                        .output_shape(&shape)
                        .map_err(|e| at_layer(i, kind, e))?;
                    (Layer::Conv2d(conv), out)
                }
                LayerSpec::BatchNorm { momentum, epsilon } => {
                    if !(0.0..=1.0).contains(&momentum) || epsilon <= 0.0 {
                        return Err(at_layer(
                            i,
                            kind,
                            NnError::InvalidSpec("momentum in [0,1], epsilon > 0".into()),
                        ));
                    }
                    let channels = *shape.first().ok_or_else(|| {
                        at_layer(i, kind, NnError::InvalidSpec("empty input".into()))
                    })?;
                    (
                        Layer::BatchNorm(BatchNorm::new(channels, momentum, epsilon)),
                        shape.clone(),
                    )
                }
                LayerSpec::ToSequence => {
                    let out = ToSequence::output_shape(&shape).map_err(|e| at_layer(i, kind, e))?;
                    (Layer::ToSequence(ToSequence::default()), out)
                }
                LayerSpec::Lstm {
                    hidden,
                    return_sequences,
                } => {
                    if hidden == 0 || shape.len() != 2 {
                        return Err(at_layer(
                            i,
                            kind,
                            NnError::ShapeMismatch {
                                context: "lstm expects [T, D] input".into(),
                                expected: alloc::vec![0, 0],
                                got: shape.clone(),
                            },
                        ));
                    }
                    let lstm = Lstm::new(LstmCell::new(shape[1], hidden, rng), return_sequences);
                    let out = lstm
                        .output_shape(&shape)
                        .map_err(|e| at_layer(i, kind, e))?;
                    (Layer::Lstm(lstm), out)
                }
                LayerSpec::Dense { units } => {
                    let inputs = *shape.last().ok_or_else(|| {
                        at_layer(i, kind, NnError::InvalidSpec("empty input".into()))
                    })?;
                    if units == 0 {
                        return Err(at_layer(
                            i,
                            kind,
                            NnError::InvalidSpec("units must be ≥ 1".into()),
                        ));
                    }
                    let dense = Dense::new(inputs, units, rng);
                    let out = dense
                        .output_shape(&shape)
                        .map_err(|e| at_layer(i, kind, e))?;
                    (Layer::Dense(dense), out)
                }
                LayerSpec::Dropout { rate } => {
                    let d = Dropout::new(rate, rng.next_u64()).map_err(|e| at_layer(i, kind, e))?;
                    (Layer::Dropout(d), shape.clone())
                }
                LayerSpec::Relu => (Layer::Relu(Relu::default()), shape.clone()),
                LayerSpec::Softmax => {
                    if i + 1 != specs.len() {
                        return Err(at_layer(
                            i,
                            kind,
                            NnError::InvalidSpec("softmax must be the final layer".into()),
                        ));
                    }
                    shapes.push(shape.clone());
                    break;
                }
            };
            layers.push(layer);
            shapes.push(out.clone());
            shape = out;
        }
        Ok(Sequential {
            input_shape: input_shape.to_vec(),
            specs: specs.to_vec(),
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Per-sample output shape after each spec entry.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Forward pass over a batch `[B, ..input_shape]`; returns logits.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        // a recurrent first layer accepts any sequence length
        let fixed = if matches!(self.layers.first(), Some(Layer::Lstm(_))) {
            2
        } else {
            1
        };
        if x.shape().len() != self.input_shape.len() + 1
            || x.shape()[fixed..] != self.input_shape[fixed - 1..]
        {
            let mut expected = alloc::vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                context: "network input".into(),
                expected,
                got: x.shape().to_vec(),
            });
        }
        let mut iter = self.layers.iter_mut();
        let mut cur = match iter.next() {
            Some(first) => first.forward(x, mode)?,
            None => return Ok(x.clone()),
        };
        for layer in iter {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    /// Backpropagate `grad` (w.r.t. the logits), accumulating parameter
    /// gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, p) in layer.params_mut() {
                out.push((format!("l{i:02}.{name}"), p));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in layer.params() {
                out.push((format!("l{i:02}.{name}"), p));
            }
        }
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("l{i:02}.running_mean"), &bn.running_mean));
                out.push((format!("l{i:02}.running_var"), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("l{i:02}.running_mean"), &mut bn.running_mean));
                out.push((format!("l{i:02}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    /// Every parameter and buffer value by name, in name order.
    pub fn state(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, p) in self.params() {
            out.insert(name, p.value.data().to_vec());
        }
        for (name, t) in self.buffers() {
            out.insert(name, t.data().to_vec());
        }
        out
    }

    /// Overwrite parameters and buffers from [`Sequential::state`] output.
    /// Every name must be present with the right length; extras are errors.
    pub fn load_state(&mut self, state: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        fn copy_into(
            state: &BTreeMap<String, Vec<f64>>,
            name: String,
            t: &mut Tensor,
        ) -> Result<()> {
            let v = state
                .get(&name)
                .ok_or_else(|| NnError::InvalidSpec(format!("state is missing {name}")))?;
            if v.len() != t.len() {
                return Err(NnError::ShapeMismatch {
                    context: name,
                    expected: t.shape().to_vec(),
                    got: alloc::vec![v.len()],
                });
            }
            t.data_mut().copy_from_slice(v);
            Ok(())
        }
        let expected = self.params().len() + self.buffers().len();
        if expected != state.len() {
            return Err(NnError::InvalidSpec(format!(
                "state has {} entries, network uses {expected}",
                state.len()
            )));
        }
        for (name, p) in self.params_mut() {
            copy_into(state, name, &mut p.value)?;
        }
        for (name, t) in self.buffers_mut() {
            copy_into(state, name, t)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}
