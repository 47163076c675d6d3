use rand::Rng;

use crate::{shape_err, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(v),
            Activation::Relu => tape.relu(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Tanh => tape.tanh(v),
        }
    }
}

/// Affine map `W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::init_uniform(&[output, input], input, rng),
            bias: Tensor::init_uniform(&[output], input, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.rows()] {
            return Err(shape_err(
                "linear",
                format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        LinearVars {
            weight: tape.leaf(&self.weight, trainable),
            bias: tape.leaf(&self.bias, trainable),
        }
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let wx = tape.matvec(self.weight, x)?;
        tape.add(wx, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Multilayer perceptron: rectifier on hidden layers, configurable output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    output: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<LinearVars>,
    output: Activation,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`, sigmoid on the final layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(shape_err("mlp", format!("invalid layer sizes {:?}", sizes)));
        }
        let layers = sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Ok(Self {
            layers,
            output: Activation::Sigmoid,
        })
    }

    pub fn from_layers(layers: Vec<Linear>, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err("mlp", "no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(shape_err(
                    "mlp",
                    format!(
                        "layer output {} feeds input {}",
                        pair[0].output_size(),
                        pair[1].input_size()
                    ),
                ));
            }
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
            output: self.output,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant_vec(x.to_vec())?;
        let y = vars.forward(&mut tape, xv)?;
        Ok(tape.value(y).to_vec())
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let expected = tape.shape(self.layers[0].weight)[1];
        if tape.shape(x) != [expected] {
            return Err(shape_err(
                "mlp_forward",
                format!("expected input [{expected}], got {:?}", tape.shape(x)),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.forward(tape, h)?;
            h = if i == last {
                self.output.apply(tape, a)?
            } else {
                tape.relu(a)?
            };
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mlp_outputs_one_half() {
        let m = Mlp::from_layers(
            vec![Linear::zeros(3, 5), Linear::zeros(5, 2)],
            Activation::Sigmoid,
        )
        .unwrap();
        assert_eq!(m.forward(&[1.0, -4.0, 9.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn large_bias_saturates() {
        let mut layer = Linear::zeros(2, 2);
        layer.weight = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        layer.bias = Tensor::vector(vec![40.0, 40.0]);
        let m = Mlp::from_layers(vec![layer], Activation::Sigmoid).unwrap();
        let out = m.forward(&[0.3, -0.2]).unwrap();
        assert!(out.iter().all(|p| *p > 1.0 - 1e-12 && *p <= 1.0));
    }

    #[test]
    fn mismatched_layers_rejected() {
        assert!(Mlp::from_layers(vec![Linear::zeros(3, 4), Linear::zeros(5, 1)], Activation::Sigmoid).is_err());
        let m = Mlp::from_layers(vec![Linear::zeros(3, 1)], Activation::Sigmoid).unwrap();
        assert!(m.forward(&[1.0]).is_err());
    }
}
