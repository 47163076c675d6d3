use rand::Rng;

use crate::{shape_err, Result, Tape, Tensor, Var};

/// Gated recurrent unit.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    input: usize,
    hidden: usize,
    // order: w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h
    params: Vec<Tensor>,
}

const NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

/// A [`GruCell`] bound to a tape.
#[derive(Debug, Clone)]
pub struct GruVars {
    hidden: usize,
    input: usize,
    vars: Vec<Var>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        // fan-in of a gate is the concatenated [x, h] width
        let fan_in = input + hidden;
        let mut params = Vec::with_capacity(9);
        for _ in 0..3 {
            params.push(Tensor::init_uniform(&[hidden, input], fan_in, rng));
            params.push(Tensor::init_uniform(&[hidden, hidden], fan_in, rng));
            params.push(Tensor::init_uniform(&[hidden], fan_in, rng));
        }
        Self {
            input,
            hidden,
            params,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let mut params = Vec::with_capacity(9);
        for _ in 0..3 {
            params.push(Tensor::zeros(&[hidden, input]));
            params.push(Tensor::zeros(&[hidden, hidden]));
            params.push(Tensor::zeros(&[hidden]));
        }
        Self {
            input,
            hidden,
            params,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        NAMES.iter().copied().zip(self.params.iter()).collect()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Rebuild from tensors in `named_params` order, validating shapes.
    pub fn from_params(input: usize, hidden: usize, params: Vec<Tensor>) -> Result<Self> {
        let expected = Self::zeros(input, hidden);
        if params.len() != 9
            || params
                .iter()
                .zip(expected.params.iter())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(shape_err("gru", format!("bad parameter set for {input}->{hidden}")));
        }
        Ok(Self {
            input,
            hidden,
            params,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GruVars {
        GruVars {
            hidden: self.hidden,
            input: self.input,
            vars: self.params.iter().map(|p| tape.leaf(p, trainable)).collect(),
        }
    }

    /// One step without recording gradients for parameters.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant_vec(x.to_vec())?;
        let hv = tape.constant_vec(h.to_vec())?;
        let out = vars.step(&mut tape, xv, hv)?;
        Ok(tape.value(out).to_vec())
    }
}

impl GruVars {
    /// Wrap vars already on a tape, in [`GruCell::named_params`] order.
    /// Shapes are checked on each step.
    pub fn from_vars(input: usize, hidden: usize, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != 9 {
            return Err(shape_err("gru", format!("expected 9 parameter vars, got {}", vars.len())));
        }
        Ok(Self { hidden, input, vars })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn gate(&self, tape: &mut Tape, k: usize, x: Var, h: Var) -> Result<Var> {
        let wx = tape.matvec(self.vars[3 * k], x)?;
        let uh = tape.matvec(self.vars[3 * k + 1], h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, self.vars[3 * k + 2])
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        if tape.shape(x) != [self.input] || tape.shape(h) != [self.hidden] {
            return Err(shape_err(
                "gru_step",
                format!(
                    "cell {}->{} given x {:?}, h {:?}",
                    self.input,
                    self.hidden,
                    tape.shape(x),
                    tape.shape(h)
                ),
            ));
        }
        let z_pre = self.gate(tape, 0, x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = self.gate(tape, 1, x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let cand_pre = self.gate(tape, 2, x, rh)?;
        let cand = tape.tanh(cand_pre)?;
        // h + z * (h~ - h)
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }
}
