//! Parameterized building blocks recorded onto a [`Graph`].

use rand::Rng;

use crate::error::{mismatch, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_init(format!("{name}.weight"), &[cout, cin, kernel, kernel], cin * kernel * kernel, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[cout]);
        Conv2dLayer {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    /// Padding `kernel / 2`, which preserves size for odd kernels at stride 1.
    pub fn same<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut R) -> Self {
        Self::new(store, name, cin, cout, kernel, 1, kernel / 2, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvTranspose2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        // Each output pixel sees roughly cin * (k/stride)^2 inputs.
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        let weight = store.add_init(format!("{name}.weight"), &[cin, cout, kernel, kernel], fan_in, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[cout]);
        ConvTranspose2dLayer {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl LinearLayer {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        let weight = store.add_init(format!("{name}.weight"), &[dout, din], din, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[dout]);
        LinearLayer { weight, bias, din, dout }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearLayer::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x)?;
            if i < last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// Recurrent state of a [`ConvLstmCell`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

/// Convolutional LSTM with gates `[i, f, o, g]` computed by one convolution
/// over `input ++ hidden`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvLstmCell {
    pub gates: Conv2dLayer,
    pub input_channels: usize,
    pub hidden_channels: usize,
}

impl ConvLstmCell {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let gates = Conv2dLayer::same(store, &format!("{name}.gates"), input_channels + hidden_channels, 4 * hidden_channels, kernel, rng);
        ConvLstmCell {
            gates,
            input_channels,
            hidden_channels,
        }
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<'_, T>, batch: usize, h: usize, w: usize) -> LstmState {
        let hidden = g.constant(crate::Tensor::zeros(&[batch, self.hidden_channels, h, w]));
        let cell = g.constant(crate::Tensor::zeros(&[batch, self.hidden_channels, h, w]));
        LstmState { hidden, cell }
    }

    /// One step. `injection` is added to the gate pre-activations and is either
    /// `[n, 4*hidden, h, w]` or `[n, 4*hidden]` (broadcast over space).
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, input: Var, state: LstmState, injection: Option<Var>) -> Result<LstmState> {
        let hs = g.shape(state.hidden).to_vec();
        let is = g.shape(input).to_vec();
        if is.len() != 4 || is[0] != hs[0] || is[2..] != hs[2..] || is[1] != self.input_channels {
            return Err(mismatch("conv_lstm_step", &is, &hs));
        }
        let x = g.concat(&[input, state.hidden], 1)?;
        let mut pre = self.gates.forward(g, x)?;
        if let Some(inj) = injection {
            let s = g.shape(inj).to_vec();
            pre = if s.len() == 4 {
                if s[2..] != hs[2..] || s[1] != 4 * self.hidden_channels {
                    return Err(mismatch("conv_lstm_step injection", &s, &hs));
                }
                g.add(pre, inj)?
            } else {
                if s.len() != 2 || s[1] != 4 * self.hidden_channels {
                    return Err(mismatch("conv_lstm_step injection", &s, &hs));
                }
                g.add_broadcast(pre, inj)?
            };
        }
        let c = self.hidden_channels;
        let i = g.slice(pre, 1, 0, c)?;
        let f = g.slice(pre, 1, c, c)?;
        let o = g.slice(pre, 1, 2 * c, c)?;
        let gg = g.slice(pre, 1, 3 * c, c)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let o = g.sigmoid(o)?;
        let gg = g.tanh(gg)?;
        let fc = g.mul(f, state.cell)?;
        let ig = g.mul(i, gg)?;
        let cell = g.add(fc, ig)?;
        let tc = g.tanh(cell)?;
        let hidden = g.mul(o, tc)?;
        Ok(LstmState { hidden, cell })
    }
}
