//! Recurrent reference chain: two convolutional LSTMs carrying a spatial
//! memory of reconstructed frames and a temporal memory of their features.

use ltvc_tensor::nn::{Conv2d, LEAKY_SLOPE};
use ltvc_tensor::{concat, Float, ParamBuilder, ParamVars, Tensor, Var};
use rand::Rng;

use crate::config::Variant;
use crate::error::{Error, Result};

/// One convolutional LSTM cell. The gate convolution reads
/// `[h_prev, input]` and emits input, forget, output and candidate planes in
/// that order.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub gates: Conv2d,
    pub channels: usize,
}

impl ConvLstm {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, channels: usize) -> Self {
        ConvLstm {
            gates: Conv2d::new(pb, name, 2 * channels, 4 * channels, 3, 1),
            channels,
        }
    }

    /// Returns `(h, c)`.
    pub fn step<T: Float>(
        &self,
        p: &ParamVars<T>,
        input: &Var<T>,
        h_prev: &Var<T>,
        c_prev: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        conv_lstm_step(p, self, input, h_prev, c_prev)
    }
}

/// `i, f, o = sigmoid(W * [h_prev, input] + b)`, `g = tanh(W_c * [...] + b_c)`,
/// `c = f . c_prev + i . g`, `h = o . tanh(c)`.
pub fn conv_lstm_step<T: Float>(
    p: &ParamVars<T>,
    cell: &ConvLstm,
    input: &Var<T>,
    h_prev: &Var<T>,
    c_prev: &Var<T>,
) -> Result<(Var<T>, Var<T>)> {
    let ch = cell.channels;
    let [n, c, h, w] = input.shape();
    if c != ch || h_prev.shape() != [n, ch, h, w] || c_prev.shape() != [n, ch, h, w] {
        return Err(Error::dim(format!(
            "lstm step: input {:?}, h {:?}, c {:?}; expected {ch} aligned channels",
            input.shape(),
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let z = cell.gates.forward(p, &concat(&[h_prev, input]));
    let i = z.slice_channels(0, ch).sigmoid();
    let f = z.slice_channels(ch, ch).sigmoid();
    let o = z.slice_channels(2 * ch, ch).sigmoid();
    let g = z.slice_channels(3 * ch, ch).tanh();
    let c_new = f.mul(c_prev).add(&i.mul(&g));
    let h_new = o.mul(&c_new.tanh());
    Ok((h_new, c_new))
}

/// Hidden and cell maps of both recurrent branches, `[N, C_h, H, W]`.
#[derive(Clone, Debug)]
pub struct ChainState<T: Float> {
    pub hs: Var<T>,
    pub ht: Var<T>,
    pub cell_s: Var<T>,
    pub cell_t: Var<T>,
}

impl<T: Float> ChainState<T> {
    pub fn maps(&self) -> [&Var<T>; 4] {
        [&self.hs, &self.ht, &self.cell_s, &self.cell_t]
    }

    /// Same values, cut from any tape.
    pub fn detach(&self) -> Self {
        ChainState {
            hs: self.hs.detach(),
            ht: self.ht.detach(),
            cell_s: self.cell_s.detach(),
            cell_t: self.cell_t.detach(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.maps().iter().all(|m| m.value().is_finite())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.hs.shape()
    }
}

/// All-zero state for `height x width` frames.
pub fn init_state<T: Float>(channels: usize, height: usize, width: usize) -> ChainState<T> {
    let z = || Var::constant(Tensor::zeros([1, channels, height, width]));
    ChainState {
        hs: z(),
        ht: z(),
        cell_s: z(),
        cell_t: z(),
    }
}

/// Adaptors plus the two recurrent cells.
#[derive(Clone, Debug)]
pub struct ReferenceChain {
    spatial_adaptor: [Conv2d; 2],
    temporal_adaptor: [Conv2d; 2],
    pub spatial: ConvLstm,
    pub temporal: ConvLstm,
    pub hidden: usize,
    pub feature: usize,
}

impl ReferenceChain {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, hidden: usize, feature: usize) -> Self {
        let mut s = pb.scope(name);
        ReferenceChain {
            spatial_adaptor: [
                Conv2d::new(&mut s, "spatial_adaptor0", 3, hidden, 3, 1),
                Conv2d::new(&mut s, "spatial_adaptor1", hidden, hidden, 3, 1),
            ],
            temporal_adaptor: [
                Conv2d::new(&mut s, "temporal_adaptor0", feature, hidden, 3, 1),
                Conv2d::new(&mut s, "temporal_adaptor1", hidden, hidden, 3, 1),
            ],
            spatial: ConvLstm::new(&mut s, "spatial_lstm", hidden),
            temporal: ConvLstm::new(&mut s, "temporal_lstm", hidden),
            hidden,
            feature,
        }
    }

    fn adapt<T: Float>(p: &ParamVars<T>, convs: &[Conv2d; 2], x: &Var<T>) -> Var<T> {
        let h = convs[0].forward(p, x).leaky_relu(LEAKY_SLOPE);
        convs[1].forward(p, &h)
    }

    /// Feeds the previous reconstruction and its feature through the
    /// adaptors and both cells. The spatial branch is skipped for variants
    /// without spatial mining; `Ma` leaves the state untouched.
    pub fn advance<T: Float>(
        &self,
        p: &ParamVars<T>,
        x_hat_prev: &Var<T>,
        f_prev: &Var<T>,
        state: &ChainState<T>,
        variant: Variant,
    ) -> Result<ChainState<T>> {
        let [n, _, h, w] = x_hat_prev.shape();
        if x_hat_prev.shape()[1] != 3 || f_prev.shape() != [n, self.feature, h, w] {
            return Err(Error::dim(format!(
                "chain inputs {:?} / {:?} do not match [N,3,H,W] / [N,{},H,W]",
                x_hat_prev.shape(),
                f_prev.shape(),
                self.feature
            )));
        }
        if state.shape() != [n, self.hidden, h, w] {
            return Err(Error::dim(format!(
                "chain state {:?} does not match frame {w}x{h}",
                state.shape()
            )));
        }
        if !variant.uses_chain() {
            return Ok(state.clone());
        }
        let f_f = Self::adapt(p, &self.temporal_adaptor, f_prev);
        let (ht, cell_t) = self.temporal.step(p, &f_f, &state.ht, &state.cell_t)?;
        let (hs, cell_s) = if variant.uses_spatial() {
            let f_x = Self::adapt(p, &self.spatial_adaptor, x_hat_prev);
            self.spatial.step(p, &f_x, &state.hs, &state.cell_s)?
        } else {
            (state.hs.clone(), state.cell_s.clone())
        };
        Ok(ChainState { hs, ht, cell_s, cell_t })
    }
}
