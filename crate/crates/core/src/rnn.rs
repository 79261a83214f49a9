//! FC-LSTM and ConvLSTM cells, multilayer sequence unrolling, and exact
//! backpropagation through time.
//!
//! Both cell kinds share one set of equations; only the linear map differs.
//! With `σ` the logistic function and `∘` the elementwise product:
//!
//! ```text
//! f_t = σ(W_xf·x_t + W_hf·h_{t-1} + b_f)
//! i_t = σ(W_xi·x_t + W_hi·h_{t-1} + b_i)
//! c_t = f_t ∘ c_{t-1} + i_t ∘ tanh(W_xc·x_t + W_hc·h_{t-1} + b_c)
//! o_t = σ(W_xo·x_t + W_ho·h_{t-1} + b_o)
//! h_t = o_t ∘ tanh(c_t)
//! ```
//!
//! For the FC cell `·` is a dense matrix-vector product; for the ConvLSTM
//! cell it is a same-padded 2-D cross-correlation and the states are
//! `[channels, H, W]` maps with per-channel biases. There are no peephole
//! terms. A ConvLSTM with a 1×1 kernel computes exactly a per-pixel FC-LSTM,
//! which the tests exploit as a cross-implementation oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    self, conv2d_grad_input_acc, conv2d_grad_kernel_acc, conv2d_same_acc, hadamard_acc,
    matvec_acc, matvec_grad_input_acc, matvec_grad_weight_acc, Tensor,
};

/// Which linear map a parameter set encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Fc,
    Conv,
}

/// Weights and biases of one LSTM cell (either kind).
///
/// FC shapes: `w_x*: [hidden, input]`, `w_h*: [hidden, hidden]`,
/// biases `[hidden]`. Conv shapes: `w_x*: [hidden_ch, in_ch, KH, KW]`,
/// `w_h*: [hidden_ch, hidden_ch, KH, KW]`, biases `[hidden_ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    /// Serialization order of the 12 tensors. Checkpoints and the Adam
    /// state rely on this order being stable.
    pub const TENSOR_NAMES: [&'static str; 12] = [
        "w_xf", "w_hf", "w_xi", "w_hi", "w_xc", "w_hc", "w_xo", "w_ho", "b_f", "b_i", "b_c",
        "b_o",
    ];

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_xf, &self.w_hf, &self.w_xi, &self.w_hi, &self.w_xc, &self.w_hc, &self.w_xo,
            &self.w_ho, &self.b_f, &self.b_i, &self.b_c, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_xf,
            &mut self.w_hf,
            &mut self.w_xi,
            &mut self.w_hi,
            &mut self.w_xc,
            &mut self.w_hc,
            &mut self.w_xo,
            &mut self.w_ho,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }

    pub fn zeros_like(&self) -> LstmParams {
        LstmParams {
            w_xf: self.w_xf.zeros_like(),
            w_hf: self.w_hf.zeros_like(),
            w_xi: self.w_xi.zeros_like(),
            w_hi: self.w_hi.zeros_like(),
            w_xc: self.w_xc.zeros_like(),
            w_hc: self.w_hc.zeros_like(),
            w_xo: self.w_xo.zeros_like(),
            w_ho: self.w_ho.zeros_like(),
            b_f: self.b_f.zeros_like(),
            b_i: self.b_i.zeros_like(),
            b_c: self.b_c.zeros_like(),
            b_o: self.b_o.zeros_like(),
        }
    }

    pub fn kind(&self) -> CellKind {
        if self.w_xf.rank() == 4 {
            CellKind::Conv
        } else {
            CellKind::Fc
        }
    }

    /// Hidden-state width (FC) or channel count (Conv).
    pub fn hidden_width(&self) -> usize {
        self.w_xf.shape()[0]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// FC cell with weights drawn uniformly from ±1/√fan_in. Biases start
    /// at zero; `forget_bias_one` instead starts the forget-gate bias at 1
    /// so early training does not wash the cell state out.
    pub fn init_fc<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        forget_bias_one: bool,
        rng: &mut R,
    ) -> LstmParams {
        let wx = |rng: &mut R| rand_uniform(&[hidden, input], input, rng);
        let wh = |rng: &mut R| rand_uniform(&[hidden, hidden], hidden, rng);
        let mut p = LstmParams {
            w_xf: wx(rng),
            w_hf: wh(rng),
            w_xi: wx(rng),
            w_hi: wh(rng),
            w_xc: wx(rng),
            w_hc: wh(rng),
            w_xo: wx(rng),
            w_ho: wh(rng),
            b_f: Tensor::zeros(&[hidden]),
            b_i: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
        };
        if forget_bias_one {
            p.b_f.data_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        p
    }

    /// Conv cell; `kernel` must have odd sides.
    pub fn init_conv<R: Rng + ?Sized>(
        in_ch: usize,
        hidden_ch: usize,
        kernel: (usize, usize),
        forget_bias_one: bool,
        rng: &mut R,
    ) -> LstmParams {
        let (kh, kw) = kernel;
        let wx =
            |rng: &mut R| rand_uniform(&[hidden_ch, in_ch, kh, kw], in_ch * kh * kw, rng);
        let wh =
            |rng: &mut R| rand_uniform(&[hidden_ch, hidden_ch, kh, kw], hidden_ch * kh * kw, rng);
        let mut p = LstmParams {
            w_xf: wx(rng),
            w_hf: wh(rng),
            w_xi: wx(rng),
            w_hi: wh(rng),
            w_xc: wx(rng),
            w_hc: wh(rng),
            w_xo: wx(rng),
            w_ho: wh(rng),
            b_f: Tensor::zeros(&[hidden_ch]),
            b_i: Tensor::zeros(&[hidden_ch]),
            b_c: Tensor::zeros(&[hidden_ch]),
            b_o: Tensor::zeros(&[hidden_ch]),
        };
        if forget_bias_one {
            p.b_f.data_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        p
    }
}

fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape/product mismatch is impossible here")
}

/// Hidden and cell state of one layer.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(shape: &[usize]) -> LstmState {
        LstmState {
            h: Tensor::zeros(shape),
            c: Tensor::zeros(shape),
        }
    }
}

/// Unroll length plus per-layer architecture of a recurrent stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    /// T: timesteps per sequence.
    pub timesteps: usize,
    /// Per-layer hidden sizes (FC) or channels and kernel (Conv); the
    /// number of entries is I, the layer count.
    pub layout: StackLayout,
}

impl StackConfig {
    pub fn num_layers(&self) -> usize {
        self.layout.num_layers()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be at least 1".into()));
        }
        self.layout.validate()
    }

    /// Fresh parameters for the whole stack; see [`StackLayout::init_params`].
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        input_width: usize,
        forget_bias_one: bool,
        rng: &mut R,
    ) -> Result<Vec<LstmParams>> {
        self.validate()?;
        self.layout.init_params(input_width, forget_bias_one, rng)
    }
}

/// Stack architecture: one entry per layer, bottom first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StackLayout {
    Fc {
        hidden: Vec<usize>,
    },
    Conv {
        hidden_channels: Vec<usize>,
        kernel: (usize, usize),
    },
}

impl StackLayout {
    pub fn num_layers(&self) -> usize {
        match self {
            StackLayout::Fc { hidden } => hidden.len(),
            StackLayout::Conv {
                hidden_channels, ..
            } => hidden_channels.len(),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            StackLayout::Fc { .. } => CellKind::Fc,
            StackLayout::Conv { .. } => CellKind::Conv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers() == 0 {
            return Err(Error::Config("stack needs at least one layer".into()));
        }
        match self {
            StackLayout::Fc { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::Config("zero-width hidden layer".into()));
                }
            }
            StackLayout::Conv {
                hidden_channels,
                kernel,
            } => {
                if hidden_channels.contains(&0) {
                    return Err(Error::Config("zero-channel hidden layer".into()));
                }
                if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                    return Err(Error::Config(format!(
                        "kernel sides must be odd, got {}x{}",
                        kernel.0, kernel.1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fresh parameters for the whole stack. `input_width` is the input
    /// vector length (FC) or channel count (Conv) of the bottom layer.
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        input_width: usize,
        forget_bias_one: bool,
        rng: &mut R,
    ) -> Result<Vec<LstmParams>> {
        self.validate()?;
        if input_width == 0 {
            return Err(Error::Config("stack input width must be nonzero".into()));
        }
        let mut params = Vec::with_capacity(self.num_layers());
        match self {
            StackLayout::Fc { hidden } => {
                let mut inw = input_width;
                for &h in hidden {
                    params.push(LstmParams::init_fc(inw, h, forget_bias_one, rng));
                    inw = h;
                }
            }
            StackLayout::Conv {
                hidden_channels,
                kernel,
            } => {
                let mut inc = input_width;
                for &ch in hidden_channels {
                    params.push(LstmParams::init_conv(inc, ch, *kernel, forget_bias_one, rng));
                    inc = ch;
                }
            }
        }
        Ok(params)
    }
}

/// Applies the cell's linear map: matvec for FC weights, same-padded
/// convolution for conv weights.
fn lin_acc(w: &Tensor, x: &Tensor, out: &mut Tensor) -> Result<()> {
    match w.rank() {
        2 => matvec_acc(w, x.data(), out.data_mut()),
        4 => conv2d_same_acc(x, w, out),
        r => Err(Error::Dimension(format!("cell weight of rank {r}"))),
    }
}

fn lin_grad_input_acc(w: &Tensor, dy: &Tensor, dx: &mut Tensor) -> Result<()> {
    match w.rank() {
        2 => matvec_grad_input_acc(w, dy.data(), dx.data_mut()),
        4 => conv2d_grad_input_acc(dy, w, dx),
        r => Err(Error::Dimension(format!("cell weight of rank {r}"))),
    }
}

fn lin_grad_weight_acc(dy: &Tensor, x: &Tensor, dw: &mut Tensor) -> Result<()> {
    match dw.rank() {
        2 => matvec_grad_weight_acc(dy.data(), x.data(), dw),
        4 => conv2d_grad_kernel_acc(dy, x, dw),
        r => Err(Error::Dimension(format!("cell weight of rank {r}"))),
    }
}

/// Adds the bias to a pre-activation: elementwise for FC, broadcast over
/// the spatial extent per channel for conv.
fn bias_acc(b: &Tensor, out: &mut Tensor) -> Result<()> {
    if b.len() == out.len() {
        let bd = b.data();
        for (o, &v) in out.data_mut().iter_mut().zip(bd) {
            *o += v;
        }
        return Ok(());
    }
    if out.rank() == 3 && b.len() == out.shape()[0] {
        let hw = out.shape()[1] * out.shape()[2];
        let bd = b.data().to_vec();
        for (ch, &v) in bd.iter().enumerate() {
            for o in &mut out.data_mut()[ch * hw..(ch + 1) * hw] {
                *o += v;
            }
        }
        return Ok(());
    }
    Err(Error::Dimension(format!(
        "bias {:?} against activation {:?}",
        b.shape(),
        out.shape()
    )))
}

/// Adjoint of [`bias_acc`].
fn bias_grad_acc(dy: &Tensor, db: &mut Tensor) -> Result<()> {
    if db.len() == dy.len() {
        for (d, &g) in db.data_mut().iter_mut().zip(dy.data()) {
            *d += g;
        }
        return Ok(());
    }
    if dy.rank() == 3 && db.len() == dy.shape()[0] {
        let hw = dy.shape()[1] * dy.shape()[2];
        for ch in 0..db.len() {
            let s: f64 = dy.data()[ch * hw..(ch + 1) * hw].iter().sum();
            db.data_mut()[ch] += s;
        }
        return Ok(());
    }
    Err(Error::Dimension(format!(
        "bias grad {:?} against activation grad {:?}",
        db.shape(),
        dy.shape()
    )))
}

/// Everything the backward pass needs from one cell application.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    f: Tensor,
    i: Tensor,
    g: Tensor,
    o: Tensor,
    tanh_c: Tensor,
}

struct StepCore {
    f: Tensor,
    i: Tensor,
    g: Tensor,
    o: Tensor,
    tanh_c: Tensor,
    state: LstmState,
}

fn hidden_shape(p: &LstmParams, x: &Tensor) -> Result<Vec<usize>> {
    match p.kind() {
        CellKind::Fc => {
            if x.rank() != 1 {
                return Err(Error::Dimension(format!(
                    "FC cell input must be rank 1, got {:?}",
                    x.shape()
                )));
            }
            Ok(vec![p.hidden_width()])
        }
        CellKind::Conv => {
            if x.rank() != 3 {
                return Err(Error::Dimension(format!(
                    "conv cell input must be rank 3, got {:?}",
                    x.shape()
                )));
            }
            Ok(vec![p.hidden_width(), x.shape()[1], x.shape()[2]])
        }
    }
}

fn step_core(p: &LstmParams, x: &Tensor, prev: &LstmState) -> Result<StepCore> {
    let hshape = hidden_shape(p, x)?;
    if prev.h.shape() != hshape.as_slice() || prev.c.shape() != hshape.as_slice() {
        return Err(Error::Dimension(format!(
            "state {:?}/{:?} does not match cell output {:?}",
            prev.h.shape(),
            prev.c.shape(),
            hshape
        )));
    }

    let gate = |wx: &Tensor, wh: &Tensor, b: &Tensor| -> Result<Tensor> {
        let mut a = Tensor::zeros(&hshape);
        lin_acc(wx, x, &mut a)?;
        lin_acc(wh, &prev.h, &mut a)?;
        bias_acc(b, &mut a)?;
        Ok(a)
    };

    let mut f = gate(&p.w_xf, &p.w_hf, &p.b_f)?;
    let mut i = gate(&p.w_xi, &p.w_hi, &p.b_i)?;
    let mut g = gate(&p.w_xc, &p.w_hc, &p.b_c)?;
    let mut o = gate(&p.w_xo, &p.w_ho, &p.b_o)?;
    numerics::sigmoid_inplace(f.data_mut());
    numerics::sigmoid_inplace(i.data_mut());
    numerics::tanh_inplace(g.data_mut());
    numerics::sigmoid_inplace(o.data_mut());

    let mut c = Tensor::zeros(&hshape);
    hadamard_acc(f.data(), prev.c.data(), c.data_mut());
    hadamard_acc(i.data(), g.data(), c.data_mut());

    let mut tanh_c = c.clone();
    numerics::tanh_inplace(tanh_c.data_mut());
    let mut h = Tensor::zeros(&hshape);
    hadamard_acc(o.data(), tanh_c.data(), h.data_mut());

    Ok(StepCore {
        f,
        i,
        g,
        o,
        tanh_c,
        state: LstmState { h, c },
    })
}

/// One FC-LSTM step. `x` must be rank 1.
pub fn fc_lstm_step(p: &LstmParams, x: &Tensor, prev: &LstmState) -> Result<LstmState> {
    if p.kind() != CellKind::Fc {
        return Err(Error::Config("fc_lstm_step on conv parameters".into()));
    }
    Ok(step_core(p, x, prev)?.state)
}

/// One ConvLSTM step. `x` must be `[C, H, W]`.
pub fn conv_lstm_step(p: &LstmParams, x: &Tensor, prev: &LstmState) -> Result<LstmState> {
    if p.kind() != CellKind::Conv {
        return Err(Error::Config("conv_lstm_step on FC parameters".into()));
    }
    Ok(step_core(p, x, prev)?.state)
}

/// One step of either cell kind, returning the cache for backprop.
pub fn lstm_step_cached(
    p: &LstmParams,
    x: &Tensor,
    prev: &LstmState,
) -> Result<(LstmState, StepCache)> {
    let core = step_core(p, x, prev)?;
    let cache = StepCache {
        x: x.clone(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        f: core.f,
        i: core.i,
        g: core.g,
        o: core.o,
        tanh_c: core.tanh_c,
    };
    Ok((core.state, cache))
}

/// Unrolls the stack over `seq` and returns the top layer's final hidden
/// state (the "last" output). Layer `l` consumes the hidden sequence of
/// layer `l-1`; all initial states are zero.
pub fn stack_forward(seq: &[Tensor], cfg: &StackConfig, params: &[LstmParams]) -> Result<Tensor> {
    validate_stack_inputs(seq, cfg, params)?;
    let mut seq: Vec<Tensor> = seq.to_vec();
    let mut top_h = None;
    for p in params {
        let hshape = hidden_shape(p, &seq[0])?;
        let mut state = LstmState::zeros(&hshape);
        let mut next = Vec::with_capacity(seq.len());
        for x in &seq {
            state = step_core(p, x, &state)?.state;
            next.push(state.h.clone());
        }
        top_h = Some(state.h);
        seq = next;
    }
    Ok(top_h.expect("validated nonempty stack"))
}

/// Per-layer, per-timestep caches from a recorded forward pass.
pub struct StackTrace {
    layers: Vec<Vec<StepCache>>,
    timesteps: usize,
}

/// Like [`stack_forward`] but records the trace needed by
/// [`stack_backward`].
pub fn stack_forward_cached(
    seq: &[Tensor],
    cfg: &StackConfig,
    params: &[LstmParams],
) -> Result<(Tensor, StackTrace)> {
    validate_stack_inputs(seq, cfg, params)?;
    let timesteps = seq.len();
    let mut seq: Vec<Tensor> = seq.to_vec();
    let mut layers = Vec::with_capacity(params.len());
    let mut top_h = None;
    for p in params {
        let hshape = hidden_shape(p, &seq[0])?;
        let mut state = LstmState::zeros(&hshape);
        let mut caches = Vec::with_capacity(seq.len());
        let mut next = Vec::with_capacity(seq.len());
        for x in &seq {
            let (s, cache) = lstm_step_cached(p, x, &state)?;
            state = s;
            caches.push(cache);
            next.push(state.h.clone());
        }
        layers.push(caches);
        top_h = Some(state.h);
        seq = next;
    }
    Ok((
        top_h.expect("validated nonempty stack"),
        StackTrace { layers, timesteps },
    ))
}

fn validate_stack_inputs(seq: &[Tensor], cfg: &StackConfig, params: &[LstmParams]) -> Result<()> {
    cfg.validate()?;
    if seq.len() != cfg.timesteps {
        return Err(Error::Config(format!(
            "sequence length {} does not match configured T={}",
            seq.len(),
            cfg.timesteps
        )));
    }
    if params.len() != cfg.num_layers() {
        return Err(Error::Config(format!(
            "{} parameter sets for I={} layers",
            params.len(),
            cfg.num_layers()
        )));
    }
    for (l, p) in params.iter().enumerate() {
        let (want_kind, want_width) = match &cfg.layout {
            StackLayout::Fc { hidden } => (CellKind::Fc, hidden[l]),
            StackLayout::Conv {
                hidden_channels, ..
            } => (CellKind::Conv, hidden_channels[l]),
        };
        if p.kind() != want_kind || p.hidden_width() != want_width {
            return Err(Error::Config(format!(
                "layer {l} parameters do not match the configured layout"
            )));
        }
    }
    let shape = seq[0].shape();
    if seq.iter().any(|x| x.shape() != shape) {
        return Err(Error::Dimension(
            "input sequence timesteps differ in shape".into(),
        ));
    }
    Ok(())
}

/// Backpropagates `grad_out` (gradient w.r.t. the top layer's final hidden
/// state) through the recorded unroll. Returns per-layer parameter
/// gradients in the same order as `params`, plus the gradients w.r.t. the
/// input sequence.
pub fn stack_backward(
    params: &[LstmParams],
    trace: &StackTrace,
    grad_out: &Tensor,
) -> Result<(Vec<LstmParams>, Vec<Tensor>)> {
    if params.len() != trace.layers.len() {
        return Err(Error::State(format!(
            "cached forward pass has {} layers, params {}",
            trace.layers.len(),
            params.len()
        )));
    }
    let t_n = trace.timesteps;
    let mut grads: Vec<LstmParams> = params.iter().map(|p| p.zeros_like()).collect();

    // Gradient arriving at each timestep's hidden output of the current
    // layer. For the top layer only the last step receives anything.
    let top_cache = &trace.layers[params.len() - 1][t_n - 1];
    if grad_out.shape() != top_cache.f.shape() {
        return Err(Error::Dimension(format!(
            "grad_out {:?} does not match top hidden {:?}",
            grad_out.shape(),
            top_cache.f.shape()
        )));
    }
    let mut dh_seq: Vec<Tensor> = (0..t_n)
        .map(|t| {
            if t == t_n - 1 {
                grad_out.clone()
            } else {
                grad_out.zeros_like()
            }
        })
        .collect();

    let mut input_grads: Vec<Tensor> = Vec::new();
    for l in (0..params.len()).rev() {
        let p = &params[l];
        let caches = &trace.layers[l];
        let mut dx_seq: Vec<Tensor> = caches.iter().map(|c| c.x.zeros_like()).collect();
        let mut dh_carry = caches[0].f.zeros_like();
        let mut dc_carry = caches[0].f.zeros_like();

        for t in (0..t_n).rev() {
            let cache = &caches[t];
            let n = cache.f.len();

            let mut da_f = Tensor::zeros(cache.f.shape());
            let mut da_i = da_f.zeros_like();
            let mut da_g = da_f.zeros_like();
            let mut da_o = da_f.zeros_like();
            let mut dc_prev = da_f.zeros_like();
            {
                let dh_in = dh_seq[t].data();
                let dh_c = dh_carry.data();
                let dc_c = dc_carry.data();
                let (f, i, g, o) = (
                    cache.f.data(),
                    cache.i.data(),
                    cache.g.data(),
                    cache.o.data(),
                );
                let (tc, cp) = (cache.tanh_c.data(), cache.c_prev.data());
                let daf = da_f.data_mut();
                for k in 0..n {
                    let dh = dh_in[k] + dh_c[k];
                    let dc = dc_c[k] + dh * o[k] * (1.0 - tc[k] * tc[k]);
                    daf[k] = dc * cp[k] * f[k] * (1.0 - f[k]);
                    da_i.data_mut()[k] = dc * g[k] * i[k] * (1.0 - i[k]);
                    da_g.data_mut()[k] = dc * i[k] * (1.0 - g[k] * g[k]);
                    da_o.data_mut()[k] = dh * tc[k] * o[k] * (1.0 - o[k]);
                    dc_prev.data_mut()[k] = dc * f[k];
                }
            }
            dc_carry = dc_prev;

            let gl = &mut grads[l];
            lin_grad_weight_acc(&da_f, &cache.x, &mut gl.w_xf)?;
            lin_grad_weight_acc(&da_i, &cache.x, &mut gl.w_xi)?;
            lin_grad_weight_acc(&da_g, &cache.x, &mut gl.w_xc)?;
            lin_grad_weight_acc(&da_o, &cache.x, &mut gl.w_xo)?;
            lin_grad_weight_acc(&da_f, &cache.h_prev, &mut gl.w_hf)?;
            lin_grad_weight_acc(&da_i, &cache.h_prev, &mut gl.w_hi)?;
            lin_grad_weight_acc(&da_g, &cache.h_prev, &mut gl.w_hc)?;
            lin_grad_weight_acc(&da_o, &cache.h_prev, &mut gl.w_ho)?;
            bias_grad_acc(&da_f, &mut gl.b_f)?;
            bias_grad_acc(&da_i, &mut gl.b_i)?;
            bias_grad_acc(&da_g, &mut gl.b_c)?;
            bias_grad_acc(&da_o, &mut gl.b_o)?;

            dh_carry = dh_carry.zeros_like();
            lin_grad_input_acc(&p.w_hf, &da_f, &mut dh_carry)?;
            lin_grad_input_acc(&p.w_hi, &da_i, &mut dh_carry)?;
            lin_grad_input_acc(&p.w_hc, &da_g, &mut dh_carry)?;
            lin_grad_input_acc(&p.w_ho, &da_o, &mut dh_carry)?;

            let dx = &mut dx_seq[t];
            lin_grad_input_acc(&p.w_xf, &da_f, dx)?;
            lin_grad_input_acc(&p.w_xi, &da_i, dx)?;
            lin_grad_input_acc(&p.w_xc, &da_g, dx)?;
            lin_grad_input_acc(&p.w_xo, &da_o, dx)?;
        }

        if l > 0 {
            // Layer l's inputs were layer l-1's hidden outputs.
            dh_seq = dx_seq;
        } else {
            input_grads = dx_seq;
        }
    }

    Ok((grads, input_grads))
}
