//! Parameterized layers built from autograd operations.

use std::cell::{Cell, RefCell};

use autograd::{ConvGeom, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, StreamPosition, StreamRng};

pub const INIT_STD: f32 = 0.02;
pub const NORM_EPS: f32 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Mode flag and dropout randomness shared by the layers of one network.
pub struct Runtime {
    mode: Cell<Mode>,
    seed: u64,
    rng: RefCell<StreamRng>,
}

impl Runtime {
    pub fn new(seed: u64) -> Self {
        Runtime {
            mode: Cell::new(Mode::Train),
            seed,
            rng: RefCell::new(seeds::restore(StreamPosition { seed, word_pos: 0 })),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode.get()
    }

    pub fn set_mode(&self, mode: Mode) {
        self.mode.set(mode);
    }

    pub fn dropout_position(&self) -> StreamPosition {
        seeds::position(self.seed, &self.rng.borrow())
    }

    pub fn restore_dropout(&self, pos: StreamPosition) {
        *self.rng.borrow_mut() = seeds::restore(pos);
    }
}

/// Ordered, named parameter leaves of a network.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Var)>,
}

impl ParamSet {
    fn add(&mut self, name: String, t: Tensor) -> Var {
        let v = Var::parameter(t);
        self.entries.push((name, v.clone()));
        v
    }

    pub fn entries(&self) -> &[(String, Var)] {
        &self.entries
    }
}

/// Draws initial weights for one network.
pub struct Init<'a> {
    pub params: &'a mut ParamSet,
    pub rng: &'a mut StreamRng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize]) -> Var {
        let t = Tensor::randn(shape, 0.0, INIT_STD, self.rng);
        self.params.add(name, t)
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f32) -> Var {
        self.params.add(name, Tensor::full(shape, v))
    }
}

fn add_channel_bias(y: Var, bias: &Option<Var>) -> Result<Var> {
    match bias {
        Some(b) => {
            let c = b.shape()[0];
            Ok(y.add(&b.reshape(&[1, c, 1, 1])?)?)
        }
        None => Ok(y),
    }
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, geom: ConvGeom, bias: bool) -> Self {
        let weight = init.normal(format!("{name}.weight"), &[cout, cin, geom.kernel, geom.kernel]);
        let bias = bias.then(|| init.constant(format!("{name}.bias"), &[cout], 0.0));
        Conv2d { weight, bias, geom }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        add_channel_bias(x.conv2d(&self.weight, self.geom)?, &self.bias)
    }
}

/// Transposed convolution; `output_padding` extends the bottom/right edge so
/// that stride-2 layers exactly double the spatial size.
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub geom: ConvGeom,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        output_padding: usize,
        bias: bool,
    ) -> Self {
        let weight = init.normal(format!("{name}.weight"), &[cin, cout, geom.kernel, geom.kernel]);
        let bias = bias.then(|| init.constant(format!("{name}.bias"), &[cout], 0.0));
        ConvTranspose2d {
            weight,
            bias,
            geom,
            output_padding,
        }
    }

    pub fn output_size(&self, n: usize) -> usize {
        (n - 1) * self.geom.stride + self.geom.kernel + self.output_padding - 2 * self.geom.padding
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let s = x.shape();
        let out = (self.output_size(s[2]), self.output_size(s[3]));
        add_channel_bias(x.conv_transpose2d(&self.weight, self.geom, out)?, &self.bias)
    }
}

/// Per-sample, per-channel normalization over the spatial axes, with no
/// running statistics.
pub struct InstanceNorm {
    pub affine: Option<(Var, Var)>,
}

impl InstanceNorm {
    pub fn new(init: &mut Init, name: &str, channels: usize, affine: bool) -> Self {
        let affine = affine.then(|| {
            (
                init.constant(format!("{name}.gamma"), &[channels], 1.0),
                init.constant(format!("{name}.beta"), &[channels], 0.0),
            )
        });
        InstanceNorm { affine }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let centered = x.sub(&x.mean_axes(&[2, 3])?)?;
        let var = centered.square().mean_axes(&[2, 3])?;
        let y = centered.div(&var.add_scalar(NORM_EPS).sqrt())?;
        match &self.affine {
            Some((g, b)) => {
                let c = g.shape()[0];
                Ok(y.mul(&g.reshape(&[1, c, 1, 1])?)?.add(&b.reshape(&[1, c, 1, 1])?)?)
            }
            None => Ok(y),
        }
    }
}

/// `x @ weight + bias` with `weight: [in, out]`.
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Linear {
            weight: init.normal(format!("{name}.weight"), &[fan_in, fan_out]),
            bias: bias.then(|| init.constant(format!("{name}.bias"), &[fan_out], 0.0)),
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => Ok(y.add(b)?),
            None => Ok(y),
        }
    }
}

/// Inverted dropout: active only in train mode.
pub fn dropout(x: &Var, p: f32, rt: &Runtime) -> Result<Var> {
    if p <= 0.0 || rt.mode() == Mode::Eval {
        return Ok(x.clone());
    }
    if p >= 1.0 {
        return Err(Error::InvalidArgument(format!("dropout probability {p}")));
    }
    let keep = 1.0 - p;
    let mut rng = rt.rng.borrow_mut();
    let mask: Vec<f32> = (0..x.numel())
        .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Ok(x.mul(&Var::constant(Tensor::new(x.shape(), mask)?))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, x: &Var) -> Var {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::None => x.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Down,
    Up,
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// Instance norm; `affine` adds a learned scale and shift per channel.
    Instance { affine: bool },
    None,
}

/// Declarative description of one conv block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub kind: BlockKind,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub norm: Norm,
    pub activation: Activation,
    pub dropout: f32,
    pub bias: bool,
}

impl ConvBlockSpec {
    /// Padding that keeps `plain` blocks size-preserving and makes stride-2
    /// blocks halve (down) or double (up) the spatial size.
    fn padding(&self) -> usize {
        match self.kind {
            BlockKind::Plain => self.kernel / 2,
            BlockKind::Down | BlockKind::Up => (self.kernel - 1) / 2,
        }
    }

    fn output_padding(&self) -> usize {
        // (n-1)*s - 2p + k + op == 2n  with s = 2
        if self.kind == BlockKind::Up {
            2 + 2 * self.padding() - self.kernel
        } else {
            0
        }
    }
}

enum Layer {
    Conv(Conv2d),
    Transposed(ConvTranspose2d),
}

/// conv → dropout → norm → activation.
pub struct ConvBlock {
    pub spec: ConvBlockSpec,
    layer: Layer,
    norm: Option<InstanceNorm>,
}

impl ConvBlock {
    pub fn new(init: &mut Init, name: &str, spec: ConvBlockSpec) -> Self {
        let geom = ConvGeom::new(spec.kernel, spec.stride, spec.padding());
        let layer = match spec.kind {
            BlockKind::Up => Layer::Transposed(ConvTranspose2d::new(
                init,
                &format!("{name}.conv"),
                spec.in_channels,
                spec.out_channels,
                geom,
                spec.output_padding(),
                spec.bias,
            )),
            _ => Layer::Conv(Conv2d::new(
                init,
                &format!("{name}.conv"),
                spec.in_channels,
                spec.out_channels,
                geom,
                spec.bias,
            )),
        };
        let norm = match spec.norm {
            Norm::Instance { affine } => Some(InstanceNorm::new(init, &format!("{name}.norm"), spec.out_channels, affine)),
            Norm::None => None,
        };
        ConvBlock { spec, layer, norm }
    }

    pub fn forward(&self, x: &Var, rt: &Runtime) -> Result<Var> {
        let mut y = match &self.layer {
            Layer::Conv(c) => c.forward(x)?,
            Layer::Transposed(t) => t.forward(x)?,
        };
        y = dropout(&y, self.spec.dropout, rt)?;
        if let Some(n) = &self.norm {
            y = n.forward(&y)?;
        }
        Ok(self.spec.activation.apply(&y))
    }
}
