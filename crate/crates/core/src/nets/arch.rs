//! The concrete architectures.

use autograd::{ConvGeom, Tensor, Var};

use super::layers::{
    Activation, BlockKind, Conv2d, ConvBlock, ConvBlockSpec, Init, Linear, Mode, Norm, ParamSet, Runtime,
};
use super::{named, take_input, ArchSpec, Named, Network};
use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::seeds::{self, StreamPosition, StreamRng};

/// Channels of the first block; every later block doubles or halves it.
pub const BASE_CHANNELS: usize = 32;
pub const NUM_DOMAINS: usize = 2;

struct Base {
    spec: ArchSpec,
    params: ParamSet,
    rt: Runtime,
}

fn init_rng(seed: u64) -> StreamRng {
    seeds::restore(StreamPosition { seed, word_pos: 0 })
}

fn base(spec: ArchSpec, params: ParamSet, seed: u64) -> Base {
    Base {
        spec,
        params,
        rt: Runtime::new(seeds::stream_seed(seed, "dropout")),
    }
}

macro_rules! impl_network {
    ($t:ty, [$($inp:literal),*], |$s:ident, $inputs:ident| $body:block) => {
        impl Network for $t {
            fn spec(&self) -> &ArchSpec {
                &self.base.spec
            }
            fn parameters(&self) -> &[(String, Var)] {
                self.base.params.entries()
            }
            fn set_mode(&self, mode: Mode) {
                self.base.rt.set_mode(mode)
            }
            fn mode(&self) -> Mode {
                self.base.rt.mode()
            }
            fn dropout_position(&self) -> StreamPosition {
                self.base.rt.dropout_position()
            }
            fn restore_dropout(&self, pos: StreamPosition) {
                self.base.rt.restore_dropout(pos)
            }
            fn input_names(&self) -> &'static [&'static str] {
                &[$($inp),*]
            }
            fn forward_named(&self, $inputs: &Named) -> Result<Named> {
                let $s = self;
                $body
            }
        }
    };
}

#[allow(clippy::too_many_arguments)]
fn block(
    init: &mut Init,
    name: &str,
    kind: BlockKind,
    kernel: usize,
    cin: usize,
    cout: usize,
    norm: Norm,
    activation: Activation,
    dropout: f32,
    bias: bool,
) -> ConvBlock {
    let stride = if kind == BlockKind::Plain { 1 } else { 2 };
    ConvBlock::new(
        init,
        name,
        ConvBlockSpec {
            kind,
            kernel,
            stride,
            in_channels: cin,
            out_channels: cout,
            norm,
            activation,
            dropout,
            bias,
        },
    )
}

fn check_spatial(x: &Var, multiple: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || !s[2].is_multiple_of(multiple) || !s[3].is_multiple_of(multiple) || s[2] == 0 {
        return Err(Error::Dimension(format!(
            "{what} expects [B,C,H,W] with H and W divisible by {multiple}, got {s:?}"
        )));
    }
    Ok(())
}

fn global_average_pool(x: &Var) -> Result<Var> {
    let s = x.shape();
    Ok(x.mean_axes(&[2, 3])?.reshape(&[s[0], s[1]])?)
}

// --------------------------------------------------------------------------
// FCN segmenter and its decoder half

struct Decoder {
    up1: ConvBlock,
    up2: ConvBlock,
    head: Conv2d,
}

impl Decoder {
    fn new(init: &mut Init, c: usize, dropout: f32) -> Self {
        let norm = Norm::Instance { affine: false };
        Decoder {
            up1: block(init, "up1", BlockKind::Up, 4, 4 * c, 2 * c, norm, Activation::Relu, dropout, true),
            up2: block(init, "up2", BlockKind::Up, 4, 2 * c, c, norm, Activation::Relu, dropout, true),
            head: Conv2d::new(init, "head", c, 1, ConvGeom::new(3, 1, 1), true),
        }
    }

    fn forward(&self, h: &Var, rt: &Runtime) -> Result<Var> {
        let y = self.up2.forward(&self.up1.forward(h, rt)?, rt)?;
        Ok(self.head.forward(&y)?.sigmoid())
    }
}

/// Encoder-decoder segmenter producing a per-pixel foreground probability.
pub struct FcnSegmenter {
    base: Base,
    init_block: ConvBlock,
    down1: ConvBlock,
    down2: ConvBlock,
    decoder: Decoder,
}

pub fn build_fcn_segmenter(in_channels: usize, resolution: usize, dropout: f32, seed: u64) -> Result<FcnSegmenter> {
    fcn_segmenter(in_channels, resolution, dropout, BASE_CHANNELS, seed)
}

pub fn fcn_segmenter(
    in_channels: usize,
    resolution: usize,
    dropout: f32,
    c: usize,
    seed: u64,
) -> Result<FcnSegmenter> {
    if resolution == 0 || !resolution.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "segmenter resolution {resolution} is not divisible by 4"
        )));
    }
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let mut init = Init {
        params: &mut params,
        rng: &mut rng,
    };
    let norm = Norm::Instance { affine: false };
    let relu = Activation::Relu;
    let init_block = block(&mut init, "init", BlockKind::Plain, 3, in_channels, c, norm, relu, dropout, true);
    let down1 = block(&mut init, "down1", BlockKind::Down, 4, c, 2 * c, norm, relu, dropout, true);
    let down2 = block(&mut init, "down2", BlockKind::Down, 4, 2 * c, 4 * c, norm, relu, dropout, true);
    let decoder = Decoder::new(&mut init, c, dropout);
    let spec = ArchSpec::FcnSegmenter {
        in_channels,
        resolution,
        dropout,
        base_channels: c,
    };
    Ok(FcnSegmenter {
        base: base(spec, params, seed),
        init_block,
        down1,
        down2,
        decoder,
    })
}

impl FcnSegmenter {
    /// Bottleneck features: `[B,128,H/4,W/4]`.
    pub fn encoder_forward(&self, x: &Var) -> Result<Var> {
        check_spatial(x, 4, "segmenter")?;
        let rt = &self.base.rt;
        self.down2
            .forward(&self.down1.forward(&self.init_block.forward(x, rt)?, rt)?, rt)
    }

    pub fn decoder_forward(&self, h: &Var) -> Result<Var> {
        self.decoder.forward(h, &self.base.rt)
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        self.decoder_forward(&self.encoder_forward(x)?)
    }
}

impl_network!(FcnSegmenter, ["image"], |s, inputs| {
    let h = s.encoder_forward(take_input(inputs, "image")?)?;
    let mask = s.decoder_forward(&h)?;
    Ok(named(vec![("features", h), ("mask", mask)]))
});

/// The decoder half of the segmenter, used as the segmentation head on top
/// of the translation encoder.
pub struct SegDecoder {
    base: Base,
    decoder: Decoder,
}

pub fn build_segmentation_decoder(dropout: f32, seed: u64) -> SegDecoder {
    segmentation_decoder(dropout, BASE_CHANNELS, seed)
}

pub fn segmentation_decoder(dropout: f32, c: usize, seed: u64) -> SegDecoder {
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let decoder = Decoder::new(
        &mut Init {
            params: &mut params,
            rng: &mut rng,
        },
        c,
        dropout,
    );
    let spec = ArchSpec::SegDecoder {
        dropout,
        base_channels: c,
    };
    SegDecoder {
        base: base(spec, params, seed),
        decoder,
    }
}

impl SegDecoder {
    pub fn forward(&self, h: &Var) -> Result<Var> {
        self.decoder.forward(h, &self.base.rt)
    }
}

impl_network!(SegDecoder, ["features"], |s, inputs| {
    Ok(named(vec![("mask", s.forward(take_input(inputs, "features")?)?)]))
});

// --------------------------------------------------------------------------
// Translation generators

struct GeneratorLayers {
    init_block: ConvBlock,
    down1: ConvBlock,
    down2: ConvBlock,
    up1: ConvBlock,
    up2: ConvBlock,
    head: Conv2d,
}

impl GeneratorLayers {
    fn new(init: &mut Init, cin: usize, cout: usize, c: usize, affine: bool, bias: bool, dropout: f32) -> Self {
        let norm = Norm::Instance { affine };
        let relu = Activation::Relu;
        GeneratorLayers {
            init_block: block(init, "init", BlockKind::Plain, 7, cin, c, norm, relu, dropout, bias),
            down1: block(init, "down1", BlockKind::Down, 3, c, 2 * c, norm, relu, dropout, bias),
            down2: block(init, "down2", BlockKind::Down, 3, 2 * c, 4 * c, norm, relu, dropout, bias),
            up1: block(init, "up1", BlockKind::Up, 3, 4 * c, 2 * c, norm, relu, dropout, bias),
            up2: block(init, "up2", BlockKind::Up, 3, 2 * c, c, norm, relu, dropout, bias),
            head: Conv2d::new(init, "head", c, cout, ConvGeom::new(7, 1, 3), bias),
        }
    }

    fn encode(&self, x: &Var, rt: &Runtime) -> Result<Var> {
        self.down2
            .forward(&self.down1.forward(&self.init_block.forward(x, rt)?, rt)?, rt)
    }

    fn decode(&self, h: &Var, rt: &Runtime) -> Result<Var> {
        let y = self.up2.forward(&self.up1.forward(h, rt)?, rt)?;
        Ok(self.head.forward(&y)?.tanh())
    }
}

/// Label-conditioned generator with separate encoder and decoder entry
/// points.
pub struct StarGanGenerator {
    base: Base,
    image_channels: usize,
    layers: GeneratorLayers,
}

pub fn build_stargan_generator(
    image_channels: usize,
    num_domains: usize,
    dropout: f32,
    seed: u64,
) -> Result<StarGanGenerator> {
    stargan_generator(image_channels, num_domains, dropout, BASE_CHANNELS, seed)
}

pub fn stargan_generator(
    image_channels: usize,
    num_domains: usize,
    dropout: f32,
    c: usize,
    seed: u64,
) -> Result<StarGanGenerator> {
    if num_domains != NUM_DOMAINS {
        return Err(Error::InvalidArgument(format!(
            "only {NUM_DOMAINS} domains are supported, got {num_domains}"
        )));
    }
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let layers = GeneratorLayers::new(
        &mut Init {
            params: &mut params,
            rng: &mut rng,
        },
        image_channels + num_domains,
        image_channels,
        c,
        true,
        false,
        dropout,
    );
    let spec = ArchSpec::StarganGenerator {
        image_channels,
        num_domains,
        dropout,
        base_channels: c,
    };
    Ok(StarGanGenerator {
        base: base(spec, params, seed),
        image_channels,
        layers,
    })
}

/// One-hot domain channels replicated over space: `[B,2,H,W]`.
pub fn label_planes(labels: &[DomainLabel], height: usize, width: usize) -> Tensor {
    let plane = height * width;
    let mut data = Vec::with_capacity(labels.len() * NUM_DOMAINS * plane);
    for l in labels {
        for v in l.one_hot() {
            data.extend(std::iter::repeat_n(v, plane));
        }
    }
    Tensor::new(vec![labels.len(), NUM_DOMAINS, height, width], data).expect("label plane size")
}

fn labels_from_one_hot(t: &Tensor) -> Result<Vec<DomainLabel>> {
    if t.rank() != 2 || t.shape()[1] != NUM_DOMAINS {
        return Err(Error::Dimension(format!("label input must be [B,2], got {:?}", t.shape())));
    }
    Ok(t.data()
        .chunks(NUM_DOMAINS)
        .map(|r| if r[1] > r[0] { DomainLabel::Target } else { DomainLabel::Source })
        .collect())
}

impl StarGanGenerator {
    pub fn encode(&self, x: &Var, labels: &[DomainLabel]) -> Result<Var> {
        check_spatial(x, 4, "generator")?;
        let s = x.shape();
        if s[1] != self.image_channels || labels.len() != s[0] {
            return Err(Error::Dimension(format!(
                "generator input {s:?} with {} labels",
                labels.len()
            )));
        }
        let planes = Var::constant(label_planes(labels, s[2], s[3]));
        self.layers.encode(&Var::concat(&[x.clone(), planes], 1)?, &self.base.rt)
    }

    pub fn decode(&self, h: &Var) -> Result<Var> {
        self.layers.decode(h, &self.base.rt)
    }

    pub fn translate(&self, x: &Var, labels: &[DomainLabel]) -> Result<Var> {
        self.decode(&self.encode(x, labels)?)
    }
}

impl_network!(StarGanGenerator, ["image", "label"], |s, inputs| {
    let labels = labels_from_one_hot(&take_input(inputs, "label")?.value())?;
    let h = s.encode(take_input(inputs, "image")?, &labels)?;
    let image = s.decode(&h)?;
    Ok(named(vec![("features", h), ("image", image)]))
});

/// Unconditioned generator of the two-generator baseline.
pub struct CycleGanGenerator {
    base: Base,
    layers: GeneratorLayers,
}

pub fn build_cyclegan_generator(image_channels: usize, seed: u64) -> CycleGanGenerator {
    cyclegan_generator(image_channels, BASE_CHANNELS, seed)
}

pub fn cyclegan_generator(image_channels: usize, c: usize, seed: u64) -> CycleGanGenerator {
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let layers = GeneratorLayers::new(
        &mut Init {
            params: &mut params,
            rng: &mut rng,
        },
        image_channels,
        image_channels,
        c,
        false,
        true,
        0.0,
    );
    let spec = ArchSpec::CycleganGenerator {
        image_channels,
        base_channels: c,
    };
    CycleGanGenerator {
        base: base(spec, params, seed),
        layers,
    }
}

impl CycleGanGenerator {
    pub fn forward(&self, x: &Var) -> Result<Var> {
        check_spatial(x, 4, "generator")?;
        let rt = &self.base.rt;
        self.layers.decode(&self.layers.encode(x, rt)?, rt)
    }
}

impl_network!(CycleGanGenerator, ["image"], |s, inputs| {
    Ok(named(vec![("image", s.forward(take_input(inputs, "image")?)?)]))
});

// --------------------------------------------------------------------------
// Image critics

struct Trunk {
    blocks: Vec<ConvBlock>,
    resolution: usize,
    width: usize,
}

impl Trunk {
    fn new(init: &mut Init, cin: usize, c: usize, norm: Norm, resolution: usize) -> Result<Self> {
        if resolution == 0 || !resolution.is_multiple_of(16) {
            return Err(Error::InvalidArgument(format!(
                "discriminator resolution {resolution} is not divisible by 16"
            )));
        }
        let chans = [cin, c, 2 * c, 4 * c, 8 * c];
        let blocks = (0..4)
            .map(|i| {
                block(
                    init,
                    &format!("down{}", i + 1),
                    BlockKind::Down,
                    4,
                    chans[i],
                    chans[i + 1],
                    norm,
                    Activation::LeakyRelu,
                    0.0,
                    true,
                )
            })
            .collect();
        Ok(Trunk {
            blocks,
            resolution,
            width: 8 * c,
        })
    }

    fn flat_features(&self) -> usize {
        self.width * (self.resolution / 16).pow(2)
    }

    fn forward(&self, x: &Var, rt: &Runtime) -> Result<Var> {
        let s = x.shape();
        if s.len() != 4 || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::Dimension(format!(
                "discriminator built for {r}x{r} inputs, got {s:?}",
                r = self.resolution
            )));
        }
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(&y, rt)?;
        }
        Ok(y.reshape(&[s[0], self.flat_features()])?)
    }
}

/// Wasserstein critic with a real/fake head and a domain-classification head.
pub struct StarGanDiscriminator {
    base: Base,
    trunk: Trunk,
    rf: Linear,
    dom: Linear,
}

pub fn build_stargan_discriminator(
    image_channels: usize,
    num_domains: usize,
    resolution: usize,
    seed: u64,
) -> Result<StarGanDiscriminator> {
    stargan_discriminator(image_channels, num_domains, resolution, BASE_CHANNELS, seed)
}

pub fn stargan_discriminator(
    image_channels: usize,
    num_domains: usize,
    resolution: usize,
    c: usize,
    seed: u64,
) -> Result<StarGanDiscriminator> {
    if num_domains != NUM_DOMAINS {
        return Err(Error::InvalidArgument(format!(
            "only {NUM_DOMAINS} domains are supported, got {num_domains}"
        )));
    }
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let mut init = Init {
        params: &mut params,
        rng: &mut rng,
    };
    let trunk = Trunk::new(&mut init, image_channels, c, Norm::None, resolution)?;
    let f = trunk.flat_features();
    let rf = Linear::new(&mut init, "rf", f, 1, false);
    let dom = Linear::new(&mut init, "dom", f, num_domains, false);
    let spec = ArchSpec::StarganDiscriminator {
        image_channels,
        num_domains,
        resolution,
        base_channels: c,
    };
    Ok(StarGanDiscriminator {
        base: base(spec, params, seed),
        trunk,
        rf,
        dom,
    })
}

impl StarGanDiscriminator {
    /// `(real/fake score [B,1], domain logits [B,2])`.
    pub fn forward(&self, x: &Var) -> Result<(Var, Var)> {
        let f = self.trunk.forward(x, &self.base.rt)?;
        Ok((self.rf.forward(&f)?, self.dom.forward(&f)?))
    }

    pub fn critic(&self, x: &Var) -> Result<Var> {
        self.rf.forward(&self.trunk.forward(x, &self.base.rt)?)
    }
}

impl_network!(StarGanDiscriminator, ["image"], |s, inputs| {
    let (rf, dom) = s.forward(take_input(inputs, "image")?)?;
    Ok(named(vec![("rf", rf), ("dom", dom)]))
});

/// Least-squares critic of the two-generator baseline.
pub struct CycleGanDiscriminator {
    base: Base,
    trunk: Trunk,
    fc: Linear,
}

pub fn build_cyclegan_discriminator(image_channels: usize, resolution: usize, seed: u64) -> Result<CycleGanDiscriminator> {
    cyclegan_discriminator(image_channels, resolution, BASE_CHANNELS, seed)
}

pub fn cyclegan_discriminator(
    image_channels: usize,
    resolution: usize,
    c: usize,
    seed: u64,
) -> Result<CycleGanDiscriminator> {
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let mut init = Init {
        params: &mut params,
        rng: &mut rng,
    };
    let trunk = Trunk::new(&mut init, image_channels, c, Norm::Instance { affine: false }, resolution)?;
    let fc = Linear::new(&mut init, "fc", trunk.flat_features(), 1, true);
    let spec = ArchSpec::CycleganDiscriminator {
        image_channels,
        resolution,
        base_channels: c,
    };
    Ok(CycleGanDiscriminator {
        base: base(spec, params, seed),
        trunk,
        fc,
    })
}

impl CycleGanDiscriminator {
    pub fn forward(&self, x: &Var) -> Result<Var> {
        self.fc.forward(&self.trunk.forward(x, &self.base.rt)?)
    }
}

impl_network!(CycleGanDiscriminator, ["image"], |s, inputs| {
    Ok(named(vec![("score", s.forward(take_input(inputs, "image")?)?)]))
});

// --------------------------------------------------------------------------
// Feature critics

fn up_pair(init: &mut Init, c: usize, dropout: f32) -> (ConvBlock, ConvBlock) {
    let lr = Activation::LeakyRelu;
    (
        block(init, "up1", BlockKind::Up, 4, c, c / 2, Norm::None, lr, dropout, true),
        block(init, "up2", BlockKind::Up, 4, c / 2, c / 4, Norm::None, lr, dropout, true),
    )
}

/// Per-pixel domain critic on bottleneck features, upsampled back to image
/// resolution.
pub struct FeatureDiscOutcond {
    base: Base,
    up1: ConvBlock,
    up2: ConvBlock,
    head: Conv2d,
}

pub fn build_feature_disc_outcond(feature_channels: usize, dropout: f32, seed: u64) -> FeatureDiscOutcond {
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let mut init = Init {
        params: &mut params,
        rng: &mut rng,
    };
    let (up1, up2) = up_pair(&mut init, feature_channels, dropout);
    let head = Conv2d::new(&mut init, "head", feature_channels / 4, 1, ConvGeom::new(3, 1, 1), true);
    let spec = ArchSpec::FeatureDiscOutcond {
        feature_channels,
        dropout,
    };
    FeatureDiscOutcond {
        base: base(spec, params, seed),
        up1,
        up2,
        head,
    }
}

impl FeatureDiscOutcond {
    /// Score map `[B,1,4h,4w]`.
    pub fn forward(&self, h: &Var) -> Result<Var> {
        let rt = &self.base.rt;
        self.head.forward(&self.up2.forward(&self.up1.forward(h, rt)?, rt)?)
    }
}

impl_network!(FeatureDiscOutcond, ["features"], |s, inputs| {
    Ok(named(vec![("score", s.forward(take_input(inputs, "features")?)?)]))
});

/// Global feature critic: two downsampling blocks, pooling, one score.
pub struct FeatureDiscUncond {
    base: Base,
    down1: ConvBlock,
    down2: ConvBlock,
    fc: Linear,
}

pub fn build_feature_disc_uncond(feature_channels: usize, dropout: f32, seed: u64) -> FeatureDiscUncond {
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let mut init = Init {
        params: &mut params,
        rng: &mut rng,
    };
    let c = feature_channels;
    let lr = Activation::LeakyRelu;
    let down1 = block(&mut init, "down1", BlockKind::Down, 4, c, 2 * c, Norm::None, lr, dropout, true);
    let down2 = block(&mut init, "down2", BlockKind::Down, 4, 2 * c, 4 * c, Norm::None, lr, dropout, true);
    let fc = Linear::new(&mut init, "fc", 4 * c, 1, true);
    let spec = ArchSpec::FeatureDiscUncond {
        feature_channels,
        dropout,
    };
    FeatureDiscUncond {
        base: base(spec, params, seed),
        down1,
        down2,
        fc,
    }
}

impl FeatureDiscUncond {
    pub fn forward(&self, h: &Var) -> Result<Var> {
        check_spatial(h, 4, "feature critic")?;
        let rt = &self.base.rt;
        let y = self.down2.forward(&self.down1.forward(h, rt)?, rt)?;
        self.fc.forward(&global_average_pool(&y)?)
    }
}

impl_network!(FeatureDiscUncond, ["features"], |s, inputs| {
    Ok(named(vec![("score", s.forward(take_input(inputs, "features")?)?)]))
});

/// Feature critic that also sees the segmentation prediction.
pub struct FeatureDiscIncond {
    base: Base,
    seg_channels: usize,
    up1: ConvBlock,
    up2: ConvBlock,
    downs: Vec<ConvBlock>,
    fc: Linear,
}

pub fn build_feature_disc_incond(
    feature_channels: usize,
    num_classes: usize,
    dropout: f32,
    seed: u64,
) -> Result<FeatureDiscIncond> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!("{num_classes} classes")));
    }
    // a binary segmenter emits a single foreground channel
    let seg_channels = if num_classes == 2 { 1 } else { num_classes };
    let (mut params, mut rng) = (ParamSet::default(), init_rng(seed));
    let mut init = Init {
        params: &mut params,
        rng: &mut rng,
    };
    let c = feature_channels;
    let (up1, up2) = up_pair(&mut init, c, dropout);
    let chans = [c / 4 + seg_channels, c / 2, c, 2 * c, 4 * c];
    let downs = (0..4)
        .map(|i| {
            block(
                &mut init,
                &format!("down{}", i + 1),
                BlockKind::Down,
                4,
                chans[i],
                chans[i + 1],
                Norm::None,
                Activation::LeakyRelu,
                dropout,
                true,
            )
        })
        .collect();
    let fc = Linear::new(&mut init, "fc", 4 * c, 1, true);
    let spec = ArchSpec::FeatureDiscIncond {
        feature_channels,
        num_classes,
        dropout,
    };
    Ok(FeatureDiscIncond {
        base: base(spec, params, seed),
        seg_channels,
        up1,
        up2,
        downs,
        fc,
    })
}

impl FeatureDiscIncond {
    pub fn forward(&self, h: &Var, seg: &Var) -> Result<Var> {
        let rt = &self.base.rt;
        let up = self.up2.forward(&self.up1.forward(h, rt)?, rt)?;
        let (us, ss) = (up.shape(), seg.shape());
        if ss.len() != 4 || ss[0] != us[0] || ss[1] != self.seg_channels || ss[2..] != us[2..] {
            return Err(Error::Dimension(format!(
                "segmentation {ss:?} does not match restored features {us:?}"
            )));
        }
        check_spatial(&up, 16, "input-conditioned critic")?;
        let mut y = Var::concat(&[up, seg.clone()], 1)?;
        for b in &self.downs {
            y = b.forward(&y, rt)?;
        }
        self.fc.forward(&global_average_pool(&y)?)
    }
}

impl_network!(FeatureDiscIncond, ["features", "segmentation"], |s, inputs| {
    let score = s.forward(take_input(inputs, "features")?, take_input(inputs, "segmentation")?)?;
    Ok(named(vec![("score", score)]))
});
