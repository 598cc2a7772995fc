//! Finite-difference checks on tiny critics and the stop-gradient check of
//! the output-conditioned generator loss. Each check returns its measured
//! error so callers decide how to report it.

use autograd::gradcheck::{max_relative_error, numerical_gradient};
use autograd::{gradients, ConvGeom, Tensor, Var};
use condaseg::data::DomainLabel;
use condaseg::losses::{self, LossValue};
use condaseg::nets::{self, ArchSpec, Mode, Network};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub const FD_STEP: f32 = 1e-2;
pub const FD_TOL: f32 = 1e-3;
/// Largest parameter count of any critic the checks differentiate.
pub const MAX_PARAMS: usize = 100;

/// Worst relative error of the gradient of `f` with respect to its input.
pub fn fd_error(x: &Tensor, f: impl Fn(&Var) -> Var) -> f32 {
    let xv = Var::input(x.clone());
    let analytic = gradients(&f(&xv), &[&xv]).unwrap().remove(0);
    let numeric = numerical_gradient(x, FD_STEP, |t| f(&Var::constant(t.clone())).item());
    max_relative_error(&analytic, &numeric, 1e-1)
}

/// Small smooth critics with fewer than 100 parameters, one per feature
/// matching variant. Parameters are passed in so finite differences can
/// perturb them.
pub struct TinyCritics {
    /// transposed conv 2->2 (4x4) + tanh + 3x3 conv 2->1: 85 parameters
    pub out: Vec<Tensor>,
    /// 3x3 stride-2 conv 2->4 + tanh + mean pool + linear 4->1: 81 parameters
    pub un: Vec<Tensor>,
    /// transposed conv 2->2 + tanh, concat prediction, 3x3 stride-2 conv
    /// 3->1 + tanh, mean pool: 94 parameters
    pub inc: Vec<Tensor>,
}

pub fn tiny_critics() -> TinyCritics {
    let u = |shape: &[usize], seed| uniform(shape, -0.5, 0.5, seed);
    TinyCritics {
        out: vec![u(&[2, 2, 4, 4], 10), u(&[1, 2, 1, 1], 11), u(&[1, 2, 3, 3], 12), u(&[1, 1, 1, 1], 13)],
        un: vec![u(&[4, 2, 3, 3], 20), u(&[1, 4, 1, 1], 21), u(&[4, 1], 22), u(&[1, 1], 23)],
        inc: vec![u(&[2, 2, 4, 4], 30), u(&[1, 2, 1, 1], 31), u(&[1, 3, 3, 3], 32), u(&[1, 1, 1, 1], 33)],
    }
}

pub fn n_params(ts: &[Tensor]) -> usize {
    ts.iter().map(Tensor::numel).sum()
}

fn up(h: &Var, w: &Var, b: &Var) -> Var {
    let s = h.shape();
    h.conv_transpose2d(w, ConvGeom::new(4, 2, 1), (2 * s[2], 2 * s[3]))
        .unwrap()
        .add(b)
        .unwrap()
        .tanh()
}

pub fn out_critic(p: &[Var], h: &Var) -> autograd::Result<Var> {
    up(h, &p[0], &p[1]).conv2d(&p[2], ConvGeom::new(3, 1, 1))?.add(&p[3])
}

pub fn un_critic(p: &[Var], h: &Var) -> autograd::Result<Var> {
    let b = h.shape()[0];
    let x = h.conv2d(&p[0], ConvGeom::new(3, 2, 1))?.add(&p[1])?.tanh();
    x.mean_axes(&[2, 3])?.reshape(&[b, 4])?.matmul(&p[2])?.add(&p[3])
}

pub fn in_critic(p: &[Var], h: &Var, y: &Var) -> autograd::Result<Var> {
    let b = h.shape()[0];
    let x = Var::concat(&[up(h, &p[0], &p[1]), y.clone()], 1)?;
    let x = x.conv2d(&p[2], ConvGeom::new(3, 2, 1))?.add(&p[3])?.tanh();
    x.mean_axes(&[1, 2, 3])?.reshape(&[b, 1])
}

pub struct FeatureBatch {
    pub h_s: Var,
    pub h_t: Var,
    pub y_s: Var,
    pub y_t: Var,
}

pub fn feature_batch(seed: u64) -> FeatureBatch {
    FeatureBatch {
        h_s: Var::constant(uniform(&[2, 2, 2, 2], -1.0, 1.0, seed)),
        h_t: Var::constant(uniform(&[2, 2, 2, 2], -1.0, 1.0, seed + 1)),
        y_s: Var::constant(uniform(&[2, 1, 4, 4], 0.0, 1.0, seed + 2)),
        y_t: Var::constant(uniform(&[2, 1, 4, 4], 0.0, 1.0, seed + 3)),
    }
}

/// Worst relative error over all critic parameters of a critic-side loss,
/// with the interpolation weights fixed by a fresh generator on every call.
pub fn penalty_fd_error(params: &[Tensor], loss: impl Fn(&[Var]) -> LossValue) -> f32 {
    assert!(n_params(params) <= MAX_PARAMS);
    (0..params.len())
        .map(|i| {
            let vars: Vec<Var> = params.iter().map(|t| Var::input(t.clone())).collect();
            let analytic = gradients(&loss(&vars).value, &[&vars[i]]).unwrap().remove(0);
            let numeric = numerical_gradient(&params[i], FD_STEP, |t| {
                let mut vars: Vec<Var> = params.iter().map(|t| Var::constant(t.clone())).collect();
                vars[i] = Var::constant(t.clone());
                loss(&vars).item()
            });
            max_relative_error(&analytic, &numeric, 1e-1)
        })
        .fold(0.0, f32::max)
}

pub fn soft_iou_fd() -> f32 {
    let target = Var::constant(uniform(&[2, 1, 4, 4], 0.0, 1.0, 1).map(|v| if v > 0.5 { 1.0 } else { 0.0 }));
    let pred = uniform(&[2, 1, 4, 4], 0.1, 0.9, 2);
    fd_error(&pred, |p| losses::soft_iou_loss(p, &target).unwrap().value)
}

pub fn aggregation_fd() -> f32 {
    let y = Var::constant(uniform(&[2, 1, 4, 4], 0.0, 1.0, 3));
    let score = uniform(&[2, 1, 4, 4], -1.0, 1.0, 4);
    let w = Var::constant(uniform(&[2, 2], 0.5, 1.5, 5));
    fd_error(&score, |s| losses::classwise_aggregate(s, &y).unwrap().mul(&w).unwrap().sum_all())
}

pub fn outcond_penalty_fd() -> f32 {
    let (c, f) = (tiny_critics(), feature_batch(40));
    penalty_fd_error(&c.out, |p| {
        let df = |h: &Var| Ok(out_critic(p, h)?);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        losses::featmatch_outcond_d_loss(&df, &f.h_s, &f.h_t, &f.y_s, &f.y_t, 2.0, &mut rng).unwrap()
    })
}

pub fn uncond_penalty_fd() -> f32 {
    let (c, f) = (tiny_critics(), feature_batch(50));
    penalty_fd_error(&c.un, |p| {
        let df = |h: &Var| Ok(un_critic(p, h)?);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        losses::featmatch_uncond_d_loss(&df, &f.h_s, &f.h_t, 5.0, &mut rng).unwrap()
    })
}

pub fn incond_penalty_fd() -> f32 {
    let (c, f) = (tiny_critics(), feature_batch(60));
    penalty_fd_error(&c.inc, |p| {
        let df = |h: &Var, y: &Var| Ok(in_critic(p, h, y)?);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        losses::featmatch_incond_d_loss(&df, &f.h_s, &f.h_t, &f.y_s, &f.y_t, 1.0, &mut rng).unwrap()
    })
}

pub fn image_penalty_fd() -> f32 {
    let c = tiny_critics();
    let real = Var::constant(uniform(&[2, 2, 4, 4], -1.0, 1.0, 70));
    let fake = Var::constant(uniform(&[2, 2, 4, 4], -1.0, 1.0, 71));
    penalty_fd_error(&c.un, |p| {
        let critic = |x: &Var| Ok(un_critic(p, x)?);
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        losses::wgan_critic_loss(&critic, &real, &fake, 10.0, &mut rng).unwrap()
    })
}

/// The penalty as a function of the interpolated input itself.
pub fn penalty_input_fd() -> f32 {
    let c = tiny_critics();
    let p: Vec<Var> = c.un.iter().map(|t| Var::constant(t.clone())).collect();
    let x = uniform(&[2, 2, 4, 4], -1.0, 1.0, 80);
    fd_error(&x, |xv| {
        let critic = |x: &Var| Ok(un_critic(&p, x)?);
        let xv = if xv.requires_grad() { xv.clone() } else { Var::input(xv.value()) };
        losses::penalty_at(&critic, &xv).unwrap()
    })
}

pub type FdCheck = fn() -> f32;

pub const FD_CHECKS: [(&str, FdCheck); 7] = [
    ("soft_iou_loss", soft_iou_fd),
    ("classwise_aggregate", aggregation_fd),
    ("featmatch_outcond penalty", outcond_penalty_fd),
    ("featmatch_uncond penalty", uncond_penalty_fd),
    ("featmatch_incond penalty", incond_penalty_fd),
    ("image critic penalty", image_penalty_fd),
    ("penalty input gradient", penalty_input_fd),
];

fn small_generator_and_segmenter() -> (Box<dyn Network>, Box<dyn Network>, Box<dyn Network>) {
    let g = nets::build(
        &ArchSpec::StarganGenerator {
            image_channels: 3,
            num_domains: 2,
            dropout: 0.0,
            base_channels: 2,
        },
        1,
    )
    .unwrap();
    let s = nets::build(&ArchSpec::SegDecoder { dropout: 0.0, base_channels: 2 }, 2).unwrap();
    let df = nets::build(&ArchSpec::FeatureDiscOutcond { feature_channels: 8, dropout: 0.0 }, 3).unwrap();
    for n in [&g, &s, &df] {
        n.set_mode(Mode::Eval);
    }
    (g, s, df)
}

fn encode(g: &dyn Network, x: &Var) -> Var {
    let b = x.shape()[0];
    let labels: Vec<f32> = (0..b).flat_map(|_| DomainLabel::Source.one_hot()).collect();
    let inputs = [
        ("image".to_string(), x.clone()),
        ("label".to_string(), Var::constant(Tensor::new(vec![b, 2], labels).unwrap())),
    ]
    .into_iter()
    .collect();
    // the full generator output is not needed, only its bottleneck
    let g = g.forward_named(&inputs).unwrap();
    g["features"].clone()
}

pub struct StopGradient {
    /// Largest absolute gradient reaching any segmenter parameter.
    pub segmenter_max_abs: f32,
    /// Encoder gradients with and without explicit detachment agree bitwise.
    pub bitwise_equal: bool,
    /// The encoder still receives a nonzero gradient.
    pub encoder_trained: bool,
}

/// Gradients of the output-conditioned generator-side feature loss.
pub fn outcond_stop_gradient() -> StopGradient {
    let (g, s, df) = small_generator_and_segmenter();
    let x_s = Var::constant(uniform(&[2, 3, 16, 16], -1.0, 1.0, 90));
    let x_t = Var::constant(uniform(&[2, 3, 16, 16], -1.0, 1.0, 91));
    let seg = |h: &Var| s.forward_named(&[("features".to_string(), h.clone())].into_iter().collect()).unwrap()["mask"].clone();
    let critic = |h: &Var| Ok(df.forward_named(&[("features".to_string(), h.clone())].into_iter().collect())?["score"].clone());

    let loss_with = |detach: bool| {
        let (h_s, h_t) = (encode(g.as_ref(), &x_s), encode(g.as_ref(), &x_t));
        let (mut y_s, mut y_t) = (seg(&h_s), seg(&h_t));
        if detach {
            y_s = y_s.detach();
            y_t = y_t.detach();
        }
        losses::featmatch_outcond_g_loss(&critic, &h_s, &h_t, &y_s, &y_t).unwrap().value
    };

    let s_params = s.parameter_vars();
    let grads = gradients(&loss_with(false), &s_params.iter().collect::<Vec<_>>()).unwrap();
    let segmenter_max_abs = grads.iter().flat_map(|t| t.data().iter().map(|v| v.abs())).fold(0.0, f32::max);

    let g_params = g.parameter_vars();
    let refs: Vec<&Var> = g_params.iter().collect();
    let attached = gradients(&loss_with(false), &refs).unwrap();
    let detached = gradients(&loss_with(true), &refs).unwrap();
    let bits = |ts: &[Tensor]| ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<u32>>();
    StopGradient {
        segmenter_max_abs,
        bitwise_equal: bits(&attached) == bits(&detached),
        encoder_trained: attached.iter().any(|t| t.data().iter().any(|&v| v != 0.0)),
    }
}
