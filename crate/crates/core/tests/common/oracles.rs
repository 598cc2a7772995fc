//! Plain-loop reference implementations of the losses, in f64, written
//! without the tensor engine. Each `check_*` draws a random instance of at
//! most 2x2x4x4, evaluates the library and the oracle, and returns the
//! absolute difference.

use autograd::{ConvGeom, Tensor, Var};
use condaseg::data::DomainLabel;
use condaseg::losses;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `[b, c, h, w]` array.
#[derive(Clone, Debug)]
pub struct A4 {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl A4 {
    pub fn random(rng: &mut ChaCha8Rng, dims: [usize; 4], lo: f64, hi: f64) -> Self {
        let n = dims.iter().product();
        A4 {
            b: dims[0],
            c: dims[1],
            h: dims[2],
            w: dims[3],
            v: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        }
    }

    pub fn binary(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Self {
        let mut a = A4::random(rng, dims, 0.0, 1.0);
        a.v.iter_mut().for_each(|x| *x = if *x > 0.5 { 1.0 } else { 0.0 });
        a
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((b * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn var(&self) -> Var {
        Var::constant(self.tensor())
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(vec![self.b, self.c, self.h, self.w], self.v.iter().map(|&x| x as f32).collect::<Vec<_>>()).unwrap()
    }

    /// Rounds through f32 so the oracle sees exactly the library's inputs.
    pub fn rounded(mut self) -> Self {
        self.v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        self
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dims(rng: &mut ChaCha8Rng, channels: Option<usize>) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        channels.unwrap_or_else(|| rng.random_range(1..=2)),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    ]
}

const EPS: f64 = 1e-8;

pub fn check_soft_iou(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, Some(1));
    let pred = A4::random(&mut r, d, 0.0, 1.0).rounded();
    let target = A4::binary(&mut r, d);
    let mut total = 0.0;
    for b in 0..d[0] {
        let (mut inter, mut union) = (0.0, 0.0);
        for y in 0..d[2] {
            for x in 0..d[3] {
                let (p, t) = (pred.at(b, 0, y, x), target.at(b, 0, y, x));
                inter += p * t;
                union += p + t - p * t;
            }
        }
        total += 1.0 - inter / (union + EPS);
    }
    let oracle = total / d[0] as f64;
    let lib = losses::soft_iou_loss(&pred.var(), &target.var()).unwrap().item() as f64;
    (lib - oracle).abs()
}

pub fn check_pixel_ce(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, None);
    let pred = A4::random(&mut r, d, 0.0, 1.0).rounded();
    let target = A4::binary(&mut r, d);
    let clamp = |v: f64| v.max(1e-12).ln();
    let n = pred.v.len() as f64;
    let oracle: f64 = pred
        .v
        .iter()
        .zip(&target.v)
        .map(|(&p, &t)| -t * clamp(p) - (1.0 - t) * clamp(1.0 - p))
        .sum::<f64>()
        / n;
    let lib = losses::pixel_ce_loss(&pred.var(), &target.var()).unwrap().item() as f64;
    (lib - oracle).abs()
}

fn scores(r: &mut ChaCha8Rng) -> A4 {
    let b = r.random_range(1..=4);
    A4::random(r, [b, 1, 1, 1], -2.0, 2.0).rounded()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn check_lsgan(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (real, fake) = (scores(&mut r), scores(&mut r));
    let d_oracle = mean(&real.v.iter().map(|x| (x - 1.0).powi(2)).collect::<Vec<_>>())
        + mean(&fake.v.iter().map(|x| x * x).collect::<Vec<_>>());
    let g_oracle = mean(&fake.v.iter().map(|x| (x - 1.0).powi(2)).collect::<Vec<_>>());
    let d = losses::lsgan_d_loss(&real.var(), &fake.var()).unwrap().item() as f64;
    let g = losses::lsgan_g_loss(&fake.var()).unwrap().item() as f64;
    (d - d_oracle).abs().max((g - g_oracle).abs())
}

pub fn check_cycle(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, None);
    let a = A4::random(&mut r, d, -1.0, 1.0).rounded();
    let b = A4::random(&mut r, d, -1.0, 1.0).rounded();
    let oracle = mean(&a.v.iter().zip(&b.v).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>());
    let lib = losses::cycle_loss(&a.var(), &b.var()).unwrap().item() as f64;
    (lib - oracle).abs()
}

fn labels(r: &mut ChaCha8Rng, n: usize) -> Vec<DomainLabel> {
    (0..n)
        .map(|_| if r.random::<bool>() { DomainLabel::Source } else { DomainLabel::Target })
        .collect()
}

fn ce_oracle(logits: &[f64], labels: &[DomainLabel]) -> f64 {
    let mut total = 0.0;
    for (i, l) in labels.iter().enumerate() {
        let (z0, z1) = (logits[2 * i], logits[2 * i + 1]);
        let m = z0.max(z1);
        let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
        total += lse - logits[2 * i + l.index()];
    }
    total / labels.len() as f64
}

pub fn check_domain_cls(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=4);
    let real = A4::random(&mut r, [n, 2, 1, 1], -3.0, 3.0).rounded();
    let fake = A4::random(&mut r, [n, 2, 1, 1], -3.0, 3.0).rounded();
    let (lr, lf) = (labels(&mut r, n), labels(&mut r, n));
    let as2 = |a: &A4| a.var().reshape(&[n, 2]).unwrap();
    let (d, g) = losses::domain_cls_losses(&as2(&real), &lr, &as2(&fake), &lf).unwrap();
    ((d.item() as f64) - ce_oracle(&real.v, &lr))
        .abs()
        .max(((g.item() as f64) - ce_oracle(&fake.v, &lf)).abs())
}

/// Per-sample `[background, digit]` weighted means.
fn aggregate_oracle(score: &A4, y: &A4) -> Vec<[f64; 2]> {
    (0..score.b)
        .map(|b| {
            let (mut nb, mut db, mut nf, mut df) = (0.0, 0.0, 0.0, 0.0);
            for yy in 0..score.h {
                for x in 0..score.w {
                    let (s, m) = (score.at(b, 0, yy, x), y.at(b, 0, yy, x));
                    nf += m * s;
                    df += m;
                    nb += (1.0 - m) * s;
                    db += 1.0 - m;
                }
            }
            [nb / (db + EPS), nf / (df + EPS)]
        })
        .collect()
}

pub fn check_aggregate(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = dims(&mut r, Some(1));
    let score = A4::random(&mut r, d, -2.0, 2.0).rounded();
    let y = A4::random(&mut r, d, 0.0, 1.0).rounded();
    let lib = losses::classwise_aggregate(&score.var(), &y.var()).unwrap().value();
    aggregate_oracle(&score, &y)
        .iter()
        .flatten()
        .zip(lib.data())
        .map(|(o, &l)| (o - l as f64).abs())
        .fold(0.0, f64::max)
}

/// Pixelwise critic `tanh(sum_c w_c h[c, p] + v * y[p] + bias)`: the
/// score map of the output-conditioned case, and (averaged over pixels)
/// the per-sample score of the other two.
#[derive(Clone, Debug)]
pub struct PixelCritic {
    pub w: Vec<f64>,
    pub v: f64,
    pub bias: f64,
}

impl PixelCritic {
    pub fn random(r: &mut ChaCha8Rng, channels: usize) -> Self {
        let q = |r: &mut ChaCha8Rng| r.random_range(-1.0..1.0f32) as f64;
        PixelCritic {
            w: (0..channels).map(|_| q(r)).collect(),
            v: q(r),
            bias: q(r),
        }
    }

    fn pre(&self, h: &A4, y: Option<&A4>, b: usize, yy: usize, x: usize) -> f64 {
        let mut s = self.bias;
        for c in 0..h.c {
            s += self.w[c] * h.at(b, c, yy, x);
        }
        if let Some(m) = y {
            s += self.v * m.at(b, 0, yy, x);
        }
        s
    }

    /// Score map `[b][p]`.
    pub fn map(&self, h: &A4, y: Option<&A4>) -> Vec<Vec<f64>> {
        (0..h.b)
            .map(|b| {
                let mut out = Vec::with_capacity(h.pixels());
                for yy in 0..h.h {
                    for x in 0..h.w {
                        out.push(self.pre(h, y, b, yy, x).tanh());
                    }
                }
                out
            })
            .collect()
    }

    /// Library form of the score map, `[B, 1, H, W]`.
    pub fn map_var(&self, h: &Var, y: Option<&Var>) -> condaseg::Result<Var> {
        let c = h.shape()[1];
        let w = Var::constant(Tensor::new(vec![1, c, 1, 1], self.w.iter().map(|&x| x as f32).collect::<Vec<_>>()).unwrap());
        let mut pre = h.conv2d(&w, ConvGeom::new(1, 1, 0))?;
        if let Some(y) = y {
            pre = pre.add(&y.scale(self.v as f32))?;
        }
        Ok(pre.add_scalar(self.bias as f32).tanh())
    }

    /// Pixel mean of the score map, `[B, 1]`.
    pub fn mean_var(&self, h: &Var, y: Option<&Var>) -> condaseg::Result<Var> {
        let b = h.shape()[0];
        Ok(self.map_var(h, y)?.mean_axes(&[1, 2, 3])?.reshape(&[b, 1])?)
    }

    fn rounded(mut self) -> Self {
        self.w.iter_mut().for_each(|x| *x = *x as f32 as f64);
        self.v = self.v as f32 as f64;
        self.bias = self.bias as f32 as f64;
        self
    }
}

fn lerp(a: &A4, b: &A4, alpha: &[f64]) -> A4 {
    let per = a.v.len() / a.b;
    let mut out = a.clone();
    for (i, o) in out.v.iter_mut().enumerate() {
        let t = alpha[i / per];
        *o = t * a.v[i] + (1.0 - t) * b.v[i];
    }
    out
}

fn alphas(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f32>() as f64).collect()
}

/// Penalty of the pixel-mean critic: the gradient of the mean over `P`
/// pixels with respect to `h[c, p]` is `(1 - t_p^2) w_c / P`.
fn mean_critic_penalty(critic: &PixelCritic, h: &A4, y: Option<&A4>) -> f64 {
    let maps = critic.map(h, y);
    let wsq: f64 = critic.w.iter().map(|w| w * w).sum();
    let p = h.pixels() as f64;
    let per_sample: Vec<f64> = maps
        .iter()
        .map(|t| {
            let s: f64 = t.iter().map(|t| ((1.0 - t * t) / p).powi(2)).sum();
            ((s * wsq).sqrt() - 1.0).powi(2)
        })
        .collect();
    mean(&per_sample)
}

/// Penalty of the aggregated pixel critic, averaged over both classes.
fn aggregate_penalty(critic: &PixelCritic, h: &A4, y: &A4) -> f64 {
    let maps = critic.map(h, None);
    let wsq: f64 = critic.w.iter().map(|w| w * w).sum();
    let mut terms = Vec::new();
    for (b, t) in maps.iter().enumerate() {
        let fg: Vec<f64> = (0..h.pixels()).map(|p| y.v[b * h.pixels() + p]).collect();
        for weights in [fg.iter().map(|m| 1.0 - m).collect::<Vec<_>>(), fg.clone()] {
            let total: f64 = weights.iter().sum::<f64>() + EPS;
            let s: f64 = weights
                .iter()
                .zip(t)
                .map(|(wp, t)| (wp / total * (1.0 - t * t)).powi(2))
                .sum();
            terms.push(((s * wsq).sqrt() - 1.0).powi(2));
        }
    }
    mean(&terms)
}

fn mean_of_means(maps: &[Vec<f64>]) -> f64 {
    mean(&maps.iter().map(|m| mean(m)).collect::<Vec<_>>())
}

fn mean_of_aggregates(critic: &PixelCritic, h: &A4, y: &A4) -> f64 {
    let score = A4 {
        b: h.b,
        c: 1,
        h: h.h,
        w: h.w,
        v: critic.map(h, None).concat(),
    };
    mean(&aggregate_oracle(&score, y).concat())
}

pub struct FeatInstance {
    pub h_s: A4,
    pub h_t: A4,
    pub y_s: A4,
    pub y_t: A4,
    pub critic: PixelCritic,
    pub lambda: f64,
}

pub fn feat_instance(seed: u64) -> FeatInstance {
    let mut r = rng(seed);
    let d = dims(&mut r, None);
    let md = [d[0], 1, d[2], d[3]];
    FeatInstance {
        h_s: A4::random(&mut r, d, -1.0, 1.0).rounded(),
        h_t: A4::random(&mut r, d, -1.0, 1.0).rounded(),
        y_s: A4::random(&mut r, md, 0.0, 1.0).rounded(),
        y_t: A4::random(&mut r, md, 0.0, 1.0).rounded(),
        critic: PixelCritic::random(&mut r, d[1]).rounded(),
        lambda: r.random_range(0.0..10.0f32) as f64,
    }
}

/// Both losses of the real/fake game with the pixel-mean critic on images.
pub fn check_wgan(seed: u64) -> f64 {
    let f = feat_instance(seed);
    let critic = |x: &Var| f.critic.mean_var(x, None);
    let mut lib_rng = rng(seed ^ 0xabc);
    let (d, g) = losses::wgan_rf_losses(&critic, &f.h_s.var(), &f.h_t.var(), f.lambda as f32, &mut lib_rng).unwrap();

    let mut o_rng = rng(seed ^ 0xabc);
    let alpha = alphas(&mut o_rng, f.h_s.b);
    let x_hat = lerp(&f.h_s, &f.h_t, &alpha).rounded();
    let real = mean_of_means(&f.critic.map(&f.h_s, None));
    let fake = mean_of_means(&f.critic.map(&f.h_t, None));
    let d_oracle = fake - real + f.lambda * mean_critic_penalty(&f.critic, &x_hat, None);
    ((d.item() as f64) - d_oracle).abs().max(((g.item() as f64) + fake).abs())
}

pub fn check_gradient_penalty(seed: u64) -> f64 {
    let f = feat_instance(seed);
    let critic = |x: &Var| f.critic.mean_var(x, None);
    let mut lib_rng = rng(seed ^ 0x9e);
    let lib = losses::gradient_penalty(&critic, &f.h_s.var(), &f.h_t.var(), &mut lib_rng).unwrap().item() as f64;
    let alpha = alphas(&mut rng(seed ^ 0x9e), f.h_s.b);
    let x_hat = lerp(&f.h_s, &f.h_t, &alpha).rounded();
    (lib - mean_critic_penalty(&f.critic, &x_hat, None)).abs()
}

pub fn check_featmatch_outcond(seed: u64) -> f64 {
    let f = feat_instance(seed);
    let df = |h: &Var| f.critic.map_var(h, None);
    let mut lib_rng = rng(seed ^ 0x51);
    let (d, g) = losses::featmatch_outcond_losses(
        &df,
        &f.h_s.var(),
        &f.h_t.var(),
        &f.y_s.var(),
        &f.y_t.var(),
        f.lambda as f32,
        &mut lib_rng,
    )
    .unwrap();
    let alpha = alphas(&mut rng(seed ^ 0x51), f.h_s.b);
    let h_bar = lerp(&f.h_s, &f.h_t, &alpha).rounded();
    let y_bar = lerp(&f.y_s, &f.y_t, &alpha).rounded();
    let s = mean_of_aggregates(&f.critic, &f.h_s, &f.y_s);
    let t = mean_of_aggregates(&f.critic, &f.h_t, &f.y_t);
    let d_oracle = t - s + f.lambda * aggregate_penalty(&f.critic, &h_bar, &y_bar);
    ((d.item() as f64) - d_oracle).abs().max(((g.item() as f64) - (s - t)).abs())
}

pub fn check_featmatch_uncond(seed: u64) -> f64 {
    let f = feat_instance(seed);
    let df = |h: &Var| f.critic.mean_var(h, None);
    let mut lib_rng = rng(seed ^ 0x77);
    let (d, g) = losses::featmatch_uncond_losses(&df, &f.h_s.var(), &f.h_t.var(), f.lambda as f32, &mut lib_rng).unwrap();
    let alpha = alphas(&mut rng(seed ^ 0x77), f.h_s.b);
    let h_bar = lerp(&f.h_s, &f.h_t, &alpha).rounded();
    let s = mean_of_means(&f.critic.map(&f.h_s, None));
    let t = mean_of_means(&f.critic.map(&f.h_t, None));
    let d_oracle = t - s + f.lambda * mean_critic_penalty(&f.critic, &h_bar, None);
    ((d.item() as f64) - d_oracle).abs().max(((g.item() as f64) - (s - t)).abs())
}

pub fn check_featmatch_incond(seed: u64) -> f64 {
    let f = feat_instance(seed);
    let df = |h: &Var, y: &Var| f.critic.mean_var(h, Some(y));
    let mut lib_rng = rng(seed ^ 0x33);
    let (d, g) = losses::featmatch_incond_losses(
        &df,
        &f.h_s.var(),
        &f.h_t.var(),
        &f.y_s.var(),
        &f.y_t.var(),
        f.lambda as f32,
        &mut lib_rng,
    )
    .unwrap();
    let alpha = alphas(&mut rng(seed ^ 0x33), f.h_s.b);
    let h_bar = lerp(&f.h_s, &f.h_t, &alpha).rounded();
    let y_bar = lerp(&f.y_s, &f.y_t, &alpha).rounded();
    let s = mean_of_means(&f.critic.map(&f.h_s, Some(&f.y_s)));
    let t = mean_of_means(&f.critic.map(&f.h_t, Some(&f.y_t)));
    let d_oracle = t - s + f.lambda * mean_critic_penalty(&f.critic, &h_bar, Some(&y_bar));
    ((d.item() as f64) - d_oracle).abs().max(((g.item() as f64) - (s - t)).abs())
}

pub type Check = fn(u64) -> f64;

/// Every loss with its oracle.
pub const ALL: [(&str, Check); 11] = [
    ("soft_iou_loss", check_soft_iou),
    ("pixel_ce_loss", check_pixel_ce),
    ("lsgan_d_loss/lsgan_g_loss", check_lsgan),
    ("cycle_loss", check_cycle),
    ("domain_cls_losses", check_domain_cls),
    ("classwise_aggregate", check_aggregate),
    ("gradient_penalty", check_gradient_penalty),
    ("wgan_rf_losses", check_wgan),
    ("featmatch_outcond_losses", check_featmatch_outcond),
    ("featmatch_uncond_losses", check_featmatch_uncond),
    ("featmatch_incond_losses", check_featmatch_incond),
];

pub const CASES: u64 = 200;
pub const TOLERANCE: f64 = 1e-5;

/// Worst absolute difference of one check over all cases.
pub fn worst(check: Check) -> f64 {
    (0..CASES).map(check).fold(0.0, f64::max)
}
