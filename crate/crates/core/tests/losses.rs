mod common;

use autograd::{Tensor, Var};
use common::gradchecks::{feature_batch, in_critic, out_critic, tiny_critics, un_critic, uniform, FD_CHECKS, FD_TOL};
use common::oracles;
use condaseg::losses::{self, LossValue};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_loss_matches_its_scalar_oracle() {
    for (name, check) in oracles::ALL {
        let worst = oracles::worst(check);
        assert!(worst <= oracles::TOLERANCE, "{name}: worst absolute difference {worst:e}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (name, check) in FD_CHECKS {
        let err = check();
        assert!(err < FD_TOL, "{name}: relative error {err}");
    }
}

#[test]
fn outcond_generator_loss_never_reaches_the_segmenter() {
    let r = common::gradchecks::outcond_stop_gradient();
    assert_eq!(r.segmenter_max_abs, 0.0, "segmenter receives gradient");
    assert!(r.bitwise_equal, "detached recomputation differs");
    assert!(r.encoder_trained, "the encoder must still be trained by the feature loss");
}

#[test]
fn feature_batches_pair_by_truncation() {
    let df = |h: &Var| Ok(h.mean_axes(&[1, 2, 3])?.reshape(&[h.shape()[0], 1])?);
    let h_s = Var::constant(uniform(&[3, 2, 2, 2], -1.0, 1.0, 1));
    let h_t = Var::constant(uniform(&[2, 2, 2, 2], -1.0, 1.0, 2));
    let g = losses::featmatch_uncond_g_loss(&df, &h_s, &h_t).unwrap();
    let g_short = losses::featmatch_uncond_g_loss(&df, &h_s.narrow(0, 0, 2).unwrap(), &h_t).unwrap();
    assert_eq!(g.item(), g_short.item());
    let wrong = Var::constant(uniform(&[2, 3, 2, 2], -1.0, 1.0, 3));
    assert!(losses::featmatch_uncond_g_loss(&df, &h_s, &wrong).is_err());
}

#[test]
fn constant_feature_critics_cost_only_their_penalty() {
    let f = feature_batch(100);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let map = |h: &Var| {
        let s = h.shape();
        Ok(Var::constant(Tensor::full(&[s[0], 1, 2 * s[2], 2 * s[3]], 0.3)))
    };
    let (d, g) = losses::featmatch_outcond_losses(&map, &f.h_s, &f.h_t, &f.y_s, &f.y_t, 2.0, &mut rng).unwrap();
    assert!((d.item() - 2.0).abs() < 1e-5 && g.item() == 0.0);
    let scalar = |h: &Var| Ok(Var::constant(Tensor::full(&[h.shape()[0], 1], -4.0)));
    let (d, g) = losses::featmatch_uncond_losses(&scalar, &f.h_s, &f.h_t, 5.0, &mut rng).unwrap();
    assert!((d.item() - 5.0).abs() < 1e-5 && g.item() == 0.0);
    let pair = |h: &Var, _: &Var| Ok(Var::constant(Tensor::full(&[h.shape()[0], 1], 1.5)));
    let (d, g) = losses::featmatch_incond_losses(&pair, &f.h_s, &f.h_t, &f.y_s, &f.y_t, 1.0, &mut rng).unwrap();
    assert!((d.item() - 1.0).abs() < 1e-5 && g.item() == 0.0);
}

#[test]
fn linear_uncond_critic_matches_closed_form() {
    // D(h) = sum(h): penalty (sqrt(N) - 1)^2 with N = 8 features per sample
    let f = feature_batch(110);
    let df = |h: &Var| Ok(h.sum_axes(&[1, 2, 3])?.reshape(&[h.shape()[0], 1])?);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (d, g) = losses::featmatch_uncond_losses(&df, &f.h_s, &f.h_t, 1.0, &mut rng).unwrap();
    let per = |v: &Var| v.value().sum() / 2.0;
    let (s, t) = (per(&f.h_s), per(&f.h_t));
    let gp = (8f32.sqrt() - 1.0).powi(2);
    assert!((d.item() - (t - s + gp)).abs() < 1e-4);
    assert!((g.item() - (s - t)).abs() < 1e-5);
}

#[test]
fn identical_domains_give_zero_generator_loss() {
    let f = feature_batch(120);
    let c = tiny_critics();
    let p: Vec<Var> = c.out.iter().map(|t| Var::constant(t.clone())).collect();
    let df = |h: &Var| Ok(out_critic(&p, h)?);
    let g = losses::featmatch_outcond_g_loss(&df, &f.h_s, &f.h_s, &f.y_s, &f.y_s).unwrap();
    assert_eq!(g.item(), 0.0);
}

fn tensor_strategy(shape: Vec<usize>, lo: f32, hi: f32) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn feature_games_are_antisymmetric(
        h_s in tensor_strategy(vec![2, 2, 2, 2], -1.0, 1.0),
        h_t in tensor_strategy(vec![2, 2, 2, 2], -1.0, 1.0),
        y_s in tensor_strategy(vec![2, 1, 4, 4], 0.0, 1.0),
        y_t in tensor_strategy(vec![2, 1, 4, 4], 0.0, 1.0),
    ) {
        let c = tiny_critics();
        let po: Vec<Var> = c.out.iter().map(|t| Var::constant(t.clone())).collect();
        let pu: Vec<Var> = c.un.iter().map(|t| Var::constant(t.clone())).collect();
        let pi: Vec<Var> = c.inc.iter().map(|t| Var::constant(t.clone())).collect();
        let out = |h: &Var| Ok(out_critic(&po, h)?);
        let un = |h: &Var| Ok(un_critic(&pu, h)?);
        let inc = |h: &Var, y: &Var| Ok(in_critic(&pi, h, y)?);
        let (hs, ht, ys, yt) = (Var::constant(h_s), Var::constant(h_t), Var::constant(y_s), Var::constant(y_t));
        let lambda = 3.0;
        let without_penalty = |d: &LossValue| d.item() - lambda * d.components["gp"];
        let rng = || ChaCha8Rng::seed_from_u64(7);

        let (d1, g1) = losses::featmatch_outcond_losses(&out, &hs, &ht, &ys, &yt, lambda, &mut rng()).unwrap();
        let (d2, g2) = losses::featmatch_outcond_losses(&out, &ht, &hs, &yt, &ys, lambda, &mut rng()).unwrap();
        prop_assert!((without_penalty(&d1) + without_penalty(&d2)).abs() < 1e-5);
        prop_assert!((g1.item() + g2.item()).abs() < 1e-6);

        let (d1, g1) = losses::featmatch_uncond_losses(&un, &hs, &ht, lambda, &mut rng()).unwrap();
        let (d2, g2) = losses::featmatch_uncond_losses(&un, &ht, &hs, lambda, &mut rng()).unwrap();
        prop_assert!((without_penalty(&d1) + without_penalty(&d2)).abs() < 1e-5);
        prop_assert!((g1.item() + g2.item()).abs() < 1e-6);

        let (d1, g1) = losses::featmatch_incond_losses(&inc, &hs, &ht, &ys, &yt, lambda, &mut rng()).unwrap();
        let (d2, g2) = losses::featmatch_incond_losses(&inc, &ht, &hs, &yt, &ys, lambda, &mut rng()).unwrap();
        prop_assert!((without_penalty(&d1) + without_penalty(&d2)).abs() < 1e-5);
        prop_assert!((g1.item() + g2.item()).abs() < 1e-6);
    }

    #[test]
    fn soft_iou_is_bounded_and_improves_toward_the_target(
        pred in tensor_strategy(vec![2, 1, 3, 3], 0.0, 1.0),
        target in tensor_strategy(vec![2, 1, 3, 3], 0.0, 1.0),
        t in 0.05f32..0.95,
    ) {
        let target = target.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let tv = Var::constant(target.clone());
        let loss = |p: &Tensor| losses::soft_iou_loss(&Var::constant(p.clone()), &tv).unwrap().item();
        let before = loss(&pred);
        prop_assert!((0.0..=1.0).contains(&before));
        // move every pixel a fraction t of the way to the target
        let moved = pred.zip_map(&target, |p, y| p + t * (y - p)).unwrap();
        let after = loss(&moved);
        prop_assert!(after <= before + 1e-6, "{} -> {}", before, after);
        prop_assert!(loss(&target) == 0.0 || target.sum() == 0.0);
    }

    #[test]
    fn aggregation_ignores_pixel_order(
        score in prop::collection::vec(-2.0f32..2.0, 9),
        y in prop::collection::vec(0.0f32..1.0, 9),
        perm in Just((0..9usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let t = |v: &[f32]| Var::constant(Tensor::new(vec![1, 1, 3, 3], v.to_vec()).unwrap());
        let a = losses::classwise_aggregate(&t(&score), &t(&y)).unwrap().value();
        let ps: Vec<f32> = perm.iter().map(|&i| score[i]).collect();
        let py: Vec<f32> = perm.iter().map(|&i| y[i]).collect();
        let b = losses::classwise_aggregate(&t(&ps), &t(&py)).unwrap().value();
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }
}
