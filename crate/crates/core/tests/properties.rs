mod common;

use hnm_pgd::attack::{
    apply_perturbation, loss_combined, loss_frcnn, loss_yolo, pgd_step, LossKind, LossSpec,
};
use hnm_pgd::imagetensor::{
    resize_bilinear_adjoint, resize_tensor, Image, Mask, SalienceMap, Tensor,
};
use hnm_pgd::maskgen::{
    check_constraints, count_regions8, find_mask, hn_refine, pixel_budget, threshold_init,
    MaskSearchConfig,
};
use hnm_pgd::microdetect::{DetectorModel, DetectorOutput};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w)
            .prop_map(move |d| Mask::from_vec(h, w, d).unwrap())
    })
}

fn tensor_strategy(max: usize, channels: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(move |(h, w)| {
        prop::collection::vec(-1.0f64..1.0, h * w * channels)
            .prop_map(move |d| Tensor::from_vec(h, w, channels, d).unwrap())
    })
}

fn image_strategy(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, h * w * 3)
        .prop_map(move |d| Image::new(h, w, 3, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resize_adjoint_is_the_transpose(a in tensor_strategy(9, 3), oh in 1usize..12, ow in 1usize..12, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let b = Tensor::from_vec(oh, ow, 3, (0..oh * ow * 3).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        let lhs = resize_tensor(&a, oh, ow).unwrap().dot(&b);
        let rhs = a.dot(&resize_bilinear_adjoint(&b, a.height(), a.width()).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn resize_is_linear(a in tensor_strategy(7, 1), oh in 1usize..10, ow in 1usize..10, s in -3.0f64..3.0) {
        let scaled = Tensor::from_vec(a.height(), a.width(), 1, a.data().iter().map(|v| s * v + 0.25).collect()).unwrap();
        let ones = Tensor::from_vec(a.height(), a.width(), 1, vec![0.25; a.data().len()]).unwrap();
        let lhs = resize_tensor(&scaled, oh, ow).unwrap();
        let ra = resize_tensor(&a, oh, ow).unwrap();
        let r1 = resize_tensor(&ones, oh, ow).unwrap();
        for ((l, x), y) in lhs.data().iter().zip(ra.data()).zip(r1.data()) {
            prop_assert!((l - (s * x + y)).abs() < 1e-12);
        }
    }

    #[test]
    fn resized_images_stay_in_the_unit_box(img in image_strategy(5, 6), oh in 1usize..14, ow in 1usize..14) {
        let r = hnm_pgd::imagetensor::resize_bilinear(&img, oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hn_refine_matches_window_sum(mask in mask_strategy(14), k in prop::sample::select(vec![3usize, 5, 7, 9])) {
        prop_assert_eq!(hn_refine(&mask, k).unwrap(), common::hn_bruteforce(&mask, k));
    }

    #[test]
    fn region_count_matches_flood_fill(mask in mask_strategy(20)) {
        prop_assert_eq!(count_regions8(&mask), common::regions_bfs(&mask));
    }

    #[test]
    fn threshold_mask_shrinks_as_phi_grows(data in prop::collection::vec(0.0f64..10.0, 64), p1 in -2.0f64..4.0, dp in 0.0f64..2.0) {
        let s = SalienceMap::new(8, 8, data).unwrap();
        let loose = threshold_init(&s, p1);
        let tight = threshold_init(&s, p1 + dp);
        prop_assert!(loose.contains(&tight));
    }

    #[test]
    fn found_masks_satisfy_the_constraints(data in prop::collection::vec(0.0f64..1.0, 32 * 32)) {
        let s = SalienceMap::new(32, 32, data).unwrap();
        let cfg = MaskSearchConfig { min_pixels: 0, ..MaskSearchConfig::default() };
        if let Ok(found) = find_mask(&s, &cfg) {
            prop_assert!(found.report.passed);
            prop_assert!(found.mask.count() <= pixel_budget(cfg.pixel_budget_fraction, 32 * 32));
            prop_assert!(count_regions8(&found.mask) <= cfg.max_regions);
            prop_assert_eq!(check_constraints(&found.mask, &cfg), found.report);
        }
    }

    #[test]
    fn zero_step_is_a_projection(
        x in image_strategy(4, 5),
        raw in prop::collection::vec(-1.5f64..1.5, 60),
        keep in prop::collection::vec(any::<bool>(), 20),
        grad in prop::collection::vec(-1.0f64..1.0, 60),
    ) {
        let mask = Mask::from_vec(4, 5, keep).unwrap();
        let delta = Tensor::from_vec(4, 5, 3, raw).unwrap();
        let grad = Tensor::from_vec(4, 5, 3, grad).unwrap();
        let once = pgd_step(&x, &delta, &mask, &grad, 0.0).unwrap();
        for (p, px) in once.data().chunks(3).enumerate() {
            for (ch, d) in px.iter().enumerate() {
                let xv = x.data()[p * 3 + ch];
                if mask.data()[p] {
                    prop_assert!((0.0..=1.0).contains(&(xv + d)));
                } else {
                    prop_assert_eq!(d.to_bits(), 0.0f64.to_bits());
                }
            }
        }
        prop_assert_eq!(&pgd_step(&x, &once, &mask, &grad, 0.0).unwrap(), &once);
    }

    #[test]
    fn perturbation_never_leaves_the_mask(
        x in image_strategy(4, 4),
        keep in prop::collection::vec(any::<bool>(), 16),
        grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 48), 1..6),
        alpha in 0.001f64..0.5,
    ) {
        let mask = Mask::from_vec(4, 4, keep).unwrap();
        let mut delta = Tensor::zeros(4, 4, 3);
        for g in grads {
            delta = pgd_step(&x, &delta, &mask, &Tensor::from_vec(4, 4, 3, g).unwrap(), alpha).unwrap();
            let adv = apply_perturbation(&x, &delta);
            for p in 0..16 {
                for ch in 0..3 {
                    let i = p * 3 + ch;
                    prop_assert!((0.0..=1.0).contains(&(x.data()[i] + delta.data()[i])));
                    if !mask.data()[p] {
                        prop_assert_eq!(adv.data()[i].to_bits(), x.data()[i].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn combined_loss_is_the_sum(
        conf_logits in prop::collection::vec(-6.0f64..6.0, 4),
        cls in prop::collection::vec(-6.0f64..6.0, 16),
    ) {
        let out = DetectorOutput {
            conf: conf_logits.iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect(),
            obj_logits: conf_logits,
            cls_logits: cls,
            classes: 3,
        };
        let spec = LossSpec::default();
        let sum = loss_yolo(&out, &spec) + loss_frcnn(&out, &spec);
        prop_assert!((loss_combined(&out, &spec) - sum).abs() <= 1e-12);
    }
}

#[test]
fn combined_input_gradient_is_additive() {
    let model = DetectorModel::init(64, 8, 3, 12).unwrap();
    let x = hnm_pgd::microdetect::generate_scene(12, 64, 8, 3)
        .unwrap()
        .image;
    let grad = |kind| {
        model
            .input_gradient(x.as_tensor(), &LossSpec::new(kind))
            .unwrap()
            .grad
    };
    let (y, f, c) = (
        grad(LossKind::Yolo),
        grad(LossKind::Frcnn),
        grad(LossKind::Combined),
    );
    for ((a, b), s) in y.data().iter().zip(f.data()).zip(c.data()) {
        assert!((a + b - s).abs() <= 1e-10);
    }
}
