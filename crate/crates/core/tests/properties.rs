use proptest::prelude::*;

use uiou::geometry::{edge_distances, intersection_area, iou, scale_box, union_area, BBox};
use uiou::gradients::analytic_grad;
use uiou::losses::geometric_loss;
use uiou::schedule::Strategy as Anneal;
use uiou::unified::{confidence_weight, unified_loss};
use uiou::{LossKind, LossSpec, Prediction, RatioSchedule, Variant, WeightMode};

fn bbox() -> impl proptest::strategy::Strategy<Value = BBox> {
    (
        -100.0..100.0f64,
        -100.0..100.0f64,
        0.5..50.0f64,
        0.5..50.0f64,
    )
        .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
}

/// A ground truth and a prediction near it (overlapping or not).
fn pair() -> impl proptest::strategy::Strategy<Value = (BBox, BBox)> {
    (bbox(), -1.2..1.2f64, -1.2..1.2f64, 0.3..3.0f64, 0.3..3.0f64).prop_map(
        |(g, ox, oy, sw, sh)| {
            let p = BBox::new(g.cx + ox * g.w, g.cy + oy * g.h, g.w * sw, g.h * sh).unwrap();
            (p, g)
        },
    )
}

/// A prediction that overlaps its ground truth well.
fn close_pair() -> impl proptest::strategy::Strategy<Value = (BBox, BBox)> {
    (
        bbox(),
        -0.15..0.15f64,
        -0.15..0.15f64,
        0.8..1.25f64,
        0.8..1.25f64,
    )
        .prop_map(|(g, ox, oy, sw, sh)| {
            let p = BBox::new(g.cx + ox * g.w, g.cy + oy * g.h, g.w * sw, g.h * sh).unwrap();
            (p, g)
        })
}

fn all_kinds() -> Vec<LossKind> {
    let mut kinds: Vec<LossKind> = Variant::ALL.into_iter().map(LossKind::new).collect();
    for v in Variant::ALL.into_iter().filter(|v| v.supports_alpha()) {
        kinds.push(LossKind::with_alpha(v, 3.0).unwrap());
    }
    kinds
}

fn loss(kind: &LossKind, p: &BBox, g: &BBox) -> f64 {
    geometric_loss(kind, p, g).unwrap().loss
}

fn iou_loss_at(r: f64, p: &BBox, g: &BBox) -> f64 {
    let spec = LossSpec::new(
        LossKind::new(Variant::IoU),
        RatioSchedule::constant(r),
        WeightMode::None,
    );
    unified_loss(&spec, &Prediction::new(*p, 0.5).unwrap(), g, 0)
        .unwrap()
        .loss
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn intersection_and_union_are_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (i, u) = (intersection_area(&a, &b), union_area(&a, &b));
        prop_assert_eq!(i, intersection_area(&b, &a));
        prop_assert_eq!(u, union_area(&b, &a));
        prop_assert!(i >= 0.0 && i <= a.area().min(b.area()));
        prop_assert!(u >= a.area().max(b.area()));
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn scale_round_trip(b in bbox(), r in 0.05..20.0f64) {
        let back = scale_box(&scale_box(&b, r).unwrap(), 1.0 / r).unwrap();
        for (x, y) in [(back.cx, b.cx), (back.cy, b.cy), (back.w, b.w), (back.h, b.h)] {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn joint_scaling_is_monotone((p, g) in pair()) {
        let grid = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 8.0];
        let ious: Vec<f64> = grid
            .iter()
            .map(|&r| iou(&scale_box(&p, r).unwrap(), &scale_box(&g, r).unwrap()))
            .collect();
        for w in ious.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "{:?}", ious);
        }
    }

    #[test]
    fn iou_invariant_under_joint_similarity((p, g) in pair(), dx in -1e3..1e3f64, dy in -1e3..1e3f64,
                                            k in 0.1..10.0f64, ox in -50.0..50.0f64, oy in -50.0..50.0f64) {
        let base = iou(&p, &g);
        prop_assert!((iou(&p.translated(dx, dy), &g.translated(dx, dy)) - base).abs() <= 1e-9);
        let o = (ox, oy);
        prop_assert!((iou(&p.scaled_about(o, k), &g.scaled_about(o, k)) - base).abs() <= 1e-9);
    }

    #[test]
    fn edge_distances_span_the_box(b in bbox(), fx in 0.0..=1.0f64, fy in 0.0..=1.0f64) {
        let px = (b.left() + fx * b.w, b.top() + fy * b.h);
        let d = edge_distances(px, &b).unwrap();
        prop_assert!(close(d.xt + d.xb, b.h, 1e-12));
        prop_assert!(close(d.xl + d.xr, b.w, 1e-12));
    }

    #[test]
    fn loss_family_orderings((p, g) in pair()) {
        let l = |v| loss(&LossKind::new(v), &p, &g);
        let (li, lg, ld, lc) = (l(Variant::IoU), l(Variant::GIoU), l(Variant::DIoU), l(Variant::CIoU));
        prop_assert!((0.0..=1.0).contains(&li));
        prop_assert!((0.0..2.0).contains(&lg));
        prop_assert!(lg >= li);
        prop_assert!(ld >= li);
        prop_assert!(lc >= ld);
        for kind in all_kinds() {
            prop_assert!(geometric_loss(&kind, &p, &g).unwrap().penalty >= 0.0, "{}", kind.label());
        }
    }

    #[test]
    fn losses_vanish_on_identical_boxes(b in bbox()) {
        for kind in all_kinds() {
            prop_assert!(loss(&kind, &b, &b).abs() <= 1e-12, "{}", kind.label());
        }
    }

    #[test]
    fn losses_invariant_under_joint_translation_and_scaling((p, g) in pair(), dx in -1e3..1e3f64,
                                                             dy in -1e3..1e3f64, k in 0.1..10.0f64,
                                                             e in -4i32..=4) {
        let two = 2f64.powi(e);
        for kind in all_kinds() {
            let base = loss(&kind, &p, &g);
            let moved = loss(&kind, &p.translated(dx, dy), &g.translated(dx, dy));
            prop_assert!((moved - base).abs() <= 1e-9, "{} translated: {} vs {}", kind.label(), moved, base);
            if kind.variant == Variant::L2Vector {
                continue;
            }
            let scaled = loss(&kind, &p.scaled_about((0.0, 0.0), k), &g.scaled_about((0.0, 0.0), k));
            prop_assert!((scaled - base).abs() <= 1e-9, "{} scaled: {} vs {}", kind.label(), scaled, base);
            let exact = loss(&kind, &p.scaled_about((0.0, 0.0), two), &g.scaled_about((0.0, 0.0), two));
            prop_assert!((exact - base).abs() <= 1e-12, "{} scaled by 2^{}", kind.label(), e);
        }
    }

    #[test]
    fn alpha_three_exceeds_plain_iou_loss((p, g) in pair()) {
        let v = iou(&p, &g);
        prop_assume!(v > 0.0 && v < 1.0);
        let plain = loss(&LossKind::new(Variant::IoU), &p, &g);
        let cubed = loss(&LossKind::with_alpha(Variant::IoU, 3.0).unwrap(), &p, &g);
        prop_assert!(cubed > plain);
    }

    #[test]
    fn ciou_ignores_aspect_when_shapes_match(g in bbox(), e in -3i32..=3, k in 0.2..5.0f64) {
        let ciou = LossKind::new(Variant::CIoU);
        let diou = LossKind::new(Variant::DIoU);
        let exact = BBox::new(g.cx, g.cy, g.w * 2f64.powi(e), g.h * 2f64.powi(e)).unwrap();
        prop_assert_eq!(loss(&ciou, &exact, &g), loss(&diou, &exact, &g));
        let near = BBox::new(g.cx, g.cy, g.w * k, g.h * k).unwrap();
        prop_assert!((loss(&ciou, &near, &g) - loss(&diou, &near, &g)).abs() <= 1e-12);
    }

    #[test]
    fn schedules_monotone_with_exact_endpoints(start in 0.1..10.0f64, frac in 0.01..=1.0f64, epochs in 1u32..1000) {
        let end = start * frac;
        for st in [Anneal::Linear, Anneal::Cosine, Anneal::Fraction] {
            let s = RatioSchedule::new(st, start, end, epochs).unwrap();
            let t = s.table().unwrap();
            prop_assert!((t[0].1 - start).abs() <= 1e-9);
            prop_assert!((t[epochs as usize].1 - end).abs() <= 1e-9);
            for w in t.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 + 1e-12, "{} not monotone", st);
                prop_assert!(w[1].1 > 0.0);
            }
        }
    }

    #[test]
    fn shrinking_raises_high_quality_loss((p, g) in close_pair()) {
        prop_assume!(iou(&p, &g) >= 0.5);
        let (half, one, two) = (iou_loss_at(0.5, &p, &g), iou_loss_at(1.0, &p, &g), iou_loss_at(2.0, &p, &g));
        prop_assert!(half >= one - 1e-12 && one >= two - 1e-12);
    }

    #[test]
    fn shrinking_amplifies_high_quality_relative_to_low(g in bbox(), theta in 0.0..std::f64::consts::TAU,
                                                        near in 0.01..0.1f64, far in 0.7..2.0f64) {
        let (ux, uy) = (theta.cos() * g.w, theta.sin() * g.h);
        let h = g.translated(near * ux, near * uy);
        let l = g.translated(far * ux, far * uy);
        prop_assume!(iou(&h, &g) >= 0.7 && iou(&l, &g) <= 0.1);
        let at = |r| iou_loss_at(r, &h, &g) / iou_loss_at(r, &l, &g);
        prop_assert!(at(0.5) > at(2.0));
    }

    #[test]
    fn focal_weights_are_complementary(conf in 0.0..=1.0f64) {
        let f = confidence_weight(conf, WeightMode::Focal).unwrap();
        let i = confidence_weight(conf, WeightMode::FocalInv).unwrap();
        prop_assert_eq!(f + i, 1.0);
    }

    #[test]
    fn focal_weighting_is_linear((p, g) in pair(), conf in 0.0..=1.0f64, epoch in 0u32..=300) {
        let plain = LossSpec::new(LossKind::new(Variant::CIoU), RatioSchedule::default(), WeightMode::None);
        let focal = LossSpec { weight_mode: WeightMode::Focal, ..plain };
        let pred = Prediction::new(p, conf).unwrap();
        let w = confidence_weight(conf, WeightMode::Focal).unwrap();
        let a = unified_loss(&focal, &pred, &g, epoch).unwrap().loss;
        let b = unified_loss(&plain, &pred, &g, epoch).unwrap().loss;
        prop_assert_eq!(a, w * b);
        let ga = analytic_grad(&focal, &pred, &g, epoch).unwrap().as_array();
        let gb = analytic_grad(&plain, &pred, &g, epoch).unwrap().as_array();
        for i in 0..4 {
            prop_assert_eq!(ga[i], w * gb[i]);
        }
    }

    #[test]
    fn annealing_matches_constant_endpoints((p, g) in pair(), conf in 0.0..=1.0f64) {
        let pred = Prediction::new(p, conf).unwrap();
        let kind = LossKind::new(Variant::CIoU);
        let at = |s: RatioSchedule, e| unified_loss(&LossSpec::new(kind, s, WeightMode::Focal), &pred, &g, e).unwrap().loss;
        for st in [Anneal::Linear, Anneal::Cosine, Anneal::Fraction] {
            prop_assert!((at(RatioSchedule::annealed(st), 0) - at(RatioSchedule::constant(2.0), 0)).abs() <= 1e-12);
            prop_assert!((at(RatioSchedule::annealed(st), 300) - at(RatioSchedule::constant(0.5), 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn concentric_pairs_have_no_translational_gradient(g in bbox(), sw in 0.3..3.0f64, sh in 0.3..3.0f64) {
        let p = BBox::new(g.cx, g.cy, g.w * sw, g.h * sh).unwrap();
        let pred = Prediction::new(p, 0.5).unwrap();
        for kind in all_kinds().into_iter().filter(|k| k.variant != Variant::L2Vector) {
            let grad = analytic_grad(&LossSpec::plain(kind), &pred, &g, 0).unwrap();
            prop_assert!(grad.d_cx == 0.0 && grad.d_cy == 0.0, "{}: {:?}", kind.label(), grad);
        }
    }

    #[test]
    fn disjoint_pairs_iou_flat_giou_not(g in bbox(), theta in 0.0..std::f64::consts::TAU, gap in 1.05..3.0f64) {
        let p = g.translated(theta.cos() * g.w * gap, theta.sin() * g.h * gap);
        prop_assume!(intersection_area(&p, &g) == 0.0);
        let pred = Prediction::new(p, 0.5).unwrap();
        let gi = analytic_grad(&LossSpec::plain(LossKind::new(Variant::IoU)), &pred, &g, 0).unwrap();
        prop_assert!(gi.as_array().iter().all(|&v| v == 0.0));
        let gg = analytic_grad(&LossSpec::plain(LossKind::new(Variant::GIoU)), &pred, &g, 0).unwrap();
        prop_assert!(gg.as_array().iter().any(|&v| v != 0.0));
    }
}

/// Along a one-axis offset sweep, scaling changes the loss of
/// well-overlapping pairs far more than that of barely-overlapping ones.
#[test]
fn ratio_change_hits_high_quality_pairs_harder() {
    for (w, h) in [(10.0, 10.0), (4.0, 12.0), (30.0, 7.0)] {
        let g = BBox::new(0.0, 0.0, w, h).unwrap();
        let (mut high, mut low) = (Vec::new(), Vec::new());
        for i in 1..=400 {
            let d = 2.0 * w * f64::from(i) / 400.0;
            let p = g.translated(d, 0.0);
            let delta = (iou_loss_at(0.5, &p, &g) - iou_loss_at(1.0, &p, &g)).abs();
            match iou(&p, &g) {
                v if v >= 0.5 => high.push(delta),
                v if v <= 0.05 => low.push(delta),
                _ => {}
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!high.is_empty() && !low.is_empty());
        assert!(
            mean(&low) <= mean(&high),
            "{w}x{h}: low {} high {}",
            mean(&low),
            mean(&high)
        );
    }
}
