use gnt_core::image::Image;
use gnt_core::metrics::{avg_metric, psnr, ssim};
use proptest::prelude::*;

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f32..=1.0, w * h * 3).prop_map(move |d| Image::new(w, h, 3, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn avg_is_monotone(p in 5.0f64..45.0, s in 0.0f64..0.99, l in 0.01f64..0.9, dp in 0.01f64..5.0, ds in 0.001f64..0.009, dl in 0.001f64..0.09) {
        let base = avg_metric(p, s, l);
        prop_assert!(avg_metric(p + dp, s, l) < base);
        prop_assert!(avg_metric(p, s + ds, l) < base);
        prop_assert!(avg_metric(p, s, l + dl) > base);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(12, 11), b in image(12, 11)) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn any_single_change_makes_psnr_finite(a in image(5, 4), idx in 0usize..60, delta in 0.001f32..0.5) {
        let mut b = a.clone();
        let v = &mut b.data[idx];
        *v = if *v + delta <= 1.0 { *v + delta } else { *v - delta };
        prop_assert!(psnr(&a, &b).unwrap().is_finite());
        prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }
}
