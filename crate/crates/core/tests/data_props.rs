use gnt_core::data::{generate_scene, make_dataset, raytrace_gt, Primitive, RingConfig};
use gnt_core::geometry::Vec3;
use proptest::prelude::*;

fn surface_distance(p: &Primitive, x: Vec3) -> f64 {
    match *p {
        Primitive::Sphere { center, radius, .. } => ((x - center).norm() - radius).abs(),
        Primitive::Box { min, max, .. } => {
            let inside = (0..3).all(|a| x[a] >= min[a] - 1e-5 && x[a] <= max[a] + 1e-5);
            if !inside {
                return f64::INFINITY;
            }
            (0..3)
                .map(|a| (x[a] - min[a]).abs().min((x[a] - max[a]).abs()))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hit_depths_land_on_surfaces(seed in 0u64..1000, n in 1usize..5, view in 0usize..4) {
        let scene = generate_scene(seed, n).unwrap();
        let ring = RingConfig::new(4, 10, 8);
        let (c, _) = scene.bounding_sphere();
        let cam = &ring.cameras(c).unwrap()[view];
        let (_, depth) = raytrace_gt(&scene, cam);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let t = depth.data[y * cam.width + x] as f64;
                if !t.is_finite() {
                    continue;
                }
                let ray = cam.ray_for_pixel(x as f64 + 0.5, y as f64 + 0.5, 0.1, 10.0).unwrap();
                let p = ray.at(t);
                let d = scene.primitives.iter().map(|q| surface_distance(q, p)).fold(f64::INFINITY, f64::min);
                // Depth is stored as f32.
                prop_assert!(d < 1e-5 + 4.0 * t * f32::EPSILON as f64, "pixel ({x},{y}) off surface by {d}");
            }
        }
    }

    #[test]
    fn dataset_is_deterministic(seed in 0u64..1000, n in 1usize..4) {
        let ring = RingConfig::new(2, 6, 6);
        let a = make_dataset(&generate_scene(seed, n).unwrap(), &ring).unwrap();
        let b = make_dataset(&generate_scene(seed, n).unwrap(), &ring).unwrap();
        prop_assert_eq!(a, b);
    }
}
