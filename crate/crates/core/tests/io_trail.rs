//! Storage round trips and trail-map algebra.

use nanoct::stack_io::{load_stack, load_volume, save_stack, save_volume};
use nanoct::trail_roi::{suggest_roi, trail_product};
use nanoct::{Image, ProjectionStack, Volume};
use proptest::prelude::*;

fn stack_strategy() -> impl Strategy<Value = ProjectionStack> {
    (2usize..6, 1usize..12, 1usize..10, prop_oneof![Just(8u8), Just(16u8)]).prop_flat_map(
        |(n, w, h, depth)| {
            let max = if depth == 8 { 255u32 } else { 65_535 };
            proptest::collection::vec(0..=max, n * w * h).prop_map(move |vals| {
                let frames = vals
                    .chunks(w * h)
                    .map(|c| Image::from_vec(w, h, c.iter().map(|&v| v as f32).collect()).unwrap())
                    .collect();
                ProjectionStack::new(frames, -10.0, 170.0, depth, "prop").unwrap()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stack_save_load_is_bit_exact(stack in stack_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_stack(&stack, dir.path(), "s").unwrap();
        let back = load_stack(&manifest).unwrap();
        prop_assert_eq!(back.frames(), stack.frames());
        prop_assert_eq!(back.angles(), stack.angles());
        prop_assert_eq!(back.bit_depth(), stack.bit_depth());
    }

    #[test]
    fn volume_save_load_is_bit_exact(
        dims in (1usize..6, 1usize..6, 1usize..6),
        seed in any::<u32>(),
    ) {
        let (nx, ny, nz) = dims;
        let data: Vec<f32> = (0..nx * ny * nz)
            .map(|i| f32::from_bits((i as u32).wrapping_mul(2_654_435_761) ^ seed) % 1e6)
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let vol = Volume::from_vec(nx, ny, nz, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.f32");
        save_volume(&vol, &path).unwrap();
        let back = load_volume(&path).unwrap();
        prop_assert_eq!(back.dims(), vol.dims());
        let bits = |v: &Volume| v.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&vol));
    }

    #[test]
    fn trail_ignores_frame_order(stack in stack_strategy(), delta in 0.0f32..100.0) {
        let mut frames = stack.frames().to_vec();
        frames.reverse();
        let n = frames.len();
        frames.rotate_left(1 % n);
        let shuffled = stack.with_frames(frames).unwrap();
        prop_assert_eq!(trail_product(&stack, delta).mask, trail_product(&shuffled, delta).mask);
    }

    #[test]
    fn trail_grows_with_delta(stack in stack_strategy(), d1 in 0.0f32..50.0, extra in 0.0f32..50.0) {
        let a = trail_product(&stack, d1);
        let b = trail_product(&stack, d1 + extra);
        prop_assert!(b.zero_count >= a.zero_count);
        for (x, y) in a.mask.zeros() {
            prop_assert_eq!(b.mask.get(x, y), 0);
        }
    }

    #[test]
    fn roi_grows_with_margin(stack in stack_strategy(), m in 0usize..4, extra in 0usize..4) {
        let trail = trail_product(&stack, 5.0);
        let small = suggest_roi(&trail, m).unwrap();
        let big = suggest_roi(&trail, m + extra).unwrap();
        prop_assert!(big.contains(&small));
        for (x, y) in trail.mask.zeros() {
            prop_assert!(small.contains_point(x as f64, y as f64));
        }
    }
}
