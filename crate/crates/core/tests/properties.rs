use proptest::prelude::*;
use vesselpipe::pipeline::{binarize, dice_3d, postprocess};
use vesselpipe::preprocess::{connected_components, Connectivity};
use vesselpipe::sampling::{augment, Patch, DEFAULT_PLAN};
use vesselpipe::volume::{window_normalize, WindowSpec};
use vesselpipe::{Mask3, Volume3};

fn mask_from(bits: &[bool], dims: [usize; 3]) -> Mask3 {
    Mask3::new(dims, bits.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded(
        a in prop::collection::vec(any::<bool>(), 216),
        b in prop::collection::vec(any::<bool>(), 216),
    ) {
        let (p, g) = (mask_from(&a, [6; 3]), mask_from(&b, [6; 3]));
        let d = dice_3d(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice_3d(&g, &p).unwrap());
        prop_assert_eq!(dice_3d(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn postprocess_keeps_at_most_k_components(
        probs in prop::collection::vec(0.0f32..1.0, 512),
        keep in 1usize..4,
        threshold in 0.05f32..0.95,
    ) {
        let vol = Volume3::new([8; 3], [1.0; 3], probs).unwrap();
        let all = binarize(&vol, threshold).unwrap();
        let kept = postprocess(&vol, threshold, keep).unwrap();
        prop_assert!(connected_components(&kept, Connectivity::TwentySix).num_components() <= keep);
        prop_assert!(kept.and_not(&all).unwrap().is_empty());
    }

    #[test]
    fn augmentation_preserves_label_volume(
        bits in prop::collection::vec(any::<bool>(), 512),
        k in 0usize..8,
    ) {
        let dims = [8; 3];
        let label = mask_from(&bits, dims);
        let img = Volume3::from_fn(dims, |[x, y, z]| (x + 10 * y + 100 * z) as f32);
        let p = Patch::extract(&[&img], &label, [4, 4, 4], 8).unwrap();
        let q = augment(&p, DEFAULT_PLAN[k]).unwrap();
        prop_assert_eq!(q.label.iter().filter(|&&b| b).count(), label.count());
        for (v, l) in q.channels[0].iter().zip(&q.label) {
            let i = *v as usize;
            prop_assert_eq!(*l, bits[i % 10 + 8 * (i / 10 % 10 + 8 * (i / 100))]);
        }
    }

    #[test]
    fn window_maps_into_unit_interval(
        values in prop::collection::vec(-3000.0f32..3000.0, 27),
        lo in -1000.0f32..0.0,
        width in 1.0f32..2000.0,
    ) {
        let w = WindowSpec::new(lo, lo + width).unwrap();
        let v = window_normalize(&Volume3::new([3; 3], [1.0; 3], values.clone()).unwrap(), w);
        for (out, inp) in v.data().iter().zip(&values) {
            prop_assert!((0.0..=1.0).contains(out));
            if *inp <= lo {
                prop_assert_eq!(*out, 0.0);
            }
        }
    }
}
