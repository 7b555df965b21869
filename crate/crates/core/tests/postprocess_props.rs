use lesionpipe_core::imaging::{Augmentation, FloatRaster};
use lesionpipe_core::postprocess::{connected_components, postprocess, select_lesion, threshold_prob};
use lesionpipe_core::BinaryMask;
use proptest::prelude::*;

fn prob(side: usize) -> impl Strategy<Value = FloatRaster> {
    prop::collection::vec(0.0f64..1.0, side * side).prop_map(move |d| FloatRaster::new(side, side, d).unwrap())
}

fn blobs(side: usize) -> impl Strategy<Value = BinaryMask> {
    // Sparse masks so several components appear.
    prop::collection::vec(prop::bool::weighted(0.3), side * side)
        .prop_map(move |d| BinaryMask::from_fn(side, side, |r, c| d[r * side + c]))
}

proptest! {
    #[test]
    fn selection_is_one_component_subset(m in blobs(16)) {
        let sel = select_lesion(&connected_components(&m));
        for (s, o) in sel.data().iter().zip(m.data()) {
            prop_assert!(s <= o);
        }
        let n = connected_components(&sel).len();
        prop_assert!(n <= 1);
        prop_assert_eq!(n == 0, m.area() == 0);
    }

    #[test]
    fn labels_cover_mask(m in blobs(12)) {
        let cc = connected_components(&m);
        for (l, v) in cc.labels().iter().zip(m.data()) {
            prop_assert_eq!(*l == 0, *v == 0);
        }
        prop_assert_eq!(cc.components().iter().map(|c| c.area).sum::<usize>(), m.area());
    }

    #[test]
    fn component_count_is_rotation_invariant(m in blobs(12)) {
        let rotated = Augmentation::Rot90.apply(&m);
        prop_assert_eq!(connected_components(&m).len(), connected_components(&rotated).len());
    }

    #[test]
    fn higher_threshold_gives_subset(p in prob(10), t1 in 0.05f64..0.5, dt in 0.0f64..0.45) {
        let lo = threshold_prob(&p, t1).unwrap();
        let hi = threshold_prob(&p, t1 + dt).unwrap();
        for (h, l) in hi.data().iter().zip(lo.data()) {
            prop_assert!(h <= l);
        }
    }

    #[test]
    fn postprocess_output_is_single_object(p in prob(12)) {
        let m = postprocess(&p, 0.5, true).unwrap();
        prop_assert!(connected_components(&m).len() <= 1);
    }
}
