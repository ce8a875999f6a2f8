use proptest::prelude::*;
use sonarcodec::bitstream::{bpp, pack_frame, payload_bits, unpack_frame, Mode};
use sonarcodec::codec::{index_bits, scale_dims, IndexGrid, IndexMapPyramid};

/// A pyramid for `w x h` frames with `k` scales and indices below `v`.
fn pyramid(w: usize, h: usize, k: usize, v: usize, seed: u64) -> IndexMapPyramid {
    let mut s = seed | 1;
    let scales = scale_dims(w, h, k)
        .unwrap()
        .into_iter()
        .map(|(gw, gh)| {
            let idx = (0..gw * gh)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    (s % v as u64) as u32
                })
                .collect();
            IndexGrid::new(gw, gh, idx).unwrap()
        })
        .collect();
    IndexMapPyramid { frame_width: w, frame_height: h, scales }
}

fn geometry() -> impl Strategy<Value = (usize, usize, usize)> {
    // frames are whole 32-pixel latent cells, and k scales need at least
    // 2^(k-1) cells per side
    (1usize..=4).prop_flat_map(|k| {
        let min: usize = 1 << (k - 1);
        (min..=min + 12, min..=min + 12, Just(k)).prop_map(|(lw, lh, k)| (32 * lw, 32 * lh, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_roundtrip_is_exact(
        (w, h, k) in geometry(),
        v in prop::sample::select(vec![2usize, 16, 64, 1000, 4096]),
        frame in any::<u32>(),
        seed in any::<u64>(),
    ) {
        let p = pyramid(w, h, k, v, seed);
        let e = pack_frame(&p, Mode::Full, frame, v).unwrap();
        let mut state = None;
        let u = unpack_frame(&e.bytes, &mut state).unwrap();
        prop_assert_eq!(u.frame_index, frame);
        prop_assert!(u.pyramid.scales.iter().all(|g| g.indices.iter().all(|&i| (i as usize) < v)));
        prop_assert_eq!(u.pyramid, p);
    }

    #[test]
    fn dynamic_on_matching_background_equals_full(
        (w, h, k) in geometry(),
        seed in any::<u64>(),
    ) {
        let p = pyramid(w, h, k, 64, seed);
        let mut state = None;
        unpack_frame(&pack_frame(&p, Mode::Full, 0, 64).unwrap().bytes, &mut state).unwrap();
        let u = unpack_frame(&pack_frame(&p, Mode::DynamicOnly, 1, 64).unwrap().bytes, &mut state).unwrap();
        prop_assert_eq!(u.pyramid, p);
    }

    #[test]
    fn rate_is_fixed_and_dynamic_is_cheaper(
        (w, h, k) in geometry(),
        v in 2usize..5000,
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let a = pack_frame(&pyramid(w, h, k, v, s1), Mode::Full, 0, v).unwrap();
        let b = pack_frame(&pyramid(w, h, k, v, s2), Mode::Full, 0, v).unwrap();
        prop_assert_eq!(a.bytes.len(), b.bytes.len());
        prop_assert_eq!(bpp(&a), bpp(&b));
        let full = payload_bits(w, h, k, v, Mode::Full).unwrap();
        let dynamic = payload_bits(w, h, k, v, Mode::DynamicOnly).unwrap();
        prop_assert_eq!(a.payload_bits, full);
        prop_assert_eq!(full % index_bits(v) as u64, 0);
        if k > 1 {
            prop_assert!(dynamic < full);
        } else {
            prop_assert_eq!(dynamic, full);
        }
    }

    #[test]
    fn out_of_range_indices_are_refused(
        (w, h, k) in geometry(),
        v in 2usize..200,
        seed in any::<u64>(),
    ) {
        let mut p = pyramid(w, h, k, v, seed);
        let last = p.scales.len() - 1;
        p.scales[last].indices[0] = v as u32;
        prop_assert!(pack_frame(&p, Mode::Full, 0, v).is_err());
    }
}
