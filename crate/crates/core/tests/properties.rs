//! Invariants over random inputs.

mod common;

use common::*;
use proptest::prelude::*;
use reco_kd::losses::{
    gc_block, loss_ac, loss_feat, loss_ms_ca, loss_ms_sard, loss_sard, AdapterParams, DistillConfig, GcBlockParams,
    StageFeatures,
};
use reco_kd::masks::{build_activation_masks, build_region_masks, build_scale_mask, build_stage_masks, RegionSelect};
use reco_kd::model::{count_params_flops, derive_student_plan, scaled_width, NetworkPlan};
use reco_kd::volume::{
    class_stats, decode_nifti1, encode_nifti1, Endian, ImageVolume, LabelVolume, NiftiVolume,
};
use reco_kd::Tensor;

fn shape3() -> impl Strategy<Value = [usize; 3]> {
    [1usize..=5, 1usize..=5, 1usize..=5]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scale_mask_sums_to_one_per_class(seed in any::<u64>(), shape in shape3(), k in 2usize..=5) {
        let labels = random_labels(&mut rng(seed), shape, k);
        let regions = build_region_masks(&labels);
        let s = build_scale_mask(&regions).unwrap();
        for (r, grid) in regions.grids.iter().enumerate() {
            let total: f64 = grid.iter().zip(&s.values).map(|(&m, &v)| m as f64 * v).sum();
            if s.counts[r] > 0 {
                prop_assert!((total - 1.0).abs() < 1e-10, "class {} sums to {}", r, total);
            } else {
                prop_assert_eq!(total, 0.0);
            }
        }
    }

    #[test]
    fn activation_masks_have_unit_mean(seed in any::<u64>(), shape in shape3(), c in 1usize..=6, t in 0.05f64..10.0) {
        let f = uniform(&mut rng(seed), &[c, shape[0], shape[1], shape[2]], -3.0, 3.0);
        let m = build_activation_masks(&f, t).unwrap();
        let mean = |x: &Tensor| x.data().iter().sum::<f64>() / x.numel() as f64;
        prop_assert!((mean(&m.v_s) - 1.0).abs() < 1e-10);
        prop_assert!((mean(&m.v_c) - 1.0).abs() < 1e-10);
        prop_assert!(m.v_s.data().iter().chain(m.v_c.data()).all(|&v| v >= 0.0));
    }

    #[test]
    fn distillation_terms_vanish_at_agreement(seed in any::<u64>(), shape in shape3(), c in 1usize..=4, k in 2usize..=3) {
        let mut r = rng(seed);
        let labels = random_labels(&mut r, shape, k);
        let f = uniform(&mut r, &[c, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let bundle = build_stage_masks(&labels, &f, 0.5).unwrap();
        prop_assert_eq!(loss_feat(&f, &f, None).unwrap().item(), 0.0);
        for sel in [RegionSelect::All, RegionSelect::Foreground, RegionSelect::Background] {
            prop_assert_eq!(loss_sard(&f, &f, None, &bundle, sel).unwrap().item(), 0.0);
        }
        let same = build_activation_masks(&f, 0.5).unwrap();
        prop_assert_eq!(loss_ac(&bundle.activations, &same, 1.0).unwrap().item(), 0.0);
        // identity adapter: f(F_S) = F_S exactly
        let id = AdapterParams::identity(c);
        prop_assert_eq!(loss_sard(&f, &f, Some(&id), &bundle, RegionSelect::All).unwrap().item(), 0.0);
        let feats = [StageFeatures { teacher: f.clone(), student: f.clone() }];
        let cfg = DistillConfig::default();
        prop_assert_eq!(loss_ms_sard(&feats, &[None], &[Some(bundle)], &cfg).unwrap().item(), 0.0);
        let gc = [Some(GcBlockParams::random(&mut r, c))];
        prop_assert_eq!(loss_ms_ca(&feats, &[None], &gc, &[0], 1.0).unwrap().item(), 0.0);
    }

    #[test]
    fn foreground_plus_background_is_full(seed in any::<u64>(), shape in shape3(), ct in 1usize..=4, cs in 1usize..=4, k in 2usize..=4) {
        let mut r = rng(seed);
        let labels = random_labels(&mut r, shape, k);
        let ft = uniform(&mut r, &[ct, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let fs = uniform(&mut r, &[cs, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let a = (cs != ct).then(|| AdapterParams::new(&mut r, cs, ct));
        let b = build_stage_masks(&labels, &ft, 1.0).unwrap();
        let l = |sel| loss_sard(&ft, &fs, a.as_ref(), &b, sel).unwrap().item();
        let (fg, bg, all) = (l(RegionSelect::Foreground), l(RegionSelect::Background), l(RegionSelect::All));
        prop_assert!(fg >= 0.0 && bg >= 0.0);
        prop_assert!(rel_diff(fg + bg, all) < 1e-10, "{} + {} vs {}", fg, bg, all);
    }

    #[test]
    fn gc_block_starts_as_identity(seed in any::<u64>(), shape in shape3(), c in 1usize..=8) {
        let mut r = rng(seed);
        let f = uniform(&mut r, &[c, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let p = GcBlockParams::new(&mut r, c);
        prop_assert_eq!(gc_block(&f, &p).unwrap().to_vec(), f.to_vec());
    }

    #[test]
    fn shared_context_bias_gets_zero_gradient(seed in any::<u64>(), shape in shape3(), ct in 1usize..=4, cs in 1usize..=4) {
        let mut r = rng(seed);
        let ft = uniform(&mut r, &[ct, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let fs = uniform(&mut r, &[cs, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let a = (cs != ct).then(|| AdapterParams::new(&mut r, cs, ct));
        let p = GcBlockParams::random(&mut r, ct);
        let feats = [StageFeatures { teacher: ft, student: fs }];
        let loss = loss_ms_ca(&feats, &[a], &[Some(p.clone())], &[0], 1.0).unwrap();
        loss.backward().unwrap();
        prop_assert!(p.b_v2.grad().unwrap().iter().all(|&g| g == 0.0));
        prop_assert!(p.w_v2.grad().unwrap().iter().any(|&g| g != 0.0) || loss.item() == 0.0);
    }

    #[test]
    fn class_fractions_sum_to_one(seed in any::<u64>(), shape in shape3(), k in 2usize..=6) {
        let labels = random_labels(&mut rng(seed), shape, k);
        let s = class_stats(&labels);
        let sum: f64 = s.classes.iter().map(|c| c.fraction).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert_eq!(s.classes.iter().map(|c| c.voxels).sum::<usize>(), s.total_voxels);
    }

    #[test]
    fn nifti_rewrite_is_byte_identical(seed in any::<u64>(), shape in shape3(), m in 1usize..=3, big in any::<bool>(), labels in any::<bool>()) {
        let mut r = rng(seed);
        use rand::Rng;
        let spacing = [r.random_range(0.5..3.0), r.random_range(0.5..3.0), r.random_range(0.5..3.0)];
        let vol = if labels {
            NiftiVolume::Labels(random_labels(&mut r, shape, m + 1).with_spacing(spacing).unwrap())
        } else {
            let n = m * shape.iter().product::<usize>();
            let data = (0..n).map(|_| r.random_range(-1e3..1e3)).collect();
            NiftiVolume::Image(ImageVolume::new(shape, m, data, spacing).unwrap())
        };
        let endian = if big { Endian::Big } else { Endian::Little };
        let first = encode_nifti1(&vol, endian).unwrap();
        let back = decode_nifti1(&first).unwrap();
        prop_assert_eq!(&encode_nifti1(&back, endian).unwrap(), &first);
        let le = encode_nifti1(&back, Endian::Little).unwrap();
        prop_assert_eq!(encode_nifti1(&decode_nifti1(&le).unwrap(), Endian::Little).unwrap(), le);
    }

    #[test]
    fn scaled_widths_respect_floor(c in 1usize..=512, t in 0u32..6, c_min in 1usize..=16) {
        let w = scaled_width(c, t, c_min);
        prop_assert!(w >= c_min);
        prop_assert!(w <= c.max(c_min));
        prop_assert!(scaled_width(c, t + 1, c_min) <= w);
    }

    #[test]
    fn counts_shrink_with_width(t in 0u32..3, k in 2usize..=5) {
        let plan = NetworkPlan::toy(1, k);
        let a = count_params_flops(&derive_student_plan(&plan, t, 4), [16; 3]).unwrap();
        let b = count_params_flops(&derive_student_plan(&plan, t + 1, 4), [16; 3]).unwrap();
        prop_assert!(b.params < a.params && b.flops < a.flops);
    }
}

#[test]
fn multi_label_scale_mask_prefers_smallest_class() {
    let grids = vec![vec![1, 1, 1, 0], vec![0, 1, 0, 1], vec![0, 0, 1, 1]];
    let labels = LabelVolume::multi_label([1, 1, 4], grids).unwrap();
    let s = build_scale_mask(&build_region_masks(&labels)).unwrap();
    // class 1 has 3 voxels, classes 2 and 3 have 2; ties go to the lower id
    assert_eq!(s.owner, vec![1, 2, 3, 2]);
    assert_eq!(s.values, vec![1.0 / 3.0, 0.5, 0.5, 0.5]);
}
