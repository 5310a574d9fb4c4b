use diamond_core::degrade::{bicubic_resize, gaussian_kernel, Boundary, DegradationOp};
use diamond_core::image::{decode_raw, encode_raw, extract_patches};
use diamond_core::metrics::{psnr, ssim};
use diamond_core::nnexec::{layer_forward, LayerSpec, Tensor, Weights4};
use diamond_core::{Image, ImageFormat, Psnr, ResizeFactor};
use proptest::prelude::*;
use std::path::Path;

fn image(max_side: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |d| Image::new(h, w, d).unwrap())
    })
}

fn image_pair(h: usize, w: usize) -> impl Strategy<Value = (Image, Image)> {
    (
        prop::collection::vec(0.0f32..=1.0, h * w),
        prop::collection::vec(0.0f32..=1.0, h * w),
    )
        .prop_map(move |(a, b)| (Image::new(h, w, a).unwrap(), Image::new(h, w, b).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raw_round_trip_is_bitwise(img in image(24)) {
        let back = decode_raw(&encode_raw(&img), Path::new("mem")).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn png8_error_is_at_most_half_a_level(img in image(16)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        img.save(&path, ImageFormat::Png8).unwrap();
        let back = Image::load(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn patches_stay_in_bounds(h in 4usize..40, w in 4usize..40, size in 1usize..5, stride in 1usize..6) {
        let img = Image::from_fn(h, w, |r, c| ((r * w + c) % 251) as f32 / 251.0);
        let set = extract_patches(&img, size, stride).unwrap();
        prop_assert_eq!(set.len(), ((h - size) / stride + 1) * ((w - size) / stride + 1));
        for (p, &(r0, c0)) in set.patches.iter().zip(&set.offsets) {
            prop_assert!(r0 + size <= h && c0 + size <= w);
            prop_assert_eq!(p.get(size - 1, size - 1), img.get(r0 + size - 1, c0 + size - 1));
        }
    }

    #[test]
    fn blur_is_linear((x, y) in image_pair(12, 9), a in -2.0f32..2.0, b in -2.0f32..2.0, periodic in any::<bool>()) {
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Replicate };
        let op = DegradationOp::blur(gaussian_kernel(5, 1.1).unwrap(), boundary);
        check_linear(&op, &x, &y, a, b)?;
    }

    #[test]
    fn resample_is_linear((x, y) in image_pair(10, 8), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        check_linear(&DegradationOp::sr2x(), &x, &y, a, b)?;
    }

    #[test]
    fn resize_preserves_shape_contract(h in 1usize..12, w in 1usize..12) {
        let img = Image::filled(2 * h, 2 * w, 0.3);
        let down = bicubic_resize(&img, ResizeFactor::Half).unwrap();
        prop_assert_eq!(down.dims(), (h, w));
        prop_assert_eq!(bicubic_resize(&down, ResizeFactor::Double).unwrap().dims(), (2 * h, 2 * w));
    }

    #[test]
    fn ssim_offset_keeps_self_similarity_and_bounds((x, y) in image_pair(16, 16), c in -0.4f32..0.4) {
        // A shared offset leaves variances and covariance untouched; only the
        // luminance term moves, and it is exactly 1 for identical inputs.
        let shift = |img: &Image| img.map(|v| v + c);
        let s = ssim(&shift(&x), &shift(&x)).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-9);
        let ab = ssim(&shift(&x), &shift(&y)).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn psnr_falls_as_the_error_grows(base in image(12), e1 in 0.001f32..0.05, grow in 1.01f32..3.0) {
        let near = base.map(|v| v + e1);
        let far = base.map(|v| v + e1 * grow);
        let (Psnr::Finite(p1), Psnr::Finite(p2)) = (psnr(&near, &base).unwrap(), psnr(&far, &base).unwrap()) else {
            return Err(TestCaseError::fail("finite PSNR expected"));
        };
        prop_assert!(p2 < p1);
    }

    #[test]
    fn conv_is_linear_in_the_input(seed in 0u64..1000, a in -2.0f32..2.0) {
        let mut s = diamond_core::degrade::GaussianStream::new(seed);
        let mut v = |n: usize| (0..n).map(|_| s.next_gaussian() as f32).collect::<Vec<_>>();
        let x1 = Tensor::new(2, 6, 6, v(72)).unwrap();
        let x2 = Tensor::new(2, 6, 6, v(72)).unwrap();
        let layer = LayerSpec::Conv { weight: Weights4::new(3, 2, 3, 3, v(54)).unwrap(), bias: vec![0.0; 3], stride: 1 };
        let mixed: Vec<f32> = x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + q).collect();
        let mixed = Tensor::new(2, 6, 6, mixed).unwrap();
        let y1 = layer_forward(0, &layer, &[&x1]).unwrap();
        let y2 = layer_forward(0, &layer, &[&x2]).unwrap();
        let ym = layer_forward(0, &layer, &[&mixed]).unwrap();
        for ((m, p), q) in ym.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((m - (a * p + q)).abs() < 1e-4);
        }
    }
}

fn check_linear(
    op: &DegradationOp,
    x: &Image,
    y: &Image,
    a: f32,
    b: f32,
) -> Result<(), TestCaseError> {
    let mix = x.zip_map(y, |p, q| a * p + b * q).unwrap();
    let lhs = op.apply(&mix).unwrap();
    let (hx, hy) = (op.apply(x).unwrap(), op.apply(y).unwrap());
    for ((l, p), q) in lhs.data().iter().zip(hx.data()).zip(hy.data()) {
        prop_assert!(
            (l - (a * p + b * q)).abs() <= 1e-5,
            "{l} vs {}",
            a * p + b * q
        );
    }
    Ok(())
}
