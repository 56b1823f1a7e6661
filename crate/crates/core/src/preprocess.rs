//! Sequence homogenisation: ROI cropping, validity splitting, resizing,
//! intensity normalisation, and rendering complex modes as images.

use crate::error::{Error, Result};
use crate::hodmd::DmdMode;
use crate::tensor::{SnapshotSequence, Tensor};

pub fn crop_roi(s: &SnapshotSequence) -> Result<SnapshotSequence> {
    let roi = s
        .roi
        .ok_or_else(|| Error::InvalidSequence(format!("{}: no roi to crop", s.sequence_id)))?;
    s.validate()?;
    let (k, nx) = (s.num_frames(), s.width());
    let mut data = Vec::with_capacity(k * roi.width * roi.height);
    for f in 0..k {
        let frame = s.frame(f);
        for y in roi.y0..roi.y0 + roi.height {
            data.extend_from_slice(&frame[y * nx + roi.x0..y * nx + roi.x0 + roi.width]);
        }
    }
    Ok(SnapshotSequence {
        frames: Tensor::new(vec![k, roi.height, roi.width], data)?,
        roi: None,
        ..s.clone()
    })
}

/// Maximal runs of consecutive valid frames, each as its own sequence with id
/// suffix `_r{run}`.
pub fn split_on_validity(s: &SnapshotSequence) -> Vec<SnapshotSequence> {
    let n = s.height() * s.width();
    let mut out = Vec::new();
    let mut start = None;
    for k in 0..=s.num_frames() {
        let valid = k < s.num_frames() && s.validity[k];
        match (valid, start) {
            (true, None) => start = Some(k),
            (false, Some(b)) => {
                let data = s.frames.data()[b * n..k * n].to_vec();
                let frames = Tensor::new(vec![k - b, s.height(), s.width()], data).expect("non-empty run");
                out.push(SnapshotSequence {
                    frames,
                    sequence_id: format!("{}_r{}", s.sequence_id, out.len()),
                    validity: vec![true; k - b],
                    ..s.clone()
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Bilinear resize of one row-major image with corner-aligned sampling.
pub fn resize_image(src: &[f32], from: (usize, usize), to: (usize, usize)) -> Vec<f32> {
    let (h, w) = from;
    let (oh, ow) = to;
    if from == to {
        return src.to_vec();
    }
    let scale = |i: usize, n_out: usize, n_in: usize| {
        if n_out <= 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let sy = scale(i, oh, h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for j in 0..ow {
            let sx = scale(j, ow, w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let v = |y: usize, x: usize| src[y * w + x] as f64;
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    out
}

pub fn resize_bilinear(s: &SnapshotSequence, target: (usize, usize)) -> Result<SnapshotSequence> {
    let (th, tw) = target;
    if th < 2 || tw < 2 {
        return Err(Error::InvalidArgument(format!("resize target {th}x{tw} must be at least 2x2")));
    }
    let from = (s.height(), s.width());
    let mut data = Vec::with_capacity(s.num_frames() * th * tw);
    for k in 0..s.num_frames() {
        data.extend(resize_image(s.frame(k), from, target));
    }
    Ok(SnapshotSequence {
        frames: Tensor::new(vec![s.num_frames(), th, tw], data)?,
        roi: None,
        ..s.clone()
    })
}

/// Min-max scales `values` to `[0, 1]`; a constant input maps to zeros.
pub fn min_max(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - lo) / span);
}

pub fn normalize_intensity(s: &SnapshotSequence) -> SnapshotSequence {
    let mut out = s.clone();
    min_max(out.frames.data_mut());
    out
}

/// Magnitude image of real or complex values, min-max scaled.
pub fn magnitude_image(magnitudes: impl IntoIterator<Item = f64>, shape: (usize, usize)) -> Result<Tensor> {
    let mut data: Vec<f32> = magnitudes.into_iter().map(|m| m.abs() as f32).collect();
    min_max(&mut data);
    Tensor::new(vec![shape.0, shape.1], data)
}

/// `|u_m|` element-wise, min-max scaled to `[0, 1]`.
pub fn render_mode_image(m: &DmdMode, shape: (usize, usize)) -> Result<Tensor> {
    if m.shape.len() != shape.0 * shape.1 {
        return Err(Error::InvalidShape { dims: vec![shape.0, shape.1], reason: "mode length differs from image size" });
    }
    magnitude_image(m.shape.iter().map(|z| z.norm()), shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Roi;
    use faer::c64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(k: usize, h: usize, w: usize) -> SnapshotSequence {
        let data = (0..k * h * w).map(|i| i as f32).collect();
        SnapshotSequence::new("s", Tensor::new(vec![k, h, w], data).unwrap(), 0.1, Some("a".into())).unwrap()
    }

    #[test]
    fn crop_full_frame_is_identity() {
        let mut s = seq(2, 4, 6);
        s.roi = Some(Roi { x0: 0, y0: 0, width: 6, height: 4 });
        let c = crop_roi(&s).unwrap();
        assert_eq!(c.frames, s.frames);
        assert!(c.roi.is_none());
    }

    #[test]
    fn crop_matches_direct_indexing() {
        let mut s = seq(3, 5, 8);
        let roi = Roi { x0: 2, y0: 1, width: 4, height: 3 };
        s.roi = Some(roi);
        let c = crop_roi(&s).unwrap();
        assert_eq!(c.frames.dims(), &[3, 3, 4]);
        let mut golden = Vec::new();
        for k in 0..3 {
            for y in 1..4 {
                for x in 2..6 {
                    golden.push(s.frames.data()[(k * 5 + y) * 8 + x]);
                }
            }
        }
        assert_eq!(c.frames.data(), golden.as_slice());
        s.roi = Some(Roi { x0: 0, y0: 0, width: 4, height: 5 });
        assert_eq!(crop_roi(&s).unwrap().width(), 4);
    }

    #[test]
    fn crop_without_roi_fails() {
        assert!(crop_roi(&seq(1, 2, 2)).is_err());
    }

    #[test]
    fn split_examples() {
        let mut s = seq(3, 1, 2);
        assert_eq!(split_on_validity(&s).len(), 1);
        s = seq(4, 1, 2);
        s.validity = vec![true, true, false, true];
        let parts = split_on_validity(&s);
        assert_eq!(parts.iter().map(|p| p.num_frames()).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(parts[0].sequence_id, "s_r0");
        assert_eq!(parts[1].sequence_id, "s_r1");
        assert_eq!(parts[1].frame(0), s.frame(3));
        assert!(parts.iter().all(|p| p.dt == 0.1 && p.validity.iter().all(|&v| v)));
        s.validity = vec![false; 4];
        assert!(split_on_validity(&s).is_empty());
    }

    #[test]
    fn split_covers_valid_frames_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let k = rng.random_range(1..30);
            let mut s = seq(k, 2, 2);
            s.validity = (0..k).map(|_| rng.random_bool(0.7)).collect();
            let parts = split_on_validity(&s);
            // Direct scan oracle: walk the mask and pull frames from the runs.
            let mut it = parts.iter().flat_map(|p| (0..p.num_frames()).map(move |i| p.frame(i).to_vec()));
            let mut rebuilt = Vec::new();
            for f in 0..k {
                if s.validity[f] {
                    rebuilt.push(it.next().expect("enough valid frames"));
                } else {
                    rebuilt.push(s.frame(f).to_vec());
                }
            }
            assert!(it.next().is_none());
            let flat: Vec<f32> = rebuilt.concat();
            assert_eq!(flat.as_slice(), s.frames.data());
        }
    }

    #[test]
    fn resize_identity_constant_and_ramp() {
        let s = seq(2, 4, 4);
        assert_eq!(resize_bilinear(&s, (4, 4)).unwrap().frames, s.frames);
        let c = SnapshotSequence::new("c", Tensor::new(vec![1, 3, 5], vec![2.5; 15]).unwrap(), 0.1, None).unwrap();
        assert!(resize_bilinear(&c, (7, 4)).unwrap().frames.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
        // ramp v = 4y + x; corner-aligned 2x2 picks the corners.
        let ramp = seq(1, 4, 4);
        assert_eq!(resize_bilinear(&ramp, (2, 2)).unwrap().frames.data(), &[0.0, 3.0, 12.0, 15.0]);
        // 4x4 -> 3x3 samples at 0, 1.5, 3 along each axis.
        let r = resize_bilinear(&ramp, (3, 3)).unwrap();
        let want = [0.0, 1.5, 3.0, 6.0, 7.5, 9.0, 12.0, 13.5, 15.0];
        for (a, b) in r.frames.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(resize_bilinear(&ramp, (1, 4)).is_err());
        let once = resize_bilinear(&ramp, (3, 5)).unwrap();
        assert_eq!(resize_bilinear(&once, (3, 5)).unwrap().frames, once.frames);
    }

    #[test]
    fn normalize_examples() {
        let s = SnapshotSequence::new("n", Tensor::new(vec![1, 1, 3], vec![0.0, 127.5, 255.0]).unwrap(), 0.1, None).unwrap();
        assert_eq!(normalize_intensity(&s).frames.data(), &[0.0, 0.5, 1.0]);
        let c = SnapshotSequence::new("c", Tensor::new(vec![2, 1, 2], vec![7.0; 4]).unwrap(), 0.1, None).unwrap();
        assert!(normalize_intensity(&c).frames.data().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..60).map(|_| rng.random_range(-50.0..80.0)).collect();
        let r = SnapshotSequence::new("r", Tensor::new(vec![3, 4, 5], data).unwrap(), 0.1, None).unwrap();
        let n = normalize_intensity(&r);
        let lo = n.frames.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = n.frames.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        assert!(lo.abs() < 1e-6 && (hi - 1.0).abs() < 1e-6);
    }

    fn mode(shape: Vec<c64>) -> DmdMode {
        DmdMode { shape, frequency: 1.0, growth_rate: 0.0, amplitude: 1.0 }
    }

    #[test]
    fn mode_images() {
        let re = mode(vec![c64::new(-2.0, 0.0), c64::new(1.0, 0.0), c64::new(0.0, 0.0), c64::new(0.5, 0.0)]);
        let img = render_mode_image(&re, (2, 2)).unwrap();
        assert_eq!(img.data(), &[1.0, 0.5, 0.0, 0.25]);
        let im = mode(re.shape.iter().map(|z| c64::new(0.0, z.re)).collect());
        assert_eq!(render_mode_image(&im, (2, 2)).unwrap(), img);
        assert!(render_mode_image(&re, (3, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<c64> = (0..12).map(|_| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let img = render_mode_image(&mode(z.clone()), (3, 4)).unwrap();
        let mags: Vec<f64> = z.iter().map(|v| (v.re * v.re + v.im * v.im).sqrt()).collect();
        let (lo, hi) = mags.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for (g, m) in img.data().iter().zip(&mags) {
            assert!((*g as f64 - (m - lo) / (hi - lo)).abs() < 1e-6);
        }
        let rot = c64::from_polar(1.0, 0.7);
        let rotated = render_mode_image(&mode(z.iter().map(|v| v * rot).collect()), (3, 4)).unwrap();
        for (a, b) in rotated.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
