//! Homography estimation (normalized direct linear transform) and
//! per-frame geometric stabilization against the reference frame.

use image::RgbImage;
use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::render::track::FeatureTrack;
use crate::video::FrameSequence;

/// Apply a homography to a point (projective division).
pub fn apply_homography(h: &[[f64; 3]; 3], p: (f64, f64)) -> (f64, f64) {
    let w = h[2][0] * p.0 + h[2][1] * p.1 + h[2][2];
    (
        (h[0][0] * p.0 + h[0][1] * p.1 + h[0][2]) / w,
        (h[1][0] * p.0 + h[1][1] * p.1 + h[1][2]) / w,
    )
}

/// Similarity transform taking a point set to centroid 0, mean radius √2.
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (cx, cy) = points
        .clone()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean_r = points
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_r <= f64::EPSILON {
        return None; // all points coincide
    }
    let s = 2f64.sqrt() / mean_r;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    (
        t[(0, 0)] * p.0 + t[(0, 1)] * p.1 + t[(0, 2)],
        t[(1, 0)] * p.0 + t[(1, 1)] * p.1 + t[(1, 2)],
    )
}

/// Least-squares homography mapping `pairs[i].0` onto `pairs[i].1`,
/// scaled so the bottom-right entry is 1.
pub fn fit_homography(pairs: &[((f64, f64), (f64, f64))]) -> Result<[[f64; 3]; 3]> {
    if pairs.len() < 4 {
        return Err(Error::TooFewCorrespondences { got: pairs.len() });
    }
    let t_src = normalizer(pairs.iter().map(|p| p.0)).ok_or(Error::DegenerateHomography)?;
    let t_dst = normalizer(pairs.iter().map(|p| p.1)).ok_or(Error::DegenerateHomography)?;

    let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 9);
    for (r, &(src, dst)) in pairs.iter().enumerate() {
        let (x, y) = transform(&t_src, src);
        let (u, v) = transform(&t_dst, dst);
        let row = 2 * r;
        a[(row, 0)] = -x;
        a[(row, 1)] = -y;
        a[(row, 2)] = -1.0;
        a[(row, 6)] = u * x;
        a[(row, 7)] = u * y;
        a[(row, 8)] = u;
        a[(row + 1, 3)] = -x;
        a[(row + 1, 4)] = -y;
        a[(row + 1, 5)] = -1.0;
        a[(row + 1, 6)] = v * x;
        a[(row + 1, 7)] = v * y;
        a[(row + 1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let sigma = &svd.singular_values;
    // The solution is the singular vector of the smallest singular value;
    // if the nullspace has dimension > 1 the configuration is degenerate.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[i].total_cmp(&sigma[j]));
    let smallest = order[0];
    if sigma.len() > 1 {
        let largest = *order.last().unwrap();
        if sigma[order[1]] <= 1e-9 * sigma[largest].max(1.0) {
            return Err(Error::DegenerateHomography);
        }
    }
    let h_hat = Matrix3::from_iterator(v_t.row(smallest).iter().copied()).transpose();

    let t_dst_inv = t_dst.try_inverse().expect("similarity is invertible");
    let h = t_dst_inv * h_hat * t_src;
    let h33 = h[(2, 2)];
    if h33.abs() <= 1e-12 || !h33.is_finite() {
        return Err(Error::DegenerateHomography);
    }
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = h[(r, c)] / h33;
        }
    }
    Ok(out)
}

/// Which frames were warped and which fell back to identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilizeReport {
    pub fallback_frames: Vec<usize>,
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = x.floor();
    let y0 = y.floor();
    let x1 = (x0 + 1.0).min(w - 1.0);
    let y1 = (y0 + 1.0).min(h - 1.0);
    let (fx, fy) = (x - x0, y - y0);
    let at = |px: f64, py: f64| {
        let p = img.get_pixel(px as u32, py as u32).0;
        [p[0] as f64, p[1] as f64, p[2] as f64]
    };
    let (p00, p10, p01, p11) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Warp every frame onto the reference viewpoint using the homography
/// fitted from its surviving feature tracks. Frames with fewer than 4
/// covering tracks (or an unusable fit) stay untouched and are reported.
pub fn stabilize(
    video: &FrameSequence,
    tracks: &[FeatureTrack],
) -> Result<(FrameSequence, StabilizeReport)> {
    let reference = video.reference_index();
    let (w, h) = (video.width(), video.height());
    let mut report = StabilizeReport::default();
    let mut frames: Vec<RgbImage> = Vec::with_capacity(video.len());

    for f in 0..video.len() {
        if f == reference {
            frames.push(video.frame(f).clone());
            continue;
        }
        let pairs: Vec<((f64, f64), (f64, f64))> = tracks
            .iter()
            .filter_map(|t| Some((t.position_at(f)?, t.position_at(reference)?)))
            .collect();
        let warp = if pairs.len() < 4 {
            None
        } else {
            // Map reference coordinates back into frame f for sampling.
            fit_homography(&pairs).ok().and_then(|h| {
                Matrix3::new(
                    h[0][0], h[0][1], h[0][2], h[1][0], h[1][1], h[1][2], h[2][0], h[2][1],
                    h[2][2],
                )
                .try_inverse()
            })
        };
        match warp {
            None => {
                report.fallback_frames.push(f);
                frames.push(video.frame(f).clone());
            }
            Some(inv) => {
                let hinv = [
                    [inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]],
                    [inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]],
                    [inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]],
                ];
                let src = video.frame(f);
                let mut out = RgbImage::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let (sx, sy) = apply_homography(&hinv, (x as f64, y as f64));
                        let c = bilinear(src, sx, sy);
                        out.put_pixel(
                            x,
                            y,
                            image::Rgb([
                                c[0].round().clamp(0.0, 255.0) as u8,
                                c[1].round().clamp(0.0, 255.0) as u8,
                                c[2].round().clamp(0.0, 255.0) as u8,
                            ]),
                        );
                    }
                }
                frames.push(out);
            }
        }
    }
    let mut out = FrameSequence::from_frames(frames)?;
    out.set_reference_index(reference)?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity() -> [[f64; 3]; 3] {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    fn max_abs_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
        let mut m = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                m = m.max((a[r][c] - b[r][c]).abs());
            }
        }
        m
    }

    fn square() -> Vec<(f64, f64)> {
        vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (3.0, 7.0)]
    }

    #[test]
    fn identity_correspondences_give_the_identity() {
        let pairs: Vec<_> = square().into_iter().map(|p| (p, p)).collect();
        let h = fit_homography(&pairs).unwrap();
        assert!(max_abs_diff(&h, &identity()) < 1e-9);
    }

    #[test]
    fn pure_translation_is_recovered_exactly() {
        let (dx, dy) = (4.5, -2.25);
        let pairs: Vec<_> = square()
            .into_iter()
            .map(|p| (p, (p.0 + dx, p.1 + dy)))
            .collect();
        let h = fit_homography(&pairs).unwrap();
        let want = [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]];
        assert!(max_abs_diff(&h, &want) < 1e-9);
    }

    #[test]
    fn random_homographies_are_recovered_from_noiseless_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut truth = identity();
            truth[0][0] = 1.0 + rng.gen_range(-0.2..0.2);
            truth[0][1] = rng.gen_range(-0.2..0.2);
            truth[0][2] = rng.gen_range(-5.0..5.0);
            truth[1][0] = rng.gen_range(-0.2..0.2);
            truth[1][1] = 1.0 + rng.gen_range(-0.2..0.2);
            truth[1][2] = rng.gen_range(-5.0..5.0);
            truth[2][0] = rng.gen_range(-1e-3..1e-3);
            truth[2][1] = rng.gen_range(-1e-3..1e-3);
            let pairs: Vec<_> = (0..8)
                .map(|_| {
                    let p = (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0));
                    (p, apply_homography(&truth, p))
                })
                .collect();
            let h = fit_homography(&pairs).unwrap();
            assert!(
                max_abs_diff(&h, &truth) < 1e-6,
                "off by {}",
                max_abs_diff(&h, &truth)
            );
        }
    }

    #[test]
    fn too_few_or_collinear_points_error() {
        let pairs: Vec<_> = square()[..3].iter().map(|&p| (p, p)).collect();
        assert!(matches!(
            fit_homography(&pairs),
            Err(Error::TooFewCorrespondences { got: 3 })
        ));

        let line: Vec<_> = (0..5)
            .map(|i| {
                let p = (i as f64, 2.0 * i as f64);
                (p, p)
            })
            .collect();
        assert!(matches!(
            fit_homography(&line),
            Err(Error::DegenerateHomography)
        ));
    }

    #[test]
    fn fit_is_equivariant_under_similarity_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = [
            [1.1, 0.05, 3.0],
            [-0.04, 0.95, -2.0],
            [1e-4, -2e-4, 1.0],
        ];
        let pairs: Vec<_> = (0..10)
            .map(|_| {
                let p = (rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
                (p, apply_homography(&truth, p))
            })
            .collect();

        // Similarity S: rotation by 30°, scale 2, translation (5, -3).
        let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
        let sim = [
            [2.0 * c, -2.0 * s, 5.0],
            [2.0 * s, 2.0 * c, -3.0],
            [0.0, 0.0, 1.0],
        ];
        let conjugated: Vec<_> = pairs
            .iter()
            .map(|&(p, q)| (apply_homography(&sim, p), apply_homography(&sim, q)))
            .collect();

        let h = fit_homography(&pairs).unwrap();
        let h_conj = fit_homography(&conjugated).unwrap();
        // Conjugation: H' = S · H · S⁻¹ (compare after h33 normalization).
        let sm = Matrix3::from_iterator(sim.iter().flatten().copied()).transpose();
        let hm = Matrix3::from_iterator(h.iter().flatten().copied()).transpose();
        let want = sm * hm * sm.try_inverse().unwrap();
        let want = want / want[(2, 2)];
        let mut diff = 0.0f64;
        for r in 0..3 {
            for c2 in 0..3 {
                diff = diff.max((want[(r, c2)] - h_conj[r][c2]).abs());
            }
        }
        assert!(diff < 1e-6, "conjugation mismatch {diff}");
    }

    fn textured_frame(w: u32, h: u32, shift: i64) -> RgbImage {
        // Smooth blobs so bilinear warping reproduces values accurately.
        RgbImage::from_fn(w, h, |x, y| {
            let xs = x as i64 - shift;
            let v = 96.0
                + 70.0 * ((xs as f64) * 0.37).sin() * ((y as f64) * 0.29).cos()
                + 40.0 * ((xs as f64) * 0.11).cos();
            let v = v.clamp(0.0, 255.0) as u8;
            Rgb([v, v / 2 + 30, 255 - v])
        })
    }

    #[test]
    fn no_tracks_means_identity_fallback_everywhere() {
        let frames: Vec<_> = (0..4).map(|_| textured_frame(32, 24, 0)).collect();
        let video = FrameSequence::from_frames(frames).unwrap();
        let (out, report) = stabilize(&video, &[]).unwrap();
        let r = video.reference_index();
        let expect: Vec<usize> = (0..4).filter(|&f| f != r).collect();
        assert_eq!(report.fallback_frames, expect);
        for f in 0..4 {
            assert_eq!(out.frame(f), video.frame(f));
        }
    }

    #[test]
    fn known_integer_jitter_is_removed() {
        // Frames are the same texture shifted horizontally by f-dependent
        // integer offsets; ideal tracks are supplied directly.
        let shifts = [0i64, 2, -1, 3, 1];
        let frames: Vec<_> = shifts.iter().map(|&s| textured_frame(48, 32, s)).collect();
        let mut video = FrameSequence::from_frames(frames).unwrap();
        video.set_reference_index(0).unwrap();

        let tracks: Vec<FeatureTrack> = (0..6)
            .map(|k| {
                let (bx, by) = (10.0 + 4.0 * k as f64, 8.0 + 3.0 * (k % 3) as f64);
                FeatureTrack {
                    start_frame: 0,
                    positions: shifts
                        .iter()
                        .map(|&s| (bx + s as f64, by))
                        .collect(),
                }
            })
            .collect();

        let (out, report) = stabilize(&video, &tracks).unwrap();
        assert!(report.fallback_frames.is_empty());
        // Interior pixels must match the reference frame almost exactly
        // (integer shifts, so bilinear sampling hits grid points).
        let reference = video.frame(0);
        for f in 0..shifts.len() {
            for y in 4..28u32 {
                for x in 6..42u32 {
                    let a = out.pixel(f, x, y);
                    let b = reference.get_pixel(x, y).0;
                    for c in 0..3 {
                        assert!(
                            (a[c] as i16 - b[c] as i16).abs() <= 1,
                            "frame {f} at ({x},{y}): {a:?} vs {b:?}"
                        );
                    }
                }
            }
        }
    }
}
