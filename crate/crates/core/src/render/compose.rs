//! Final compositing: a 2·(N−1)-frame ping-pong loop for display
//! regions, per-pixel interval tiling for repetitive pixels, everything
//! else frozen to the reference frame, with a 2-px feather at mask
//! boundaries.

use std::collections::VecDeque;

use image::RgbImage;

use crate::error::Result;
use crate::repetitive::RepetitiveField;
use crate::video::FrameSequence;

/// Forward-backward playback index: 0,1,…,N−1,N−2,…,1 with period
/// 2·(N−1).
pub fn ping_pong_index(k: usize, n_frames: usize) -> usize {
    debug_assert!(n_frames >= 2);
    let period = 2 * (n_frames - 1);
    let k = k % period;
    if k < n_frames {
        k
    } else {
        period - k
    }
}

/// Per-pixel blend weight of a mask: min(d, 2)/2 where d is the
/// city-block distance to the nearest pixel outside the mask (image
/// borders count as outside). Zero off the mask; the outermost ring
/// blends at ½, everything deeper is fully opaque.
pub fn feather_alpha(mask: &[bool], width: u32, height: u32) -> Vec<f64> {
    assert_eq!(mask.len(), (width * height) as usize);
    let idx = |x: u32, y: u32| (y * width + x) as usize;
    let mut dist = vec![u32::MAX; mask.len()];
    let mut queue: VecDeque<(u32, u32)> = VecDeque::new();
    // Multi-source BFS seeded by every mask pixel adjacent to the
    // complement (or the image border): those have distance 1.
    for y in 0..height {
        for x in 0..width {
            if !mask[idx(x, y)] {
                dist[idx(x, y)] = 0;
                continue;
            }
            let on_border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
            let beside_gap = (x > 0 && !mask[idx(x - 1, y)])
                || (x + 1 < width && !mask[idx(x + 1, y)])
                || (y > 0 && !mask[idx(x, y - 1)])
                || (y + 1 < height && !mask[idx(x, y + 1)]);
            if on_border || beside_gap {
                dist[idx(x, y)] = 1;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[idx(x, y)];
        let mut visit = |nx: u32, ny: u32| {
            if mask[idx(nx, ny)] && dist[idx(nx, ny)] == u32::MAX {
                dist[idx(nx, ny)] = d + 1;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < width {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < height {
            visit(x, y + 1);
        }
    }
    mask.iter()
        .zip(&dist)
        .map(|(&m, &d)| if m { d.min(2) as f64 / 2.0 } else { 0.0 })
        .collect()
}

fn blend(animated: [u8; 3], background: [u8; 3], alpha: f64) -> [u8; 3] {
    if alpha >= 1.0 {
        return animated;
    }
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = alpha * animated[c] as f64 + (1.0 - alpha) * background[c] as f64;
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// What the compositor did.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderReport {
    pub loop_length: usize,
    /// True when there was nothing to animate and the loop is just the
    /// reference frame repeated.
    pub static_output: bool,
}

/// Composite the final loop. Display regions play their (regularized)
/// videos forward-backward; repetitive pixels tile their best interval
/// from the untouched source video; on overlap the display regions win.
/// Every other pixel is frozen at the reference frame.
pub fn render_loop(
    original: &FrameSequence,
    display: &[(Vec<(u32, u32)>, FrameSequence)],
    repetitive: Option<&RepetitiveField>,
) -> Result<(FrameSequence, RenderReport)> {
    let (w, h, n) = (original.width(), original.height(), original.len());
    let reference = original.reference_frame().clone();
    let loop_length = 2 * (n - 1);

    for (pixels, video) in display {
        assert_eq!(video.len(), n, "display videos must match the source length");
        assert_eq!((video.width(), video.height()), (w, h));
        assert!(!pixels.is_empty());
    }
    let repetitive_pixels: Vec<(u32, u32)> = repetitive
        .map(|field| {
            assert_eq!((field.width(), field.height()), (w, h));
            (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| field.in_mask(x, y))
                .collect()
        })
        .unwrap_or_default();

    let static_output = display.is_empty() && repetitive_pixels.is_empty();
    let mut frames: Vec<RgbImage> = vec![reference.clone(); loop_length];
    if static_output {
        let mut out = FrameSequence::from_frames(frames)?;
        out.set_reference_index(0)?;
        return Ok((
            out,
            RenderReport {
                loop_length,
                static_output: true,
            },
        ));
    }

    // Repetitive pixels first; display regions afterwards so they take
    // precedence wherever the masks overlap.
    if let Some(field) = repetitive {
        let mut mask = vec![false; (w * h) as usize];
        for &(x, y) in &repetitive_pixels {
            mask[(y * w + x) as usize] = true;
        }
        let alpha = feather_alpha(&mask, w, h);
        for &(x, y) in &repetitive_pixels {
            let (i, j) = field.best_interval(x, y);
            let period = j - i + 1;
            let a = alpha[(y * w + x) as usize];
            let bg = reference.get_pixel(x, y).0;
            for (k, frame) in frames.iter_mut().enumerate() {
                let src = original.pixel(i + k % period, x, y);
                frame.put_pixel(x, y, image::Rgb(blend(src, bg, a)));
            }
        }
    }

    for (pixels, video) in display {
        let mut mask = vec![false; (w * h) as usize];
        for &(x, y) in pixels {
            mask[(y * w + x) as usize] = true;
        }
        let alpha = feather_alpha(&mask, w, h);
        for (k, frame) in frames.iter_mut().enumerate() {
            let src = video.frame(ping_pong_index(k, n));
            for &(x, y) in pixels {
                let a = alpha[(y * w + x) as usize];
                let bg = reference.get_pixel(x, y).0;
                frame.put_pixel(x, y, image::Rgb(blend(src.get_pixel(x, y).0, bg, a)));
            }
        }
    }

    let mut out = FrameSequence::from_frames(frames)?;
    out.set_reference_index(0)?;
    Ok((
        out,
        RenderReport {
            loop_length,
            static_output: false,
        },
    ))
}
