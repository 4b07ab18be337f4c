//! Deterministic synthetic clips for tests, demos, and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::media_io::{Frame, FrameSet};

/// Smooth multi-scale texture: a sum of random plane waves per channel with
/// periods between 6 and 60 pixels, plus faint pixel noise.
pub fn textured_image(w: usize, h: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[(f64, f64, f64, f64); 6]> = (0..3)
        .map(|_| {
            std::array::from_fn(|_| {
                let period = rng.random_range(6.0..60.0);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / period;
                (k * angle.cos(), k * angle.sin(), phase, rng.random_range(0.5..1.0))
            })
        })
        .collect();
    Frame::from_fn(w, h, |x, y| {
        let mut px = [0.0f32; 3];
        for (c, ws) in waves.iter().enumerate() {
            let total: f64 = ws.iter().map(|w| w.3).sum();
            let s: f64 = ws
                .iter()
                .map(|&(kx, ky, p, a)| a * (kx * x as f64 + ky * y as f64 + p).sin())
                .sum();
            let noise: f64 = rng.random_range(-0.03..0.03);
            px[c] = (0.5 + 0.4 * s / total + noise).clamp(0.0, 1.0) as f32;
        }
        px
    })
}

/// `out(x, y) = f(x - dx, y - dy)` with wraparound.
pub fn shift_wrap(f: &Frame, dx: i64, dy: i64) -> Frame {
    let (w, h) = f.dims();
    Frame::from_fn(w, h, |x, y| {
        let xs = (x as i64 - dx).rem_euclid(w as i64) as usize;
        let ys = (y as i64 - dy).rem_euclid(h as i64) as usize;
        f.pixel(xs, ys)
    })
}

/// Smooth random field in `[-1, 1]`: values on a coarse `grid x grid`
/// lattice, bilinearly interpolated.
pub fn low_frequency_noise(w: usize, h: usize, grid: usize, rng: &mut impl Rng) -> Vec<f32> {
    let g = grid.max(2);
    let lattice: Vec<f32> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = y as f32 / (h.max(2) - 1) as f32 * (g - 1) as f32;
        let y0 = (fy as usize).min(g - 2);
        let ty = fy - y0 as f32;
        for x in 0..w {
            let fx = x as f32 / (w.max(2) - 1) as f32 * (g - 1) as f32;
            let x0 = (fx as usize).min(g - 2);
            let tx = fx - x0 as f32;
            let at = |i: usize, j: usize| lattice[j * g + i];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Pastes `sprite` with its top-left corner at `(x, y)`, clipped to `bg`.
pub fn composite(bg: &Frame, sprite: &Frame, x: i64, y: i64) -> Frame {
    let (sw, sh) = sprite.dims();
    Frame::from_fn(bg.width(), bg.height(), |px, py| {
        let (sx, sy) = (px as i64 - x, py as i64 - y);
        if sx >= 0 && sy >= 0 && (sx as usize) < sw && (sy as usize) < sh {
            sprite.pixel(sx as usize, sy as usize)
        } else {
            bg.pixel(px, py)
        }
    })
}

/// A textured square moving over a static textured background.
#[derive(Debug, Clone)]
pub struct SpriteScene {
    pub background: Frame,
    pub sprite: Frame,
}

impl SpriteScene {
    /// Background `side x side`, sprite `sprite_side` square.
    pub fn new(side: usize, sprite_side: usize, seed: u64) -> Self {
        let background = textured_image(side, side, seed);
        // Brighter, higher-contrast sprite so it dominates the content.
        let raw = textured_image(sprite_side, sprite_side, seed.wrapping_add(1));
        let sprite = Frame::from_fn(sprite_side, sprite_side, |x, y| {
            let p = raw.pixel(x, y);
            [
                (p[0] * 1.4 - 0.1).clamp(0.0, 1.0),
                (p[1] * 0.4).clamp(0.0, 1.0),
                (1.0 - p[2]).clamp(0.0, 1.0),
            ]
        });
        Self { background, sprite }
    }

    pub fn render(&self, x: i64, y: i64) -> Frame {
        composite(&self.background, &self.sprite, x, y)
    }

    /// One frame per sprite position.
    pub fn clip(&self, positions: &[(i64, i64)]) -> FrameSet {
        FrameSet::new(positions.iter().map(|&(x, y)| self.render(x, y)).collect()).expect("at least two positions")
    }
}

/// Adds `amplitude * field` to every channel, clamped to `[0, 1]`.
pub fn add_field(f: &Frame, field: &[f32], amplitude: f32) -> Frame {
    let (w, h) = f.dims();
    Frame::from_fn(w, h, |x, y| {
        let d = amplitude * field[y * w + x];
        let p = f.pixel(x, y);
        [
            (p[0] + d).clamp(0.0, 1.0),
            (p[1] + d * 0.7).clamp(0.0, 1.0),
            (p[2] - d * 0.5).clamp(0.0, 1.0),
        ]
    })
}

/// `n` frames in two contiguous halves drawn from two unrelated textures;
/// within a half, frames differ by small shifts and noise. Returns the
/// frames and each frame's cluster label.
pub fn two_cluster_clip(n: usize, side: usize, seed: u64) -> (FrameSet, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = [textured_image(side, side, seed ^ 0xA5A5), textured_image(side, side, seed ^ 0x5A5A)];
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = usize::from(i >= n / 2);
        let (dx, dy) = (rng.random_range(-2..=2), rng.random_range(-2..=2));
        let field = low_frequency_noise(side, side, 4, &mut rng);
        frames.push(add_field(&shift_wrap(&bases[label], dx, dy), &field, 0.08));
        labels.push(label);
    }
    (FrameSet::new(frames).expect("n >= 2"), labels)
}

/// Sprite travelling around a rounded loop; every frame has clear motion.
pub fn orbit_clip(n: usize, side: usize, seed: u64) -> FrameSet {
    let scene = SpriteScene::new(side, side / 4, seed);
    let c = (side / 2 - side / 8) as f64;
    let r = side as f64 * 0.22;
    let positions: Vec<(i64, i64)> = (0..n)
        .map(|i| {
            // One and a half laps so the loop revisits similar content.
            let t = i as f64 / n as f64 * 3.0 * std::f64::consts::PI;
            ((c + r * t.cos()).round() as i64, (c + 0.6 * r * t.sin()).round() as i64)
        })
        .collect();
    scene.clip(&positions)
}

/// Horizontal sprite positions sweeping right and left in legs of `leg`
/// steps of `step` pixels each.
pub fn triangle_positions(n: usize, leg: usize, step: i64) -> Vec<i64> {
    let mut x = 0i64;
    let mut dir = 1i64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(x);
        if (i + 1) % leg == 0 {
            dir = -dir;
        }
        x += dir * step;
    }
    out
}

/// A sprite sweeping back and forth, then a shaky section where the whole
/// scene jitters around the same sprite positions with no dominant
/// direction. The sweep legs form linear motion segments whose content
/// matches frames of the opposite leg.
pub fn back_and_forth_clip(side: usize, seed: u64) -> FrameSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = SpriteScene::new(side, side / 3, seed);
    let base_x = side as i64 / 3;
    let base_y = side as i64 / 3;
    let xs = triangle_positions(24, 6, 4);
    let mut frames: Vec<Frame> = xs.iter().map(|&x| scene.render(base_x + x, base_y)).collect();
    for _ in 0..16 {
        let x = xs[rng.random_range(0..xs.len())];
        let (bx, by) = (rng.random_range(-3..=3), rng.random_range(-3..=3));
        let (sx, sy) = (rng.random_range(-6..=6), rng.random_range(-6..=6));
        let bg = shift_wrap(&scene.background, bx, by);
        frames.push(composite(&bg, &scene.sprite, base_x + x + sx, base_y + sy));
    }
    FrameSet::new(frames).expect("non-empty")
}

/// Period-8 sway of a sprite by one pixel per frame under a slowly varying
/// global shimmer. Consecutive frames change by a few percent; sway legs
/// alternate direction every four frames.
pub fn subtle_loop_clip(n: usize, side: usize, seed: u64) -> FrameSet {
    const SWAY: [i64; 8] = [0, 1, 2, 1, 0, -1, -2, -1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = SpriteScene::new(side, side / 3, seed);
    let fields: Vec<Vec<f32>> = (0..n).map(|_| low_frequency_noise(side, side, 6, &mut rng)).collect();
    let window = 4;
    let base = side as i64 / 3;
    let frames = (0..n)
        .map(|t| {
            // Circular moving average: frames closer than the window share shimmer.
            let mut shimmer = vec![0.0f32; side * side];
            for k in 0..window {
                for (s, v) in shimmer.iter_mut().zip(&fields[(t + k) % n]) {
                    *s += v / window as f32;
                }
            }
            let f = scene.render(base + SWAY[t % 8], base);
            add_field(&f, &shimmer, 0.12)
        })
        .collect();
    FrameSet::new(frames).expect("n >= 2")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(textured_image(16, 16, 4), textured_image(16, 16, 4));
        assert_ne!(textured_image(16, 16, 4), textured_image(16, 16, 5));
    }

    #[test]
    fn shift_round_trip() {
        let f = textured_image(20, 10, 1);
        assert_eq!(shift_wrap(&shift_wrap(&f, 3, -2), -3, 2), f);
    }

    #[test]
    fn triangle_legs() {
        assert_eq!(triangle_positions(9, 3, 2), vec![0, 2, 4, 2, 0, -2, 0, 2, 4]);
    }

    #[test]
    fn two_clusters_labelled() {
        let (set, labels) = two_cluster_clip(10, 16, 0);
        assert_eq!(set.len(), 10);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 5);
    }
}
