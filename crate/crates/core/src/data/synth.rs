//! Procedural face-like images for desk-scale training.

use super::ImageBuffer;
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Axis-aligned ellipse with a soft (about one pixel) edge.
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    /// Coverage in [0, 1] at pixel centre (y, x).
    fn coverage(&self, y: f64, x: f64, px: f64) -> f64 {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        let r = (dy * dy + dx * dx).sqrt();
        // Signed distance in pixels, approximated along the mean radius.
        let d = (1.0 - r) * self.ry.min(self.rx) / px;
        smoothstep(-0.5, 0.5, d)
    }
}

fn smoothstep(lo: f64, hi: f64, v: f64) -> f64 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// A deterministic face-like image: gradient background, skin-tone head,
/// two eyes with irises and highlights, and a mouth arc. Every geometric and
/// colour parameter is drawn from the stream seeded by `seed`.
pub fn synth_face(seed: u64, size: usize) -> Result<ImageBuffer> {
    if size < 32 {
        return Err(Error::InvalidArgument(format!(
            "synthetic faces need size ≥ 32, got {size}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut u = |lo: f64, hi: f64| rng.uniform_in(lo, hi);

    // Work in unit coordinates; `px` is one pixel in those units.
    let px = 1.0 / size as f64;
    let bg_top = [u(0.1, 0.6), u(0.1, 0.6), u(0.2, 0.8)];
    let bg_bottom = [u(0.0, 0.5), u(0.0, 0.5), u(0.0, 0.6)];
    let jitter = [u(-0.06, 0.06), u(-0.06, 0.06), u(-0.06, 0.06)];
    let tone = u(0.0, 1.0);
    let base = mix([0.95, 0.78, 0.66], [0.45, 0.30, 0.22], tone);
    let skin = [0, 1, 2].map(|c| (base[c] + jitter[c]).clamp(0.0, 1.0));
    let shade = [0, 1, 2].map(|c| skin[c] * 0.8);

    let head = Ellipse {
        cy: u(0.47, 0.53),
        cx: u(0.46, 0.54),
        ry: u(0.36, 0.43),
        rx: u(0.27, 0.34),
    };
    let eye_y = head.cy - head.ry * u(0.15, 0.25);
    let eye_dx = head.rx * u(0.38, 0.5);
    let eye_r = head.rx * u(0.16, 0.22);
    let eye_ry = eye_r * u(0.55, 0.75);
    let iris = [u(0.05, 0.4), u(0.05, 0.35), u(0.05, 0.35)];
    let gaze = u(-0.3, 0.3) * eye_r;
    let eyes: Vec<(Ellipse, Ellipse, Ellipse)> = [-1.0, 1.0]
        .iter()
        .map(|s| {
            let cx = head.cx + s * eye_dx;
            (
                Ellipse { cy: eye_y, cx, ry: eye_ry, rx: eye_r },
                Ellipse { cy: eye_y, cx: cx + gaze, ry: eye_ry * 0.85, rx: eye_ry * 0.85 },
                Ellipse {
                    cy: eye_y - eye_ry * 0.3,
                    cx: cx + gaze + eye_ry * 0.3,
                    ry: eye_ry * 0.25,
                    rx: eye_ry * 0.25,
                },
            )
        })
        .collect();
    let mouth_y = head.cy + head.ry * u(0.4, 0.55);
    let mouth_w = head.rx * u(0.35, 0.55);
    let smile = head.ry * u(-0.05, 0.12);
    let lip_t = px * u(1.5, 3.0).max(1.0) + 0.012;
    let lip = [u(0.55, 0.8), u(0.15, 0.3), u(0.2, 0.35)];
    let blush = u(0.0, 0.3);
    let cheeks: Vec<Ellipse> = [-1.0, 1.0]
        .iter()
        .map(|s| Ellipse {
            cy: (eye_y + mouth_y) / 2.0,
            cx: head.cx + s * head.rx * 0.6,
            ry: head.rx * 0.18,
            rx: head.rx * 0.22,
        })
        .collect();

    Ok(ImageBuffer::from_fn(size, size, |py, pxi| {
        let y = (py as f64 + 0.5) * px;
        let x = (pxi as f64 + 0.5) * px;
        let mut c = mix(bg_top, bg_bottom, y);
        // Head with a soft shading falloff towards its edge.
        let head_cov = head.coverage(y, x, px);
        if head_cov > 0.0 {
            let r = (((y - head.cy) / head.ry).powi(2) + ((x - head.cx) / head.rx).powi(2)).sqrt();
            let face = mix(skin, shade, smoothstep(0.6, 1.0, r));
            c = mix(c, face, head_cov);
            for ch in &cheeks {
                c = mix(c, [0.9, 0.45, 0.45], blush * ch.coverage(y, x, 4.0 * px));
            }
        }
        for (white, pupil, glint) in &eyes {
            c = mix(c, [0.95, 0.95, 0.93], white.coverage(y, x, px));
            c = mix(c, iris, pupil.coverage(y, x, px) * white.coverage(y, x, px));
            c = mix(c, [1.0, 1.0, 1.0], glint.coverage(y, x, px));
        }
        // Mouth: a parabolic arc of constant thickness.
        let t = (x - head.cx) / mouth_w;
        if t.abs() <= 1.2 {
            let arc = mouth_y + smile * (t * t);
            let d = ((y - arc).abs() - lip_t) / px;
            let along = smoothstep(1.05, 0.95, t.abs());
            c = mix(c, lip, smoothstep(0.5, -0.5, d) * along);
        }
        c.map(|v| v as f32)
    }))
}
