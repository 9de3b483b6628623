//! Toy VAE stand-in: nearest-neighbour upscale plus a 3×3 smoothing kernel,
//! and its exact inverse on the latent grid.
//!
//! Averaging a smoothed `u×u` block collapses the pixel kernel
//! `[w, 1-2w, w]` to the latent-grid kernel `[c, 1-2c, c]` with `c = w/u`
//! (edge rows become `(1-c, c)`), so the encoder is block-mean pooling
//! followed by one tridiagonal solve per axis.

use crate::error::{PoaError, Result};
use crate::generator::{Image, Latent};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyCodec {
    pub upscale: usize,
    /// Off-centre kernel weight `w`; must lie in `[0, 0.25)`.
    pub smoothing: f64,
}

impl Default for ToyCodec {
    fn default() -> Self {
        ToyCodec {
            upscale: 4,
            smoothing: 0.2,
        }
    }
}

impl ToyCodec {
    pub fn new(upscale: usize, smoothing: f64) -> Result<Self> {
        if upscale == 0 {
            return Err(PoaError::DomainError("upscale must be at least 1".into()));
        }
        if !(0.0..0.25).contains(&smoothing) {
            return Err(PoaError::DomainError(format!(
                "smoothing weight {smoothing} outside [0, 0.25)"
            )));
        }
        Ok(ToyCodec { upscale, smoothing })
    }

    pub fn image_shape(&self, latent_shape: [usize; 3]) -> [usize; 3] {
        [
            latent_shape[0],
            latent_shape[1] * self.upscale,
            latent_shape[2] * self.upscale,
        ]
    }

    pub fn decode(&self, latent: &Latent) -> Image {
        let [c, h, w] = latent.shape();
        let u = self.upscale;
        let (ph, pw) = (h * u, w * u);
        let mut data = vec![0.0; c * ph * pw];
        for ch in 0..c {
            let src = &latent.data()[ch * h * w..(ch + 1) * h * w];
            let dst = &mut data[ch * ph * pw..(ch + 1) * ph * pw];
            for y in 0..ph {
                for x in 0..pw {
                    dst[y * pw + x] = src[(y / u) * w + x / u];
                }
            }
            smooth_plane(dst, ph, pw, self.smoothing);
        }
        Image::new([c, ph, pw], data).expect("decoded image has consistent shape")
    }

    pub fn encode(&self, image: &Image, latent_shape: [usize; 3]) -> Result<Latent> {
        let [c, h, w] = latent_shape;
        let [ic, ph, pw] = image.shape();
        if ic != c || h == 0 || w == 0 || ph % h != 0 || pw % w != 0 || ph / h != pw / w {
            return Err(PoaError::shape(&self.image_shape(latent_shape), &image.shape()));
        }
        let u = ph / h;
        let cw = self.smoothing / u as f64;
        let inv_area = 1.0 / (u * u) as f64;
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            let src = &image.data()[ch * ph * pw..(ch + 1) * ph * pw];
            let dst = &mut data[ch * h * w..(ch + 1) * h * w];
            for y in 0..ph {
                for x in 0..pw {
                    dst[(y / u) * w + x / u] += src[y * pw + x];
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv_area);
            unsmooth_plane(dst, h, w, cw);
        }
        Latent::new(latent_shape, data)
    }
}

/// Separable `[w, 1-2w, w]` filter with edge replication.
fn smooth_plane(plane: &mut [f64], h: usize, w: usize, weight: f64) {
    if weight == 0.0 {
        return;
    }
    let mut line = Vec::with_capacity(h.max(w));
    for y in 0..h {
        line.clear();
        line.extend_from_slice(&plane[y * w..(y + 1) * w]);
        for x in 0..w {
            let l = line[x.saturating_sub(1)];
            let r = line[(x + 1).min(w - 1)];
            plane[y * w + x] = weight * l + (1.0 - 2.0 * weight) * line[x] + weight * r;
        }
    }
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| plane[y * w + x]));
        for y in 0..h {
            let t = line[y.saturating_sub(1)];
            let b = line[(y + 1).min(h - 1)];
            plane[y * w + x] = weight * t + (1.0 - 2.0 * weight) * line[y] + weight * b;
        }
    }
}

fn unsmooth_plane(plane: &mut [f64], h: usize, w: usize, c: f64) {
    if c == 0.0 {
        return;
    }
    let mut line = vec![0.0; h.max(w)];
    for y in 0..h {
        line[..w].copy_from_slice(&plane[y * w..(y + 1) * w]);
        solve_kernel(&mut line[..w], c);
        plane[y * w..(y + 1) * w].copy_from_slice(&line[..w]);
    }
    for x in 0..w {
        for y in 0..h {
            line[y] = plane[y * w + x];
        }
        solve_kernel(&mut line[..h], c);
        for y in 0..h {
            plane[y * w + x] = line[y];
        }
    }
}

/// Solves `A x = rhs` in place, where `A` is the replicate-edge tridiagonal
/// matrix with rows `[c, 1-2c, c]` and boundary diagonals `1-c`.
fn solve_kernel(rhs: &mut [f64], c: f64) {
    let n = rhs.len();
    if n == 1 {
        return;
    }
    let diag = |i: usize| if i == 0 || i == n - 1 { 1.0 - c } else { 1.0 - 2.0 * c };
    let mut upper = vec![0.0; n];
    let mut denom = diag(0);
    upper[0] = c / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag(i) - c * upper[i - 1];
        upper[i] = c / denom;
        rhs[i] = (rhs[i] - c * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= upper[i] * rhs[i + 1];
    }
}

/// 16-bit PNG of an image whose values are read on `[lo, hi]` (clamped).
/// Channel counts 1, 2, 3 and 4 map to grey, grey+alpha, RGB and RGBA.
pub fn image_to_png(image: &Image, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let [c, h, w] = image.shape();
    let color = match c {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        _ => return Err(PoaError::Format(format!("cannot store {c} channels in PNG"))),
    };
    if !(hi > lo) {
        return Err(PoaError::DomainError(format!("empty value range [{lo}, {hi}]")));
    }
    let mut raw = Vec::with_capacity(2 * c * h * w);
    for p in 0..h * w {
        for ch in 0..c {
            let v = (image.data()[ch * h * w + p] - lo) / (hi - lo);
            let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            raw.extend_from_slice(&q.to_be_bytes());
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| PoaError::Format(e.to_string()))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| PoaError::Format(e.to_string()))?;
    }
    Ok(out)
}

/// Inverse of [`image_to_png`]; 8-bit inputs are widened.
pub fn png_to_image(bytes: &[u8], lo: f64, hi: f64) -> Result<Image> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| PoaError::Format(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| PoaError::Format(e.to_string()))?;
    let c = info.color_type.samples();
    let (h, w) = (info.height as usize, info.width as usize);
    let (max, step) = match info.bit_depth {
        png::BitDepth::Sixteen => (65535.0, 2),
        png::BitDepth::Eight => (255.0, 1),
        other => return Err(PoaError::Format(format!("unsupported PNG depth {other:?}"))),
    };
    let mut data = vec![0.0; c * h * w];
    for p in 0..h * w {
        for ch in 0..c {
            let at = (p * c + ch) * step;
            let q = if step == 2 {
                u16::from_be_bytes([buf[at], buf[at + 1]]) as f64
            } else {
                buf[at] as f64
            };
            data[ch * h * w + p] = lo + (hi - lo) * q / max;
        }
    }
    Image::new([c, h, w], data)
}
