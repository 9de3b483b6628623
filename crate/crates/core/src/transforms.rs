//! Pixel-space distortions, alignment warps and the worst-case ℓp
//! perturbation of a latent.

use serde::{Deserialize, Serialize};

use crate::error::{PoaError, Result};
use crate::generator::{Image, Latent};
use crate::prf_seed::{self, Seed32};

pub fn add_gaussian_noise(image: &Image, sigma2: f64, noise_seed: &Seed32) -> Result<Image> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(PoaError::DomainError(format!("noise variance {sigma2} must be >= 0")));
    }
    let mut out = image.clone();
    if sigma2 == 0.0 {
        return Ok(out);
    }
    let mut z = vec![0.0; image.len()];
    prf_seed::fill_gaussian(noise_seed, 0, &mut z);
    let sigma = sigma2.sqrt();
    out.data_mut().iter_mut().zip(&z).for_each(|(v, n)| *v += sigma * n);
    Ok(out)
}

/// Mid-rise quantizer with `levels` equal bins over the fixed range
/// `[lo, hi]`; values outside the range land in the end bins. Outputs are
/// bin centres, so the map is idempotent.
pub fn quantize(image: &Image, levels: u32, lo: f64, hi: f64) -> Result<Image> {
    if levels < 2 {
        return Err(PoaError::DomainError(format!("need at least 2 levels, got {levels}")));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(PoaError::DomainError(format!("empty quantizer range [{lo}, {hi}]")));
    }
    let step = (hi - lo) / levels as f64;
    let top = (levels - 1) as f64;
    let mut out = image.clone();
    for v in out.data_mut() {
        let k = ((*v - lo) / step).floor().clamp(0.0, top);
        *v = lo + (k + 0.5) * step;
    }
    Ok(out)
}

/// Affine map about the image centre: `p' = c + M (p - c) + t` with
/// `M = scale · R(rot) · [[1, tan(shear)], [0, 1]]` and `t = (tx·W, ty·H)`.
/// With `inverse` set the params denote the inverse of that map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub rot_deg: f64,
    pub shear_deg: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inverse: bool,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
        rot_deg: 0.0,
        shear_deg: 0.0,
        inverse: false,
    };

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.tx == 0.0 && self.ty == 0.0 && self.rot_deg == 0.0 && self.shear_deg == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.scale, self.tx, self.ty, self.rot_deg, self.shear_deg]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.scale == 0.0 || self.shear_deg.abs() >= 90.0 {
            return Err(PoaError::SingularTransform);
        }
        Ok(())
    }

    /// Forward linear part `M` as `[[a, b], [c, d]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rot_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let m = self.scale;
        [[m * c, m * (c * k - s)], [m * s, m * (s * k + c)]]
    }
}

pub fn invert_affine(params: &AffineParams) -> Result<AffineParams> {
    params.validate()?;
    Ok(AffineParams {
        inverse: !params.inverse,
        ..*params
    })
}

/// Warps every channel with bilinear sampling; samples outside the frame
/// clamp to the nearest edge pixel.
pub fn affine_warp(image: &Image, params: &AffineParams) -> Result<Image> {
    params.validate()?;
    if params.is_identity() {
        return Ok(image.clone());
    }
    let [channels, h, w] = image.shape();
    let [[a, b], [c, d]] = params.matrix();
    let det = a * d - b * c;
    if det == 0.0 || !det.is_finite() {
        return Err(PoaError::SingularTransform);
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (tx, ty) = (params.tx * w as f64, params.ty * h as f64);
    // Output pixel q reads the source at c + A (q - c) + o.
    let (mat, off) = if params.inverse {
        ([[a, b], [c, d]], [tx, ty])
    } else {
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let off = [-(inv[0][0] * tx + inv[0][1] * ty), -(inv[1][0] * tx + inv[1][1] * ty)];
        (inv, off)
    };
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + mat[0][0] * dx + mat[0][1] * dy + off[0];
            let sy = cy + mat[1][0] * dx + mat[1][1] * dy + off[1];
            for ch in 0..channels {
                let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
                out[ch * h * w + y * w + x] = bilinear(plane, h, w, sx, sy);
            }
        }
    }
    Image::new(image.shape(), out)
}

fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn sample_affine(seed: &Seed32) -> AffineParams {
    let mut u = [0.0; 5];
    prf_seed::fill_uniform(seed, 0, &mut u);
    let span = |u: f64, lo: f64, hi: f64| lo + (hi - lo) * u;
    AffineParams {
        scale: span(u[0], 0.98, 1.02),
        tx: span(u[1], -0.02, 0.02),
        ty: span(u[2], -0.02, 0.02),
        rot_deg: span(u[3], -3.0, 3.0),
        shear_deg: span(u[4], -2.0, 2.0),
        inverse: false,
    }
}

/// `‖x‖_p`, with `p = f64::INFINITY` for the max norm.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    let m = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if p.is_infinite() || m == 0.0 {
        return m;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Hölder conjugate of `p`.
pub fn dual_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// The `v` with `‖v‖_p = eps` minimizing `L · v`, which attains
/// `L · v = -eps ‖L‖_q`.
pub fn worst_case_perturbation(latent: &Latent, eps: f64, p: f64) -> Result<Latent> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(PoaError::DomainError(format!("eps {eps} must be >= 0")));
    }
    if !(p >= 1.0) {
        return Err(PoaError::DomainError(format!("p {p} must be >= 1")));
    }
    let l = latent.data();
    let max = l.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 {
        return Err(PoaError::ZeroLatent);
    }
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    let v: Vec<f64> = if p == 1.0 {
        let at = l.iter().position(|v| v.abs() == max).unwrap();
        let mut v = vec![0.0; l.len()];
        v[at] = -eps * sign(l[at]);
        v
    } else if p.is_infinite() {
        l.iter().map(|&x| -eps * sign(x)).collect()
    } else {
        let q = dual_exponent(p);
        let a: Vec<f64> = l.iter().map(|x| (x.abs() / max).powf(q - 1.0)).collect();
        // ‖a^{q-1}‖_p with a normalized, so ‖v‖_p = eps.
        let norm = lp_norm(&a, p);
        l.iter().zip(&a).map(|(&x, ai)| -eps * sign(x) * ai / norm).collect()
    };
    Latent::new(latent.shape(), v)
}
