use std::fs;
use std::io::Write;
use std::path::Path;

use super::DataError;

/// 8-bit RGB image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if data.len() != width * height * 3 {
            return Err(DataError::Image(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbImage { width, height, data: rgb.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn ppm_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decode a binary PPM (P6) with maxval up to 255.
pub fn read_ppm(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let bad = |m: &str| DataError::Image(format!("PPM: {m}"));
    let mut pos = 0;
    if ppm_token(bytes, &mut pos).as_deref() != Some("P6") {
        return Err(bad("missing P6 magic"));
    }
    let mut num = |what: &str| -> Result<usize, DataError> {
        ppm_token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if max == 0 || max > 255 {
        return Err(bad(&format!("unsupported maxval {max}")));
    }
    let start = pos + 1;
    let len = w * h * 3;
    if bytes.len() < start + len {
        return Err(bad("truncated pixel data"));
    }
    let mut data = bytes[start..start + len].to_vec();
    if max != 255 {
        for v in &mut data {
            *v = ((*v as f64) * 255.0 / max as f64).round().min(255.0) as u8;
        }
    }
    RgbImage::new(w, h, data)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&out).map_err(|e| DataError::io(path, e))
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), DataError> {
    ::image::save_buffer(
        path.as_ref(),
        &img.data,
        img.width as u32,
        img.height as u32,
        ::image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| DataError::Image(format!("{}: {e}", path.as_ref().display())))
}

/// Read a PPM (P6) or PNG image, sniffing the format from its first bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.starts_with(b"P6") {
        return read_ppm(&bytes).map_err(|e| DataError::Image(format!("{}: {e}", path.display())));
    }
    let img = ::image::load_from_memory(&bytes)
        .map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    RgbImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Pick the frame closest (L1) to the per-pixel, per-channel median image.
///
/// With an even number of frames the median is the mean of the two middle
/// values. Ties go to the lowest index.
pub fn select_representative_keyframe(frames: &[RgbImage]) -> Result<(usize, &RgbImage), DataError> {
    let first = frames.first().ok_or_else(|| DataError::Image("no keyframes".into()))?;
    if frames.iter().any(|f| f.width != first.width || f.height != first.height) {
        return Err(DataError::Dimension("keyframes differ in size".into()));
    }
    let n = frames.len();
    let mut column = vec![0u8; n];
    let mut dist = vec![0.0f64; n];
    for p in 0..first.data.len() {
        for (c, f) in column.iter_mut().zip(frames) {
            *c = f.data[p];
        }
        column.sort_unstable();
        let median = if n % 2 == 1 {
            column[n / 2] as f64
        } else {
            (column[n / 2 - 1] as f64 + column[n / 2] as f64) / 2.0
        };
        for (d, f) in dist.iter_mut().zip(frames) {
            *d += (f.data[p] as f64 - median).abs();
        }
    }
    let mut best = 0;
    for (i, &d) in dist.iter().enumerate() {
        if d < dist[best] {
            best = i;
        }
    }
    Ok((best, &frames[best]))
}

/// Box-filter weights mapping `n_in` samples onto `n_out`.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((i, overlap / ratio));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Scale the shorter side to `target` by area averaging, center-crop to
/// `target×target`, and map bytes to `[-1, 1]`.
///
/// Returns a channel-major `3×target×target` array.
pub fn preprocess_image(img: &RgbImage, target: usize) -> Result<Vec<f64>, DataError> {
    if img.width == 0 || img.height == 0 || target == 0 {
        return Err(DataError::Image("degenerate image or target size".into()));
    }
    let short = img.width.min(img.height);
    let scale = target as f64 / short as f64;
    let (nw, nh) = if img.width <= img.height {
        (target, ((img.height as f64 * scale).round() as usize).max(target))
    } else {
        (((img.width as f64 * scale).round() as usize).max(target), target)
    };
    let (x0, y0) = ((nw - target) / 2, (nh - target) / 2);
    let mut out = vec![0.0; 3 * target * target];
    if nw == img.width && nh == img.height {
        for y in 0..target {
            for x in 0..target {
                let px = img.pixel(x + x0, y + y0);
                for c in 0..3 {
                    out[(c * target + y) * target + x] = px[c] as f64;
                }
            }
        }
    } else {
        let wx = area_weights(img.width, nw);
        let wy = area_weights(img.height, nh);
        // Horizontal pass over the cropped columns only.
        let mut rows = vec![0.0; img.height * target * 3];
        for y in 0..img.height {
            for x in 0..target {
                for &(sx, w) in &wx[x + x0] {
                    let px = img.pixel(sx, y);
                    for c in 0..3 {
                        rows[(y * target + x) * 3 + c] += w * px[c] as f64;
                    }
                }
            }
        }
        for y in 0..target {
            for &(sy, w) in &wy[y + y0] {
                for x in 0..target {
                    for c in 0..3 {
                        out[(c * target + y) * target + x] += w * rows[(sy * target + x) * 3 + c];
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v = (*v / 127.5 - 1.0).clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Quantize a channel-major `3×size×size` array in `[-1, 1]` to bytes via
/// `round((v + 1)·127.5)`, clamped to `[0, 255]`.
pub fn to_rgb(values: &[f64], size: usize) -> Result<RgbImage, DataError> {
    if values.len() != 3 * size * size {
        return Err(DataError::Dimension(format!("{} values do not form a 3x{size}x{size} image", values.len())));
    }
    let mut data = vec![0u8; values.len()];
    for c in 0..3 {
        for p in 0..size * size {
            let v = values[c * size * size + p];
            data[p * 3 + c] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        }
    }
    RgbImage::new(size, size, data)
}
