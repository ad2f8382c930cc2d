use crate::{Error, Result};

/// Single-channel image with row-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!("image must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Data(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Image2D {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`
    /// (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self::new(width, height, pixels)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height]).expect("valid zero image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn is_all_zero(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Bilinear resampling with pixel-centre alignment. Returns an exact copy
    /// when the size is unchanged.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image2D {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
                let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
                out.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
        Image2D::new(width, height, out).expect("interpolation stays in range")
    }

    pub fn flip_horizontal(&self) -> Image2D {
        let pixels = self
            .pixels
            .chunks_exact(self.width)
            .flat_map(|row| row.iter().rev().copied())
            .collect();
        Image2D::new(self.width, self.height, pixels).expect("same pixels")
    }

    /// Rotates about the image centre by `degrees` (counter-clockwise),
    /// bilinear sampling, zero outside the source.
    pub fn rotate(&self, degrees: f64) -> Image2D {
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let sample = |x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
                0.0
            } else {
                self.get(x as usize, y as usize)
            }
        };
        let mut out = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                // inverse map: rotate the output coordinate back by -angle
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let tx = sx - x0;
                let ty = sy - y0;
                let (x0, y0) = (x0 as isize, y0 as isize);
                let v = (sample(x0, y0) * (1.0 - tx) + sample(x0 + 1, y0) * tx) * (1.0 - ty)
                    + (sample(x0, y0 + 1) * (1.0 - tx) + sample(x0 + 1, y0 + 1) * tx) * ty;
                out.push(v.clamp(0.0, 1.0));
            }
        }
        Image2D::new(self.width, self.height, out).expect("clamped")
    }

    /// Adds `delta` to every pixel and clamps back into `[0, 1]`.
    pub fn shift_intensity(&self, delta: f64) -> Image2D {
        let pixels = self.pixels.iter().map(|p| (p + delta).clamp(0.0, 1.0)).collect();
        Image2D::new(self.width, self.height, pixels).expect("clamped")
    }
}
