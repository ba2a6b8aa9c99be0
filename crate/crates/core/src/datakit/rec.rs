use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::font::{glyph, GLYPH_H, GLYPH_PITCH, GLYPH_W};
use super::{Charset, Image};
use crate::error::{Error, Result};
use crate::losses::SeqLabel;

#[derive(Clone, Debug, PartialEq)]
pub struct RecGenConfig {
    pub height: usize,
    pub width: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Gaussian noise standard deviation as a fraction of full scale.
    pub noise_level: f64,
}

impl Default for RecGenConfig {
    fn default() -> Self {
        RecGenConfig {
            height: 8,
            width: 32,
            min_len: 3,
            max_len: 5,
            noise_level: 0.05,
        }
    }
}

impl RecGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid(format!("bad length range {}..={}", self.min_len, self.max_len)));
        }
        if self.max_len * GLYPH_PITCH - 1 > self.width || self.height < GLYPH_H {
            return Err(Error::invalid(format!(
                "{} glyphs do not fit a {}x{} image",
                self.max_len, self.height, self.width
            )));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::invalid("noise level must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecSample {
    pub image: Image,
    pub label: SeqLabel,
    pub text: String,
}

/// Draws `text` in the bitmap font with its top-left glyph corner at
/// `(x0, y0)`.
/// Renders `text` with every font pixel drawn as a `scale`×`scale` square.
pub(crate) fn draw_text(img: &mut Image, text: &str, x0: usize, y0: usize, scale: usize, fg: u8) {
    for (i, c) in text.chars().enumerate() {
        let Some(bits) = glyph(c) else { continue };
        for y in 0..GLYPH_H * scale {
            for x in 0..GLYPH_W * scale {
                let (px, py) = (x0 + (i * GLYPH_PITCH) * scale + x, y0 + y);
                if bits[(y / scale) * GLYPH_W + x / scale] && px < img.width() && py < img.height() {
                    img.set(px, py, fg);
                }
            }
        }
    }
}

pub(crate) fn add_noise(img: &mut Image, rng: &mut ChaCha8Rng, level: f64) {
    if level <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, level * 255.0).expect("finite sigma");
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y) as f64 + normal.sample(rng);
            img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
}

/// Renders `count` random strings, one per image, on a flat background with
/// a random horizontal and vertical offset.
pub fn gen_rec_dataset(charset: &Charset, count: usize, config: &RecGenConfig, seed: u64) -> Result<Vec<RecSample>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = charset.symbols();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.gen_range(config.min_len..=config.max_len);
        let text: String = (0..len).map(|_| symbols[rng.gen_range(0..symbols.len())]).collect();
        let text_w = len * GLYPH_PITCH - 1;
        let x0 = rng.gen_range(0..=config.width - text_w);
        let y0 = rng.gen_range(0..=config.height - GLYPH_H);
        let bg = rng.gen_range(0..=90u8);
        let fg = rng.gen_range(160..=255u8);
        let mut image = Image::new(config.width, config.height, bg);
        draw_text(&mut image, &text, x0, y0, 1, fg);
        add_noise(&mut image, &mut rng, config.noise_level);
        out.push(RecSample {
            image,
            label: charset.encode(&text)?,
            text,
        });
    }
    Ok(out)
}
