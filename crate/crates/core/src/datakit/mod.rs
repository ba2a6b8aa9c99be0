//! Synthetic recognition and detection data, DB targets and copy-paste
//! augmentation.

mod copypaste;
mod det;
mod font;
mod geometry;
mod io;
mod rec;

pub use copypaste::{copy_paste, CopyPasteConfig, PasteStats};
pub use det::{gen_det_dataset, make_db_targets, DbTargets, DetGenConfig, DetSample, TextInstance, SHRINK_RATIO};
pub use font::{glyph, GLYPH_H, GLYPH_PITCH, GLYPH_W};
pub use geometry::{aabb, point_in_polygon, polygon_area, polygons_overlap, Polygon};
pub use io::{
    load_charset, load_det_dataset, load_rec_dataset, read_annotations, save_det_dataset, save_rec_dataset,
    write_annotations, Annotation, DetAnnotation, InstanceAnnotation, RecAnnotation, ANNOTATIONS_FILE, CHARSET_FILE,
};
pub use rec::{gen_rec_dataset, RecGenConfig, RecSample};

use crate::error::{Error, Result};
use crate::losses::SeqLabel;
use crate::tensor::{Element, Tensor};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Image {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Copies the `w×h` window at `(x0, y0)`; the window must lie inside.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            out.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Image::from_raw(w, h, out)
    }

    /// Pixel values mapped to `[-1, 1]`, shaped `[1, 1, H, W]`.
    pub fn to_tensor<F: Element>(&self) -> Tensor<F> {
        Tensor::from_fn(vec![1, 1, self.height, self.width], |i| pixel_value(self.pixels[i]))
    }
}

fn pixel_value<F: Element>(p: u8) -> F {
    F::from_f64_lossy(p as f64 / 127.5 - 1.0)
}

/// Stacks equally sized images into `[N, 1, H, W]` in `[-1, 1]`.
pub fn images_to_tensor<F: Element>(images: &[&Image]) -> Result<Tensor<F>> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::shape("image batch", &[h, w], &[img.height, img.width]));
        }
        data.extend(img.pixels.iter().map(|&p| pixel_value::<F>(p)));
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Symbol alphabet. Symbol `i` (0-based) is class `i + 1`; class 0 is the
/// CTC blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Charset {
    symbols: Vec<char>,
}

impl Charset {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(Error::invalid("empty charset"));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::invalid(format!("duplicate symbol {c:?} in charset")));
            }
            if glyph(*c).is_none() {
                return Err(Error::UnknownSymbol(*c));
            }
        }
        Ok(Charset { symbols })
    }

    pub fn digits() -> Self {
        Charset::new('0'..='9').expect("digits are renderable")
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// Symbols plus the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn class_of(&self, c: char) -> Result<usize> {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .map(|i| i + 1)
            .ok_or(Error::UnknownSymbol(c))
    }

    pub fn encode(&self, text: &str) -> Result<SeqLabel> {
        SeqLabel::new(text.chars().map(|c| self.class_of(c)).collect::<Result<_>>()?)
    }

    /// Class indices to text; blanks and out-of-range indices are dropped.
    pub fn decode(&self, classes: &[usize]) -> String {
        classes
            .iter()
            .filter_map(|&k| k.checked_sub(1).and_then(|i| self.symbols.get(i)))
            .collect()
    }

    /// One symbol per line.
    pub fn to_text(&self) -> String {
        self.symbols.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => symbols.push(c),
                _ => {
                    return Err(Error::Config {
                        line: i + 1,
                        msg: format!("expected exactly one symbol, got {line:?}"),
                    })
                }
            }
        }
        Charset::new(symbols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charset_round_trip() {
        let cs = Charset::new("0123456789AB".chars()).unwrap();
        assert_eq!(cs.num_classes(), 13);
        let l = cs.encode("A01B").unwrap();
        assert_eq!(l.symbols(), &[11, 1, 2, 12]);
        assert_eq!(cs.decode(l.symbols()), "A01B");
        assert_eq!(Charset::parse(&cs.to_text()).unwrap(), cs);
        assert!(matches!(cs.encode("Z"), Err(Error::UnknownSymbol('Z'))));
        assert!(Charset::new("".chars()).is_err());
        assert!(Charset::new("00".chars()).is_err());
        assert!(matches!(Charset::parse("1\n23\n"), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn crop_and_tensor() {
        let img = Image::from_raw(3, 2, vec![0, 51, 255, 10, 20, 30]).unwrap();
        assert_eq!(img.crop(1, 0, 2, 2).unwrap().pixels(), &[51, 255, 20, 30]);
        assert!(img.crop(2, 0, 2, 1).is_err());
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), &[1, 1, 2, 3]);
        assert_eq!((t.data()[0], t.data()[2]), (-1.0, 1.0));
        assert!(Image::from_raw(2, 2, vec![0; 3]).is_err());
    }
}
