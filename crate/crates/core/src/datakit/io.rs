//! On-disk datasets: `images/*.png`, `annotations.jsonl` and `charset.txt`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::det::{DetSample, TextInstance};
use super::rec::RecSample;
use super::{Charset, Image, Polygon};
use crate::error::{Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const CHARSET_FILE: &str = "charset.txt";
const IMAGE_DIR: &str = "images";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecAnnotation {
    pub image: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceAnnotation {
    pub polygon: Polygon,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetAnnotation {
    pub image: String,
    pub instances: Vec<InstanceAnnotation>,
}

/// One line of `annotations.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Annotation {
    Det(DetAnnotation),
    Rec(RecAnnotation),
}

pub fn write_annotations(path: &Path, rows: &[Annotation]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses every non-empty line; errors carry the 1-based line number.
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Annotation {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn image_name(i: usize) -> String {
    format!("{IMAGE_DIR}/{i:06}.png")
}

fn save_png(img: &Image, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .expect("pixel count matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Image::from_raw(w as usize, h as usize, img.into_raw())
}

fn prepare(dir: &Path, charset: &Charset) -> Result<()> {
    fs::create_dir_all(dir.join(IMAGE_DIR))?;
    fs::write(dir.join(CHARSET_FILE), charset.to_text())?;
    Ok(())
}

pub fn load_charset(dir: &Path) -> Result<Charset> {
    Charset::parse(&fs::read_to_string(dir.join(CHARSET_FILE))?)
}

pub fn save_rec_dataset(dir: &Path, charset: &Charset, samples: &[RecSample]) -> Result<()> {
    prepare(dir, charset)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = image_name(i);
        save_png(&s.image, &dir.join(&name))?;
        rows.push(Annotation::Rec(RecAnnotation {
            image: name,
            text: s.text.clone(),
        }));
    }
    write_annotations(&dir.join(ANNOTATIONS_FILE), &rows)
}

fn annotation_error(dir: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Annotation {
        path: dir.join(ANNOTATIONS_FILE),
        line,
        msg: msg.into(),
    }
}

pub fn load_rec_dataset(dir: &Path) -> Result<(Charset, Vec<RecSample>)> {
    let charset = load_charset(dir)?;
    let rows = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let Annotation::Rec(r) = row else {
            return Err(annotation_error(dir, i + 1, "expected a recognition annotation with `text`"));
        };
        let label = charset
            .encode(&r.text)
            .map_err(|e| annotation_error(dir, i + 1, e.to_string()))?;
        out.push(RecSample {
            image: load_png(&dir.join(PathBuf::from(&r.image)))?,
            label,
            text: r.text,
        });
    }
    Ok((charset, out))
}

pub fn save_det_dataset(dir: &Path, charset: &Charset, samples: &[DetSample]) -> Result<()> {
    prepare(dir, charset)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = image_name(i);
        save_png(&s.image, &dir.join(&name))?;
        rows.push(Annotation::Det(DetAnnotation {
            image: name,
            instances: s
                .instances
                .iter()
                .map(|t| InstanceAnnotation {
                    polygon: t.polygon.clone(),
                    text: t.text.clone(),
                })
                .collect(),
        }));
    }
    write_annotations(&dir.join(ANNOTATIONS_FILE), &rows)
}

/// Loads images and annotations and rebuilds patches and targets.
pub fn load_det_dataset(dir: &Path) -> Result<Vec<DetSample>> {
    let rows = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let Annotation::Det(d) = row else {
            return Err(annotation_error(dir, i + 1, "expected a detection annotation with `instances`"));
        };
        let image = load_png(&dir.join(PathBuf::from(&d.image)))?;
        let instances = d
            .instances
            .into_iter()
            .map(|a| TextInstance::from_image(&image, a.polygon, a.text))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| annotation_error(dir, i + 1, e.to_string()))?;
        out.push(DetSample::new(image, instances));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{gen_det_dataset, gen_rec_dataset, DetGenConfig, RecGenConfig};

    #[test]
    fn rec_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cs = Charset::digits();
        let samples = gen_rec_dataset(&cs, 12, &RecGenConfig::default(), 1).unwrap();
        save_rec_dataset(dir.path(), &cs, &samples).unwrap();
        let (cs2, loaded) = load_rec_dataset(dir.path()).unwrap();
        assert_eq!(cs2, cs);
        assert_eq!(loaded, samples);
    }

    #[test]
    fn det_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = gen_det_dataset(6, &DetGenConfig::default(), 2).unwrap();
        save_det_dataset(dir.path(), &Charset::digits(), &samples).unwrap();
        assert_eq!(load_det_dataset(dir.path()).unwrap(), samples);
        assert!(load_rec_dataset(dir.path()).is_err());
    }

    #[test]
    fn annotation_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let rows = vec![
            Annotation::Rec(RecAnnotation {
                image: "x.png".into(),
                text: "123".into(),
            }),
            Annotation::Det(DetAnnotation {
                image: "y.png".into(),
                instances: vec![InstanceAnnotation {
                    polygon: vec![[0.1, 0.2], [3.141592653589793, 1e-17], [7.0, 2.5]],
                    text: "9".into(),
                }],
            }),
        ];
        write_annotations(&path, &rows).unwrap();
        assert_eq!(read_annotations(&path).unwrap(), rows);
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(&path, "{\"image\":\"a.png\",\"text\":\"1\"}\n{\"image\": 3}\n").unwrap();
        match read_annotations(&path) {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
