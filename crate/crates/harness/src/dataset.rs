//! Dataset ingestion (CSV, idx) and synthetic dataset files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use analog_grad_core::data::{blobs, synthetic_images, Dataset, Split, SyntheticSpec};

use crate::config::{DatasetSource, Normalize};
use crate::error::{HarnessError, Result};
use crate::num::fmt17;

/// Standard luminance weights used when collapsing RGB to one channel.
pub const LUMINANCE: [f64; 3] = [0.299, 0.587, 0.114];

/// A loaded dataset plus notes for the experiment record.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub notes: Vec<(String, String)>,
}

pub fn load(source: &DatasetSource) -> Result<Loaded> {
    let mut notes = Vec::new();
    let dataset = match source {
        DatasetSource::Synthetic {
            classes,
            samples_per_class,
            size,
            pixel_noise,
            seed,
        } => synthetic_images(&SyntheticSpec {
            classes: *classes,
            samples_per_class: *samples_per_class,
            size: *size,
            pixel_noise: *pixel_noise,
            seed: *seed,
        })
        .map_err(|e| e.within("dataset"))?,
        DatasetSource::Blobs {
            dim,
            per_class,
            separation,
            seed,
        } => blobs(*dim, *per_class, *separation, *seed)?,
        DatasetSource::Csv {
            train,
            test,
            shape,
            classes,
            normalize,
            grayscale,
        } => {
            let d: usize = shape.iter().product();
            let mut ds = Dataset {
                sample_shape: shape.clone(),
                classes: *classes,
                train: read_csv(train, d, *normalize)?,
                test: read_csv(test, d, *normalize)?,
            };
            if *grayscale {
                to_grayscale(&mut ds)?;
                notes.push(("grayscale".into(), "luminance 0.299/0.587/0.114".into()));
            }
            ds
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
            grayscale,
        } => {
            let (shape, train) = read_idx_pair(train_images, train_labels)?;
            let (test_shape, test) = read_idx_pair(test_images, test_labels)?;
            if shape != test_shape {
                return Err(HarnessError::data(
                    test_images,
                    format!("sample shape {test_shape:?} differs from train {shape:?}"),
                ));
            }
            let classes = classes.unwrap_or_else(|| {
                train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1)
            });
            let mut ds = Dataset {
                sample_shape: shape,
                classes,
                train,
                test,
            };
            if *grayscale {
                to_grayscale(&mut ds)?;
                notes.push(("grayscale".into(), "luminance 0.299/0.587/0.114".into()));
            }
            ds
        }
    };
    dataset.validate().map_err(|e| HarnessError::Config(format!("dataset: {e}")))?;
    Ok(Loaded { dataset, notes })
}

/// Collapses `[3, h, w]` samples to `[1, h, w]` with [`LUMINANCE`].
pub fn to_grayscale(ds: &mut Dataset) -> Result<()> {
    let &[3, h, w] = ds.sample_shape.as_slice() else {
        return Err(HarnessError::Config(format!(
            "grayscale needs [3, h, w] samples, got {:?}",
            ds.sample_shape
        )));
    };
    let plane = h * w;
    for split in [&mut ds.train, &mut ds.test] {
        let mut out = Vec::with_capacity(split.len() * plane);
        for s in split.features.chunks(3 * plane) {
            for p in 0..plane {
                out.push(LUMINANCE[0] * s[p] + LUMINANCE[1] * s[plane + p] + LUMINANCE[2] * s[2 * plane + p]);
            }
        }
        split.features = out;
    }
    ds.sample_shape = vec![1, h, w];
    Ok(())
}

pub fn read_csv(path: &Path, features: usize, normalize: Normalize) -> Result<Split> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut split = Split::default();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = line + 1;
        if record.len() != features + 1 {
            return Err(HarnessError::data(
                path,
                format!("row {row} has {} fields, expected label + {features}", record.len()),
            ));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| HarnessError::data(path, format!("row {row}: label `{}` is not a class index", &record[0])))?;
        split.labels.push(label);
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| HarnessError::data(path, format!("row {row}, column {col}: `{field}` is not a number")))?;
            split.features.push(match normalize {
                Normalize::None => v,
                Normalize::Byte => v / 127.5 - 1.0,
            });
        }
    }
    Ok(split)
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => HarnessError::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        HarnessError::data(path, e.to_string())
    }
}

/// Writes one row per sample, label first, values at 17 significant digits.
pub fn write_csv(path: &Path, split: &Split) -> Result<()> {
    let file = File::create(path).map_err(HarnessError::io(path))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for i in 0..split.len() {
        line.clear();
        line.push_str(&split.labels[i].to_string());
        for &v in split.sample(i) {
            line.push(',');
            line.push_str(&fmt17(v));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(HarnessError::io(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

/// Generates the synthetic image set and writes `train.csv` and `test.csv`
/// into `dir`.
pub fn generate_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<Dataset> {
    let ds = synthetic_images(spec)?;
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    write_csv(&dir.join("train.csv"), &ds.train)?;
    write_csv(&dir.join("test.csv"), &ds.test)?;
    Ok(ds)
}

/// Parsed idx array: dimensions and raw element values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(HarnessError::io(path))?;
    parse_idx(&bytes).map_err(|m| HarnessError::data(path, m))
}

/// Decodes the idx container: two zero bytes, a type code, a rank byte,
/// big-endian `u32` extents, then big-endian elements.
pub fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxArray, String> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err("not an idx file (bad magic)".into());
    }
    let (code, rank) = (bytes[2], bytes[3] as usize);
    let width = match code {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        other => return Err(format!("unknown idx element type 0x{other:02x}")),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err("truncated idx header".into());
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != count * width {
        return Err(format!(
            "idx body has {} bytes, dims {dims:?} need {}",
            body.len(),
            count * width
        ));
    }
    let data = body
        .chunks(width)
        .map(|c| match code {
            0x08 => c[0] as f64,
            0x09 => c[0] as i8 as f64,
            0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
            0x0C => i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
            0x0D => f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
            _ => f64::from_be_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    Ok(IdxArray { dims, data })
}

/// Encodes unsigned bytes as an idx file (type 0x08).
pub fn encode_idx_u8(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Images `[n, h, w]` (or `[n, h, w, 3]`) of bytes become `[1, h, w]`
/// (or `[3, h, w]`) samples in `[-1, 1]`.
fn read_idx_pair(images: &Path, labels: &Path) -> Result<(Vec<usize>, Split)> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if lab.dims.len() != 1 || img.dims.first() != lab.dims.first() {
        return Err(HarnessError::data(
            labels,
            format!("label dims {:?} do not match image dims {:?}", lab.dims, img.dims),
        ));
    }
    let n = img.dims[0];
    let (shape, interleaved) = match img.dims.as_slice() {
        [_, h, w] => (vec![1, *h, *w], false),
        [_, h, w, 3] => (vec![3, *h, *w], true),
        other => {
            return Err(HarnessError::data(
                images,
                format!("expected [n, h, w] or [n, h, w, 3], got {other:?}"),
            ))
        }
    };
    let d: usize = shape.iter().product();
    let mut features = Vec::with_capacity(n * d);
    for s in img.data.chunks(d.max(1)) {
        if interleaved {
            let plane = d / 3;
            for c in 0..3 {
                features.extend((0..plane).map(|p| s[p * 3 + c] / 127.5 - 1.0));
            }
        } else {
            features.extend(s.iter().map(|v| v / 127.5 - 1.0));
        }
    }
    let labels_out = lab
        .data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HarnessError::data(labels, format!("label {v} is not a class index")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        shape,
        Split {
            features,
            labels: labels_out,
        },
    ))
}
