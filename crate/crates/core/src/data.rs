//! Datasets: IDX file ingestion (MNIST container format), Gaussian blob
//! toy data, and a deterministic synthetic digit set written through the
//! same IDX path.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[n, features]`, values in [0,1].
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Per-sample shape before flattening (e.g. `[28, 28]`).
    pub sample_shape: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Contiguous slice [start, end) as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        if end > self.len() || start > end {
            return Err(Error::InvalidArg(format!(
                "slice {}..{} of {} samples",
                start,
                end,
                self.len()
            )));
        }
        let d: usize = self.sample_shape.iter().product();
        Ok(Dataset {
            images: Tensor::from_vec(
                &[end - start, d],
                self.images.data()[start * d..end * d].to_vec(),
            )?,
            labels: self.labels[start..end].to_vec(),
            sample_shape: self.sample_shape.clone(),
            classes: self.classes,
        })
    }

    /// Batch `[b, features]` plus labels at the given indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d: usize = self.sample_shape.iter().product();
        let mut x = Tensor::zeros(&[idx.len(), d]);
        let mut y = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::InvalidArg(format!("sample index {} out of range", i)));
            }
            x.data_mut()[row * d..(row + 1) * d]
                .copy_from_slice(&self.images.data()[i * d..(i + 1) * d]);
            y.push(self.labels[i]);
        }
        Ok((x, y))
    }
}

/// Read an IDX image file: big-endian magic 0x00000803, then count, rows,
/// cols as 32-bit big-endian, then unsigned bytes. Byte 255 maps to 1.0.
pub fn load_idx_images<P: AsRef<Path>>(path: P) -> Result<(Tensor, Vec<usize>)> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {:#010x}, expected {:#010x}",
            magic, IDX_IMAGES_MAGIC
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    let mut bytes = vec![0u8; n * rows * cols];
    r.read_exact(&mut bytes).map_err(|e| {
        Error::Format(format!("image payload truncated: {}", e))
    })?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after image payload".into()));
    }
    let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((
        Tensor::from_vec(&[n, rows * cols], data)?,
        vec![rows, cols],
    ))
}

/// Read an IDX label file: magic 0x00000801, count, unsigned byte labels.
pub fn load_idx_labels<P: AsRef<Path>>(path: P) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {:#010x}, expected {:#010x}",
            magic, IDX_LABELS_MAGIC
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("label payload truncated: {}", e)))?;
    Ok(bytes.iter().map(|&b| b as usize).collect())
}

/// Load an image/label IDX pair into a dataset.
pub fn load_mnist_idx<P: AsRef<Path>, Q: AsRef<Path>>(
    images_path: P,
    labels_path: Q,
) -> Result<Dataset> {
    let (images, sample_shape) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != images.shape()[0] {
        return Err(Error::Format(format!(
            "{} labels for {} images",
            labels.len(),
            images.shape()[0]
        )));
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        images,
        labels,
        sample_shape,
        classes,
    })
}

/// Write images in IDX format; values are quantized to bytes by round(v*255).
pub fn write_idx_images<P: AsRef<Path>>(path: P, images: &Tensor, rows: usize, cols: usize) -> Result<()> {
    let n = images.shape()[0];
    let d: usize = images.shape()[1..].iter().product();
    if d != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "{} features vs {}x{}",
            d, rows, cols
        )));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    w.write_u32::<BigEndian>(n as u32)?;
    w.write_u32::<BigEndian>(rows as u32)?;
    w.write_u32::<BigEndian>(cols as u32)?;
    for &v in images.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArg("pixel outside [0,1]".into()));
        }
        w.write_all(&[(v * 255.0).round() as u8])?;
    }
    Ok(())
}

pub fn write_idx_labels<P: AsRef<Path>>(path: P, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    for &l in labels {
        if l > 255 {
            return Err(Error::InvalidArg(format!("label {} does not fit a byte", l)));
        }
        w.write_all(&[l as u8])?;
    }
    Ok(())
}

/// Gaussian clusters with class-balanced labels; cluster centers spaced by
/// `sep` along coordinate axes.
pub fn synth_blobs(
    rng: &mut Rng,
    n: usize,
    classes: usize,
    dim: usize,
    sep: f64,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 || n == 0 {
        return Err(Error::InvalidArg("blobs need n, classes, dim >= 1".into()));
    }
    let mut centers = vec![vec![0.0; dim]; classes];
    for (c, center) in centers.iter_mut().enumerate() {
        center[c % dim] = sep * ((c / dim + 1) as f64) * if c % 2 == 0 { 1.0 } else { -1.0 };
    }
    let mut images = Tensor::zeros(&[n, dim]);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            images.data_mut()[i * dim + j] = centers[c][j] + rng.next_gaussian();
        }
        labels.push(c);
    }
    Ok(Dataset {
        images,
        labels,
        sample_shape: vec![dim],
        classes,
    })
}

/// Deterministic synthetic digit-style dataset: each class is a fixed
/// mixture of Gaussian bumps on a 28x28 canvas; samples add translation
/// jitter, amplitude scaling, and pixel noise.
pub fn synth_digits(rng: &mut Rng, n: usize, noise: f64) -> Result<Dataset> {
    const SIDE: usize = 28;
    const CLASSES: usize = 10;
    if n == 0 {
        return Err(Error::InvalidArg("need n >= 1 samples".into()));
    }
    // class templates from a fixed substream so train/test splits agree
    let mut templates = Vec::with_capacity(CLASSES);
    for c in 0..CLASSES {
        let mut trng = Rng::new(0xD161).fork(c as u64);
        let bumps: Vec<(f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    trng.uniform(6.0, 22.0),
                    trng.uniform(6.0, 22.0),
                    trng.uniform(1.5, 3.0),
                )
            })
            .collect();
        let mut tpl = vec![0.0f64; SIDE * SIDE];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let mut v: f64 = 0.0;
                for &(cy, cx, s) in &bumps {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    v += (-d2 / (2.0 * s * s)).exp();
                }
                tpl[y * SIDE + x] = v;
            }
        }
        let max = tpl.iter().cloned().fold(0.0f64, f64::max);
        for v in tpl.iter_mut() {
            *v /= max;
        }
        templates.push(tpl);
    }

    let mut images = Tensor::zeros(&[n, SIDE * SIDE]);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % CLASSES;
        let mut srng = rng.fork(i as u64);
        let dy = srng.uniform(-3.0, 3.0).round() as isize;
        let dx = srng.uniform(-3.0, 3.0).round() as isize;
        let amp = srng.uniform(0.6, 1.0);
        for y in 0..SIDE as isize {
            for x in 0..SIDE as isize {
                let (sy, sx) = (y - dy, x - dx);
                let base = if sy >= 0 && sy < SIDE as isize && sx >= 0 && sx < SIDE as isize {
                    templates[c][(sy * SIDE as isize + sx) as usize]
                } else {
                    0.0
                };
                let v = amp * base + noise * srng.next_gaussian();
                images.data_mut()[i * SIDE * SIDE + (y * SIDE as isize + x) as usize] =
                    v.clamp(0.0, 1.0);
            }
        }
        labels.push(c);
    }
    Ok(Dataset {
        images,
        labels,
        sample_shape: vec![SIDE, SIDE],
        classes: CLASSES,
    })
}
