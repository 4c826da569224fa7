//! Labeled image datasets: PNG + `labels.csv` ingestion, bilinear
//! rescaling, stratified 50/25/25 splitting and a synthetic generator.
//!
//! On-disk layout: a directory holding `labels.csv` (header
//! `id,filename,label`, label 1 = cancer) and grayscale 8- or 16-bit PNGs.
//! Pixels load as `value / max_value`, so both depths map onto `[0, 1]`.

use std::collections::HashSet;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    /// 1 = cancer, 0 = cancer-free.
    pub label: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
}

impl LabeledDataset {
    /// Checks labels are 0/1, ids are unique and images share one `[1, H, W]` shape.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (row, s) in samples.iter().enumerate() {
            if s.label > 1 {
                return Err(Error::Load(format!(
                    "sample {row} ({}): label {} is not 0 or 1",
                    s.id, s.label
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Load(format!("sample {row}: duplicate id {}", s.id)));
            }
            if s.image.dims().len() != 3 || s.image.dims()[0] != 1 {
                return Err(Error::Load(format!(
                    "sample {row} ({}): image must be [1, H, W], got {}",
                    s.id,
                    s.image.shape()
                )));
            }
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.image.dims() != first.image.dims()) {
                return Err(Error::Load(format!(
                    "sample {}: image shape {} differs from {}",
                    bad.id,
                    bad.image.shape(),
                    first.image.shape()
                )));
            }
        }
        Ok(LabeledDataset { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(cancer_free, cancer)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let cancer = self.samples.iter().filter(|s| s.label == 1).count();
        (self.samples.len() - cancer, cancer)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `(H, W)` of the images, if any.
    pub fn image_hw(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.dims()[1], s.image.dims()[2]))
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Stacks the selected images into `[n, 1, H, W]` with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        let images: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&images)?, labels))
    }

    pub fn rescaled(&self, target: (usize, usize)) -> Result<LabeledDataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    image: rescale(&s.image, target)?,
                    label: s.label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(LabeledDataset { samples })
    }
}

/// Decodes a grayscale PNG into `[1, H, W]` scaled to `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Load(format!("invalid PNG: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(Error::Load(format!(
            "PNG must be grayscale, found {color:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Load("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Load(format!("corrupt PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f32> = match depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| v as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..2 * w * h]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => {
            return Err(Error::Load(format!("unsupported PNG bit depth {other:?}")));
        }
    };
    Tensor::from_vec(&[1, h, w], data)
}

/// Encodes `[1, H, W]` (values clamped to `[0, 1]`) as a 16-bit grayscale PNG.
pub fn encode_png16(image: &Tensor) -> Result<Vec<u8>> {
    let &[1, h, w] = image.dims() else {
        return Err(Error::shape(format!(
            "PNG export expects [1, H, W], got {}",
            image.shape()
        )));
    };
    let mut raw = Vec::with_capacity(2 * h * w);
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
        raw.extend_from_slice(&q.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Load(format!("PNG encode failed: {e}")))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| Error::Load(format!("PNG encode failed: {e}")))?;
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Reads `dir/labels.csv` and every image it lists, in CSV order.
pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let csv_path = dir.join(LABELS_FILE);
    let text = std::fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| Error::Load(format!("{}: {e}", csv_path.display())))?
        .clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["id", "filename", "label"] {
        return Err(Error::Load(format!(
            "{}: header must be id,filename,label, found {}",
            csv_path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record =
            record.map_err(|e| Error::Load(format!("{} row {row}: {e}", csv_path.display())))?;
        if record.len() != 3 {
            return Err(Error::Load(format!(
                "{} row {row}: expected 3 fields, found {}",
                csv_path.display(),
                record.len()
            )));
        }
        let (id, filename, label) = (record[0].trim(), record[1].trim(), record[2].trim());
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Load(format!(
                    "{} row {row}: label {other:?} is not 0 or 1",
                    csv_path.display()
                )))
            }
        };
        if !seen.insert(id.to_string()) {
            return Err(Error::Load(format!(
                "{} row {row}: duplicate id {id}",
                csv_path.display()
            )));
        }
        let path = dir.join(filename);
        let image = match std::fs::read(&path) {
            Ok(bytes) => decode_png(&bytes),
            Err(e) => Err(Error::Load(format!("missing or unreadable file {filename} ({e})"))),
        }
        .map_err(|e| Error::Load(format!("{} row {row}: {filename}: {e}", csv_path.display())))?;
        samples.push(Sample {
            id: id.to_string(),
            image,
            label,
        });
    }
    LabeledDataset::new(samples)
}

/// Writes `labels.csv` plus one 16-bit PNG per sample (`<id>.png`).
pub fn write_dataset(ds: &LabeledDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("id,filename,label\n");
    for s in ds.samples() {
        let filename = format!("{}.png", s.id);
        let png = encode_png16(&s.image)?;
        let path = dir.join(&filename);
        std::fs::write(&path, png).map_err(|e| Error::io(&path, e))?;
        csv.push_str(&format!("{},{},{}\n", s.id, filename, s.label));
    }
    let path = dir.join(LABELS_FILE);
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

/// Corner-aligned bilinear resampling of `[1, H, W]` to `target = (H', W')`.
///
/// Output pixel `(i, j)` samples source position
/// `(i·(H−1)/(H'−1), j·(W−1)/(W'−1))` (0 when the target extent is 1) and
/// blends the four neighbours with weights `(1−fy)(1−fx)`, `(1−fy)fx`,
/// `fy(1−fx)`, `fy·fx`, where `fy`, `fx` are the fractional parts.
pub fn rescale(image: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let &[1, h, w] = image.dims() else {
        return Err(Error::shape(format!(
            "rescale expects [1, H, W], got {}",
            image.shape()
        )));
    };
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::arg("rescale target must be positive"));
    }
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let coord = |o: usize, out_n: usize, in_n: usize| -> (usize, usize, f64) {
        if out_n == 1 || in_n == 1 {
            return (0, 0, 0.0);
        }
        let num = o * (in_n - 1);
        let lo = num / (out_n - 1);
        let frac = (num % (out_n - 1)) as f64 / (out_n - 1) as f64;
        (lo, (lo + 1).min(in_n - 1), frac)
    };
    let mut out = Vec::with_capacity(th * tw);
    for i in 0..th {
        let (y0, y1, fy) = coord(i, th, h);
        for j in 0..tw {
            let (x0, x1, fx) = coord(j, tw, w);
            let v = |y: usize, x: usize| src[y * w + x] as f64;
            let top = (1.0 - fx) * v(y0, x0) + fx * v(y0, x1);
            let bottom = (1.0 - fx) * v(y1, x0) + fx * v(y1, x1);
            out.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    Tensor::from_vec(&[1, th, tw], out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.5,
            val_frac: 0.25,
            test_frac: 0.25,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Config(format!("split fractions must be positive, got {fracs:?}")));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    /// Set when a split ends up without one of the classes.
    pub warnings: Vec<String>,
}

/// Seeded stratified train/validation/test partition.
///
/// Each class is shuffled on its own; sample `r` of a class with `n_c`
/// members gets the key `(r + ½)/n_c`. Merging all samples by key (label
/// breaks ties) interleaves the classes proportionally, and the merged order
/// is cut at `⌊train·N⌋` and `⌊(train+val)·N⌋`.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = ds.len();
    if n < 4 {
        return Err(Error::arg(format!("split needs at least 4 samples, got {n}")));
    }
    let mut rng = Rng::new(spec.seed);
    let mut keyed: Vec<(usize, usize, u8, usize)> = Vec::with_capacity(n);
    for label in [0u8, 1] {
        let mut members: Vec<usize> = (0..n).filter(|&i| ds.samples[i].label == label).collect();
        rng.shuffle(&mut members);
        let n_c = members.len();
        for (rank, idx) in members.into_iter().enumerate() {
            // key = (2·rank + 1) / (2·n_c), kept as an exact fraction
            keyed.push((2 * rank + 1, 2 * n_c, label, idx));
        }
    }
    keyed.sort_by(|a, b| {
        (a.0 as u128 * b.1 as u128)
            .cmp(&(b.0 as u128 * a.1 as u128))
            .then(a.2.cmp(&b.2))
    });
    let order: Vec<usize> = keyed.into_iter().map(|k| k.3).collect();
    let cut1 = (spec.train_frac * n as f64).floor() as usize;
    let cut2 = ((spec.train_frac + spec.val_frac) * n as f64).floor() as usize;
    let parts = [&order[..cut1], &order[cut1..cut2], &order[cut2..]];

    let mut warnings = Vec::new();
    for (name, part) in ["train", "val", "test"].iter().zip(parts) {
        let cancer = part.iter().filter(|&&i| ds.samples[i].label == 1).count();
        if cancer == 0 || cancer == part.len() {
            warnings.push(format!(
                "{name} split has {} cancer and {} cancer-free samples",
                cancer,
                part.len() - cancer
            ));
        }
    }
    Ok(Splits {
        train: ds.subset(parts[0]),
        val: ds.subset(parts[1]),
        test: ds.subset(parts[2]),
        warnings,
    })
}

pub const SYNTH_BACKGROUND_MEAN: f32 = 0.3;
pub const SYNTH_BACKGROUND_STD: f32 = 0.1;
pub const SYNTH_DISK_INTENSITY: f32 = 0.9;
pub const SYNTH_RADIUS_RANGE: (f64, f64) = (4.0, 10.0);

/// `n/2` cancer images (noise plus one bright disk) and `n/2` noise-only images.
///
/// Background pixels are `N(0.3, 0.1²)` clamped to `[0, 1]`; disk pixels are
/// exactly 0.9. The radius is `U[4, 10]` capped so the disk fits, and the
/// center is uniform over positions keeping the disk inside the image.
/// Even indices are cancer, odd indices cancer-free.
pub fn generate_synthetic(n: usize, image_hw: (usize, usize), seed: u64) -> Result<LabeledDataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::arg(format!("synthetic sample count must be even and >= 2, got {n}")));
    }
    let (h, w) = image_hw;
    let min_side = h.min(w);
    if min_side < 9 {
        return Err(Error::arg(format!(
            "synthetic images need both sides >= 9 pixels, got {h}×{w}"
        )));
    }
    let mut rng = Rng::new(seed);
    let digits = n.to_string().len().max(5);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(i % 2 == 0);
        let mut px = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let v = SYNTH_BACKGROUND_MEAN + SYNTH_BACKGROUND_STD * rng.standard_normal();
            px.push(v.clamp(0.0, 1.0));
        }
        if label == 1 {
            let (lo, hi) = SYNTH_RADIUS_RANGE;
            let max_r = ((min_side - 1) / 2) as f64;
            let r = (lo + (hi - lo) * rng.uniform()).min(max_r);
            let reach = r.ceil() as usize;
            let cy = rng.range_inclusive(reach, h - 1 - reach) as f64;
            let cx = rng.range_inclusive(reach, w - 1 - reach) as f64;
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    if dy * dy + dx * dx <= r * r {
                        px[y * w + x] = SYNTH_DISK_INTENSITY;
                    }
                }
            }
        }
        samples.push(Sample {
            id: format!("synth_{i:0digits$}"),
            image: Tensor::from_vec(&[1, h, w], px)?,
            label,
        });
    }
    LabeledDataset::new(samples)
}
