//! On-disk dataset layout:
//!
//! ```text
//! <root>/metadata.json        datasetId, city, sensor, dispSign
//! <root>/left/<id>.tif|png
//! <root>/right/<id>.tif|png
//! <root>/disp/<id>.tif        optional, f32, left-referenced, NaN = invalid
//! <root>/disp_right/<id>.tif  optional, right-referenced counterpart
//! <root>/occ/<id>.tif         optional, nonzero = occluded
//! <root>/stats.json           optional normalization statistics
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use super::{DomainDescriptor, NormalizationStats, StereoSample};
use crate::error::{Result, StereoError};
use crate::field::{DisparityField, ImagePlane, Mask};

pub const METADATA_FILE: &str = "metadata.json";
pub const STATS_FILE: &str = "stats.json";
const EXTENSIONS: [&str; 3] = ["tif", "tiff", "png"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetMetadata {
    pub dataset_id: String,
    pub city: String,
    pub sensor: String,
    /// `+1` if stored disparities follow `left(x) = right(x - d)`, `-1` if negated.
    pub disp_sign: i8,
}

impl DatasetMetadata {
    pub fn from_domain(domain: &DomainDescriptor) -> Self {
        DatasetMetadata { dataset_id: domain.dataset_id.clone(), city: domain.city.clone(), sensor: domain.sensor.clone(), disp_sign: 1 }
    }

    pub fn domain(&self) -> DomainDescriptor {
        DomainDescriptor::new(&self.dataset_id, &self.city, &self.sensor)
    }
}

fn load_err(path: &Path, detail: impl ToString) -> StereoError {
    StereoError::Load { path: path.to_path_buf(), detail: detail.to_string() }
}

/// Lazily indexed dataset; rasters are read on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    metadata: DatasetMetadata,
    ids: Vec<String>,
    left: Vec<PathBuf>,
    right: Vec<PathBuf>,
    disp: Option<Vec<PathBuf>>,
    disp_right: Option<Vec<PathBuf>>,
    occ: Option<Vec<PathBuf>>,
    stats: Option<NormalizationStats>,
}

fn find_raster(dir: &Path, id: &str) -> Option<PathBuf> {
    EXTENSIONS.iter().map(|e| dir.join(format!("{id}.{e}"))).find(|p| p.is_file())
}

fn optional_dir(root: &Path, name: &str, ids: &[String]) -> Result<Option<Vec<PathBuf>>> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Ok(None);
    }
    ids.iter()
        .map(|id| find_raster(&dir, id).ok_or_else(|| load_err(&dir, format!("no raster for sample `{id}`"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn read_stats(root: &Path) -> Result<Option<NormalizationStats>> {
    let path = root.join(STATS_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| load_err(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| load_err(&path, e))
}

pub fn write_stats(root: &Path, stats: &NormalizationStats) -> Result<()> {
    fs::write(root.join(STATS_FILE), serde_json::to_string_pretty(stats)?)?;
    Ok(())
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let meta_path = root.join(METADATA_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| load_err(&meta_path, e))?;
    let metadata: DatasetMetadata = serde_json::from_str(&text).map_err(|e| load_err(&meta_path, e))?;
    if metadata.disp_sign != 1 && metadata.disp_sign != -1 {
        return Err(load_err(&meta_path, format!("dispSign must be 1 or -1, got {}", metadata.disp_sign)));
    }
    let left_dir = root.join("left");
    let right_dir = root.join("right");
    let mut ids: Vec<String> = fs::read_dir(&left_dir)
        .map_err(|e| load_err(&left_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str())))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(String::from))
        .collect();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(load_err(&left_dir, "no images"));
    }
    let left = ids.iter().map(|id| find_raster(&left_dir, id).expect("indexed above")).collect();
    let right = ids
        .iter()
        .map(|id| find_raster(&right_dir, id).ok_or_else(|| load_err(&right_dir, format!("no right image for `{id}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: root.to_path_buf(),
        disp: optional_dir(root, "disp", &ids)?,
        disp_right: optional_dir(root, "disp_right", &ids)?,
        occ: optional_dir(root, "occ", &ids)?,
        stats: read_stats(root)?,
        metadata,
        ids,
        left,
        right,
    })
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn metadata(&self) -> &DatasetMetadata {
        &self.metadata
    }

    pub fn domain(&self) -> DomainDescriptor {
        self.metadata.domain()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn has_ground_truth(&self) -> bool {
        self.disp.is_some()
    }

    pub fn stats(&self) -> Option<&NormalizationStats> {
        self.stats.as_ref()
    }

    /// Persisted statistics, or an error naming the dataset.
    pub fn require_stats(&self) -> Result<&NormalizationStats> {
        self.stats.as_ref().ok_or_else(|| StereoError::MissingStats(self.metadata.dataset_id.clone()))
    }

    pub fn set_stats(&mut self, stats: NormalizationStats) -> Result<()> {
        write_stats(&self.root, &stats)?;
        self.stats = Some(stats);
        Ok(())
    }

    pub fn load(&self, index: usize) -> Result<StereoSample> {
        let left = read_image(&self.left[index])?;
        let right = read_image(&self.right[index])?;
        let (h, w) = (left.height(), left.width());
        if (right.channels(), right.height(), right.width()) != (left.channels(), h, w) {
            return Err(load_err(&self.right[index], format!("shape differs from left image {}x{}x{}", left.channels(), h, w)));
        }
        let sign = self.metadata.disp_sign as f32;
        let read_disp = |paths: &Option<Vec<PathBuf>>| -> Result<Option<DisparityField>> {
            paths
                .as_ref()
                .map(|p| {
                    let d = read_disparity(&p[index])?;
                    if (d.height(), d.width()) != (h, w) {
                        return Err(load_err(&p[index], format!("disparity is {}x{}, images are {h}x{w}", d.height(), d.width())));
                    }
                    Ok(d.map(|v| v * sign))
                })
                .transpose()
        };
        let gt = read_disp(&self.disp)?;
        let gt_right = read_disp(&self.disp_right)?;
        let occlusion = self
            .occ
            .as_ref()
            .map(|p| {
                let m = read_mask(&p[index])?;
                if (m.height(), m.width()) != (h, w) {
                    return Err(load_err(&p[index], "occlusion mask size differs from images"));
                }
                Ok(m)
            })
            .transpose()?;
        let valid_mask = gt.as_ref().map(|d| d.valid_mask()).unwrap_or_else(|| Mask::filled(h, w, true));
        Ok(StereoSample {
            id: self.ids[index].clone(),
            left,
            right,
            gt_disparity: gt,
            gt_right_disparity: gt_right,
            valid_mask,
            occlusion,
            domain: self.domain(),
        })
    }

    pub fn load_all(&self) -> Result<Vec<StereoSample>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

/// Write samples in the dataset layout. Invalid pixels are stored as NaN.
pub fn write_dataset(root: impl AsRef<Path>, metadata: &DatasetMetadata, samples: &[StereoSample], stats: Option<&NormalizationStats>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root.join("left"))?;
    fs::create_dir_all(root.join("right"))?;
    fs::write(root.join(METADATA_FILE), serde_json::to_string_pretty(metadata)?)?;
    let sign = metadata.disp_sign as f32;
    let with_gt = samples.iter().all(|s| s.gt_disparity.is_some());
    let with_gt_right = samples.iter().all(|s| s.gt_right_disparity.is_some());
    let with_occ = samples.iter().all(|s| s.occlusion.is_some());
    for s in samples {
        write_image(&root.join("left").join(format!("{}.tif", s.id)), &s.left)?;
        write_image(&root.join("right").join(format!("{}.tif", s.id)), &s.right)?;
        if with_gt {
            fs::create_dir_all(root.join("disp"))?;
            let d = s.gt_disparity.as_ref().expect("checked");
            let masked = DisparityField::from_fn(d.height(), d.width(), |y, x| if s.valid_mask.at(y, x) { d.at(y, x) * sign } else { f32::NAN });
            write_disparity(&root.join("disp").join(format!("{}.tif", s.id)), &masked)?;
        }
        if with_gt_right {
            fs::create_dir_all(root.join("disp_right"))?;
            let d = s.gt_right_disparity.as_ref().expect("checked").map(|v| v * sign);
            write_disparity(&root.join("disp_right").join(format!("{}.tif", s.id)), &d)?;
        }
        if with_occ {
            fs::create_dir_all(root.join("occ"))?;
            write_mask(&root.join("occ").join(format!("{}.tif", s.id)), s.occlusion.as_ref().expect("checked"))?;
        }
    }
    if let Some(st) = stats {
        write_stats(root, st)?;
    }
    Ok(())
}

struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

fn decode_tiff(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| load_err(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| load_err(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| load_err(path, e))?;
    let channels = match dec.colortype().map_err(|e| load_err(path, e))? {
        tiff::ColorType::Gray(_) => 1,
        tiff::ColorType::RGB(_) => 3,
        other => return Err(load_err(path, format!("unsupported colour type {other:?}"))),
    };
    let data: Vec<f32> = match dec.read_image().map_err(|e| load_err(path, e))? {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U8(v) => v.into_iter().map(|x| x as f32 / 255.0).collect(),
        DecodingResult::U16(v) => v.into_iter().map(|x| x as f32 / 65535.0).collect(),
        _ => return Err(load_err(path, "unsupported sample format")),
    };
    Ok(Raster { channels, height: h as usize, width: w as usize, data })
}

fn decode_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| load_err(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| load_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| load_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| load_err(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(load_err(path, format!("unsupported colour type {other:?}"))),
    };
    let bytes = &buf[..info.buffer_size()];
    let data = match info.bit_depth {
        png::BitDepth::Sixteen => bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0).collect(),
        png::BitDepth::Eight => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        other => return Err(load_err(path, format!("unsupported bit depth {other:?}"))),
    };
    Ok(Raster { channels, height: info.height as usize, width: info.width as usize, data })
}

fn decode(path: &Path) -> Result<Raster> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let r = if ext == "png" { decode_png(path)? } else { decode_tiff(path)? };
    if r.data.len() != r.channels * r.height * r.width {
        return Err(load_err(path, "pixel count does not match dimensions"));
    }
    Ok(r)
}

/// Interleaved `H x W x C` to planar `C x H x W`.
fn planar(r: &Raster) -> Vec<f32> {
    let (c, n) = (r.channels, r.height * r.width);
    (0..c * n).map(|i| r.data[(i % n) * c + i / n]).collect()
}

pub fn read_image(path: &Path) -> Result<ImagePlane> {
    let r = decode(path)?;
    ImagePlane::new(r.channels, r.height, r.width, planar(&r)).map_err(|e| load_err(path, e))
}

pub fn read_disparity(path: &Path) -> Result<DisparityField> {
    let r = decode(path)?;
    if r.channels != 1 {
        return Err(load_err(path, "disparity raster must be single-channel"));
    }
    DisparityField::new(r.height, r.width, r.data).map_err(|e| load_err(path, e))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let r = decode(path)?;
    Mask::new(r.height, r.width, r.data.iter().step_by(r.channels).map(|&v| v > 0.0).collect()).map_err(|e| load_err(path, e))
}

fn encoder(path: &Path) -> Result<TiffEncoder<BufWriter<File>>> {
    let file = File::create(path)?;
    TiffEncoder::new(BufWriter::new(file)).map_err(|e| load_err(path, e))
}

pub fn write_image(path: &Path, image: &ImagePlane) -> Result<()> {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let n = h * w;
    let mut enc = encoder(path)?;
    match c {
        1 => enc.write_image::<colortype::Gray32Float>(w as u32, h as u32, image.data()),
        3 => {
            let interleaved: Vec<f32> = (0..3 * n).map(|i| image.data()[(i % 3) * n + i / 3]).collect();
            enc.write_image::<colortype::RGB32Float>(w as u32, h as u32, &interleaved)
        }
        _ => return Err(load_err(path, format!("cannot store {c}-channel images"))),
    }
    .map_err(|e| load_err(path, e))
}

pub fn write_disparity(path: &Path, d: &DisparityField) -> Result<()> {
    encoder(path)?.write_image::<colortype::Gray32Float>(d.width() as u32, d.height() as u32, d.data()).map_err(|e| load_err(path, e))
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let bytes: Vec<u8> = m.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    encoder(path)?.write_image::<colortype::Gray8>(m.width() as u32, m.height() as u32, &bytes).map_err(|e| load_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthSpec};

    fn fixture(n: usize) -> Vec<StereoSample> {
        (0..n)
            .map(|i| {
                let mut s = generate_synthetic(&SynthSpec { occlusion_fraction: 0.05, ..SynthSpec::clean(16, 24, -3.0, 3.0, i as u64) }).unwrap();
                s.id = format!("s{i}");
                s.domain = DomainDescriptor::new("toy", "paris", "wv3");
                s
            })
            .collect()
    }

    #[test]
    fn round_trip_preserves_samples() {
        let dir = tempfile::tempdir().unwrap();
        let samples = fixture(2);
        let meta = DatasetMetadata::from_domain(&samples[0].domain);
        write_dataset(dir.path(), &meta, &samples, None).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.domain(), samples[0].domain);
        assert!(ds.stats().is_none());
        for (i, s) in samples.iter().enumerate() {
            let back = ds.load(i).unwrap();
            assert_eq!(back.left, s.left);
            assert_eq!(back.right, s.right);
            assert_eq!(back.valid_mask, s.valid_mask);
            assert_eq!(back.occlusion, s.occlusion);
            let (a, b) = (back.gt_disparity.unwrap(), s.gt_disparity.clone().unwrap());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x == y || (x.is_nan() && y.is_nan())));
        }
    }

    #[test]
    fn negative_sign_convention_is_undone_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let samples = fixture(1);
        let meta = DatasetMetadata { disp_sign: -1, ..DatasetMetadata::from_domain(&samples[0].domain) };
        write_dataset(dir.path(), &meta, &samples, None).unwrap();
        let stored = read_disparity(&dir.path().join("disp/s0.tif")).unwrap();
        let truth = samples[0].gt_disparity.as_ref().unwrap();
        let (y, x) = (8, 12);
        assert_eq!(stored.at(y, x), -truth.at(y, x));
        assert_eq!(load_dataset(dir.path()).unwrap().load(0).unwrap().gt_disparity.unwrap().at(y, x), truth.at(y, x));
    }

    #[test]
    fn missing_disparity_means_unsupervised() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = fixture(2).iter().map(StereoSample::without_ground_truth).collect();
        write_dataset(dir.path(), &DatasetMetadata::from_domain(&samples[0].domain), &samples, None).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert!(!ds.has_ground_truth());
        assert!(ds.load(1).unwrap().gt_disparity.is_none());
        assert!(matches!(ds.require_stats(), Err(StereoError::MissingStats(_))));
    }

    #[test]
    fn corrupt_raster_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let samples = fixture(1);
        write_dataset(dir.path(), &DatasetMetadata::from_domain(&samples[0].domain), &samples, None).unwrap();
        let bad = dir.path().join("right/s0.tif");
        fs::write(&bad, b"not a tiff").unwrap();
        let err = load_dataset(dir.path()).unwrap().load(0).unwrap_err().to_string();
        assert!(err.contains("right") && err.contains("s0.tif"), "{err}");
        fs::write(dir.path().join(METADATA_FILE), "{\"datasetId\": 3}").unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains(METADATA_FILE));
    }

    #[test]
    fn png_images_load_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 3, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[0, 51, 255, 102, 153, 204]).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 2, 3));
        assert!((img.at(0, 0, 1) - 0.2).abs() < 1e-6);
        assert_eq!(img.at(0, 0, 2), 1.0);
    }

    #[test]
    fn rgb_tiff_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.tif");
        let img = ImagePlane::new(3, 2, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }
}
