//! Image datasets: PPM/PGM ingestion and seeded synthetic generators.
//!
//! Images are stored channel-major ([3, H, W] per image) with pixel values
//! normalized to [0, 1]. Malformed files are skipped with a diagnostic on
//! stderr and never affect the rest of the stream.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// A batch of RGB images, values in [0, 1], layout [N, 3, H, W].
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl ImageBatch {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * 3 * h * w {
            return Err(Error::invalid(format!(
                "image batch of {n} images at {h}x{w} needs {} values, got {}",
                n * 3 * h * w,
                data.len()
            )));
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image batch values must lie in [0, 1]"));
        }
        Ok(ImageBatch { n, h, w, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.data[i * 3 * self.h * self.w..][..3 * self.h * self.w]
    }
}

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    /// `synthetic:<generator>:<count>`
    Synthetic { generator: Generator, count: usize },
    /// `dir:<path>` containing PPM (P6) / PGM (P5) files.
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Gradients,
    Checkerboards,
    GaussianBlobs,
    Mixed,
}

impl Generator {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Generator::Gradients),
            "checkerboards" => Ok(Generator::Checkerboards),
            "gaussian-blobs" => Ok(Generator::GaussianBlobs),
            "mixed" => Ok(Generator::Mixed),
            other => Err(Error::invalid(format!(
                "unknown synthetic generator `{other}` \
                 (expected gradients, checkerboards, gaussian-blobs, or mixed)"
            ))),
        }
    }
}

impl DatasetSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let (gen_name, count) = rest.split_once(':').ok_or_else(|| {
                Error::invalid(format!(
                    "dataset spec `{s}` must be synthetic:<generator>:<count>"
                ))
            })?;
            let count: usize = count
                .parse()
                .map_err(|_| Error::invalid(format!("bad image count in `{s}`")))?;
            Ok(DatasetSpec::Synthetic {
                generator: Generator::parse(gen_name)?,
                count,
            })
        } else if let Some(path) = s.strip_prefix("dir:") {
            Ok(DatasetSpec::Directory(PathBuf::from(path)))
        } else {
            Err(Error::invalid(format!(
                "dataset spec `{s}` must start with synthetic: or dir:"
            )))
        }
    }
}

/// In-memory image pool with deterministic order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub h: usize,
    pub w: usize,
    images: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn from_images(h: usize, w: usize, images: Vec<Vec<f64>>) -> Self {
        debug_assert!(images.iter().all(|i| i.len() == 3 * h * w));
        Dataset { h, w, images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let mut data = Vec::with_capacity(indices.len() * 3 * self.h * self.w);
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        ImageBatch {
            n: indices.len(),
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn single(&self, i: usize) -> ImageBatch {
        self.batch(&[i])
    }
}

/// Materialize a dataset of `h` x `w` images.
///
/// Synthetic images are generated from `substream(seed, index)` so the stream
/// is identical across runs and independent of how it is consumed. Directory
/// ingestion sorts file names, skips files that fail to parse or have the
/// wrong geometry (with a diagnostic), and keeps going.
pub fn ingest_dataset(spec: &DatasetSpec, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    match spec {
        DatasetSpec::Synthetic { generator, count } => {
            let images = (0..*count)
                .map(|i| synthesize(*generator, h, w, substream(seed, i as u64)))
                .collect();
            Ok(Dataset { h, w, images })
        }
        DatasetSpec::Directory(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("ppm") | Some("pgm")
                    )
                })
                .collect();
            paths.sort();
            let mut images = Vec::new();
            for path in &paths {
                match load_netpbm(path) {
                    Ok((fw, fh, pixels)) => {
                        if fw != w || fh != h {
                            eprintln!(
                                "skipping {}: geometry {}x{} does not match configured {}x{}",
                                path.display(),
                                fw,
                                fh,
                                w,
                                h
                            );
                            continue;
                        }
                        images.push(pixels);
                    }
                    Err(e) => {
                        eprintln!("skipping {}: {}", path.display(), e);
                    }
                }
            }
            if images.is_empty() {
                return Err(Error::invalid(format!(
                    "no usable images in {}",
                    dir.display()
                )));
            }
            Ok(Dataset { h, w, images })
        }
    }
}

fn synthesize(generator: Generator, h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::seed_from(seed);
    let effective = match generator {
        Generator::Mixed => match seed % 3 {
            0 => Generator::Gradients,
            1 => Generator::Checkerboards,
            _ => Generator::GaussianBlobs,
        },
        g => g,
    };
    match effective {
        Generator::Gradients => gradients(h, w, &mut rng),
        Generator::Checkerboards => checkerboards(h, w, &mut rng),
        Generator::GaussianBlobs => gaussian_blobs(h, w, &mut rng),
        Generator::Mixed => unreachable!(),
    }
}

fn gradients(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let mut img = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let base = rng.uniform();
        let dx = 2.0 * rng.uniform() - 1.0;
        let dy = 2.0 * rng.uniform() - 1.0;
        for y in 0..h {
            for x in 0..w {
                let v = base + dx * x as f64 / (w - 1) as f64 + dy * y as f64 / (h - 1) as f64;
                img[c * h * w + y * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

fn checkerboards(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let period = [4usize, 8, 16][rng.below(3)];
    let (px, py) = (rng.below(period), rng.below(period));
    let c0 = [rng.uniform(), rng.uniform(), rng.uniform()];
    let c1 = [rng.uniform(), rng.uniform(), rng.uniform()];
    let mut img = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let cell = ((x + px) / period + (y + py) / period) % 2;
            let color = if cell == 0 { &c0 } else { &c1 };
            for (c, &v) in color.iter().enumerate() {
                img[c * h * w + y * w + x] = v;
            }
        }
    }
    img
}

fn gaussian_blobs(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let bg = [rng.uniform(), rng.uniform(), rng.uniform()];
    let mut img = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                img[c * h * w + y * w + x] = bg[c];
            }
        }
    }
    let blobs = 1 + rng.below(3);
    for _ in 0..blobs {
        let cx = rng.uniform() * w as f64;
        let cy = rng.uniform() * h as f64;
        let r = (h.min(w) as f64) * (0.12 + 0.2 * rng.uniform());
        let color = [rng.uniform(), rng.uniform(), rng.uniform()];
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let weight = (-d2 / (2.0 * r * r)).exp();
                for (c, &col) in color.iter().enumerate() {
                    let idx = c * h * w + y * w + x;
                    img[idx] += weight * (col - img[idx]);
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// Load a binary PPM (P6) or PGM (P5) with maxval 255.
///
/// Returns (width, height, pixels) with pixels channel-major and grayscale
/// replicated to three channels.
pub fn load_netpbm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("truncated netpbm header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    let channels = match magic.as_str() {
        "P6" => 3usize,
        "P5" => 1usize,
        other => {
            return Err(Error::invalid(format!(
                "unsupported netpbm magic `{other}` (expected P5 or P6)"
            )))
        }
    };
    let w: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::invalid("bad width"))?;
    let h: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::invalid("bad height"))?;
    let maxval: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::invalid("bad maxval"))?;
    if maxval != 255 {
        return Err(Error::invalid(format!(
            "maxval {maxval} unsupported (expected 255)"
        )));
    }
    // single whitespace byte separates header from raster
    let raster = &bytes[pos + 1..];
    let needed = w * h * channels;
    if raster.len() < needed {
        return Err(Error::invalid(format!(
            "raster has {} bytes, needs {needed}",
            raster.len()
        )));
    }

    let mut pixels = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let src = (y * w + x) * channels + if channels == 3 { c } else { 0 };
                pixels[c * h * w + y * w + x] = raster[src] as f64 / 255.0;
            }
        }
    }
    Ok((w, h, pixels))
}

/// Write a binary PPM (P6), maxval 255. Used by tests and tooling.
pub fn save_ppm(path: &Path, h: usize, w: usize, chw: &[f64]) -> Result<()> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (chw[c * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                out.push(v);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_stream_is_deterministic() {
        let spec = DatasetSpec::parse("synthetic:checkerboards:8").unwrap();
        let a = ingest_dataset(&spec, 16, 16, 42).unwrap();
        let b = ingest_dataset(&spec, 16, 16, 42).unwrap();
        for i in 0..8 {
            assert_eq!(a.image(i), b.image(i));
        }
        let c = ingest_dataset(&spec, 16, 16, 43).unwrap();
        assert_ne!(a.image(0), c.image(0));
    }

    #[test]
    fn generators_stay_in_unit_range() {
        for gen in ["gradients", "checkerboards", "gaussian-blobs", "mixed"] {
            let spec = DatasetSpec::parse(&format!("synthetic:{gen}:16")).unwrap();
            let d = ingest_dataset(&spec, 32, 32, 7).unwrap();
            for i in 0..d.len() {
                assert!(d.image(i).iter().all(|v| (0.0..=1.0).contains(v)), "{gen}");
            }
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(DatasetSpec::parse("synthetic:params").is_err());
        assert!(DatasetSpec::parse("synthetic:nope:4").is_err());
        assert!(DatasetSpec::parse("images/").is_err());
    }

    #[test]
    fn ppm_round_trip_and_white_image() {
        let dir = std::env::temp_dir().join("bitsemcom_data_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("white.ppm");
        let white = vec![1.0; 3 * 4 * 4];
        save_ppm(&path, 4, 4, &white).unwrap();
        let (w, h, pixels) = load_netpbm(&path).unwrap();
        assert_eq!((w, h), (4, 4));
        assert!(pixels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_replicates_gray_to_three_channels() {
        let dir = std::env::temp_dir().join("bitsemcom_data_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gray.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8, 85, 170, 255]);
        fs::write(&path, bytes).unwrap();
        let (w, h, pixels) = load_netpbm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        let hw = 4;
        for p in 0..hw {
            assert_eq!(pixels[p], pixels[hw + p]);
            assert_eq!(pixels[p], pixels[2 * hw + p]);
        }
        assert_eq!(pixels[3], 1.0);
    }

    #[test]
    fn malformed_files_are_skipped_without_affecting_valid_ones() {
        let dir = std::env::temp_dir().join("bitsemcom_skip_test");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        // one valid, one truncated, one with wrong maxval, one wrong geometry
        save_ppm(&dir.join("a_good.ppm"), 8, 8, &vec![0.5; 3 * 64]).unwrap();
        fs::write(dir.join("b_trunc.ppm"), b"P6\n8 8\n255\nxx").unwrap();
        fs::write(dir.join("c_maxval.ppm"), b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap();
        save_ppm(&dir.join("d_small.ppm"), 4, 4, &vec![0.5; 3 * 16]).unwrap();

        let spec = DatasetSpec::Directory(dir.clone());
        let d = ingest_dataset(&spec, 8, 8, 0).unwrap();
        assert_eq!(d.len(), 1);

        // the valid file parses to the same pixels regardless of the bad ones
        let only_good = std::env::temp_dir().join("bitsemcom_skip_test_good");
        let _ = fs::remove_dir_all(&only_good);
        fs::create_dir_all(&only_good).unwrap();
        save_ppm(&only_good.join("a_good.ppm"), 8, 8, &vec![0.5; 3 * 64]).unwrap();
        let d2 = ingest_dataset(&DatasetSpec::Directory(only_good), 8, 8, 0).unwrap();
        assert_eq!(d.image(0), d2.image(0));
    }

    #[test]
    fn batch_assembles_selected_images() {
        let spec = DatasetSpec::parse("synthetic:gradients:4").unwrap();
        let d = ingest_dataset(&spec, 8, 8, 1).unwrap();
        let batch = d.batch(&[2, 0]);
        assert_eq!(batch.n, 2);
        assert_eq!(batch.image(0), d.image(2));
        assert_eq!(batch.image(1), d.image(0));
    }
}
