//! Dataset ingestion and export: IDX pairs, binary PGM, PNG and labeled
//! image directories.
//!
//! Image directories are read in lexicographic filename order. Labels come
//! either from a `labels.tsv` sidecar (`filename<TAB>label` per line) or from
//! per-class subdirectories named by the class index.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::image::{to_grayscale, Corpus, Image, LabeledSample, Provenance};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const LABELS_SIDECAR: &str = "labels.tsv";

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    // gzip member header
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("{what} header")))
}

/// Parses an IDX image file body (`magic, count, rows, cols, bytes...`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Image>)> {
    let magic = be_u32(bytes, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "image")? as usize;
    let rows = be_u32(bytes, 8, "image")? as usize;
    let cols = be_u32(bytes, 12, "image")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * size {
        return Err(Error::TruncatedFile(format!(
            "expected {} image bytes, found {}",
            count * size,
            body.len()
        )));
    }
    let images = body
        .chunks_exact(size.max(1))
        .take(count)
        .map(|chunk| Image::from_bytes(cols, rows, chunk))
        .collect::<Result<Vec<_>>>()?;
    Ok((cols, rows, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::TruncatedFile(format!(
            "expected {count} labels, found {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

/// Loads an IDX image/label pair (optionally gzip-compressed) into a corpus.
pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<Corpus> {
    let (_, _, images) = parse_idx_images(&read_all(image_path)?)?;
    let labels = parse_idx_labels(&read_all(label_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::LengthMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    let samples = images
        .into_iter()
        .zip(labels)
        .map(|(img, l)| LabeledSample::clean(img, l as usize))
        .collect();
    let name = image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, num_classes, samples)
}

/// Writes an uncompressed IDX pair.
pub fn write_idx(corpus: &Corpus, image_path: &Path, label_path: &Path) -> Result<()> {
    let (w, h) = corpus.dims().ok_or(Error::EmptyCorpus)?;
    let mut img = Vec::with_capacity(16 + corpus.len() * w * h);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(corpus.len() as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    let mut lab = Vec::with_capacity(8 + corpus.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(corpus.len() as u32).to_be_bytes());
    for s in corpus.samples() {
        img.extend_from_slice(&s.image.to_bytes());
        let label = u8::try_from(s.label)
            .map_err(|_| Error::InvalidConfig(format!("label {} does not fit IDX", s.label)))?;
        lab.push(label);
    }
    fs::write(image_path, img).map_err(|e| Error::io(image_path, e))?;
    fs::write(label_path, lab).map_err(|e| Error::io(label_path, e))
}

// --- PGM -------------------------------------------------------------------

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::TruncatedFile("PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = pgm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat("malformed PGM header".into()))
}

/// Decodes a binary (P5) PGM. 16-bit samples are accepted and rescaled.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::UnsupportedFormat(
            "only binary P5 PGM is supported".into(),
        ));
    }
    let width = pgm_number(bytes, &mut pos)?;
    let height = pgm_number(bytes, &mut pos)?;
    let maxval = pgm_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    let pixels: Vec<f64> = if maxval < 256 {
        if raster.len() < n {
            return Err(Error::TruncatedFile("PGM raster".into()));
        }
        raster[..n]
            .iter()
            .map(|&b| (f64::from(b) / maxval as f64).min(1.0))
            .collect()
    } else {
        if raster.len() < 2 * n {
            return Err(Error::TruncatedFile("PGM raster".into()));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| (f64::from(u16::from_be_bytes([c[0], c[1]])) / maxval as f64).min(1.0))
            .collect()
    };
    Image::new(width, height, pixels)
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&img.to_bytes());
    out
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

// --- PNG -------------------------------------------------------------------

/// Reads an 8-bit grayscale or RGB(A) PNG as grayscale intensities.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {:?} bit depth",
            path.display(),
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let v = |b: u8| f64::from(b) / 255.0;
    let pixels: Vec<f64> = match info.color_type {
        png::ColorType::Grayscale => data.iter().map(|&b| v(b)).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).map(|c| v(c[0])).collect(),
        png::ColorType::Rgb => data
            .chunks_exact(3)
            .map(|c| to_grayscale(v(c[0]), v(c[1]), v(c[2])))
            .collect(),
        png::ColorType::Rgba => data
            .chunks_exact(4)
            .map(|c| to_grayscale(v(c[0]), v(c[1]), v(c[2])))
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: colour type {other:?}",
                path.display()
            )))
        }
    };
    Image::new(w, h, pixels)
}

// --- directories -------------------------------------------------------------

fn read_image_file(path: &Path) -> Result<Image> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        _ => Err(Error::UnsupportedFormat(path.display().to_string())),
    }
}

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && matches!(
            path.extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase)
                .as_deref(),
            Some("pgm") | Some("png")
        )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn read_sidecar(path: &Path) -> Result<Vec<(String, usize)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (name, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::UnsupportedFormat(format!("labels line {line:?}")))?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| Error::UnsupportedFormat(format!("label {label:?}")))?;
        out.push((name.to_string(), label));
    }
    Ok(out)
}

/// Loads a directory of PGM/PNG images.
///
/// With a `labels.tsv` sidecar, every image file in `dir` must be listed.
/// Without one, each numeric subdirectory is a class and its images carry
/// that label. Provenance is `Clean` unless the caller rewrites it.
pub fn load_image_dir(dir: &Path) -> Result<Corpus> {
    let sidecar = dir.join(LABELS_SIDECAR);
    let mut files: Vec<(String, PathBuf, usize)> = Vec::new();
    if sidecar.is_file() {
        let labels: std::collections::BTreeMap<String, usize> =
            read_sidecar(&sidecar)?.into_iter().collect();
        for path in sorted_entries(dir)?
            .into_iter()
            .filter(|p| is_image_file(p))
        {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let label = *labels
                .get(&name)
                .ok_or_else(|| Error::MissingLabel(name.clone()))?;
            files.push((name, path, label));
        }
    } else {
        for sub in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
            let class_name = sub.file_name().unwrap().to_string_lossy().into_owned();
            let label: usize = match class_name.parse() {
                Ok(l) => l,
                Err(_) => continue,
            };
            for path in sorted_entries(&sub)?
                .into_iter()
                .filter(|p| is_image_file(p))
            {
                let name = format!(
                    "{class_name}/{}",
                    path.file_name().unwrap().to_string_lossy()
                );
                files.push((name, path, label));
            }
        }
        if files.is_empty() {
            if let Some(path) = sorted_entries(dir)?.into_iter().find(|p| is_image_file(p)) {
                return Err(Error::MissingLabel(path.display().to_string()));
            }
        }
        files.sort_by(|a, b| a.0.cmp(&b.0));
    }

    let mut samples = Vec::with_capacity(files.len());
    let mut dims: Option<(usize, usize)> = None;
    for (name, path, label) in files {
        let image = read_image_file(&path)?;
        match dims {
            None => dims = Some(image.dims()),
            Some(d) if d != image.dims() => {
                return Err(Error::MixedDimensions {
                    expected: d,
                    found: image.dims(),
                    file: name,
                })
            }
            _ => {}
        }
        samples.push(LabeledSample::clean(image, label));
    }
    let num_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(1);
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, num_classes, samples)
}

/// Loads an image directory and stamps every sample with `provenance`.
pub fn load_image_dir_as(dir: &Path, provenance: Provenance) -> Result<Corpus> {
    let corpus = load_image_dir(dir)?;
    let name = corpus.name().to_string();
    let classes = corpus.num_classes();
    let samples = corpus
        .into_samples()
        .into_iter()
        .map(|s| LabeledSample {
            provenance: provenance.clone(),
            ..s
        })
        .collect();
    Corpus::new(name, classes, samples)
}

/// Writes `00000.pgm, 00001.pgm, ...` plus a `labels.tsv` sidecar.
pub fn write_image_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = corpus.len().max(1).to_string().len().max(5);
    let mut labels = Vec::new();
    for (i, s) in corpus.samples().iter().enumerate() {
        let name = format!("{i:0width$}.pgm");
        write_pgm(&s.image, &dir.join(&name))?;
        writeln!(labels, "{name}\t{}", s.label).expect("write to Vec");
    }
    let sidecar = dir.join(LABELS_SIDECAR);
    fs::write(&sidecar, labels).map_err(|e| Error::io(sidecar, e))
}
