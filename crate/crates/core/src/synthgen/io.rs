//! On-disk dataset format: `manifest.json` plus PNG images and masks.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_sample, Mask, RgbImage, Sample, Variant, VariantSet};
use crate::error::{CladError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u64,
    pub image_file: String,
    pub mask_file: Option<String>,
    pub fg_label: usize,
    pub bg_label: usize,
    /// SHA-256 of the image file bytes, lowercase hex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub variant: Variant,
    pub num_classes: usize,
    pub image_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub records: Vec<ManifestRecord>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn encode_png(path: &Path, size: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let codec = |e: png::EncodingError| CladError::Codec {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, size as u32, size as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(codec)?;
        writer.write_image_data(data).map_err(codec)?;
    }
    Ok(buf)
}

fn decode_png(path: &Path, bytes: &[u8], size: usize, color: png::ColorType) -> Result<Vec<u8>> {
    let codec = |reason: String| CladError::Codec {
        path: path.to_path_buf(),
        reason,
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| codec(e.to_string()))?;
    let info = reader.info();
    if info.width as usize != size || info.height as usize != size {
        return Err(codec(format!("expected {size}x{size}, found {}x{}", info.width, info.height)));
    }
    if info.color_type != color || info.bit_depth != png::BitDepth::Eight {
        return Err(codec(format!(
            "expected 8-bit {color:?}, found {:?}-bit {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| codec("image too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| codec(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Ok(buf)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CladError::io(path, e))
}

/// Write `set` under `dir` (created if needed).
pub fn write_dataset(set: &VariantSet, dir: &Path, fingerprint: Option<&str>) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| CladError::io(d, e))?;
    }
    let mut records = Vec::with_capacity(set.len());
    for s in &set.samples {
        let image_file = format!("images/{:06}.png", s.id);
        let path = dir.join(&image_file);
        let bytes = encode_png(&path, set.image_size, png::ColorType::Rgb, &s.image.data)?;
        write_file(&path, &bytes)?;
        let image_sha256 = Some(sha256_hex(&bytes));

        let (mask_file, mask_sha256) = match &s.mask {
            Some(mask) => {
                let name = format!("masks/{:06}.png", s.id);
                let path = dir.join(&name);
                let gray: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
                let bytes = encode_png(&path, set.image_size, png::ColorType::Grayscale, &gray)?;
                write_file(&path, &bytes)?;
                (Some(name), Some(sha256_hex(&bytes)))
            }
            None => (None, None),
        };
        records.push(ManifestRecord {
            id: s.id,
            image_file,
            mask_file,
            fg_label: s.fg_label,
            bg_label: s.bg_label,
            image_sha256,
            mask_sha256,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        variant: set.variant,
        num_classes: set.num_classes,
        image_size: set.image_size,
        fingerprint: fingerprint.map(str::to_owned),
        records,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&dir.join("manifest.json"), text.as_bytes())
}

fn read_checked(dir: &Path, rel: &str, id: u64, checksum: Option<&str>) -> Result<(PathBuf, Vec<u8>)> {
    let path = dir.join(rel);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CladError::MissingFile { id, path });
        }
        Err(e) => return Err(CladError::io(path, e)),
    };
    if let Some(expected) = checksum {
        if !sha256_hex(&bytes).eq_ignore_ascii_case(expected) {
            return Err(CladError::ChecksumMismatch { id, path });
        }
    }
    Ok((path, bytes))
}

/// Load and validate a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<VariantSet> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| CladError::io(&manifest_path, e))?;
    let malformed = |reason: String| CladError::MalformedManifest {
        path: manifest_path.clone(),
        reason,
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported format_version {}", manifest.format_version)));
    }
    if manifest.num_classes < 2 || manifest.image_size == 0 {
        return Err(malformed("num_classes must be >= 2 and image_size positive".into()));
    }
    let size = manifest.image_size;

    let mut samples = Vec::with_capacity(manifest.records.len());
    let mut seen = std::collections::HashSet::new();
    for r in &manifest.records {
        if !seen.insert(r.id) {
            return Err(malformed(format!("duplicate record id {}", r.id)));
        }
        let (path, bytes) = read_checked(dir, &r.image_file, r.id, r.image_sha256.as_deref())?;
        let data = decode_png(&path, &bytes, size, png::ColorType::Rgb)?;
        let mask = match &r.mask_file {
            Some(rel) => {
                let (path, bytes) = read_checked(dir, rel, r.id, r.mask_sha256.as_deref())?;
                let gray = decode_png(&path, &bytes, size, png::ColorType::Grayscale)?;
                if let Some(v) = gray.iter().find(|&&v| v != 0 && v != 255) {
                    return Err(CladError::Validation {
                        id: r.id,
                        reason: format!("mask value {v} not in {{0, 255}}"),
                    });
                }
                Some(Mask {
                    size,
                    data: gray.iter().map(|&v| v == 255).collect(),
                })
            }
            None => None,
        };
        let sample = Sample {
            id: r.id,
            image: RgbImage { size, data },
            mask,
            fg_label: r.fg_label,
            bg_label: r.bg_label,
        };
        validate_sample(manifest.variant, &sample, manifest.num_classes, size)?;
        samples.push(sample);
    }
    Ok(VariantSet {
        variant: manifest.variant,
        num_classes: manifest.num_classes,
        image_size: size,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_base, make_variant, DatasetSpec};

    fn set(kind: Variant) -> VariantSet {
        let base = gen_base(&DatasetSpec {
            samples_per_class: 3,
            image_size: 16,
            ..Default::default()
        })
        .unwrap();
        make_variant(&base, kind, 2).unwrap()
    }

    fn edit_manifest(dir: &Path, f: impl FnOnce(&mut Manifest)) {
        let path = dir.join("manifest.json");
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        f(&mut m);
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    }

    #[test]
    fn round_trip_every_variant() {
        for kind in Variant::ALL {
            let dir = tempfile::tempdir().unwrap();
            let s = set(kind);
            write_dataset(&s, dir.path(), Some("abc")).unwrap();
            assert_eq!(read_dataset(dir.path()).unwrap(), s);
        }
    }

    #[test]
    fn missing_image_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let s = set(Variant::Original);
        write_dataset(&s, dir.path(), None).unwrap();
        let victim = s.samples[4].id;
        fs::remove_file(dir.path().join(format!("images/{victim:06}.png"))).unwrap();
        match read_dataset(dir.path()) {
            Err(CladError::MissingFile { id, .. }) => assert_eq!(id, victim),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let s = set(Variant::OnlyFg);
        write_dataset(&s, dir.path(), None).unwrap();
        let other = fs::read(dir.path().join("images/000001.png")).unwrap();
        fs::write(dir.path().join("images/000000.png"), other).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(CladError::ChecksumMismatch { id: 0, .. })));
    }

    #[test]
    fn malformed_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&set(Variant::Original), dir.path(), None).unwrap();
        fs::write(dir.path().join("manifest.json"), "{\"format_version\": 1,").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(CladError::MalformedManifest { .. })));
    }

    #[test]
    fn mixed_same_with_label_mismatch_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&set(Variant::MixedSame), dir.path(), None).unwrap();
        edit_manifest(dir.path(), |m| {
            m.records[2].bg_label = (m.records[2].fg_label + 1) % 9;
        });
        let id = {
            let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
            m.records[2].id
        };
        match read_dataset(dir.path()) {
            Err(CladError::Validation { id: got, .. }) => assert_eq!(got, id),
            other => panic!("unexpected {other:?}"),
        }
    }
}
