//! Loader for the published binary-sprites archive: a NumPy `.npz` zip
//! containing `imgs.npy` (uint8, N x 64 x 64) and `latents_classes.npy`
//! (int64, N x 6). Entries are CRC-checked; stored and deflate compression
//! are both handled. The trivial color factor (one value) is dropped.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use flate2::read::DeflateDecoder;
use ndarray::{Array2, Array4};

use crate::{Error, Result};

use super::FactorDataset;

/// Factor cardinalities after dropping the single-valued color factor.
pub const DSPRITES_FACTOR_SIZES: [usize; 5] = [3, 6, 40, 32, 32];
/// Factor names aligned with [`DSPRITES_FACTOR_SIZES`].
pub const DSPRITES_FACTOR_NAMES: [&str; 5] = ["shape", "scale", "orientation", "pos_x", "pos_y"];

const RAW_FACTOR_SIZES: [usize; 6] = [1, 3, 6, 40, 32, 32];
const RAW_FACTOR_NAMES: [&str; 6] = ["color", "shape", "scale", "orientation", "pos_x", "pos_y"];
const IMAGE_SIDE: usize = 64;

/// A parsed `.npy` payload.
#[derive(Debug, Clone)]
pub(crate) enum NpyArray {
    U8(Vec<u8>, Vec<usize>),
    I64(Vec<i64>, Vec<usize>),
}

impl NpyArray {
    fn shape(&self) -> &[usize] {
        match self {
            NpyArray::U8(_, s) | NpyArray::I64(_, s) => s,
        }
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads every entry of a zip archive into memory, verifying CRCs.
pub(crate) fn read_zip(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>> {
    let bad = |msg: String| Error::Dataset(format!("npz archive: {msg}"));

    // End-of-central-directory record: scan backwards for its signature.
    const EOCD_SIG: u32 = 0x0605_4b50;
    const EOCD_MIN: usize = 22;
    if bytes.len() < EOCD_MIN {
        return Err(bad("file too small".into()));
    }
    let scan_start = bytes.len().saturating_sub(EOCD_MIN + 65_536);
    let mut eocd = None;
    for at in (scan_start..=bytes.len() - EOCD_MIN).rev() {
        if read_u32(bytes, at) == EOCD_SIG {
            eocd = Some(at);
            break;
        }
    }
    let eocd = eocd.ok_or_else(|| bad("no end-of-central-directory record".into()))?;
    let entry_count = read_u16(bytes, eocd + 10) as usize;
    let cd_offset = read_u32(bytes, eocd + 16) as usize;

    const CD_SIG: u32 = 0x0201_4b50;
    const LOCAL_SIG: u32 = 0x0403_4b50;
    let mut entries = BTreeMap::new();
    let mut at = cd_offset;
    for _ in 0..entry_count {
        if at + 46 > bytes.len() || read_u32(bytes, at) != CD_SIG {
            return Err(bad("corrupt central directory".into()));
        }
        let method = read_u16(bytes, at + 10);
        let crc = read_u32(bytes, at + 16);
        let comp_size = read_u32(bytes, at + 20) as usize;
        let uncomp_size = read_u32(bytes, at + 24) as usize;
        let name_len = read_u16(bytes, at + 28) as usize;
        let extra_len = read_u16(bytes, at + 30) as usize;
        let comment_len = read_u16(bytes, at + 32) as usize;
        let local_offset = read_u32(bytes, at + 42) as usize;
        if comp_size == u32::MAX as usize || local_offset == u32::MAX as usize {
            return Err(bad("zip64 archives are not supported".into()));
        }
        let name = String::from_utf8(bytes[at + 46..at + 46 + name_len].to_vec())
            .map_err(|e| bad(e.to_string()))?;
        at += 46 + name_len + extra_len + comment_len;

        if local_offset + 30 > bytes.len() || read_u32(bytes, local_offset) != LOCAL_SIG {
            return Err(bad(format!("corrupt local header for {name}")));
        }
        let l_name = read_u16(bytes, local_offset + 26) as usize;
        let l_extra = read_u16(bytes, local_offset + 28) as usize;
        let data_start = local_offset + 30 + l_name + l_extra;
        if data_start + comp_size > bytes.len() {
            return Err(bad(format!("truncated data for {name}")));
        }
        let raw = &bytes[data_start..data_start + comp_size];
        let data = match method {
            0 => raw.to_vec(),
            8 => {
                let mut out = Vec::with_capacity(uncomp_size);
                DeflateDecoder::new(raw)
                    .read_to_end(&mut out)
                    .map_err(|e| bad(format!("deflate error in {name}: {e}")))?;
                out
            }
            other => return Err(bad(format!("unsupported compression method {other} for {name}"))),
        };
        let actual_crc = crc32fast::hash(&data);
        if actual_crc != crc {
            return Err(bad(format!(
                "checksum mismatch for {name}: expected {crc:08x}, found {actual_crc:08x}"
            )));
        }
        entries.insert(name, data);
    }
    Ok(entries)
}

/// Parses a `.npy` byte buffer (v1/v2 headers; C order only).
pub(crate) fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    let bad = |msg: String| Error::Dataset(format!("npy payload: {msg}"));
    if bytes.len() < 10 || &bytes[0..6] != b"\x93NUMPY" {
        return Err(bad("missing magic".into()));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (read_u16(bytes, 8) as usize, 10),
        2 | 3 => (read_u32(bytes, 8) as usize, 12),
        v => return Err(bad(format!("unsupported npy version {v}"))),
    };
    let header_end = header_start + header_len;
    if header_end > bytes.len() {
        return Err(bad("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|e| bad(e.to_string()))?;

    let descr = extract_quoted(header, "'descr':");
    let descr = descr.ok_or_else(|| bad("missing descr".into()))?;
    if header.contains("'fortran_order': True") {
        return Err(bad("fortran-order arrays are not supported".into()));
    }
    let shape = parse_shape(header).ok_or_else(|| bad("missing shape".into()))?;
    let count: usize = shape.iter().product();
    let data = &bytes[header_end..];

    let need = |elem: usize| -> Result<()> {
        if data.len() < count * elem {
            Err(bad(format!(
                "payload too small: {} bytes for {count} x {elem}-byte elements",
                data.len()
            )))
        } else {
            Ok(())
        }
    };

    match descr.as_str() {
        "|u1" => {
            need(1)?;
            Ok(NpyArray::U8(data[..count].to_vec(), shape))
        }
        "<i8" => {
            need(8)?;
            let v = data[..count * 8]
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("chunk")))
                .collect();
            Ok(NpyArray::I64(v, shape))
        }
        other => Err(bad(format!("unsupported dtype {other} (the archive needs |u1 and <i8)"))),
    }
}

fn extract_quoted(header: &str, key: &str) -> Option<String> {
    let at = header.find(key)? + key.len();
    let rest = &header[at..];
    let open = rest.find('\'')?;
    let rest = &rest[open + 1..];
    let close = rest.find('\'')?;
    Some(rest[..close].to_string())
}

fn parse_shape(header: &str) -> Option<Vec<usize>> {
    let at = header.find("'shape':")? + "'shape':".len();
    let rest = &header[at..];
    let open = rest.find('(')?;
    let close = rest.find(')')?;
    let inner = &rest[open + 1..close];
    let mut out = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(part.parse().ok()?);
    }
    Some(out)
}

/// Builds a factor dataset from raw image/class arrays, dropping factors
/// with a single value and enforcing the full-grid contract. Shared by the
/// published-archive path and small-scale tests.
pub(crate) fn assemble_factor_grid(
    imgs: &NpyArray,
    classes: &NpyArray,
    raw_sizes: &[usize],
    raw_names: &[&str],
    image_side: usize,
) -> Result<FactorDataset> {
    let n_expected: usize = raw_sizes.iter().product();
    let img_shape = imgs.shape().to_vec();
    if img_shape != [n_expected, image_side, image_side] {
        return Err(Error::Dataset(format!(
            "imgs shape mismatch: expected ({n_expected}, {image_side}, {image_side}), found {img_shape:?}"
        )));
    }
    let class_shape = classes.shape().to_vec();
    if class_shape != [n_expected, raw_sizes.len()] {
        return Err(Error::Dataset(format!(
            "latents_classes shape mismatch: expected ({n_expected}, {}), found {class_shape:?}",
            raw_sizes.len()
        )));
    }
    let NpyArray::U8(img_data, _) = imgs else {
        return Err(Error::Dataset("imgs must be uint8 (|u1)".into()));
    };
    let NpyArray::I64(class_data, _) = classes else {
        return Err(Error::Dataset("latents_classes must be int64 (<i8)".into()));
    };
    if let Some(&bad) = img_data.iter().find(|&&v| v > 1) {
        return Err(Error::Dataset(format!(
            "expected binary pixels in {{0, 1}}, found value {bad}"
        )));
    }

    let kept: Vec<usize> = (0..raw_sizes.len()).filter(|&k| raw_sizes[k] > 1).collect();
    let mut factor_values = Array2::<usize>::zeros((n_expected, kept.len()));
    for i in 0..n_expected {
        for (col, &k) in kept.iter().enumerate() {
            let v = class_data[i * raw_sizes.len() + k];
            if v < 0 || v as usize >= raw_sizes[k] {
                return Err(Error::Dataset(format!(
                    "example {i}: factor {} value {v} outside expected range 0..{}",
                    raw_names[k], raw_sizes[k]
                )));
            }
            factor_values[[i, col]] = v as usize;
        }
    }

    let images = Array4::from_shape_vec(
        (n_expected, 1, image_side, image_side),
        img_data.iter().map(|&v| v as f32).collect(),
    )
    .map_err(|e| Error::Dataset(e.to_string()))?;

    let ds = FactorDataset {
        images,
        factor_values,
        factor_sizes: kept.iter().map(|&k| raw_sizes[k]).collect(),
        factor_names: kept.iter().map(|&k| raw_names[k].to_string()).collect(),
    };
    ds.validate()?;
    if !ds.is_full_grid() {
        return Err(Error::Dataset(
            "factor grid incomplete: expected every factor tuple exactly once".into(),
        ));
    }
    Ok(ds)
}

/// Loads the published binary-sprites archive: 737280 binary 64x64 images
/// over the 5 nontrivial factors (shape 3, scale 6, orientation 40, pos 32x32).
pub fn load_dsprites(path: &Path) -> Result<FactorDataset> {
    let bytes = std::fs::read(path)?;
    let entries = read_zip(&bytes)?;
    let imgs = entries
        .get("imgs.npy")
        .ok_or_else(|| Error::Dataset("archive is missing imgs.npy".into()))?;
    let classes = entries
        .get("latents_classes.npy")
        .ok_or_else(|| Error::Dataset("archive is missing latents_classes.npy".into()))?;
    let imgs = parse_npy(imgs)?;
    let classes = parse_npy(classes)?;
    assemble_factor_grid(&imgs, &classes, &RAW_FACTOR_SIZES, &RAW_FACTOR_NAMES, IMAGE_SIDE)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use flate2::write::DeflateEncoder;
    use flate2::Compression;
    use std::io::Write;

    /// Minimal npy v1 writer for fixtures.
    pub(crate) fn npy_bytes(descr: &str, shape: &[usize], data: &[u8]) -> Vec<u8> {
        let shape_str = match shape.len() {
            1 => format!("({},)", shape[0]),
            _ => format!("({})", shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")),
        };
        let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
        let total = 10 + header.len() + 1;
        let pad = (64 - total % 64) % 64;
        header.push_str(&" ".repeat(pad));
        header.push('\n');
        let mut out = Vec::new();
        out.extend_from_slice(b"\x93NUMPY\x01\x00");
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(data);
        out
    }

    /// Minimal zip writer (stored or deflate entries) for fixtures.
    pub(crate) fn zip_bytes(entries: &[(&str, &[u8], bool)]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut central = Vec::new();
        for (name, data, deflate) in entries {
            let crc = crc32fast::hash(data);
            let (method, payload): (u16, Vec<u8>) = if *deflate {
                let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
                enc.write_all(data).unwrap();
                (8, enc.finish().unwrap())
            } else {
                (0, data.to_vec())
            };
            let offset = out.len() as u32;
            out.extend_from_slice(&0x0403_4b50u32.to_le_bytes());
            out.extend_from_slice(&20u16.to_le_bytes()); // version
            out.extend_from_slice(&0u16.to_le_bytes()); // flags
            out.extend_from_slice(&method.to_le_bytes());
            out.extend_from_slice(&[0u8; 4]); // time + date
            out.extend_from_slice(&crc.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&(data.len() as u32).to_le_bytes());
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(&0u16.to_le_bytes()); // extra len
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&payload);

            central.extend_from_slice(&0x0201_4b50u32.to_le_bytes());
            central.extend_from_slice(&20u16.to_le_bytes()); // made by
            central.extend_from_slice(&20u16.to_le_bytes()); // needed
            central.extend_from_slice(&0u16.to_le_bytes()); // flags
            central.extend_from_slice(&method.to_le_bytes());
            central.extend_from_slice(&[0u8; 4]); // time + date
            central.extend_from_slice(&crc.to_le_bytes());
            central.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            central.extend_from_slice(&(data.len() as u32).to_le_bytes());
            central.extend_from_slice(&(name.len() as u16).to_le_bytes());
            central.extend_from_slice(&0u16.to_le_bytes()); // extra
            central.extend_from_slice(&0u16.to_le_bytes()); // comment
            central.extend_from_slice(&0u16.to_le_bytes()); // disk
            central.extend_from_slice(&0u16.to_le_bytes()); // int attrs
            central.extend_from_slice(&0u32.to_le_bytes()); // ext attrs
            central.extend_from_slice(&offset.to_le_bytes());
            central.extend_from_slice(name.as_bytes());
        }
        let cd_offset = out.len() as u32;
        out.extend_from_slice(&central);
        out.extend_from_slice(&0x0605_4b50u32.to_le_bytes());
        out.extend_from_slice(&[0u8; 4]); // disk numbers
        out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        out.extend_from_slice(&(central.len() as u32).to_le_bytes());
        out.extend_from_slice(&cd_offset.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes()); // comment
        out
    }

    /// Tiny 2x3 factor grid fixture matching the raw-archive layout.
    fn tiny_fixture(side: usize) -> (Vec<u8>, Vec<u8>) {
        let raw_sizes = [1usize, 2, 3];
        let n: usize = raw_sizes.iter().product();
        let mut imgs = vec![0u8; n * side * side];
        let mut classes = Vec::new();
        let mut i = 0;
        for a in 0..2i64 {
            for b in 0..3i64 {
                imgs[i * side * side + (a as usize) * side + b as usize] = 1;
                classes.extend_from_slice(&[0, a, b]);
                i += 1;
            }
        }
        let class_bytes: Vec<u8> = classes.iter().flat_map(|v: &i64| v.to_le_bytes()).collect();
        (
            npy_bytes("|u1", &[n, side, side], &imgs),
            npy_bytes("<i8", &[n, 3], &class_bytes),
        )
    }

    #[test]
    fn zip_and_npy_round_trip_stored_and_deflate() {
        let (imgs, classes) = tiny_fixture(8);
        for deflate in [false, true] {
            let zip = zip_bytes(&[
                ("imgs.npy", &imgs, deflate),
                ("latents_classes.npy", &classes, deflate),
            ]);
            let entries = read_zip(&zip).unwrap();
            assert_eq!(entries.len(), 2);
            let parsed = parse_npy(&entries["imgs.npy"]).unwrap();
            assert_eq!(parsed.shape(), &[6, 8, 8]);
            let parsed = parse_npy(&entries["latents_classes.npy"]).unwrap();
            assert_eq!(parsed.shape(), &[6, 3]);
        }
    }

    #[test]
    fn zip_detects_corrupted_payload() {
        let (imgs, classes) = tiny_fixture(8);
        let mut zip = zip_bytes(&[
            ("imgs.npy", &imgs, false),
            ("latents_classes.npy", &classes, false),
        ]);
        // Flip a data byte inside the first entry's payload.
        let flip_at = 30 + "imgs.npy".len() + 80;
        zip[flip_at] ^= 0xff;
        let err = read_zip(&zip).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn assemble_builds_grid_and_drops_trivial_factor() {
        let (imgs, classes) = tiny_fixture(8);
        let imgs = parse_npy(&imgs).unwrap();
        let classes = parse_npy(&classes).unwrap();
        let ds = assemble_factor_grid(&imgs, &classes, &[1, 2, 3], &["color", "a", "b"], 8).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.factor_sizes, vec![2, 3]);
        assert_eq!(ds.factor_names, vec!["a", "b"]);
        assert!(ds.is_full_grid());
        assert!(ds.images.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn assemble_rejects_shape_mismatch_with_expected_vs_found() {
        let (imgs, classes) = tiny_fixture(8);
        let imgs = parse_npy(&imgs).unwrap();
        let classes = parse_npy(&classes).unwrap();
        // Claim a larger grid than the fixture provides.
        let err = assemble_factor_grid(&imgs, &classes, &[1, 2, 4], &["color", "a", "b"], 8).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected") && msg.contains("found"), "{msg}");
    }

    #[test]
    fn load_dsprites_rejects_small_archives() {
        let (imgs, classes) = tiny_fixture(8);
        let zip = zip_bytes(&[
            ("imgs.npy", &imgs, false),
            ("latents_classes.npy", &classes, false),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fake.npz");
        std::fs::write(&path, zip).unwrap();
        let err = load_dsprites(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected (737280, 64, 64)"), "{msg}");
    }

    #[test]
    fn assemble_rejects_incomplete_grids() {
        // Duplicate one tuple so another is missing.
        let side = 4;
        let raw_sizes = [1usize, 2, 2];
        let n = 4;
        let imgs = vec![0u8; n * side * side];
        let classes: Vec<i64> = vec![0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0];
        let class_bytes: Vec<u8> = classes.iter().flat_map(|v| v.to_le_bytes()).collect();
        let imgs = parse_npy(&npy_bytes("|u1", &[n, side, side], &imgs)).unwrap();
        let classes = parse_npy(&npy_bytes("<i8", &[n, 3], &class_bytes)).unwrap();
        let err =
            assemble_factor_grid(&imgs, &classes, &raw_sizes, &["color", "a", "b"], side).unwrap_err();
        assert!(err.to_string().contains("incomplete"), "{err}");
    }
}
