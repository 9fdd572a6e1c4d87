//! Single-file NIfTI-1 (`.nii`, magic `n+1\0`) subset.
//!
//! Supported: uncompressed, 3D or 4D, datatypes uint8 / int16 / float32 /
//! float64, either byte order on read. The writer always emits
//! little-endian with `vox_offset = 352`: float32 for images, uint8 for
//! labels. Label files carry `intent_code = 1002` (NIFTI_INTENT_LABEL)
//! and the foreground class count in `intent_p1`.
//!
//! Axis mapping: NIfTI stores `dim[1]` (x) fastest. Our volumes are
//! row-major `(D, H, W)` with W fastest, so `W = dim[1]`, `H = dim[2]`,
//! `D = dim[3]`, and a 4th axis `dim[4]` is the slowest-varying
//! modality / class-grid index. The flat voxel order is identical.

use std::path::Path;

use super::{voxel_count, ImageVolume, LabelData, LabelVolume, Shape3};
use crate::error::{Error, NiftiError, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const LABEL_INTENT: i16 = 1002;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NiftiVolume {
    Image(ImageVolume),
    Labels(LabelVolume),
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[off..off + N]);
        if self.endian == Endian::Big {
            a.reverse();
        }
        a
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.arr(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.arr(off))
    }
    fn f64(&self, off: usize) -> f64 {
        f64::from_le_bytes(self.arr(off))
    }
}

struct Writer {
    bytes: Vec<u8>,
    endian: Endian,
}

impl Writer {
    fn put(&mut self, off: usize, mut le: Vec<u8>) {
        if self.endian == Endian::Big {
            le.reverse();
        }
        self.bytes[off..off + le.len()].copy_from_slice(&le);
    }
    fn i16(&mut self, off: usize, v: i16) {
        self.put(off, v.to_le_bytes().to_vec());
    }
    fn i32(&mut self, off: usize, v: i32) {
        self.put(off, v.to_le_bytes().to_vec());
    }
    fn f32(&mut self, off: usize, v: f32) {
        self.put(off, v.to_le_bytes().to_vec());
    }
}

pub fn read_nifti1(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti1(&bytes)
}

pub fn write_nifti1(volume: &NiftiVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti1(volume, Endian::Little)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_nifti1(bytes: &[u8]) -> Result<NiftiVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            expected: HEADER_SIZE,
            actual: bytes.len(),
        }
        .into());
    }
    let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(NiftiError::BadSizeofHdr(i32::from_le_bytes(raw)).into());
    };
    let r = Reader { bytes, endian };

    let magic = [bytes[344], bytes[345], bytes[346], bytes[347]];
    if &magic == b"ni1\0" {
        return Err(NiftiError::DetachedHeader.into());
    }
    if &magic != b"n+1\0" {
        return Err(NiftiError::BadMagic(magic).into());
    }

    let rank = r.i16(40);
    if rank != 3 && rank != 4 {
        return Err(NiftiError::BadRank(rank).into());
    }
    let mut dims = [1usize; 4];
    for (i, d) in dims.iter_mut().enumerate().take(rank as usize) {
        let v = r.i16(42 + 2 * i);
        if v < 1 {
            return Err(NiftiError::DimensionOverflow {
                field: format!("dim[{}]", i + 1),
                value: v.into(),
            }
            .into());
        }
        *d = v as usize;
    }
    let shape: Shape3 = [dims[2], dims[1], dims[0]];
    let frames = dims[3];

    let datatype = r.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(NiftiError::UnsupportedDatatype(other).into()),
    };
    let bitpix = r.i16(72);
    if bitpix as usize != width * 8 {
        return Err(NiftiError::BitpixMismatch { datatype, bitpix }.into());
    }

    let mut spacing = [1.0; 3];
    for i in 1..=3 {
        let v = r.f32(76 + 4 * i);
        if !(v > 0.0) {
            return Err(NiftiError::BadSpacing { index: i, value: v }.into());
        }
        spacing[3 - i] = f64::from(v);
    }

    let vox_offset = r.f32(108);
    if !(vox_offset >= VOX_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(NiftiError::BadVoxOffset(vox_offset).into());
    }
    let offset = vox_offset as usize;
    let count = voxel_count(shape)
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| NiftiError::DimensionOverflow {
            field: "dim".into(),
            value: i64::MAX,
        })?;
    let n = count / width;
    let needed = offset.checked_add(count).ok_or_else(|| NiftiError::DimensionOverflow {
        field: "dim".into(),
        value: i64::MAX,
    })?;
    if bytes.len() < needed {
        return Err(NiftiError::Truncated {
            expected: needed,
            actual: bytes.len(),
        }
        .into());
    }

    let values: Vec<f64> = (0..n)
        .map(|i| {
            let off = offset + i * width;
            match datatype {
                DT_UINT8 => f64::from(bytes[off]),
                DT_INT16 => f64::from(r.i16(off)),
                DT_FLOAT32 => f64::from(r.f32(off)),
                _ => r.f64(off),
            }
        })
        .collect();

    let intent = r.i16(68);
    if intent == LABEL_INTENT {
        let declared = r.f32(56);
        let to_id = |(v, x): (usize, &f64)| -> Result<u16> {
            if x.fract() != 0.0 || *x < 0.0 || *x > f64::from(u16::MAX) {
                return Err(NiftiError::BadLabel { voxel: v, value: *x }.into());
            }
            Ok(*x as u16)
        };
        let labels = if rank == 3 {
            let ids: Vec<u16> = values.iter().enumerate().map(to_id).collect::<Result<_>>()?;
            let max_id = ids.iter().copied().max().unwrap_or(0) as usize;
            let r_declared = if declared >= 0.0 && declared.fract() == 0.0 { declared as usize } else { 0 };
            LabelVolume::exclusive(shape, max_id.max(r_declared), ids)?
        } else {
            let per = voxel_count(shape);
            let mut grids = Vec::with_capacity(frames);
            for f in 0..frames {
                let g: Vec<u8> = values[f * per..(f + 1) * per]
                    .iter()
                    .enumerate()
                    .map(|(v, x)| match *x {
                        0.0 => Ok(0),
                        1.0 => Ok(1),
                        _ => Err(Error::from(NiftiError::BadLabel { voxel: f * per + v, value: *x })),
                    })
                    .collect::<Result<_>>()?;
                grids.push(g);
            }
            LabelVolume::multi_label(shape, grids)?
        };
        return Ok(NiftiVolume::Labels(labels.with_spacing(spacing)?));
    }

    let slope = f64::from(r.f32(112));
    let inter = f64::from(r.f32(116));
    let values = if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        values.into_iter().map(|v| v * slope + inter).collect()
    } else {
        values
    };
    Ok(NiftiVolume::Image(ImageVolume::new(shape, frames, values, spacing)?))
}

/// Serializes a volume. The public writer always uses little-endian;
/// big-endian output exists for interoperability testing.
pub fn encode_nifti1(volume: &NiftiVolume, endian: Endian) -> Result<Vec<u8>> {
    let (shape, frames, spacing) = match volume {
        NiftiVolume::Image(v) => (v.shape(), v.modalities(), v.spacing()),
        NiftiVolume::Labels(l) => {
            let frames = match l.data() {
                LabelData::Exclusive(_) => 1,
                LabelData::MultiLabel(g) => g.len().max(1),
            };
            (l.shape(), frames, l.spacing())
        }
    };
    let four_d = match volume {
        NiftiVolume::Image(v) => v.modalities() > 1,
        NiftiVolume::Labels(l) => l.mode() == super::LabelMode::MultiLabel,
    };
    let dims = [shape[2], shape[1], shape[0], frames];
    for (i, &d) in dims.iter().enumerate() {
        if d > i16::MAX as usize {
            return Err(NiftiError::DimensionOverflow {
                field: format!("dim[{}]", i + 1),
                value: d as i64,
            }
            .into());
        }
    }
    let (datatype, width) = match volume {
        NiftiVolume::Image(_) => (DT_FLOAT32, 4),
        NiftiVolume::Labels(_) => (DT_UINT8, 1),
    };
    let n = voxel_count(shape) * frames;
    let mut w = Writer {
        bytes: vec![0u8; VOX_OFFSET + n * width],
        endian,
    };
    w.i32(0, HEADER_SIZE as i32);
    w.i16(40, if four_d { 4 } else { 3 });
    for (i, &d) in dims.iter().enumerate() {
        if i < 3 || four_d {
            w.i16(42 + 2 * i, d as i16);
        }
    }
    for i in (if four_d { 5 } else { 4 })..=7 {
        w.i16(42 + 2 * i - 2, 1);
    }
    w.i16(70, datatype);
    w.i16(72, (width * 8) as i16);
    w.f32(76, 1.0);
    for i in 1..=3 {
        w.f32(76 + 4 * i, spacing[3 - i] as f32);
    }
    w.f32(108, VOX_OFFSET as f32);
    w.f32(112, 1.0);
    w.bytes[123] = 2; // xyzt_units: millimetres
    w.bytes[344..348].copy_from_slice(b"n+1\0");

    match volume {
        NiftiVolume::Image(v) => {
            for (i, &x) in v.data().iter().enumerate() {
                w.f32(VOX_OFFSET + 4 * i, x as f32);
            }
        }
        NiftiVolume::Labels(l) => {
            w.i16(68, LABEL_INTENT);
            w.f32(56, l.num_foreground() as f32);
            match l.data() {
                LabelData::Exclusive(ids) => {
                    for (i, &id) in ids.iter().enumerate() {
                        w.bytes[VOX_OFFSET + i] = u8::try_from(id).map_err(|_| NiftiError::BadLabel {
                            voxel: i,
                            value: f64::from(id),
                        })?;
                    }
                }
                LabelData::MultiLabel(grids) => {
                    let per = voxel_count(shape);
                    for (f, g) in grids.iter().enumerate() {
                        w.bytes[VOX_OFFSET + f * per..VOX_OFFSET + (f + 1) * per].copy_from_slice(g);
                    }
                }
            }
        }
    }
    Ok(w.bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_labels() -> LabelVolume {
        LabelVolume::exclusive([4, 4, 4], 63, (0..64).collect()).unwrap()
    }

    #[test]
    fn uint8_ramp_round_trips_byte_identically() {
        let vol = NiftiVolume::Labels(ramp_labels());
        let a = encode_nifti1(&vol, Endian::Little).unwrap();
        let back = decode_nifti1(&a).unwrap();
        assert_eq!(back, vol);
        assert_eq!(encode_nifti1(&back, Endian::Little).unwrap(), a);
    }

    #[test]
    fn big_endian_reads_identically() {
        let img = ImageVolume::new([2, 3, 4], 2, (0..48).map(|i| i as f64 * 0.25 - 3.0).collect(), [1.0, 2.0, 0.5])
            .unwrap();
        let vol = NiftiVolume::Image(img);
        let le = decode_nifti1(&encode_nifti1(&vol, Endian::Little).unwrap()).unwrap();
        let be_bytes = encode_nifti1(&vol, Endian::Big).unwrap();
        assert_eq!(&be_bytes[0..4], &348i32.to_be_bytes());
        assert_eq!(decode_nifti1(&be_bytes).unwrap(), le);
    }

    #[test]
    fn detached_header_rejected() {
        let mut b = encode_nifti1(&NiftiVolume::Labels(ramp_labels()), Endian::Little).unwrap();
        b[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_nifti1(&b), Err(Error::Nifti(NiftiError::DetachedHeader))));
        b[344..348].copy_from_slice(b"abcd");
        assert!(matches!(decode_nifti1(&b), Err(Error::Nifti(NiftiError::BadMagic(_)))));
    }

    #[test]
    fn header_faults_name_their_field() {
        let good = encode_nifti1(&NiftiVolume::Labels(ramp_labels()), Endian::Little).unwrap();
        let mut b = good.clone();
        b[70..72].copy_from_slice(&8i16.to_le_bytes());
        let e = decode_nifti1(&b).unwrap_err().to_string();
        assert!(e.contains("datatype"), "{e}");
        let e = decode_nifti1(&good[..400]).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");
        let mut b = good.clone();
        b[44..46].copy_from_slice(&0i16.to_le_bytes());
        let e = decode_nifti1(&b).unwrap_err().to_string();
        assert!(e.contains("dim[2]"), "{e}");
        let mut b = good;
        b[0..4].copy_from_slice(&100i32.to_le_bytes());
        assert!(decode_nifti1(&b).unwrap_err().to_string().contains("sizeof_hdr"));
    }

    #[test]
    fn class_255_preserved_and_overflow_rejected() {
        let mut ids = vec![0u16; 8];
        ids[3] = 255;
        let l = LabelVolume::exclusive([2, 2, 2], 255, ids).unwrap();
        let back = decode_nifti1(&encode_nifti1(&NiftiVolume::Labels(l.clone()), Endian::Little).unwrap()).unwrap();
        assert_eq!(back, NiftiVolume::Labels(l));

        let big = LabelVolume::exclusive([40000, 1, 1], 0, vec![0; 40000]).unwrap();
        let e = encode_nifti1(&NiftiVolume::Labels(big), Endian::Little).unwrap_err();
        assert!(matches!(e, Error::Nifti(NiftiError::DimensionOverflow { .. })));
    }

    #[test]
    fn int16_and_float64_are_readable() {
        // hand-build an int16 image header from a float32 one
        let img = ImageVolume::new([1, 1, 3], 1, vec![1.0, -2.0, 300.0], [1.0; 3]).unwrap();
        let mut b = encode_nifti1(&NiftiVolume::Image(img.clone()), Endian::Little).unwrap();
        b[70..72].copy_from_slice(&DT_INT16.to_le_bytes());
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        b.truncate(VOX_OFFSET);
        for v in [1i16, -2, 300] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(decode_nifti1(&b).unwrap(), NiftiVolume::Image(img.clone()));

        b[70..72].copy_from_slice(&DT_FLOAT64.to_le_bytes());
        b[72..74].copy_from_slice(&64i16.to_le_bytes());
        b.truncate(VOX_OFFSET);
        for v in [1f64, -2.0, 300.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(decode_nifti1(&b).unwrap(), NiftiVolume::Image(img));
    }

    #[test]
    fn multi_label_grids_round_trip() {
        let l = LabelVolume::multi_label([1, 2, 2], vec![vec![1, 0, 0, 1], vec![1, 1, 0, 0]]).unwrap();
        let vol = NiftiVolume::Labels(l);
        let bytes = encode_nifti1(&vol, Endian::Little).unwrap();
        assert_eq!(decode_nifti1(&bytes).unwrap(), vol);
    }
}
