//! Single-file NIfTI-1 (`.nii` / `.nii.gz`) reading and writing.
//!
//! Only three spatial dimensions are supported (a trailing singleton fourth
//! dimension is accepted on read). Geometry comes from the sform when its
//! code is non-zero, otherwise from the qform, otherwise from pixdim alone.
//! Written files carry both an sform and a qform; the affine is stored as
//! float32, as the format requires.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{default_class_names, Geometry, LabelVolume, LesionMask, Mat4, ScalarVolume, Volume, IDENTITY4};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

/// What `read_nifti` found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl AnyVolume {
    pub fn geom(&self) -> &Geometry {
        match self {
            AnyVolume::Scalar(v) => v.geom(),
            AnyVolume::Label(v) => v.geom(),
        }
    }

    pub fn into_scalar(self) -> ScalarVolume {
        match self {
            AnyVolume::Scalar(v) => v,
            AnyVolume::Label(v) => v.to_scalar(),
        }
    }

    /// Integer-valued payloads only; float files qualify when every value is
    /// a non-negative integer that fits in 16 bits.
    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Label(v) => Ok(v),
            AnyVolume::Scalar(v) => {
                if let Some(bad) = v
                    .data()
                    .iter()
                    .find(|x| !(x.fract() == 0.0 && **x >= 0.0 && **x <= u16::MAX as f32))
                {
                    return Err(Error::InvalidArgument(format!(
                        "value {bad} is not a valid label"
                    )));
                }
                LabelVolume::from_labels(v.map(|&x| x as u16))
            }
        }
    }

    /// Non-zero voxels are foreground.
    pub fn into_mask(self) -> LesionMask {
        match self {
            AnyVolume::Scalar(v) => v.map(|&x| x != 0.0),
            AnyVolume::Label(v) => v.labels().map(|&l| l != 0),
        }
    }
}

/// Anything that can be written as a NIfTI payload.
pub trait ToNifti {
    fn geometry(&self) -> &Geometry;
    fn datatype(&self) -> i16;
    fn write_payload(&self, out: &mut Vec<u8>);
}

impl ToNifti for ScalarVolume {
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
    fn datatype(&self) -> i16 {
        DT_FLOAT32
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        for &v in self.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl ToNifti for LesionMask {
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
    fn datatype(&self) -> i16 {
        DT_UINT8
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        out.extend(self.data().iter().map(|&b| b as u8));
    }
}

impl ToNifti for LabelVolume {
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
    fn datatype(&self) -> i16 {
        match self.k() {
            k if k <= 256 => DT_UINT8,
            k if k <= i16::MAX as usize + 1 => DT_INT16,
            _ => DT_INT32,
        }
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        match self.datatype() {
            DT_UINT8 => out.extend(self.data().iter().map(|&l| l as u8)),
            DT_INT16 => {
                for &l in self.data() {
                    out.extend_from_slice(&(l as i16).to_le_bytes());
                }
            }
            _ => {
                for &l in self.data() {
                    out.extend_from_slice(&(l as i32).to_le_bytes());
                }
            }
        }
    }
}

impl ToNifti for AnyVolume {
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
    fn datatype(&self) -> i16 {
        match self {
            AnyVolume::Scalar(v) => v.datatype(),
            AnyVolume::Label(v) => v.datatype(),
        }
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            AnyVolume::Scalar(v) => v.write_payload(out),
            AnyVolume::Label(v) => v.write_payload(out),
        }
    }
}

fn bitpix(datatype: i16) -> i16 {
    match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        DT_INT32 | DT_FLOAT32 => 32,
        DT_FLOAT64 => 64,
        _ => 0,
    }
}

fn is_gz_path(path: &Path) -> bool {
    path.extension().map(|e| e.eq_ignore_ascii_case("gz")).unwrap_or(false)
}

pub fn write_nifti<V: ToNifti + ?Sized>(vol: &V, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_nifti_bytes(vol, is_gz_path(path))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serialized file contents. Gzip output is deterministic (no timestamp).
pub fn write_nifti_bytes<V: ToNifti + ?Sized>(vol: &V, gzip: bool) -> Result<Vec<u8>> {
    let geom = vol.geometry();
    let mut raw = Vec::with_capacity(VOX_OFFSET + geom.n_voxels() * 4);
    raw.extend_from_slice(&encode_header(geom, vol.datatype()));
    raw.extend_from_slice(&[0u8; 4]);
    vol.write_payload(&mut raw);
    if !gzip {
        return Ok(raw);
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::new(6));
    enc.write_all(&raw).and_then(|_| enc.try_finish()).map_err(|e| Error::io("<gzip>", e))?;
    enc.finish().map_err(|e| Error::io("<gzip>", e))
}

fn encode_header(geom: &Geometry, datatype: i16) -> [u8; HEADER_SIZE] {
    let mut h = [0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    let dims = geom.dims();
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..42 + 2 * i], *d);
    }
    LittleEndian::write_i16(&mut h[70..72], datatype);
    LittleEndian::write_i16(&mut h[72..74], bitpix(datatype));

    let affine = geom.affine();
    let q = affine_to_quatern(affine);
    let spacing = geom.spacing();
    let pixdim: [f32; 8] = [
        q.qfac as f32,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..80 + 4 * i], *p);
    }
    LittleEndian::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..116], 1.0);
    LittleEndian::write_f32(&mut h[116..120], 0.0);
    // mm
    h[123] = 2;
    let descrip = b"lesionsynth";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    LittleEndian::write_i16(&mut h[252..254], 1);
    LittleEndian::write_i16(&mut h[254..256], 1);
    let qv = [q.b, q.c, q.d, affine[0][3], affine[1][3], affine[2][3]];
    for (i, v) in qv.iter().enumerate() {
        LittleEndian::write_f32(&mut h[256 + 4 * i..260 + 4 * i], *v as f32);
    }
    for row in 0..3 {
        for col in 0..4 {
            let off = 280 + 16 * row + 4 * col;
            LittleEndian::write_f32(&mut h[off..off + 4], affine[row][col] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti_bytes(&bytes)
}

pub fn read_nifti_bytes(bytes: &[u8]) -> Result<AnyVolume> {
    let owned;
    let bytes = if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptHeader(format!("gzip stream: {e}")))?;
        owned = out;
        &owned[..]
    } else {
        bytes
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::CorruptHeader(format!("file too small ({} bytes)", bytes.len())));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        decode::<LittleEndian>(bytes)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        decode::<BigEndian>(bytes)
    } else {
        Err(Error::CorruptHeader("sizeof_hdr is not 348".into()))
    }
}

fn decode<B: ByteOrder>(b: &[u8]) -> Result<AnyVolume> {
    let magic = &b[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::CorruptHeader("bad magic".into()));
    }
    if magic == b"ni1\0" {
        return Err(Error::CorruptHeader("two-file NIfTI (.hdr/.img) is not supported".into()));
    }
    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&b[40 + 2 * i..42 + 2 * i])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::CorruptHeader(format!("dim[0] = {ndim}")));
    }
    if ndim > 4 || (ndim == 4 && dim[4] != 1) {
        return Err(Error::UnsupportedDimensionality(format!(
            "dim[0] = {ndim}, only 3 spatial dimensions are supported"
        )));
    }
    let mut dims = [1usize; 3];
    for a in 0..ndim.min(3) as usize {
        if dim[a + 1] <= 0 {
            return Err(Error::CorruptHeader(format!("dim[{}] = {}", a + 1, dim[a + 1])));
        }
        dims[a] = dim[a + 1] as usize;
    }
    let datatype = B::read_i16(&b[70..72]);
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let pixdim: Vec<f64> = (0..8).map(|i| B::read_f32(&b[76 + 4 * i..80 + 4 * i]) as f64).collect();
    let vox_offset = B::read_f32(&b[108..112]);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::CorruptHeader(format!("vox_offset = {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = B::read_f32(&b[112..116]) as f64;
    let inter = B::read_f32(&b[116..120]) as f64;
    let qform_code = B::read_i16(&b[252..254]);
    let sform_code = B::read_i16(&b[254..256]);

    let affine = if sform_code > 0 {
        let mut a = IDENTITY4;
        for (row, arow) in a.iter_mut().enumerate().take(3) {
            for (col, v) in arow.iter_mut().enumerate() {
                let off = 280 + 16 * row + 4 * col;
                *v = B::read_f32(&b[off..off + 4]) as f64;
            }
        }
        a
    } else if qform_code > 0 {
        let q: Vec<f64> = (0..6).map(|i| B::read_f32(&b[256 + 4 * i..260 + 4 * i]) as f64).collect();
        quatern_to_affine(q[0], q[1], q[2], [q[3], q[4], q[5]], [pixdim[1], pixdim[2], pixdim[3]], pixdim[0])
    } else {
        let mut a = IDENTITY4;
        for i in 0..3 {
            a[i][i] = if pixdim[i + 1] > 0.0 { pixdim[i + 1] } else { 1.0 };
        }
        a
    };
    let geom = Geometry::new(dims, affine)?;

    let n = geom.n_voxels();
    let need = vox_offset + n * elem;
    if b.len() < need {
        return Err(Error::CorruptHeader(format!(
            "payload truncated: need {need} bytes, have {}",
            b.len()
        )));
    }
    let payload = &b[vox_offset..need];
    let scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);

    let ints: Option<Vec<i64>> = match datatype {
        DT_UINT8 => Some(payload.iter().map(|&v| v as i64).collect()),
        DT_INT16 => Some(payload.chunks_exact(2).map(|c| B::read_i16(c) as i64).collect()),
        DT_INT32 => Some(payload.chunks_exact(4).map(|c| B::read_i32(c) as i64).collect()),
        _ => None,
    };
    if let Some(ints) = ints {
        if !scaled && ints.iter().all(|&v| (0..=u16::MAX as i64).contains(&v)) {
            let k = ints.iter().copied().max().unwrap_or(0) as usize + 1;
            let data: Vec<u16> = ints.into_iter().map(|v| v as u16).collect();
            return Ok(AnyVolume::Label(LabelVolume::new(geom, data, default_class_names(k.max(2)))?));
        }
        let (s, i) = if scaled { (slope, inter) } else { (1.0, 0.0) };
        let data = ints.into_iter().map(|v| (v as f64 * s + i) as f32).collect();
        return Ok(AnyVolume::Scalar(Volume::new(geom, data)?));
    }
    let floats: Vec<f64> = match datatype {
        DT_FLOAT32 => payload.chunks_exact(4).map(|c| B::read_f32(c) as f64).collect(),
        _ => payload.chunks_exact(8).map(B::read_f64).collect(),
    };
    let data: Vec<f32> = if scaled {
        floats.into_iter().map(|v| (v * slope + inter) as f32).collect()
    } else {
        floats.into_iter().map(|v| v as f32).collect()
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptHeader("non-finite voxel values".into()));
    }
    Ok(AnyVolume::Scalar(Volume::new(geom, data)?))
}

struct Quatern {
    b: f64,
    c: f64,
    d: f64,
    qfac: f64,
}

fn quatern_to_affine(b: f64, c: f64, d: f64, offset: [f64; 3], pix: [f64; 3], qfac: f64) -> Mat4 {
    // quaternion components are stored as float32, so a near-zero real part
    // has to be snapped rather than recovered from 1 - |v|^2
    let w2 = 1.0 - (b * b + c * c + d * d);
    let (a, b, c, d) = if w2 < 1e-6 {
        let n = (b * b + c * c + d * d).sqrt();
        (0.0, b / n, c / n, d / n)
    } else {
        (w2.sqrt(), b, c, d)
    };
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let qfac = if qfac < 0.0 { -1.0 } else { 1.0 };
    let scale = [
        if pix[0] > 0.0 { pix[0] } else { 1.0 },
        if pix[1] > 0.0 { pix[1] } else { 1.0 },
        if pix[2] > 0.0 { pix[2] } else { 1.0 } * qfac,
    ];
    let mut m = IDENTITY4;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scale[j];
        }
        m[i][3] = offset[i];
    }
    m
}

/// Rotation part of the affine as a unit quaternion (nearest rotation for
/// sheared affines, after column normalization).
fn affine_to_quatern(m: &Mat4) -> Quatern {
    let mut r = [[0.0f64; 3]; 3];
    for j in 0..3 {
        let n = (0..3).map(|i| m[i][j] * m[i][j]).sum::<f64>().sqrt();
        for i in 0..3 {
            r[i][j] = m[i][j] / n;
        }
    }
    let mut qfac = 1.0;
    if super::det3(&r) < 0.0 {
        qfac = -1.0;
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
    }
    let trace = r[0][0] + r[1][1] + r[2][2];
    let (a, b, c, d);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        a = 0.25 * s;
        b = (r[2][1] - r[1][2]) / s;
        c = (r[0][2] - r[2][0]) / s;
        d = (r[1][0] - r[0][1]) / s;
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        a = (r[2][1] - r[1][2]) / s;
        b = 0.25 * s;
        c = (r[0][1] + r[1][0]) / s;
        d = (r[0][2] + r[2][0]) / s;
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        a = (r[0][2] - r[2][0]) / s;
        b = (r[0][1] + r[1][0]) / s;
        c = 0.25 * s;
        d = (r[1][2] + r[2][1]) / s;
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        a = (r[1][0] - r[0][1]) / s;
        b = (r[0][2] + r[2][0]) / s;
        c = (r[1][2] + r[2][1]) / s;
        d = 0.25 * s;
    }
    // the format stores only b, c, d and assumes a >= 0
    let sign = if a < 0.0 { -1.0 } else { 1.0 };
    Quatern {
        b: b * sign,
        c: c * sign,
        d: d * sign,
        qfac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oblique_geom() -> Geometry {
        // 90° rotation about z, x flipped, anisotropic spacing
        let a = [
            [0.0, -2.0, 0.0, 12.5],
            [-1.0, 0.0, 0.0, -30.0],
            [0.0, 0.0, 3.0, 4.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Geometry::new([4, 3, 2], a).unwrap()
    }

    #[test]
    fn qform_encodes_the_same_affine() {
        let g = oblique_geom();
        let q = affine_to_quatern(g.affine());
        let a = g.affine();
        let back = quatern_to_affine(q.b, q.c, q.d, [a[0][3], a[1][3], a[2][3]], g.spacing(), q.qfac);
        for i in 0..3 {
            for j in 0..4 {
                assert!((back[i][j] - a[i][j]).abs() < 1e-9, "{back:?} vs {a:?}");
            }
        }
    }

    #[test]
    fn qform_fallback_when_sform_missing() {
        let g = oblique_geom();
        let v = Volume::filled(g.clone(), 1.5f32);
        let mut bytes = write_nifti_bytes(&v, false).unwrap();
        LittleEndian::write_i16(&mut bytes[254..256], 0);
        let back = read_nifti_bytes(&bytes).unwrap();
        assert!(back.geom().approx_eq(&g, 1e-5), "{:?} vs {:?}", back.geom(), g);
    }

    #[test]
    fn unsupported_datatype() {
        let v = Volume::filled(Geometry::isotropic([2, 2, 2]), 0.0f32);
        let mut bytes = write_nifti_bytes(&v, false).unwrap();
        LittleEndian::write_i16(&mut bytes[70..72], 32);
        assert!(matches!(read_nifti_bytes(&bytes), Err(Error::UnsupportedDatatype(32))));
    }

    #[test]
    fn dim5_is_rejected() {
        let v = Volume::filled(Geometry::isotropic([2, 2, 2]), 0.0f32);
        let mut bytes = write_nifti_bytes(&v, false).unwrap();
        LittleEndian::write_i16(&mut bytes[40..42], 5);
        let err = read_nifti_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported dimensionality"), "{err}");
    }

    #[test]
    fn singleton_fourth_dim_accepted() {
        let v = Volume::filled(Geometry::isotropic([2, 2, 2]), 3.0f32);
        let mut bytes = write_nifti_bytes(&v, false).unwrap();
        LittleEndian::write_i16(&mut bytes[40..42], 4);
        assert!(read_nifti_bytes(&bytes).is_ok());
        LittleEndian::write_i16(&mut bytes[48..50], 2);
        assert!(read_nifti_bytes(&bytes).is_err());
    }

    #[test]
    fn truncated_and_garbage_inputs() {
        assert!(matches!(read_nifti_bytes(&[0u8; 10]), Err(Error::CorruptHeader(_))));
        assert!(matches!(read_nifti_bytes(&[7u8; 400]), Err(Error::CorruptHeader(_))));
        let v = Volume::filled(Geometry::isotropic([4, 4, 4]), 0.0f32);
        let bytes = write_nifti_bytes(&v, false).unwrap();
        assert!(matches!(read_nifti_bytes(&bytes[..400]), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn singular_sform_is_an_error() {
        let v = Volume::filled(Geometry::isotropic([2, 2, 2]), 0.0f32);
        let mut bytes = write_nifti_bytes(&v, false).unwrap();
        for off in [280, 284, 288] {
            LittleEndian::write_f32(&mut bytes[off..off + 4], 0.0);
        }
        assert!(matches!(read_nifti_bytes(&bytes), Err(Error::SingularAffine)));
    }

    #[test]
    fn scaled_integers_become_scalars() {
        let lv = LabelVolume::new(Geometry::isotropic([2, 1, 1]), vec![1, 3], default_class_names(4)).unwrap();
        let mut bytes = write_nifti_bytes(&lv, false).unwrap();
        LittleEndian::write_f32(&mut bytes[112..116], 0.5);
        LittleEndian::write_f32(&mut bytes[116..120], 1.0);
        match read_nifti_bytes(&bytes).unwrap() {
            AnyVolume::Scalar(s) => assert_eq!(s.data(), &[1.5, 2.5]),
            other => panic!("expected scalar, got {other:?}"),
        }
    }
}
