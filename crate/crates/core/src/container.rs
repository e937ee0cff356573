//! The binary array container shared by datasets (`.vgd`), models (`.vgm`),
//! observations (`.vgo`) and results (`.vgr`).
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "VGD1"            4 bytes
//! version u16 = 1
//! array_count u32
//! per array:
//!   name_length u16, name (UTF-8)
//!   dtype u8 (0 = f32, 1 = f64, 2 = u32)
//!   ndim u8, ndim x u64 dims
//!   row-major payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VGD1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
    U32 = 2,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::U32),
            other => Err(Error::Malformed(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::U32(_) => Dtype::U32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: ArrayData) -> Result<Self> {
        let name = name.into();
        let count = element_count(&dims)?;
        if count != data.len() as u64 {
            return Err(Error::DimensionMismatch(format!(
                "array `{name}` has dims {dims:?} but {} elements",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    pub fn f64(name: impl Into<String>, dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(name, dims.iter().map(|&d| d as u64).collect(), ArrayData::F64(data))
    }

    /// Stores f64 values narrowed to f32.
    pub fn f32_from(name: impl Into<String>, dims: &[usize], data: &[f64]) -> Result<Self> {
        let narrowed = data.iter().map(|&x| x as f32).collect();
        Self::new(name, dims.iter().map(|&d| d as u64).collect(), ArrayData::F32(narrowed))
    }

    pub fn u32(name: impl Into<String>, dims: &[usize], data: Vec<u32>) -> Result<Self> {
        Self::new(name, dims.iter().map(|&d| d as u64).collect(), ArrayData::U32(data))
    }

    /// A UTF-8 string, one byte per u32 element.
    pub fn text(name: impl Into<String>, value: &str) -> Result<Self> {
        let bytes: Vec<u32> = value.bytes().map(u32::from).collect();
        Self::u32(name, &[bytes.len()], bytes)
    }

    /// Values widened to f64 regardless of stored dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            ArrayData::F64(v) => v.clone(),
            ArrayData::U32(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn to_u32(&self) -> Result<Vec<u32>> {
        match &self.data {
            ArrayData::U32(v) => Ok(v.clone()),
            other => Err(Error::Malformed(format!(
                "array `{}` has dtype {:?}, expected u32",
                self.name,
                other.dtype()
            ))),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let bytes = self
            .to_u32()?
            .into_iter()
            .map(|b| u8::try_from(b).map_err(|_| Error::Malformed(format!("`{}` is not text", self.name))))
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| Error::Malformed(format!("`{}` is not UTF-8", self.name)))
    }

    /// Size in bytes of this array's encoded form, header included.
    pub fn encoded_len(&self) -> usize {
        2 + self.name.len() + 1 + 1 + 8 * self.dims.len() + self.data.len() * self.data.dtype().size()
    }
}

fn element_count(dims: &[u64]) -> Result<u64> {
    dims.iter().try_fold(1u64, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::DimensionOverflow(format!("dims {dims:?} overflow u64")))
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    /// f64 values of `name`, checked against the expected dims.
    pub fn f64_with_dims(&self, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
        let arr = self.get(name)?;
        let want: Vec<u64> = dims.iter().map(|&d| d as u64).collect();
        if arr.dims != want {
            return Err(Error::DimensionMismatch(format!(
                "array `{name}` has dims {:?}, expected {want:?}",
                arr.dims
            )));
        }
        Ok(arr.to_f64())
    }

    pub fn text(&self, name: &str) -> Result<String> {
        self.get(name)?.to_text()
    }

    pub fn encoded_len(&self) -> usize {
        4 + 2 + 4 + self.arrays.iter().map(NamedArray::encoded_len).sum::<usize>()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let count = u32::try_from(self.arrays.len())
            .map_err(|_| Error::DimensionOverflow("more than u32::MAX arrays".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for arr in &self.arrays {
            let name_len = u16::try_from(arr.name.len())
                .map_err(|_| Error::DimensionOverflow(format!("array name `{}` too long", arr.name)))?;
            let ndim = u8::try_from(arr.dims.len())
                .map_err(|_| Error::DimensionOverflow(format!("array `{}` has too many dims", arr.name)))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(arr.name.as_bytes())?;
            w.write_all(&[arr.data.dtype() as u8, ndim])?;
            for d in &arr.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            match &arr.data {
                ArrayData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::U32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(read_array(r, "version")?);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = u32::from_le_bytes(read_array(r, "array count")?);
        let mut arrays = Vec::new();
        for k in 0..count {
            let name_len = u16::from_le_bytes(read_array(r, "array name length")?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name, "array name")?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Malformed(format!("array {k} name is not UTF-8")))?;
            let [code, ndim] = read_array::<2>(r, "dtype/ndim")?;
            let dtype = Dtype::from_code(code)?;
            let dims = (0..ndim)
                .map(|_| read_array(r, "dims").map(u64::from_le_bytes))
                .collect::<Result<Vec<u64>>>()?;
            let count = element_count(&dims)?;
            let bytes = count
                .checked_mul(dtype.size() as u64)
                .and_then(|b| usize::try_from(b).ok())
                .ok_or_else(|| Error::DimensionOverflow(format!("array `{name}` is too large")))?;
            let payload = read_payload(r, bytes, &name)?;
            let data = match dtype {
                Dtype::F32 => ArrayData::F32(
                    payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                Dtype::F64 => ArrayData::F64(
                    payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
                Dtype::U32 => ArrayData::U32(
                    payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
                ),
            };
            arrays.push(NamedArray { name, dims, data });
        }
        Ok(Self { arrays })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { context: context.to_string() },
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read, context: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, context)?;
    Ok(buf)
}

/// Reads in bounded chunks so a corrupt header cannot trigger a huge allocation.
fn read_payload(r: &mut impl Read, bytes: usize, name: &str) -> Result<Vec<u8>> {
    const CHUNK: usize = 1 << 20;
    let mut out = Vec::with_capacity(bytes.min(CHUNK));
    let mut remaining = bytes;
    let mut buf = vec![0u8; bytes.min(CHUNK)];
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        read_exact(r, &mut buf[..n], &format!("payload of `{name}`"))?;
        out.extend_from_slice(&buf[..n]);
        remaining -= n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let mut c = Container::new();
        c.push(NamedArray::u32("a", &[2], vec![1, 2]).unwrap());
        let bytes = c.to_bytes().unwrap();
        let expected: Vec<u8> = [
            &b"VGD1"[..],
            &1u16.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u16.to_le_bytes(),
            b"a",
            &[2u8, 1u8],
            &2u64.to_le_bytes(),
            &1u32.to_le_bytes(),
            &2u32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), c.encoded_len());
    }

    #[test]
    fn distinct_errors_for_bad_inputs() {
        let mut c = Container::new();
        c.push(NamedArray::f64("x", &[3], vec![1.0, 2.0, 3.0]).unwrap());
        let bytes = c.to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Container::read_from(&mut &bad[..]), Err(Error::BadMagic { .. })));

        let mut ver = bytes.clone();
        ver[4..6].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(Container::read_from(&mut &ver[..]), Err(Error::UnsupportedVersion(7))));

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(Container::read_from(&mut &cut[..]), Err(Error::Truncated { .. })));

        let mut huge = bytes.clone();
        // dims field of the single array starts after magic, version, count,
        // name length, name, dtype and ndim.
        let off = 4 + 2 + 4 + 2 + 1 + 2;
        huge[off..off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            Container::read_from(&mut &huge[..]),
            Err(Error::DimensionOverflow(_))
        ));
    }

    #[test]
    fn text_round_trip() {
        let a = NamedArray::text("meta/prior", "parabolic σ=1.2").unwrap();
        assert_eq!(a.to_text().unwrap(), "parabolic σ=1.2");
    }

    #[test]
    fn dims_must_match_payload() {
        assert!(NamedArray::f64("x", &[2, 2], vec![0.0; 3]).is_err());
    }
}
