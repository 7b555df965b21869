//! Binary weight files.
//!
//! Layout (little endian):
//! `b"LPWT"`, `u16` version, the six [`UNetConfig`] fields as `u32`, `u32`
//! tensor count, then per tensor `u16` name length, UTF-8 name, `u8` rank,
//! `u32` dims and the `f32` payload. A trailing `u8` flag says whether the
//! optimiser state follows: `u64` step, then every first moment, then every
//! second moment, in tensor order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};

use super::{AdamState, UNetConfig, UNetParams};

const MAGIC: &[u8; 4] = b"LPWT";
const VERSION: u16 = 1;

pub fn to_bytes(params: &UNetParams<f32>, with_optimizer: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let c = params.config();
    for v in [c.levels, c.base_filters, c.conv_size, c.pool_size, c.in_channels, c.out_classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.params().len() as u32).to_le_bytes());
    for p in params.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.dims.len() as u8);
        for &d in &p.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, &p.data);
    }
    out.push(with_optimizer as u8);
    if with_optimizer {
        out.extend_from_slice(&params.adam.step.to_le_bytes());
        for m in &params.adam.m {
            put_f32s(&mut out, m);
        }
        for v in &params.adam.v {
            put_f32s(&mut out, v);
        }
    }
    out
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::WeightFormat("file is truncated".into()))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let remaining = self.0.get_ref().len() as u64 - self.0.position();
        if (n as u64) * 4 > remaining {
            return Err(Error::WeightFormat("file is truncated".into()));
        }
        (0..n).map(|_| Ok(f32::from_le_bytes(self.bytes()?))).collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<UNetParams<f32>> {
    let mut r = Reader(Cursor::new(bytes));
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::WeightFormat("not a weight file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let config = UNetConfig {
        levels: r.u32()?,
        base_filters: r.u32()?,
        conv_size: r.u32()?,
        pool_size: r.u32()?,
        in_channels: r.u32()?,
        out_classes: r.u32()?,
    };
    config
        .validate()
        .map_err(|e| Error::WeightFormat(format!("stored configuration is invalid: {e}")))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let mut name = vec![0u8; len];
        r.0.read_exact(&mut name)
            .map_err(|_| Error::WeightFormat("file is truncated".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let data = r.f32s(dims.iter().product())?;
        tensors.push((name, dims, data));
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(r.bytes()?);
            let lens: Vec<usize> = tensors.iter().map(|t| t.2.len()).collect();
            let m = lens.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
            let v = lens.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
            Some(AdamState { step, m, v })
        }
        f => return Err(Error::WeightFormat(format!("bad optimiser flag {f}"))),
    };
    if r.0.position() as usize != bytes.len() {
        return Err(Error::WeightFormat("trailing bytes after weights".into()));
    }
    UNetParams::from_named(config, tensors, adam)
}

pub fn save(params: &UNetParams<f32>, path: &Path, with_optimizer: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_bytes(params, with_optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<UNetParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetParams<f32> {
        let cfg = UNetConfig {
            levels: 2,
            base_filters: 2,
            in_channels: 2,
            ..UNetConfig::default()
        };
        let mut p = UNetParams::init(cfg, 5).unwrap();
        p.adam.step = 3;
        p.adam.m[0][0] = 0.25;
        p
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let p = small();
        assert_eq!(from_bytes(&to_bytes(&p, true)).unwrap(), p);
        let q = from_bytes(&to_bytes(&p, false)).unwrap();
        assert_eq!(q.params(), p.params());
        assert_eq!(q.adam.step, 0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/w.lpwt");
        save(&small(), &path, true).unwrap();
        assert_eq!(load(&path).unwrap(), small());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&small(), true);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::WeightFormat(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::WeightFormat(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::WeightFormat(_))));
        let mut ver = bytes;
        ver[4] = 9;
        assert!(matches!(from_bytes(&ver), Err(Error::WeightFormat(_))));
    }
}
