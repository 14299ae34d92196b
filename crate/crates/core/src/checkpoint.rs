//! Named-array checkpoint archive with an embedded JSON config.
//!
//! ```text
//! magic "SLKC" | version u16 | kind: u32 len + utf8 | config: u32 len + json
//! count u32 | per array: u32 name len + utf8, u32 ndim, ndim x u32 dims, f64 data
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, FormatError, Result};
use crate::nn::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"SLKC";
const VERSION: u16 = 1;

pub fn encode<C: Serialize>(kind: &str, config: &C, params: &ParamSet) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(config).map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_bytes(&mut out, kind.as_bytes());
    put_bytes(&mut out, &json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated {
            needed: self.at.saturating_add(n),
            found: self.buf.len(),
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
}

/// Decodes an archive, checking that it holds a `kind` checkpoint.
pub fn decode<C: DeserializeOwned>(kind: &str, buf: &[u8]) -> Result<(C, ParamSet)> {
    let mut r = Reader { buf, at: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let found = String::from_utf8_lossy(r.bytes()?).into_owned();
    if found != kind {
        return Err(FormatError::Field(format!("expected a {kind} checkpoint, found {found}")).into());
    }
    let config: C = serde_json::from_slice(r.bytes()?).map_err(|e| FormatError::Field(e.to_string()))?;
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| FormatError::Field(e.to_string()))?;
        let ndim = r.u32()?;
        let shape: Vec<usize> = (0..ndim).map(|_| r.u32()).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(8).ok_or_else(|| FormatError::Shape(format!("{name}: {shape:?}")))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.id(&name).is_some() {
            return Err(FormatError::Field(format!("duplicate array {name}")).into());
        }
        params.insert(name, Tensor::from_vec(&shape, data));
    }
    if r.at != buf.len() {
        return Err(FormatError::Shape(format!("{} trailing bytes", buf.len() - r.at)).into());
    }
    if !params.all_finite() {
        return Err(FormatError::Field("non-finite parameter".into()).into());
    }
    Ok((config, params))
}

pub fn save<C: Serialize>(path: impl AsRef<Path>, kind: &str, config: &C, params: &ParamSet) -> Result<()> {
    fs::write(path, encode(kind, config, params)?)?;
    Ok(())
}

pub fn load<C: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<(C, ParamSet)> {
    decode(kind, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_kind_check() {
        let mut p = ParamSet::new();
        p.insert("a.w", Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 3.25, 1e-300, -0.0, 7.0]));
        p.insert("a.b", Tensor::scalar(0.1));
        let bytes = encode("test", &vec![1u32, 2], &p).unwrap();
        let (cfg, back): (Vec<u32>, ParamSet) = decode("test", &bytes).unwrap();
        assert_eq!(cfg, vec![1, 2]);
        assert_eq!(back.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect::<Vec<_>>(),
            p.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect::<Vec<_>>());
        assert!(decode::<Vec<u32>>("other", &bytes).is_err());
        assert!(matches!(decode::<Vec<u32>>("test", &bytes[..bytes.len() - 3]), Err(Error::Format(FormatError::Truncated { .. }))));
    }
}
