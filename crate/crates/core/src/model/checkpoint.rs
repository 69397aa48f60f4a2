//! Binary parameter checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! "CPMU-PARAMS-1\n"  magic
//! u8                 activation tag
//! u64                number of layers L
//! L x (u64, u64)     (rows, cols) of each weight matrix
//! f64...             per layer: weights row-major, then the bias
//! ```

use std::path::Path;

use super::{Activation, ModelParams};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8] = b"CPMU-PARAMS-1\n";

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(PARAMS_MAGIC.len() + 9 + 16 * params.n_layers() + 8 * params.len());
    out.extend_from_slice(PARAMS_MAGIC);
    out.push(params.activation().tag());
    out.extend_from_slice(&(params.n_layers() as u64).to_le_bytes());
    for w in params.sizes().windows(2) {
        out.extend_from_slice(&(w[1] as u64).to_le_bytes());
        out.extend_from_slice(&(w[0] as u64).to_le_bytes());
    }
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated parameter checkpoint".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes };
    if r.take(PARAMS_MAGIC.len())? != PARAMS_MAGIC {
        return Err(Error::Format("missing CPMU-PARAMS-1 header".into()));
    }
    let activation = Activation::from_tag(r.take(1)?[0])
        .ok_or_else(|| Error::Format("unknown activation tag".into()))?;
    let n_layers = r.u64()? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut sizes = Vec::with_capacity(n_layers + 1);
    for l in 0..n_layers {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if l == 0 {
            sizes.push(cols);
        } else if sizes[l] != cols {
            return Err(Error::Format(format!("layer {l} shapes do not compose")));
        }
        sizes.push(rows);
    }
    let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if r.buf.len() != 8 * count {
        return Err(Error::Format(format!(
            "expected {count} parameters, found {} bytes",
            r.buf.len()
        )));
    }
    let values = r
        .buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::from_parts(sizes, values, activation)
}

pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    decode_params(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_shapes() {
        let p = ModelParams::zeros(&[3, 2], Activation::Tanh).unwrap();
        let bytes = encode_params(&p);
        assert!(bytes.starts_with(b"CPMU-PARAMS-1\n"));
        assert_eq!(bytes.len(), 14 + 1 + 8 + 16 + 8 * 8);
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..1000, hidden in 1usize..9) {
            let p = ModelParams::init(&[3, hidden, 4], Activation::Tanh, seed).unwrap();
            let back = decode_params(&encode_params(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
