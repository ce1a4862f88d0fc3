//! Parameter archive.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "GLOTCKPT"
//! version      u32       1
//! precision    u8        4 (f32) or 8 (f64)
//! hash_len     u16
//! config_hash  hash_len bytes, UTF-8
//! count        u32       number of tensors
//! count × {
//!     name_len u32
//!     name     name_len bytes, UTF-8
//!     rank     u32
//!     dims     rank × u64
//!     values   product(dims) × precision bytes, IEEE-754
//! }
//! ```
//!
//! Values are written in the store's id order. At precision 8 a round trip
//! is bit-exact; at precision 4 values are rounded to `f32` on write, and a
//! second round trip of the loaded values is bit-exact.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{NumError, ParamStore, Result, Tensor};

const MAGIC: &[u8; 8] = b"GLOTCKPT";
const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn width(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub config_hash: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, precision: Precision, config_hash: &str) -> Self {
        Checkpoint {
            precision,
            config_hash: config_hash.to_string(),
            tensors: store
                .iter()
                .map(|(_, p)| (p.name().to_string(), p.value.clone()))
                .collect(),
        }
    }

    /// Copies values into a store whose parameters have the same names and
    /// shapes.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(NumError::Checkpoint(format!(
                "archive holds {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, tensor) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| NumError::Checkpoint(format!("unknown parameter {name}")))?;
            let p = store.get_mut(id);
            if p.value.shape() != tensor.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "checkpoint",
                    lhs: p.value.shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            p.value = tensor.clone();
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u8(self.precision.width())?;
        let hash = self.config_hash.as_bytes();
        let hash_len = u16::try_from(hash.len())
            .map_err(|_| NumError::Checkpoint("config hash too long".into()))?;
        out.write_u16::<LittleEndian>(hash_len)?;
        out.write_all(hash)?;
        out.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, tensor) in &self.tensors {
            out.write_u32::<LittleEndian>(name.len() as u32)?;
            out.write_all(name.as_bytes())?;
            out.write_u32::<LittleEndian>(tensor.shape().len() as u32)?;
            for &d in tensor.shape() {
                out.write_u64::<LittleEndian>(d as u64)?;
            }
            match self.precision {
                Precision::F64 => {
                    for &v in tensor.data() {
                        out.write_f64::<LittleEndian>(v)?;
                    }
                }
                Precision::F32 => {
                    for &v in tensor.data() {
                        out.write_f32::<LittleEndian>(v as f32)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Decodes an archive. Never panics on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let corrupt = |what: &str| NumError::Checkpoint(format!("corrupt archive: {what}"));

        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("version"))?;
        if version != VERSION {
            return Err(NumError::Checkpoint(format!("unsupported version {version}")));
        }
        let precision = match cur.read_u8().map_err(|_| corrupt("precision"))? {
            4 => Precision::F32,
            8 => Precision::F64,
            other => return Err(NumError::Checkpoint(format!("bad precision {other}"))),
        };
        let hash_len = cur.read_u16::<LittleEndian>().map_err(|_| corrupt("hash"))? as usize;
        let config_hash = read_string(&mut cur, hash_len).ok_or_else(|| corrupt("hash"))?;
        let count = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("count"))? as usize;

        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("name"))? as usize;
            let name = read_string(&mut cur, name_len).ok_or_else(|| corrupt("name"))?;
            let rank = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("rank"))?;
            if rank > MAX_RANK {
                return Err(corrupt("rank"));
            }
            let mut dims = Vec::with_capacity(rank as usize);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = cur.read_u64::<LittleEndian>().map_err(|_| corrupt("dims"))?;
                let d = usize::try_from(d).map_err(|_| corrupt("dims"))?;
                numel = numel.checked_mul(d).ok_or_else(|| corrupt("dims"))?;
                dims.push(d);
            }
            let width = precision.width() as usize;
            let bytes_needed = numel.checked_mul(width).ok_or_else(|| corrupt("dims"))?;
            if bytes_needed > cur.len() {
                return Err(corrupt("truncated values"));
            }
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let v = match precision {
                    Precision::F64 => cur.read_f64::<LittleEndian>(),
                    Precision::F32 => cur.read_f32::<LittleEndian>().map(f64::from),
                }
                .map_err(|_| corrupt("values"))?;
                data.push(v);
            }
            tensors.push((name, Tensor::new(&dims, data)?));
        }
        if !cur.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            precision,
            config_hash,
            tensors,
        })
    }
}

fn read_string(cur: &mut &[u8], len: usize) -> Option<String> {
    if len > cur.len() {
        return None;
    }
    let (head, tail) = cur.split_at(len);
    *cur = tail;
    String::from_utf8(head.to_vec()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore {
        let mut store = ParamStore::new();
        store
            .add_weight("reader.filters.k3", Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 1e-300, f64::MIN_POSITIVE, -7.5]).unwrap())
            .unwrap();
        store.add_bias("reader.proj.b", Tensor::row(vec![1.0, 2.0])).unwrap();
        store
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let store = sample_store();
        let ckpt = Checkpoint::from_store(&store, Precision::F64, "abc123");
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back.config_hash, "abc123");
        for ((n1, t1), (n2, t2)) in ckpt.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let a: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn apply_rejects_mismatched_names() {
        let store = sample_store();
        let mut ckpt = Checkpoint::from_store(&store, Precision::F64, "h");
        ckpt.tensors[0].0 = "nope".into();
        let mut target = sample_store();
        assert!(ckpt.apply_to(&mut target).is_err());
    }

    #[test]
    fn truncated_archives_are_errors() {
        let bytes = Checkpoint::from_store(&sample_store(), Precision::F32, "h").to_bytes();
        for cut in 0..bytes.len() {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }

    proptest! {
        #[test]
        fn f32_archives_are_stable_after_one_rounding(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut store = ParamStore::new();
            store.add_weight("w", Tensor::row(values)).unwrap();
            let once = Checkpoint::from_bytes(&Checkpoint::from_store(&store, Precision::F32, "x").to_bytes()).unwrap();
            let twice = Checkpoint::from_bytes(&once.to_bytes()).unwrap();
            prop_assert_eq!(once.to_bytes(), twice.to_bytes());
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Checkpoint::from_bytes(&bytes);
        }
    }
}
