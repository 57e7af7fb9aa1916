//! Little-endian cursor helpers shared by the checkpoint and PCA containers.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Truncated {
    pub field: &'static str,
    pub offset: usize,
    pub needed: usize,
    pub available: usize,
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

macro_rules! read_le {
    ($name:ident, $ty:ty) => {
        pub fn $name(&mut self, field: &'static str) -> Result<$ty, Truncated> {
            const N: usize = std::mem::size_of::<$ty>();
            Ok(<$ty>::from_le_bytes(
                self.take(field, N)?.try_into().expect("exact length"),
            ))
        }
    };
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, field: &'static str, n: usize) -> Result<&'a [u8], Truncated> {
        let available = self.remaining();
        if available < n {
            return Err(Truncated {
                field,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    read_le!(u8, u8);
    read_le!(u16, u16);
    read_le!(u32, u32);
    read_le!(u64, u64);
    read_le!(f64, f64);

    pub fn f32s(&mut self, field: &'static str, count: usize) -> Result<Vec<f32>, Truncated> {
        let raw = self.take(field, count.saturating_mul(4))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn f64s(&mut self, field: &'static str, count: usize) -> Result<Vec<f64>, Truncated> {
        let raw = self.take(field, count.saturating_mul(8))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("value fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}
