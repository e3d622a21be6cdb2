//! Little-endian binary encoding used by checkpoints and buffer snapshots.
//!
//! Floats are written as their raw IEEE-754 bits, so a round trip is bit-exact.

use crate::error::{Error, Result};
use crate::nn::{AdamState, DenseNet, Linear};

pub const NET_TAG: u32 = 0x4e45_5431; // "NET1"
pub const ADAM_TAG: u32 = 0x4144_4d31; // "ADM1"

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a buffer with an 8-byte magic and a format version.
    pub fn with_header(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self::new();
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn net(&mut self, net: &DenseNet) {
        self.u32(NET_TAG);
        self.u64(net.layers().len() as u64);
        for l in net.layers() {
            self.u64(l.inputs as u64);
            self.u64(l.outputs as u64);
            self.f64s(&l.weight);
            self.f64s(&l.bias);
        }
    }

    pub fn adam(&mut self, st: &AdamState) {
        self.u32(ADAM_TAG);
        self.f64(st.lr);
        self.f64(st.beta1);
        self.f64(st.beta2);
        self.f64(st.eps);
        self.u64(st.step);
        self.u64(st.m.len() as u64);
        for (m, v) in st.m.iter().zip(&st.v) {
            self.f64s(m);
            self.f64s(v);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    /// Checks the 8-byte magic and returns the stored version.
    pub fn header(&mut self, magic: &[u8; 8]) -> Result<u32> {
        let got = self.take(8)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        self.u32()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated data: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    fn tag(&mut self, expected: u32, what: &str) -> Result<()> {
        let t = self.u32()?;
        if t != expected {
            return Err(Error::Format(format!("expected {what} section, found tag {t:#x}")));
        }
        Ok(())
    }

    pub fn net(&mut self) -> Result<DenseNet> {
        self.tag(NET_TAG, "network")?;
        let n = self.usize()?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let inputs = self.usize()?;
            let outputs = self.usize()?;
            let weight = self.f64s()?;
            let bias = self.f64s()?;
            layers.push(Linear { inputs, outputs, weight, bias });
        }
        DenseNet::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn adam(&mut self) -> Result<AdamState> {
        self.tag(ADAM_TAG, "optimizer")?;
        let lr = self.f64()?;
        let beta1 = self.f64()?;
        let beta2 = self.f64()?;
        let eps = self.f64()?;
        let step = self.u64()?;
        let n = self.usize()?;
        let mut m = Vec::with_capacity(n.min(64));
        let mut v = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let mi = self.f64s()?;
            let vi = self.f64s()?;
            if mi.len() != vi.len() {
                return Err(Error::Format("optimizer moment shapes differ".into()));
            }
            m.push(mi);
            v.push(vi);
        }
        Ok(AdamState { lr, beta1, beta2, eps, step, m, v })
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
