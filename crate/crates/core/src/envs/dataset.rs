//! Reward-free transition datasets and their binary file format.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "ZOLD" | version u32 = 1 | tag_len u32 | tag bytes (UTF-8)
//! seed u64 | count u64 | state_dim u32 | action_dim u32 | has_reward u8
//! count x [ s | a | s_next | s_plus | r? ]   (all f64)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffcore::Matrix;
use crate::error::{Result, ZolError};

pub const DATASET_MAGIC: &[u8; 4] = b"ZOLD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    /// Independent dataset state used as the positive sample of the FB loss.
    pub s_plus: Vec<f64>,
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env_tag: String,
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub has_reward: bool,
    pub records: Vec<TransitionRecord>,
}

impl OfflineDataset {
    pub fn new(env_tag: &str, seed: u64, state_dim: usize, action_dim: usize) -> Self {
        Self {
            env_tag: env_tag.to_string(),
            seed,
            state_dim,
            action_dim,
            has_reward: false,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fills every `s_plus` with the `s` of a uniformly shuffled record.
    pub fn shuffle_positives(&mut self, rng: &mut impl Rng) {
        let mut perm: Vec<usize> = (0..self.records.len()).collect();
        perm.shuffle(rng);
        let states: Vec<Vec<f64>> = perm.iter().map(|&j| self.records[j].s.clone()).collect();
        for (rec, s) in self.records.iter_mut().zip(states) {
            rec.s_plus = s;
        }
    }

    /// Every `s` stacked as rows.
    pub fn states(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.state_dim);
        for r in &self.records {
            data.extend_from_slice(&r.s);
        }
        Matrix::from_vec(self.len(), self.state_dim, data)
    }

    fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let dims_ok = r.s.len() == self.state_dim
                && r.s_next.len() == self.state_dim
                && r.s_plus.len() == self.state_dim
                && r.a.len() == self.action_dim;
            if !dims_ok {
                return Err(ZolError::Shape(format!("record {i} has inconsistent dimensions")));
            }
            if r.r.is_some() != self.has_reward {
                return Err(ZolError::Shape(format!(
                    "record {i} reward presence disagrees with the dataset flag"
                )));
            }
        }
        Ok(())
    }

    fn record_width(&self) -> usize {
        3 * self.state_dim + self.action_dim + usize::from(self.has_reward)
    }

    pub fn header_len(&self) -> usize {
        4 + 4 + 4 + self.env_tag.len() + 8 + 8 + 4 + 4 + 1
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.header_len() + 8 * self.len() * self.record_width());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.env_tag.len() as u32).to_le_bytes());
        out.extend_from_slice(self.env_tag.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.action_dim as u32).to_le_bytes());
        out.push(u8::from(self.has_reward));
        for r in &self.records {
            for v in r.s.iter().chain(&r.a).chain(&r.s_next).chain(&r.s_plus) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(v) = r.r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        let magic = rd.take(4)?;
        if magic != DATASET_MAGIC {
            return Err(ZolError::format(0, "bad magic, expected \"ZOLD\""));
        }
        let version_at = rd.pos;
        let version = rd.u32()?;
        if version != DATASET_VERSION {
            return Err(ZolError::format(
                version_at as u64,
                format!("unsupported dataset version {version}"),
            ));
        }
        let tag_len = rd.u32()? as usize;
        let tag_at = rd.pos;
        let tag = std::str::from_utf8(rd.take(tag_len)?)
            .map_err(|_| ZolError::format(tag_at as u64, "env tag is not UTF-8"))?
            .to_string();
        let seed = rd.u64()?;
        let count = rd.u64()?;
        let state_dim = rd.u32()? as usize;
        let action_dim = rd.u32()? as usize;
        let flag_at = rd.pos;
        let has_reward = match rd.take(1)?[0] {
            0 => false,
            1 => true,
            v => return Err(ZolError::format(flag_at as u64, format!("bad reward flag {v}"))),
        };

        let width = 3 * state_dim + action_dim + usize::from(has_reward);
        let body = (count as usize)
            .checked_mul(width * 8)
            .ok_or_else(|| ZolError::format(rd.pos as u64, "record count overflows"))?;
        if rd.remaining() < body {
            return Err(ZolError::format(
                bytes.len() as u64,
                format!(
                    "truncated: {count} records need {body} bytes, {} present",
                    rd.remaining()
                ),
            ));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let s = rd.f64s(state_dim)?;
            let a = rd.f64s(action_dim)?;
            let s_next = rd.f64s(state_dim)?;
            let s_plus = rd.f64s(state_dim)?;
            let r = if has_reward { Some(rd.f64()?) } else { None };
            records.push(TransitionRecord {
                s,
                a,
                s_next,
                s_plus,
                r,
            });
        }
        if rd.remaining() != 0 {
            return Err(ZolError::format(rd.pos as u64, "trailing bytes after records"));
        }
        Ok(Self {
            env_tag: tag,
            seed,
            state_dim,
            action_dim,
            has_reward,
            records,
        })
    }

    /// CSV mirroring the record layout, one row per record.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut cols = Vec::new();
        for (prefix, n) in [
            ("s", self.state_dim),
            ("a", self.action_dim),
            ("s_next", self.state_dim),
            ("s_plus", self.state_dim),
        ] {
            cols.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        if self.has_reward {
            cols.push("r".into());
        }
        let _ = writeln!(out, "{}", cols.join(","));
        for r in &self.records {
            let mut vals: Vec<String> =
                r.s.iter()
                    .chain(&r.a)
                    .chain(&r.s_next)
                    .chain(&r.s_plus)
                    .map(|v| format!("{v:?}"))
                    .collect();
            if let Some(v) = r.r {
                vals.push(format!("{v:?}"));
            }
            let _ = writeln!(out, "{}", vals.join(","));
        }
        out
    }
}

pub fn write_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let bytes = dataset.to_bytes()?;
    fs::write(path, bytes).map_err(|e| ZolError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset> {
    let bytes = fs::read(path).map_err(|e| ZolError::io(path, e))?;
    OfflineDataset::from_bytes(&bytes)
}

/// Little-endian cursor that reports the byte offset of short reads.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(ZolError::format(
                self.pos as u64,
                format!("truncated: needed {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize, with_reward: bool) -> OfflineDataset {
        let mut d = OfflineDataset::new("donut", 7, 2, 2);
        d.has_reward = with_reward;
        for i in 0..n {
            let x = i as f64 * 0.01;
            d.records.push(TransitionRecord {
                s: vec![x, -x],
                a: vec![0.1, -0.05],
                s_next: vec![x + 0.1, -x],
                s_plus: vec![0.3, 0.4],
                r: with_reward.then_some(x * 2.0),
            });
        }
        d
    }

    #[test]
    fn round_trip() {
        for with_reward in [false, true] {
            let d = sample(5, with_reward);
            let bytes = d.to_bytes().unwrap();
            assert_eq!(OfflineDataset::from_bytes(&bytes).unwrap(), d);
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let d = sample(0, false);
        let bytes = d.to_bytes().unwrap();
        assert_eq!(bytes.len(), d.header_len());
        assert_eq!(bytes.len(), 37 + "donut".len());
        assert_eq!(&bytes[..4], b"ZOLD");
        assert_eq!(OfflineDataset::from_bytes(&bytes).unwrap(), d);
    }

    #[test]
    fn corrupted_magic_reports_offset_zero() {
        let mut bytes = sample(2, false).to_bytes().unwrap();
        bytes[1] = b'X';
        match OfflineDataset::from_bytes(&bytes) {
            Err(ZolError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_and_version_errors() {
        let bytes = sample(3, true).to_bytes().unwrap();
        assert!(matches!(
            OfflineDataset::from_bytes(&bytes[..bytes.len() - 3]),
            Err(ZolError::Format { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        match OfflineDataset::from_bytes(&v2) {
            Err(ZolError::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header_mirrors_layout() {
        let csv = sample(1, true).to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "s0,s1,a0,a1,s_next0,s_next1,s_plus0,s_plus1,r");
        assert_eq!(csv.lines().count(), 2);
    }

    fn arb_dataset() -> impl Strategy<Value = OfflineDataset> {
        (1usize..4, 1usize..3, any::<bool>(), any::<u64>(), 0usize..12).prop_flat_map(|(sd, ad, has_r, seed, n)| {
            let width = 3 * sd + ad + usize::from(has_r);
            proptest::collection::vec(proptest::num::f64::ANY, n * width).prop_map(move |vals| {
                let mut d = OfflineDataset::new("prop", seed, sd, ad);
                d.has_reward = has_r;
                for chunk in vals.chunks_exact(width) {
                    d.records.push(TransitionRecord {
                        s: chunk[..sd].to_vec(),
                        a: chunk[sd..sd + ad].to_vec(),
                        s_next: chunk[sd + ad..2 * sd + ad].to_vec(),
                        s_plus: chunk[2 * sd + ad..3 * sd + ad].to_vec(),
                        r: has_r.then(|| chunk[3 * sd + ad]),
                    });
                }
                d
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn bit_exact_round_trip(d in arb_dataset()) {
            let bytes = d.to_bytes().unwrap();
            let back = OfflineDataset::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
