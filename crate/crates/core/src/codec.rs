//! Feature compression for transmission: learnable channel reduction,
//! activation-ranked spatial selection with uniform sub-sampling, the
//! `COREM01` wire format, receiver-side reassembly and byte accounting.
//!
//! Wire layout, all little-endian:
//!
//! ```text
//! magic "COREM01" | version u8 | agent_id u16 | pose x,y,theta f32 |
//! grid_h u16 | grid_w u16 | c' u8 | count u32 |
//! count x (row u16 | col u16 | c' x f32)
//! ```

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::tensor::layers::{Conv, Session};
use crate::tensor::{ParamStore, Tensor, Var};

pub const MESSAGE_MAGIC: &[u8; 7] = b"COREM01";
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 7 + 1 + 2 + 12 + 2 + 2 + 1 + 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("bad message magic")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("message truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("coordinate ({row}, {col}) outside {h}x{w} grid")]
    CoordOutOfRange { row: usize, col: usize, h: usize, w: usize },
    #[error("duplicate coordinate ({row}, {col})")]
    DuplicateCoord { row: u16, col: u16 },
    #[error("count {count} exceeds {cells} grid cells")]
    CountTooLarge { count: usize, cells: usize },
    #[error("expected {expected} feature values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("{0} does not fit its wire field")]
    FieldOverflow(&'static str),
}

/// Bytes per transmitted cell.
pub fn entry_bytes(c_compressed: usize) -> usize {
    4 + 4 * c_compressed
}

/// Serialized size of a message with `count` entries.
pub fn message_size(count: usize, c_compressed: usize) -> usize {
    HEADER_BYTES + count * entry_bytes(c_compressed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionConfig {
    pub k_percent: f64,
    pub r_percent: f64,
    pub c_compressed: usize,
    pub rng_seed: u64,
}

impl CompressionConfig {
    pub fn new(k_percent: f64, r_percent: f64, c_compressed: usize, rng_seed: u64) -> Result<Self> {
        for (name, v) in [("K", k_percent), ("R", r_percent)] {
            if !(v > 0.0 && v <= 100.0) {
                return Err(Error::Config(format!("{name} must be in (0, 100], got {v}")));
            }
        }
        if c_compressed == 0 {
            return Err(Error::Config("C' must be positive".into()));
        }
        Ok(Self { k_percent, r_percent, c_compressed, rng_seed })
    }

    pub fn ratio(&self) -> f64 {
        self.k_percent / 100.0 * (self.r_percent / 100.0)
    }

    /// Cells kept by the top-activation step.
    pub fn top_count(&self, h: usize, w: usize) -> usize {
        ((h * w) as f64 * self.k_percent / 100.0).ceil().min((h * w) as f64) as usize
    }

    /// Cells finally transmitted, `round(h * w * K * R / 10^4)`.
    pub fn selected_count(&self, h: usize, w: usize) -> usize {
        ((h * w) as f64 * self.k_percent * self.r_percent / 1e4).round() as usize
    }
}

/// Picks the transmitted cells of a compressed `[H, W, C']` map.
///
/// The top `ceil(HW * K / 100)` cells by raw channel sum are kept (ties go
/// to the lower row-major index), then `round(HW * K * R / 10^4)` of them
/// are drawn uniformly without replacement. Output is in row-major order.
pub fn spatial_select(f: &Tensor, cfg: &CompressionConfig) -> Result<Vec<(u16, u16)>> {
    let (h, w, c) = f.dims3()?;
    let sums: Vec<f64> = f.data().chunks_exact(c).map(|cell| cell.iter().sum()).collect();
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    let top = &order[..cfg.top_count(h, w)];
    let n = cfg.selected_count(h, w).min(top.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, top.len(), n).into_iter().map(|i| top[i]).collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ((i / w) as u16, (i % w) as u16)).collect())
}

/// Row-major 0/1 mask over `h * w` cells for the given coordinates.
pub fn selection_mask(h: usize, w: usize, coords: &[(u16, u16)]) -> Vec<f64> {
    let mut m = vec![0.0; h * w];
    for &(r, c) in coords {
        m[r as usize * w + c as usize] = 1.0;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseFeatureMessage {
    pub agent_id: u16,
    /// Sender pose as carried on the wire.
    pub pose: [f32; 3],
    pub grid_h: u16,
    pub grid_w: u16,
    pub c_compressed: u8,
    pub coords: Vec<(u16, u16)>,
    /// `coords.len() * c_compressed` values, entry-major.
    pub values: Vec<f32>,
}

impl SparseFeatureMessage {
    pub fn count(&self) -> usize {
        self.coords.len()
    }

    pub fn pose2d(&self) -> Pose2D {
        Pose2D::new(self.pose[0] as f64, self.pose[1] as f64, self.pose[2] as f64)
    }

    pub fn wire_size(&self) -> usize {
        message_size(self.count(), self.c_compressed as usize)
    }

    pub fn payload_bytes(&self) -> usize {
        self.count() * entry_bytes(self.c_compressed as usize)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let (h, w) = (self.grid_h as usize, self.grid_w as usize);
        if self.count() > h * w {
            return Err(CodecError::CountTooLarge { count: self.count(), cells: h * w });
        }
        let expected = self.count() * self.c_compressed as usize;
        if self.values.len() != expected {
            return Err(CodecError::ValueCount { expected, got: self.values.len() });
        }
        let mut seen = HashSet::with_capacity(self.count());
        for &(row, col) in &self.coords {
            if row as usize >= h || col as usize >= w {
                return Err(CodecError::CoordOutOfRange { row: row as usize, col: col as usize, h, w });
            }
            if !seen.insert((row, col)) {
                return Err(CodecError::DuplicateCoord { row, col });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.wire_size());
        out.extend_from_slice(MESSAGE_MAGIC);
        out.push(WIRE_VERSION);
        out.extend_from_slice(&self.agent_id.to_le_bytes());
        for v in self.pose {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.grid_h.to_le_bytes());
        out.extend_from_slice(&self.grid_w.to_le_bytes());
        out.push(self.c_compressed);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        let c = self.c_compressed as usize;
        for (i, &(row, col)) in self.coords.iter().enumerate() {
            out.extend_from_slice(&row.to_le_bytes());
            out.extend_from_slice(&col.to_le_bytes());
            for v in &self.values[i * c..(i + 1) * c] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        debug_assert_eq!(out.len(), self.wire_size());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(7)? != MESSAGE_MAGIC {
            return Err(CodecError::BadMagic);
        }
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let agent_id = r.u16()?;
        let pose = [r.f32()?, r.f32()?, r.f32()?];
        let grid_h = r.u16()?;
        let grid_w = r.u16()?;
        let c_compressed = r.u8()?;
        let count = r.u32()? as usize;
        if count > grid_h as usize * grid_w as usize {
            return Err(CodecError::CountTooLarge { count, cells: grid_h as usize * grid_w as usize });
        }
        let needed = message_size(count, c_compressed as usize);
        if bytes.len() < needed {
            return Err(CodecError::Truncated { needed, got: bytes.len() });
        }
        let mut coords = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count * c_compressed as usize);
        for _ in 0..count {
            coords.push((r.u16()?, r.u16()?));
            for _ in 0..c_compressed {
                values.push(r.f32()?);
            }
        }
        if r.pos != bytes.len() {
            return Err(CodecError::TrailingBytes(bytes.len() - r.pos));
        }
        let msg = Self { agent_id, pose, grid_h, grid_w, c_compressed, coords, values };
        msg.validate()?;
        Ok(msg)
    }

    /// The zero-initialized `[H, W, C']` map with every entry scattered in.
    pub fn scatter(&self) -> Tensor {
        let (h, w, c) = (self.grid_h as usize, self.grid_w as usize, self.c_compressed as usize);
        let mut t = Tensor::zeros(&[h, w, c]);
        let data = t.data_mut();
        for (i, &(row, col)) in self.coords.iter().enumerate() {
            let base = (row as usize * w + col as usize) * c;
            for k in 0..c {
                data[base + k] = self.values[i * c + k] as f64;
            }
        }
        t
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(CodecError::Truncated { needed: end, got: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Packs the selected cells of a compressed map into a message. Values are
/// narrowed to f32.
pub fn encode_message(f: &Tensor, selected: &[(u16, u16)], pose: &Pose2D, agent_id: u16) -> Result<SparseFeatureMessage> {
    let (h, w, c) = f.dims3()?;
    let grid_h = u16::try_from(h).map_err(|_| CodecError::FieldOverflow("grid_h"))?;
    let grid_w = u16::try_from(w).map_err(|_| CodecError::FieldOverflow("grid_w"))?;
    let c_compressed = u8::try_from(c).map_err(|_| CodecError::FieldOverflow("c_compressed"))?;
    let mut values = Vec::with_capacity(selected.len() * c);
    for &(row, col) in selected {
        let (r, cl) = (row as usize, col as usize);
        if r >= h || cl >= w {
            return Err(CodecError::CoordOutOfRange { row: r, col: cl, h, w }.into());
        }
        let base = (r * w + cl) * c;
        values.extend(f.data()[base..base + c].iter().map(|&v| v as f32));
    }
    let msg = SparseFeatureMessage {
        agent_id,
        pose: [pose.x as f32, pose.y as f32, pose.theta as f32],
        grid_h,
        grid_w,
        c_compressed,
        coords: selected.to_vec(),
        values,
    };
    msg.validate()?;
    Ok(msg)
}

/// Learnable 1x1 channel reduction `C -> C'`: halves while more than a
/// halving remains, then projects directly to `C'`. ReLU between layers,
/// linear output.
#[derive(Clone, Debug)]
pub struct ChannelCompressor {
    pub layers: Vec<Conv>,
}

impl ChannelCompressor {
    pub fn register<R: rand::Rng>(store: &mut ParamStore, name: &str, c: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        if c_out == 0 || c_out >= c {
            return Err(Error::Config(format!("C' = {c_out} must be in [1, {c})")));
        }
        let mut layers = Vec::new();
        let mut cin = c;
        while cin / 2 > c_out {
            layers.push(Conv::register(store, &format!("{name}.{}", layers.len()), 1, cin, cin / 2, 1, true, rng));
            cin /= 2;
        }
        layers.push(Conv::register(store, &format!("{name}.{}", layers.len()), 1, cin, c_out, 1, false, rng));
        Ok(Self { layers })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut y = x;
        for (i, l) in self.layers.iter().enumerate() {
            y = l.forward(s, y)?;
            if i + 1 < self.layers.len() {
                y = s.tape.relu(y);
            }
        }
        Ok(y)
    }
}

/// Receiver-side 1x1 projection `C' -> C` with bias.
#[derive(Clone, Copy, Debug)]
pub struct Decompressor {
    pub proj: Conv,
}

impl Decompressor {
    pub fn register<R: rand::Rng>(store: &mut ParamStore, name: &str, c_in: usize, c: usize, rng: &mut R) -> Self {
        Self { proj: Conv::register(store, name, 1, c_in, c, 1, true, rng) }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.proj.forward(s, x)
    }

    /// Scatters a received message into a zero map and projects it back to
    /// `C` channels.
    pub fn reassemble(&self, s: &mut Session, msg: &SparseFeatureMessage) -> Result<Var> {
        let x = s.constant(msg.scatter());
        self.forward(s, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthRow {
    pub ratio: f64,
    pub messages: usize,
    pub header_bytes: usize,
    pub payload_bytes: usize,
}

impl BandwidthRow {
    pub fn total_bytes(&self) -> usize {
        self.header_bytes + self.payload_bytes
    }
}

/// Byte totals grouped by spatial ratio, in order of first appearance.
pub fn bandwidth_report(messages: &[(f64, &SparseFeatureMessage)]) -> Vec<BandwidthRow> {
    let mut rows: Vec<BandwidthRow> = Vec::new();
    for &(ratio, m) in messages {
        let idx = match rows.iter().position(|r| r.ratio == ratio) {
            Some(i) => i,
            None => {
                rows.push(BandwidthRow { ratio, messages: 0, header_bytes: 0, payload_bytes: 0 });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.messages += 1;
        row.header_bytes += HEADER_BYTES;
        row.payload_bytes += m.payload_bytes();
    }
    rows
}
