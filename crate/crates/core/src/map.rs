//! Teach-phase topometric map: an ordered list of (event frame, odometry
//! pose) nodes, and its binary file format.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic      b"EVTR"
//! version    u16            (currently 1)
//! header     K: u32, width: u32, height: u32, tau_us: u64,
//!            delta_d_mm: u32, delta_alpha_mrad: u32, fov_mdeg: u32
//! K records  window_start_us: u64, x: f64, y: f64, theta: f64,
//!            height rows of ceil(width / 8) bytes, LSB = leftmost pixel
//! crc32      u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::correlation::SearchSpace;
use crate::frame::{EventFrame, FrameError};
use crate::pose::{normalize_angle, Pose2D};

pub const MAP_MAGIC: &[u8; 4] = b"EVTR";
pub const MAP_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 * 3 + 8 + 4 * 3;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("frame geometry {got_w}x{got_h} (tau {got_tau} us) does not match map {want_w}x{want_h} (tau {want_tau} us)")]
    GeometryMismatch {
        got_w: usize,
        got_h: usize,
        got_tau: u64,
        want_w: usize,
        want_h: usize,
        want_tau: u64,
    },
    #[error("map has no nodes")]
    Empty,
    #[error("goal index {k} outside map of {len} nodes")]
    IndexOutOfRange { k: usize, len: usize },
    #[error("invalid map parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a map file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported map format version {0}")]
    UnsupportedVersion(u16),
    #[error("map file truncated in header")]
    TruncatedHeader,
    #[error("map file truncated inside node {0}")]
    TruncatedNode(usize),
    #[error("map file truncated before checksum")]
    TruncatedChecksum,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error("corrupt frame data: {0}")]
    Frame(#[from] FrameError),
}

/// Recording parameters and frame geometry, stored in the units of the file
/// header so a saved map reloads bit-identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapGeometry {
    pub width: u32,
    pub height: u32,
    pub tau_us: u64,
    pub delta_d_mm: u32,
    pub delta_alpha_mrad: u32,
    pub fov_mdeg: u32,
}

impl MapGeometry {
    /// Builds a geometry from metric parameters, rounding to file units.
    pub fn new(
        width: u32,
        height: u32,
        tau_us: u64,
        delta_d_m: f64,
        delta_alpha_rad: f64,
        fov_deg: f64,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 || tau_us == 0 {
            return Err(MapError::InvalidParameter(
                "frame size and window length must be positive".into(),
            ));
        }
        if !(delta_d_m > 0.0 && delta_alpha_rad > 0.0) {
            return Err(MapError::InvalidParameter(
                "recording intervals must be positive".into(),
            ));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(MapError::InvalidParameter(format!(
                "field of view {fov_deg} deg outside (0, 180)"
            )));
        }
        Ok(Self {
            width,
            height,
            tau_us,
            delta_d_mm: (delta_d_m * 1000.0).round() as u32,
            delta_alpha_mrad: (delta_alpha_rad * 1000.0).round() as u32,
            fov_mdeg: (fov_deg * 1000.0).round() as u32,
        })
    }

    pub fn delta_d(&self) -> f64 {
        self.delta_d_mm as f64 / 1000.0
    }

    pub fn delta_alpha(&self) -> f64 {
        self.delta_alpha_mrad as f64 / 1000.0
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_mdeg as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapNode {
    pub index: usize,
    pub pose: Pose2D,
    pub frame: EventFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopometricMap {
    geometry: MapGeometry,
    nodes: Vec<MapNode>,
}

/// Recording trigger: translation of at least `delta_d` or heading change of
/// at least `delta_alpha` since the last recorded pose.
pub fn should_record(last: &Pose2D, current: &Pose2D, delta_d: f64, delta_alpha: f64) -> bool {
    last.distance_to(current) >= delta_d
        || normalize_angle(current.theta - last.theta).abs() >= delta_alpha
}

impl TopometricMap {
    pub fn new(geometry: MapGeometry) -> Self {
        Self {
            geometry,
            nodes: Vec::new(),
        }
    }

    pub fn geometry(&self) -> &MapGeometry {
        &self.geometry
    }

    pub fn nodes(&self) -> &[MapNode] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Option<&MapNode> {
        self.nodes.get(k)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = Pose2D> + '_ {
        self.nodes.iter().map(|n| n.pose)
    }

    /// Appends a node unconditionally; the recording policy is
    /// [`should_record`].
    pub fn record(&mut self, frame: EventFrame, pose: Pose2D) -> Result<usize, MapError> {
        let g = &self.geometry;
        if frame.width() != g.width as usize
            || frame.height() != g.height as usize
            || frame.window_length() != g.tau_us
        {
            return Err(MapError::GeometryMismatch {
                got_w: frame.width(),
                got_h: frame.height(),
                got_tau: frame.window_length(),
                want_w: g.width as usize,
                want_h: g.height as usize,
                want_tau: g.tau_us,
            });
        }
        let index = self.nodes.len();
        self.nodes.push(MapNode { index, pose, frame });
        Ok(index)
    }

    /// Candidate frames `[k - s, k + s]`, clamped to the map.
    pub fn search_space(
        &self,
        k: usize,
        s: usize,
    ) -> Result<SearchSpace<'_, EventFrame>, MapError> {
        if self.nodes.is_empty() {
            return Err(MapError::Empty);
        }
        if k >= self.nodes.len() {
            return Err(MapError::IndexOutOfRange {
                k,
                len: self.nodes.len(),
            });
        }
        let range = SearchSpace::<EventFrame>::index_range(k, s, self.nodes.len());
        Ok(SearchSpace {
            k,
            s,
            first: *range.start(),
            candidates: self.nodes[range].iter().map(|n| &n.frame).collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.geometry;
        let row_bytes = EventFrame::row_bytes(g.width as usize);
        let mut out = Vec::with_capacity(
            HEADER_LEN + self.nodes.len() * (32 + row_bytes * g.height as usize) + 4,
        );
        out.extend_from_slice(MAP_MAGIC);
        out.extend_from_slice(&MAP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        out.extend_from_slice(&g.width.to_le_bytes());
        out.extend_from_slice(&g.height.to_le_bytes());
        out.extend_from_slice(&g.tau_us.to_le_bytes());
        out.extend_from_slice(&g.delta_d_mm.to_le_bytes());
        out.extend_from_slice(&g.delta_alpha_mrad.to_le_bytes());
        out.extend_from_slice(&g.fov_mdeg.to_le_bytes());
        for node in &self.nodes {
            out.extend_from_slice(&node.frame.window_start().to_le_bytes());
            out.extend_from_slice(&node.pose.x.to_le_bytes());
            out.extend_from_slice(&node.pose.y.to_le_bytes());
            out.extend_from_slice(&node.pose.theta.to_le_bytes());
            for row in 0..g.height as usize {
                node.frame.write_row_bytes(row, &mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAP_MAGIC {
            return Err(MapError::BadMagic);
        }
        r.pos = 4;
        let version = r.u16().ok_or(MapError::TruncatedHeader)?;
        if version != MAP_VERSION {
            return Err(MapError::UnsupportedVersion(version));
        }
        let header = (|| {
            Some((
                r.u32()?,
                MapGeometry {
                    width: r.u32()?,
                    height: r.u32()?,
                    tau_us: r.u64()?,
                    delta_d_mm: r.u32()?,
                    delta_alpha_mrad: r.u32()?,
                    fov_mdeg: r.u32()?,
                },
            ))
        })();
        let (count, geometry) = header.ok_or(MapError::TruncatedHeader)?;
        if geometry.width == 0 || geometry.height == 0 || geometry.tau_us == 0 {
            return Err(MapError::InvalidParameter(
                "header declares an empty frame geometry".into(),
            ));
        }
        let row_bytes = EventFrame::row_bytes(geometry.width as usize);
        let frame_bytes = row_bytes * geometry.height as usize;
        let mut map = TopometricMap::new(geometry);
        for k in 0..count as usize {
            let t = r.u64().ok_or(MapError::TruncatedNode(k))?;
            let x = r.f64().ok_or(MapError::TruncatedNode(k))?;
            let y = r.f64().ok_or(MapError::TruncatedNode(k))?;
            let theta = r.f64().ok_or(MapError::TruncatedNode(k))?;
            let pixels = r.take(frame_bytes).ok_or(MapError::TruncatedNode(k))?;
            let frame = EventFrame::from_row_bytes(
                geometry.width as usize,
                geometry.height as usize,
                t,
                geometry.tau_us,
                pixels,
            )?;
            // Poses are stored verbatim; no renormalization.
            let pose = Pose2D { x, y, theta };
            map.nodes.push(MapNode {
                index: k,
                pose,
                frame,
            });
        }
        let payload_end = r.pos;
        let stored = r.u32().ok_or(MapError::TruncatedChecksum)?;
        let computed = crc32fast::hash(&bytes[..payload_end]);
        if stored != computed {
            return Err(MapError::ChecksumMismatch { stored, computed });
        }
        if r.pos != bytes.len() {
            return Err(MapError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MapError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
