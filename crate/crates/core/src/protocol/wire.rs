//! Little-endian frames: u8 type, u32 payload length, payload.

use std::io::{Read, Write};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianAttributes;

pub const MSG_CAMERA_POSE: u8 = 1;
pub const MSG_SPT_LOAD: u8 = 2;
pub const MSG_SPT_EVICT: u8 = 3;
pub const MSG_UPPER_SET: u8 = 4;
pub const MSG_STATS: u8 = 5;
/// Sent by the server right before it closes a session on a bad frame.
pub const MSG_ERROR: u8 = 255;

pub const FRAME_HEADER_BYTES: usize = 5;
pub const POSE_BYTES: usize = 44;
pub const STATS_BYTES: usize = 20;
/// f32 scalars per wire Gaussian: mean 3, scale 3, rotation 4, opacity 1,
/// base color 3, degree-1 SH 9.
pub const WIRE_FLOATS: usize = 23;
/// Largest accepted payload.
pub const MAX_PAYLOAD: u32 = 1 << 30;

/// Error codes carried by [`Message::Error`].
pub const ERR_MALFORMED: u32 = 1;
pub const ERR_UNEXPECTED: u32 = 2;
pub const ERR_INTERNAL: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub position: [f32; 3],
    /// Camera-to-world `[w, x, y, z]`.
    pub orientation: [f32; 4],
    pub focal: [f32; 2],
    pub resolution: [u32; 2],
}

impl CameraPose {
    pub fn from_camera(c: &Camera) -> Self {
        Self {
            position: c.position.map(|v| v as f32),
            orientation: c.orientation.map(|v| v as f32),
            focal: c.focal.map(|v| v as f32),
            resolution: c.resolution,
        }
    }

    /// Camera with a centered principal point and default clip planes.
    pub fn to_camera(&self) -> Camera {
        Camera::new(
            self.position.map(f64::from),
            self.orientation.map(f64::from),
            self.focal.map(f64::from),
            self.resolution,
        )
    }
}

/// Structure-of-arrays Gaussian attributes, SH truncated or zero-padded to
/// degree 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WireAttributes {
    pub means: Vec<[f32; 3]>,
    pub scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub opacities: Vec<f32>,
    pub colors: Vec<[f32; 3]>,
    pub sh1: Vec<[f32; 9]>,
}

impl WireAttributes {
    pub fn from_gaussians<'a>(gs: impl IntoIterator<Item = &'a GaussianAttributes>) -> Self {
        let mut w = Self::default();
        for g in gs {
            w.push(g);
        }
        w
    }

    pub fn push(&mut self, g: &GaussianAttributes) {
        self.means.push(g.mean);
        self.scales.push(g.scale);
        self.rotations.push(g.rotation);
        self.opacities.push(g.opacity);
        self.colors.push(g.base_color);
        self.sh1.push(std::array::from_fn(|i| g.sh_rest.get(i).copied().unwrap_or(0.0)));
    }

    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn gaussian(&self, i: usize) -> GaussianAttributes {
        GaussianAttributes {
            mean: self.means[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            opacity: self.opacities[i],
            base_color: self.colors[i],
            sh_rest: self.sh1[i].to_vec(),
        }
    }

    pub fn byte_len(&self) -> usize {
        self.len() * WIRE_FLOATS * 4
    }

    fn encode(&self, out: &mut Vec<u8>) {
        let put = |out: &mut Vec<u8>, v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(out, self.means.as_flattened());
        put(out, self.scales.as_flattened());
        put(out, self.rotations.as_flattened());
        put(out, &self.opacities);
        put(out, self.colors.as_flattened());
        put(out, self.sh1.as_flattened());
    }

    fn decode(r: &mut Cursor, n: usize) -> Result<Self> {
        Ok(Self {
            means: r.arrays(n)?,
            scales: r.arrays(n)?,
            rotations: r.arrays(n)?,
            opacities: r.f32s(n)?,
            colors: r.arrays(n)?,
            sh1: r.arrays(n)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stats {
    pub rendered: u32,
    pub loaded: u32,
    pub bytes: u64,
    pub cut_ms: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    CameraPose(CameraPose),
    /// The first `prefix_len` records of an SPT: root center, their
    /// `key_self` values, then their attributes. Records with
    /// `key_self <= d_root` are the SPT's selection for a camera at distance
    /// `d_root` from the root center.
    SptLoad {
        spt_id: u32,
        center: [f32; 3],
        keys: Vec<f32>,
        attrs: WireAttributes,
    },
    SptEvict(u32),
    /// All rendered nodes outside SPTs, replacing the previous set.
    UpperSet(WireAttributes),
    Stats(Stats),
    Error {
        code: u32,
        message: String,
    },
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::Protocol(format!("payload truncated at byte {}", self.at)))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Protocol("count overflows".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn arrays<const K: usize>(&mut self, n: usize) -> Result<Vec<[f32; K]>> {
        let flat = self.f32s(n.checked_mul(K).ok_or_else(|| Error::Protocol("count overflows".into()))?)?;
        Ok(flat.chunks_exact(K).map(|c| c.try_into().unwrap()).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.at == self.b.len() {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{} trailing payload bytes", self.b.len() - self.at)))
        }
    }
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::CameraPose(_) => MSG_CAMERA_POSE,
            Message::SptLoad { .. } => MSG_SPT_LOAD,
            Message::SptEvict(_) => MSG_SPT_EVICT,
            Message::UpperSet(_) => MSG_UPPER_SET,
            Message::Stats(_) => MSG_STATS,
            Message::Error { .. } => MSG_ERROR,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::CameraPose(p) => {
                for v in p.position.iter().chain(&p.orientation).chain(&p.focal) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in p.resolution {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::SptLoad { spt_id, center, keys, attrs } => {
                out.extend_from_slice(&spt_id.to_le_bytes());
                out.extend_from_slice(&(keys.len() as u32).to_le_bytes());
                center.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
                keys.iter().for_each(|k| out.extend_from_slice(&k.to_le_bytes()));
                attrs.encode(&mut out);
            }
            Message::SptEvict(id) => out.extend_from_slice(&id.to_le_bytes()),
            Message::UpperSet(attrs) => {
                out.extend_from_slice(&(attrs.len() as u32).to_le_bytes());
                attrs.encode(&mut out);
            }
            Message::Stats(s) => {
                out.extend_from_slice(&s.rendered.to_le_bytes());
                out.extend_from_slice(&s.loaded.to_le_bytes());
                out.extend_from_slice(&s.bytes.to_le_bytes());
                out.extend_from_slice(&s.cut_ms.to_le_bytes());
            }
            Message::Error { code, message } => {
                out.extend_from_slice(&code.to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        out
    }

    /// Header plus payload.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + payload.len());
        out.push(self.msg_type());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn frame_len(&self) -> usize {
        FRAME_HEADER_BYTES
            + match self {
                Message::CameraPose(_) => POSE_BYTES,
                Message::SptLoad { keys, attrs, .. } => 20 + 4 * keys.len() + attrs.byte_len(),
                Message::SptEvict(_) => 4,
                Message::UpperSet(a) => 4 + a.byte_len(),
                Message::Stats(_) => STATS_BYTES,
                Message::Error { message, .. } => 4 + message.len(),
            }
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self> {
        let mut r = Cursor { b: payload, at: 0 };
        let exact = |want: usize| {
            if payload.len() == want {
                Ok(())
            } else {
                Err(Error::Protocol(format!(
                    "type {msg_type} payload is {} bytes, expected {want}",
                    payload.len()
                )))
            }
        };
        let msg = match msg_type {
            MSG_CAMERA_POSE => {
                exact(POSE_BYTES)?;
                let f: Vec<f32> = r.f32s(9)?;
                let pose = CameraPose {
                    position: [f[0], f[1], f[2]],
                    orientation: [f[3], f[4], f[5], f[6]],
                    focal: [f[7], f[8]],
                    resolution: [r.u32()?, r.u32()?],
                };
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Protocol("camera pose has non-finite values".into()));
                }
                Message::CameraPose(pose)
            }
            MSG_SPT_LOAD => {
                let spt_id = r.u32()?;
                let n = r.u32()? as usize;
                let want = n.checked_mul(4 * (WIRE_FLOATS + 1)).and_then(|x| x.checked_add(20));
                exact(want.ok_or_else(|| Error::Protocol("SptLoad count overflows".into()))?)?;
                let c = r.f32s(3)?;
                let keys = r.f32s(n)?;
                let attrs = WireAttributes::decode(&mut r, n)?;
                Message::SptLoad {
                    spt_id,
                    center: [c[0], c[1], c[2]],
                    keys,
                    attrs,
                }
            }
            MSG_SPT_EVICT => {
                exact(4)?;
                Message::SptEvict(r.u32()?)
            }
            MSG_UPPER_SET => {
                let n = r.u32()? as usize;
                let want = n.checked_mul(4 * WIRE_FLOATS).and_then(|x| x.checked_add(4));
                exact(want.ok_or_else(|| Error::Protocol("UpperSet count overflows".into()))?)?;
                Message::UpperSet(WireAttributes::decode(&mut r, n)?)
            }
            MSG_STATS => {
                exact(STATS_BYTES)?;
                Message::Stats(Stats {
                    rendered: r.u32()?,
                    loaded: r.u32()?,
                    bytes: r.u64()?,
                    cut_ms: r.f32()?,
                })
            }
            MSG_ERROR => {
                let code = r.u32()?;
                let message =
                    String::from_utf8(r.take(payload.len() - 4)?.to_vec()).map_err(|_| Error::Protocol("error message is not UTF-8".into()))?;
                Message::Error { code, message }
            }
            t => return Err(Error::Protocol(format!("unknown message type {t}"))),
        };
        r.finish()?;
        Ok(msg)
    }
}

pub fn write_message(w: &mut impl Write, m: &Message) -> Result<()> {
    w.write_all(&m.encode())?;
    Ok(())
}

/// Next frame, or `None` on a clean end of stream before a header.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>> {
    let mut header = [0u8; FRAME_HEADER_BYTES];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[1..].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {len} bytes exceeds the {MAX_PAYLOAD} byte limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Protocol("stream ended inside a payload".into()),
        _ => e.into(),
    })?;
    Message::decode(header[0], &payload).map(Some)
}

/// Splits a byte stream into messages.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<Message>> {
    let mut out = Vec::new();
    while let Some(m) = read_message(&mut bytes)? {
        out.push(m);
    }
    Ok(out)
}
