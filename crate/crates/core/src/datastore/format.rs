//! Episode file layout: the magic `VTFEPIS1`, a little-endian `u64` header
//! length, a JSON header, then one raw little-endian block per entry of the
//! header's `blocks` list, frame-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Episode, Frame, RATE_HZ};
use crate::error::{Error, Result};
use crate::liegroup::{Pose, Twist, Vec3};
use crate::simenv::{Contact, MatchState, Observation, Outcome, ScenarioConfig};

const MAGIC: &[u8; 8] = b"VTFEPIS1";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    F32,
    U16,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::U16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    rate_hz: f64,
    scenario: ScenarioConfig,
    outcome: Outcome,
    grasp_offset: Pose,
    n_frames: usize,
    image_shape: [usize; 2],
    tactile_shape: [usize; 3],
    blocks: Vec<Block>,
}

fn expected_blocks(n: usize, image: [usize; 2], tactile: [usize; 3]) -> Vec<Block> {
    let b = |name: &str, dtype, shape: &[usize]| Block {
        name: name.into(),
        dtype,
        shape: std::iter::once(n).chain(shape.iter().copied()).collect(),
    };
    vec![
        b("time", Dtype::F64, &[]),
        b("pose", Dtype::F64, &[7]),
        b("action", Dtype::F64, &[7]),
        b("twist", Dtype::F64, &[6]),
        b("proprio", Dtype::F64, &[6]),
        // in_contact, on_paper, shaft, match_state
        b("flags", Dtype::U8, &[4]),
        // normal_force, tangential_speed, penetration, contact point xyz
        b("contact", Dtype::F64, &[6]),
        b("image", Dtype::F32, &image),
        b("tactile", Dtype::U16, &tactile),
    ]
}

fn match_code(s: MatchState) -> u8 {
    match s {
        MatchState::Unlit => 0,
        MatchState::Lit => 1,
        MatchState::Slipped => 2,
    }
}

pub fn write_episode(path: &Path, episode: &Episode) -> Result<()> {
    let mut buf = Vec::new();
    encode(episode, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let mut f = fs::File::open(path)?;
    decode(&mut f).map_err(|e| match e {
        Error::Format { field, msg } => Error::format(field, format!("{msg} (in {})", path.display())),
        other => other,
    })
}

fn encode(ep: &Episode, w: &mut impl Write) -> Result<()> {
    ep.validate()?;
    let n = ep.frames.len();
    let obs0 = &ep.frames[0].obs;
    let [h, wd] = ep.scenario.image_size;
    let [th, tw] = ep.scenario.tactile_size;
    if obs0.image.len() != h * wd || obs0.tactile.len() != 2 * th * tw {
        return Err(Error::format("image_shape", "observation sizes disagree with the scenario"));
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        rate_hz: RATE_HZ,
        scenario: ep.scenario.clone(),
        outcome: ep.outcome,
        grasp_offset: ep.grasp_offset,
        n_frames: n,
        image_shape: [h, wd],
        tactile_shape: [2, th, tw],
        blocks: expected_blocks(n, [h, wd], [2, th, tw]),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;

    let mut out = Vec::new();
    let f64s = |out: &mut Vec<u8>, vals: &[f64]| vals.iter().for_each(|v| out.extend(v.to_le_bytes()));
    let frames = &ep.frames;
    frames.iter().for_each(|f| f64s(&mut out, &[f.time]));
    frames.iter().for_each(|f| f64s(&mut out, &f.pose.to_array()));
    frames.iter().for_each(|f| f64s(&mut out, &f.action.to_array()));
    frames.iter().for_each(|f| f64s(&mut out, &f.twist.to_array()));
    frames.iter().for_each(|f| f64s(&mut out, &f.obs.proprio));
    for f in frames {
        let c = &f.contact;
        out.extend([c.in_contact as u8, c.on_paper as u8, c.shaft as u8, match_code(f.match_state)]);
    }
    for f in frames {
        let c = &f.contact;
        let p = c.contact_point;
        f64s(&mut out, &[c.normal_force, c.tangential_speed, c.penetration, p.x, p.y, p.z]);
    }
    frames.iter().for_each(|f| f.obs.image.iter().for_each(|v| out.extend(v.to_le_bytes())));
    frames.iter().for_each(|f| f.obs.tactile.iter().for_each(|v| out.extend(v.to_le_bytes())));
    w.write_all(&out)?;
    Ok(())
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::format(name, "missing"))
}

fn parse_field<T: serde::de::DeserializeOwned>(obj: &Value, name: &str) -> Result<T> {
    serde_json::from_value(field(obj, name)?.clone()).map_err(|e| Error::format(name, e.to_string()))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::format("header", e.to_string()))?;
    let version: u32 = parse_field(&v, "schema_version")?;
    if version != SCHEMA_VERSION {
        return Err(Error::format("schema_version", format!("unsupported version {version}")));
    }
    let rate_hz: f64 = parse_field(&v, "rate_hz")?;
    if rate_hz != RATE_HZ {
        return Err(Error::format("rate_hz", format!("expected {RATE_HZ}, got {rate_hz}")));
    }
    let header = Header {
        schema_version: version,
        rate_hz,
        scenario: parse_field(&v, "scenario")?,
        outcome: parse_field(&v, "outcome")?,
        grasp_offset: parse_field(&v, "grasp_offset")?,
        n_frames: parse_field(&v, "n_frames")?,
        image_shape: parse_field(&v, "image_shape")?,
        tactile_shape: parse_field(&v, "tactile_shape")?,
        blocks: parse_field(&v, "blocks")?,
    };
    if header.n_frames < 2 {
        return Err(Error::format("n_frames", "an episode needs at least two frames"));
    }
    if header.image_shape != header.scenario.image_size {
        return Err(Error::format("image_shape", "disagrees with scenario.image_size"));
    }
    let [c, th, tw] = header.tactile_shape;
    if c != 2 || [th, tw] != header.scenario.tactile_size {
        return Err(Error::format("tactile_shape", "disagrees with scenario.tactile_size"));
    }
    let expected = expected_blocks(header.n_frames, header.image_shape, header.tactile_shape);
    if header.blocks.len() != expected.len() {
        return Err(Error::format("blocks", format!("expected {} blocks", expected.len())));
    }
    for (i, (got, want)) in header.blocks.iter().zip(&expected).enumerate() {
        if got != want {
            return Err(Error::format(
                format!("blocks[{i}]"),
                format!("expected {} {:?} {:?}", want.name, want.dtype, want.shape),
            ));
        }
    }
    Ok(header)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, block: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(block, "file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize, block: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n, block)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn decode(r: &mut impl Read) -> Result<Episode> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::format("magic", "file too short"))?;
    if &magic != MAGIC {
        return Err(Error::format("magic", "not an episode file"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::format("header_length", "file too short"))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut hbytes = vec![0u8; len.min(1 << 24)];
    if len > hbytes.len() {
        return Err(Error::format("header_length", "implausibly large header"));
    }
    r.read_exact(&mut hbytes).map_err(|_| Error::format("header", "file truncated"))?;
    let h = parse_header(&hbytes)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected: usize = h
        .blocks
        .iter()
        .map(|b| b.shape.iter().product::<usize>() * b.dtype.size())
        .sum();
    if body.len() != expected {
        let which = if body.len() < expected { "file truncated" } else { "trailing bytes" };
        return Err(Error::format("blocks", format!("{which}: {} data bytes, expected {expected}", body.len())));
    }

    let n = h.n_frames;
    let mut cur = Cursor { bytes: &body, pos: 0 };
    let time = cur.f64s(n, "time")?;
    let pose = cur.f64s(7 * n, "pose")?;
    let action = cur.f64s(7 * n, "action")?;
    let twist = cur.f64s(6 * n, "twist")?;
    let proprio = cur.f64s(6 * n, "proprio")?;
    let flags = cur.take(4 * n, "flags")?;
    let contact = cur.f64s(6 * n, "contact")?;
    let [ih, iw] = h.image_shape;
    let img_len = ih * iw;
    let images: Vec<f32> = cur
        .take(4 * n * img_len, "image")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tac_len = h.tactile_shape.iter().product::<usize>();
    let tactile: Vec<u16> = cur
        .take(2 * n * tac_len, "tactile")?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let pose_at = |v: &[f64], k: usize, name: &str| -> Result<Pose> {
        let a: [f64; 7] = v[7 * k..7 * k + 7].try_into().unwrap();
        Pose::from_array(&a).map_err(|e| Error::format(format!("{name}[{k}]"), e.to_string()))
    };
    let arr6 = |v: &[f64], k: usize| -> [f64; 6] { v[6 * k..6 * k + 6].try_into().unwrap() };
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let fl = &flags[4 * k..4 * k + 4];
        let match_state = match fl[3] {
            0 => MatchState::Unlit,
            1 => MatchState::Lit,
            2 => MatchState::Slipped,
            other => return Err(Error::format(format!("flags[{k}]"), format!("bad match state {other}"))),
        };
        let c = arr6(&contact, k);
        frames.push(Frame {
            obs: Observation {
                image: images[k * img_len..(k + 1) * img_len].to_vec(),
                tactile: tactile[k * tac_len..(k + 1) * tac_len].to_vec(),
                proprio: arr6(&proprio, k),
            },
            pose: pose_at(&pose, k, "pose")?,
            action: pose_at(&action, k, "action")?,
            twist: Twist::from_slice(&arr6(&twist, k)),
            time: time[k],
            contact: Contact {
                in_contact: fl[0] != 0,
                on_paper: fl[1] != 0,
                shaft: fl[2] != 0,
                normal_force: c[0],
                tangential_speed: c[1],
                penetration: c[2],
                contact_point: Vec3::new(c[3], c[4], c[5]),
            },
            match_state,
        });
    }
    let ep = Episode {
        scenario: h.scenario,
        outcome: h.outcome,
        grasp_offset: h.grasp_offset,
        frames,
    };
    ep.validate()?;
    Ok(ep)
}

#[cfg(test)]
pub(super) fn encode_to_vec(ep: &Episode) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    encode(ep, &mut v)?;
    Ok(v)
}

#[cfg(test)]
pub(super) fn decode_from(bytes: &[u8]) -> Result<Episode> {
    decode(&mut &bytes[..])
}
