//! Binary stream messages. Every message is one tag byte followed by a
//! little-endian body whose length is fixed by the tag and its counts.

use glam::Vec3;
use thiserror::Error;

use crate::octree::{CubeBounds, NodeId, Point};
use crate::update::TreeEvent;

pub const PROTOCOL_VERSION: u32 = 1;

pub mod tag {
    pub const HELLO: u8 = 0;
    pub const NODE_CREATED: u8 = 1;
    pub const NODE_SPLIT: u8 = 2;
    pub const POINTS_APPENDED: u8 = 3;
    pub const VOXELS_APPENDED: u8 = 4;
    pub const STATS_TICK: u8 = 5;
    pub const END_OF_STREAM: u8 = 6;
    pub const ERROR: u8 = 7;
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hello {
    pub version: u32,
    pub bounds: CubeBounds,
    pub grid_resolution: u32,
    pub leaf_threshold: u32,
    pub chunk_capacity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsTick {
    pub frame: u32,
    pub points: u64,
    pub voxels: u64,
    pub nodes: u32,
    pub update_ms: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamMessage {
    Hello(Hello),
    NodeCreated {
        id: u32,
        parent: Option<u32>,
        octant: u8,
        level: u8,
    },
    NodeSplit {
        id: u32,
    },
    PointsAppended {
        id: u32,
        points: Vec<Point>,
    },
    VoxelsAppended {
        id: u32,
        voxels: Vec<(u32, [u8; 4])>,
    },
    StatsTick(StatsTick),
    EndOfStream,
    /// Terminal failure on the server side.
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MalformedMessage {
    #[error("empty message")]
    Empty,
    #[error("unknown tag {0}")]
    UnknownTag(u8),
    #[error("tag {tag}: expected {expected} bytes, got {actual}")]
    Length { tag: u8, expected: usize, actual: usize },
    #[error("error message is not UTF-8")]
    Utf8,
}

impl From<TreeEvent> for StreamMessage {
    fn from(e: TreeEvent) -> Self {
        match e {
            TreeEvent::NodeCreated { id, parent, octant, level } => StreamMessage::NodeCreated {
                id: id.0,
                parent: parent.map(|p| p.0),
                octant,
                level: level as u8,
            },
            TreeEvent::NodeSplit { id } => StreamMessage::NodeSplit { id: id.0 },
            TreeEvent::PointsAppended { id, points } => StreamMessage::PointsAppended { id: id.0, points },
            TreeEvent::VoxelsAppended { id, voxels } => StreamMessage::VoxelsAppended { id: id.0, voxels },
        }
    }
}

impl StreamMessage {
    pub fn tag(&self) -> u8 {
        match self {
            StreamMessage::Hello(_) => tag::HELLO,
            StreamMessage::NodeCreated { .. } => tag::NODE_CREATED,
            StreamMessage::NodeSplit { .. } => tag::NODE_SPLIT,
            StreamMessage::PointsAppended { .. } => tag::POINTS_APPENDED,
            StreamMessage::VoxelsAppended { .. } => tag::VOXELS_APPENDED,
            StreamMessage::StatsTick(_) => tag::STATS_TICK,
            StreamMessage::EndOfStream => tag::END_OF_STREAM,
            StreamMessage::Error { .. } => tag::ERROR,
        }
    }

    pub fn node_id(&self) -> Option<NodeId> {
        match self {
            StreamMessage::NodeCreated { id, .. }
            | StreamMessage::NodeSplit { id }
            | StreamMessage::PointsAppended { id, .. }
            | StreamMessage::VoxelsAppended { id, .. } => Some(NodeId(*id)),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(self.encoded_len());
        w.push(self.tag());
        let put = |w: &mut Vec<u8>, v: u32| w.extend_from_slice(&v.to_le_bytes());
        match self {
            StreamMessage::Hello(h) => {
                put(&mut w, h.version);
                for v in h.bounds.min.to_array() {
                    w.extend_from_slice(&v.to_le_bytes());
                }
                w.extend_from_slice(&h.bounds.size.to_le_bytes());
                put(&mut w, h.grid_resolution);
                put(&mut w, h.leaf_threshold);
                put(&mut w, h.chunk_capacity);
            }
            StreamMessage::NodeCreated { id, parent, octant, level } => {
                put(&mut w, *id);
                put(&mut w, parent.unwrap_or(NO_PARENT));
                w.push(*octant);
                w.push(*level);
            }
            StreamMessage::NodeSplit { id } => put(&mut w, *id),
            StreamMessage::PointsAppended { id, points } => {
                put(&mut w, *id);
                put(&mut w, points.len() as u32);
                for p in points {
                    w.extend_from_slice(&p.to_le_bytes());
                }
            }
            StreamMessage::VoxelsAppended { id, voxels } => {
                put(&mut w, *id);
                put(&mut w, voxels.len() as u32);
                for (cell, color) in voxels {
                    put(&mut w, *cell);
                    w.extend_from_slice(color);
                }
            }
            StreamMessage::StatsTick(s) => {
                put(&mut w, s.frame);
                w.extend_from_slice(&s.points.to_le_bytes());
                w.extend_from_slice(&s.voxels.to_le_bytes());
                put(&mut w, s.nodes);
                w.extend_from_slice(&s.update_ms.to_le_bytes());
            }
            StreamMessage::EndOfStream => {}
            StreamMessage::Error { message } => {
                put(&mut w, message.len() as u32);
                w.extend_from_slice(message.as_bytes());
            }
        }
        debug_assert_eq!(w.len(), self.encoded_len());
        w
    }

    pub fn encoded_len(&self) -> usize {
        1 + match self {
            StreamMessage::Hello(_) => 32,
            StreamMessage::NodeCreated { .. } => 10,
            StreamMessage::NodeSplit { .. } => 4,
            StreamMessage::PointsAppended { points, .. } => 8 + 16 * points.len(),
            StreamMessage::VoxelsAppended { voxels, .. } => 8 + 8 * voxels.len(),
            StreamMessage::StatsTick(_) => 28,
            StreamMessage::EndOfStream => 0,
            StreamMessage::Error { message } => 4 + message.len(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedMessage> {
        let (&t, body) = bytes.split_first().ok_or(MalformedMessage::Empty)?;
        let mut r = Reader { body, pos: 0 };
        let need = |expected: usize| {
            if body.len() == expected {
                Ok(())
            } else {
                Err(MalformedMessage::Length { tag: t, expected, actual: body.len() })
            }
        };
        // Fixed prefix first so that counts can be read before checking the total.
        let prefix = |n: usize| {
            if body.len() >= n {
                Ok(())
            } else {
                Err(MalformedMessage::Length { tag: t, expected: n, actual: body.len() })
            }
        };
        let msg = match t {
            tag::HELLO => {
                need(32)?;
                let version = r.u32();
                let min = Vec3::new(r.f32(), r.f32(), r.f32());
                let size = r.f32();
                StreamMessage::Hello(Hello {
                    version,
                    bounds: CubeBounds { min, size },
                    grid_resolution: r.u32(),
                    leaf_threshold: r.u32(),
                    chunk_capacity: r.u32(),
                })
            }
            tag::NODE_CREATED => {
                need(10)?;
                let id = r.u32();
                let parent = r.u32();
                StreamMessage::NodeCreated {
                    id,
                    parent: (parent != NO_PARENT).then_some(parent),
                    octant: r.u8(),
                    level: r.u8(),
                }
            }
            tag::NODE_SPLIT => {
                need(4)?;
                StreamMessage::NodeSplit { id: r.u32() }
            }
            tag::POINTS_APPENDED => {
                prefix(8)?;
                let id = r.u32();
                let n = r.u32() as usize;
                need(8 + 16 * n)?;
                let points = (0..n).map(|_| Point::from_le_bytes(r.take(16).try_into().unwrap())).collect();
                StreamMessage::PointsAppended { id, points }
            }
            tag::VOXELS_APPENDED => {
                prefix(8)?;
                let id = r.u32();
                let n = r.u32() as usize;
                need(8 + 8 * n)?;
                let voxels = (0..n).map(|_| (r.u32(), r.take(4).try_into().unwrap())).collect();
                StreamMessage::VoxelsAppended { id, voxels }
            }
            tag::STATS_TICK => {
                need(28)?;
                StreamMessage::StatsTick(StatsTick {
                    frame: r.u32(),
                    points: r.u64(),
                    voxels: r.u64(),
                    nodes: r.u32(),
                    update_ms: r.f32(),
                })
            }
            tag::END_OF_STREAM => {
                need(0)?;
                StreamMessage::EndOfStream
            }
            tag::ERROR => {
                prefix(4)?;
                let n = r.u32() as usize;
                need(4 + n)?;
                let message = String::from_utf8(r.take(n).to_vec()).map_err(|_| MalformedMessage::Utf8)?;
                StreamMessage::Error { message }
            }
            other => return Err(MalformedMessage::UnknownTag(other)),
        };
        Ok(msg)
    }
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.body[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f32(&mut self) -> f32 {
        f32::from_bits(self.u32())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_voxel_message_is_17_bytes() {
        let m = StreamMessage::VoxelsAppended { id: 3, voxels: vec![(63, [0, 0, 255, 255])] };
        let bytes = m.encode();
        assert_eq!(bytes.len(), 17);
        assert_eq!(bytes[0], tag::VOXELS_APPENDED);
        assert_eq!(&bytes[1..5], &3u32.to_le_bytes());
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &63u32.to_le_bytes());
        assert_eq!(&bytes[13..], &[0, 0, 255, 255]);
    }

    #[test]
    fn truncated_bodies_are_malformed() {
        let m = StreamMessage::PointsAppended { id: 1, points: vec![Point::new(1.0, 2.0, 3.0, [1, 2, 3, 4])] };
        let bytes = m.encode();
        for cut in 1..bytes.len() {
            assert!(matches!(StreamMessage::decode(&bytes[..cut]), Err(MalformedMessage::Length { .. })), "{cut}");
        }
        assert_eq!(StreamMessage::decode(&[]), Err(MalformedMessage::Empty));
        assert_eq!(StreamMessage::decode(&[9]), Err(MalformedMessage::UnknownTag(9)));
        assert!(StreamMessage::decode(&[tag::END_OF_STREAM, 0]).is_err());
    }

    #[test]
    fn root_has_no_parent_on_the_wire() {
        let m = StreamMessage::NodeCreated { id: 0, parent: None, octant: 0, level: 0 };
        let bytes = m.encode();
        assert_eq!(&bytes[5..9], &[0xFF; 4]);
        assert_eq!(StreamMessage::decode(&bytes).unwrap(), m);
    }

    fn point() -> impl Strategy<Value = Point> {
        (any::<u32>(), any::<u32>(), any::<u32>(), any::<[u8; 4]>()).prop_map(|(x, y, z, c)| Point {
            position: Vec3::new(f32::from_bits(x), f32::from_bits(y), f32::from_bits(z)),
            color: c,
        })
    }

    fn message() -> impl Strategy<Value = StreamMessage> {
        prop_oneof![
            (any::<u32>(), any::<[u32; 4]>(), any::<[u32; 3]>()).prop_map(|(v, b, g)| StreamMessage::Hello(Hello {
                version: v,
                bounds: CubeBounds {
                    min: Vec3::new(f32::from_bits(b[0]), f32::from_bits(b[1]), f32::from_bits(b[2])),
                    size: f32::from_bits(b[3]),
                },
                grid_resolution: g[0],
                leaf_threshold: g[1],
                chunk_capacity: g[2],
            })),
            (0u32..u32::MAX, proptest::option::of(0u32..u32::MAX), any::<u8>(), any::<u8>())
                .prop_map(|(id, parent, octant, level)| StreamMessage::NodeCreated { id, parent, octant, level }),
            any::<u32>().prop_map(|id| StreamMessage::NodeSplit { id }),
            (any::<u32>(), proptest::collection::vec(point(), 0..40))
                .prop_map(|(id, points)| StreamMessage::PointsAppended { id, points }),
            (any::<u32>(), proptest::collection::vec(any::<(u32, [u8; 4])>(), 0..40))
                .prop_map(|(id, voxels)| StreamMessage::VoxelsAppended { id, voxels }),
            (any::<u32>(), any::<u64>(), any::<u64>(), any::<u32>(), any::<u32>()).prop_map(|(frame, points, voxels, nodes, ms)| {
                StreamMessage::StatsTick(StatsTick { frame, points, voxels, nodes, update_ms: f32::from_bits(ms) })
            }),
            Just(StreamMessage::EndOfStream),
            ".{0,40}".prop_map(|message| StreamMessage::Error { message }),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(m in message()) {
            let bytes = m.encode();
            prop_assert_eq!(bytes.len(), m.encoded_len());
            let back = StreamMessage::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
