//! JSON wire messages. Field arrays travel as base64 little-endian f32.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{AudioParams, Command, Snapshot, SnapshotDiagnostics};
use crate::acoustics::SpectralPeakSet;
use crate::error::{Error, Result};
use crate::geometry::Obstacle;

pub fn encode_f32_array(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32_array(text: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::InvalidArgument(format!("bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidArgument("f32 array length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command { seq: u64, payload: Command },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePeak {
    pub freq_hz: f64,
    pub weight: f64,
    pub phase: f64,
}

fn wire_peaks(set: &SpectralPeakSet) -> Vec<WirePeak> {
    set.peaks
        .iter()
        .map(|p| WirePeak {
            freq_hz: p.freq_hz(),
            weight: p.weight,
            phase: p.phase,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack {
        seq: u64,
    },
    Reject {
        seq: Option<u64>,
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Snapshot {
        epoch: u64,
        step: u64,
        time: f64,
        paused: bool,
        lattice_size: usize,
        pressure: String,
        speed: String,
        obstacles: Vec<Obstacle>,
        p_prime: f64,
        peaks: Vec<WirePeak>,
        diagnostics: SnapshotDiagnostics,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    AudioParams {
        epoch: u64,
        time: f64,
        amplitude: f64,
        peaks: Vec<WirePeak>,
    },
}

impl From<&Snapshot> for ServerMessage {
    fn from(s: &Snapshot) -> Self {
        ServerMessage::Snapshot {
            epoch: s.epoch,
            step: s.step,
            time: s.time,
            paused: s.paused,
            lattice_size: s.pressure.len(),
            pressure: encode_f32_array(&s.pressure),
            speed: encode_f32_array(&s.speed),
            obstacles: s.obstacles.clone(),
            p_prime: s.p_prime,
            peaks: wire_peaks(&s.peaks),
            diagnostics: s.diagnostics.clone(),
            error: s.error.clone(),
        }
    }
}

impl From<&AudioParams> for ServerMessage {
    fn from(a: &AudioParams) -> Self {
        ServerMessage::AudioParams {
            epoch: a.epoch,
            time: a.time,
            amplitude: a.amplitude,
            peaks: wire_peaks(&a.peaks),
        }
    }
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|e| format!(r#"{{"type":"reject","seq":null,"reason":"internal","detail":"{e}"}}"#))
    }
}

/// Outcome of decoding a raw client message.
#[derive(Clone, Debug, PartialEq)]
pub enum Reply {
    Accepted { seq: u64, command: Command },
    Rejected(ServerMessage),
}

impl Reply {
    pub fn parse(raw: &str) -> Reply {
        let value: serde_json::Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => return Reply::reject(None, "malformed_json", e.to_string()),
        };
        let seq = value.get("seq").and_then(|s| s.as_u64());
        match value.get("type").and_then(|t| t.as_str()) {
            Some("command") => {}
            Some(other) => return Reply::reject(seq, "unknown_type", other.to_string()),
            None => return Reply::reject(seq, "missing_type", "message has no type".into()),
        }
        let Some(seq) = seq else {
            return Reply::reject(None, "missing_seq", "command has no sequence number".into());
        };
        match serde_json::from_value::<ClientMessage>(value) {
            Ok(ClientMessage::Command { payload, .. }) => Reply::Accepted { seq, command: payload },
            Err(e) => Reply::reject(Some(seq), "invalid_payload", e.to_string()),
        }
    }

    pub fn reject(seq: Option<u64>, reason: &str, detail: String) -> Reply {
        Reply::Rejected(ServerMessage::Reject {
            seq,
            reason: reason.into(),
            detail: Some(detail),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn f32_arrays_roundtrip_little_endian() {
        let v = [1.0f32, -2.5, 3.25e-7];
        let text = encode_f32_array(&v);
        assert_eq!(decode_f32_array(&text).unwrap(), v);
        assert_eq!(encode_f32_array(&[1.0]), STANDARD.encode([0x00, 0x00, 0x80, 0x3f]));
        assert!(decode_f32_array("AAA=").is_err());
    }

    #[test]
    fn parse_command_messages() {
        let r = Reply::parse(r#"{"type":"command","seq":4,"payload":{"kind":"set_observer","value":[0,0,5]}}"#);
        assert_eq!(
            r,
            Reply::Accepted {
                seq: 4,
                command: Command::SetObserver(Vec3::new(0.0, 0.0, 5.0))
            }
        );
        let reason = |r: Reply| match r {
            Reply::Rejected(ServerMessage::Reject { reason, .. }) => reason,
            other => panic!("{other:?}"),
        };
        assert_eq!(reason(Reply::parse("{not json")), "malformed_json");
        assert_eq!(reason(Reply::parse(r#"{"type":"hello","seq":1}"#)), "unknown_type");
        assert_eq!(reason(Reply::parse(r#"{"type":"command","payload":{"kind":"pause"}}"#)), "missing_seq");
        assert_eq!(
            reason(Reply::parse(r#"{"type":"command","seq":2,"payload":{"kind":"fly"}}"#)),
            "invalid_payload"
        );
    }

    #[test]
    fn server_messages_are_tagged() {
        let json = ServerMessage::Ack { seq: 9 }.to_json();
        assert_eq!(json, r#"{"type":"ack","seq":9}"#);
        let audio = AudioParams {
            epoch: 0,
            time: 1.5,
            amplitude: 0.25,
            p_prime: 0.1,
            peaks: SpectralPeakSet::default(),
        };
        let v: serde_json::Value = serde_json::from_str(&ServerMessage::from(&audio).to_json()).unwrap();
        assert_eq!(v["type"], "audio_params");
        assert_eq!(v["amplitude"], 0.25);
    }
}
