use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use lfd_core::demo::StatsReport;

use crate::session::{EndReason, GameManifest, SessionSummary, TickReport};
use crate::{Result, ServiceError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start {
        game: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Key {
        code: String,
        down: bool,
    },
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Manifest(GameManifest),
    Frame {
        /// Base64 of the raw grayscale bytes, row-major.
        b64: String,
        width: usize,
        height: usize,
        score: f64,
        lives: u32,
        remaining_s: f64,
        action: String,
    },
    End {
        reason: EndReason,
        stats: StatsReport,
        raw_frames: u64,
        recorded_steps: usize,
    },
    Error {
        message: String,
    },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ServiceError::Protocol(format!("bad client message: {e}")))
    }
}

impl ServerMessage {
    pub fn frame(report: &TickReport, action_name: &str) -> Self {
        ServerMessage::Frame {
            b64: STANDARD.encode(&report.frame.pixels),
            width: report.frame.width,
            height: report.frame.height,
            score: report.score,
            lives: report.lives,
            remaining_s: report.remaining_s,
            action: action_name.to_string(),
        }
    }

    pub fn end(summary: &SessionSummary) -> Self {
        ServerMessage::End {
            reason: summary.reason,
            stats: summary.stats.clone(),
            raw_frames: summary.raw_frames,
            recorded_steps: summary.recorded_steps,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    /// Decodes a frame payload back to raw pixels.
    pub fn frame_pixels(&self) -> Option<Vec<u8>> {
        match self {
            ServerMessage::Frame { b64, .. } => STANDARD.decode(b64).ok(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_use_wire_names() {
        assert_eq!(
            ClientMessage::parse(r#"{"type":"start","game":"mini_catch"}"#).unwrap(),
            ClientMessage::Start { game: "mini_catch".into(), seed: None }
        );
        assert_eq!(
            ClientMessage::parse(r#"{"type":"key","code":"Space","down":true}"#).unwrap(),
            ClientMessage::Key { code: "Space".into(), down: true }
        );
        assert_eq!(ClientMessage::parse(r#"{"type":"stop"}"#).unwrap(), ClientMessage::Stop);
        assert!(ClientMessage::parse(r#"{"type":"jump"}"#).is_err());
    }

    #[test]
    fn error_message_shape() {
        let v: serde_json::Value = serde_json::from_str(&ServerMessage::error("nope").to_json()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["message"], "nope");
    }
}
