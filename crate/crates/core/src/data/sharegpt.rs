//! Conversation-record ingestion: a JSON array of records, each holding a
//! "conversations" list of {from, value} turns that alternate human/gpt.

use crate::error::DataError;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Gpt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// Ordered turns, alternating roles starting with human, at least one gpt
/// turn.
#[derive(Debug, Clone)]
pub struct Conversation {
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self, index: usize) -> Result<(), DataError> {
        let mut expect = Role::Human;
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.role != expect {
                return Err(DataError::RoleViolation {
                    index,
                    msg: format!(
                        "turn {i} has role {:?}, expected {:?} (roles must alternate starting with human)",
                        turn.role, expect
                    ),
                });
            }
            expect = match expect {
                Role::Human => Role::Gpt,
                Role::Gpt => Role::Human,
            };
        }
        if !self.turns.iter().any(|t| t.role == Role::Gpt) {
            return Err(DataError::RoleViolation {
                index,
                msg: "conversation has no gpt turn".into(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    from: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    conversations: Vec<RawTurn>,
}

/// Parse a conversation-format file, validating role alternation.
pub fn load_sharegpt(path: &Path) -> Result<Vec<Conversation>, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_sharegpt(&text)
}

pub fn parse_sharegpt(text: &str) -> Result<Vec<Conversation>, DataError> {
    let records: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| {
        DataError::Parse {
            index: 0,
            msg: format!("top-level array: {e}"),
        }
    })?;
    let mut out = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        let raw: RawRecord =
            serde_json::from_value(record).map_err(|e| DataError::Parse {
                index,
                msg: e.to_string(),
            })?;
        let mut turns = Vec::with_capacity(raw.conversations.len());
        for t in raw.conversations {
            let role = match t.from.as_str() {
                "human" => Role::Human,
                "gpt" => Role::Gpt,
                other => {
                    return Err(DataError::Parse {
                        index,
                        msg: format!("unknown role `{other}` (expected human or gpt)"),
                    })
                }
            };
            turns.push(Turn {
                role,
                text: t.value,
            });
        }
        let conv = Conversation { turns };
        conv.validate(index)?;
        out.push(conv);
    }
    Ok(out)
}

/// Serialize conversations back to the ingestion format.
pub fn to_sharegpt_json(convs: &[Conversation]) -> String {
    let records: Vec<RawRecord> = convs
        .iter()
        .map(|c| RawRecord {
            conversations: c
                .turns
                .iter()
                .map(|t| RawTurn {
                    from: match t.role {
                        Role::Human => "human".into(),
                        Role::Gpt => "gpt".into(),
                    },
                    value: t.text.clone(),
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("serializable")
}
