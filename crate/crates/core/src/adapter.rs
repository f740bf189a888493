//! Mapping between outgoing messages and one-round TCP clients, and from
//! client replies back into the configuration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Configuration, Direction, Element, Message, Value};
use crate::eventlog::EventKind;
use crate::machine::{Redex, Rule};
use crate::models::MSG_RECEIVED;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdapterError {
    #[error("no out-adapter entry for outgoing message `{0}`")]
    Missing(String),
    #[error("client `{client}` has invalid port {port}")]
    BadPort { client: String, port: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientAction {
    pub client_id: String,
    pub host: String,
    pub port: u16,
    pub send: String,
}

impl ClientAction {
    pub fn new(client_id: &str, host: &str, port: u16, send: &str) -> Self {
        ClientAction {
            client_id: client_id.into(),
            host: host.into(),
            port,
            send: send.into(),
        }
    }
}

/// `message` is matched against the outgoing message's rendering
/// (`bolus`, `set(x, 2)`), or its bare name when no rendering matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutRule {
    pub message: String,
    pub actions: Vec<ClientAction>,
    /// Log kind recorded once per action sent.
    #[serde(default)]
    pub kind: Option<EventKind>,
    /// A failure of these clients aborts the run.
    #[serde(default)]
    pub fatal: bool,
}

/// `reply: None` matches any reply from `client`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InRule {
    pub client: String,
    #[serde(default)]
    pub reply: Option<String>,
    /// Messages produced, as text (`set-period pacing-module 50`).
    pub produce: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterTable {
    #[serde(default)]
    pub out: Vec<OutRule>,
    #[serde(default, rename = "in")]
    pub inn: Vec<InRule>,
}

impl AdapterTable {
    pub fn validate(&self) -> Result<(), AdapterError> {
        for a in self.out.iter().flat_map(|r| &r.actions) {
            if a.port == 0 {
                return Err(AdapterError::BadPort {
                    client: a.client_id.clone(),
                    port: 0,
                });
            }
        }
        Ok(())
    }

    pub fn out_rule(&self, msg: &Message) -> Result<&OutRule, AdapterError> {
        let text = msg.to_string();
        self.out
            .iter()
            .find(|r| r.message == text)
            .or_else(|| self.out.iter().find(|r| r.message == msg.name))
            .ok_or(AdapterError::Missing(text))
    }

    pub fn apply_out(&self, msg: &Message) -> Result<Vec<ClientAction>, AdapterError> {
        Ok(self.out_rule(msg)?.actions.clone())
    }

    /// Messages produced for a reply; unmatched replies produce nothing.
    pub fn apply_in(&self, client: &str, reply: &str) -> Configuration {
        let rule = self
            .inn
            .iter()
            .find(|r| r.client == client && r.reply.as_deref() == Some(reply))
            .or_else(|| self.inn.iter().find(|r| r.client == client && r.reply.is_none()));
        rule.map(|r| {
            r.produce
                .iter()
                .filter_map(|t| Message::parse_text(t, Direction::Internal))
                .map(Element::from)
                .collect()
        })
        .unwrap_or_default()
    }

    /// Every port an action may connect to, with its host.
    pub fn endpoints(&self) -> Vec<(String, u16)> {
        let mut v: Vec<(String, u16)> = self
            .out
            .iter()
            .flat_map(|r| &r.actions)
            .map(|a| (a.host.clone(), a.port))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Rewrite every action's port through `f`.
    pub fn remap_ports(&mut self, f: impl Fn(u16) -> u16) {
        for a in self.out.iter_mut().flat_map(|r| r.actions.iter_mut()) {
            a.port = f(a.port);
        }
    }
}

pub fn msg_received(client: &str, reply: &str) -> Message {
    Message::incoming(MSG_RECEIVED, vec![Value::id(client), Value::str(reply)])
}

/// Zero-time rule consuming `msg-received(client, reply)` through the table.
pub struct InAdapterRule {
    table: Arc<AdapterTable>,
}

impl InAdapterRule {
    pub fn new(table: Arc<AdapterTable>) -> Self {
        InAdapterRule { table }
    }
}

impl Rule for InAdapterRule {
    fn name(&self) -> &str {
        "in-adapter"
    }

    fn redexes(&self, config: &Configuration) -> Vec<Redex> {
        config
            .elements()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let m = e.as_message().filter(|m| m.name == MSG_RECEIVED && m.dir == Direction::In)?;
                let client = m.args.first().and_then(Value::as_id).unwrap_or("");
                let reply = m.args.get(1).and_then(Value::as_str).unwrap_or("");
                let produced = self.table.apply_in(client, reply);
                Some(Redex {
                    consumed: vec![i],
                    produced: produced.elements().to_vec(),
                    note: None,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{inject, Machine};
    use crate::time::Rational;

    fn pump_table() -> AdapterTable {
        let c = |s: &str| ClientAction::new("pump-client", "localhost", 1234, s);
        AdapterTable {
            out: vec![
                OutRule {
                    message: "bolus".into(),
                    actions: vec![c("RAT2"), c("RUN")],
                    kind: Some(EventKind::PumpCmd),
                    fatal: false,
                },
                OutRule {
                    message: "base".into(),
                    actions: vec![c("RAT1"), c("RUN")],
                    kind: Some(EventKind::PumpCmd),
                    fatal: false,
                },
            ],
            inn: vec![InRule {
                client: "pump-client".into(),
                reply: None,
                produce: vec![],
            }],
        }
    }

    fn pacer_table() -> AdapterTable {
        AdapterTable {
            out: vec![OutRule {
                message: "shock".into(),
                actions: vec![ClientAction::new("pacer-client", "localhost", 4451, "shock")],
                kind: Some(EventKind::Pace),
                fatal: false,
            }],
            inn: vec![InRule {
                client: "pacer-client".into(),
                reply: Some("shocked\n".into()),
                produce: vec!["set-period pacing-module 50".into()],
            }],
        }
    }

    #[test]
    fn out_adapter_bolus_and_base() {
        let t = pump_table();
        let sends = |m: &str| -> Vec<String> {
            t.apply_out(&Message::outgoing(m, vec![]))
                .unwrap()
                .into_iter()
                .map(|a| format!("{}@{}", a.send, a.port))
                .collect()
        };
        assert_eq!(sends("bolus"), vec!["RAT2@1234", "RUN@1234"]);
        assert_eq!(sends("base"), vec!["RAT1@1234", "RUN@1234"]);
    }

    #[test]
    fn missing_out_adapter() {
        let err = pump_table().apply_out(&Message::outgoing("stop", vec![])).unwrap_err();
        assert_eq!(err, AdapterError::Missing("stop".into()));
    }

    #[test]
    fn in_adapter_shocked() {
        let conf = pacer_table().apply_in("pacer-client", "shocked\n");
        let expected = Message::internal(
            "set-period",
            vec![Value::id("pacing-module"), Value::Num(Rational::from_integer(50))],
        );
        assert_eq!(conf, Configuration::from_elements([expected.into()]));
    }

    #[test]
    fn in_adapter_pump_reply_is_empty() {
        assert!(pump_table().apply_in("pump-client", "OK\n").is_empty());
        assert!(pacer_table().apply_in("pacer-client", "ERR\n").is_empty());
    }

    #[test]
    fn in_adapter_rule_fires_once() {
        let m = Machine::new().with_rule(Arc::new(InAdapterRule::new(Arc::new(pacer_table()))));
        let c = inject(&Configuration::new(), [msg_received("pacer-client", "shocked\n")]);
        let z = m.zero_step_traced(&c).unwrap();
        assert_eq!(z.firings.len(), 1);
        assert_eq!(z.firings[0].rule, "in-adapter");
        assert_eq!(z.config.len(), 1);
        assert_eq!(z.config.messages().next().unwrap().name, "set-period");
    }

    #[test]
    fn table_round_trips_json() {
        let t = pacer_table();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<AdapterTable>(&s).unwrap(), t);
    }
}
