//! Message rendering and push delivery.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use chrono::Timelike;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::domain::{Cause, Mechanism, ParticipantId, PreferenceKind, PreferenceLabel, Timestamp, TriggerEvent};
use crate::error::{Error, Result};

const DEFAULT_TEMPLATES: &str = include_str!("../templates/default.json");

pub const PUSH_API_KEY_ENV: &str = "PUSH_API_KEY";
pub const PUSH_API_URL_ENV: &str = "PUSH_API_URL";

/// Template text keyed by `kind.threshold` or `kind.label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Templates(BTreeMap<String, String>);

impl Default for Templates {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl Templates {
    /// Every key an event can map to.
    pub fn required_keys() -> Vec<String> {
        let mut keys = Vec::new();
        for kind in PreferenceKind::ALL {
            keys.push(format!("{kind}.threshold"));
            for label in kind.classes() {
                if !label.is_no_change() {
                    keys.push(label.to_string());
                }
            }
        }
        keys
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(text)?;
        let templates = Self(map);
        if let Some(missing) = Self::required_keys().into_iter().find(|k| !templates.0.contains_key(k)) {
            return Err(Error::MissingTemplate(missing));
        }
        Ok(templates)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.0.insert(key.into(), text.into());
    }
}

pub fn template_key(event: &TriggerEvent) -> String {
    match event.mechanism {
        Mechanism::Threshold => format!("{}.threshold", event.kind),
        Mechanism::Personalized => event.target_label.to_string(),
    }
}

/// Fills `{temperature}`, `{sound_level}`, `{probability}` (cause values, one
/// decimal) and `{hour}` (local hour of `fired_at`).
pub fn render(event: &TriggerEvent, templates: &Templates, tz: Tz) -> Result<String> {
    let key = template_key(event);
    let text = templates
        .get(&key)
        .ok_or_else(|| Error::MissingTemplate(key.clone()))?;
    let hour = event.fired_at.with_timezone(&tz).hour().to_string();
    let cause = format!("{:.1}", event.cause.value());
    let value_for = |name: &str| -> Option<&str> {
        match (name, event.cause) {
            ("hour", _) => Some(&hour),
            ("temperature", Cause::Temperature(_))
            | ("sound_level", Cause::SoundLevel(_))
            | ("probability", Cause::Probability(_)) => Some(&cause),
            _ => None,
        }
    };

    let mut out = String::with_capacity(text.len() + 8);
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                let value = value_for(name).ok_or_else(|| Error::UnfilledPlaceholder {
                    key: key.clone(),
                    placeholder: format!("{{{name}}}"),
                })?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

pub fn title_for(kind: PreferenceKind) -> &'static str {
    match kind {
        PreferenceKind::Thermal => "Thermal comfort",
        PreferenceKind::Noise => "Noise comfort",
    }
}

/// Wire shape of one push.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushMessage {
    pub recipient: ParticipantId,
    pub title: String,
    pub body: String,
    pub sent_at: Timestamp,
}

impl PushMessage {
    pub fn for_event(event: &TriggerEvent, body: String) -> Self {
        Self {
            recipient: event.participant.clone(),
            title: title_for(event.kind).to_string(),
            body,
            sent_at: event.fired_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryReceipt {
    Accepted,
    Failed(String),
}

impl DeliveryReceipt {
    pub fn is_accepted(&self) -> bool {
        matches!(self, DeliveryReceipt::Accepted)
    }
}

/// Delivers one message per call; no retries.
pub trait PushProvider {
    fn send(&self, message: &PushMessage) -> DeliveryReceipt;
}

impl<P: PushProvider + ?Sized> PushProvider for &P {
    fn send(&self, message: &PushMessage) -> DeliveryReceipt {
        (**self).send(message)
    }
}

impl<P: PushProvider + ?Sized> PushProvider for Box<P> {
    fn send(&self, message: &PushMessage) -> DeliveryReceipt {
        (**self).send(message)
    }
}

/// Accepts everything and keeps an inspectable outbox.
#[derive(Debug, Default)]
pub struct MockProvider {
    outbox: Mutex<Vec<PushMessage>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn outbox(&self) -> Vec<PushMessage> {
        self.outbox.lock().expect("outbox lock").clone()
    }

    pub fn len(&self) -> usize {
        self.outbox.lock().expect("outbox lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for msg in self.outbox.lock().expect("outbox lock").iter() {
            serde_json::to_writer(&mut out, msg)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl PushProvider for MockProvider {
    fn send(&self, message: &PushMessage) -> DeliveryReceipt {
        self.outbox.lock().expect("outbox lock").push(message.clone());
        DeliveryReceipt::Accepted
    }
}

/// Fails every send, or only sends timed at listed instants when wrapping
/// another provider.
pub struct FailingProvider<P = MockProvider> {
    inner: Option<P>,
    at: BTreeSet<Timestamp>,
    reason: String,
}

impl FailingProvider<MockProvider> {
    pub fn always(reason: impl Into<String>) -> Self {
        Self {
            inner: None,
            at: BTreeSet::new(),
            reason: reason.into(),
        }
    }
}

impl<P: PushProvider> FailingProvider<P> {
    pub fn at(inner: P, instants: impl IntoIterator<Item = Timestamp>, reason: impl Into<String>) -> Self {
        Self {
            inner: Some(inner),
            at: instants.into_iter().collect(),
            reason: reason.into(),
        }
    }

    pub fn inner(&self) -> Option<&P> {
        self.inner.as_ref()
    }
}

impl<P: PushProvider> PushProvider for FailingProvider<P> {
    fn send(&self, message: &PushMessage) -> DeliveryReceipt {
        match &self.inner {
            Some(inner) if !self.at.contains(&message.sent_at) => inner.send(message),
            _ => DeliveryReceipt::Failed(self.reason.clone()),
        }
    }
}

/// Minimal HTTP POST transport; returns the status code or a transport error.
pub trait HttpPost {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> std::result::Result<u16, String>;
}

/// Posts `PushMessage` JSON to a push service authenticated by bearer key.
pub struct HttpPushProvider<T> {
    url: String,
    api_key: String,
    transport: T,
}

impl<T: HttpPost> HttpPushProvider<T> {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>, transport: T) -> Self {
        Self {
            url: url.into(),
            api_key: api_key.into(),
            transport,
        }
    }

    /// `None` unless both `PUSH_API_URL` and `PUSH_API_KEY` are set.
    pub fn from_env(transport: T) -> Option<Self> {
        let url = std::env::var(PUSH_API_URL_ENV).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(PUSH_API_KEY_ENV).ok().filter(|s| !s.is_empty())?;
        Some(Self::new(url, key, transport))
    }
}

impl<T: HttpPost> PushProvider for HttpPushProvider<T> {
    fn send(&self, message: &PushMessage) -> DeliveryReceipt {
        let body = match serde_json::to_string(message) {
            Ok(b) => b,
            Err(e) => return DeliveryReceipt::Failed(e.to_string()),
        };
        match self.transport.post_json(&self.url, &self.api_key, &body) {
            Ok(status) if (200..300).contains(&status) => DeliveryReceipt::Accepted,
            Ok(status) => DeliveryReceipt::Failed(format!("HTTP {status}")),
            Err(e) => DeliveryReceipt::Failed(e),
        }
    }
}

/// Renders nothing; sends a pre-rendered payload for `event`.
pub fn send(event: &TriggerEvent, payload: &str, provider: &dyn PushProvider) -> DeliveryReceipt {
    provider.send(&PushMessage::for_event(event, payload.to_string()))
}

/// Label keys a personalized event can carry.
pub fn personalized_labels() -> impl Iterator<Item = PreferenceLabel> {
    PreferenceKind::ALL
        .into_iter()
        .flat_map(|k| k.classes())
        .filter(|l| !l.is_no_change())
}
