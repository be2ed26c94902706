use std::time::Duration;

use serde_json::json;

use super::{check_probability, Classifier, ClassifierError};
use crate::corpus::Note;
use crate::wire::{PredictResponse, Ticket, WireClient};

/// Classifier served by another process over the line protocol.
pub struct ExternalClassifier {
    client: WireClient,
    id: String,
}

impl ExternalClassifier {
    pub fn new(client: WireClient, id: impl Into<String>) -> Self {
        ExternalClassifier {
            client,
            id: id.into(),
        }
    }

    /// `endpoint` is `tcp:HOST:PORT` or `exec:COMMAND ARGS...`.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ClassifierError> {
        let client = WireClient::connect(endpoint, timeout)?;
        Ok(ExternalClassifier::new(client, format!("external({endpoint})")))
    }

    fn send(&self, note: &Note) -> Result<Ticket, ClassifierError> {
        let tokens: Vec<&str> = note.tokens.iter().map(|t| t.as_str()).collect();
        Ok(self.client.send(|id| json!({ "id": id, "tokens": tokens }))?)
    }

    fn receive(&self, ticket: Ticket) -> Result<f64, ClassifierError> {
        let expected = ticket.id().to_owned();
        let value = self.client.wait(ticket)?;
        let resp: PredictResponse = serde_json::from_value(value)
            .map_err(|e| ClassifierError::Protocol(format!("bad response to `{expected}`: {e}")))?;
        if resp.id != expected {
            return Err(ClassifierError::Protocol(format!(
                "response id `{}` does not match request `{expected}`",
                resp.id
            )));
        }
        check_probability(resp.p)
    }
}

impl Classifier for ExternalClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, note: &Note) -> Result<f64, ClassifierError> {
        let ticket = self.send(note)?;
        self.receive(ticket)
    }

    fn predict_many(&self, notes: &[Note]) -> Result<Vec<f64>, ClassifierError> {
        let tickets = notes.iter().map(|n| self.send(n)).collect::<Result<Vec<_>, _>>()?;
        tickets.into_iter().map(|t| self.receive(t)).collect()
    }
}
