//! Routes messages to the handler family owning their kind.

use std::sync::Arc;

use super::message::{Message, MessageKind};
use super::WireError;

/// Handler families. Rejections route to the originator's
/// pending-request bookkeeping rather than a protocol handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindGroup {
    Relationship,
    Training,
    Transmission,
    Reject,
}

impl MessageKind {
    pub fn group(&self) -> KindGroup {
        match self {
            MessageKind::InviteWorker | MessageKind::WorkerReady => KindGroup::Relationship,
            MessageKind::StartTraining | MessageKind::TrainingDone => KindGroup::Training,
            MessageKind::FetchWeights | MessageKind::WeightsCredential => KindGroup::Transmission,
            MessageKind::Reject => KindGroup::Reject,
        }
    }
}

/// A handler consumes a message and may produce one reply, written back
/// on the same connection.
pub trait Handler: Send + Sync {
    fn handle(&self, msg: &Message) -> Result<Option<Message>, WireError>;
}

impl<F> Handler for F
where
    F: Fn(&Message) -> Result<Option<Message>, WireError> + Send + Sync,
{
    fn handle(&self, msg: &Message) -> Result<Option<Message>, WireError> {
        self(msg)
    }
}

/// Immutable after startup; one handler per kind group.
#[derive(Default, Clone)]
pub struct HandlerTable {
    relationship: Option<Arc<dyn Handler>>,
    training: Option<Arc<dyn Handler>>,
    transmission: Option<Arc<dyn Handler>>,
    reject: Option<Arc<dyn Handler>>,
}

impl HandlerTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_relationship(mut self, h: Arc<dyn Handler>) -> Self {
        self.relationship = Some(h);
        self
    }

    pub fn with_training(mut self, h: Arc<dyn Handler>) -> Self {
        self.training = Some(h);
        self
    }

    pub fn with_transmission(mut self, h: Arc<dyn Handler>) -> Self {
        self.transmission = Some(h);
        self
    }

    pub fn with_reject(mut self, h: Arc<dyn Handler>) -> Self {
        self.reject = Some(h);
        self
    }

    fn get(&self, group: KindGroup) -> Option<&Arc<dyn Handler>> {
        match group {
            KindGroup::Relationship => self.relationship.as_ref(),
            KindGroup::Training => self.training.as_ref(),
            KindGroup::Transmission => self.transmission.as_ref(),
            KindGroup::Reject => self.reject.as_ref(),
        }
    }
}

/// Invokes the handler owning the message's kind group.
pub fn dispatch(msg: &Message, table: &HandlerTable) -> Result<Option<Message>, WireError> {
    let group = msg.kind().group();
    match table.get(group) {
        Some(handler) => handler.handle(msg),
        None => Err(WireError::NoHandler(group)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::message::{Payload, RejectReason, StartPayload};
    use fedloop_core::types::{DataId, Endpoint, WorkerId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn counting_handler(counter: Arc<AtomicUsize>) -> Arc<dyn Handler> {
        Arc::new(move |_: &Message| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(None)
        })
    }

    fn start_training() -> Message {
        Message::new(
            Endpoint::new("h", 1),
            Payload::StartTraining(StartPayload {
                worker_id: WorkerId(0),
                model_id: DataId::random(&mut ChaCha8Rng::seed_from_u64(0)),
                epochs: 1,
            }),
        )
    }

    #[test]
    fn routes_to_the_owning_group() {
        let training = Arc::new(AtomicUsize::new(0));
        let transmission = Arc::new(AtomicUsize::new(0));
        let table = HandlerTable::new()
            .with_training(counting_handler(Arc::clone(&training)))
            .with_transmission(counting_handler(Arc::clone(&transmission)));

        dispatch(&start_training(), &table).unwrap();
        assert_eq!(training.load(Ordering::SeqCst), 1);
        assert_eq!(transmission.load(Ordering::SeqCst), 0);

        let fetch = Message::new(
            Endpoint::new("h", 1),
            Payload::FetchWeights(crate::wire::message::FetchPayload {
                model_id: DataId::random(&mut ChaCha8Rng::seed_from_u64(1)),
            }),
        );
        dispatch(&fetch, &table).unwrap();
        assert_eq!(transmission.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn registry_gap_surfaces_no_handler() {
        let table = HandlerTable::new();
        let err = dispatch(&start_training(), &table).unwrap_err();
        assert_eq!(err, WireError::NoHandler(KindGroup::Training));
        let reject = Message::reject(Endpoint::new("h", 1), RejectReason::Busy, "");
        assert_eq!(dispatch(&reject, &table).unwrap_err(), WireError::NoHandler(KindGroup::Reject));
    }
}
