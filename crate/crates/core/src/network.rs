//! Point-to-point message timing over a latency-bandwidth model with
//! eager/rendezvous protocol selection. Links never contend.

use serde::{Deserialize, Serialize};

use crate::model::{LinkSpec, MachineSpec, NetworkSpec, ProtocolMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Eager,
    Rendezvous,
}

/// Latency plus size over bandwidth.
pub fn transfer_time(size: u64, link: LinkSpec) -> f64 {
    link.latency + size as f64 / link.bandwidth
}

/// `auto` picks eager up to and including the eager limit.
pub fn select_mode(size: u64, eager_limit: u64, requested: ProtocolMode) -> Protocol {
    match requested {
        ProtocolMode::Eager => Protocol::Eager,
        ProtocolMode::Rendezvous => Protocol::Rendezvous,
        ProtocolMode::Auto if size <= eager_limit => Protocol::Eager,
        ProtocolMode::Auto => Protocol::Rendezvous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageEvent {
    pub sender: usize,
    pub receiver: usize,
    pub size: u64,
    pub mode: Protocol,
    pub post_send: f64,
    pub post_recv: f64,
    pub arrival: f64,
    pub send_complete: f64,
    pub recv_complete: f64,
}

impl MessageEvent {
    pub fn new(
        sender: usize,
        receiver: usize,
        size: u64,
        mode: Protocol,
        post_send: f64,
        post_recv: f64,
    ) -> Self {
        MessageEvent {
            sender,
            receiver,
            size,
            mode,
            post_send,
            post_recv,
            arrival: f64::NAN,
            send_complete: f64::NAN,
            recv_complete: f64::NAN,
        }
    }
}

/// Fills arrival and completion times from the two post times.
pub fn complete_on_link(mut msg: MessageEvent, link: LinkSpec, handshake: f64) -> MessageEvent {
    let wire = transfer_time(msg.size, link);
    match msg.mode {
        Protocol::Eager => {
            msg.send_complete = msg.post_send;
            msg.arrival = msg.post_send + wire;
            msg.recv_complete = msg.arrival.max(msg.post_recv);
        }
        Protocol::Rendezvous => {
            let start = msg.post_send.max(msg.post_recv) + handshake;
            msg.arrival = start + wire;
            msg.send_complete = msg.arrival;
            msg.recv_complete = msg.arrival;
        }
    }
    msg
}

/// [`complete_on_link`] over the inter-node link of `net`.
pub fn complete_message(msg: MessageEvent, net: &NetworkSpec) -> MessageEvent {
    complete_on_link(msg, net.inter_node(), net.rendezvous_handshake)
}

/// Network plus the rank-to-node map that picks intra- or inter-node links.
#[derive(Debug, Clone, PartialEq)]
pub struct Fabric {
    pub net: NetworkSpec,
    ranks_per_node: Option<usize>,
}

impl Fabric {
    /// Every pair uses the inter-node link.
    pub fn uniform(net: NetworkSpec) -> Self {
        Fabric {
            net,
            ranks_per_node: None,
        }
    }

    pub fn new(net: NetworkSpec, machine: &MachineSpec) -> Self {
        Fabric {
            net,
            ranks_per_node: Some(machine.ranks_per_node()),
        }
    }

    pub fn link(&self, a: usize, b: usize) -> LinkSpec {
        let same_node = self
            .ranks_per_node
            .is_some_and(|per| a / per == b / per);
        self.net.link(same_node)
    }

    pub fn protocol(&self, size: u64, requested: ProtocolMode) -> Protocol {
        select_mode(size, self.net.eager_limit, requested)
    }

    pub fn complete(&self, msg: MessageEvent) -> MessageEvent {
        complete_on_link(
            msg,
            self.link(msg.sender, msg.receiver),
            self.net.rendezvous_handshake,
        )
    }
}
