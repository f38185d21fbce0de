//! A set of MACs sharing one channel graph, stepped frame by frame.

use std::collections::BTreeMap;

use super::mac::{Mac, MacEvent};
use crate::channel::{ChannelGraph, ModuleId, TxFrame, TxHistory};
use crate::error::Result;
use crate::signals::{spectral_frame, RingShaper, TransducerModel};

#[derive(Debug, Clone)]
pub struct MacNetwork {
    pub graph: ChannelGraph,
    pub transducer: TransducerModel,
    pub macs: BTreeMap<usize, Mac>,
    shapers: BTreeMap<ModuleId, RingShaper>,
    history: TxHistory,
    frame: u64,
}

impl MacNetwork {
    pub fn new(graph: ChannelGraph, transducer: TransducerModel, macs: BTreeMap<usize, Mac>) -> Self {
        let shapers = graph.modules().map(|m| (m, RingShaper::new(&transducer))).collect();
        let history = TxHistory::new(graph.max_delay());
        MacNetwork {
            graph,
            transducer,
            macs,
            shapers,
            history,
            frame: 0,
        }
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// Advances one frame; returns `(robot, event)` pairs in robot order.
    pub fn step(&mut self) -> Result<Vec<(usize, MacEvent)>> {
        let f = self.frame;
        let mut events = Vec::new();
        for (&r, mac) in self.macs.iter_mut() {
            events.extend(mac.begin_frame(f).into_iter().map(|e| (r, e)));
        }
        let mut tx = BTreeMap::new();
        for (&m, shaper) in self.shapers.iter_mut() {
            let Some(mac) = self.macs.get(&m.robot) else { continue };
            let driven = mac.tx_modules(f).contains(&m.module);
            if !driven && shaper.is_quiet() {
                continue;
            }
            let frame = TxFrame::render(shaper, &self.transducer, f, |t| mac.tx_drive(m.module, t));
            if !frame.is_silent() {
                tx.insert(m, frame);
            }
        }
        self.history.push(f, tx);
        for (&r, mac) in self.macs.iter_mut() {
            let Some(module) = mac.listening(f) else {
                continue;
            };
            let x = self.graph.receive(ModuleId::new(r, module), &self.history, f);
            let sf = spectral_frame(&x.samples, f)?;
            events.extend(mac.end_frame(f, Some(&sf)).into_iter().map(|e| (r, e)));
        }
        self.frame += 1;
        Ok(events)
    }
}
