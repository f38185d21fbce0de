//! Slotless ALOHA over the time-multiplexed acoustic modules of one robot.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fsk::{demod_frame, modulate, Demodulator, FskParams, RxEvent, ToneSchedule};
use super::packet::{encode_packet, ACK_NIBBLE};
use crate::error::{Error, Result};
use crate::signals::{SpectralFrame, FRAME_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacConfig {
    /// Resends after the first attempt before giving up.
    pub retry_limit: u32,
    /// Upper bound of the uniform backoff, in packet durations.
    pub backoff_max_packets: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            retry_limit: 8,
            backoff_max_packets: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MacEvent {
    StartDetected { module: usize },
    PacketReceived { module: usize, data: u8 },
    ParityError { module: usize },
    AckSent { module: usize },
    AttemptStarted { data: u8, attempt: u32 },
    Delivered { data: u8, attempts: u32 },
    DeliveryFailed { data: u8, attempts: u32 },
}

/// Outstanding delivery awaiting its acknowledgement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingAck {
    pub data: u8,
    pub modules: Vec<usize>,
    pub deadline: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacState {
    pub n_modules: usize,
    pub listen_index: usize,
    /// Module the demodulator is locked to, if any.
    pub lock: Option<usize>,
    pub pending_ack: Option<PendingAck>,
    pub dwell_remaining: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SendPhase {
    Ready,
    Broadcast,
    AwaitAck,
    Backoff { until: u64 },
}

#[derive(Debug, Clone)]
struct SendJob {
    data: u8,
    modules: Vec<usize>,
    attempts: u32,
    phase: SendPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AckPhase {
    /// Waiting for the sender's broadcast to stop, at most until the deadline.
    WaitDrop {
        deadline: u64,
    },
    Sending,
}

#[derive(Debug, Clone, Copy)]
struct AckJob {
    module: usize,
    phase: AckPhase,
}

#[derive(Debug, Clone)]
struct TxJob {
    modules: Vec<usize>,
    schedule: ToneSchedule,
    first_frame: u64,
    last_frame: u64,
}

impl TxJob {
    fn covers(&self, frame_index: u64) -> bool {
        (self.first_frame..=self.last_frame).contains(&frame_index)
    }
}

/// One robot's half-duplex MAC and demodulator.
///
/// Per frame the owner calls `begin_frame`, renders `tx_drive` for every
/// module, then hands the frame received on `listening()` to `end_frame`.
#[derive(Debug, Clone)]
pub struct Mac {
    pub state: MacState,
    fsk: FskParams,
    cfg: MacConfig,
    demod: Demodulator,
    rng: ChaCha8Rng,
    /// Sample offset of the current transmission's symbol clock within a frame.
    clock_phase: u64,
    tx: Option<TxJob>,
    outbox: VecDeque<(u8, Vec<usize>)>,
    send: Option<SendJob>,
    ack: Option<AckJob>,
    hold_used: u64,
}

impl Mac {
    pub fn new(n_modules: usize, fsk: FskParams, cfg: MacConfig, seed: u64, robot: usize) -> Result<Self> {
        fsk.validate()?;
        if n_modules == 0 {
            return Err(Error::UnknownModule(format!("robot {robot} has no modules")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x4d41_4300_0000_0000 | robot as u64);
        Ok(Mac {
            state: MacState {
                n_modules,
                listen_index: 0,
                lock: None,
                pending_ack: None,
                dwell_remaining: fsk.packet_frames(),
            },
            fsk,
            cfg,
            demod: Demodulator::new(fsk),
            rng,
            clock_phase: 0,
            tx: None,
            outbox: VecDeque::new(),
            send: None,
            ack: None,
            hold_used: 0,
        })
    }

    pub fn fsk(&self) -> &FskParams {
        &self.fsk
    }

    pub fn clock_phase(&self) -> u64 {
        self.clock_phase
    }

    fn t_packet(&self) -> u64 {
        self.fsk.packet_frames()
    }

    /// Queues `data` for broadcast on `out_modules`.
    pub fn send(&mut self, data: u8, out_modules: &[usize]) -> Result<()> {
        if data >= ACK_NIBBLE {
            return Err(Error::InvalidNibble(data));
        }
        if out_modules.is_empty() {
            return Err(Error::UnknownModule("empty output module set".into()));
        }
        if let Some(&m) = out_modules.iter().find(|&&m| m >= self.state.n_modules) {
            return Err(Error::UnknownModule(format!("module {m}")));
        }
        self.outbox.push_back((data, out_modules.to_vec()));
        Ok(())
    }

    pub fn is_idle(&self) -> bool {
        self.tx.is_none() && self.outbox.is_empty() && self.send.is_none() && self.ack.is_none()
    }

    pub fn is_transmitting(&self, frame_index: u64) -> bool {
        self.tx.as_ref().is_some_and(|j| j.covers(frame_index))
    }

    /// Module connected to the demodulator this frame; none while transmitting.
    pub fn listening(&self, frame_index: u64) -> Option<usize> {
        (!self.is_transmitting(frame_index)).then_some(self.state.listen_index)
    }

    pub fn tx_drive(&self, module: usize, t: u64) -> Option<(usize, f64)> {
        let job = self.tx.as_ref()?;
        if !job.modules.contains(&module) {
            return None;
        }
        job.schedule.drive(t)
    }

    /// Modules driven at some point during the frame.
    pub fn tx_modules(&self, frame_index: u64) -> &[usize] {
        match &self.tx {
            Some(j) if j.covers(frame_index) => &j.modules,
            _ => &[],
        }
    }

    fn start_tx(&mut self, frame_index: u64, bits: &[u8], repeats: usize, modules: Vec<usize>) {
        let one = modulate(bits, &self.fsk).expect("validated parameters");
        let tones: Vec<_> = std::iter::repeat_n(one, repeats).flatten().collect();
        // symbol clocks are not frame-locked; each transmission lands at a fresh offset
        self.clock_phase = self.rng.random_range(0..FRAME_LEN as u64);
        let schedule = ToneSchedule::new(frame_index * FRAME_LEN as u64 + self.clock_phase, tones);
        let last_frame = schedule.last_frame();
        self.tx = Some(TxJob {
            modules,
            schedule,
            first_frame: frame_index,
            last_frame,
        });
        self.demod.reset();
        self.state.lock = None;
    }

    fn resume_listening(&mut self) {
        self.demod.reset();
        self.state.lock = None;
        self.state.dwell_remaining = self.t_packet();
        self.hold_used = 0;
    }

    pub fn begin_frame(&mut self, frame_index: u64) -> Vec<MacEvent> {
        let mut events = Vec::new();
        let tp = self.t_packet();
        if self.tx.as_ref().is_some_and(|j| frame_index > j.last_frame) {
            self.tx = None;
            if matches!(
                self.ack,
                Some(AckJob {
                    phase: AckPhase::Sending,
                    ..
                })
            ) {
                self.ack = None;
            }
            if let Some(job) = self.send.as_mut().filter(|j| j.phase == SendPhase::Broadcast) {
                job.phase = SendPhase::AwaitAck;
                let deadline = frame_index + self.state.n_modules as u64 * tp;
                self.state.pending_ack = Some(PendingAck {
                    data: job.data,
                    modules: job.modules.clone(),
                    deadline,
                });
                self.state.listen_index = job.modules[0];
            }
            self.resume_listening();
        }
        if let Some(AckJob {
            module,
            phase: AckPhase::WaitDrop { deadline },
        }) = self.ack
        {
            if frame_index > deadline {
                self.send_ack(frame_index, module, &mut events);
            }
        }
        if let Some(job) = self.send.as_mut() {
            if let SendPhase::Backoff { until } = job.phase {
                if frame_index >= until {
                    job.phase = SendPhase::Ready;
                }
            }
        }
        if self.tx.is_some() || self.ack.is_some() || self.demod.is_locked() {
            return events;
        }
        if self.send.is_none() {
            if let Some((data, modules)) = self.outbox.pop_front() {
                self.send = Some(SendJob {
                    data,
                    modules,
                    attempts: 0,
                    phase: SendPhase::Ready,
                });
            }
        }
        if let Some(job) = self.send.as_mut().filter(|j| j.phase == SendPhase::Ready) {
            job.attempts += 1;
            job.phase = SendPhase::Broadcast;
            let (data, attempt, modules) = (job.data, job.attempts, job.modules.clone());
            events.push(MacEvent::AttemptStarted { data, attempt });
            let bits = encode_packet(data).expect("data checked on send");
            self.start_tx(frame_index, &bits, self.state.n_modules, modules);
        }
        events
    }

    fn send_ack(&mut self, frame_index: u64, module: usize, events: &mut Vec<MacEvent>) {
        let bits = encode_packet(ACK_NIBBLE).expect("reserved nibble fits");
        self.start_tx(frame_index, &bits, 1, vec![module]);
        self.ack = Some(AckJob {
            module,
            phase: AckPhase::Sending,
        });
        events.push(MacEvent::AckSent { module });
    }

    /// Consumes the frame received on the listening module.
    pub fn end_frame(&mut self, frame_index: u64, rx: Option<&SpectralFrame>) -> Vec<MacEvent> {
        let mut events = Vec::new();
        let (Some(module), Some(rx)) = (self.listening(frame_index), rx) else {
            return events;
        };
        let tp = self.t_packet();
        let soft = demod_frame(rx, &self.fsk);
        let carrier = self.demod.has_carrier(&soft);

        if let Some(AckJob {
            module: m,
            phase: AckPhase::WaitDrop { .. },
        }) = self.ack
        {
            if !carrier {
                self.send_ack(frame_index + 1, m, &mut events);
            }
            return events;
        }

        for ev in self.demod.push_soft(soft) {
            match ev {
                RxEvent::StartDetected => events.push(MacEvent::StartDetected { module }),
                RxEvent::Bit { .. } => {}
                RxEvent::ParityError => {
                    events.push(MacEvent::ParityError { module });
                    // the sender repeats; stay for one more packet
                    self.state.dwell_remaining = tp;
                    self.hold_used = 0;
                }
                RxEvent::Packet { data } => self.on_packet(frame_index, module, data, &mut events),
            }
        }
        self.state.lock = self.demod.is_locked().then_some(module);

        let awaiting = self.send.as_ref().is_some_and(|j| j.phase == SendPhase::AwaitAck);
        if awaiting && !self.demod.is_locked() {
            let deadline = self.state.pending_ack.as_ref().map_or(0, |p| p.deadline);
            if frame_index + 1 >= deadline {
                self.ack_timeout(frame_index, &mut events);
            }
        }

        if self.ack.is_none() && !self.demod.is_locked() {
            self.state.dwell_remaining = self.state.dwell_remaining.saturating_sub(1);
            if self.state.dwell_remaining == 0 {
                if carrier && self.hold_used < tp {
                    // something is on the air here; give the start sequence a chance
                    self.state.dwell_remaining = 1;
                    self.hold_used += 1;
                } else {
                    self.rotate();
                }
            }
        }
        events
    }

    fn on_packet(&mut self, frame_index: u64, module: usize, data: u8, events: &mut Vec<MacEvent>) {
        let awaiting = self.send.as_ref().is_some_and(|j| j.phase == SendPhase::AwaitAck);
        if data == ACK_NIBBLE {
            if awaiting {
                let job = self.send.take().expect("awaiting implies a job");
                self.state.pending_ack = None;
                events.push(MacEvent::Delivered {
                    data: job.data,
                    attempts: job.attempts,
                });
                self.resume_listening();
            }
            return;
        }
        if awaiting {
            return;
        }
        events.push(MacEvent::PacketReceived { module, data });
        let deadline = frame_index + self.state.n_modules as u64 * self.t_packet();
        self.ack = Some(AckJob {
            module,
            phase: AckPhase::WaitDrop { deadline },
        });
    }

    fn ack_timeout(&mut self, frame_index: u64, events: &mut Vec<MacEvent>) {
        let tp = self.t_packet();
        let job = self.send.as_mut().expect("awaiting implies a job");
        self.state.pending_ack = None;
        if job.attempts > self.cfg.retry_limit {
            events.push(MacEvent::DeliveryFailed {
                data: job.data,
                attempts: job.attempts,
            });
            self.send = None;
        } else {
            let wait = self.rng.random_range(0..=self.cfg.backoff_max_packets as u64 * tp);
            job.phase = SendPhase::Backoff {
                until: frame_index + 1 + wait,
            };
        }
        self.resume_listening();
    }

    fn rotate(&mut self) {
        let set: Vec<usize> = match &self.send {
            Some(j) if j.phase == SendPhase::AwaitAck => j.modules.clone(),
            _ => (0..self.state.n_modules).collect(),
        };
        let pos = set.iter().position(|&m| m == self.state.listen_index);
        self.state.listen_index = match pos {
            Some(p) => set[(p + 1) % set.len()],
            None => set[0],
        };
        self.resume_listening();
    }
}
