use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gains::{air_delay_samples, air_gain, joint_gain, membrane_gain, AirParams, MembraneParams};
use crate::error::{Error, Result};
use crate::signals::{bin_freq, RingShaper, SampleStream, TransducerModel, FRAME_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModuleId {
    pub robot: usize,
    pub module: usize,
}

impl ModuleId {
    pub const fn new(robot: usize, module: usize) -> Self {
        ModuleId { robot, module }
    }

    fn key(self) -> u64 {
        ((self.robot as u64) << 16) | self.module as u64
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}m{}", self.robot, self.module)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    Membrane,
    Joint,
    Air,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathParams {
    /// Along-skin distance at the current volume.
    Membrane {
        geodesic_m: f64,
    },
    Joint {
        n_contacts: u8,
    },
    /// Centre-to-centre distance and the two robots' current volumes.
    Air {
        dist_m: f64,
        vol_tx: f64,
        vol_rx: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticPath {
    pub src: ModuleId,
    pub dst: ModuleId,
    pub params: PathParams,
}

impl AcousticPath {
    pub fn new(src: ModuleId, dst: ModuleId, params: PathParams) -> Self {
        AcousticPath { src, dst, params }
    }

    pub fn kind(&self) -> PathKind {
        match self.params {
            PathParams::Membrane { .. } => PathKind::Membrane,
            PathParams::Joint { .. } => PathKind::Joint,
            PathParams::Air { .. } => PathKind::Air,
        }
    }

    pub fn delay_samples(&self) -> usize {
        match self.params {
            PathParams::Air { dist_m, .. } => air_delay_samples(dist_m),
            _ => 0,
        }
    }

    /// Undamped gain at `freq`, always in `[0, 1]`.
    pub fn gain(&self, params: &ChannelParams, freq: f64) -> f64 {
        let g = match self.params {
            PathParams::Membrane { geodesic_m } => membrane_gain(&params.membrane, freq, geodesic_m),
            PathParams::Joint { n_contacts } => params.joint_coupling * joint_gain(n_contacts).unwrap_or(0.0),
            PathParams::Air { dist_m, vol_tx, vol_rx } => {
                air_gain(&params.air, freq, dist_m, vol_tx, vol_rx).unwrap_or(0.0)
            }
        };
        g.clamp(0.0, 1.0)
    }

    fn touches(&self, m: ModuleId) -> bool {
        self.src == m || self.dst == m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub membrane: MembraneParams,
    pub air: AirParams,
    /// Joint transmission with all three magnets aligned.
    pub joint_coupling: f64,
    /// Gain factor on every path touching a module under contact.
    pub delta_contact: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            membrane: MembraneParams::default(),
            air: AirParams::default(),
            joint_coupling: 0.5,
            delta_contact: 0.05,
        }
    }
}

/// One frame of what a transducer emits, split into its bin-aligned tones.
///
/// Keeping the tones separate lets every path apply its gain at the tone's
/// own frequency (narrowband approximation).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TxFrame {
    pub components: Vec<(usize, Vec<f64>)>,
}

impl TxFrame {
    pub fn tone(bin: usize, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), FRAME_LEN);
        TxFrame {
            components: vec![(bin, samples)],
        }
    }

    /// Renders frame `frame_index` of a transducer driven by `drive`, with the
    /// transducer's frequency response applied to the drive amplitude.
    pub fn render<F>(shaper: &mut RingShaper, model: &TransducerModel, frame_index: u64, drive: F) -> Self
    where
        F: Fn(u64) -> Option<(usize, f64)>,
    {
        let start = frame_index * FRAME_LEN as u64;
        TxFrame {
            components: shaper.render(start, FRAME_LEN, |t| {
                drive(t).map(|(b, a)| (b, a * model.tx_gain(bin_freq(b))))
            }),
        }
    }

    pub fn is_silent(&self) -> bool {
        self.components.is_empty()
    }

    pub fn to_stream(&self) -> SampleStream {
        let mut out = vec![0.0; FRAME_LEN];
        for (_, c) in &self.components {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        SampleStream::new(out)
    }
}

/// The last few frames of every transmitter, deep enough to serve the
/// longest air delay.
#[derive(Debug, Clone, Default)]
pub struct TxHistory {
    depth: usize,
    frames: VecDeque<(u64, BTreeMap<ModuleId, TxFrame>)>,
}

impl TxHistory {
    pub fn new(max_delay_samples: usize) -> Self {
        TxHistory {
            depth: max_delay_samples.div_ceil(FRAME_LEN) + 1,
            frames: VecDeque::new(),
        }
    }

    pub fn push(&mut self, frame_index: u64, tx: BTreeMap<ModuleId, TxFrame>) {
        self.frames.push_back((frame_index, tx));
        while self.frames.len() > self.depth {
            self.frames.pop_front();
        }
    }

    fn get(&self, frame_index: u64, m: ModuleId) -> Option<&TxFrame> {
        self.frames
            .iter()
            .rev()
            .find(|(f, _)| *f == frame_index)
            .and_then(|(_, map)| map.get(&m))
    }
}

/// A chain of primitive paths from a transmitter to a receiver; its gain is
/// the product of the hops.
#[derive(Debug, Clone, PartialEq)]
struct Route {
    src: ModuleId,
    hops: Vec<usize>,
    delay: usize,
}

#[derive(Debug, Clone)]
pub struct ChannelGraph {
    pub params: ChannelParams,
    modules: BTreeSet<ModuleId>,
    paths: Vec<AcousticPath>,
    routes: BTreeMap<ModuleId, Vec<Route>>,
    noise_sigma: BTreeMap<ModuleId, f64>,
    damped: BTreeSet<ModuleId>,
    seed: u64,
}

impl ChannelGraph {
    /// Validates the primitive paths and derives every transmitter-to-receiver
    /// route: direct paths plus single-joint routes that continue over the
    /// membranes on either side of the joint.
    pub fn new(
        params: ChannelParams,
        modules: impl IntoIterator<Item = ModuleId>,
        paths: Vec<AcousticPath>,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let modules: BTreeSet<ModuleId> = modules.into_iter().collect();
        for p in &paths {
            for m in [p.src, p.dst] {
                if !modules.contains(&m) {
                    return Err(Error::UnknownModule(m.to_string()));
                }
            }
            let same_robot = p.src.robot == p.dst.robot;
            let ok = match p.kind() {
                PathKind::Membrane => same_robot && p.src != p.dst,
                PathKind::Joint | PathKind::Air => !same_robot,
            };
            if !ok {
                return Err(Error::Scenario(vec![format!(
                    "{:?} path {} -> {} connects the wrong robots",
                    p.kind(),
                    p.src,
                    p.dst
                )]));
            }
            if let PathParams::Joint { n_contacts } = p.params {
                joint_gain(n_contacts)?;
            }
        }
        let routes = build_routes(&paths);
        let noise_sigma = modules.iter().map(|&m| (m, noise_sigma)).collect();
        Ok(ChannelGraph {
            params,
            modules,
            paths,
            routes,
            noise_sigma,
            damped: BTreeSet::new(),
            seed,
        })
    }

    pub fn modules(&self) -> impl Iterator<Item = ModuleId> + '_ {
        self.modules.iter().copied()
    }

    pub fn paths(&self) -> &[AcousticPath] {
        &self.paths
    }

    pub fn max_delay(&self) -> usize {
        self.paths.iter().map(|p| p.delay_samples()).max().unwrap_or(0)
    }

    pub fn set_noise_sigma(&mut self, m: ModuleId, sigma: f64) {
        self.noise_sigma.insert(m, sigma);
    }

    pub fn set_all_noise_sigma(&mut self, sigma: f64) {
        for v in self.noise_sigma.values_mut() {
            *v = sigma;
        }
    }

    pub fn noise_sigma(&self, m: ModuleId) -> f64 {
        self.noise_sigma.get(&m).copied().unwrap_or(0.0)
    }

    /// Recomputes per-path parameters (e.g. after volumes changed). The
    /// topology, and therefore the route table, is unchanged.
    pub fn refresh<F>(&mut self, mut f: F)
    where
        F: FnMut(&AcousticPath) -> PathParams,
    {
        for p in &mut self.paths {
            let new = f(p);
            debug_assert_eq!(std::mem::discriminant(&new), std::mem::discriminant(&p.params));
            p.params = new;
        }
    }

    pub fn set_contact(&mut self, m: ModuleId, damped: bool) -> Result<()> {
        if !self.modules.contains(&m) {
            return Err(Error::UnknownModule(m.to_string()));
        }
        if damped {
            self.damped.insert(m);
        } else {
            self.damped.remove(&m);
        }
        Ok(())
    }

    pub fn is_damped(&self, m: ModuleId) -> bool {
        self.damped.contains(&m)
    }

    /// Gain of one primitive path including contact damping.
    pub fn path_gain(&self, idx: usize, freq: f64) -> f64 {
        let p = &self.paths[idx];
        let mut g = p.gain(&self.params, freq);
        if self.damped.iter().any(|&m| p.touches(m)) {
            g *= self.params.delta_contact;
        }
        g
    }

    fn route_gain(&self, r: &Route, freq: f64) -> f64 {
        r.hops.iter().map(|&i| self.path_gain(i, freq)).product()
    }

    /// Summed zero-delay gain from `src` to `dst` at `freq` (diagnostic).
    pub fn effective_gain(&self, src: ModuleId, dst: ModuleId, freq: f64) -> f64 {
        self.routes
            .get(&dst)
            .map(|rs| {
                rs.iter()
                    .filter(|r| r.src == src)
                    .map(|r| self.route_gain(r, freq))
                    .sum()
            })
            .unwrap_or(0.0)
    }

    /// Noise-free superposition of every route into `dst` for one frame.
    pub fn receive_clean(&self, dst: ModuleId, history: &TxHistory, frame_index: u64) -> Vec<f64> {
        let mut out = vec![0.0; FRAME_LEN];
        let Some(routes) = self.routes.get(&dst) else {
            return out;
        };
        let n = FRAME_LEN as u64;
        let t0 = frame_index * n;
        for r in routes {
            let d = r.delay as u64;
            if t0 + n <= d {
                continue;
            }
            // the delayed window can straddle two source frames
            let first = t0.saturating_sub(d) / n;
            let last = (t0 + n - 1 - d) / n;
            for sf in first..=last {
                let Some(tx) = history.get(sf, r.src) else {
                    continue;
                };
                let sf0 = sf * n;
                let lo = t0.max(sf0 + d);
                let hi = (t0 + n).min(sf0 + n + d);
                for (bin, samples) in &tx.components {
                    let g = self.route_gain(r, bin_freq(*bin));
                    if g == 0.0 {
                        continue;
                    }
                    for t in lo..hi {
                        out[(t - t0) as usize] += g * samples[(t - d - sf0) as usize];
                    }
                }
            }
        }
        out
    }

    /// Additive white Gaussian noise for `m` in frame `frame_index`.
    ///
    /// Counter-based: the generator is keyed by (seed, module, frame), so the
    /// result does not depend on evaluation order.
    pub fn noise_frame(&self, m: ModuleId, frame_index: u64) -> Vec<f64> {
        let sigma = self.noise_sigma(m);
        if sigma == 0.0 {
            return vec![0.0; FRAME_LEN];
        }
        noise_block(self.seed, m.key(), frame_index, sigma)
    }

    pub fn receive(&self, dst: ModuleId, history: &TxHistory, frame_index: u64) -> SampleStream {
        let mut x = self.receive_clean(dst, history, frame_index);
        for (o, n) in x.iter_mut().zip(self.noise_frame(dst, frame_index)) {
            *o += n;
        }
        SampleStream::new(x)
    }

    /// Received frame at every module.
    pub fn propagate_frame(&self, history: &TxHistory, frame_index: u64) -> BTreeMap<ModuleId, SampleStream> {
        self.modules
            .iter()
            .map(|&m| (m, self.receive(m, history, frame_index)))
            .collect()
    }
}

pub(crate) fn noise_block(seed: u64, stream: u64, frame_index: u64, sigma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // 2^20 words per frame is far more than 256 normals can consume
    rng.set_word_pos((frame_index as u128) << 20);
    (0..FRAME_LEN)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect::<Vec<f64>>()
}

fn build_routes(paths: &[AcousticPath]) -> BTreeMap<ModuleId, Vec<Route>> {
    let mut routes: BTreeMap<ModuleId, Vec<Route>> = BTreeMap::new();
    let mut add = |src: ModuleId, dst: ModuleId, hops: Vec<usize>| {
        let delay = hops.iter().map(|&i| paths[i].delay_samples()).sum();
        routes.entry(dst).or_default().push(Route { src, hops, delay });
    };
    for (i, p) in paths.iter().enumerate() {
        add(p.src, p.dst, vec![i]);
    }
    let membranes: Vec<usize> = (0..paths.len())
        .filter(|&i| paths[i].kind() == PathKind::Membrane)
        .collect();
    for (j, joint) in paths.iter().enumerate() {
        if joint.kind() != PathKind::Joint {
            continue;
        }
        let into: Vec<usize> = membranes
            .iter()
            .copied()
            .filter(|&m| paths[m].dst == joint.src)
            .collect();
        let out: Vec<usize> = membranes
            .iter()
            .copied()
            .filter(|&m| paths[m].src == joint.dst)
            .collect();
        for &m1 in &into {
            add(paths[m1].src, joint.dst, vec![m1, j]);
        }
        for &m2 in &out {
            add(joint.src, paths[m2].dst, vec![j, m2]);
        }
        for &m1 in &into {
            for &m2 in &out {
                add(paths[m1].src, paths[m2].dst, vec![m1, j, m2]);
            }
        }
    }
    routes
}
