//! The acoustic world: a gain/delay graph between transducer modules over
//! membrane, joint and air paths, contact damping, and seeded noise.

mod gains;
mod graph;
mod snr;

pub use gains::{
    air_delay_samples, air_gain, joint_gain, membrane_gain, radius_for_volume, AirParams, MembraneParams,
    CALIBRATED_COUPLING_REF, SOUND_SPEED, VOLUME_MAX, VOLUME_MIN, VOLUME_REF,
};
pub use graph::{AcousticPath, ChannelGraph, ChannelParams, ModuleId, PathKind, PathParams, TxFrame, TxHistory};
pub use snr::{calibrate_coupling_ref, frame_snr_db, measure_air_snr_db, sigma_for_snr, AIR_SNR_TARGET_DB};

/// Default per-module noise standard deviation (full scale = 1.0).
pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{bin_freq, goertzel_amp, unit_tone, CHIRP_BIN, FRAME_LEN, MARK_BIN, SPACE_BIN};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const A0: ModuleId = ModuleId::new(0, 0);
    const A1: ModuleId = ModuleId::new(0, 1);
    const B0: ModuleId = ModuleId::new(1, 0);
    const B1: ModuleId = ModuleId::new(1, 1);

    fn two_robot_graph(n_contacts: u8, sigma: f64) -> ChannelGraph {
        let mem = PathParams::Membrane { geodesic_m: 0.15 };
        let joint = PathParams::Joint { n_contacts };
        let paths = vec![
            AcousticPath::new(A0, A1, mem),
            AcousticPath::new(A1, A0, mem),
            AcousticPath::new(B0, B1, mem),
            AcousticPath::new(B1, B0, mem),
            AcousticPath::new(A0, B0, joint),
            AcousticPath::new(B0, A0, joint),
        ];
        ChannelGraph::new(ChannelParams::default(), [A0, A1, B0, B1], paths, sigma, 9).unwrap()
    }

    fn tone(bin: usize, amp: f64, frame: u64) -> TxFrame {
        let t0 = frame * FRAME_LEN as u64;
        TxFrame::tone(
            bin,
            (0..FRAME_LEN as u64).map(|n| amp * unit_tone(bin, t0 + n)).collect(),
        )
    }

    fn one_frame(tx: BTreeMap<ModuleId, TxFrame>) -> TxHistory {
        let mut h = TxHistory::new(0);
        h.push(0, tx);
        h
    }

    #[test]
    fn silence_in_silence_out() {
        let g = two_robot_graph(3, 0.0);
        let rx = g.propagate_frame(&one_frame(BTreeMap::new()), 0);
        assert!(rx.values().all(|s| s.samples.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn joint_attenuation_composes() {
        for (n, factor) in [(3, 1.0), (2, 0.65), (1, 0.55)] {
            let g = two_robot_graph(n, 0.0);
            let h = one_frame(BTreeMap::from([(A0, tone(MARK_BIN, 1.0, 0))]));
            let rx = g.receive(B0, &h, 0);
            let amp = goertzel_amp(&rx.samples, MARK_BIN).unwrap();
            assert!((amp - 0.5 * factor).abs() < 1e-9, "n={n}: {amp}");
        }
    }

    #[test]
    fn joint_then_membrane_route() {
        let g = two_robot_graph(3, 0.0);
        let h = one_frame(BTreeMap::from([(A0, tone(MARK_BIN, 1.0, 0))]));
        let amp = goertzel_amp(&g.receive(B1, &h, 0).samples, MARK_BIN).unwrap();
        let want = 0.5 * membrane_gain(&MembraneParams::default(), bin_freq(MARK_BIN), 0.15);
        assert!((amp - want).abs() < 1e-9);
    }

    #[test]
    fn two_tones_recovered_independently() {
        let g = two_robot_graph(2, 0.0);
        let h = one_frame(BTreeMap::from([
            (A0, tone(MARK_BIN, 1.0, 0)),
            (A1, tone(CHIRP_BIN, 0.8, 0)),
        ]));
        let rx = g.receive(B0, &h, 0);
        let g_mark = g.effective_gain(A0, B0, bin_freq(MARK_BIN));
        let g_chirp = g.effective_gain(A1, B0, bin_freq(CHIRP_BIN));
        assert!((goertzel_amp(&rx.samples, MARK_BIN).unwrap() - g_mark).abs() < 1e-9);
        assert!((goertzel_amp(&rx.samples, CHIRP_BIN).unwrap() - 0.8 * g_chirp).abs() < 1e-9);
    }

    #[test]
    fn contact_damping_and_restore() {
        let mut g = two_robot_graph(3, 0.0);
        let f = bin_freq(CHIRP_BIN);
        let before: Vec<f64> = (0..g.paths().len()).map(|i| g.path_gain(i, f)).collect();
        let base = g.effective_gain(A1, A0, f);
        g.set_contact(A1, true).unwrap();
        assert!((g.effective_gain(A1, A0, f) - 0.05 * base).abs() < 1e-15);
        // B0 <-> B1 untouched
        assert_eq!(g.path_gain(2, f), before[2]);
        g.set_contact(A1, false).unwrap();
        let after: Vec<f64> = (0..g.paths().len()).map(|i| g.path_gain(i, f)).collect();
        assert_eq!(before, after);
        assert!(g.set_contact(ModuleId::new(7, 0), true).is_err());
    }

    #[test]
    fn membrane_frequency_ordering_and_reciprocity() {
        let g = two_robot_graph(3, 0.0);
        for (i, p) in g.paths().iter().enumerate() {
            if p.kind() == PathKind::Membrane {
                let (a, b, c) = (
                    g.path_gain(i, bin_freq(CHIRP_BIN)),
                    g.path_gain(i, bin_freq(SPACE_BIN)),
                    g.path_gain(i, bin_freq(MARK_BIN)),
                );
                assert!(a > b && b > c);
            }
        }
        for f in [bin_freq(CHIRP_BIN), bin_freq(MARK_BIN)] {
            assert_eq!(g.effective_gain(A0, B1, f), g.effective_gain(B1, A0, f));
            assert_eq!(g.effective_gain(A1, B0, f), g.effective_gain(B0, A1, f));
        }
    }

    #[test]
    fn rejects_bad_topology() {
        let bad = vec![AcousticPath::new(A0, A1, PathParams::Joint { n_contacts: 3 })];
        assert!(ChannelGraph::new(ChannelParams::default(), [A0, A1], bad, 0.0, 0).is_err());
        let missing = vec![AcousticPath::new(A0, B0, PathParams::Joint { n_contacts: 3 })];
        assert!(ChannelGraph::new(ChannelParams::default(), [A0], missing, 0.0, 0).is_err());
    }

    #[test]
    fn air_delay_line() {
        let air = PathParams::Air {
            dist_m: 1.0,
            vol_tx: 0.25,
            vol_rx: 0.25,
        };
        let g = ChannelGraph::new(
            ChannelParams::default(),
            [A0, B0],
            vec![AcousticPath::new(A0, B0, air)],
            0.0,
            0,
        )
        .unwrap();
        let mut h = TxHistory::new(g.max_delay());
        // impulse-ish: one frame of tone at frame 0 only
        h.push(0, BTreeMap::from([(A0, tone(CHIRP_BIN, 1.0, 0))]));
        let rx0 = g.receive_clean(B0, &h, 0);
        assert!(rx0[..146].iter().all(|&x| x == 0.0));
        assert!(rx0[146..].iter().any(|&x| x != 0.0));
        h.push(1, BTreeMap::new());
        let rx1 = g.receive_clean(B0, &h, 1);
        assert!(rx1[..146].iter().any(|&x| x != 0.0));
        assert!(rx1[146..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn noise_is_counter_based() {
        let g = two_robot_graph(3, 0.01);
        let a = g.noise_frame(B0, 17);
        // evaluating other frames/modules first must not change the result
        let _ = g.noise_frame(A0, 3);
        let _ = g.noise_frame(B0, 16);
        assert_eq!(a, g.noise_frame(B0, 17));
        assert_ne!(a, g.noise_frame(B0, 18));
        assert_ne!(a, g.noise_frame(B1, 17));
        let g2 = two_robot_graph(3, 0.01);
        assert_eq!(a, g2.noise_frame(B0, 17));
    }

    proptest! {
        #[test]
        fn superposition(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, n in 0u8..=3) {
            let g = two_robot_graph(n, 0.0);
            let x = BTreeMap::from([(A0, tone(MARK_BIN, a1, 0))]);
            let y = BTreeMap::from([(A1, tone(SPACE_BIN, a2, 0)), (B1, tone(CHIRP_BIN, a1, 0))]);
            let mut both = x.clone();
            both.extend(y.clone());
            let rx = g.propagate_frame(&one_frame(both), 0);
            let rx_x = g.propagate_frame(&one_frame(x), 0);
            let rx_y = g.propagate_frame(&one_frame(y), 0);
            for m in g.modules() {
                for i in 0..FRAME_LEN {
                    let s = rx_x[&m].samples[i] + rx_y[&m].samples[i];
                    prop_assert!((rx[&m].samples[i] - s).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn energy_never_grows(amp in 0.0f64..1.0, n in 0u8..=3, bin in 1usize..128) {
            let g = two_robot_graph(n, 0.0);
            let tx = tone(bin, amp, 0);
            let e_tx = tx.to_stream().energy();
            let h = one_frame(BTreeMap::from([(A0, tx)]));
            for m in [A1, B0, B1] {
                prop_assert!(g.receive(m, &h, 0).energy() <= e_tx + 1e-12);
            }
        }
    }
}
