//! ADC synthesis, the FFT chain and CFAR as one pipeline.

mod common;

use common::criteria::*;
use common::*;
use proptest::prelude::*;
use radarocc::radar::*;

#[test]
fn signal_chain_criterion() {
    let v = signal_chain().unwrap();
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn false_alarm_rate_tracks_pfa() {
    for (pfa, seed) in [(1e-2, 1), (1e-3, 2)] {
        let (rate, cells) = cfar_false_alarm_rate(400, pfa, seed).unwrap();
        assert!(cells >= CFAR_MIN_CELLS);
        assert!(rate >= pfa / 3.0 && rate <= 3.0 * pfa, "pfa {pfa}: {rate}");
    }
}

#[test]
fn single_target_yields_one_point_near_it() {
    let cfg = RadarConfig::desk();
    let s = Scatterer {
        position: [20.0, 3.0, 1.0],
        amplitude: 1.0,
        radial_velocity: -1.5,
    };
    let scene = SceneSpec { scatterers: vec![s], ..Default::default() };
    let rt = build_4drt(&synth_adc(&scene, &cfg, 4).unwrap(), &cfg);
    let pc = extract_point_cloud(&rt, &CfarParams::default()).unwrap();
    let near: Vec<_> = pc
        .points
        .iter()
        .filter(|p| (0..3).map(|i| (p.xyz[i] - s.position[i]).powi(2)).sum::<f64>().sqrt() < 2.0)
        .collect();
    assert_eq!(near.len(), 1, "{:?}", pc.points);
    assert!((near[0].doppler - s.radial_velocity).abs() <= cfg.doppler_res);
}

#[test]
fn point_budget_stays_small_on_a_scene() {
    let cfg = RadarConfig::desk();
    let scene = radarocc::sim::random_scene(12, 1);
    let (tensors, _) = radarocc::dataset::simulate_tensors(&scene, &cfg).unwrap();
    let pc = extract_point_cloud(&tensors[0], &CfarParams::default()).unwrap();
    let cells = cfg.n_fast * cfg.n_chirps;
    assert!(pc.points.len() * 100 < cells, "{} points", pc.points.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmax_within_one_bin(seed in 0u64..100_000) {
        let cfg = RadarConfig::desk();
        let s = random_target(&mut rng(seed), &cfg);
        let (got, truth) = locate_target(&cfg, s, seed).unwrap();
        for a in 0..4 {
            prop_assert!((got[a] as f64 - truth[a]).abs() <= 1.0, "axis {a}: {got:?} vs {truth:?}");
        }
    }

    /// ADC synthesis is linear in the scatterer amplitudes (noise off).
    #[test]
    fn synthesis_is_linear(seed in 0u64..1000, k in 0.1f64..5.0) {
        let cfg = RadarConfig { noise_power: 0.0, ..RadarConfig::desk() };
        let mut r = rng(seed);
        let a = random_target(&mut r, &cfg);
        let b = random_target(&mut r, &cfg);
        let scaled = Scatterer { amplitude: a.amplitude * k, ..a };
        let one = |v: Vec<Scatterer>| synth_adc(&SceneSpec { scatterers: v, ..Default::default() }, &cfg, 0).unwrap();
        let (ya, yb, yab) = (one(vec![scaled]), one(vec![b]), one(vec![scaled, b]));
        for i in 0..yab.data.len() {
            prop_assert!((yab.data[i] - ya.data[i] - yb.data[i]).norm() < 1e-9);
        }
    }
}
