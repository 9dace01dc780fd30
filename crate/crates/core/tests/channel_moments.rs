use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rismaestro::channel::{los_amplitude, nlos_amplitude, sample_channels, sample_channels_indexed};
use rismaestro::linalg::{CMat, CVec, C64};
use rismaestro::{build_stats, ChannelStats, Scenario, SeedStream};

fn stats(seed: u64) -> ChannelStats {
    let s = Scenario::desk();
    let geo = s.layout.geometry(s.system.k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    build_stats(&s.system, &geo).unwrap()
}

/// Mean and per-entry variance of every link against its Rician parameters.
#[test]
fn link_moments_match_rician_model() {
    let st = stats(11);
    let n = 20_000;
    let (l, k) = (st.l(), st.k());
    let mut mean_h = vec![CMat::zeros(st.n, st.m); l];
    let mut pow_h = vec![0.0; l];
    let mut mean_u = vec![vec![CVec::zeros(st.n); l]; k];
    let mut pow_u = vec![vec![0.0; l]; k];
    for i in 0..n {
        let s = sample_channels_indexed(&st, SeedStream(5), i);
        for li in 0..l {
            mean_h[li] += &s.h_bs_ris[li];
            pow_h[li] += s.h_bs_ris[li].norm_squared();
            for u in 0..k {
                mean_u[u][li] += &s.h_ris_user[u][li];
                pow_u[u][li] += s.h_ris_user[u][li].norm_squared();
            }
        }
    }
    let nf = n as f64;
    for li in 0..l {
        let beta = st.beta_bs_ris[li];
        let kap = st.rician_bs_ris[li];
        let expect = &st.los_bs_ris[li] * C64::from(beta.sqrt() * los_amplitude(kap));
        let sd = (beta * nlos_amplitude(kap).powi(2) / nf).sqrt();
        let err = (&mean_h[li] / C64::from(nf) - &expect).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 5.0 * sd, "BS-RIS {li}: mean error {err} vs sd {sd}");
        // E||H||² = β·N·M whatever the Rician factor
        let p = pow_h[li] / nf / (beta * (st.n * st.m) as f64);
        assert!((p - 1.0).abs() < 0.01, "BS-RIS {li}: normalized power {p}");
        for u in 0..k {
            let beta = st.beta_ris_user[u][li];
            let kap = st.rician_ris_user[u][li];
            let expect = &st.los_ris_user[u][li] * C64::from(beta.sqrt() * los_amplitude(kap));
            let sd = (beta * nlos_amplitude(kap).powi(2) / nf).sqrt();
            let err = (&mean_u[u][li] / C64::from(nf) - &expect).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 5.0 * sd, "user {u} RIS {li}: mean error {err} vs sd {sd}");
            let p = pow_u[u][li] / nf / (beta * st.n as f64);
            assert!((p - 1.0).abs() < 0.02, "user {u} RIS {li}: normalized power {p}");
        }
    }
}

#[test]
fn nlos_part_is_circular() {
    let st = stats(12);
    let n = 20_000;
    let mut pseudo = C64::new(0.0, 0.0);
    let mut var = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let los = &st.los_bs_ris[0] * C64::from(st.beta_bs_ris[0].sqrt() * los_amplitude(st.rician_bs_ris[0]));
    for _ in 0..n {
        let s = sample_channels(&st, &mut rng);
        let w = s.h_bs_ris[0][(0, 0)] - los[(0, 0)];
        pseudo += w * w;
        var += w.norm_sqr();
    }
    // E[w²] = 0 for circularly symmetric noise
    assert!(pseudo.norm() / var < 0.03, "{}", pseudo.norm() / var);
}

#[test]
fn indexed_draws_are_reproducible_and_independent_of_order() {
    let st = stats(13);
    let a = sample_channels_indexed(&st, SeedStream(8), 41);
    let _ = sample_channels_indexed(&st, SeedStream(8), 40);
    let b = sample_channels_indexed(&st, SeedStream(8), 41);
    assert_eq!(a, b);
    assert_ne!(a, sample_channels_indexed(&st, SeedStream(9), 41));
}
