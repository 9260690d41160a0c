use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use secrecy_core::channel::{complex_gaussian, draw_channels, ChannelRealization, LinkMode, SystemParams};
use secrecy_core::numerics::{c, CMatrix, HermitianMatrix};
use secrecy_core::system::{
    secrecy_rates, sigma_bob, sigma_eve, sigma_node_bidirectional, unclamped_objective, Node, TransmitDesign,
};

fn random_psd(dim: usize, power: f64, seed: u64) -> HermitianMatrix {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = HermitianMatrix::gram(&complex_gaussian(&mut rng, dim, dim, 1.0));
    g.scale(power / g.trace())
}

fn impaired_params() -> SystemParams {
    let mut p = SystemParams::desk();
    p.alice.kappa = vec![0.01, 0.02];
    p.alice.beta = vec![0.03, 0.005];
    p.bob.kappa = vec![0.02, 0.01];
    p.bob.beta = vec![0.005, 0.04];
    p.noise_b = vec![1e-3, 2e-3];
    p.noise_e = vec![3e-3, 1e-3];
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    p.bob.csi_corr = (0..2).map(|_| HermitianMatrix::gram(&complex_gaussian(&mut rng, 2, 2, 1e-3))).collect();
    p.alice.csi_corr = (0..2).map(|_| HermitianMatrix::gram(&complex_gaussian(&mut rng, 2, 2, 1e-3))).collect();
    p
}

fn one_way_design(seed: u64) -> TransmitDesign {
    TransmitDesign::one_way(
        vec![random_psd(2, 0.4, seed), random_psd(2, 0.6, seed + 1)],
        vec![random_psd(2, 0.7, seed + 2), random_psd(2, 0.3, seed + 3)],
    )
}

fn herm(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

fn diag_only(m: &CMatrix) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { m[(i, i)] } else { c(0.0, 0.0) })
}

struct Receiver<'a> {
    noise: f64,
    kappa: f64,
    beta: f64,
    dd: &'a CMatrix,
}

/// Receiver covariance built entry by entry from the model definition.
fn oracle_sigma_rx(rx: &Receiver, self_ch: &[&CMatrix], own: &[CMatrix], n: usize) -> CMatrix {
    let Receiver { noise, kappa, beta, dd } = *rx;
    let dim = self_ch[n].nrows();
    let mut s = CMatrix::identity(dim, dim) * c(noise, 0.0);
    let tr: f64 = (0..own[n].nrows()).map(|i| own[n][(i, i)].re).sum();
    s += dd * c(tr, 0.0);
    let mut diag_sum = CMatrix::zeros(own[0].nrows(), own[0].ncols());
    let mut rx_sum = CMatrix::zeros(dim, dim);
    for m in 0..own.len() {
        diag_sum += diag_only(&own[m]);
        rx_sum += self_ch[m] * &own[m] * herm(self_ch[m]);
    }
    s += self_ch[n] * (diag_sum * c(kappa, 0.0)) * herm(self_ch[n]);
    s += diag_only(&rx_sum) * c(beta, 0.0);
    s
}

fn bob_rx(p: &SystemParams, n: usize) -> Receiver<'_> {
    Receiver { noise: p.noise_b[n], kappa: p.bob.kappa[n], beta: p.bob.beta[n], dd: p.bob.csi_corr[n].as_matrix() }
}

fn log2_det_ratio(num: &CMatrix, den: &CMatrix) -> f64 {
    (num.determinant().re / den.determinant().re).log2()
}

fn assert_close(a: &CMatrix, b: &CMatrix, tol: f64) {
    assert!((a - b).norm() <= tol * b.norm().max(1.0), "{a} vs {b}");
}

#[test]
fn one_way_covariances_match_oracle() {
    let p = impaired_params();
    let ch = draw_channels(&p, 4);
    let d = one_way_design(10);
    let own: Vec<CMatrix> = d.w().iter().map(|m| m.as_matrix().clone()).collect();
    let hbb: Vec<&CMatrix> = ch.subcarriers.iter().map(|s| &s.h_bb).collect();
    for n in 0..2 {
        let expect = oracle_sigma_rx(&bob_rx(&p, n), &hbb, &own, n);
        assert_close(sigma_bob(&p, &ch, &d, n).unwrap().as_matrix(), &expect, 1e-10);
        let hbe = &ch.sub(n).h_be;
        let eve = CMatrix::identity(2, 2) * c(p.noise_e[n], 0.0) + hbe * &own[n] * herm(hbe);
        assert_close(sigma_eve(&p, &ch, &d, n).unwrap().as_matrix(), &eve, 1e-10);
    }
}

#[test]
fn one_way_rates_match_oracle() {
    let p = impaired_params();
    let ch = draw_channels(&p, 5);
    let d = one_way_design(20);
    let rep = secrecy_rates(&p, &ch, &d).unwrap();
    let own: Vec<CMatrix> = d.w().iter().map(|m| m.as_matrix().clone()).collect();
    let hbb: Vec<&CMatrix> = ch.subcarriers.iter().map(|s| &s.h_bb).collect();
    let mut total = 0.0;
    for n in 0..2 {
        let sb = oracle_sigma_rx(&bob_rx(&p, n), &hbb, &own, n);
        let (hab, hae, hbe) = (&ch.sub(n).h_ab, &ch.sub(n).h_ae, &ch.sub(n).h_be);
        let x = d.x()[n].as_matrix();
        let se = CMatrix::identity(2, 2) * c(p.noise_e[n], 0.0) + hbe * &own[n] * herm(hbe);
        let i_ab = log2_det_ratio(&(&sb + hab * x * herm(hab)), &sb);
        let i_ae = log2_det_ratio(&(&se + hae * x * herm(hae)), &se);
        let r = rep.per_subcarrier[n];
        assert!((r.i_ab - i_ab).abs() < 1e-10 && (r.i_ae - i_ae).abs() < 1e-10);
        assert!((r.i_sec - (i_ab - i_ae).max(0.0)).abs() < 1e-10);
        total += (i_ab - i_ae).max(0.0);
    }
    assert!((rep.i_sum - total).abs() < 1e-10);
}

fn scalar_two_way() -> (SystemParams, ChannelRealization) {
    let mut p = SystemParams::uniform(1, 1).with_mode(LinkMode::TwoWay);
    p.set_distortion(0.02, 0.03);
    p.noise_a = vec![2e-3];
    p.noise_b = vec![1e-3];
    p.noise_e = vec![4e-3];
    p.alice.csi_corr = vec![HermitianMatrix::from_real_diagonal(&[1e-3])];
    p.bob.csi_corr = vec![HermitianMatrix::from_real_diagonal(&[2e-3])];
    let ch = draw_channels(&p, 31);
    (p, ch)
}

#[test]
fn bidirectional_scalar_oracle() {
    let (p, ch) = scalar_two_way();
    let s = ch.sub(0);
    let g = |m: &CMatrix| m[(0, 0)].norm_sqr();
    let (gab, gae, gbb, gbe, gba, gaa) =
        (g(&s.h_ab), g(&s.h_ae), g(&s.h_bb), g(&s.h_be), g(s.h_ba.as_ref().unwrap()), g(s.h_aa.as_ref().unwrap()));
    let (xa, wa, xb, wb) = (0.3, 0.2, 0.25, 0.4);
    let d = TransmitDesign {
        alice_info: vec![HermitianMatrix::from_real_diagonal(&[xa])],
        alice_jam: vec![HermitianMatrix::from_real_diagonal(&[wa])],
        bob_info: vec![HermitianMatrix::from_real_diagonal(&[xb])],
        bob_jam: vec![HermitianMatrix::from_real_diagonal(&[wb])],
    };
    let (ua, ub) = (xa + wa, xb + wb);
    let sig_b = 1e-3 + gab * wa + 2e-3 * ub + (0.02 + 0.03) * gbb * ub;
    let sig_a = 2e-3 + gba * wb + 1e-3 * ua + (0.02 + 0.03) * gaa * ua;
    let sig_e = 4e-3 + gae * wa + gbe * wb;
    let got_b = sigma_node_bidirectional(&p, &ch, &d, Node::Bob, 0).unwrap();
    let got_a = sigma_node_bidirectional(&p, &ch, &d, Node::Alice, 0).unwrap();
    assert!((got_b.trace() - sig_b).abs() < 1e-12 && (got_a.trace() - sig_a).abs() < 1e-12);

    let i_ab = (1.0 + gab * xa / sig_b).log2();
    let i_ae = (1.0 + gae * xa / sig_e).log2();
    let i_ba = (1.0 + gba * xb / sig_a).log2();
    let i_be = (1.0 + gbe * xb / sig_e).log2();
    let r = secrecy_rates(&p, &ch, &d).unwrap().per_subcarrier[0];
    for (got, want) in [(r.i_ab, i_ab), (r.i_ae, i_ae), (r.i_ba, i_ba), (r.i_be, i_be)] {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    assert!((r.i_sec - ((i_ab - i_ae).max(0.0) + (i_ba - i_be).max(0.0))).abs() < 1e-10);
}

#[test]
fn bidirectional_reduces_to_one_way() {
    let p1 = impaired_params();
    let mut p2 = p1.clone().with_mode(LinkMode::TwoWay);
    p2.m_at = p1.m_a;
    let ch2 = draw_channels(&p2, 8);
    let ch1 = ChannelRealization {
        seed: ch2.seed,
        subcarriers: ch2
            .subcarriers
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.h_ba = None;
                s.h_aa = None;
                s
            })
            .collect(),
    };
    let d1 = one_way_design(40);
    let mut d2 = TransmitDesign::zeros(&p2);
    d2.alice_info = d1.alice_info.clone();
    d2.bob_jam = d1.bob_jam.clone();
    for n in 0..2 {
        let a = sigma_bob(&p1, &ch1, &d1, n).unwrap();
        let b = sigma_node_bidirectional(&p2, &ch2, &d2, Node::Bob, n).unwrap();
        assert!(a.frobenius_distance(&b) < 1e-12);
    }
    let r1 = secrecy_rates(&p1, &ch1, &d1).unwrap();
    let r2 = secrecy_rates(&p2, &ch2, &d2).unwrap();
    for (a, b) in r1.per_subcarrier.iter().zip(&r2.per_subcarrier) {
        assert!((a.i_ab - b.i_ab).abs() < 1e-10 && (a.i_ae - b.i_ae).abs() < 1e-10);
        assert_eq!(b.i_ba, 0.0);
    }
    assert!((r1.i_sum - r2.i_sum).abs() < 1e-10);
}

#[test]
fn perfect_cancellation_removes_jamming_from_bob() {
    let mut p = SystemParams::desk();
    p.set_distortion(0.0, 0.0);
    let ch = draw_channels(&p, 2);
    let a = one_way_design(50);
    let b = one_way_design(60);
    let mut b2 = a.clone();
    b2.bob_jam = b.bob_jam;
    for n in 0..2 {
        assert_eq!(sigma_bob(&p, &ch, &a, n).unwrap(), sigma_bob(&p, &ch, &b2, n).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariances_are_psd_and_secrecy_nonnegative(seed in 0u64..1_000_000, scale in 0.0f64..3.0) {
        let p = impaired_params();
        let ch = draw_channels(&p, seed);
        let d = one_way_design(seed).scaled(scale);
        for n in 0..2 {
            prop_assert!(sigma_bob(&p, &ch, &d, n).unwrap().min_eigenvalue() >= -1e-9);
            prop_assert!(sigma_eve(&p, &ch, &d, n).unwrap().min_eigenvalue() >= -1e-9);
        }
        let rep = secrecy_rates(&p, &ch, &d).unwrap();
        prop_assert!(rep.i_sum >= 0.0);
        prop_assert!(rep.per_subcarrier.iter().all(|r| r.i_sec >= 0.0));
        let raw = unclamped_objective(&p, &ch, &d).unwrap() * std::f64::consts::LOG2_E;
        prop_assert!(raw <= rep.i_sum + 1e-10);
    }

    #[test]
    fn eve_rate_non_increasing_in_eve_noise(seed in 0u64..1_000_000, factor in 1.0f64..100.0) {
        let p = impaired_params();
        let ch = draw_channels(&p, seed);
        let d = one_way_design(seed + 7);
        let mut q = p.clone();
        q.noise_e.iter_mut().for_each(|v| *v *= factor);
        let a = secrecy_rates(&p, &ch, &d).unwrap();
        let b = secrecy_rates(&q, &ch, &d).unwrap();
        for (ra, rb) in a.per_subcarrier.iter().zip(&b.per_subcarrier) {
            prop_assert!(rb.i_ae <= ra.i_ae + 1e-12);
            prop_assert!(rb.i_sec >= ra.i_sec - 1e-12);
        }
    }
}
