use secrecy_core::bcd::{
    init_uniform, init_uniform_bidirectional, optimize, optimize_bidirectional, surrogate_objective,
    update_auxiliaries, BcdOptions, BcdState, FreeBlocks,
};
use secrecy_core::channel::{draw_channels, ChannelRealization, LinkMode, SystemParams};
use secrecy_core::rng::derive_seed;
use secrecy_core::system::{unclamped_objective, Block, TransmitDesign};

const SEED: u64 = 777;

fn one_way_view(ch: &ChannelRealization) -> ChannelRealization {
    let mut out = ch.clone();
    for s in &mut out.subcarriers {
        s.h_ba = None;
        s.h_aa = None;
    }
    out
}

fn two_way_params() -> SystemParams {
    let mut p = SystemParams::desk().with_mode(LinkMode::TwoWay);
    p.m_at = p.m_a;
    p
}

#[test]
fn one_way_traces_are_monotone_and_budgets_hold() {
    let p = SystemParams::desk();
    for t in 0..10 {
        let ch = draw_channels(&p, derive_seed(SEED, t));
        let out = optimize(&p, &ch, init_uniform(&p), &BcdOptions::default()).unwrap();
        assert!(out.state.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "trial {t}");
        assert!(out.design.power(Block::AliceInfo) <= p.x_max + 1e-6);
        assert!(out.design.power(Block::BobJam) <= p.w_max + 1e-6);
        out.design.validate(&p, 1e-6).unwrap();
    }
}

#[test]
fn two_way_traces_are_monotone_and_budgets_hold() {
    let p = two_way_params();
    for t in 0..6 {
        let ch = draw_channels(&p, derive_seed(SEED, t));
        let out = optimize_bidirectional(&p, &ch, init_uniform_bidirectional(&p), &BcdOptions::default()).unwrap();
        assert!(out.state.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "trial {t}");
        assert!(out.design.power(Block::AliceInfo) + out.design.power(Block::AliceJam) <= p.p_a_max + 1e-6);
        assert!(out.design.power(Block::BobInfo) + out.design.power(Block::BobJam) <= p.p_b_max + 1e-6);
    }
}

#[test]
fn auxiliary_update_makes_surrogate_tight_in_both_modes() {
    let one = SystemParams::desk();
    let two = two_way_params();
    for (p, init) in [(one.clone(), init_uniform(&one)), (two.clone(), init_uniform_bidirectional(&two))] {
        let ch = draw_channels(&p, 5);
        let mut state = BcdState::new(init.scaled(0.7));
        let truth = update_auxiliaries(&mut state, &p, &ch).unwrap();
        let design = state.design.clone();
        let surrogate = surrogate_objective(&p, &ch, &design, &state).unwrap();
        assert!((surrogate - truth).abs() < 1e-8);
        assert!((truth - unclamped_objective(&p, &ch, &design).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn negative_secrecy_subcarriers_carry_no_power() {
    let p = SystemParams::desk();
    let trials = 20;
    let clean = (0..trials)
        .filter(|&t| {
            let ch = draw_channels(&p, derive_seed(SEED + 1, t));
            let out = optimize(&p, &ch, init_uniform(&p), &BcdOptions::default()).unwrap();
            out.report
                .per_subcarrier
                .iter()
                .zip(out.design.x())
                .all(|(r, x)| r.raw_differences().0 >= 0.0 || x.trace() <= 1e-6)
        })
        .count();
    assert!(clean as f64 >= 0.9 * trials as f64, "{clean}/{trials}");
}

#[test]
fn two_way_with_silent_reverse_link_matches_one_way() {
    let two = two_way_params();
    let mut one = SystemParams::desk();
    one.x_max = two.p_a_max;
    one.w_max = two.p_b_max;
    // Both runs are taken to tight convergence: the surrogates differ, so the
    // iterate paths do too, and only the limits are comparable.
    let tight = BcdOptions { outer_tol: 1e-8, max_outer: 2000, ..Default::default() };
    let opts_two = BcdOptions { free: FreeBlocks::ALL.without(Block::AliceJam).without(Block::BobInfo), ..tight };
    for t in 0..4 {
        let ch2 = draw_channels(&two, derive_seed(SEED + 2, t));
        let ch1 = one_way_view(&ch2);
        let init1 = init_uniform(&one);
        let mut init2 = TransmitDesign::zeros(&two);
        init2.alice_info = init1.alice_info.clone();
        let a = optimize(&one, &ch1, init1, &tight).unwrap();
        let b = optimize_bidirectional(&two, &ch2, init2, &opts_two).unwrap();
        assert_eq!(b.design.power(Block::BobInfo), 0.0);
        assert_eq!(b.design.power(Block::AliceJam), 0.0);
        assert!((a.report.i_sum - b.report.i_sum).abs() < 1e-3, "trial {t}: {} vs {}", a.report.i_sum, b.report.i_sum);
    }
}

#[test]
fn fixed_blocks_are_left_alone() {
    let p = SystemParams::desk();
    let ch = draw_channels(&p, 12);
    let init = init_uniform(&p);
    let opts = BcdOptions { free: FreeBlocks::ALL.without(Block::AliceInfo), ..Default::default() };
    let out = optimize(&p, &ch, init.clone(), &opts).unwrap();
    assert_eq!(out.design.alice_info, init.alice_info);
}
